//! Command-line surface: network synthesis, data generation, the two
//! training phases, single-instance solving and batch evaluation.
//!
//! Exit codes: 0 success, 2 infeasible input, 3 time limit, 4 format error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gaswarm::datagen::{
    generate_dataset, read_dataset, stream_rng, write_dataset, DatasetParams, SamplerConfig,
};
use gaswarm::gas::fixtures::{
    station_d_instance, station_d_template, toy_instance, toy_station,
};
use gaswarm::gas::{build_instance_milp, GasNetwork, Instance, ObjectiveWeights};
use gaswarm::milp::{solve_milp, SolveParams, SolveStatus};
use gaswarm::neural::io::{load_weights, save_weights, ENCODING_LAYOUT};
use gaswarm::neural::{ArchConfig, DiscriminatorNet, GeneratorNet};
use gaswarm::pipeline::{
    evaluate_suite, load_generator, primal_heuristic, warm_start_solve, write_csv_report,
    write_json_report, PipelineError,
};
use gaswarm::training::{
    evaluate_discriminator, pretrain_discriminator, split_dataset, state_pool_from,
    train_alternating, ScenarioPool, TrainConfig,
};

#[derive(Parser)]
#[command(name = "gaswarm", about = "Learned warm starts for gas-network MILPs")]
struct Cli {
    /// Master seed for every stochastic component.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Hyperparameter profile.
    #[arg(long, global = true, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,
    /// Output path (file or directory depending on the subcommand).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Desk,
    Paper,
}

impl Profile {
    fn config(self, seed: u64) -> TrainConfig {
        let mut c = match self {
            Profile::Desk => TrainConfig::desk(),
            Profile::Paper => TrainConfig::paper(),
        };
        c.seed = seed;
        c
    }
}

#[derive(Subcommand)]
enum Command {
    /// Network template handling.
    Net {
        #[command(subcommand)]
        command: NetCommand,
    },
    /// Labelled dataset generation.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Discriminator pretraining and the alternating loop.
    Train {
        #[command(subcommand)]
        command: TrainCommand,
    },
    /// Solve a single instance.
    Solve(SolveArgs),
    /// Batch evaluation over an instance directory.
    Eval(EvalArgs),
}

#[derive(Subcommand)]
enum NetCommand {
    /// Write a built-in network template (and optionally a matching instance).
    Synth {
        #[arg(long, value_enum, default_value_t = Template::Toy)]
        template: Template,
        /// Also write a default instance next to the network.
        #[arg(long)]
        instance_out: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        horizon: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Template {
    Toy,
    StationD,
}

#[derive(Subcommand)]
enum DataCommand {
    /// Sample scenarios and label them with exact solves (ndjson output).
    Generate {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        scenarios: Option<usize>,
        #[arg(long, default_value_t = 8)]
        states: usize,
        #[arg(long, default_value_t = 2)]
        horizon: usize,
        #[arg(long, default_value_t = 1800.0)]
        granularity: f64,
        #[arg(long, default_value_t = 120.0)]
        time_limit: f64,
    },
}

#[derive(Subcommand)]
enum TrainCommand {
    /// Supervised pretraining of the discriminator.
    Pretrain(PretrainArgs),
    /// Alternating generator/discriminator training.
    Alternating(AlternatingArgs),
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long, default_value_t = 3)]
    blocks: usize,
}

#[derive(Args)]
struct AlternatingArgs {
    #[arg(long)]
    net: PathBuf,
    /// Prelabelled dataset (ndjson).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    disc_weights: PathBuf,
    /// Pretraining test loss anchoring the discriminator stopping rule;
    /// measured on a held-out split of `data` when omitted.
    #[arg(long)]
    pretrain_test_loss: Option<f64>,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long, default_value_t = 3)]
    blocks: usize,
    #[arg(long, default_value_t = 120.0)]
    time_limit: f64,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_enum)]
    mode: SolveMode,
    /// Generator weights (heuristic and warmstart modes).
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 3600.0)]
    time_limit: f64,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long, default_value_t = 3)]
    blocks: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolveMode {
    Cold,
    Heuristic,
    Warmstart,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    net: PathBuf,
    /// Directory of instance JSON files; the file stem is the instance id.
    #[arg(long)]
    instances: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, default_value_t = 3600.0)]
    time_limit: f64,
    /// Report all wall-clock fields as zero for byte-reproducible output.
    #[arg(long)]
    deterministic_timing: bool,
    #[arg(long, default_value_t = 2)]
    workers: usize,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long, default_value_t = 3)]
    blocks: usize,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn format(msg: impl Into<String>) -> Self {
        CliError { code: 4, message: msg.into() }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::Infeasible(_) => 2,
            PipelineError::TimeLimit(_) => 3,
            _ => 4,
        };
        CliError { code, message: e.to_string() }
    }
}

macro_rules! format_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::format(e.to_string())
            }
        }
    )*};
}
format_errors!(
    std::io::Error,
    serde_json::Error,
    gaswarm::gas::GasError,
    gaswarm::milp::MilpError,
    gaswarm::neural::NeuralError,
    gaswarm::datagen::DatagenError,
    gaswarm::training::TrainError
);

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::format(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::format(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn out_path(out: &Option<PathBuf>, default: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn arch(channels: usize, blocks: usize) -> ArchConfig {
    ArchConfig {
        channels,
        generator_blocks: blocks,
        discriminator_blocks: blocks,
        ..ArchConfig::default()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Net { command: NetCommand::Synth { template, instance_out, horizon } } => {
            let (network, instance): (GasNetwork, Instance) = match template {
                Template::Toy => (toy_station(), toy_instance(horizon)),
                Template::StationD => (station_d_template(), station_d_instance(horizon)),
            };
            let path = out_path(&cli.out, "network.json");
            write_json(&path, &network)?;
            println!("wrote {}", path.display());
            if let Some(p) = instance_out {
                write_json(&p, &instance)?;
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Data {
            command:
                DataCommand::Generate { net, scenarios, states, horizon, granularity, time_limit },
        } => {
            let network: GasNetwork = read_json(&net)?;
            let config = cli.profile.config(cli.seed);
            let params = DatasetParams {
                num_states: states,
                num_scenarios: scenarios.unwrap_or(config.num_scenarios),
                time_step_difference: 1,
                horizon,
                granularity_s: granularity,
                seed: cli.seed,
            };
            let solve = SolveParams { time_limit_s: time_limit, ..SolveParams::default() };
            let data = generate_dataset(&network, &SamplerConfig::default(), &params, &solve)?;
            let path = out_path(&cli.out, "dataset.ndjson");
            write_dataset(&path, &data)?;
            println!("wrote {} samples to {}", data.len(), path.display());
            Ok(())
        }
        Command::Train { command: TrainCommand::Pretrain(args) } => {
            let network: GasNetwork = read_json(&args.net)?;
            let data = read_dataset(&args.data)?;
            let config = cli.profile.config(cli.seed);
            let mut disc = DiscriminatorNet::new(
                &network,
                arch(args.channels, args.blocks),
                &mut stream_rng(cli.seed, 200, 0),
            );
            let history = pretrain_discriminator(&mut disc, &network, &data, &config)?;
            let path = out_path(&cli.out, "discriminator.weights");
            save_weights(&path, &disc.store, 0.0, disc.arch.softplus_beta, ENCODING_LAYOUT)?;
            write_json(&path.with_extension("history.json"), &history)?;
            println!(
                "pretraining done: untrained test loss {:.6}, final test loss {:.6}, \
                 validation loss {:.6}",
                history.untrained_test_loss,
                history.test_loss.last().copied().unwrap_or(f64::NAN),
                history.final_validation_loss
            );
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Train { command: TrainCommand::Alternating(args) } => {
            let network: GasNetwork = read_json(&args.net)?;
            let data = read_dataset(&args.data)?;
            let config = cli.profile.config(cli.seed);
            let a = arch(args.channels, args.blocks);
            let mut disc =
                DiscriminatorNet::new(&network, a, &mut stream_rng(cli.seed, 200, 0));
            load_weights(&args.disc_weights, &mut disc.store)?;
            let mut gen = GeneratorNet::new(&network, a, &mut stream_rng(cli.seed, 201, 0));
            let anchor = match args.pretrain_test_loss {
                Some(v) => v,
                None => {
                    let (_, test, _) = split_dataset(&data, config.ratio_test, config.seed);
                    let test: Vec<_> = test.into_iter().cloned().collect();
                    evaluate_discriminator(&disc, &network, &test, &config)?
                }
            };
            let horizon = data.first().map(|s| s.pi.horizon).unwrap_or(2);
            let granularity_s = data.first().map(|s| s.pi.granularity_s).unwrap_or(1800.0);
            let sampler = SamplerConfig::default();
            let pool = ScenarioPool {
                network: &network,
                sampler: &sampler,
                state_pool: state_pool_from(&data),
                horizon,
                granularity_s,
            };
            let dir = out_path(&cli.out, "train_out");
            std::fs::create_dir_all(&dir)?;
            let solve = SolveParams { time_limit_s: args.time_limit, ..SolveParams::default() };
            let history = train_alternating(
                &mut gen,
                &mut disc,
                &pool,
                &data,
                &config,
                &solve,
                anchor,
                Some(&dir),
            )?;
            save_weights(
                &dir.join("generator.weights"),
                &gen.store,
                gen.temperature,
                a.softplus_beta,
                ENCODING_LAYOUT,
            )?;
            save_weights(
                &dir.join("discriminator.weights"),
                &disc.store,
                0.0,
                a.softplus_beta,
                ENCODING_LAYOUT,
            )?;
            write_json(&dir.join("history.json"), &history)?;
            println!("alternating training done; outputs in {}", dir.display());
            Ok(())
        }
        Command::Solve(args) => {
            let network: GasNetwork = read_json(&args.net)?;
            let instance: Instance = read_json(&args.instance)?;
            instance.validate_against(&network)?;
            let weights = ObjectiveWeights::default();
            let params = SolveParams { time_limit_s: args.time_limit, ..SolveParams::default() };
            let load = |p: &Option<PathBuf>| -> Result<GeneratorNet, CliError> {
                let p = p
                    .as_ref()
                    .ok_or_else(|| CliError::format("--weights required for this mode"))?;
                Ok(load_generator(p, &network, arch(args.channels, args.blocks))?)
            };
            let summary = match args.mode {
                SolveMode::Cold => {
                    let model = build_instance_milp(&network, &instance, &weights, None)?;
                    let res = solve_milp(&model, &params, None)?;
                    match res.status {
                        SolveStatus::Infeasible if res.time_limit_hit => {
                            return Err(CliError {
                                code: 3,
                                message: "time limit before a feasible point".into(),
                            })
                        }
                        SolveStatus::Infeasible | SolveStatus::Unbounded => {
                            return Err(CliError { code: 2, message: "instance infeasible".into() })
                        }
                        _ => {}
                    }
                    serde_json::json!({
                        "mode": "cold",
                        "objective": res.objective,
                        "optimal": res.status == SolveStatus::Optimal,
                        "node_count": res.node_count,
                    })
                }
                SolveMode::Heuristic => {
                    let gen = load(&args.weights)?;
                    let h = primal_heuristic(&gen, &network, &instance, &weights, &params)?;
                    serde_json::json!({
                        "mode": "heuristic",
                        "objective": h.objective,
                        "optimal": h.optimal,
                        "node_count": h.node_count,
                        "mode_sequence": h.sequence.mode_indices,
                        "t_infer_s": h.t_infer_s,
                        "t_solve_s": h.t_solve_s,
                    })
                }
                SolveMode::Warmstart => {
                    let gen = load(&args.weights)?;
                    let (record, warm, _) = warm_start_solve(
                        &gen, &network, &instance, &weights, &params, "instance", false,
                    )?;
                    serde_json::json!({
                        "mode": "warmstart",
                        "objective": warm.objective,
                        "record": record,
                    })
                }
            };
            let text = serde_json::to_string_pretty(&summary)?;
            match &cli.out {
                Some(p) => std::fs::write(p, text)?,
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::Eval(args) => {
            let network: GasNetwork = read_json(&args.net)?;
            let gen =
                load_generator(&args.weights, &network, arch(args.channels, args.blocks))?;
            let mut instances: Vec<(String, Instance)> = Vec::new();
            for entry in std::fs::read_dir(&args.instances)? {
                let path = entry?.path();
                if path.extension().map_or(false, |e| e == "json") {
                    let id = path
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .ok_or_else(|| CliError::format("bad instance file name"))?
                        .to_string();
                    let pi: Instance = read_json(&path)?;
                    pi.validate_against(&network)?;
                    instances.push((id, pi));
                }
            }
            if instances.is_empty() {
                return Err(CliError::format("no instance files found"));
            }
            let params = SolveParams { time_limit_s: args.time_limit, ..SolveParams::default() };
            let report = evaluate_suite(
                &gen,
                &network,
                &instances,
                &ObjectiveWeights::default(),
                &params,
                args.deterministic_timing,
                args.workers,
            );
            let prefix = out_path(&cli.out, "report");
            let csv = prefix.with_extension("csv");
            let json = prefix.with_extension("json");
            write_csv_report(&csv, &report)?;
            write_json_report(&json, &report)?;
            println!(
                "evaluated {} instances ({} failures), acceptance {:.0}%, speedup {:.1}%",
                report.aggregates.num_instances,
                report.aggregates.num_failures,
                100.0 * report.aggregates.acceptance_rate,
                report.aggregates.speedup_percent
            );
            println!("wrote {} and {}", csv.display(), json.display());
            Ok(())
        }
    }
}
