//! Learning operation-mode decisions for time-expanded gas-network MILPs.
//!
//! The crate is organised around an exact MILP oracle ([`milp`]), the
//! network-station model builder ([`gas`]), synthetic instance generation
//! ([`datagen`]), a small deterministic deep-learning engine ([`neural`]),
//! the generator/discriminator training loop ([`training`]) and the
//! end-user heuristic/warm-start pipeline ([`pipeline`]).

pub mod datagen;
pub mod gas;
pub mod milp;
pub mod neural;
pub mod pipeline;
pub mod training;
