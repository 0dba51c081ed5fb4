//! Minimal deterministic deep-learning engine: dense f64 tensors, 1-D
//! convolutions with explicit reverse-mode gradients, stream merging,
//! pre-activation residual blocks, the generator/discriminator pair, Adam
//! with decoupled weight decay and the two learning-rate schedules.

pub mod io;
pub mod layers;
pub mod nets;
pub mod optim;

use std::collections::BTreeMap;

use thiserror::Error;

pub use layers::{conv1d_forward, inception_forward, merge_forward, Padding};
pub use nets::{encode_instance, ArchConfig, DiscriminatorNet, EncodedInstance, GeneratorNet};
pub use optim::{adam_step, AdamParams, AdamState, CyclicLr, PlateauLr};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt weights file: {0}")]
    Corrupt(String),
}

/// Dense tensor, row-major, shape usually (batch, channels, time).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Index into a rank-3 tensor.
    #[inline]
    pub fn at3(&self, b: usize, c: usize, t: usize) -> f64 {
        self.data[(b * self.shape[1] + c) * self.shape[2] + t]
    }

    #[inline]
    pub fn at3_mut(&mut self, b: usize, c: usize, t: usize) -> &mut f64 {
        &mut self.data[(b * self.shape[1] + c) * self.shape[2] + t]
    }

    pub fn assert_finite(&self, label: &str) -> Result<(), NeuralError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(NeuralError::NonFinite(label.to_string()))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// Named parameter tensors with mirrored gradient buffers.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    params: BTreeMap<String, Tensor>,
    grads: BTreeMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        self.grads.insert(name.to_string(), Tensor::zeros(&value.shape));
        self.params.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.params.get(name).unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.params.get_mut(name).unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn grad(&self, name: &str) -> &Tensor {
        self.grads.get(name).unwrap_or_else(|| panic!("unknown gradient `{name}`"))
    }

    pub fn grad_mut(&mut self, name: &str) -> &mut Tensor {
        self.grads.get_mut(name).unwrap_or_else(|| panic!("unknown gradient `{name}`"))
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            g.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }
}

/// ReLU, elementwise.
pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .zip(&grad_out.data)
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
    }
}

/// Softmax with temperature along the channel axis of a (B, C, T) tensor:
/// y_i = exp(T x_i) / sum_j exp(T x_j), stabilised by max subtraction.
pub fn softmax_temperature(x: &Tensor, temperature: f64) -> Tensor {
    assert_eq!(x.shape.len(), 3);
    let (b_n, c_n, t_n) = (x.shape[0], x.shape[1], x.shape[2]);
    let mut y = Tensor::zeros(&x.shape);
    for b in 0..b_n {
        for t in 0..t_n {
            let m = (0..c_n).map(|c| x.at3(b, c, t)).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..c_n {
                let e = (temperature * (x.at3(b, c, t) - m)).exp();
                *y.at3_mut(b, c, t) = e;
                z += e;
            }
            for c in 0..c_n {
                *y.at3_mut(b, c, t) /= z;
            }
        }
    }
    y
}

pub fn softmax_temperature_backward(y: &Tensor, temperature: f64, grad_out: &Tensor) -> Tensor {
    let (b_n, c_n, t_n) = (y.shape[0], y.shape[1], y.shape[2]);
    let mut gx = Tensor::zeros(&y.shape);
    for b in 0..b_n {
        for t in 0..t_n {
            let dot: f64 = (0..c_n).map(|c| grad_out.at3(b, c, t) * y.at3(b, c, t)).sum();
            for c in 0..c_n {
                *gx.at3_mut(b, c, t) =
                    temperature * y.at3(b, c, t) * (grad_out.at3(b, c, t) - dot);
            }
        }
    }
    gx
}

/// Softplus with parameter beta: (1/beta) ln(1 + exp(beta x)), evaluated
/// stably for large arguments.
pub fn softplus(x: f64, beta: f64) -> f64 {
    let bx = beta * x;
    if bx > 30.0 {
        x
    } else {
        (1.0 / beta) * bx.exp().ln_1p()
    }
}

pub fn softplus_grad(x: f64, beta: f64) -> f64 {
    let bx = beta * x;
    if bx > 30.0 {
        1.0
    } else {
        let e = bx.exp();
        e / (1.0 + e)
    }
}

/// Per time step, argmax across modes; ties break to the lowest index.
pub fn round_to_one_hot(probs: &Tensor) -> crate::gas::OperationModeSequence {
    assert_eq!(probs.shape.len(), 3);
    assert_eq!(probs.shape[0], 1, "rounding expects a single instance");
    let (c_n, t_n) = (probs.shape[1], probs.shape[2]);
    let mode_indices = (0..t_n)
        .map(|t| {
            let mut best = 0;
            for c in 1..c_n {
                if probs.at3(0, c, t) > probs.at3(0, best, t) {
                    best = c;
                }
            }
            best
        })
        .collect();
    crate::gas::OperationModeSequence { mode_indices }
}
