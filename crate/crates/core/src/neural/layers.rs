//! Convolution, stream merging and residual inception blocks, each with an
//! explicit backward pass. Layers read their parameters from a
//! [`ParameterStore`] by name and accumulate gradients into its buffers.

use rand::Rng;

use super::{relu, relu_backward, NeuralError, ParameterStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

fn pad_left(kernel: usize, padding: Padding) -> usize {
    match padding {
        Padding::Same => (kernel - 1) / 2,
        Padding::Valid => 0,
    }
}

fn out_len(t: usize, kernel: usize, padding: Padding) -> usize {
    match padding {
        Padding::Same => t,
        Padding::Valid => t + 1 - kernel,
    }
}

/// Registers a conv kernel (out, in, k) with fan-in-scaled uniform weights
/// and a zero bias.
pub fn init_conv(
    store: &mut ParameterStore,
    name: &str,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    rng: &mut impl Rng,
) {
    let a = (1.0 / (c_in * kernel) as f64).sqrt();
    let w = (0..c_out * c_in * kernel).map(|_| rng.gen_range(-a..=a)).collect();
    store.insert(&format!("{name}.w"), Tensor::from_vec(&[c_out, c_in, kernel], w));
    store.insert(&format!("{name}.b"), Tensor::zeros(&[c_out]));
}

pub fn init_conv_zero(store: &mut ParameterStore, name: &str, c_in: usize, c_out: usize, kernel: usize) {
    store.insert(&format!("{name}.w"), Tensor::zeros(&[c_out, c_in, kernel]));
    store.insert(&format!("{name}.b"), Tensor::zeros(&[c_out]));
}

/// Cross-correlation along the time axis, stride 1.
pub fn conv1d_forward(
    store: &ParameterStore,
    name: &str,
    input: &Tensor,
    padding: Padding,
) -> Result<Tensor, NeuralError> {
    let w = store.get(&format!("{name}.w"));
    let bias = store.get(&format!("{name}.b"));
    let (c_out, c_in, k) = (w.shape[0], w.shape[1], w.shape[2]);
    if input.shape.len() != 3 || input.shape[1] != c_in {
        return Err(NeuralError::ShapeMismatch(format!(
            "conv `{name}`: input {:?}, kernel {:?}",
            input.shape, w.shape
        )));
    }
    let (b_n, t_n) = (input.shape[0], input.shape[2]);
    if padding == Padding::Valid && t_n + 1 <= k {
        return Err(NeuralError::ShapeMismatch(format!(
            "conv `{name}`: time length {t_n} shorter than kernel {k}"
        )));
    }
    let t_out = out_len(t_n, k, padding);
    let pad = pad_left(k, padding);
    let mut out = Tensor::zeros(&[b_n, c_out, t_out]);
    for b in 0..b_n {
        for co in 0..c_out {
            for t in 0..t_out {
                let mut acc = bias.data[co];
                for ci in 0..c_in {
                    for kk in 0..k {
                        let s = t + kk;
                        if s >= pad && s - pad < t_n {
                            acc += input.at3(b, ci, s - pad) * w.data[(co * c_in + ci) * k + kk];
                        }
                    }
                }
                *out.at3_mut(b, co, t) = acc;
            }
        }
    }
    Ok(out)
}

/// Backward pass: accumulates kernel/bias gradients and returns the input
/// gradient.
pub fn conv1d_backward(
    store: &mut ParameterStore,
    name: &str,
    input: &Tensor,
    padding: Padding,
    grad_out: &Tensor,
) -> Tensor {
    let w = store.get(&format!("{name}.w")).clone();
    let (c_out, c_in, k) = (w.shape[0], w.shape[1], w.shape[2]);
    let (b_n, t_n) = (input.shape[0], input.shape[2]);
    let t_out = grad_out.shape[2];
    let pad = pad_left(k, padding);

    let mut g_in = Tensor::zeros(&input.shape);
    {
        let g_w = store.grad_mut(&format!("{name}.w"));
        for b in 0..b_n {
            for co in 0..c_out {
                for t in 0..t_out {
                    let g = grad_out.at3(b, co, t);
                    if g == 0.0 {
                        continue;
                    }
                    for ci in 0..c_in {
                        for kk in 0..k {
                            let s = t + kk;
                            if s >= pad && s - pad < t_n {
                                g_w.data[(co * c_in + ci) * k + kk] +=
                                    g * input.at3(b, ci, s - pad);
                            }
                        }
                    }
                }
            }
        }
    }
    {
        let g_b = store.grad_mut(&format!("{name}.b"));
        for b in 0..b_n {
            for co in 0..c_out {
                for t in 0..t_out {
                    g_b.data[co] += grad_out.at3(b, co, t);
                }
            }
        }
    }
    for b in 0..b_n {
        for co in 0..c_out {
            for t in 0..t_out {
                let g = grad_out.at3(b, co, t);
                if g == 0.0 {
                    continue;
                }
                for ci in 0..c_in {
                    for kk in 0..k {
                        let s = t + kk;
                        if s >= pad && s - pad < t_n {
                            *g_in.at3_mut(b, ci, s - pad) += g * w.data[(co * c_in + ci) * k + kk];
                        }
                    }
                }
            }
        }
    }
    g_in
}

/// Registers the merge kernel: a 2-D convolution spanning a 2-wide stacked
/// dimension, stored as (out, 2*in, k).
pub fn init_merge(
    store: &mut ParameterStore,
    name: &str,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    rng: &mut impl Rng,
) {
    init_conv(store, name, 2 * c_in, c_out, kernel, rng);
}

/// Merges two equal-shaped streams: stack into a 2-wide second spatial
/// dimension and convolve it away, which reduces to a conv over the
/// channel-concatenated input.
pub fn merge_forward(
    store: &ParameterStore,
    name: &str,
    a: &Tensor,
    b: &Tensor,
) -> Result<Tensor, NeuralError> {
    if a.shape != b.shape {
        return Err(NeuralError::ShapeMismatch(format!(
            "merge `{name}`: {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    conv1d_forward(store, name, &stack_channels(a, b), Padding::Same)
}

pub fn merge_backward(
    store: &mut ParameterStore,
    name: &str,
    a: &Tensor,
    b: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor) {
    let stacked = stack_channels(a, b);
    let g = conv1d_backward(store, name, &stacked, Padding::Same, grad_out);
    split_channels(&g, a.shape[1])
}

fn stack_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let (b_n, c_n, t_n) = (a.shape[0], a.shape[1], a.shape[2]);
    let mut out = Tensor::zeros(&[b_n, 2 * c_n, t_n]);
    for bb in 0..b_n {
        for c in 0..c_n {
            for t in 0..t_n {
                *out.at3_mut(bb, c, t) = a.at3(bb, c, t);
                *out.at3_mut(bb, c + c_n, t) = b.at3(bb, c, t);
            }
        }
    }
    out
}

fn split_channels(x: &Tensor, c_n: usize) -> (Tensor, Tensor) {
    let (b_n, t_n) = (x.shape[0], x.shape[2]);
    let mut a = Tensor::zeros(&[b_n, c_n, t_n]);
    let mut b = Tensor::zeros(&[b_n, c_n, t_n]);
    for bb in 0..b_n {
        for c in 0..c_n {
            for t in 0..t_n {
                *a.at3_mut(bb, c, t) = x.at3(bb, c, t);
                *b.at3_mut(bb, c, t) = x.at3(bb, c + c_n, t);
            }
        }
    }
    (a, b)
}

/// Kernel sizes of the three parallel branches.
pub const BRANCH_KERNELS: [usize; 3] = [1, 3, 5];

pub fn branch_width(channels: usize) -> usize {
    (channels / 2).max(1)
}

/// Registers one pre-activation residual block with parallel branches and a
/// projection back to `channels`.
pub fn init_inception(
    store: &mut ParameterStore,
    name: &str,
    channels: usize,
    rng: &mut impl Rng,
) {
    let cb = branch_width(channels);
    for (i, &k) in BRANCH_KERNELS.iter().enumerate() {
        init_conv(store, &format!("{name}.branch{i}"), channels, cb, k, rng);
    }
    init_conv(store, &format!("{name}.proj"), cb * BRANCH_KERNELS.len(), channels, 1, rng);
}

pub struct InceptionCache {
    input: Tensor,
    pre: Tensor,
    concat: Tensor,
    concat_act: Tensor,
}

impl InceptionCache {
    /// Raw pre-activation values of the concatenated branches; used by the
    /// gradient checks to steer clear of ReLU kinks.
    pub fn concat_values(&self) -> &[f64] {
        &self.concat.data
    }

    /// Distance of the closest value to a ReLU kink across both activation
    /// stages of the block.
    pub fn kink_margin(&self) -> f64 {
        self.input
            .data
            .iter()
            .chain(&self.concat.data)
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

/// Pre-activation residual block: ReLU before every conv, branch outputs
/// concatenated and projected, identity skip added at the end. All-zero
/// parameters therefore reduce the block to the identity.
pub fn inception_forward(
    store: &ParameterStore,
    name: &str,
    input: &Tensor,
) -> Result<(Tensor, InceptionCache), NeuralError> {
    let pre = relu(input);
    let mut branches = Vec::with_capacity(BRANCH_KERNELS.len());
    for i in 0..BRANCH_KERNELS.len() {
        branches.push(conv1d_forward(store, &format!("{name}.branch{i}"), &pre, Padding::Same)?);
    }
    let concat = concat_channels(&branches);
    let concat_act = relu(&concat);
    let proj = conv1d_forward(store, &format!("{name}.proj"), &concat_act, Padding::Same)?;
    let mut out = proj;
    for (o, i) in out.data.iter_mut().zip(&input.data) {
        *o += i;
    }
    Ok((out, InceptionCache { input: input.clone(), pre, concat, concat_act }))
}

pub fn inception_backward(
    store: &mut ParameterStore,
    name: &str,
    cache: &InceptionCache,
    grad_out: &Tensor,
) -> Tensor {
    let g_concat_act =
        conv1d_backward(store, &format!("{name}.proj"), &cache.concat_act, Padding::Same, grad_out);
    let g_concat = relu_backward(&cache.concat, &g_concat_act);
    let cb = branch_width(cache.input.shape[1]);
    let mut g_pre = Tensor::zeros(&cache.pre.shape);
    for i in 0..BRANCH_KERNELS.len() {
        let g_branch = slice_channels(&g_concat, i * cb, cb);
        let g = conv1d_backward(
            store,
            &format!("{name}.branch{i}"),
            &cache.pre,
            Padding::Same,
            &g_branch,
        );
        for (a, b) in g_pre.data.iter_mut().zip(&g.data) {
            *a += b;
        }
    }
    let mut g_in = relu_backward(&cache.input, &g_pre);
    for (a, b) in g_in.data.iter_mut().zip(&grad_out.data) {
        *a += b; // identity skip
    }
    g_in
}

fn concat_channels(parts: &[Tensor]) -> Tensor {
    let (b_n, t_n) = (parts[0].shape[0], parts[0].shape[2]);
    let c_total: usize = parts.iter().map(|p| p.shape[1]).sum();
    let mut out = Tensor::zeros(&[b_n, c_total, t_n]);
    let mut offset = 0;
    for p in parts {
        for b in 0..b_n {
            for c in 0..p.shape[1] {
                for t in 0..t_n {
                    *out.at3_mut(b, offset + c, t) = p.at3(b, c, t);
                }
            }
        }
        offset += p.shape[1];
    }
    out
}

fn slice_channels(x: &Tensor, start: usize, count: usize) -> Tensor {
    let (b_n, t_n) = (x.shape[0], x.shape[2]);
    let mut out = Tensor::zeros(&[b_n, count, t_n]);
    for b in 0..b_n {
        for c in 0..count {
            for t in 0..t_n {
                *out.at3_mut(b, c, t) = x.at3(b, start + c, t);
            }
        }
    }
    out
}
