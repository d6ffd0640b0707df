//! Layers of the convolutional feature extractor and the affine heads.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{BatchStats, Mode, Tape, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;
pub const KERNEL_SIZE: usize = 3;

/// Uniform Glorot initialization with the given fans.
pub fn glorot<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(shape, limit, rng)
}

pub fn uniform<R: Rng + ?Sized>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor {
    let dist = Uniform::new_inclusive(-limit, limit);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches buffer")
}

/// Learnable affine part and running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
        }
    }

    /// Folds one batch's statistics into the running averages.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = BN_MOMENTUM;
        for (r, b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }
}

/// One row group of the convolutional stack: conv(3×3, same) → [max-pool] → relu → batch-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub kernels: Tensor,
    pub bias: Tensor,
    pub pool: bool,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvBlockVars {
    pub kernels: Var,
    pub bias: Var,
    pub gamma: Var,
    pub beta: Var,
}

impl ConvBlock {
    pub fn init<R: Rng + ?Sized>(c_in: usize, c_out: usize, pool: bool, rng: &mut R) -> Self {
        let k2 = KERNEL_SIZE * KERNEL_SIZE;
        Self {
            kernels: glorot(&[c_out, c_in, KERNEL_SIZE, KERNEL_SIZE], c_in * k2, c_out * k2, rng),
            bias: Tensor::zeros(&[c_out]),
            pool,
            bn: BatchNorm::new(c_out),
        }
    }

    pub fn zeros(c_in: usize, c_out: usize, pool: bool) -> Self {
        let mut bn = BatchNorm::new(c_out);
        bn.gamma = Tensor::zeros(&[c_out]);
        Self {
            kernels: Tensor::zeros(&[c_out, c_in, KERNEL_SIZE, KERNEL_SIZE]),
            bias: Tensor::zeros(&[c_out]),
            pool,
            bn,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    /// Trainable parameter count: kernels, bias, gamma, beta.
    pub fn param_count(&self) -> usize {
        self.kernels.len() + self.bias.len() + self.bn.gamma.len() + self.bn.beta.len()
    }

    pub fn bind(&self, tape: &mut Tape) -> ConvBlockVars {
        ConvBlockVars {
            kernels: tape.param(self.kernels.clone()),
            bias: tape.param(self.bias.clone()),
            gamma: tape.param(self.bn.gamma.clone()),
            beta: tape.param(self.bn.beta.clone()),
        }
    }

    /// Train mode returns the batch statistics so the caller can fold them
    /// into the running averages after the step.
    pub fn forward(&self, tape: &mut Tape, vars: &ConvBlockVars, x: Var, mode: Mode) -> Result<(Var, Option<BatchStats>)> {
        let channels = match tape.shape(x) {
            [_, c, _, _] | [c, _, _] => *c,
            s => return Err(Error::shape(format!("conv block input must be [N,C,H,W], got {s:?}"))),
        };
        if channels != self.in_channels() {
            return Err(Error::shape(format!(
                "conv block expects {} channels, input has {channels}",
                self.in_channels()
            )));
        }
        let mut h = tape.conv2d(x, vars.kernels, vars.bias, true)?;
        if self.pool {
            h = tape.max_pool2d(h)?;
        }
        h = tape.relu(h)?;
        match mode {
            Mode::Train => {
                let (y, stats) = tape.batch_norm_train(h, vars.gamma, vars.beta, BN_EPS)?;
                Ok((y, Some(stats)))
            }
            Mode::Infer => {
                let y = tape.batch_norm_infer(
                    h,
                    vars.gamma,
                    vars.beta,
                    self.bn.running_mean.data(),
                    self.bn.running_var.data(),
                    BN_EPS,
                )?;
                Ok((y, None))
            }
        }
    }

    /// Spatial extent after this block for an `h×w` input.
    pub fn output_extent(&self, h: usize, w: usize) -> (usize, usize) {
        if self.pool {
            (h / 2, w / 2)
        } else {
            (h, w)
        }
    }
}

/// Fully connected layer `y = W·x + b`, no activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct DenseVars {
    pub weight: Var,
    pub bias: Var,
}

impl DenseLayer {
    pub fn init<R: Rng + ?Sized>(inp: usize, out: usize, rng: &mut R) -> Self {
        Self {
            weight: glorot(&[out, inp], inp, out, rng),
            bias: Tensor::zeros(&[out]),
        }
    }

    pub fn zeros(inp: usize, out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out, inp]),
            bias: Tensor::zeros(&[out]),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn bind(&self, tape: &mut Tape) -> DenseVars {
        DenseVars {
            weight: tape.param(self.weight.clone()),
            bias: tape.param(self.bias.clone()),
        }
    }

    /// Accepts a single vector `[in]` or a row batch `[N×in]`.
    pub fn forward(&self, tape: &mut Tape, vars: &DenseVars, x: Var) -> Result<Var> {
        tape.linear(x, vars.weight, Some(vars.bias))
    }
}

/// Row-major linearization of a whole tensor to rank 1.
pub fn flatten(tape: &mut Tape, x: Var) -> Result<Var> {
    let n = tape.value(x).len();
    tape.reshape(x, vec![n])
}
