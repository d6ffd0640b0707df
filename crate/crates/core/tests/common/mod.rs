//! Helpers shared by the integration tests: random fixtures, a
//! central-difference gradient checker and independent scalar oracles.
#![allow(dead_code)]

use rand::distributions::{Distribution, Uniform};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srcn::data::{SampleWindow, WindowSet};
use srcn::grid_codec::GridFrame;
use srcn::model::SrcnConfig;
use srcn::tensor::{Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let d = Uniform::new(lo, hi);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| d.sample(rng)).collect()).unwrap()
}

/// Values bounded away from zero: `|v| ∈ [0.1, 1]` with random sign.
pub fn rand_away_from_zero(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let mut t = rand_tensor(shape, 0.1, 1.0, rng);
    for v in t.data_mut() {
        if rng.gen::<bool>() {
            *v = -*v;
        }
    }
    t
}

/// A random permutation of well-separated values, so no max-pool window has
/// near-ties a finite-difference step could flip.
pub fn rand_distinct(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    Tensor::new(shape.to_vec(), vals).unwrap()
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// `Σ out ⊙ w` for a fixed random `w`: turns any output into a scalar loss
/// that exercises every output element.
pub fn project(tape: &mut Tape, out: Var, seed: u64) -> srcn::Result<Var> {
    let w = rand_tensor(tape.shape(out), -1.0, 1.0, &mut rng(seed));
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

pub type LossFn<'a> = dyn Fn(&mut Tape, &[Var]) -> srcn::Result<Var> + 'a;

fn eval_loss(inputs: &[Tensor], f: &LossFn) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars).unwrap();
    tape.value(loss).data()[0]
}

/// Largest relative error between backward and central differences over
/// (up to `per_input`) sampled elements of every input.
pub fn grad_check(inputs: &[Tensor], f: &LossFn, per_input: usize, rng: &mut impl Rng) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars).unwrap();
    tape.backward(loss).unwrap();
    // Inputs that never reach the loss have no gradient entry.
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let picks: Vec<usize> = if t.len() <= per_input {
            (0..t.len()).collect()
        } else {
            sample(rng, t.len(), per_input).into_vec()
        };
        for i in picks {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (eval_loss(&plus, f) - eval_loss(&minus, f)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[k][i], numeric));
        }
    }
    worst
}

/// Naive cross-correlation over explicit loops, zero padding `pad`.
pub fn naive_conv(input: &Tensor, kernels: &Tensor, bias: &[f64], pad: usize) -> Tensor {
    let [n, c, h, w] = input.shape()[..] else { panic!("rank 4 input") };
    let [o, _, k, _] = kernels.shape()[..] else { panic!("rank 4 kernels") };
    let oh = h + 2 * pad + 1 - k;
    let ow = w + 2 * pad + 1 - k;
    let x = input.data();
    let kd = kernels.data();
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = bias[oc];
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y + ky) as isize - pad as isize;
                                let ix = (xo + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xi = ((b * c + ic) * h + iy as usize) * w + ix as usize;
                                let ki = ((oc * c + ic) * k + ky) * k + kx;
                                acc += kd[ki] * x[xi];
                            }
                        }
                    }
                    out[((b * o + oc) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, o, oh, ow], out).unwrap()
}

/// Scalar LSTM step. `w[g]` holds gate `g`'s input weights `[q][p]`, `u[g]`
/// the hidden weights `[q][q]`, `b[g]` the biases, gates ordered
/// input, forget, output, candidate.
pub struct ScalarLstm {
    pub w: [Vec<Vec<f64>>; 4],
    pub u: [Vec<Vec<f64>>; 4],
    pub b: [Vec<f64>; 4],
}

impl ScalarLstm {
    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let q = h.len();
        let pre = |g: usize, j: usize| {
            let mut z = self.b[g][j];
            for (wk, xk) in self.w[g][j].iter().zip(x) {
                z += wk * xk;
            }
            for (uk, hk) in self.u[g][j].iter().zip(h) {
                z += uk * hk;
            }
            z
        };
        let mut h_new = vec![0.0; q];
        let mut c_new = vec![0.0; q];
        for j in 0..q {
            let i = sig(pre(0, j));
            let f = sig(pre(1, j));
            let o = sig(pre(2, j));
            let g = pre(3, j).tanh();
            c_new[j] = f * c[j] + i * g;
            h_new[j] = o * c_new[j].tanh();
        }
        (h_new, c_new)
    }
}

/// Trainable parameters of a conv → dense → LSTM stack → heads network,
/// counted from layer sizes alone.
pub fn count_params(
    channels: &[usize],
    k: usize,
    flatten: usize,
    p: usize,
    q: usize,
    layers: usize,
    n_links: usize,
    heads: usize,
) -> usize {
    let mut total = 0;
    let mut c_in = 1;
    for &c in channels {
        // kernels + bias + batch-norm scale and shift
        total += c * c_in * k * k + c + 2 * c;
        c_in = c;
    }
    total += flatten * p + p;
    let mut input = p;
    for _ in 0..layers {
        total += 4 * (q * input + q * q + q);
        input = q;
    }
    total + heads * (q * n_links + n_links)
}

/// Random frames and targets with `count` windows over consecutive bins.
pub fn random_window_set(config: &SrcnConfig, count: usize, seed: u64) -> WindowSet {
    let mut r = rng(seed);
    let bins = count + config.seq_len + config.max_horizon();
    let frames = (0..bins)
        .map(|t| GridFrame {
            height: config.grid_height,
            width: config.grid_width,
            values: rand_tensor(&[config.grid_height * config.grid_width], 0.0, 1.0, &mut r).into_data(),
            timestamp: t,
        })
        .collect();
    let targets = (0..bins)
        .map(|_| rand_tensor(&[config.n_links], 0.2, 0.9, &mut r).into_data())
        .collect();
    WindowSet {
        frames,
        targets,
        windows: (0..count)
            .map(|k| SampleWindow { day: 0, start: k, starts_day: k == 0 })
            .collect(),
        seq_len: config.seq_len,
        offsets: config.horizons.clone(),
        bins_per_day: bins,
        v_max: 100.0,
        clamped: 0,
    }
}
