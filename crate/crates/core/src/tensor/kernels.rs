//! Raw numeric kernels over row-major `f64` slices.
//!
//! Every kernel partitions its output into disjoint chunks that are each
//! computed by the same sequential loop, so results are bit-identical
//! whether the chunks run on one thread or many.

/// Execution strategy for the data-parallel kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Chunks run on the rayon pool. Falls back to sequential when the
    /// `parallel` feature is disabled.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

// Below this many output elements the rayon fork/join costs more than it saves.
const PAR_THRESHOLD: usize = 4096;

fn for_each_chunk<F>(exec: Exec, out: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    if chunk == 0 || out.is_empty() {
        return;
    }
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel if out.len() >= PAR_THRESHOLD && out.len() > chunk => {
            use rayon::prelude::*;
            out.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
        }
        _ => out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
    }
}

/// `c[p×r] = a[p×q] · b[q×r]`
pub fn matmul(exec: Exec, a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), p * q);
    debug_assert_eq!(b.len(), q * r);
    let mut c = vec![0.0; p * r];
    for_each_chunk(exec, &mut c, r, |i, row| {
        let a_row = &a[i * q..(i + 1) * q];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[k * r..(k + 1) * r];
            for (cv, &bv) in row.iter_mut().zip(b_row) {
                *cv += aik * bv;
            }
        }
    });
    c
}

/// `c[p×r] = a[p×q] · b[r×q]ᵀ`
pub fn matmul_a_bt(exec: Exec, a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), p * q);
    debug_assert_eq!(b.len(), r * q);
    let mut c = vec![0.0; p * r];
    for_each_chunk(exec, &mut c, r, |i, row| {
        let a_row = &a[i * q..(i + 1) * q];
        for (j, cv) in row.iter_mut().enumerate() {
            let b_row = &b[j * q..(j + 1) * q];
            *cv = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    });
    c
}

/// `c[p×r] = a[q×p]ᵀ · b[q×r]`
pub fn matmul_at_b(exec: Exec, a: &[f64], b: &[f64], q: usize, p: usize, r: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), q * p);
    debug_assert_eq!(b.len(), q * r);
    let mut c = vec![0.0; p * r];
    for_each_chunk(exec, &mut c, r, |i, row| {
        for k in 0..q {
            let aki = a[k * p + i];
            if aki == 0.0 {
                continue;
            }
            let b_row = &b[k * r..(k + 1) * r];
            for (cv, &bv) in row.iter_mut().zip(b_row) {
                *cv += aki * bv;
            }
        }
    });
    c
}

/// Geometry of a batched 2-D cross-correlation with square odd kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub height: usize,
    pub width: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        self.height + 2 * self.pad + 1 - self.kernel
    }

    pub fn out_width(&self) -> usize {
        self.width + 2 * self.pad + 1 - self.kernel
    }

    fn in_plane(&self) -> usize {
        self.height * self.width
    }

    /// Range of output columns `ox` for which `ox + kx - pad` is a valid input column.
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx);
        let hi = (self.width + self.pad).saturating_sub(kx).min(self.out_width());
        (lo, hi.max(lo))
    }

    fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy + ky).checked_sub(self.pad)?;
        (iy < self.height).then_some(iy)
    }
}

/// Cross-correlation forward: `out[n,o] = bias[o] + Σ_c kernels[o,c] ⋆ input[n,c]`.
pub fn conv2d_forward(
    exec: Exec,
    g: &ConvGeom,
    input: &[f64],
    kernels: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
    let out_sample = g.c_out * oh * ow;
    let in_sample = g.c_in * g.in_plane();
    let mut out = vec![0.0; g.batch * out_sample];
    for_each_chunk(exec, &mut out, out_sample, |n, out_n| {
        let in_n = &input[n * in_sample..(n + 1) * in_sample];
        for o in 0..g.c_out {
            let out_o = &mut out_n[o * oh * ow..(o + 1) * oh * ow];
            out_o.fill(bias[o]);
            for c in 0..g.c_in {
                let in_c = &in_n[c * g.in_plane()..(c + 1) * g.in_plane()];
                let kern = &kernels[(o * g.c_in + c) * k * k..(o * g.c_in + c + 1) * k * k];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = kern[ky * k + kx];
                        let (lo, hi) = g.col_range(kx);
                        for oy in 0..oh {
                            let Some(iy) = g.input_row(oy, ky) else { continue };
                            let src = &in_c[iy * g.width + lo + kx - g.pad..iy * g.width + hi + kx - g.pad];
                            let dst = &mut out_o[oy * ow + lo..oy * ow + hi];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient of the convolution with respect to its input.
pub fn conv2d_backward_input(exec: Exec, g: &ConvGeom, kernels: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
    let out_sample = g.c_out * oh * ow;
    let in_sample = g.c_in * g.in_plane();
    let mut grad_in = vec![0.0; g.batch * in_sample];
    for_each_chunk(exec, &mut grad_in, in_sample, |n, gin_n| {
        let gout_n = &grad_out[n * out_sample..(n + 1) * out_sample];
        for c in 0..g.c_in {
            let gin_c = &mut gin_n[c * g.in_plane()..(c + 1) * g.in_plane()];
            for o in 0..g.c_out {
                let gout_o = &gout_n[o * oh * ow..(o + 1) * oh * ow];
                let kern = &kernels[(o * g.c_in + c) * k * k..(o * g.c_in + c + 1) * k * k];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = kern[ky * k + kx];
                        let (lo, hi) = g.col_range(kx);
                        for oy in 0..oh {
                            let Some(iy) = g.input_row(oy, ky) else { continue };
                            let src = &gout_o[oy * ow + lo..oy * ow + hi];
                            let dst = &mut gin_c[iy * g.width + lo + kx - g.pad..iy * g.width + hi + kx - g.pad];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    });
    grad_in
}

/// Gradients with respect to kernels and bias, summed over the batch in sample order.
pub fn conv2d_backward_params(
    exec: Exec,
    g: &ConvGeom,
    input: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
    let out_sample = g.c_out * oh * ow;
    let in_sample = g.c_in * g.in_plane();
    let per_out = g.c_in * k * k;
    let mut grad_k = vec![0.0; g.c_out * per_out];
    for_each_chunk(exec, &mut grad_k, per_out, |o, gk_o| {
        for n in 0..g.batch {
            let gout_o = &grad_out[n * out_sample + o * oh * ow..n * out_sample + (o + 1) * oh * ow];
            let in_n = &input[n * in_sample..(n + 1) * in_sample];
            for c in 0..g.c_in {
                let in_c = &in_n[c * g.in_plane()..(c + 1) * g.in_plane()];
                for ky in 0..k {
                    for kx in 0..k {
                        let (lo, hi) = g.col_range(kx);
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let Some(iy) = g.input_row(oy, ky) else { continue };
                            let src = &in_c[iy * g.width + lo + kx - g.pad..iy * g.width + hi + kx - g.pad];
                            let go = &gout_o[oy * ow + lo..oy * ow + hi];
                            acc += go.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        }
                        gk_o[(c * k + ky) * k + kx] += acc;
                    }
                }
            }
        }
    });
    let mut grad_b = vec![0.0; g.c_out];
    for n in 0..g.batch {
        for (o, gb) in grad_b.iter_mut().enumerate() {
            let start = n * out_sample + o * oh * ow;
            *gb += grad_out[start..start + oh * ow].iter().sum::<f64>();
        }
    }
    (grad_k, grad_b)
}

/// 2×2 stride-2 max pooling over `planes` independent `h×w` planes.
///
/// Trailing odd rows/columns are dropped. Returns the pooled values and the
/// flat input index of each window's maximum (first occurrence on ties).
pub fn max_pool2x2_forward(exec: Exec, input: &[f64], planes: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * oh * ow];
    // Argmax is stored as f64 within the parallel pass and converted after;
    // indices stay far below 2^53.
    let mut arg = vec![0.0; planes * oh * ow];
    for_each_chunk(exec, &mut arg, oh * ow, |p, arg_p| {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                arg_p[oy * ow + ox] = best as f64;
            }
        }
    });
    let arg: Vec<usize> = arg.into_iter().map(|a| a as usize).collect();
    for (o, &a) in out.iter_mut().zip(&arg) {
        *o = input[a];
    }
    (out, arg)
}
