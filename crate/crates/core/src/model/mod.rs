//! The assembled network: conv stack → feature layer → stacked LSTM →
//! dropout → one affine head per horizon; plus training and checkpoints.

pub mod checkpoint;
mod config;
pub mod optim;
mod params;
pub mod train;

use rand::Rng;

pub use config::SrcnConfig;
pub use params::{SrcnParams, SrcnVars};

use crate::error::{Error, Result};
use crate::grid_codec::GridFrame;
use crate::lstm::run_stacked;
use crate::tensor::{BatchStats, Mode, Tape, Tensor, Var};

/// Outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// One `[B×n_links]` prediction per horizon, normalized speed units.
    pub outputs: Vec<Var>,
    /// Per conv block, train mode only.
    pub bn_stats: Vec<BatchStats>,
    /// Per-sample activation shape after each stage: every conv block,
    /// flatten, feature layer, each LSTM layer, each head.
    pub trace: Vec<Vec<usize>>,
}

/// Runs a batch of `batch` windows through the network.
///
/// `frames` is `[L·B × 1 × H × W]`, time-major: row `t·B + b` is frame `t`
/// of window `b`.
pub fn forward<R: Rng + ?Sized>(
    params: &SrcnParams,
    tape: &mut Tape,
    vars: &SrcnVars,
    frames: Var,
    batch: usize,
    mode: Mode,
    dropout: f64,
    rng: &mut R,
) -> Result<ForwardPass> {
    let shape = tape.shape(frames).to_vec();
    let [rows, 1, _, _] = shape[..] else {
        return Err(Error::shape(format!("frames must be [L*B, 1, H, W], got {shape:?}")));
    };
    if batch == 0 || rows % batch != 0 {
        return Err(Error::shape(format!("{rows} frames do not split into batches of {batch}")));
    }
    let seq_len = rows / batch;

    let mut trace = Vec::new();
    let mut bn_stats = Vec::new();
    let mut x = frames;
    for (block, bv) in params.conv.iter().zip(&vars.conv) {
        let (y, stats) = block.forward(tape, bv, x, mode)?;
        trace.push(tape.shape(y)[1..].to_vec());
        bn_stats.extend(stats);
        x = y;
    }
    let flat = tape.flatten_rows(x)?;
    trace.push(tape.shape(flat)[1..].to_vec());
    let features = params.feature.forward(tape, &vars.feature, flat)?;
    trace.push(tape.shape(features)[1..].to_vec());

    let steps = (0..seq_len)
        .map(|t| tape.slice_rows(features, t * batch, (t + 1) * batch))
        .collect::<Result<Vec<_>>>()?;
    let layers: Vec<_> = params.lstm.iter().zip(vars.lstm.iter().copied()).collect();
    let run = run_stacked(tape, &layers, &steps)?;
    for state in &run.finals {
        trace.push(tape.shape(state.h)[1..].to_vec());
    }
    let hidden = tape.dropout(run.top().h, dropout, mode, rng)?;
    let mut outputs = Vec::with_capacity(params.heads.len());
    for (head, hv) in params.heads.iter().zip(&vars.heads) {
        let y = head.forward(tape, hv, hidden)?;
        trace.push(tape.shape(y)[1..].to_vec());
        outputs.push(y);
    }
    Ok(ForwardPass { outputs, bn_stats, trace })
}

/// Mean squared error over all horizons, links and batch rows.
pub fn mse_loss(tape: &mut Tape, preds: &[Var], targets: &[Var]) -> Result<Var> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::shape(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut total: Option<Var> = None;
    let mut count = 0;
    for (&p, &t) in preds.iter().zip(targets) {
        let diff = tape.sub(p, t)?;
        let sq = tape.mul(diff, diff)?;
        let s = tape.sum(sq)?;
        count += tape.value(diff).len();
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    tape.scale(total.expect("nonempty"), 1.0 / count as f64)
}

/// Stacks windows of frames into the time-major `[L·B × 1 × H × W]` layout.
pub fn stack_frames(windows: &[&[GridFrame]]) -> Result<Tensor> {
    let first = windows.first().ok_or_else(|| Error::shape("no windows to stack"))?;
    let seq_len = first.len();
    let f0 = first.first().ok_or_else(|| Error::shape("empty window"))?;
    let (h, w) = (f0.height, f0.width);
    let mut data = Vec::with_capacity(seq_len * windows.len() * h * w);
    for t in 0..seq_len {
        for win in windows {
            let f = win.get(t).ok_or_else(|| Error::shape("windows differ in length"))?;
            if f.height != h || f.width != w {
                return Err(Error::shape(format!(
                    "frame {}x{} does not match {h}x{w}",
                    f.height, f.width
                )));
            }
            data.extend_from_slice(&f.values);
        }
    }
    Tensor::new(vec![seq_len * windows.len(), 1, h, w], data)
}

/// Predicts normalized link speeds for one window, one vector per horizon.
pub fn predict_window<R: Rng + ?Sized>(
    params: &SrcnParams,
    config: &SrcnConfig,
    window: &[GridFrame],
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if window.len() != config.seq_len {
        return Err(Error::shape(format!(
            "window has {} frames, model expects {}",
            window.len(),
            config.seq_len
        )));
    }
    if let Some(f) = window.iter().find(|f| f.height != config.grid_height || f.width != config.grid_width) {
        return Err(Error::shape(format!(
            "frame {}x{} does not match grid {}x{}",
            f.height, f.width, config.grid_height, config.grid_width
        )));
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let frames = tape.constant(stack_frames(&[window])?);
    let pass = forward(params, &mut tape, &vars, frames, 1, mode, config.dropout, rng)?;
    Ok(pass.outputs.iter().map(|&o| tape.value(o).data().to_vec()).collect())
}
