use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::RmsProp;
use super::{forward, mse_loss, stack_frames, SrcnConfig, SrcnParams};
use crate::data::{chronological_split, SampleWindow, WindowSet};
use crate::error::{Error, Result};
use crate::tensor::{Exec, Mode, Tape, Tensor};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: SrcnParams,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
}

fn check_consistent(config: &SrcnConfig, data: &WindowSet) -> Result<()> {
    config.validate()?;
    if data.seq_len != config.seq_len || data.offsets != config.horizons {
        return Err(Error::config(format!(
            "windows use lag {} and offsets {:?}, model expects lag {} and offsets {:?}",
            data.seq_len, data.offsets, config.seq_len, config.horizons
        )));
    }
    let f = data.frames.first().ok_or_else(|| Error::data("no frames"))?;
    if (f.height, f.width) != (config.grid_height, config.grid_width) {
        return Err(Error::config(format!(
            "frames are {}x{}, model expects {}x{}",
            f.height, f.width, config.grid_height, config.grid_width
        )));
    }
    if data.targets.first().map(Vec::len) != Some(config.n_links) {
        return Err(Error::config(format!("model expects {} links", config.n_links)));
    }
    Ok(())
}

fn batch_tensors(data: &WindowSet, windows: &[SampleWindow]) -> Result<(Tensor, Vec<Tensor>)> {
    let inputs: Vec<_> = windows.iter().map(|w| data.inputs(w)).collect();
    let frames = stack_frames(&inputs)?;
    let targets = (0..data.offsets.len())
        .map(|k| {
            let rows: Vec<f64> = windows.iter().flat_map(|w| data.window_targets(w)[k].iter().copied()).collect();
            Tensor::matrix(windows.len(), rows.len() / windows.len(), rows)
        })
        .collect::<Result<_>>()?;
    Ok((frames, targets))
}

/// One optimizer step on one mini-batch; returns the batch loss.
pub fn train_step(
    params: &mut SrcnParams,
    optimizer: &mut RmsProp,
    config: &SrcnConfig,
    data: &WindowSet,
    batch: &[SampleWindow],
    exec: Exec,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let (frames, targets) = batch_tensors(data, batch)?;
    let mut tape = Tape::with_exec(exec);
    let vars = params.bind(&mut tape);
    let x = tape.constant(frames);
    let pass = forward(params, &mut tape, &vars, x, batch.len(), Mode::Train, config.dropout, rng)?;
    let targets: Vec<_> = targets.into_iter().map(|t| tape.constant(t)).collect();
    let loss = mse_loss(&mut tape, &pass.outputs, &targets)?;
    tape.backward(loss)?;
    optimizer.step(&tape, &vars.all(), &mut params.tensors_mut())?;
    for (block, stats) in params.conv.iter_mut().zip(&pass.bn_stats) {
        block.bn.update_running(stats);
    }
    Ok(tape.value(loss).data()[0])
}

/// Infer-mode predictions for windows, one `[window][link]` matrix per horizon.
pub fn predict_windows(
    params: &SrcnParams,
    config: &SrcnConfig,
    data: &WindowSet,
    windows: &[SampleWindow],
    exec: Exec,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut out = vec![Vec::with_capacity(windows.len()); config.horizons.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for chunk in windows.chunks(config.batch_size.max(1)) {
        let (frames, _) = batch_tensors(data, chunk)?;
        let mut tape = Tape::with_exec(exec);
        let vars = params.bind(&mut tape);
        let x = tape.constant(frames);
        let pass = forward(params, &mut tape, &vars, x, chunk.len(), Mode::Infer, config.dropout, &mut rng)?;
        for (k, &o) in pass.outputs.iter().enumerate() {
            let v = tape.value(o);
            let n = v.shape()[1];
            out[k].extend(v.data().chunks(n).map(<[f64]>::to_vec));
        }
    }
    Ok(out)
}

/// Infer-mode MSE (normalized units) over windows.
pub fn evaluate_mse(
    params: &SrcnParams,
    config: &SrcnConfig,
    data: &WindowSet,
    windows: &[SampleWindow],
    exec: Exec,
) -> Result<f64> {
    let preds = predict_windows(params, config, data, windows, exec)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (w_idx, w) in windows.iter().enumerate() {
        for (k, target) in data.window_targets(w).into_iter().enumerate() {
            for (p, t) in preds[k][w_idx].iter().zip(target) {
                sum += (p - t) * (p - t);
                count += 1;
            }
        }
    }
    Ok(sum / count as f64)
}

/// Runs `steps` full-batch optimizer steps on `windows`; returns each step's loss.
pub fn fit_steps(
    params: &mut SrcnParams,
    config: &SrcnConfig,
    data: &WindowSet,
    windows: &[SampleWindow],
    steps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_consistent(config, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = RmsProp::new(config.learning_rate, config.decay);
    (0..steps)
        .map(|_| train_step(params, &mut opt, config, data, windows, Exec::default(), &mut rng))
        .collect()
}

/// Mini-batch RMSprop with early stopping on a chronological validation tail.
///
/// `data.windows` are the training windows in time order. The last
/// `validation_fraction` of them (minus any that overlap the rest) are held
/// out; training stops once validation loss has failed to improve by
/// `min_delta` for more than `patience` epochs, and the best epoch's
/// parameters are returned. `on_epoch` sees every log record as it is made.
pub fn train(
    config: &SrcnConfig,
    data: &WindowSet,
    seed: u64,
    exec: Exec,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    check_consistent(config, data)?;
    let (train_windows, val_windows) = chronological_split(
        &data.windows,
        config.seq_len,
        config.max_horizon(),
        1.0 - config.validation_fraction,
    )?;
    if train_windows.len() < config.batch_size {
        return Err(Error::data(format!(
            "{} training windows is fewer than one batch of {}",
            train_windows.len(),
            config.batch_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = SrcnParams::init(config, &mut rng)?;
    let mut opt = RmsProp::new(config.learning_rate, config.decay);
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut bad_epochs = 0;
    let mut log = Vec::new();
    let mut order = train_windows.clone();
    let mut stopped_early = false;
    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let loss = train_step(&mut params, &mut opt, config, data, batch, exec, &mut rng)?;
            loss_sum += loss * batch.len() as f64;
        }
        let val_mse = evaluate_mse(&params, config, data, &val_windows, exec)?;
        let record = EpochRecord {
            epoch,
            train_mse: loss_sum / order.len() as f64,
            val_mse,
            lr: opt.learning_rate,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record)?;
        log.push(record);
        if val_mse < best.0 - config.min_delta {
            best = (val_mse, params.clone(), epoch);
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_val_mse, params, best_epoch) = best;
    Ok(TrainOutcome {
        params,
        log,
        best_epoch,
        best_val_mse,
        stopped_early,
    })
}
