use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use srcn::data::{bin_records, default_v_max, generate_synthetic, lattice_network, load_records, save_records};
use srcn::eval::experiment::{forecast, load_dataset, prepare, provenance, Dataset};
use srcn::eval::{build_report, run_experiment, ExperimentConfig, HorizonPredictions, RunOptions};
use srcn::grid_codec::NetworkFile;
use srcn::model::checkpoint::{load_checkpoint, save_checkpoint};
use srcn::model::train::train;
use srcn::tensor::Exec;

/// Network-wide traffic speed forecasting with spatiotemporal recurrent
/// convolutional networks.
#[derive(Parser)]
#[command(name = "srcn", version)]
struct Cli {
    /// Experiment configuration (TOML, or JSON by extension). Defaults apply
    /// to every omitted field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run every kernel single-threaded.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize a network file; optionally render binned records as PGM frames.
    Rasterize(RasterizeArgs),
    /// Generate a synthetic network, speed records and incident log.
    Synth(OutArgs),
    /// Train one model on the configured data.
    Train(TrainArgs),
    /// Write test-window predictions from a checkpoint as CSV.
    Predict(CheckpointArgs),
    /// Score a checkpoint against the baselines and write a JSON report.
    Evaluate(CheckpointArgs),
    /// Full experiment: every horizon set, reports, tables and plots.
    Run(RunArgs),
}

#[derive(Args)]
struct OutArgs {
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RasterizeArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Speed records to encode into frames.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Number of leading bins to render.
    #[arg(long, default_value_t = 10)]
    frames: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    out: PathBuf,
    /// Horizon offsets in bins, e.g. `1,2,3`; defaults to the first configured set.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
}

#[derive(Args)]
struct CheckpointArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    out: PathBuf,
    /// Store wall-clock runtime inside the reports.
    #[arg(long)]
    record_runtime: bool,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn exec(cli: &Cli) -> Exec {
    if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn rasterize(args: &RasterizeArgs, cfg: &ExperimentConfig) -> Result<()> {
    let map = NetworkFile::load(&args.network)?.to_map()?;
    fs::create_dir_all(&args.out)?;
    let cells: serde_json::Map<String, serde_json::Value> = (0..map.len())
        .map(|j| {
            let list: Vec<[usize; 2]> = map.link_cells(j).iter().map(|c| [c.row, c.col]).collect();
            (map.link_ids()[j].clone(), serde_json::json!(list))
        })
        .collect();
    write_json(
        &args.out.join("cells.json"),
        &serde_json::json!({
            "height": map.spec().height,
            "width": map.spec().width,
            "covered_cells": map.covered_cells(),
            "disjoint": map.is_disjoint(),
            "links": cells,
        }),
    )?;
    if let Some(records) = &args.records {
        let series = bin_records(&load_records(records)?, &map.link_ids(), cfg.data.window)?;
        let v_max = match cfg.model.v_max {
            Some(v) => v,
            None => default_v_max(&series, series.days)?,
        };
        for b in 0..args.frames.min(series.bins()) {
            let (frame, _) = map.encode_frame(&series.speeds_at(b), v_max, b)?;
            fs::write(args.out.join(format!("frame_{b:05}.pgm")), frame.to_pgm())?;
        }
    }
    println!("rasterized {} links onto {} cells", map.len(), map.covered_cells());
    Ok(())
}

fn synth(args: &OutArgs, cfg: &ExperimentConfig) -> Result<()> {
    let lattice = lattice_network(&cfg.data.lattice, cfg.seed)?;
    let ids = lattice.map.link_ids();
    let out = generate_synthetic(
        &ids,
        &lattice.adjacency,
        &cfg.data.synthetic,
        cfg.data.window,
        cfg.seed.wrapping_add(1),
        &[],
    )?;
    fs::create_dir_all(&args.out)?;
    NetworkFile::from_map(&lattice.map).save(&args.out.join("network.json"))?;
    save_records(&args.out.join("records.csv"), &out.records)?;
    write_json(&args.out.join("incidents.json"), &out.incidents)?;
    println!(
        "wrote {} records for {} links and {} incident entries",
        out.records.len(),
        ids.len(),
        out.incidents.len()
    );
    Ok(())
}

fn train_cmd(args: &TrainArgs, cfg: &ExperimentConfig, exec: Exec) -> Result<()> {
    let horizons = args.horizons.clone().unwrap_or_else(|| cfg.horizon_sets[0].clone());
    let dataset = load_dataset(&cfg.data, cfg.seed)?;
    let prepared = prepare(&dataset, &cfg.model, &horizons, cfg.train_fraction)?;
    fs::create_dir_all(&args.out)?;
    let log_path = args.out.join("train_log.jsonl");
    let mut log = String::new();
    let outcome = train(&prepared.config, &prepared.training_set(), cfg.seed, exec, |r| {
        eprintln!("epoch {:>3}  train {:.6}  val {:.6}  {:.1}s", r.epoch, r.train_mse, r.val_mse, r.seconds);
        log.push_str(&serde_json::to_string(r)?);
        log.push('\n');
        Ok(())
    })?;
    fs::write(&log_path, log)?;
    save_checkpoint(&args.out.join("checkpoint.srcn"), &outcome.params, &prepared.config)?;
    println!(
        "best epoch {} of {} (validation MSE {:.6})",
        outcome.best_epoch,
        outcome.log.len(),
        outcome.best_val_mse
    );
    Ok(())
}

fn checkpoint_forecast(
    args: &CheckpointArgs,
    cfg: &ExperimentConfig,
    exec: Exec,
) -> Result<(Dataset, Vec<HorizonPredictions>, serde_json::Value)> {
    let (params, model) = load_checkpoint(&args.checkpoint)?;
    let dataset = load_dataset(&cfg.data, cfg.seed)?;
    let prepared = prepare(&dataset, &model, &model.horizons, cfg.train_fraction)?;
    let preds = forecast(&dataset, &prepared, &params, &prepared.test, exec)?;
    let prov = provenance(cfg, &prepared.config)?;
    Ok((dataset, preds, prov))
}

fn predict(args: &CheckpointArgs, cfg: &ExperimentConfig, exec: Exec) -> Result<()> {
    let (dataset, preds, _) = checkpoint_forecast(args, cfg, exec)?;
    let ids = dataset.map.link_ids();
    let mut w = csv::Writer::from_path(&args.out)?;
    w.write_record(["window", "offset_bins", "link_id", "predicted_kmh", "actual_kmh"])?;
    for h in &preds {
        for (i, (p, a)) in h.model.iter().zip(&h.actual).enumerate() {
            for (j, id) in ids.iter().enumerate() {
                w.write_record([i.to_string(), h.offset_bins.to_string(), id.clone(), p[j].to_string(), a[j].to_string()])?;
            }
        }
    }
    w.flush()?;
    println!("wrote predictions for {} horizons to {}", preds.len(), args.out.display());
    Ok(())
}

fn evaluate(args: &CheckpointArgs, cfg: &ExperimentConfig, exec: Exec) -> Result<()> {
    let (dataset, preds, prov) = checkpoint_forecast(args, cfg, exec)?;
    let report = build_report(prov, &dataset.map.link_ids(), &preds, cfg.mape_epsilon)?;
    write_json(&args.out, &report)?;
    for h in &report.horizons {
        println!(
            "+{:>2} bins  MAPE {:.4} (persistence {:.4}, historical {:.4})  RMSE {:.3}",
            h.offset_bins, h.mape, h.baseline.persistence.mape, h.baseline.historical.mape, h.rmse
        );
    }
    Ok(())
}

fn run(args: &RunArgs, cfg: &ExperimentConfig, exec: Exec) -> Result<()> {
    let options = RunOptions {
        exec,
        record_runtime: args.record_runtime,
    };
    for set in run_experiment(cfg, &args.out, options)? {
        println!("{} ({:.1}s, {} epochs)", set.name, set.seconds, set.outcome.log.len());
        for h in &set.report.horizons {
            println!(
                "  +{:>2} bins  MAPE {:.4} (persistence {:.4}, historical {:.4})  RMSE {:.3}",
                h.offset_bins, h.mape, h.baseline.persistence.mape, h.baseline.historical.mape, h.rmse
            );
        }
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let exec = exec(cli);
    match &cli.command {
        Command::Rasterize(a) => rasterize(a, &cfg),
        Command::Synth(a) => synth(a, &cfg),
        Command::Train(a) => train_cmd(a, &cfg, exec),
        Command::Predict(a) => predict(a, &cfg, exec),
        Command::Evaluate(a) => evaluate(a, &cfg, exec),
        Command::Run(a) => run(a, &cfg, exec),
    }
}

/// 2 configuration, 3 data, 4 numerical health, 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<srcn::Error>())
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
