use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::baselines::{persistence_baseline, HistoricalAverage};
use super::plot::{bar_chart, line_chart, Series};
use super::report::{build_report, results_table, EvalReport, HorizonPredictions};
use crate::data::{
    bin_records, chronological_split, default_v_max, generate_synthetic, lattice_network, load_records,
    make_windows, BinnedSeries, DayWindow, IncidentLog, LatticeConfig, SampleWindow, SynthConfig, WindowSet,
};
use crate::error::{Error, Result};
use crate::grid_codec::{NetworkFile, NetworkMap};
use crate::model::checkpoint::write_checkpoint;
use crate::model::train::{predict_windows, train, TrainOutcome};
use crate::model::{SrcnConfig, SrcnParams};
use crate::tensor::Exec;

/// Where the speed data comes from: CSV records over a network file, or the
/// synthetic generator when no records are given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub records: Option<PathBuf>,
    pub network: Option<PathBuf>,
    pub window: DayWindow,
    pub lattice: LatticeConfig,
    pub synthetic: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Fraction of windows (in time order) used for training.
    pub train_fraction: f64,
    /// One model is trained and evaluated per set of horizon offsets.
    pub horizon_sets: Vec<Vec<usize>>,
    pub mape_epsilon: f64,
    /// Links drawn in the predicted-vs-actual plots.
    pub plot_links: usize,
    /// Grid size, link count and horizons are filled in per run.
    pub model: SrcnConfig,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            train_fraction: 0.7,
            horizon_sets: vec![vec![1, 2, 3], vec![10, 20, 30]],
            mape_epsilon: super::metrics::DEFAULT_MAPE_EPSILON,
            plot_links: 3,
            model: SrcnConfig {
                max_epochs: 60,
                ..SrcnConfig::desk()
            },
            data: DataConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the file name ends in `.json`. Relative data
    /// paths are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, path.extension().is_some_and(|e| e == "json"))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.records, &mut cfg.data.network].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Keys present in `text` override [`ExperimentConfig::default`]; a
    /// partial `[model]` table therefore tweaks the desk model rather than
    /// starting from the full-size one.
    pub fn parse(text: &str, json: bool) -> Result<Self> {
        let given: serde_json::Value = if json {
            serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::config(e.to_string()))?
        };
        let mut merged = serde_json::to_value(Self::default())?;
        overlay(&mut merged, given);
        let cfg: Self = serde_json::from_value(merged).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config(format!("train_fraction {} outside (0, 1)", self.train_fraction)));
        }
        if self.horizon_sets.is_empty() {
            return Err(Error::config("no horizon sets"));
        }
        if !(self.mape_epsilon >= 0.0) {
            return Err(Error::config("mape_epsilon must be non-negative"));
        }
        if self.data.records.is_some() != self.data.network.is_some() {
            return Err(Error::config("records and network must be given together"));
        }
        self.data.window.validate()?;
        self.data.synthetic.validate()?;
        // Grid size and link count come from the data; stand-ins here.
        for set in &self.horizon_sets {
            SrcnConfig {
                horizons: set.clone(),
                grid_height: 1 << 12,
                grid_width: 1 << 12,
                n_links: 1,
                ..self.model.clone()
            }
            .validate()?;
        }
        Ok(())
    }
}

fn overlay(base: &mut serde_json::Value, given: serde_json::Value) {
    match (base, given) {
        (serde_json::Value::Object(b), serde_json::Value::Object(g)) => {
            for (k, v) in g {
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Binned speeds on a rasterized network.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub map: NetworkMap,
    pub series: BinnedSeries,
    /// Ground truth, synthetic data only.
    pub incidents: Option<Vec<IncidentLog>>,
}

pub fn load_dataset(data: &DataConfig, seed: u64) -> Result<Dataset> {
    match (&data.records, &data.network) {
        (Some(records), Some(network)) => {
            let map = NetworkFile::load(network)?.to_map()?;
            let records = load_records(records)?;
            let series = bin_records(&records, &map.link_ids(), data.window)?;
            Ok(Dataset { map, series, incidents: None })
        }
        _ => {
            let lattice = lattice_network(&data.lattice, seed)?;
            let ids = lattice.map.link_ids();
            let synth = generate_synthetic(&ids, &lattice.adjacency, &data.synthetic, data.window, seed.wrapping_add(1), &[])?;
            let series = bin_records(&synth.records, &ids, data.window)?;
            Ok(Dataset {
                map: lattice.map,
                series,
                incidents: Some(synth.incidents),
            })
        }
    }
}

/// Windows and split for one horizon set.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Fully resolved model configuration (grid, links, horizons, v_max).
    pub config: SrcnConfig,
    pub windows: WindowSet,
    pub train: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
    /// Service days covered by training windows.
    pub train_days: usize,
}

impl Prepared {
    pub fn training_set(&self) -> WindowSet {
        self.windows.with_windows(self.train.clone())
    }
}

/// Fills in data-dependent model settings and builds the split windows.
pub fn prepare(dataset: &Dataset, model: &SrcnConfig, horizons: &[usize], train_fraction: f64) -> Result<Prepared> {
    let spec = dataset.map.spec();
    let series = &dataset.series;
    let v_max_days = ((series.days as f64 * train_fraction).round() as usize).max(1);
    let v_max = match model.v_max {
        Some(v) => v,
        None => default_v_max(series, v_max_days)?,
    };
    let config = SrcnConfig {
        grid_height: spec.height,
        grid_width: spec.width,
        n_links: dataset.map.len(),
        horizons: horizons.to_vec(),
        v_max: Some(v_max),
        ..model.clone()
    };
    config.validate()?;
    let windows = make_windows(series, &dataset.map, config.seq_len, horizons, v_max)?;
    let (train, test) = chronological_split(&windows.windows, config.seq_len, config.max_horizon(), train_fraction)?;
    let train_days = train.last().map_or(0, |w| w.day + 1);
    Ok(Prepared {
        config,
        windows,
        train,
        test,
        train_days,
    })
}

/// Model, persistence and historical-average forecasts for `windows`, in km/h.
pub fn forecast(
    dataset: &Dataset,
    prepared: &Prepared,
    params: &SrcnParams,
    windows: &[SampleWindow],
    exec: Exec,
) -> Result<Vec<HorizonPredictions>> {
    let cfg = &prepared.config;
    let set = &prepared.windows;
    let v_max = set.v_max;
    let bpd = set.bins_per_day;
    let model = predict_windows(params, cfg, set, windows, exec)?;
    let historical = HistoricalAverage::fit(&dataset.series, prepared.train_days)?;
    let persistence = windows
        .iter()
        .map(|w| persistence_baseline(&dataset.map, set.inputs(w), v_max, 1).map(|mut v| v.remove(0)))
        .collect::<Result<Vec<_>>>()?;
    cfg.horizons
        .iter()
        .zip(model)
        .map(|(&offset, preds)| {
            let targets: Vec<usize> = windows.iter().map(|w| w.target_bin(cfg.seq_len, offset)).collect();
            Ok(HorizonPredictions {
                offset_bins: offset,
                model: preds.into_iter().map(|r| r.into_iter().map(|x| x * v_max).collect()).collect(),
                persistence: persistence.clone(),
                historical: targets
                    .iter()
                    .map(|&b| historical.predict_all(b % bpd))
                    .collect::<Result<_>>()?,
                actual: targets.iter().map(|&b| dataset.series.speeds_at(b)).collect(),
            })
        })
        .collect()
}

/// Configuration block echoed into every report.
pub fn provenance(experiment: &ExperimentConfig, model: &SrcnConfig) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "experiment": serde_json::to_value(experiment)?,
        "model": serde_json::to_value(model)?,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub exec: Exec,
    /// Store wall-clock time in the reports (otherwise only in `timing.json`).
    pub record_runtime: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            exec: Exec::default(),
            record_runtime: false,
        }
    }
}

/// One trained horizon set.
#[derive(Debug, Clone)]
pub struct SetResult {
    pub name: String,
    pub report: EvalReport,
    pub outcome: TrainOutcome,
    pub seconds: f64,
}

/// Files written so far; removed again if the run fails.
struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(name);
        self.files.push(path.clone());
        fs::write(&path, bytes)?;
        Ok(())
    }

    fn discard(self) {
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

pub fn set_name(horizons: &[usize]) -> String {
    let parts: Vec<String> = horizons.iter().map(usize::to_string).collect();
    format!("h{}", parts.join("-"))
}

fn json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

/// Runs ingest → window → train → evaluate for every horizon set and writes
/// reports, checkpoints, training logs, CSV tables and SVG plots to `out`.
///
/// On failure the error names the stage, and every file written by this
/// run is removed.
pub fn run_experiment(config: &ExperimentConfig, out: &Path, options: RunOptions) -> Result<Vec<SetResult>> {
    config.validate()?;
    let mut outputs = Outputs::new(out)?;
    match run_into(config, &mut outputs, options) {
        Ok(results) => Ok(results),
        Err(e) => {
            outputs.discard();
            Err(e)
        }
    }
}

fn run_into(config: &ExperimentConfig, outputs: &mut Outputs, options: RunOptions) -> Result<Vec<SetResult>> {
    let started = Instant::now();
    let dataset = load_dataset(&config.data, config.seed).map_err(|e| e.in_stage("ingest"))?;
    outputs.write("config.json", json_pretty(config)?)?;
    if let Some(incidents) = &dataset.incidents {
        outputs.write("incidents.json", json_pretty(incidents)?)?;
        outputs.write("network.json", json_pretty(&NetworkFile::from_map(&dataset.map))?)?;
    }
    let bin_minutes = dataset.series.window.bin_width as f64 / 60.0;
    let mut results = Vec::new();
    let mut timing = serde_json::Map::new();
    for (k, horizons) in config.horizon_sets.iter().enumerate() {
        let set_started = Instant::now();
        let name = set_name(horizons);
        let prepared = prepare(&dataset, &config.model, horizons, config.train_fraction)
            .map_err(|e| e.in_stage("window"))?;
        let seed = config.seed.wrapping_add(100 + k as u64);
        let outcome = train(&prepared.config, &prepared.training_set(), seed, options.exec, |_| Ok(()))
            .map_err(|e| e.in_stage("train"))?;
        let predictions = forecast(&dataset, &prepared, &outcome.params, &prepared.test, options.exec)
            .map_err(|e| e.in_stage("evaluate"))?;
        let mut report = build_report(
            provenance(config, &prepared.config)?,
            &dataset.map.link_ids(),
            &predictions,
            config.mape_epsilon,
        )
        .map_err(|e| e.in_stage("evaluate"))?;
        let seconds = set_started.elapsed().as_secs_f64();
        if options.record_runtime {
            report.runtime_seconds = Some(seconds);
        }
        timing.insert(name.clone(), seconds.into());

        write_set(outputs, &name, &dataset, &prepared, &outcome, &report, &predictions, config, bin_minutes)
            .map_err(|e| e.in_stage("write"))?;
        results.push(SetResult {
            name,
            report,
            outcome,
            seconds,
        });
    }
    timing.insert("total".into(), started.elapsed().as_secs_f64().into());
    outputs.write("timing.json", json_pretty(&timing)?)?;
    Ok(results)
}

#[allow(clippy::too_many_arguments)]
fn write_set(
    outputs: &mut Outputs,
    name: &str,
    dataset: &Dataset,
    prepared: &Prepared,
    outcome: &TrainOutcome,
    report: &EvalReport,
    predictions: &[HorizonPredictions],
    config: &ExperimentConfig,
    bin_minutes: f64,
) -> Result<()> {
    outputs.write(&format!("report_{name}.json"), json_pretty(report)?)?;
    let mut ckpt = Vec::new();
    write_checkpoint(&mut ckpt, &outcome.params, &prepared.config)?;
    outputs.write(&format!("checkpoint_{name}.srcn"), ckpt)?;
    let mut log = String::new();
    for r in &outcome.log {
        let mut line = serde_json::to_value(r)?;
        // Null unless runtime is recorded.
        if report.runtime_seconds.is_none() {
            line["seconds"] = serde_json::Value::Null;
        }
        log.push_str(&serde_json::to_string(&line)?);
        log.push('\n');
    }
    outputs.write(&format!("train_log_{name}.jsonl"), log)?;
    outputs.write(&format!("table_{name}.csv"), results_table(report, bin_minutes)?)?;

    let groups: Vec<String> = report
        .horizons
        .iter()
        .map(|h| format!("{} min", h.offset_bins as f64 * bin_minutes))
        .collect();
    let bars = vec![
        ("SRCN".to_string(), report.horizons.iter().map(|h| h.mape).collect()),
        ("persistence".to_string(), report.horizons.iter().map(|h| h.baseline.persistence.mape).collect()),
        ("historical average".to_string(), report.horizons.iter().map(|h| h.baseline.historical.mape).collect()),
    ];
    let desc = format!("config_fingerprint {}", report.config_fingerprint);
    outputs.write(
        &format!("errors_{name}.svg"),
        bar_chart(&format!("MAPE by horizon ({name})"), &desc, "MAPE", &groups, &bars),
    )?;

    // Predicted-vs-actual traces over the first test day for a few links.
    let ids = dataset.map.link_ids();
    let first_day = prepared.test.first().map_or(0, |w| w.day);
    let day_idx: Vec<usize> = (0..prepared.test.len()).filter(|&i| prepared.test[i].day == first_day).collect();
    let n_plot = config.plot_links.min(ids.len());
    let links: Vec<usize> = (0..n_plot).map(|k| k * ids.len() / n_plot.max(1)).collect();
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["link_id", "offset_bins", "target_bin", "actual", "srcn", "persistence", "historical"])?;
    let h = &predictions[0];
    for &j in &links {
        let mut series = vec![
            Series { name: "actual".into(), points: Vec::new() },
            Series { name: "SRCN".into(), points: Vec::new() },
            Series { name: "persistence".into(), points: Vec::new() },
        ];
        for &i in &day_idx {
            let target = prepared.test[i].target_bin(prepared.config.seq_len, h.offset_bins);
            let x = (target % prepared.windows.bins_per_day) as f64;
            for (s, v) in series.iter_mut().zip([h.actual[i][j], h.model[i][j], h.persistence[i][j]]) {
                s.points.push((x, v));
            }
        }
        for hp in predictions {
            for &i in &day_idx {
                let target = prepared.test[i].target_bin(prepared.config.seq_len, hp.offset_bins);
                csv.write_record([
                    ids[j].clone(),
                    hp.offset_bins.to_string(),
                    target.to_string(),
                    hp.actual[i][j].to_string(),
                    hp.model[i][j].to_string(),
                    hp.persistence[i][j].to_string(),
                    hp.historical[i][j].to_string(),
                ])?;
            }
        }
        outputs.write(
            &format!("series_{name}_{}.svg", ids[j]),
            line_chart(
                &format!("Link {} at +{} bins", ids[j], h.offset_bins),
                &desc,
                "bin of day",
                "speed (km/h)",
                &series,
            ),
        )?;
    }
    let bytes = csv.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    outputs.write(&format!("series_{name}.csv"), bytes)?;
    Ok(())
}
