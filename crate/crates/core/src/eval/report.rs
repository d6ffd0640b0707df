use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{mape, mape_signed, rmse};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub mape: f64,
    pub mape_signed: f64,
    /// km/h.
    pub rmse: f64,
}

impl Scores {
    pub fn compute(pred: &[Vec<f64>], actual: &[Vec<f64>], epsilon: f64) -> Result<Self> {
        Ok(Self {
            mape: mape(pred, actual, epsilon)?,
            mape_signed: mape_signed(pred, actual, epsilon)?,
            rmse: rmse(pred, actual)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineScores {
    pub persistence: Scores,
    pub historical: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub offset_bins: usize,
    pub mape: f64,
    pub mape_signed: f64,
    pub rmse: f64,
    pub baseline: BaselineScores,
}

/// Per-link errors, one entry per horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub link_id: String,
    pub mape: Vec<f64>,
    pub rmse: Vec<f64>,
}

/// Relative improvement of the model over each baseline,
/// `(baseline − model) / baseline`; positive means the model is better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub offset_bins: usize,
    pub mape_vs_persistence: f64,
    pub mape_vs_historical: f64,
    pub rmse_vs_persistence: f64,
    pub rmse_vs_historical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_fingerprint: String,
    pub config: serde_json::Value,
    pub horizons: Vec<HorizonReport>,
    /// Links.
    pub n: usize,
    /// Predictions per link: evaluated windows × horizons.
    pub m: usize,
    /// `m · n`, the number of scored entries.
    pub n_p: usize,
    /// Wall-clock time; left empty unless explicitly requested so that
    /// reports from identical runs compare equal byte for byte.
    pub runtime_seconds: Option<f64>,
    pub per_link: Vec<LinkReport>,
    pub deltas: Vec<Delta>,
}

/// All forecasts for one horizon, in km/h, as `[window][link]` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonPredictions {
    pub offset_bins: usize,
    pub model: Vec<Vec<f64>>,
    pub persistence: Vec<Vec<f64>>,
    pub historical: Vec<Vec<f64>>,
    pub actual: Vec<Vec<f64>>,
}

/// Hex SHA-256 of the compact JSON form of `config` (object keys sorted).
pub fn config_fingerprint(config: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(config).expect("JSON values always serialize");
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn column(m: &[Vec<f64>], j: usize) -> Vec<Vec<f64>> {
    vec![m.iter().map(|row| row[j]).collect()]
}

fn relative(baseline: f64, model: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        (baseline - model) / baseline
    }
}

pub fn build_report(
    config: serde_json::Value,
    link_ids: &[String],
    predictions: &[HorizonPredictions],
    epsilon: f64,
) -> Result<EvalReport> {
    let n = link_ids.len();
    let windows = predictions.first().map_or(0, |h| h.actual.len());
    if predictions.is_empty() || windows == 0 {
        return Err(Error::data("nothing to evaluate"));
    }
    let mut horizons = Vec::new();
    let mut deltas = Vec::new();
    let mut per_link: Vec<LinkReport> = link_ids
        .iter()
        .map(|id| LinkReport { link_id: id.clone(), mape: Vec::new(), rmse: Vec::new() })
        .collect();
    let mut entries = 0;
    for h in predictions {
        if h.actual.len() != windows || h.actual.iter().any(|r| r.len() != n) {
            return Err(Error::shape(format!("horizon {} has inconsistent prediction matrices", h.offset_bins)));
        }
        entries += h.actual.len() * n;
        let model = Scores::compute(&h.model, &h.actual, epsilon)?;
        let persistence = Scores::compute(&h.persistence, &h.actual, epsilon)?;
        let historical = Scores::compute(&h.historical, &h.actual, epsilon)?;
        for (j, link) in per_link.iter_mut().enumerate() {
            let (p, a) = (column(&h.model, j), column(&h.actual, j));
            link.mape.push(mape(&p, &a, epsilon)?);
            link.rmse.push(rmse(&p, &a)?);
        }
        deltas.push(Delta {
            offset_bins: h.offset_bins,
            mape_vs_persistence: relative(persistence.mape, model.mape),
            mape_vs_historical: relative(historical.mape, model.mape),
            rmse_vs_persistence: relative(persistence.rmse, model.rmse),
            rmse_vs_historical: relative(historical.rmse, model.rmse),
        });
        horizons.push(HorizonReport {
            offset_bins: h.offset_bins,
            mape: model.mape,
            mape_signed: model.mape_signed,
            rmse: model.rmse,
            baseline: BaselineScores { persistence, historical },
        });
    }
    let m = windows * predictions.len();
    let n_p = m * n;
    debug_assert_eq!(n_p, entries);
    Ok(EvalReport {
        config_fingerprint: config_fingerprint(&config),
        config,
        horizons,
        n,
        m,
        n_p,
        runtime_seconds: None,
        per_link,
        deltas,
    })
}

/// CSV shaped like a results table: one row per method, MAPE and RMSE
/// columns per horizon.
pub fn results_table(report: &EvalReport, bin_minutes: f64) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method".to_string()];
    for h in &report.horizons {
        let minutes = h.offset_bins as f64 * bin_minutes;
        header.push(format!("mape_{minutes}min"));
        header.push(format!("rmse_{minutes}min"));
    }
    header.push("config_fingerprint".into());
    w.write_record(&header)?;
    type Pick = fn(&HorizonReport) -> (f64, f64);
    let methods: [(&str, Pick); 3] = [
        ("srcn", |h| (h.mape, h.rmse)),
        ("persistence", |h| (h.baseline.persistence.mape, h.baseline.persistence.rmse)),
        ("historical_average", |h| (h.baseline.historical.mape, h.baseline.historical.rmse)),
    ];
    for (name, pick) in methods {
        let mut row = vec![name.to_string()];
        for h in &report.horizons {
            let (m, r) = pick(h);
            row.push(format!("{m:.6}"));
            row.push(format!("{r:.6}"));
        }
        row.push(report.config_fingerprint.clone());
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
