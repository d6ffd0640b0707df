//! Error metrics, naive baselines, reports, plots and the end-to-end
//! experiment runner.

mod baselines;
pub mod experiment;
mod metrics;
pub mod plot;
mod report;

pub use baselines::{persistence_baseline, HistoricalAverage};
pub use experiment::{run_experiment, ExperimentConfig, RunOptions};
pub use metrics::{mape, mape_signed, rmse, DEFAULT_MAPE_EPSILON};
pub use report::{
    build_report, config_fingerprint, results_table, BaselineScores, Delta, EvalReport, HorizonPredictions,
    HorizonReport, LinkReport, Scores,
};
