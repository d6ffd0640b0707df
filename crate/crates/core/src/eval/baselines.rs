use crate::data::BinnedSeries;
use crate::error::{Error, Result};
use crate::grid_codec::{GridFrame, NetworkMap};

/// Repeats the link speeds decoded from the last input frame at every horizon.
pub fn persistence_baseline(
    map: &NetworkMap,
    window: &[GridFrame],
    v_max: f64,
    horizons: usize,
) -> Result<Vec<Vec<f64>>> {
    let last = window.last().ok_or_else(|| Error::shape("empty input window"))?;
    let speeds = map.decode_frame(last, v_max)?;
    Ok(vec![speeds; horizons])
}

/// Per-link, per-bin-of-day mean of the training days' observed bins.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalAverage {
    /// `slots[link][bin_of_day]`, `None` where no training day observed it.
    slots: Vec<Vec<Option<f64>>>,
}

impl HistoricalAverage {
    /// Fits on the first `days` service days of `series`. Bins filled by the
    /// gap rule do not count as observations.
    pub fn fit(series: &BinnedSeries, days: usize) -> Result<Self> {
        if days < 2 || days > series.days {
            return Err(Error::data(format!(
                "historical average needs at least 2 training days, got {days} of {}",
                series.days
            )));
        }
        let bpd = series.window.bins_per_day;
        let slots = series
            .values
            .iter()
            .zip(&series.counts)
            .map(|(vals, counts)| {
                (0..bpd)
                    .map(|b| {
                        let (sum, n) = (0..days)
                            .map(|d| d * bpd + b)
                            .filter(|&g| counts[g] > 0)
                            .fold((0.0, 0usize), |(s, n), g| (s + vals[g], n + 1));
                        (n > 0).then(|| sum / n as f64)
                    })
                    .collect()
            })
            .collect();
        Ok(Self { slots })
    }

    pub fn bins_per_day(&self) -> usize {
        self.slots.first().map_or(0, Vec::len)
    }

    pub fn predict(&self, link: usize, bin_of_day: usize) -> Result<f64> {
        self.slots
            .get(link)
            .and_then(|s| s.get(bin_of_day).copied().flatten())
            .ok_or_else(|| Error::data(format!("no training observation for link {link} at bin-of-day {bin_of_day}")))
    }

    /// Speeds of every link at one bin of day.
    pub fn predict_all(&self, bin_of_day: usize) -> Result<Vec<f64>> {
        (0..self.slots.len()).map(|j| self.predict(j, bin_of_day)).collect()
    }
}
