use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::SpeedRecord;
use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Which part of each calendar day (UTC) is binned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayWindow {
    /// Bin width in seconds.
    pub bin_width: i64,
    /// Seconds after midnight at which the first bin starts.
    pub day_start: i64,
    pub bins_per_day: usize,
}

impl Default for DayWindow {
    /// 2-minute bins from 06:00, 481 per day.
    fn default() -> Self {
        Self {
            bin_width: 120,
            day_start: 6 * 3600,
            bins_per_day: 481,
        }
    }
}

impl DayWindow {
    pub fn validate(&self) -> Result<()> {
        if self.bin_width <= 0 || self.bins_per_day == 0 {
            return Err(Error::config("bin width and bins per day must be positive"));
        }
        if self.day_start < 0 || self.day_start + self.bin_width * self.bins_per_day as i64 > SECONDS_PER_DAY {
            return Err(Error::config("day window must fit inside one calendar day"));
        }
        Ok(())
    }

    /// `(day, bin)` for a timestamp, or `None` outside the service window.
    pub fn locate(&self, timestamp: i64) -> (i64, Option<usize>) {
        let day = timestamp.div_euclid(SECONDS_PER_DAY);
        let offset = timestamp.rem_euclid(SECONDS_PER_DAY) - self.day_start;
        let bin = (offset >= 0)
            .then(|| (offset / self.bin_width) as usize)
            .filter(|&b| b < self.bins_per_day);
        (day, bin)
    }
}

/// Per-link, per-bin mean speeds over consecutive service days.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedSeries {
    pub window: DayWindow,
    /// Calendar day (days since the epoch) of the first service day.
    pub first_day: i64,
    pub days: usize,
    pub link_ids: Vec<String>,
    /// `values[link][global_bin]`, global bin = `day·bins_per_day + bin`.
    pub values: Vec<Vec<f64>>,
    /// Observations behind each value; 0 means the gap rule filled it.
    pub counts: Vec<Vec<u32>>,
    pub rejected_unknown_link: usize,
    pub rejected_invalid_speed: usize,
    pub outside_window: usize,
}

impl BinnedSeries {
    pub fn bins(&self) -> usize {
        self.days * self.window.bins_per_day
    }

    pub fn n_links(&self) -> usize {
        self.link_ids.len()
    }

    /// Link speeds at one global bin.
    pub fn speeds_at(&self, bin: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[bin]).collect()
    }

    /// Epoch seconds at which a global bin starts.
    pub fn bin_start(&self, bin: usize) -> i64 {
        let bpd = self.window.bins_per_day;
        (self.first_day + (bin / bpd) as i64) * SECONDS_PER_DAY
            + self.window.day_start
            + (bin % bpd) as i64 * self.window.bin_width
    }
}

/// Averages records into bins: each bin holds the arithmetic mean of the
/// speeds observed in it.
///
/// Empty bins take the link's previous value, or the mean of the link's
/// observed bins when nothing precedes them. Records for unknown links and
/// records with negative or non-finite speed are dropped and counted; so are
/// records outside the daily service window.
pub fn bin_records(records: &[SpeedRecord], links: &[String], window: DayWindow) -> Result<BinnedSeries> {
    window.validate()?;
    let index: HashMap<&str, usize> = links.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    if index.len() != links.len() {
        return Err(Error::config("duplicate link id"));
    }
    let mut unknown = 0;
    let mut invalid = 0;
    let mut outside = 0;
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        let Some(&j) = index.get(r.link_id.as_str()) else {
            unknown += 1;
            continue;
        };
        if !(r.speed.is_finite() && r.speed >= 0.0) {
            invalid += 1;
            continue;
        }
        match window.locate(r.timestamp) {
            (day, Some(bin)) => kept.push((j, day, bin, r.speed)),
            (_, None) => outside += 1,
        }
    }
    let (first_day, last_day) = kept
        .iter()
        .fold(None, |acc: Option<(i64, i64)>, &(_, d, _, _)| match acc {
            None => Some((d, d)),
            Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
        })
        .ok_or_else(|| Error::data("no usable records"))?;
    let days = (last_day - first_day + 1) as usize;
    let bpd = window.bins_per_day;
    let total = days * bpd;
    let mut sums = vec![vec![0.0; total]; links.len()];
    let mut counts = vec![vec![0u32; total]; links.len()];
    for &(j, day, bin, speed) in &kept {
        let g = (day - first_day) as usize * bpd + bin;
        sums[j][g] += speed;
        counts[j][g] += 1;
    }
    let mut values = sums;
    for (j, (vals, cnts)) in values.iter_mut().zip(&counts).enumerate() {
        let mut observed = 0usize;
        let mut total_mean = 0.0;
        for (v, &c) in vals.iter_mut().zip(cnts) {
            if c > 0 {
                *v /= c as f64;
                total_mean += *v;
                observed += 1;
            }
        }
        if observed == 0 {
            return Err(Error::data(format!("link {} has no observations", links[j])));
        }
        let link_mean = total_mean / observed as f64;
        let mut last = None;
        for (v, &c) in vals.iter_mut().zip(cnts) {
            if c > 0 {
                last = Some(*v);
            } else {
                *v = last.unwrap_or(link_mean);
            }
        }
    }
    Ok(BinnedSeries {
        window,
        first_day,
        days,
        link_ids: links.to_vec(),
        values,
        counts,
        rejected_unknown_link: unknown,
        rejected_invalid_speed: invalid,
        outside_window: outside,
    })
}
