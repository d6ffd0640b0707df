use std::ops::Range;

use super::BinnedSeries;
use crate::error::{Error, Result};
use crate::grid_codec::{GridFrame, NetworkMap};

/// One training or test sample: `seq_len` consecutive input bins followed by
/// targets at the configured offsets, all inside one service day.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleWindow {
    /// Service-day index within the series.
    pub day: usize,
    /// Global bin of the first input frame.
    pub start: usize,
    /// True for the first window of its day.
    pub starts_day: bool,
}

impl SampleWindow {
    pub fn input_bins(&self, seq_len: usize) -> Range<usize> {
        self.start..self.start + seq_len
    }

    /// Global bin predicted at `offset` steps after the last input frame.
    pub fn target_bin(&self, seq_len: usize, offset: usize) -> usize {
        self.start + seq_len - 1 + offset
    }

    /// Every bin the window touches, inputs and targets.
    pub fn span(&self, seq_len: usize, max_offset: usize) -> Range<usize> {
        self.start..self.start + seq_len + max_offset
    }
}

/// Encoded frames for every bin of a series plus the windows over them.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub frames: Vec<GridFrame>,
    /// Normalized link speeds per global bin (speed / v_max, not clamped).
    pub targets: Vec<Vec<f64>>,
    pub windows: Vec<SampleWindow>,
    pub seq_len: usize,
    pub offsets: Vec<usize>,
    pub bins_per_day: usize,
    pub v_max: f64,
    /// Link-bins whose speed exceeded `v_max` and saturated in the frames.
    pub clamped: usize,
}

impl WindowSet {
    pub fn max_offset(&self) -> usize {
        self.offsets.last().copied().unwrap_or(0)
    }

    pub fn inputs(&self, w: &SampleWindow) -> &[GridFrame] {
        &self.frames[w.input_bins(self.seq_len)]
    }

    /// Normalized targets, one vector per offset.
    pub fn window_targets(&self, w: &SampleWindow) -> Vec<&[f64]> {
        self.offsets
            .iter()
            .map(|&o| self.targets[w.target_bin(self.seq_len, o)].as_slice())
            .collect()
    }

    /// Same frames and targets restricted to a subset of windows.
    pub fn with_windows(&self, windows: Vec<SampleWindow>) -> Self {
        Self {
            windows,
            ..self.clone()
        }
    }
}

/// Number of windows one day of `bins_per_day` bins yields.
pub fn windows_per_day(bins_per_day: usize, seq_len: usize, max_offset: usize) -> Result<usize> {
    let need = seq_len + max_offset;
    if seq_len == 0 || need > bins_per_day {
        return Err(Error::config(format!(
            "time lag {seq_len} plus horizon {max_offset} does not fit in a {bins_per_day}-bin day"
        )));
    }
    Ok(bins_per_day - need + 1)
}

/// Slides stride-1 windows over each service day and encodes every bin.
pub fn make_windows(
    series: &BinnedSeries,
    map: &NetworkMap,
    seq_len: usize,
    offsets: &[usize],
    v_max: f64,
) -> Result<WindowSet> {
    if offsets.is_empty() || offsets[0] == 0 || offsets.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::config(format!("offsets {offsets:?} must be strictly increasing and >= 1")));
    }
    if map.link_ids() != series.link_ids {
        return Err(Error::data("series links do not match the network map"));
    }
    let bpd = series.window.bins_per_day;
    let max_offset = *offsets.last().expect("nonempty");
    let per_day = windows_per_day(bpd, seq_len, max_offset)?;
    let mut frames = Vec::with_capacity(series.bins());
    let mut targets = Vec::with_capacity(series.bins());
    let mut clamped = 0;
    for b in 0..series.bins() {
        let speeds = series.speeds_at(b);
        let (frame, c) = map.encode_frame(&speeds, v_max, b)?;
        clamped += c;
        frames.push(frame);
        targets.push(speeds.iter().map(|s| s / v_max).collect());
    }
    let windows = (0..series.days)
        .flat_map(|day| {
            (0..per_day).map(move |k| SampleWindow {
                day,
                start: day * bpd + k,
                starts_day: k == 0,
            })
        })
        .collect();
    Ok(WindowSet {
        frames,
        targets,
        windows,
        seq_len,
        offsets: offsets.to_vec(),
        bins_per_day: bpd,
        v_max,
        clamped,
    })
}

/// Splits time-ordered windows into a prefix and a suffix.
///
/// The cut falls after `round(n·train_fraction)` windows; suffix windows
/// whose span overlaps any prefix window's span are dropped so no bin is
/// shared across the boundary.
pub fn chronological_split(
    windows: &[SampleWindow],
    seq_len: usize,
    max_offset: usize,
    train_fraction: f64,
) -> Result<(Vec<SampleWindow>, Vec<SampleWindow>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!("split fraction {train_fraction} outside (0, 1)")));
    }
    if windows.windows(2).any(|p| p[1].start <= p[0].start) {
        return Err(Error::data("windows are not in time order"));
    }
    let cut = (windows.len() as f64 * train_fraction).round() as usize;
    if cut == 0 {
        return Err(Error::data("split leaves no windows before the cut"));
    }
    let train = windows[..cut.min(windows.len())].to_vec();
    let boundary = train.last().map(|w| w.span(seq_len, max_offset).end).unwrap_or(0);
    let test: Vec<_> = windows[cut.min(windows.len())..]
        .iter()
        .filter(|w| w.start >= boundary)
        .copied()
        .collect();
    if test.is_empty() {
        return Err(Error::data(format!(
            "split fraction {train_fraction} leaves no windows after the cut"
        )));
    }
    Ok((train, test))
}

/// Linear-interpolated percentile (`q` in [0, 100]) of finite values.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() || !(0.0..=100.0).contains(&q) {
        return Err(Error::data("percentile of an empty set"));
    }
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Default normalization constant: the 99.5th percentile of all link-bin
/// speeds in the first `days` service days.
pub fn default_v_max(series: &BinnedSeries, days: usize) -> Result<f64> {
    let end = days.min(series.days) * series.window.bins_per_day;
    let all: Vec<f64> = series.values.iter().flat_map(|v| v[..end].iter().copied()).collect();
    let v = percentile(&all, 99.5)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::data("training speeds are all zero"))
    }
}
