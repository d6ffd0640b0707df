//! Synthetic congestion-propagation traffic.
//!
//! Every link follows a daily sinusoid around its own free-flow speed.
//! Incidents pull a link down toward a congested speed and spread along the
//! link adjacency graph: hop `h` is hit `h·delay` bins later with severity
//! `decay^h`, holds for the incident duration, then recovers linearly.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{DayWindow, SpeedRecord, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::grid_codec::{GeoPoint, GridSpec, LinkGeometry, NetworkMap};

/// Effects weaker than this are not propagated further.
const MIN_SEVERITY: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub days: usize,
    /// Calendar day (days since the epoch) of the first generated day.
    pub first_day: i64,
    /// Expected incidents per link per day.
    pub incident_rate: f64,
    /// Mean free-flow speed, km/h.
    pub free_flow: f64,
    /// Per-link free-flow speeds are drawn uniformly within ± this.
    pub free_flow_spread: f64,
    /// Relative amplitude of the daily sinusoid.
    pub amplitude: f64,
    /// Relative day-to-day jitter of the amplitude.
    pub amplitude_jitter: f64,
    /// Whole sinusoid periods per service day.
    pub cycles_per_day: u32,
    /// Per-vehicle Gaussian speed noise, km/h.
    pub noise_sd: f64,
    pub min_vehicles: u32,
    pub max_vehicles: u32,
    pub congested_speed: f64,
    pub delay_bins: usize,
    pub decay: f64,
    pub recovery_bins: usize,
    pub min_duration: usize,
    pub max_duration: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            days: 10,
            first_day: 16587,
            incident_rate: 0.1,
            free_flow: 60.0,
            free_flow_spread: 8.0,
            amplitude: 0.25,
            amplitude_jitter: 0.1,
            cycles_per_day: 2,
            noise_sd: 12.0,
            min_vehicles: 1,
            max_vehicles: 2,
            congested_speed: 10.0,
            delay_bins: 2,
            decay: 0.6,
            recovery_bins: 15,
            min_duration: 10,
            max_duration: 40,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.days > 0
            && self.incident_rate >= 0.0
            && self.free_flow > 0.0
            && self.free_flow_spread >= 0.0
            && self.free_flow_spread < self.free_flow
            && (0.0..1.0).contains(&self.amplitude)
            && self.amplitude_jitter >= 0.0
            && self.noise_sd >= 0.0
            && self.min_vehicles >= 1
            && self.max_vehicles >= self.min_vehicles
            && self.congested_speed >= 0.0
            && self.decay > 0.0
            && self.decay < 1.0
            && self.min_duration >= 1
            && self.max_duration >= self.min_duration;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid synthetic configuration {self:?}")))
        }
    }
}

/// An incident placed by hand rather than drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriptedIncident {
    pub link: usize,
    /// Global bin (day·bins_per_day + bin).
    pub start_bin: usize,
    pub duration_bins: usize,
}

/// Ground-truth log entry: one per affected link, including propagated hops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentLog {
    pub link_id: String,
    pub start_bin: usize,
    pub duration_bins: usize,
    pub severity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub records: Vec<SpeedRecord>,
    pub incidents: Vec<IncidentLog>,
    /// Noise-free speed per link per global bin.
    pub truth: Vec<Vec<f64>>,
    /// `truth` without incidents.
    pub baseline: Vec<Vec<f64>>,
}

/// Breadth-first hop counts from `source`.
fn hops_from(adjacency: &[Vec<usize>], source: usize, max_hops: usize) -> Vec<(usize, usize)> {
    let mut dist = vec![usize::MAX; adjacency.len()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    let mut out = vec![(source, 0)];
    while let Some(k) = queue.pop_front() {
        if dist[k] == max_hops {
            continue;
        }
        for &n in &adjacency[k] {
            if dist[n] == usize::MAX {
                dist[n] = dist[k] + 1;
                out.push((n, dist[n]));
                queue.push_back(n);
            }
        }
    }
    out
}

/// Generates records for `link_ids` (indexed like `adjacency`).
///
/// Incidents are drawn per link and day from a Poisson law with mean
/// `incident_rate`; `scripted` incidents are added on top.
pub fn generate_synthetic(
    link_ids: &[String],
    adjacency: &[Vec<usize>],
    config: &SynthConfig,
    window: DayWindow,
    seed: u64,
    scripted: &[ScriptedIncident],
) -> Result<SynthOutput> {
    config.validate()?;
    window.validate()?;
    if adjacency.is_empty() || adjacency.iter().all(Vec::is_empty) {
        return Err(Error::config("link adjacency is empty"));
    }
    if adjacency.len() != link_ids.len() || adjacency.iter().flatten().any(|&k| k >= link_ids.len()) {
        return Err(Error::config("adjacency does not match the link list"));
    }
    let n = link_ids.len();
    let bpd = window.bins_per_day;
    let total = config.days * bpd;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let spread = config.free_flow_spread;
    let free_flow: Vec<f64> = (0..n)
        .map(|_| config.free_flow + rng.gen_range(-spread..=spread))
        .collect();
    let phase: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..TAU)).collect();
    let jitter = config.amplitude_jitter;
    let day_amp: Vec<f64> = (0..config.days)
        .map(|_| config.amplitude * (1.0 + rng.gen_range(-jitter..=jitter)))
        .collect();

    let mut baseline = vec![vec![0.0; total]; n];
    for (j, row) in baseline.iter_mut().enumerate() {
        for (g, v) in row.iter_mut().enumerate() {
            let (day, b) = (g / bpd, g % bpd);
            let angle = TAU * f64::from(config.cycles_per_day) * b as f64 / bpd as f64 + phase[j];
            *v = free_flow[j] * (1.0 + day_amp[day] * angle.sin());
        }
    }

    let mut primaries: Vec<ScriptedIncident> = Vec::new();
    if config.incident_rate > 0.0 {
        let poisson = Poisson::new(config.incident_rate).map_err(|e| Error::config(e.to_string()))?;
        for day in 0..config.days {
            for link in 0..n {
                let count = poisson.sample(&mut rng) as usize;
                for _ in 0..count {
                    primaries.push(ScriptedIncident {
                        link,
                        start_bin: day * bpd + rng.gen_range(0..bpd),
                        duration_bins: rng.gen_range(config.min_duration..=config.max_duration),
                    });
                }
            }
        }
    }
    for s in scripted {
        if s.link >= n || s.start_bin >= total || s.duration_bins == 0 {
            return Err(Error::config(format!("scripted incident {s:?} is out of range")));
        }
        primaries.push(*s);
    }

    let max_hops = (MIN_SEVERITY.ln() / config.decay.ln()).floor() as usize;
    // Fraction of the gap to the congested speed, per link and bin.
    let mut drop = vec![vec![0.0f64; total]; n];
    let mut incidents = Vec::new();
    for p in &primaries {
        let day_end = (p.start_bin / bpd + 1) * bpd;
        for (k, h) in hops_from(adjacency, p.link, max_hops) {
            let severity = config.decay.powi(h as i32);
            let start = p.start_bin + h * config.delay_bins;
            if start >= day_end {
                continue;
            }
            incidents.push(IncidentLog {
                link_id: link_ids[k].clone(),
                start_bin: start,
                duration_bins: p.duration_bins,
                severity,
            });
            let hold_end = start + p.duration_bins;
            let end = (hold_end + config.recovery_bins).min(day_end);
            for (t, d) in drop[k].iter_mut().enumerate().take(end).skip(start) {
                let f = if t < hold_end {
                    1.0
                } else {
                    1.0 - (t - hold_end + 1) as f64 / (config.recovery_bins + 1) as f64
                };
                *d = d.max(severity * f);
            }
        }
    }
    incidents.sort_by(|a, b| a.start_bin.cmp(&b.start_bin).then_with(|| a.link_id.cmp(&b.link_id)));

    let truth: Vec<Vec<f64>> = baseline
        .iter()
        .zip(&drop)
        .map(|(base, d)| {
            base.iter()
                .zip(d)
                .map(|(&v, &f)| v - f * (v - config.congested_speed).max(0.0))
                .collect()
        })
        .collect();

    let noise = Normal::new(0.0, config.noise_sd).map_err(|e| Error::config(e.to_string()))?;
    let mut records = Vec::new();
    for g in 0..total {
        let (day, b) = (g / bpd, g % bpd);
        let bin_start = (config.first_day + day as i64) * SECONDS_PER_DAY + window.day_start + b as i64 * window.bin_width;
        for (j, id) in link_ids.iter().enumerate() {
            let vehicles = rng.gen_range(config.min_vehicles..=config.max_vehicles);
            for _ in 0..vehicles {
                let ts = bin_start + rng.gen_range(0..window.bin_width);
                let speed = (truth[j][g] + noise.sample(&mut rng)).max(0.0);
                records.push(SpeedRecord::new(id.clone(), ts, speed));
            }
        }
    }
    Ok(SynthOutput {
        records,
        incidents,
        truth,
        baseline,
    })
}

/// Layout of the synthetic road network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeConfig {
    pub links: usize,
    pub grid_height: usize,
    pub grid_width: usize,
    /// Degrees per cell.
    pub cell_size: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            links: 20,
            grid_height: 24,
            grid_width: 24,
            cell_size: 1e-4,
            origin_lat: 39.9,
            origin_lon: 116.3,
        }
    }
}

/// Road network plus which links meet at a lattice node.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub map: NetworkMap,
    pub adjacency: Vec<Vec<usize>>,
}

/// Distance in cells by which each link stops short of its end nodes, so
/// link footprints never share a cell.
const NODE_CLEARANCE: f64 = 1.5;

/// A jittered square street lattice: horizontal edges first, then vertical,
/// truncated to `links` edges. Each edge bends through a jittered midpoint.
/// Links are adjacent when their edges share a lattice node.
pub fn lattice_network(config: &LatticeConfig, seed: u64) -> Result<Lattice> {
    let LatticeConfig { links, grid_height: h, grid_width: w, .. } = *config;
    if links == 0 {
        return Err(Error::config("lattice needs at least one link"));
    }
    let side = (2..).find(|s| 2 * s * (s - 1) >= links).expect("unbounded search");
    let margin = 2.0;
    let step_v = (h as f64 - 2.0 * margin) / (side - 1) as f64;
    let step_u = (w as f64 - 2.0 * margin) / (side - 1) as f64;
    if step_v < 3.0 || step_u < 3.0 {
        return Err(Error::config(format!("{h}x{w} grid is too small for {links} lattice links")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = 0.25 * step_v.min(step_u);
    let mut node = vec![(0.0, 0.0); side * side];
    for r in 0..side {
        for c in 0..side {
            node[r * side + c] = (
                margin + r as f64 * step_v + rng.gen_range(-j..=j),
                margin + c as f64 * step_u + rng.gen_range(-j..=j),
            );
        }
    }
    let mut edges = Vec::new();
    for r in 0..side {
        for c in 0..side - 1 {
            edges.push((r * side + c, r * side + c + 1));
        }
    }
    for c in 0..side {
        for r in 0..side - 1 {
            edges.push((r * side + c, (r + 1) * side + c));
        }
    }
    let spec = GridSpec::new(
        GeoPoint::new(config.origin_lat, config.origin_lon),
        config.cell_size,
        h,
        w,
    )?;
    let to_geo = |(v, u): (f64, f64)| {
        GeoPoint::new(config.origin_lat + v * config.cell_size, config.origin_lon + u * config.cell_size)
    };
    edges.truncate(links);
    let toward = |from: (f64, f64), to: (f64, f64)| {
        let (dv, du) = (to.0 - from.0, to.1 - from.1);
        let len = dv.hypot(du);
        (from.0 + dv * NODE_CLEARANCE / len, from.1 + du * NODE_CLEARANCE / len)
    };
    let geoms = edges
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            let (pa, pb) = (node[a], node[b]);
            let mid = (
                0.5 * (pa.0 + pb.0) + rng.gen_range(-0.5..=0.5),
                0.5 * (pa.1 + pb.1) + rng.gen_range(-0.5..=0.5),
            );
            let ends = (toward(pa, mid), toward(pb, mid));
            LinkGeometry::new(format!("L{i:03}"), vec![to_geo(ends.0), to_geo(mid), to_geo(ends.1)])
        })
        .collect::<Result<Vec<_>>>()?;
    let adjacency = edges
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            edges
                .iter()
                .enumerate()
                .filter(|&(k, &(c, d))| k != i && (a == c || a == d || b == c || b == d))
                .map(|(k, _)| k)
                .collect()
        })
        .collect();
    Ok(Lattice {
        map: NetworkMap::build(geoms, spec)?,
        adjacency,
    })
}
