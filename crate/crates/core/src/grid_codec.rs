//! Road network ↔ grid image conversion.
//!
//! Each link polyline is rasterized onto a square lat/lon grid. A frame
//! stores, for every cell, the mean normalized speed of the links covering
//! it, and zero where no link passes. Decoding averages a link's cells back
//! into a speed.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }
}

/// A road link: identifier plus an ordered polyline of at least two vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGeometry {
    id: String,
    polyline: Vec<GeoPoint>,
}

impl LinkGeometry {
    pub fn new(id: impl Into<String>, polyline: Vec<GeoPoint>) -> Result<Self> {
        let id = id.into();
        if polyline.len() < 2 {
            return Err(Error::config(format!("link {id}: polyline needs at least 2 vertices")));
        }
        if let Some(i) = polyline.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::config(format!("link {id}: vertices {i} and {} coincide", i + 1)));
        }
        if polyline.iter().any(|p| !p.lat.is_finite() || !p.lon.is_finite()) {
            return Err(Error::config(format!("link {id}: non-finite vertex")));
        }
        Ok(Self { id, polyline })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn polyline(&self) -> &[GeoPoint] {
        &self.polyline
    }
}

/// Square-cell grid anchored at the south-west corner of cell (0, 0).
///
/// Rows follow latitude and columns follow longitude. A point exactly on a
/// cell boundary belongs to the higher-index cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: GeoPoint,
    pub cell_size: f64,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn chebyshev(self, other: Cell) -> usize {
        self.row.abs_diff(other.row).max(self.col.abs_diff(other.col))
    }
}

impl GridSpec {
    pub fn new(origin: GeoPoint, cell_size: f64, height: usize, width: usize) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::config(format!("cell size must be positive, got {cell_size}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::config(format!("grid must be at least 1x1, got {height}x{width}")));
        }
        Ok(Self { origin, cell_size, height, width })
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// Position in fractional cell units: (row axis, column axis).
    pub fn to_grid(&self, p: GeoPoint) -> (f64, f64) {
        (
            (p.lat - self.origin.lat) / self.cell_size,
            (p.lon - self.origin.lon) / self.cell_size,
        )
    }

    pub fn contains_grid(&self, v: f64, u: f64) -> bool {
        v >= 0.0 && u >= 0.0 && v < self.height as f64 && u < self.width as f64
    }

    pub fn flat(&self, c: Cell) -> usize {
        c.row * self.width + c.col
    }
}

fn cell_at(v: f64, u: f64) -> Cell {
    Cell::new(v.floor() as usize, u.floor() as usize)
}

/// Every grid cell touched by the link's polyline, in traversal order.
///
/// Each segment is split at the parameters where it crosses a grid line;
/// the cell of every crossing point and of every sub-interval midpoint is
/// collected, which yields exactly the cells containing some point of the
/// segment (supercover).
pub fn rasterize_link(geom: &LinkGeometry, spec: &GridSpec) -> Result<Vec<Cell>> {
    let pts: Vec<(f64, f64)> = geom.polyline.iter().map(|&p| spec.to_grid(p)).collect();
    for (i, &(v, u)) in pts.iter().enumerate() {
        if !spec.contains_grid(v, u) {
            let p = geom.polyline[i];
            return Err(Error::OutOfBounds {
                link: geom.id.clone(),
                vertex: i,
                lat: p.lat,
                lon: p.lon,
            });
        }
    }
    let mut seen = HashSet::new();
    let mut cells = Vec::new();
    let mut push = |c: Cell| {
        if seen.insert(c) {
            cells.push(c);
        }
    };
    for seg in pts.windows(2) {
        for c in segment_cells(seg[0], seg[1]) {
            push(c);
        }
    }
    Ok(cells)
}

fn segment_cells(p0: (f64, f64), p1: (f64, f64)) -> Vec<Cell> {
    let (v0, u0) = p0;
    let (dv, du) = (p1.0 - v0, p1.1 - u0);
    // (t, v, u) with the crossed coordinate snapped to its exact grid line.
    let mut events = vec![(0.0, v0, u0), (1.0, p1.0, p1.1)];
    for line in grid_lines(u0, p1.1) {
        let t = (line - u0) / du;
        events.push((t, v0 + t * dv, line));
    }
    for line in grid_lines(v0, p1.0) {
        let t = (line - v0) / dv;
        events.push((t, line, u0 + t * du));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut out = Vec::with_capacity(events.len() * 2);
    for (i, &(t, v, u)) in events.iter().enumerate() {
        if i > 0 {
            let (tp, vp, up) = events[i - 1];
            if t > tp {
                out.push(cell_at(0.5 * (v + vp), 0.5 * (u + up)));
            }
        }
        out.push(cell_at(v, u));
    }
    out
}

/// Integer grid lines strictly between `a` and `b`.
fn grid_lines(a: f64, b: f64) -> impl Iterator<Item = f64> {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let first = lo.floor() as i64 + 1;
    let last = hi.ceil() as i64 - 1;
    (first..=last).map(|x| x as f64).filter(move |&x| x > lo && x < hi)
}

/// Rasterized road network: the grid, its links, and the link↔cell incidence.
#[derive(Debug, Clone)]
pub struct NetworkMap {
    spec: GridSpec,
    links: Vec<LinkGeometry>,
    link_cells: Vec<Vec<Cell>>,
    // Flat cell index → covering link indices, ascending.
    cell_index: Vec<Vec<usize>>,
    by_id: HashMap<String, usize>,
}

impl NetworkMap {
    pub fn build(links: Vec<LinkGeometry>, spec: GridSpec) -> Result<Self> {
        if links.is_empty() {
            return Err(Error::config("network has no links"));
        }
        let mut by_id = HashMap::with_capacity(links.len());
        for (i, l) in links.iter().enumerate() {
            if by_id.insert(l.id.clone(), i).is_some() {
                return Err(Error::config(format!("duplicate link id {:?}", l.id)));
            }
        }
        let link_cells = links
            .iter()
            .map(|l| rasterize_link(l, &spec))
            .collect::<Result<Vec<_>>>()?;
        let mut cell_index = vec![Vec::new(); spec.cells()];
        for (j, cells) in link_cells.iter().enumerate() {
            debug_assert!(!cells.is_empty());
            for &c in cells {
                cell_index[spec.flat(c)].push(j);
            }
        }
        Ok(Self { spec, links, link_cells, cell_index, by_id })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn links(&self) -> &[LinkGeometry] {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn link_index(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn link_ids(&self) -> Vec<String> {
        self.links.iter().map(|l| l.id.clone()).collect()
    }

    pub fn link_cells(&self, link: usize) -> &[Cell] {
        &self.link_cells[link]
    }

    pub fn links_at(&self, cell: Cell) -> &[usize] {
        &self.cell_index[self.spec.flat(cell)]
    }

    pub fn covered_cells(&self) -> usize {
        self.cell_index.iter().filter(|l| !l.is_empty()).count()
    }

    /// True when no grid cell is covered by more than one link.
    pub fn is_disjoint(&self) -> bool {
        self.cell_index.iter().all(|l| l.len() <= 1)
    }

    /// Minimum Chebyshev distance between two links' cell sets.
    pub fn cell_distance(&self, a: usize, b: usize) -> usize {
        let mut best = usize::MAX;
        for &ca in &self.link_cells[a] {
            for &cb in &self.link_cells[b] {
                best = best.min(ca.chebyshev(cb));
            }
        }
        best
    }

    /// Links whose footprints overlap or touch (Chebyshev distance ≤ 1).
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let n = self.links.len();
        let mut adj = vec![Vec::new(); n];
        for a in 0..n {
            for b in a + 1..n {
                if self.cell_distance(a, b) <= 1 {
                    adj[a].push(b);
                    adj[b].push(a);
                }
            }
        }
        adj
    }

    /// Rasterizes one time bin of link speeds (km/h).
    ///
    /// Speeds above `v_max` saturate at 1; the second return value counts them.
    pub fn encode_frame(&self, speeds: &[f64], v_max: f64, timestamp: usize) -> Result<(GridFrame, usize)> {
        if speeds.len() != self.links.len() {
            return Err(Error::Validation(format!(
                "{} speeds supplied for {} links",
                speeds.len(),
                self.links.len()
            )));
        }
        if !(v_max > 0.0 && v_max.is_finite()) {
            return Err(Error::Validation(format!("v_max must be positive, got {v_max}")));
        }
        let mut clamped = 0;
        let mut scaled = Vec::with_capacity(speeds.len());
        for (j, &s) in speeds.iter().enumerate() {
            if !s.is_finite() || s < 0.0 {
                return Err(Error::Validation(format!(
                    "link {}: speed {s} is not a finite non-negative value",
                    self.links[j].id
                )));
            }
            let x = s / v_max;
            if x > 1.0 {
                clamped += 1;
            }
            scaled.push(x.min(1.0));
        }
        let values = self
            .cell_index
            .iter()
            .map(|links| match links.len() {
                0 => 0.0,
                k => links.iter().map(|&j| scaled[j]).sum::<f64>() / k as f64,
            })
            .collect();
        let frame = GridFrame {
            height: self.spec.height,
            width: self.spec.width,
            values,
            timestamp,
        };
        Ok((frame, clamped))
    }

    /// Reads per-link speeds (km/h) back out of a frame: `v_max` times the
    /// mean of each link's cells.
    pub fn decode_frame(&self, frame: &GridFrame, v_max: f64) -> Result<Vec<f64>> {
        if frame.height != self.spec.height || frame.width != self.spec.width {
            return Err(Error::shape(format!(
                "frame is {}x{}, grid is {}x{}",
                frame.height, frame.width, self.spec.height, self.spec.width
            )));
        }
        Ok(self
            .link_cells
            .iter()
            .map(|cells| {
                let sum: f64 = cells.iter().map(|&c| frame.values[self.spec.flat(c)]).sum();
                v_max * sum / cells.len() as f64
            })
            .collect())
    }
}

/// One time bin of the network as an image of normalized speeds.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFrame {
    pub height: usize,
    pub width: usize,
    /// Row-major, `height × width`, row 0 at the grid origin latitude.
    pub values: Vec<f64>,
    pub timestamp: usize,
}

impl GridFrame {
    pub fn get(&self, c: Cell) -> f64 {
        self.values[c.row * self.width + c.col]
    }

    /// Binary PGM (P5, maxval 255), north up: the highest-latitude row comes first.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        for row in (0..self.height).rev() {
            for v in &self.values[row * self.width..(row + 1) * self.width] {
                out.push((255.0 * v.clamp(0.0, 1.0)).round() as u8);
            }
        }
        out
    }
}

/// On-disk network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub cell_size_deg: f64,
    /// `[lat, lon]` of the south-west corner of cell (0, 0).
    pub origin: [f64; 2],
    pub height: usize,
    pub width: usize,
    pub links: Vec<NetworkFileLink>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFileLink {
    pub id: String,
    pub polyline: Vec<[f64; 2]>,
}

impl NetworkFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn to_map(&self) -> Result<NetworkMap> {
        let spec = GridSpec::new(
            GeoPoint::new(self.origin[0], self.origin[1]),
            self.cell_size_deg,
            self.height,
            self.width,
        )?;
        let links = self
            .links
            .iter()
            .map(|l| LinkGeometry::new(l.id.clone(), l.polyline.iter().map(|p| GeoPoint::new(p[0], p[1])).collect()))
            .collect::<Result<Vec<_>>>()?;
        NetworkMap::build(links, spec)
    }

    pub fn from_map(map: &NetworkMap) -> Self {
        let spec = map.spec();
        Self {
            cell_size_deg: spec.cell_size,
            origin: [spec.origin.lat, spec.origin.lon],
            height: spec.height,
            width: spec.width,
            links: map
                .links()
                .iter()
                .map(|l| NetworkFileLink {
                    id: l.id.clone(),
                    polyline: l.polyline.iter().map(|p| [p.lat, p.lon]).collect(),
                })
                .collect(),
        }
    }
}
