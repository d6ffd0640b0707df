mod common;

use std::collections::BTreeSet;

use common::rng;
use proptest::prelude::*;
use rand::Rng;
use srcn::grid_codec::{rasterize_link, Cell, GeoPoint, GridSpec, LinkGeometry, NetworkMap};

const ORIGIN: GeoPoint = GeoPoint { lat: 39.9, lon: 116.3 };
const CELL: f64 = 1e-3;

fn spec(h: usize, w: usize) -> GridSpec {
    GridSpec::new(ORIGIN, CELL, h, w).unwrap()
}

fn at(row: f64, col: f64) -> GeoPoint {
    GeoPoint::new(ORIGIN.lat + row * CELL, ORIGIN.lon + col * CELL)
}

fn random_polyline(r: &mut impl Rng, h: usize, w: usize) -> Vec<GeoPoint> {
    let n = r.gen_range(2..5);
    (0..n)
        .map(|_| at(r.gen_range(0.0..h as f64 - 1e-9), r.gen_range(0.0..w as f64 - 1e-9)))
        .collect()
}

/// Length of the part of segment `a → b` (grid units) inside cell `c`, by
/// Liang–Barsky clipping against the cell box.
fn clipped_length(a: (f64, f64), b: (f64, f64), c: Cell) -> f64 {
    let (d0, d1) = (b.0 - a.0, b.1 - a.1);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [
        (-d0, a.0 - c.row as f64),
        (d0, c.row as f64 + 1.0 - a.0),
        (-d1, a.1 - c.col as f64),
        (d1, c.col as f64 + 1.0 - a.1),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return 0.0;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    ((t1 - t0).max(0.0)) * (d0 * d0 + d1 * d1).sqrt()
}

#[test]
fn rasterization_agrees_with_point_sampling_on_random_polylines() {
    const SAMPLES: usize = 1000;
    let mut r = rng(2024);
    let (h, w) = (30, 40);
    let s = spec(h, w);
    for poly_idx in 0..100 {
        let poly = random_polyline(&mut r, h, w);
        let link = LinkGeometry::new(format!("p{poly_idx}"), poly.clone()).unwrap();
        let got: BTreeSet<Cell> = rasterize_link(&link, &s).unwrap().into_iter().collect();

        let grid: Vec<(f64, f64)> = poly.iter().map(|&p| s.to_grid(p)).collect();
        let step = |a: (f64, f64), b: (f64, f64)| ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt() / SAMPLES as f64;
        let mut sampled = BTreeSet::new();
        for seg in grid.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            for k in 0..=SAMPLES {
                let t = k as f64 / SAMPLES as f64;
                let (v, u) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
                sampled.insert(Cell::new(v.floor() as usize, u.floor() as usize));
            }
        }
        assert!(sampled.is_subset(&got), "polyline {poly_idx}: sampled cells missing from rasterization");
        for extra in got.difference(&sampled) {
            let mut touched = false;
            for seg in grid.windows(2) {
                let (len, st) = (clipped_length(seg[0], seg[1], *extra), step(seg[0], seg[1]));
                touched |= len > 0.0;
                assert!(len <= st * 1.5, "polyline {poly_idx}: cell {extra:?} is crossed over {len}, sampling step {st}");
            }
            assert!(touched, "polyline {poly_idx}: cell {extra:?} is not on the polyline");
        }
    }
}

#[test]
fn axis_aligned_segments_follow_one_row_or_column() {
    let s = spec(5, 5);
    let horizontal = LinkGeometry::new("h", vec![at(2.5, 0.5), at(2.5, 3.5)]).unwrap();
    let cells = rasterize_link(&horizontal, &s).unwrap();
    assert_eq!(cells, (0..4).map(|c| Cell::new(2, c)).collect::<Vec<_>>());

    let vertical = LinkGeometry::new("v", vec![at(4.2, 1.5), at(0.7, 1.5)]).unwrap();
    let cells = rasterize_link(&vertical, &s).unwrap();
    assert_eq!(cells, (0..5).rev().map(|r| Cell::new(r, 1)).collect::<Vec<_>>());
}

fn random_map(seed: u64, links: usize) -> NetworkMap {
    let mut r = rng(seed);
    let geoms = (0..links)
        .map(|j| LinkGeometry::new(format!("l{j}"), random_polyline(&mut r, 12, 15)).unwrap())
        .collect();
    NetworkMap::build(geoms, spec(12, 15)).unwrap()
}

/// `decode(encode(s)) = A·s` with `A[j][k] = mean over cells c of link j of
/// [k covers c] / |links covering c|`, built from per-link rasterizations.
fn averaging_matrix(map: &NetworkMap) -> Vec<Vec<f64>> {
    let footprints: Vec<BTreeSet<Cell>> = map
        .links()
        .iter()
        .map(|l| rasterize_link(l, map.spec()).unwrap().into_iter().collect())
        .collect();
    let n = footprints.len();
    let mut a = vec![vec![0.0; n]; n];
    for j in 0..n {
        for cell in &footprints[j] {
            let covering: Vec<usize> = (0..n).filter(|&k| footprints[k].contains(cell)).collect();
            for &k in &covering {
                a[j][k] += 1.0 / covering.len() as f64 / footprints[j].len() as f64;
            }
        }
    }
    a
}

#[test]
fn decode_of_encode_is_the_averaging_matrix() {
    for seed in 0..5 {
        let map = random_map(seed, 8);
        let a = averaging_matrix(&map);
        let mut r = rng(100 + seed);
        let speeds: Vec<f64> = (0..8).map(|_| r.gen_range(0.0..80.0)).collect();
        let (frame, clamped) = map.encode_frame(&speeds, 100.0, 0).unwrap();
        assert_eq!(clamped, 0);
        let decoded = map.decode_frame(&frame, 100.0).unwrap();
        for j in 0..8 {
            let expected: f64 = (0..8).map(|k| a[j][k] * speeds[k]).sum();
            assert!((decoded[j] - expected).abs() < 1e-9, "seed {seed} link {j}");
        }
        for row in &a {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn saturation_is_counted_and_clipped() {
    let map = random_map(7, 3);
    let (frame, clamped) = map.encode_frame(&[150.0, 50.0, 100.0], 100.0, 3).unwrap();
    assert_eq!(clamped, 1);
    assert!(frame.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(map.encode_frame(&[f64::NAN, 1.0, 1.0], 100.0, 0).is_err());
    assert!(map.encode_frame(&[1.0, 1.0], 100.0, 0).is_err());
}

proptest! {
    #[test]
    fn disjoint_links_round_trip_exactly(speeds in prop::collection::vec(0.0f64..100.0, 4)) {
        // Four parallel horizontal links two rows apart never share a cell.
        let geoms = (0..4)
            .map(|j| LinkGeometry::new(format!("r{j}"), vec![at(2.0 * j as f64 + 0.5, 0.2), at(2.0 * j as f64 + 0.5, 6.7)]).unwrap())
            .collect();
        let map = NetworkMap::build(geoms, spec(8, 8)).unwrap();
        prop_assert!(map.is_disjoint());
        let (frame, _) = map.encode_frame(&speeds, 100.0, 0).unwrap();
        let back = map.decode_frame(&frame, 100.0).unwrap();
        for (a, b) in back.iter().zip(&speeds) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rasterized_cells_are_connected(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let link = LinkGeometry::new("x", random_polyline(&mut r, 20, 20)).unwrap();
        let cells = rasterize_link(&link, &spec(20, 20)).unwrap();
        let set: BTreeSet<Cell> = cells.iter().copied().collect();
        // Supercover footprints are 8-connected.
        let mut seen = BTreeSet::new();
        let mut stack = vec![cells[0]];
        while let Some(c) = stack.pop() {
            if !seen.insert(c) {
                continue;
            }
            for n in set.iter().filter(|n| n.chebyshev(c) == 1) {
                stack.push(*n);
            }
        }
        prop_assert_eq!(seen.len(), set.len());
    }
}
