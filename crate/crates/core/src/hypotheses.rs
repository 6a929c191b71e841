//! Deterministic 3D line hypotheses from time-sliced event windows.

use std::collections::HashMap;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grouping::EventWindow;

/// A point in the spatio-temporal volume. `t` is normalized so the time
/// axis spans `[0, S_t]` with `S_t = max(width, height)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voxel {
    pub u: f64,
    pub v: f64,
    pub t: f64,
}

impl Voxel {
    pub fn new(u: f64, v: f64, t: f64) -> Self {
        Self { u, v, t }
    }

    #[inline]
    pub fn vec(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, self.t)
    }
}

/// Maps a window's events into voxel space.
pub fn voxelize(window: &EventWindow) -> Vec<Voxel> {
    let s_t = window.geometry.time_axis_len();
    let span = window.duration();
    window
        .events
        .iter()
        .map(|e| {
            let t = if span > 0.0 {
                (e.t - window.t_start) / span * s_t
            } else {
                0.0
            };
            Voxel::new(e.u as f64, e.v as f64, t)
        })
        .collect()
}

/// Line through a start and an end voxel, `start.t < end.t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineHypothesis {
    pub start: Voxel,
    pub end: Voxel,
}

impl LineHypothesis {
    pub fn new(start: Voxel, end: Voxel) -> Result<Self> {
        let finite = [start.u, start.v, start.t, end.u, end.v, end.t]
            .iter()
            .all(|x| x.is_finite());
        if !finite || start.t >= end.t {
            return Err(Error::Degenerate(format!(
                "line needs finite voxels with start.t < end.t ({start:?} -> {end:?})"
            )));
        }
        Ok(Self { start, end })
    }

    #[inline]
    pub fn direction(&self) -> Vector3<f64> {
        self.end.vec() - self.start.vec()
    }

    /// Image-plane displacement per unit of normalized time.
    pub fn image_velocity(&self) -> (f64, f64) {
        let d = self.direction();
        (d.x / d.z, d.y / d.z)
    }

    /// Point of the line at normalized time `t`.
    pub fn at_time(&self, t: f64) -> (f64, f64) {
        let (du, dv) = self.image_velocity();
        let dt = t - self.start.t;
        (self.start.u + du * dt, self.start.v + dv * dt)
    }
}

/// Assigns every event to one of `num_slices` equal-duration bins.
/// A timestamp on a bin boundary goes to the earlier bin.
pub fn slice_window(window: &EventWindow, num_slices: usize) -> Result<Vec<Vec<usize>>> {
    if num_slices < 2 {
        return Err(Error::Config(format!(
            "need at least 2 time slices, got {num_slices}"
        )));
    }
    let mut slices = vec![Vec::new(); num_slices];
    let span = window.duration();
    for (i, e) in window.events.iter().enumerate() {
        let x = if span > 0.0 {
            (e.t - window.t_start) / span * num_slices as f64
        } else {
            0.0
        };
        let bin = (x.ceil() as i64 - 1).clamp(0, num_slices as i64 - 1) as usize;
        slices[bin].push(i);
    }
    Ok(slices)
}

/// `count` evenly strided positions out of `0..len`.
fn stride(len: usize, count: usize) -> impl Iterator<Item = usize> {
    (0..count).map(move |i| i * len / count)
}

/// Lines joining first-slice voxels to last-slice voxels.
///
/// Empty leading or trailing slices are skipped. When the cross product
/// exceeds `max_pairs`, both endpoint slices are strided evenly.
pub fn generate(
    window: &EventWindow,
    num_slices: usize,
    max_pairs: usize,
) -> Result<Vec<LineHypothesis>> {
    if max_pairs == 0 {
        return Err(Error::Config("max_pairs must be positive".into()));
    }
    let slices = slice_window(window, num_slices)?;
    let first = slices.iter().position(|s| !s.is_empty());
    let last = slices.iter().rposition(|s| !s.is_empty());
    let (first, last) = match (first, last) {
        (Some(f), Some(l)) if f < l => (&slices[f], &slices[l]),
        _ => {
            return Err(Error::NoHypotheses(
                "events occupy fewer than two time slices".into(),
            ))
        }
    };
    let voxels = voxelize(window);

    let (mut a, mut b) = (first.len(), last.len());
    if a * b > max_pairs {
        let ratio = (max_pairs as f64 / (a * b) as f64).sqrt();
        a = ((a as f64 * ratio).floor() as usize).clamp(1, first.len().min(max_pairs));
        b = (max_pairs / a).clamp(1, last.len());
    }

    let mut out = Vec::with_capacity(a * b);
    for i in stride(first.len(), a) {
        let s = voxels[first[i]];
        for j in stride(last.len(), b) {
            let e = voxels[last[j]];
            if s == e {
                continue;
            }
            if let Ok(h) = LineHypothesis::new(s, e) {
                out.push(h);
            }
        }
    }
    Ok(out)
}

/// `1 - cos` of the angle between the two line directions, in `[0, 2]`.
pub fn cosine_distance(a: &LineHypothesis, b: &LineHypothesis) -> f64 {
    let (da, db) = (a.direction(), b.direction());
    (1.0 - da.dot(&db) / (da.norm() * db.norm())).clamp(0.0, 2.0)
}

/// Hypotheses grouped into mutually non-parallel representatives.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    pub all: Vec<LineHypothesis>,
    /// Indices into `all`.
    pub representatives: Vec<usize>,
    /// Member indices (into `all`) of each representative's cluster.
    pub rep_members: Vec<Vec<usize>>,
}

impl HypothesisSet {
    pub fn representative(&self, k: usize) -> &LineHypothesis {
        &self.all[self.representatives[k]]
    }

    pub fn representative_lines(&self) -> Vec<LineHypothesis> {
        self.representatives.iter().map(|&i| self.all[i]).collect()
    }

    pub fn len(&self) -> usize {
        self.representatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representatives.is_empty()
    }

    /// Indices of every hypothesis in `all` parallel to `line` within `tol`.
    pub fn parallel_family(&self, line: &LineHypothesis, tol: f64) -> Vec<usize> {
        let d = line.direction().normalize();
        self.all
            .iter()
            .enumerate()
            .filter(|(_, h)| 1.0 - h.direction().normalize().dot(&d) <= tol)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Spatial hash of unit directions; two unit vectors within cosine distance
/// `tol` are within Euclidean distance `sqrt(2 tol)`, so only neighboring
/// cells need an exact test.
struct DirectionGrid {
    cell: f64,
    buckets: HashMap<(i32, i32, i32), Vec<usize>>,
}

impl DirectionGrid {
    fn new(units: &[Vector3<f64>], tol: f64) -> Self {
        let cell = (2.0 * tol).sqrt().max(1e-6);
        let mut buckets: HashMap<(i32, i32, i32), Vec<usize>> = HashMap::new();
        for (i, d) in units.iter().enumerate() {
            buckets.entry(Self::key(d, cell)).or_default().push(i);
        }
        Self { cell, buckets }
    }

    fn key(d: &Vector3<f64>, cell: f64) -> (i32, i32, i32) {
        (
            (d.x / cell).floor() as i32,
            (d.y / cell).floor() as i32,
            (d.z / cell).floor() as i32,
        )
    }

    fn for_each_candidate<F: FnMut(usize)>(&self, d: &Vector3<f64>, mut f: F) {
        let (x, y, z) = Self::key(d, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(b) = self.buckets.get(&(x + dx, y + dy, z + dz)) {
                        b.iter().for_each(|&j| f(j));
                    }
                }
            }
        }
    }
}

#[inline]
fn unit_parallel(a: &Vector3<f64>, b: &Vector3<f64>, tol: f64) -> bool {
    1.0 - a.dot(b) <= tol
}

/// Greedy parallel clustering.
///
/// Every hypothesis gets its count of parallel neighbors (cosine distance
/// `<= parallel_tol`). Hypotheses are then visited by descending count, ties
/// by input index; each one not yet claimed becomes a representative and
/// claims every unclaimed hypothesis parallel to it. Representatives are
/// therefore mutually non-parallel, and each is the best-connected member of
/// its own cluster.
pub fn select_representatives(
    hyps: Vec<LineHypothesis>,
    parallel_tol: f64,
) -> Result<HypothesisSet> {
    if hyps.is_empty() {
        return Err(Error::NoHypotheses("empty hypothesis list".into()));
    }
    if parallel_tol.is_nan() || parallel_tol < 0.0 {
        return Err(Error::Config(format!(
            "parallel_tol must be non-negative, got {parallel_tol}"
        )));
    }
    let units: Vec<Vector3<f64>> = hyps.iter().map(|h| h.direction().normalize()).collect();
    let grid = DirectionGrid::new(&units, parallel_tol);

    let counts: Vec<usize> = units
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let mut c = 0usize;
            grid.for_each_candidate(d, |j| {
                if j != i && unit_parallel(d, &units[j], parallel_tol) {
                    c += 1;
                }
            });
            c
        })
        .collect();

    let mut order: Vec<usize> = (0..hyps.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));

    let mut claimed = vec![false; hyps.len()];
    let mut representatives = Vec::new();
    let mut rep_members = Vec::new();
    for &i in &order {
        if claimed[i] {
            continue;
        }
        let mut members = Vec::new();
        grid.for_each_candidate(&units[i], |j| {
            if !claimed[j] && unit_parallel(&units[i], &units[j], parallel_tol) {
                members.push(j);
            }
        });
        if !members.contains(&i) {
            members.push(i);
        }
        members.sort_unstable();
        for &j in &members {
            claimed[j] = true;
        }
        representatives.push(i);
        rep_members.push(members);
    }

    Ok(HypothesisSet {
        all: hyps,
        representatives,
        rep_members,
    })
}
