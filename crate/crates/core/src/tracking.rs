//! Frame-wise tracking on top of event associations, scored by average
//! overlap rate (mean IoU) and average robustness (success rate).

use rayon::prelude::*;

use crate::config::EdaConfig;
use crate::error::{Error, Result};
use crate::event_io::{EventStream, SensorGeometry};
use crate::fitting::{fit_window, AssociationResult};
use crate::grouping::EventWindow;
use crate::hypotheses::voxelize;

/// Axis-aligned box; `(x, y)` is the top-left corner, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.x && u <= self.x + self.w && v >= self.y && v <= self.y + self.h
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    /// Intersection with the sensor rectangle `[0, width] x [0, height]`.
    pub fn clip(&self, g: SensorGeometry) -> Option<Self> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = (self.x + self.w).min(g.width as f64);
        let y1 = (self.y + self.h).min(g.height as f64);
        (x1 > x0 && y1 > y0).then(|| Self::new(x0, y0, x1 - x0, y1 - y0))
    }

    /// Smallest box holding every point; at least one pixel on each side.
    pub fn enclosing<I: IntoIterator<Item = (f64, f64)>>(points: I) -> Option<Self> {
        let mut it = points.into_iter();
        let (u, v) = it.next()?;
        let (mut x0, mut y0, mut x1, mut y1) = (u, v, u, v);
        for (u, v) in it {
            x0 = x0.min(u);
            y0 = y0.min(v);
            x1 = x1.max(u);
            y1 = y1.max(v);
        }
        Some(Self::new(x0, y0, (x1 - x0).max(1.0), (y1 - y0).max(1.0)))
    }
}

/// Intersection over union, `0` for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let iy = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Two annotated frames of the same object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingPair {
    pub t_curr: f64,
    pub t_next: f64,
    pub gt_curr: BoundingBox,
    pub gt_next: BoundingBox,
}

/// Adjacent-frame pairs from a ground-truth sequence.
pub fn pairs_from_ground_truth(boxes: &[(f64, BoundingBox)]) -> Vec<TrackingPair> {
    boxes
        .windows(2)
        .filter(|w| w[1].0 > w[0].0)
        .map(|w| TrackingPair {
            t_curr: w[0].0,
            t_next: w[1].0,
            gt_curr: w[0].1,
            gt_next: w[1].1,
        })
        .collect()
}

/// Moves the events inside `bbox` along the dominant trajectory to
/// `t_target` and returns their bounding rectangle.
///
/// The dominant trajectory is the instance labeling the plurality of the
/// in-box associated events (ties to the lower id).
pub fn propagate_box(
    window: &EventWindow,
    assoc: &AssociationResult,
    bbox: &BoundingBox,
    t_target: f64,
    min_events: usize,
) -> Result<BoundingBox> {
    let voxels = voxelize(window);
    let selected: Vec<usize> = (0..window.len())
        .filter(|&i| {
            !assoc.assignment[i].is_noise() && bbox.contains(voxels[i].u, voxels[i].v)
        })
        .collect();
    if selected.len() < min_events.max(1) {
        return Err(Error::TrackingFailure(format!(
            "{} associated events inside the box, need {}",
            selected.len(),
            min_events
        )));
    }
    let mut votes = vec![0usize; assoc.num_models];
    for &i in &selected {
        if let Some(id) = assoc.assignment[i].trajectory() {
            votes[id as usize] += 1;
        }
    }
    let owner = votes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(k, _)| k)
        .ok_or_else(|| Error::TrackingFailure("no instance owns the box".into()))?;
    let line = &assoc.instances[owner].hypothesis;
    let (du, dv) = line.image_velocity();

    let s_t = window.geometry.time_axis_len();
    let target = (t_target - window.t_start) / window.duration() * s_t;
    let projected = selected.iter().map(|&i| {
        let e = voxels[i];
        let dt = target - e.t;
        (e.u + du * dt, e.v + dv * dt)
    });
    BoundingBox::enclosing(projected)
        .and_then(|b| b.clip(window.geometry))
        .ok_or_else(|| Error::TrackingFailure("projected box leaves the sensor".into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub repetition: usize,
    pub pair: usize,
    pub overlap: f64,
    pub success: bool,
    pub predicted: Option<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub aor: f64,
    pub ar: f64,
    pub n_rep: usize,
    pub n_pair: usize,
    pub per_pair: Vec<PairScore>,
}

impl EvalReport {
    /// Aggregates scores; a pair succeeds when its overlap reaches `threshold`.
    pub fn from_scores(per_pair: Vec<PairScore>, n_rep: usize, n_pair: usize) -> Self {
        let n = per_pair.len().max(1) as f64;
        let aor = per_pair.iter().map(|s| s.overlap).sum::<f64>() / n;
        let ar = per_pair.iter().filter(|s| s.success).count() as f64 / n;
        Self {
            aor,
            ar,
            n_rep,
            n_pair,
            per_pair,
        }
    }

    /// Human-readable summary and per-pair table.
    pub fn render_text(&self) -> String {
        let mut s = format!(
            "AOR={:.3} AR={:.3} n_pair={} n_rep={}\n",
            self.aor, self.ar, self.n_pair, self.n_rep
        );
        s.push_str("rep pair overlap success predicted\n");
        for p in &self.per_pair {
            let pred = p
                .predicted
                .map(|b| format!("{:.1},{:.1},{:.1},{:.1}", b.x, b.y, b.w, b.h))
                .unwrap_or_else(|| "-".into());
            s.push_str(&format!(
                "{} {} {:.4} {} {}\n",
                p.repetition, p.pair, p.overlap, p.success as u8, pred
            ));
        }
        s
    }

    /// Line-oriented `key value` records followed by one `pair ...` line per score.
    pub fn render_machine(&self) -> String {
        let mut s = format!(
            "aor {}\nar {}\nn_pair {}\nn_rep {}\n",
            self.aor, self.ar, self.n_pair, self.n_rep
        );
        for p in &self.per_pair {
            s.push_str(&format!(
                "pair {} {} {} {}\n",
                p.repetition, p.pair, p.overlap, p.success as u8
            ));
        }
        s
    }
}

/// Fits the events of `[t0, t1]` as one window and moves `bbox` to `t1`.
pub fn predict_box(
    stream: &EventStream,
    t0: f64,
    t1: f64,
    bbox: &BoundingBox,
    cfg: &EdaConfig,
) -> Result<BoundingBox> {
    let sub = stream.slice_time(t0, t1);
    if sub.is_empty() {
        return Err(Error::TrackingFailure("no events between frames".into()));
    }
    let window = EventWindow {
        events: sub.events,
        t_start: t0,
        t_end: t1,
        geometry: stream.geometry,
        offset: stream.events.partition_point(|e| e.t < t0),
    };
    let assoc = fit_window(&window, cfg)?;
    propagate_box(&window, &assoc, bbox, t1, cfg.fit.min_inliers)
}

/// Scores one pair: fit the frame interval, move the current box to the
/// next frame, compare with the annotation. Failures score overlap 0.
pub fn score_pair(
    stream: &EventStream,
    pair: &TrackingPair,
    cfg: &EdaConfig,
) -> (f64, Option<BoundingBox>) {
    match predict_box(stream, pair.t_curr, pair.t_next, &pair.gt_curr, cfg) {
        Ok(b) => (iou(&b, &pair.gt_next), Some(b)),
        Err(_) => (0.0, None),
    }
}

/// Follows `init` through `frames`, feeding each prediction into the next
/// step. A failed step keeps the previous box and is reported as `None`.
pub fn track_sequence(
    stream: &EventStream,
    frames: &[f64],
    init: BoundingBox,
    cfg: &EdaConfig,
) -> Vec<(f64, BoundingBox, bool)> {
    let Some(&first) = frames.first() else {
        return Vec::new();
    };
    let mut out = vec![(first, init, true)];
    let mut current = init;
    for w in frames.windows(2) {
        let ok = match predict_box(stream, w[0], w[1], &current, cfg) {
            Ok(b) => {
                current = b;
                true
            }
            Err(_) => false,
        };
        out.push((w[1], current, ok));
    }
    out
}

/// Runs every pair `n_rep` times and aggregates AOR and AR.
pub fn evaluate(
    stream: &EventStream,
    pairs: &[TrackingPair],
    cfg: &EdaConfig,
    n_rep: usize,
) -> Result<EvalReport> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::NoPairs);
    }
    if n_rep == 0 {
        return Err(Error::Config("n_rep must be >= 1".into()));
    }
    for p in pairs {
        if p.t_next.is_nan() || p.t_curr.is_nan() || p.t_next <= p.t_curr {
            return Err(Error::Config(format!(
                "pair with t_next {} <= t_curr {}",
                p.t_next, p.t_curr
            )));
        }
        if p.gt_curr.clip(stream.geometry).is_none() || p.gt_next.clip(stream.geometry).is_none()
        {
            return Err(Error::Config(format!(
                "ground-truth box outside the {} sensor",
                stream.geometry
            )));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..n_rep)
        .flat_map(|r| (0..pairs.len()).map(move |j| (r, j)))
        .collect();
    let per_pair: Vec<PairScore> = jobs
        .par_iter()
        .map(|&(r, j)| {
            let (overlap, predicted) = score_pair(stream, &pairs[j], cfg);
            PairScore {
                repetition: r,
                pair: j,
                overlap,
                success: overlap >= cfg.track.success_iou,
                predicted,
            }
        })
        .collect();
    Ok(EvalReport::from_scores(per_pair, n_rep, pairs.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_cases() {
        let a = BoundingBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BoundingBox::new(5.0, 5.0, 1.0, 1.0)), 0.0);
        let b = BoundingBox::new(1.0, 0.0, 2.0, 2.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&a, &b), iou(&b, &a));
    }

    #[test]
    fn ar_only_sees_the_threshold() {
        let mk = |o: f64| PairScore {
            repetition: 0,
            pair: 0,
            overlap: o,
            success: o >= 0.5,
            predicted: None,
        };
        let a = EvalReport::from_scores(vec![mk(0.6), mk(0.2)], 1, 2);
        let b = EvalReport::from_scores(vec![mk(0.9), mk(0.2)], 1, 2);
        assert_eq!(a.ar, b.ar);
        assert!(a.aor < b.aor);
    }

    #[test]
    fn enclosing_and_clip() {
        let b = BoundingBox::enclosing([(1.0, 2.0), (4.0, 3.0), (2.0, 7.0)]).unwrap();
        assert_eq!(b, BoundingBox::new(1.0, 2.0, 3.0, 5.0));
        let g = SensorGeometry::new(10, 10).unwrap();
        assert_eq!(
            BoundingBox::new(-2.0, 8.0, 4.0, 4.0).clip(g),
            Some(BoundingBox::new(0.0, 8.0, 2.0, 2.0))
        );
        assert_eq!(BoundingBox::new(20.0, 0.0, 1.0, 1.0).clip(g), None);
        assert!(BoundingBox::enclosing(std::iter::empty()).is_none());
    }

    #[test]
    fn pairs_from_sequence() {
        let b = BoundingBox::new(0.0, 0.0, 1.0, 1.0);
        let p = pairs_from_ground_truth(&[(0.0, b), (0.1, b), (0.2, b)]);
        assert_eq!(p.len(), 2);
        assert_eq!((p[1].t_curr, p[1].t_next), (0.1, 0.2));
    }
}
