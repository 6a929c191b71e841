//! Synthetic event scenes with known trajectories, labels and boxes.
//!
//! Every motion translates a shape at constant velocity and fires events at
//! Poisson times on the shape's outline, with Gaussian pixel jitter. Clutter
//! events are uniform over space and time. Output is deterministic per seed.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_io::{Event, EventStream, Label, Polarity, SensorGeometry};
use crate::grouping::EventWindow;
use crate::hypotheses::{voxelize, LineHypothesis, Voxel};
use crate::tracking::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionKind {
    /// The center of `start_region`.
    TranslatingPoint,
    /// A segment through the center of `start_region` along its longer side.
    TranslatingBar,
    /// The outline of `start_region`.
    TranslatingBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<Region> for BoundingBox {
    fn from(r: Region) -> Self {
        BoundingBox::new(r.x, r.y, r.w, r.h)
    }
}

impl From<BoundingBox> for Region {
    fn from(b: BoundingBox) -> Self {
        Region {
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSpec {
    pub kind: MotionKind,
    /// Pixels per second.
    pub velocity: (f64, f64),
    pub start_region: Region,
    /// Events per second.
    pub event_rate: f64,
    /// Pixel jitter standard deviation.
    #[serde(default)]
    pub noise_sigma: f64,
}

impl MotionSpec {
    /// Spatio-temporal direction in a window of `duration` seconds whose
    /// time axis is normalized to `s_t`.
    pub fn direction(&self, duration: f64, s_t: f64) -> Vector3<f64> {
        Vector3::new(self.velocity.0 * duration, self.velocity.1 * duration, s_t)
    }

    pub fn region_at(&self, t: f64) -> BoundingBox {
        BoundingBox::from(self.start_region).translate(self.velocity.0 * t, self.velocity.1 * t)
    }

    /// Point on the shape for a uniform parameter `s` in `[0, 1)`, at `t = 0`.
    fn shape_point(&self, s: f64) -> (f64, f64) {
        let r = self.start_region;
        match self.kind {
            MotionKind::TranslatingPoint => (r.x + r.w / 2.0, r.y + r.h / 2.0),
            MotionKind::TranslatingBar => {
                if r.w >= r.h {
                    (r.x + s * r.w, r.y + r.h / 2.0)
                } else {
                    (r.x + r.w / 2.0, r.y + s * r.h)
                }
            }
            MotionKind::TranslatingBox => {
                let per = 2.0 * (r.w + r.h);
                let d = s * per;
                if d < r.w {
                    (r.x + d, r.y)
                } else if d < r.w + r.h {
                    (r.x + r.w, r.y + d - r.w)
                } else if d < 2.0 * r.w + r.h {
                    (r.x + r.w - (d - r.w - r.h), r.y + r.h)
                } else {
                    (r.x, r.y + r.h - (d - 2.0 * r.w - r.h))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScene {
    pub width: u32,
    pub height: u32,
    /// Seconds.
    pub duration: f64,
    #[serde(default)]
    pub motions: Vec<MotionSpec>,
    /// Uniform clutter events per second.
    #[serde(default)]
    pub clutter_rate: f64,
    #[serde(default)]
    pub seed: u64,
    /// Annotation frames per second for the box output.
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
}

fn default_frame_rate() -> f64 {
    50.0
}

impl SyntheticScene {
    pub fn geometry(&self) -> Result<SensorGeometry> {
        SensorGeometry::new(self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        let bad = |m: String| Err(Error::Config(m));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.clutter_rate >= 0.0 && self.clutter_rate.is_finite()) {
            return bad(format!("clutter_rate must be >= 0, got {}", self.clutter_rate));
        }
        if self.frame_rate.is_nan() || self.frame_rate <= 0.0 {
            return bad(format!("frame_rate must be positive, got {}", self.frame_rate));
        }
        for (i, m) in self.motions.iter().enumerate() {
            if !(m.event_rate > 0.0 && m.event_rate.is_finite()) {
                return bad(format!("motion {i}: event_rate must be positive"));
            }
            if !(m.noise_sigma >= 0.0 && m.noise_sigma.is_finite()) {
                return bad(format!("motion {i}: noise_sigma must be >= 0"));
            }
            let r = m.start_region;
            if !(r.w >= 0.0 && r.h >= 0.0) {
                return bad(format!("motion {i}: negative region size"));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: SyntheticScene =
            toml::from_str(text).map_err(|e| Error::Config(format!("scene file: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scene is always serializable")
    }
}

/// Two short bars crossing a 240x180 sensor for one second, with light clutter.
pub fn default_bench_scene() -> SyntheticScene {
    let bar = |x: f64, y: f64, w: f64, h: f64, velocity: (f64, f64)| MotionSpec {
        kind: MotionKind::TranslatingBar,
        velocity,
        start_region: Region { x, y, w, h },
        event_rate: 10_000.0,
        noise_sigma: 0.5,
    };
    SyntheticScene {
        width: 240,
        height: 180,
        duration: 1.0,
        motions: vec![
            bar(40.0, 60.0, 12.0, 2.0, (60.0, 20.0)),
            bar(150.0, 110.0, 2.0, 12.0, (-40.0, -30.0)),
        ],
        clutter_rate: 300.0,
        seed: 7,
        frame_rate: default_frame_rate(),
    }
}

/// Generated events with their ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneOutput {
    pub stream: EventStream,
    /// Generating motion per event, `Noise` for clutter.
    pub labels: Vec<Label>,
    /// Per motion, image velocity in pixels per second.
    pub velocities: Vec<(f64, f64)>,
    /// Per motion, `(frame_timestamp, box)` at every annotation frame.
    pub boxes: Vec<Vec<(f64, BoundingBox)>>,
}

impl SceneOutput {
    /// Per-motion spatio-temporal directions for a window of `duration`.
    pub fn directions(&self, duration: f64) -> Vec<Vector3<f64>> {
        let s_t = self.stream.geometry.time_axis_len();
        self.velocities
            .iter()
            .map(|v| Vector3::new(v.0 * duration, v.1 * duration, s_t))
            .collect()
    }

    /// The whole scene as a single window spanning `[0, duration]`.
    pub fn as_window(&self, duration: f64) -> Result<EventWindow> {
        if self.stream.is_empty() {
            return Err(Error::Degenerate("scene produced no events".into()));
        }
        Ok(EventWindow {
            events: self.stream.events.clone(),
            t_start: 0.0,
            t_end: duration,
            geometry: self.stream.geometry,
            offset: 0,
        })
    }
}

fn poisson_times(rng: &mut ChaCha8Rng, rate: f64, duration: f64) -> Vec<f64> {
    let exp = Exp::new(rate).expect("rate validated positive");
    let mut out = Vec::new();
    let mut t = exp.sample(rng);
    while t < duration {
        out.push(t);
        t += exp.sample(rng);
    }
    out
}

fn polarity(rng: &mut ChaCha8Rng) -> Polarity {
    if rng.random::<bool>() {
        Polarity::On
    } else {
        Polarity::Off
    }
}

pub fn generate_scene(scene: &SyntheticScene) -> Result<SceneOutput> {
    scene.validate()?;
    let geometry = scene.geometry()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let mut tagged: Vec<(Event, Label)> = Vec::new();

    for (k, m) in scene.motions.iter().enumerate() {
        let jitter = Normal::new(0.0, m.noise_sigma).expect("sigma validated");
        for t in poisson_times(&mut rng, m.event_rate, scene.duration) {
            let (x, y) = m.shape_point(rng.random::<f64>());
            let u = x + m.velocity.0 * t + jitter.sample(&mut rng);
            let v = y + m.velocity.1 * t + jitter.sample(&mut rng);
            let p = polarity(&mut rng);
            let (u, v) = (u.round(), v.round());
            if u < 0.0 || v < 0.0 || u >= geometry.width as f64 || v >= geometry.height as f64 {
                continue;
            }
            tagged.push((Event::new(t, u as u32, v as u32, p), Label::Trajectory(k as u32)));
        }
    }
    if scene.clutter_rate > 0.0 {
        for t in poisson_times(&mut rng, scene.clutter_rate, scene.duration) {
            let u = rng.random_range(0..geometry.width);
            let v = rng.random_range(0..geometry.height);
            let p = polarity(&mut rng);
            tagged.push((Event::new(t, u, v, p), Label::Noise));
        }
    }
    tagged.sort_by(|a, b| a.0.t.total_cmp(&b.0.t));
    let (events, labels): (Vec<Event>, Vec<Label>) = tagged.into_iter().unzip();

    let n_frames = (scene.duration * scene.frame_rate).floor() as usize;
    let boxes = scene
        .motions
        .iter()
        .map(|m| {
            (0..=n_frames)
                .map(|f| {
                    let t = f as f64 / scene.frame_rate;
                    (t, m.region_at(t))
                })
                .filter(|(t, _)| *t <= scene.duration)
                .collect()
        })
        .collect();

    Ok(SceneOutput {
        stream: EventStream::new(geometry, events)?,
        labels,
        velocities: scene.motions.iter().map(|m| m.velocity).collect(),
        boxes,
    })
}

/// Total-least-squares line: centroid plus unit principal direction with
/// non-negative time component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TlsLine {
    pub centroid: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl TlsLine {
    pub fn distance(&self, p: &Voxel) -> f64 {
        let d = p.vec() - self.centroid;
        (d - self.direction * d.dot(&self.direction)).norm()
    }

    /// Two points on the line, one unit of direction apart.
    pub fn as_hypothesis(&self) -> Result<LineHypothesis> {
        let c = self.centroid;
        let e = c + self.direction * 10.0;
        LineHypothesis::new(Voxel::new(c.x, c.y, c.z), Voxel::new(e.x, e.y, e.z))
    }
}

pub fn fit_tls(points: &[Voxel]) -> Result<TlsLine> {
    if points.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need two points for a line, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let centroid = points.iter().map(|p| p.vec()).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.vec() - centroid;
        cov += d * d.transpose();
    }
    if cov.norm() == 0.0 {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let (imax, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("3 eigenvalues");
    let mut dir: Vector3<f64> = eig.eigenvectors.column(imax).into_owned().normalize();
    if dir.z < 0.0 || (dir.z == 0.0 && (dir.x < 0.0 || (dir.x == 0.0 && dir.y < 0.0))) {
        dir = -dir;
    }
    Ok(TlsLine {
        centroid,
        direction: dir,
    })
}

/// Reference line per generating label (clutter excluded).
pub fn brute_force_lines(
    window: &EventWindow,
    labels: &[Label],
) -> Result<BTreeMap<u32, TlsLine>> {
    if labels.len() != window.len() {
        return Err(Error::Config(format!(
            "{} labels for {} events",
            labels.len(),
            window.len()
        )));
    }
    let voxels = voxelize(window);
    let mut groups: BTreeMap<u32, Vec<Voxel>> = BTreeMap::new();
    for (v, l) in voxels.iter().zip(labels) {
        if let Some(id) = l.trajectory() {
            groups.entry(id).or_default().push(*v);
        }
    }
    groups
        .into_iter()
        .map(|(id, pts)| fit_tls(&pts).map(|l| (id, l)))
        .collect()
}

/// Angle in degrees between two line directions, sign-agnostic.
pub fn angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let c = (a.dot(b) / (a.norm() * b.norm())).abs().min(1.0);
    c.acos().to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::residual;

    fn base_scene() -> SyntheticScene {
        SyntheticScene {
            width: 128,
            height: 128,
            duration: 0.05,
            motions: vec![MotionSpec {
                kind: MotionKind::TranslatingBox,
                velocity: (200.0, -100.0),
                start_region: Region {
                    x: 30.0,
                    y: 60.0,
                    w: 20.0,
                    h: 15.0,
                },
                event_rate: 20_000.0,
                noise_sigma: 0.5,
            }],
            clutter_rate: 2_000.0,
            seed: 11,
            frame_rate: 100.0,
        }
    }

    #[test]
    fn clutter_only_scene() {
        let mut s = base_scene();
        s.motions.clear();
        let out = generate_scene(&s).unwrap();
        assert!(!out.labels.is_empty());
        assert!(out.labels.iter().all(|l| l.is_noise()));
        assert_eq!(out.labels.len(), out.stream.len());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_scene(&base_scene()).unwrap();
        let b = generate_scene(&base_scene()).unwrap();
        assert_eq!(a, b);
        let mut s = base_scene();
        s.seed = 12;
        assert_ne!(generate_scene(&s).unwrap().stream, a.stream);
    }

    #[test]
    fn boxes_follow_velocity() {
        let out = generate_scene(&base_scene()).unwrap();
        let boxes = &out.boxes[0];
        assert_eq!(boxes.len(), 6);
        let (t, b) = boxes[3];
        assert!((b.x - (30.0 + 200.0 * t)).abs() < 1e-9);
        assert!((b.y - (60.0 - 100.0 * t)).abs() < 1e-9);
    }

    #[test]
    fn static_point_is_exactly_collinear() {
        let mut s = base_scene();
        s.motions[0].kind = MotionKind::TranslatingPoint;
        s.motions[0].velocity = (0.0, 0.0);
        s.motions[0].noise_sigma = 0.0;
        s.clutter_rate = 0.0;
        let out = generate_scene(&s).unwrap();
        let w = out.as_window(s.duration).unwrap();
        let lines = brute_force_lines(&w, &out.labels).unwrap();
        let line = lines[&0].as_hypothesis().unwrap();
        for v in voxelize(&w) {
            assert!(residual(&v, &line) < 1e-9);
        }
    }

    #[test]
    fn moving_point_is_collinear_up_to_rounding() {
        let mut s = base_scene();
        s.motions[0].kind = MotionKind::TranslatingPoint;
        s.motions[0].noise_sigma = 0.0;
        s.clutter_rate = 0.0;
        let out = generate_scene(&s).unwrap();
        let w = out.as_window(s.duration).unwrap();
        let lines = brute_force_lines(&w, &out.labels).unwrap();
        let dir = out.directions(s.duration)[0];
        assert!(angle_deg(&lines[&0].direction, &dir) < 0.5);
        for v in voxelize(&w) {
            assert!(lines[&0].distance(&v) < 0.5 * 2f64.sqrt() + 0.1);
        }
    }

    #[test]
    fn tls_small_cases() {
        let pts = [Voxel::new(0.0, 0.0, 0.0), Voxel::new(1.0, 2.0, 3.0)];
        let l = fit_tls(&pts).unwrap();
        assert!(angle_deg(&l.direction, &Vector3::new(1.0, 2.0, 3.0)) < 1e-6);
        assert!(l.distance(&pts[0]) < 1e-12);
        assert!(fit_tls(&pts[..1]).is_err());
        assert!(fit_tls(&[pts[0], pts[0]]).is_err());
    }

    #[test]
    fn jittered_line_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let jitter = Normal::new(0.0, 0.5).unwrap();
        let dir = Vector3::new(30.0, -20.0, 128.0);
        let pts: Vec<Voxel> = (0..1000)
            .map(|_| {
                let s: f64 = rng.random();
                let p = Vector3::new(40.0, 70.0, 0.0) + dir * s;
                Voxel::new(
                    p.x + jitter.sample(&mut rng),
                    p.y + jitter.sample(&mut rng),
                    p.z,
                )
            })
            .collect();
        let l = fit_tls(&pts).unwrap();
        assert!(angle_deg(&l.direction, &dir) < 0.5);
    }

    #[test]
    fn scene_toml_roundtrip() {
        let s = base_scene();
        assert_eq!(SyntheticScene::from_toml_str(&s.to_toml_string()).unwrap(), s);
        assert!(SyntheticScene::from_toml_str("width = 10\nheight = 10\nduration = 0\n").is_err());
    }
}
