#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_2, TAU};

use evassoc::synth::{MotionKind, MotionSpec, Region, SyntheticScene};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SENSOR: u32 = 128;
pub const WINDOW_S: f64 = 0.02;
pub const EVENTS_PER_MOTION: f64 = 40.0;

/// `k` point trajectories crossing a 128x128 sensor within one 20 ms window.
///
/// Trajectories are tangent to a circle around the sensor center, so they
/// pass each other without meeting. Jitter is `tau / 2` in normalized units
/// and clutter makes up 20% of the events.
pub fn crossing_points(k: usize, seed: u64, tau: f64) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + k as u64);
    let size = SENSOR as f64;
    let c = size / 2.0;
    let offset = rng.random::<f64>() * TAU;
    let motions = (0..k)
        .map(|j| {
            let phi = offset + j as f64 * TAU / k as f64;
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let heading = phi + sign * FRAC_PI_2 + rng.random_range(-0.3..0.3);
            let speed = rng.random_range(1500.0..2500.0);
            let (vx, vy) = (speed * heading.cos(), speed * heading.sin());
            let radius = if k == 1 { rng.random_range(0.0..20.0) } else { 35.0 };
            let x0 = c + radius * phi.cos() - vx * WINDOW_S / 2.0;
            let y0 = c + radius * phi.sin() - vy * WINDOW_S / 2.0;
            MotionSpec {
                kind: MotionKind::TranslatingPoint,
                velocity: (vx, vy),
                start_region: Region { x: x0, y: y0, w: 0.0, h: 0.0 },
                event_rate: EVENTS_PER_MOTION / WINDOW_S,
                noise_sigma: tau / 2.0 * size,
            }
        })
        .collect();
    let signal = EVENTS_PER_MOTION * k as f64;
    SyntheticScene {
        width: SENSOR,
        height: SENSOR,
        duration: WINDOW_S,
        motions,
        clutter_rate: 0.25 * signal / WINDOW_S,
        seed,
        frame_rate: 50.0,
    }
}

/// A 24x18 box outline translating across a 128x96 sensor, annotated every
/// 10 ms for 0.2 s, giving 20 frame pairs.
pub fn translating_box(seed: u64, clutter_rate: f64) -> SyntheticScene {
    SyntheticScene {
        width: 128,
        height: 96,
        duration: 0.2,
        motions: vec![MotionSpec {
            kind: MotionKind::TranslatingBox,
            velocity: (300.0, 150.0),
            start_region: Region { x: 10.0, y: 10.0, w: 24.0, h: 18.0 },
            event_rate: 40_000.0,
            noise_sigma: 0.3,
        }],
        clutter_rate,
        seed,
        frame_rate: 100.0,
    }
}

/// Injective matching of found directions to true ones that covers
/// `min(found, truth)` pairs with the least total angle, by exhaustive search.
/// Returns `assignment[found_index] = Some(truth_index)`.
pub fn match_ids(found: &[Vector3<f64>], truth: &[Vector3<f64>]) -> Vec<Option<usize>> {
    let mut best: Option<(f64, Vec<Option<usize>>)> = None;
    let n = found.len();
    let m = truth.len();
    let target = n.min(m);
    let mut stack: Vec<(Vec<Option<usize>>, Vec<bool>, f64)> =
        vec![(Vec::new(), vec![false; m], 0.0)];
    while let Some((assign, used, cost)) = stack.pop() {
        let i = assign.len();
        if i == n {
            if assign.iter().flatten().count() == target
                && best.as_ref().is_none_or(|(b, _)| cost < *b)
            {
                best = Some((cost, assign));
            }
            continue;
        }
        let mut skip = assign.clone();
        skip.push(None);
        stack.push((skip, used.clone(), cost));
        for j in 0..m {
            if !used[j] {
                let mut a = assign.clone();
                a.push(Some(j));
                let mut u = used.clone();
                u[j] = true;
                stack.push((a, u, cost + evassoc::synth::angle_deg(&found[i], &truth[j])));
            }
        }
    }
    best.map(|b| b.1).unwrap_or_else(|| vec![None; n])
}
