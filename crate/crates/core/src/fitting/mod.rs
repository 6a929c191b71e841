//! Robust multi-structure fitting of event trajectories.
//!
//! Per window: representatives are scored against every event, inliers are
//! selected by a noise scale, each surviving model is weighted by the
//! temporal dispersion of its inliers and then by the contrast of its warped
//! inlier image, the model count is taken at the elbow of the sorted
//! weights, and events are labeled through the parallel families of the
//! selected models.

pub mod residual;
pub mod scale;
pub mod selection;
pub mod weights;

use rayon::prelude::*;

pub use residual::{residual, residual_matrix, ResidualMatrix};
pub use scale::{estimate_tau_ikose, NoiseScale, ScaleSource};
pub use selection::{associate, select_model_count, smallest_weights};
pub use weights::{
    select_inliers, stage1_weight, stage2_weight, warp_and_contrast, warp_image, WarpedImage,
};

use crate::config::{EdaConfig, ScaleMode};
use crate::error::{Error, Result};
use crate::event_io::{EventStream, Label};
use crate::grouping::{cut_windows, EventWindow};
use crate::hypotheses::{generate, select_representatives, voxelize, HypothesisSet, LineHypothesis};

/// A surviving representative with its inliers and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedModel {
    /// Position in the window's representative list.
    pub representative: usize,
    pub hypothesis: LineHypothesis,
    /// Event indices local to the window.
    pub inliers: Vec<usize>,
    pub w_stage1: f64,
    pub contrast: f64,
    pub w_final: f64,
}

/// Outcome of fitting one window.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResult {
    /// Selected models, best first. Trajectory id `k` refers to `instances[k]`.
    pub instances: Vec<WeightedModel>,
    /// One label per window event.
    pub assignment: Vec<Label>,
    pub num_models: usize,
    /// Every model that survived inlier selection, in representative order.
    pub candidates: Vec<WeightedModel>,
    pub tau: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// Stream index of the window's first event.
    pub offset: usize,
    /// Set when fitting failed and every event was labeled noise.
    pub failure: Option<String>,
}

impl AssociationResult {
    pub fn failed(window: &EventWindow, reason: String) -> Self {
        Self {
            instances: Vec::new(),
            assignment: vec![Label::Noise; window.len()],
            num_models: 0,
            candidates: Vec::new(),
            tau: f64::NAN,
            t_start: window.t_start,
            t_end: window.t_end,
            offset: window.offset,
            failure: Some(reason),
        }
    }

    pub fn is_failure(&self) -> bool {
        self.failure.is_some()
    }

    pub fn noise_count(&self) -> usize {
        self.assignment.iter().filter(|l| l.is_noise()).count()
    }

    /// Events carrying each trajectory id.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_models];
        for l in &self.assignment {
            if let Some(id) = l.trajectory() {
                c[id as usize] += 1;
            }
        }
        c
    }
}

/// Noise scale for a window, fixed or estimated.
///
/// In IKOSE mode each representative column gets its own estimate and the
/// window uses their median.
pub fn window_scale(matrix: &ResidualMatrix, cfg: &EdaConfig) -> Result<NoiseScale> {
    match cfg.fit.scale_mode {
        ScaleMode::Fixed => NoiseScale::fixed(cfg.fit.tau),
        ScaleMode::Ikose => {
            let mut taus = (0..matrix.cols())
                .map(|j| estimate_tau_ikose(matrix.column(j), cfg.fit.ikose_k).map(|s| s.tau))
                .collect::<Result<Vec<_>>>()?;
            if taus.is_empty() {
                return Err(Error::EmptyModel);
            }
            taus.sort_by(f64::total_cmp);
            Ok(NoiseScale {
                tau: taus[(taus.len() - 1) / 2],
                source: ScaleSource::Estimated,
            })
        }
    }
}

/// Intermediate products of fitting one window, kept for inspection.
#[derive(Debug, Clone)]
pub struct WindowFit {
    pub hypotheses: HypothesisSet,
    pub scale: NoiseScale,
    pub result: AssociationResult,
}

/// Fits one window, returning the intermediate hypothesis set as well.
pub fn fit_window_detailed(window: &EventWindow, cfg: &EdaConfig) -> Result<WindowFit> {
    let hyps = generate(window, cfg.hypo.num_slices, cfg.hypo.max_pairs)?;
    if hyps.is_empty() {
        return Err(Error::NoHypotheses("no valid endpoint pair".into()));
    }
    let set = select_representatives(hyps, cfg.hypo.parallel_tol)?;
    let voxels = voxelize(window);
    let reps = set.representative_lines();
    let matrix = residual_matrix(&voxels, &reps);
    let scale = window_scale(&matrix, cfg)?;
    let inliers = select_inliers(&matrix, &scale, cfg.fit.min_inliers)?;
    let s_t = window.geometry.time_axis_len();

    let candidates: Vec<WeightedModel> = inliers
        .into_par_iter()
        .enumerate()
        .filter_map(|(j, inl)| inl.map(|inl| (j, inl)))
        .map(|(j, inl)| {
            let w = stage1_weight(&inl, &voxels, s_t);
            let contrast = warp_and_contrast(&inl, &voxels, &reps[j]);
            WeightedModel {
                representative: j,
                hypothesis: reps[j],
                inliers: inl,
                w_stage1: w,
                contrast,
                w_final: stage2_weight(w, contrast),
            }
        })
        .collect();

    let weights: Vec<f64> = candidates.iter().map(|m| m.w_final).collect();
    let num_models = select_model_count(&weights).min(candidates.len());
    let instances: Vec<WeightedModel> = smallest_weights(&candidates, num_models)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect();
    let assignment = associate(&voxels, &set, &instances, cfg.hypo.parallel_tol, &scale);

    Ok(WindowFit {
        hypotheses: set,
        scale,
        result: AssociationResult {
            num_models: instances.len(),
            instances,
            assignment,
            candidates,
            tau: scale.tau,
            t_start: window.t_start,
            t_end: window.t_end,
            offset: window.offset,
            failure: None,
        },
    })
}

pub fn fit_window(window: &EventWindow, cfg: &EdaConfig) -> Result<AssociationResult> {
    fit_window_detailed(window, cfg).map(|f| f.result)
}

/// Fits a window, turning per-window failures into an all-noise result.
pub fn fit_window_or_flag(window: &EventWindow, cfg: &EdaConfig) -> AssociationResult {
    match fit_window(window, cfg) {
        Ok(r) => r,
        Err(e) => AssociationResult::failed(window, e.to_string()),
    }
}

/// Full pipeline: entropy windowing, then fitting of every window.
pub fn run_eda(stream: &EventStream, cfg: &EdaConfig) -> Result<Vec<AssociationResult>> {
    cfg.validate()?;
    if stream.is_empty() {
        return Err(Error::Degenerate("event stream is empty".into()));
    }
    let windows = cut_windows(
        stream,
        cfg.entropy.interval()?,
        cfg.entropy.grid,
        cfg.entropy.max_window_s,
    )?;
    Ok(windows
        .par_iter()
        .map(|w| fit_window_or_flag(w, cfg))
        .collect())
}

/// Concatenates per-window labels into stream order.
pub fn stream_labels(results: &[AssociationResult], stream_len: usize) -> Vec<Label> {
    let mut out = vec![Label::Noise; stream_len];
    for r in results {
        for (i, l) in r.assignment.iter().enumerate() {
            if let Some(slot) = out.get_mut(r.offset + i) {
                *slot = *l;
            }
        }
    }
    out
}
