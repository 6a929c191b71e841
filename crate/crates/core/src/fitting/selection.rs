use rayon::prelude::*;

use crate::event_io::Label;
use crate::fitting::residual::normalized_column;
use crate::fitting::scale::NoiseScale;
use crate::fitting::WeightedModel;
use crate::hypotheses::{HypothesisSet, Voxel};

/// Elbow of the ascending weight curve.
///
/// With `d_k = w_(k+1) - w_k` over the sorted weights (1-based `k`), returns
/// the first `k` whose `d_k` strictly exceeds each of `d_(k-2)`, `d_(k-1)`,
/// `d_(k+1)` and `d_(k+2)` that exist. Falls back to 1.
pub fn select_model_count(weights: &[f64]) -> usize {
    if weights.len() < 2 {
        return 1;
    }
    let mut sorted = weights.to_vec();
    sorted.sort_by(f64::total_cmp);
    let diffs: Vec<f64> = sorted.windows(2).map(|w| w[1] - w[0]).collect();
    let m = diffs.len() as isize;
    for k in 0..m {
        let is_elbow = [-2isize, -1, 1, 2]
            .iter()
            .map(|o| k + o)
            .filter(|&j| j >= 0 && j < m)
            .all(|j| diffs[k as usize] > diffs[j as usize]);
        if is_elbow {
            return k as usize + 1;
        }
    }
    1
}

/// Indices of the `count` smallest final weights, ties by position.
pub fn smallest_weights(models: &[WeightedModel], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..models.len()).collect();
    order.sort_by(|&a, &b| {
        models[a]
            .w_final
            .total_cmp(&models[b].w_final)
            .then(a.cmp(&b))
    });
    order.truncate(count);
    order
}

/// Labels every voxel with the instance whose parallel family explains it best.
///
/// Each instance's family is every hypothesis in `hyps.all` within
/// `parallel_tol` of its direction. A voxel's score for an instance is its
/// smallest normalized residual over the family; it takes the instance with
/// the lowest score below `tau`, or [`Label::Noise`].
pub fn associate(
    voxels: &[Voxel],
    hyps: &HypothesisSet,
    instances: &[WeightedModel],
    parallel_tol: f64,
    scale: &NoiseScale,
) -> Vec<Label> {
    let best_per_instance: Vec<Vec<f64>> = instances
        .par_iter()
        .map(|inst| {
            let mut best = vec![f64::INFINITY; voxels.len()];
            for f in hyps.parallel_family(&inst.hypothesis, parallel_tol) {
                let (col, norm) = normalized_column(voxels, &hyps.all[f]);
                if norm == 0.0 {
                    // Every voxel lies on this line.
                    best.iter_mut().for_each(|b| *b = 0.0);
                    continue;
                }
                for (b, r) in best.iter_mut().zip(col) {
                    if r < *b {
                        *b = r;
                    }
                }
            }
            // The instance line itself always belongs to its family.
            let (col, _) = normalized_column(voxels, &inst.hypothesis);
            for (b, r) in best.iter_mut().zip(col) {
                if r < *b {
                    *b = r;
                }
            }
            best
        })
        .collect();

    (0..voxels.len())
        .map(|i| {
            let mut label = Label::Noise;
            let mut best = f64::INFINITY;
            for (k, scores) in best_per_instance.iter().enumerate() {
                let r = scores[i];
                if r < scale.tau && r < best {
                    best = r;
                    label = Label::Trajectory(k as u32);
                }
            }
            label
        })
        .collect()
}
