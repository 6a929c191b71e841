//! Inlier selection and the two weighting stages.
//!
//! Smaller weights mean better models throughout.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::fitting::residual::ResidualMatrix;
use crate::fitting::scale::NoiseScale;
use crate::hypotheses::{LineHypothesis, Voxel};

/// Inliers per column; `None` for columns dropped as noise.
///
/// Event `i` is an inlier of column `j` iff its normalized residual is below
/// `tau`. Columns with fewer than `min_inliers` inliers are dropped.
pub fn select_inliers(
    matrix: &ResidualMatrix,
    scale: &NoiseScale,
    min_inliers: usize,
) -> Result<Vec<Option<Vec<usize>>>> {
    let sets: Vec<Option<Vec<usize>>> = (0..matrix.cols())
        .map(|j| {
            let inl: Vec<usize> = matrix
                .column(j)
                .iter()
                .enumerate()
                .filter(|(_, &r)| r < scale.tau)
                .map(|(i, _)| i)
                .collect();
            (inl.len() >= min_inliers).then_some(inl)
        })
        .collect();
    if sets.iter().all(Option::is_none) {
        return Err(Error::EmptyModel);
    }
    Ok(sets)
}

/// Temporal dispersion of inliers about the middle of the time axis:
/// `mean((t_i - S_t / 2)^2)`.
pub fn stage1_weight(inliers: &[usize], voxels: &[Voxel], s_t: f64) -> f64 {
    if inliers.is_empty() {
        return 0.0;
    }
    let half = s_t / 2.0;
    inliers
        .iter()
        .map(|&i| (voxels[i].t - half).powi(2))
        .sum::<f64>()
        / inliers.len() as f64
}

/// Count image of inliers shifted along a line to the `t = 0` plane,
/// cropped to the bounding rectangle of non-zero cells. Stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedImage {
    /// `(column, row)` relative to `origin`, with counts; sorted.
    pub cells: Vec<((u32, u32), u32)>,
    /// Absolute pixel position of the top-left cell.
    pub origin: (i64, i64),
    pub width: u32,
    pub height: u32,
}

impl WarpedImage {
    pub fn pixel_count(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    /// Row-major dense counts.
    pub fn dense(&self) -> Vec<u32> {
        let mut out = vec![0; self.pixel_count() as usize];
        for &((x, y), c) in &self.cells {
            out[y as usize * self.width as usize + x as usize] = c;
        }
        out
    }

    /// Variance of the max-normalized image over all cropped pixels.
    pub fn contrast(&self) -> f64 {
        let max = self.cells.iter().map(|c| c.1).max().unwrap_or(0);
        if max == 0 {
            return 0.0;
        }
        let n = self.pixel_count() as f64;
        let (sum, sum_sq) = self.cells.iter().fold((0.0, 0.0), |(s, q), &(_, c)| {
            let p = c as f64 / max as f64;
            (s + p, q + p * p)
        });
        let mean = sum / n;
        (sum_sq / n - mean * mean).max(0.0)
    }
}

/// Shifts every inlier along `hyp` to `t = 0` and rounds to pixels.
pub fn warp_image(inliers: &[usize], voxels: &[Voxel], hyp: &LineHypothesis) -> WarpedImage {
    let (du, dv) = hyp.image_velocity();
    let mut counts: BTreeMap<(i64, i64), u32> = BTreeMap::new();
    for &i in inliers {
        let e = voxels[i];
        let x = (e.u - du * e.t).round() as i64;
        let y = (e.v - dv * e.t).round() as i64;
        *counts.entry((x, y)).or_default() += 1;
    }
    if counts.is_empty() {
        return WarpedImage {
            cells: Vec::new(),
            origin: (0, 0),
            width: 1,
            height: 1,
        };
    }
    let x0 = counts.keys().map(|k| k.0).min().unwrap_or(0);
    let x1 = counts.keys().map(|k| k.0).max().unwrap_or(0);
    let y0 = counts.keys().map(|k| k.1).min().unwrap_or(0);
    let y1 = counts.keys().map(|k| k.1).max().unwrap_or(0);
    let mut cells: Vec<((u32, u32), u32)> = counts
        .into_iter()
        .map(|((x, y), c)| (((x - x0) as u32, (y - y0) as u32), c))
        .collect();
    cells.sort_unstable();
    WarpedImage {
        cells,
        origin: (x0, y0),
        width: (x1 - x0 + 1) as u32,
        height: (y1 - y0 + 1) as u32,
    }
}

/// Contrast in `[0, 1]` of the warped inlier image.
pub fn warp_and_contrast(inliers: &[usize], voxels: &[Voxel], hyp: &LineHypothesis) -> f64 {
    warp_image(inliers, voxels, hyp).contrast()
}

/// `w * (1 - contrast)`.
pub fn stage2_weight(w: f64, contrast: f64) -> f64 {
    w * (1.0 - contrast)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::residual::residual_matrix;

    fn img(cells: Vec<((u32, u32), u32)>, w: u32, h: u32) -> WarpedImage {
        WarpedImage {
            cells,
            origin: (0, 0),
            width: w,
            height: h,
        }
    }

    #[test]
    fn contrast_closed_forms() {
        let uniform = img((0..4).map(|i| ((i, 0), 3)).collect(), 4, 1);
        assert_eq!(uniform.contrast(), 0.0);
        let half = img(vec![((0, 0), 5), ((1, 0), 5)], 4, 1);
        assert!((half.contrast() - 0.25).abs() < 1e-15);
        let single = img(vec![((0, 0), 9)], 1, 1);
        assert_eq!(single.contrast(), 0.0);
    }

    #[test]
    fn stage_weights() {
        let s_t = 100.0;
        let center: Vec<_> = (0..5).map(|_| Voxel::new(0.0, 0.0, 50.0)).collect();
        assert_eq!(stage1_weight(&[0, 1, 2, 3, 4], &center, s_t), 0.0);

        let ends = vec![
            Voxel::new(0.0, 0.0, 0.0),
            Voxel::new(0.0, 0.0, 100.0),
            Voxel::new(0.0, 0.0, 0.0),
            Voxel::new(0.0, 0.0, 100.0),
        ];
        assert_eq!(stage1_weight(&[0, 1, 2, 3], &ends, s_t), 2500.0);

        assert_eq!(stage2_weight(2.0, 0.0), 2.0);
        assert_eq!(stage2_weight(2.0, 1.0), 0.0);
        assert_eq!(stage2_weight(2.0, 0.25), 1.5);
    }

    #[test]
    fn inlier_selection_rules() {
        let l = LineHypothesis::new(Voxel::new(0.0, 0.0, 0.0), Voxel::new(0.0, 0.0, 10.0))
            .unwrap();
        // Two events on the line, the rest far away: two sub-tau inliers only.
        let mut vox = vec![Voxel::new(0.0, 0.0, 1.0), Voxel::new(0.0, 0.0, 2.0)];
        vox.extend((0..20).map(|k| Voxel::new(50.0 + k as f64, 0.0, k as f64)));
        let m = residual_matrix(&vox, &[l]);
        let tau = NoiseScale::fixed(0.01).unwrap();
        assert!(matches!(select_inliers(&m, &tau, 3), Err(Error::EmptyModel)));

        vox.push(Voxel::new(0.0, 0.0, 3.0));
        let m = residual_matrix(&vox, &[l]);
        let sets = select_inliers(&m, &tau, 3).unwrap();
        assert_eq!(sets[0].as_deref(), Some(&[0, 1, 22][..]));
    }

    #[test]
    fn warp_collapses_true_motion() {
        // Points moving at 0.5 px per time unit collapse to their start pixels.
        let vox: Vec<_> = (0..=10)
            .flat_map(|k| {
                let t = k as f64 * 10.0;
                [Voxel::new(5.0 + 0.5 * t, 3.0, t), Voxel::new(9.0 + 0.5 * t, 3.0, t)]
            })
            .collect();
        let all: Vec<usize> = (0..vox.len()).collect();
        let h = LineHypothesis::new(Voxel::new(5.0, 3.0, 0.0), Voxel::new(55.0, 3.0, 100.0))
            .unwrap();
        let im = warp_image(&all, &vox, &h);
        assert_eq!((im.width, im.height), (5, 1));
        assert_eq!(im.dense(), vec![11, 0, 0, 0, 11]);
        assert!((im.contrast() - 0.24).abs() < 1e-12);
    }
}
