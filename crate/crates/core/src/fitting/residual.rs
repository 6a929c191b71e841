use rayon::prelude::*;

use crate::hypotheses::{LineHypothesis, Voxel};

/// Perpendicular distance from `voxel` to the infinite line through the
/// hypothesis endpoints.
#[inline]
pub fn residual(voxel: &Voxel, hyp: &LineHypothesis) -> f64 {
    let e = voxel.vec();
    let s = hyp.start.vec();
    let d = hyp.end.vec() - s;
    let a = e - s;
    let b = e - hyp.end.vec();
    a.cross(&b).norm() / d.norm()
}

/// Residuals of every voxel against every line, each column scaled to unit
/// Euclidean norm. Stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMatrix {
    rows: usize,
    values: Vec<f64>,
    pub column_norms: Vec<f64>,
}

impl ResidualMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.column_norms.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.rows..(j + 1) * self.rows]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.rows + i]
    }
}

/// Raw residual column and its Euclidean norm.
pub fn residual_column(voxels: &[Voxel], line: &LineHypothesis) -> (Vec<f64>, f64) {
    let col: Vec<f64> = voxels.iter().map(|v| residual(v, line)).collect();
    let norm = col.iter().map(|r| r * r).sum::<f64>().sqrt();
    (col, norm)
}

/// Normalized column; all-zero when every voxel lies on the line.
pub fn normalized_column(voxels: &[Voxel], line: &LineHypothesis) -> (Vec<f64>, f64) {
    let (mut col, norm) = residual_column(voxels, line);
    if norm > 0.0 {
        col.iter_mut().for_each(|r| *r /= norm);
    } else {
        col.iter_mut().for_each(|r| *r = 0.0);
    }
    (col, norm)
}

pub fn residual_matrix(voxels: &[Voxel], lines: &[LineHypothesis]) -> ResidualMatrix {
    let cols: Vec<(Vec<f64>, f64)> = lines
        .par_iter()
        .map(|l| normalized_column(voxels, l))
        .collect();
    let mut values = Vec::with_capacity(voxels.len() * lines.len());
    let mut column_norms = Vec::with_capacity(lines.len());
    for (c, n) in cols {
        values.extend_from_slice(&c);
        column_norms.push(n);
    }
    ResidualMatrix {
        rows: voxels.len(),
        values,
        column_norms,
    }
}
