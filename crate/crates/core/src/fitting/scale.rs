use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Smallest scale handed out when the K-th residual is exactly zero.
pub const MIN_TAU: f64 = 1e-12;

/// Residuals beyond this many scales are treated as outliers when the
/// inlier count is re-estimated.
const OUTLIER_BAND: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleSource {
    Fixed,
    Estimated,
}

/// Inlier threshold on normalized residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseScale {
    pub tau: f64,
    pub source: ScaleSource,
}

impl NoiseScale {
    pub fn fixed(tau: f64) -> Result<Self> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::Config(format!("tau must be positive, got {tau}")));
        }
        Ok(Self {
            tau,
            source: ScaleSource::Fixed,
        })
    }
}

fn std_normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0)
        .expect("unit normal is valid")
        .inverse_cdf(p)
}

/// Iterative K-th ordered scale estimate.
///
/// `K = ceil(k_ratio * n)`; the scale is `r_K / Phi^-1((1 + K/n) / 2)`.
/// One refinement replaces `n` with the number of residuals within
/// 2.5 scales, keeping `K` fixed.
pub fn estimate_tau_ikose(column: &[f64], k_ratio: f64) -> Result<NoiseScale> {
    if !(k_ratio > 0.0 && k_ratio < 1.0) {
        return Err(Error::Config(format!(
            "IKOSE k must lie in (0, 1), got {k_ratio}"
        )));
    }
    if column.is_empty() {
        return Err(Error::Degenerate("empty residual column".into()));
    }
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = ((k_ratio * n as f64).ceil() as usize).clamp(1, n);
    let r_k = sorted[k - 1];
    if r_k <= 0.0 {
        return Ok(NoiseScale {
            tau: MIN_TAU,
            source: ScaleSource::Estimated,
        });
    }
    let scale_for = |n_in: usize| {
        let kappa = (k as f64 / n_in as f64).min(1.0 - 1e-12);
        r_k / std_normal_quantile(0.5 * (1.0 + kappa))
    };
    let first = scale_for(n);
    let n_in = sorted.partition_point(|&r| r <= OUTLIER_BAND * first).max(k);
    let tau = scale_for(n_in).max(MIN_TAU);
    Ok(NoiseScale {
        tau,
        source: ScaleSource::Estimated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal as RNormal};

    #[test]
    fn monte_carlo_half_normal() {
        let sigma = 0.02;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dist = RNormal::new(0.0, sigma).unwrap();
        let col: Vec<f64> = (0..10_000).map(|_| f64::abs(dist.sample(&mut rng))).collect();
        let s = estimate_tau_ikose(&col, 0.1).unwrap();
        assert_eq!(s.source, ScaleSource::Estimated);
        assert!((s.tau - sigma).abs() / sigma < 0.15, "tau {}", s.tau);
    }

    #[test]
    fn equivariant_in_constant_columns() {
        let a = estimate_tau_ikose(&[0.5; 40], 0.01).unwrap().tau;
        let b = estimate_tau_ikose(&[1.5; 40], 0.01).unwrap().tau;
        assert!((b / a - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_kth_residual_gives_floor() {
        let mut col = vec![0.0; 10];
        col.push(3.0);
        assert_eq!(estimate_tau_ikose(&col, 0.5).unwrap().tau, MIN_TAU);
    }

    #[test]
    fn bad_arguments() {
        assert!(estimate_tau_ikose(&[1.0], 0.0).is_err());
        assert!(estimate_tau_ikose(&[1.0], 1.0).is_err());
        assert!(estimate_tau_ikose(&[], 0.1).is_err());
        assert!(NoiseScale::fixed(0.0).is_err());
        assert_eq!(NoiseScale::fixed(0.01).unwrap().tau, 0.01);
    }
}
