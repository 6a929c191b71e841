//! Run configuration: every tunable of the pipeline with its default.
//!
//! A TOML file uses one table per module:
//!
//! ```toml
//! [entropy]
//! alpha = 2.5
//! beta = 4.5
//! grid = 8
//! max_window_s = 0.1
//! confidence = 0.95
//!
//! [hypo]
//! num_slices = 10
//! max_pairs = 4096
//! parallel_tol = 1e-3
//!
//! [fit]
//! tau = 0.01
//! scale_mode = "fixed"   # or "ikose"
//! ikose_k = 0.01
//! min_inliers = 3
//!
//! [track]
//! n_rep = 5
//! success_iou = 0.5
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::EntropyInterval;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyConfig {
    pub alpha: f64,
    pub beta: f64,
    pub grid: u32,
    pub max_window_s: f64,
    pub confidence: f64,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        // Tuning defaults, recalibrate with `estimate_interval` per sensor.
        Self {
            alpha: 2.5,
            beta: 4.5,
            grid: 8,
            max_window_s: 0.1,
            confidence: 0.95,
        }
    }
}

impl EntropyConfig {
    pub fn interval(&self) -> Result<EntropyInterval> {
        EntropyInterval::new(self.alpha, self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HypoConfig {
    pub num_slices: usize,
    pub max_pairs: usize,
    pub parallel_tol: f64,
}

impl Default for HypoConfig {
    fn default() -> Self {
        Self {
            num_slices: 10,
            max_pairs: 4096,
            parallel_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMode {
    Fixed,
    Ikose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub tau: f64,
    pub scale_mode: ScaleMode,
    pub ikose_k: f64,
    pub min_inliers: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tau: 0.01,
            scale_mode: ScaleMode::Fixed,
            ikose_k: 0.01,
            min_inliers: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackConfig {
    pub n_rep: usize,
    pub success_iou: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            n_rep: 5,
            success_iou: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdaConfig {
    pub entropy: EntropyConfig,
    pub hypo: HypoConfig,
    pub fit: FitConfig,
    pub track: TrackConfig,
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl EdaConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: EdaConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Applies a dotted `key=value` override such as `fit.tau=0.02`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
        }
        match key {
            "entropy.alpha" => self.entropy.alpha = num(key, value)?,
            "entropy.beta" => self.entropy.beta = num(key, value)?,
            "entropy.grid" => self.entropy.grid = num(key, value)?,
            "entropy.max_window_s" => self.entropy.max_window_s = num(key, value)?,
            "entropy.confidence" => self.entropy.confidence = num(key, value)?,
            "hypo.num_slices" => self.hypo.num_slices = num(key, value)?,
            "hypo.max_pairs" => self.hypo.max_pairs = num(key, value)?,
            "hypo.parallel_tol" => self.hypo.parallel_tol = num(key, value)?,
            "fit.tau" => self.fit.tau = num(key, value)?,
            "fit.scale_mode" => {
                self.fit.scale_mode = match value.trim() {
                    "fixed" => ScaleMode::Fixed,
                    "ikose" => ScaleMode::Ikose,
                    other => {
                        return Err(Error::Config(format!(
                            "fit.scale_mode must be `fixed` or `ikose`, got `{other}`"
                        )))
                    }
                }
            }
            "fit.ikose_k" => self.fit.ikose_k = num(key, value)?,
            "fit.min_inliers" => self.fit.min_inliers = num(key, value)?,
            "track.n_rep" => self.track.n_rep = num(key, value)?,
            "track.success_iou" => self.track.success_iou = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 14] = [
        "entropy.alpha",
        "entropy.beta",
        "entropy.grid",
        "entropy.max_window_s",
        "entropy.confidence",
        "hypo.num_slices",
        "hypo.max_pairs",
        "hypo.parallel_tol",
        "fit.tau",
        "fit.scale_mode",
        "fit.ikose_k",
        "fit.min_inliers",
        "track.n_rep",
        "track.success_iou",
    ];

    pub fn validate(&self) -> Result<()> {
        self.entropy.interval()?;
        let e = &self.entropy;
        check(e.grid >= 1, || "entropy.grid must be >= 1".into())?;
        check(e.max_window_s > 0.0 && e.max_window_s.is_finite(), || {
            "entropy.max_window_s must be positive".into()
        })?;
        check(e.confidence > 0.0 && e.confidence < 1.0, || {
            "entropy.confidence must lie in (0, 1)".into()
        })?;
        let h = &self.hypo;
        check(h.num_slices >= 2, || "hypo.num_slices must be >= 2".into())?;
        check(h.max_pairs >= 1, || "hypo.max_pairs must be >= 1".into())?;
        check((0.0..=2.0).contains(&h.parallel_tol), || {
            "hypo.parallel_tol must lie in [0, 2]".into()
        })?;
        let f = &self.fit;
        check(f.tau > 0.0 && f.tau.is_finite(), || "fit.tau must be positive".into())?;
        check(f.ikose_k > 0.0 && f.ikose_k < 1.0, || {
            "fit.ikose_k must lie in (0, 1)".into()
        })?;
        check(f.min_inliers >= 1, || "fit.min_inliers must be >= 1".into())?;
        let t = &self.track;
        check(t.n_rep >= 1, || "track.n_rep must be >= 1".into())?;
        check(t.success_iou > 0.0 && t.success_iou <= 1.0, || {
            "track.success_iou must lie in (0, 1]".into()
        })?;
        Ok(())
    }
}
