//! Run configuration with three precedence layers: built-in defaults, then
//! a JSON config file, then command-line flags. The seed additionally falls
//! back to the `LIBRA_BALANCE_SEED` environment variable when neither the
//! file nor the flags set one.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

pub const SEED_ENV_VAR: &str = "LIBRA_BALANCE_SEED";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Base seed; `None` falls back to the environment, then the default.
    pub seed: Option<u64>,
    /// Monte-Carlo trial count for scenario-driven commands.
    pub trials: usize,
    /// Fixed scenario JSON to use instead of the generator.
    pub scenario_file: Option<std::path::PathBuf>,
    pub scenario: ScenarioConfig,
    pub sampler: SamplerSettings,
    pub loss: LossSettings,
    pub pyramid: PyramidSettings,
    pub toy_fit: ToyFitSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            trials: 200,
            scenario_file: None,
            scenario: ScenarioConfig::default(),
            sampler: SamplerSettings::default(),
            loss: LossSettings::default(),
            pyramid: PyramidSettings::default(),
            toy_fit: ToyFitSettings::default(),
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with the JSON file at `path`, when given.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// Seed resolution: explicit value, else environment, else default.
    pub fn resolved_seed(&self) -> u64 {
        if let Some(s) = self.seed {
            return s;
        }
        if let Ok(v) = std::env::var(SEED_ENV_VAR) {
            if let Ok(s) = v.trim().parse() {
                return s;
            }
        }
        DEFAULT_SEED
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(self.trials >= 1, "trials must be at least 1");
        anyhow::ensure!(self.scenario.candidate_count >= 1, "candidate count must be positive");
        anyhow::ensure!(
            (0.0..=1.0).contains(&self.scenario.skew),
            "skew must lie in [0, 1]"
        );
        anyhow::ensure!(self.pyramid.levels >= 1, "pyramid needs at least one level");
        anyhow::ensure!(
            self.pyramid.base_resolution.is_power_of_two(),
            "base resolution must be a power of two"
        );
        anyhow::ensure!(self.pyramid.channels >= 1, "channel count must be positive");
        Ok(())
    }
}

/// Synthetic detection scenario knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Side length of the square image, in pixels.
    pub image_extent: f64,
    pub gt_count: usize,
    pub candidate_count: usize,
    /// Fraction of candidates drawn as free-floating background boxes; the
    /// rest are jittered copies of ground truths. High values skew the IoU
    /// distribution low.
    pub skew: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { image_extent: 1024.0, gt_count: 4, candidate_count: 256, skew: 0.85 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    pub neg_count: usize,
    pub pos_count: usize,
    pub bins: usize,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub pos_iou_threshold: f64,
    pub neg_iou_threshold: f64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            neg_count: 64,
            pos_count: 16,
            bins: 3,
            bin_lo: 0.0,
            bin_hi: 0.5,
            pos_iou_threshold: 0.5,
            neg_iou_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSettings {
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// `(alpha, gamma)` pairs for the curve emitter; one CSV per pair.
    pub curves: Vec<(f64, f64)>,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self { alpha: 0.5, gamma: 1.5, lambda: 1.0, curves: vec![(0.5, 1.5)] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PyramidSettings {
    pub levels: usize,
    pub base_resolution: usize,
    pub channels: usize,
    /// Intermediate level; `None` selects the second-coarsest.
    pub target_level: Option<usize>,
    pub refine: bool,
    /// Reduced channel count of the non-local block; `None` selects half
    /// the channels (at least one).
    pub embed_channels: Option<usize>,
}

impl Default for PyramidSettings {
    fn default() -> Self {
        Self {
            levels: 3,
            base_resolution: 8,
            channels: 4,
            target_level: None,
            refine: true,
            embed_channels: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyFitSettings {
    pub steps: usize,
    pub learning_rate: f64,
    pub pool_size: usize,
    /// Fraction of the pool replaced by far-off targets.
    pub outlier_fraction: f64,
    /// Magnitude scale of the injected outlier offsets.
    pub outlier_scale: f64,
    /// Uniform jitter applied to inlier targets.
    pub noise: f64,
}

impl Default for ToyFitSettings {
    fn default() -> Self {
        Self {
            steps: 400,
            learning_rate: 0.05,
            pool_size: 64,
            outlier_fraction: 0.25,
            outlier_scale: 5.0,
            noise: 0.0,
        }
    }
}

/// Values collected from command-line flags; `None` leaves the config
/// untouched.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub scenario_file: Option<std::path::PathBuf>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub bins: Option<usize>,
    pub neg_count: Option<usize>,
    pub pos_count: Option<usize>,
    pub refine: Option<bool>,
}

impl RunConfig {
    pub fn apply_overrides(&mut self, ov: &Overrides) {
        if let Some(v) = ov.seed {
            self.seed = Some(v);
        }
        if let Some(v) = ov.trials {
            self.trials = v;
        }
        if let Some(v) = &ov.scenario_file {
            self.scenario_file = Some(v.clone());
        }
        if let Some(v) = ov.alpha {
            self.loss.alpha = v;
            self.loss.curves = vec![(v, self.loss.gamma)];
        }
        if let Some(v) = ov.gamma {
            self.loss.gamma = v;
            self.loss.curves = vec![(self.loss.alpha, v)];
        }
        if let Some(v) = ov.bins {
            self.sampler.bins = v;
        }
        if let Some(v) = ov.neg_count {
            self.sampler.neg_count = v;
        }
        if let Some(v) = ov.pos_count {
            self.sampler.pos_count = v;
        }
        if let Some(v) = ov.refine {
            self.pyramid.refine = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults_and_flags_override_file() {
        let dir = std::env::temp_dir().join("libra-balance-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cfg.json");
        std::fs::write(&path, r#"{"seed": 7, "sampler": {"bins": 5}}"#).unwrap();
        let mut cfg = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.sampler.bins, 5);
        assert_eq!(cfg.sampler.neg_count, 64); // untouched default

        cfg.apply_overrides(&Overrides { bins: Some(2), ..Default::default() });
        assert_eq!(cfg.sampler.bins, 2);
        assert_eq!(cfg.resolved_seed(), 7);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"sed": 7}"#);
        assert!(err.is_err());
    }

    #[test]
    fn alpha_flag_rewrites_curve_list() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&Overrides { alpha: Some(0.2), gamma: Some(1.0), ..Default::default() });
        assert_eq!(cfg.loss.curves, vec![(0.2, 1.0)]);
    }
}
