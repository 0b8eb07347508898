//! Pipeline configuration: one TOML file covering every stage, with the
//! documented defaults. Unknown keys are rejected. Precedence is
//! flags > config file > defaults.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use trajkit_core::metrics::MetricsConfig;
use trajkit_core::repair::RepairConfig;
use trajkit_core::verify::CheckConfig;
use trajkit_core::window::{
    DiversityConfig, DEFAULT_CLIP_SECONDS, DEFAULT_STRIDE_SECONDS, DEFAULT_WINDOW_SECONDS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSettings {
    pub clip_seconds: f64,
    pub stride_seconds: f64,
    /// Memory-window bound `L`, seconds.
    pub window_seconds: f64,
}

impl Default for WindowSettings {
    fn default() -> Self {
        Self {
            clip_seconds: DEFAULT_CLIP_SECONDS,
            stride_seconds: DEFAULT_STRIDE_SECONDS,
            window_seconds: DEFAULT_WINDOW_SECONDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSettings {
    pub n_steps: usize,
    pub knot_count: usize,
    /// Correspondences per simulated image pair.
    pub points_per_pair: usize,
    /// Pixel noise on simulated correspondences.
    pub noise_px: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            n_steps: 61,
            knot_count: 5,
            points_per_pair: 40,
            noise_px: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrieverSettings {
    pub zero_output_projections: bool,
    pub positional_encoding: bool,
}

impl Default for RetrieverSettings {
    fn default() -> Self {
        Self {
            zero_output_projections: true,
            positional_encoding: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub check: CheckConfig,
    pub repair: RepairConfig,
    pub window: WindowSettings,
    pub diversity: DiversityConfig,
    pub metrics: MetricsConfig,
    pub synth: SynthSettings,
    pub retriever: RetrieverSettings,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Self::default(),
        };
        if config.seed == 0 && path.is_none() {
            config.seed = 17;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.check.validate().context("invalid [check] section")?;
        self.repair.validate().context("invalid [repair] section")?;
        self.diversity
            .validate()
            .context("invalid [diversity] section")?;
        for (name, v) in [
            ("clip_seconds", self.window.clip_seconds),
            ("stride_seconds", self.window.stride_seconds),
            ("window_seconds", self.window.window_seconds),
        ] {
            anyhow::ensure!(
                v.is_finite() && v > 0.0,
                "invalid [window] section: {name} must be positive, got {v}"
            );
        }
        anyhow::ensure!(
            self.synth.n_steps >= 8,
            "invalid [synth] section: n_steps must be >= 8"
        );
        anyhow::ensure!(
            self.synth.knot_count >= 2,
            "invalid [synth] section: knot_count must be >= 2"
        );
        anyhow::ensure!(
            self.synth.points_per_pair >= 8,
            "invalid [synth] section: points_per_pair must be >= 8"
        );
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.check.min_inliers, 30);
        assert_eq!(cfg.check.min_inlier_ratio, 0.3);
        assert_eq!(cfg.check.epipolar_threshold, 0.01);
        assert_eq!(cfg.check.epipolar_inlier_floor, 0.5);
        assert_eq!(cfg.check.mad_score_threshold, 3.5);
        assert_eq!(cfg.check.forward_flip_angle_deg, 90.0);
        assert_eq!(cfg.repair.max_bad_fraction, 0.2);
        assert_eq!(cfg.repair.max_run_length, 8);
        assert_eq!(cfg.repair.cap_angle_per_step_deg, 15.0);
        assert!(cfg.repair.extrapolate_boundaries);
        assert_eq!(cfg.window.clip_seconds, 5.0);
        assert_eq!(cfg.window.stride_seconds, 1.0);
        assert_eq!(cfg.window.window_seconds, 5.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "[check]\nmin_inliers = 10\ntypo_key = 3\n";
        let parsed: Result<PipelineConfig, _> = toml::from_str(text);
        assert!(parsed.is_err());
        let text = "not_a_section = 1\n";
        let parsed: Result<PipelineConfig, _> = toml::from_str(text);
        assert!(parsed.is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let text = "seed = 5\n[check]\nmin_inliers = 12\n";
        let cfg: PipelineConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.check.min_inliers, 12);
        assert_eq!(cfg.check.min_inlier_ratio, 0.3);
        assert_eq!(cfg.repair.max_run_length, 8);
    }

    #[test]
    fn invalid_values_rejected_by_owning_module() {
        let text = "[check]\nmin_inlier_ratio = 1.5\n";
        let cfg: PipelineConfig = toml::from_str(text).unwrap();
        assert!(cfg.validate().is_err());
    }
}
