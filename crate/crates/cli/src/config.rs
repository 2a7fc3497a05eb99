use std::path::Path;

use gs4d::codec::BitPolicy;
use gs4d::energy::{EnergyWeights, OptimizeConfig};
use gs4d::synth::{DriftSpec, SceneSpec, SequenceSpec};
use gs4d::track::TrackConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CONFIG_VERSION: u32 = 1;

/// Every tunable of a pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub version: u32,
    /// Frames per keyframe segment.
    pub segment_length: usize,
    /// ED node spacing; 0 picks the default from the keyframe's point density.
    pub ed_spacing: f64,
    pub scene: SceneSpec,
    pub sequence: SequenceSpec,
    pub track: TrackConfig,
    pub energy: EnergyWeights,
    pub optimize: OptimizeConfig,
    /// Motion-only iterations per frame after appearance quantisation; 0 skips.
    pub fine_tune_iterations: usize,
    pub codec: BitPolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut optimize = OptimizeConfig {
            patience: 10,
            min_rel_improvement: 1e-2,
            ..OptimizeConfig::default()
        };
        optimize.iterations = 300;
        Self {
            version: CONFIG_VERSION,
            segment_length: 30,
            ed_spacing: 0.0,
            scene: SceneSpec::default(),
            sequence: SequenceSpec {
                drift: Some(DriftSpec {
                    opacity: 1.0,
                    dc: 0.15,
                    period: 20.0,
                    fraction: 0.1,
                    seed: 11,
                }),
                ..SequenceSpec::default()
            },
            track: TrackConfig::default(),
            energy: EnergyWeights::default(),
            optimize,
            fine_tune_iterations: 100,
            codec: BitPolicy::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::input(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.segment_length == 0 {
            return Err(CliError::input("segment_length must be at least 1"));
        }
        if !(self.ed_spacing >= 0.0 && self.ed_spacing.is_finite()) {
            return Err(CliError::input("ed_spacing must be finite and non-negative"));
        }
        self.track.validate()?;
        self.energy.validate()?;
        self.codec.validate()?;
        self.sequence.field.validate()?;
        if let Some(d) = &self.sequence.drift {
            d.validate()?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::input(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| e.at(path))
    }

    /// Loads `path`, or the defaults when none is given.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{}\nbogus = 1\n", PipelineConfig::default().to_toml());
        assert!(PipelineConfig::from_toml(&text).is_err());
        assert!(PipelineConfig::from_toml("[energy]\nlambda_typo = 1.0\n").is_err());
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = PipelineConfig::from_toml("segment_length = 10\n[scene]\nkernel_count = 500\n").unwrap();
        assert_eq!(cfg.segment_length, 10);
        assert_eq!(cfg.scene.kernel_count, 500);
        assert_eq!(cfg.energy, EnergyWeights::default());
    }

    #[test]
    fn weight_defaults_follow_the_method() {
        let e = PipelineConfig::default().energy;
        assert_eq!((e.alpha, e.lambda_sh, e.lambda_opacity, e.lambda_scale), (50.0, 1.0, 0.05, 0.05));
        assert_eq!((e.lambda_smooth, e.lambda_temp, e.lambda_color), (0.002, 0.0005, 1.0));
        let b = PipelineConfig::default().codec;
        assert_eq!((b.key_motion, b.key_appearance, b.motion, b.appearance), (0, 9, 11, 7));
    }

    #[test]
    fn wrong_version_is_rejected() {
        assert!(PipelineConfig::from_toml("version = 2\n").is_err());
    }
}
