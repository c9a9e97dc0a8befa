//! Pipeline configuration file (TOML).

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context};
use serde::{Deserialize, Serialize};

use loopgate_core::synth::SynthConfig;
use loopgate_core::{DirdConfig, NoiseConfig, RetrievalConfig, SelectorConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub synth: SynthConfig,
    pub filter: FilterSection,
    pub dird: DirdConfig,
    pub selector: SelectorConfig,
    pub retrieval: RetrievalConfig,
    pub eval: EvalSection,
    pub run: RunSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            synth: SynthConfig::default(),
            filter: FilterSection::default(),
            dird: DirdConfig::default(),
            selector: SelectorConfig::default(),
            retrieval: RetrievalConfig::default(),
            eval: EvalSection::default(),
            run: RunSection::default(),
        }
    }
}

/// Noise standard deviations assumed by the filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub gyro_noise: f64,
    pub accel_noise: f64,
    pub observation_noise: f64,
}

impl Default for FilterSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            gyro_noise: s.gyro_noise,
            accel_noise: s.accel_noise,
            observation_noise: s.observation_noise,
        }
    }
}

impl FilterSection {
    pub fn noise(&self) -> anyhow::Result<NoiseConfig> {
        Ok(NoiseConfig::from_std(self.gyro_noise, self.accel_noise, self.observation_noise)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Ground-truth loop radius in meters; the dataset's value when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_radius: Option<f64>,
    /// Frames by which a detection may miss a true pair.
    pub match_tolerance: usize,
    pub sweep_min: f64,
    pub sweep_max: f64,
    pub sweep_count: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            truth_radius: None,
            match_tolerance: 5,
            sweep_min: 0.5,
            sweep_max: 0.95,
            sweep_count: 10,
        }
    }
}

impl EvalSection {
    pub fn thresholds(&self) -> Vec<f64> {
        loopgate_core::eval::threshold_grid(self.sweep_min, self.sweep_max, self.sweep_count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// Let `bench` use worker threads instead of timing on one.
    pub parallel_timing: bool,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| anyhow::anyhow!("{}", e.to_string().trim_end()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// The file at `path`, or defaults when no path is given.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::read)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.version != CONFIG_VERSION {
            bail!("unsupported config version {} (expected {CONFIG_VERSION})", self.version);
        }
        self.synth.validate().context("[synth]")?;
        self.filter.noise().context("[filter]")?;
        self.dird.validate().context("[dird]")?;
        self.retrieval.validate().context("[retrieval]")?;
        let s = &self.selector;
        ensure!(s.beta >= 0.0 && s.beta.is_finite(), "[selector] beta must be finite and non-negative");
        let e = &self.eval;
        if let Some(r) = e.truth_radius {
            ensure!(r > 0.0 && r.is_finite(), "[eval] truth_radius must be positive");
        }
        ensure!(e.sweep_count > 0, "[eval] sweep_count must be positive");
        ensure!(
            0.0 < e.sweep_min && e.sweep_min <= e.sweep_max && e.sweep_max < 1.0,
            "[eval] sweep bounds must satisfy 0 < sweep_min <= sweep_max < 1"
        );
        Ok(())
    }

    /// Lowest similarity any later sweep can ask for.
    pub fn similarity_floor(&self) -> f64 {
        self.retrieval.similarity_threshold.min(self.eval.sweep_min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_fully_materialized() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml();
        for section in ["[synth]", "[filter]", "[dird]", "[selector]", "[retrieval]", "[eval]", "[run]"] {
            assert!(text.contains(section), "{section} missing from\n{text}");
        }
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(PipelineConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn partial_files_keep_other_defaults() {
        let cfg = PipelineConfig::from_toml("[selector]\nbeta = 2.5\n[eval]\ntruth_radius = 4.0\n").unwrap();
        assert_eq!(cfg.selector.beta, 2.5);
        assert_eq!(cfg.selector.margin, loopgate_core::DEFAULT_MARGIN);
        assert_eq!(cfg.eval.truth_radius, Some(4.0));
        let again = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = PipelineConfig::from_toml("[retrieval]\nsimilarity_treshold = 0.5\n").unwrap_err();
        assert!(format!("{err:#}").contains("similarity_treshold"), "{err:#}");
        let err = PipelineConfig::from_toml("colour = 1\n").unwrap_err();
        assert!(format!("{err:#}").contains("colour"), "{err:#}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(PipelineConfig::from_toml("version = 2\n").is_err());
        assert!(PipelineConfig::from_toml("[retrieval]\nsequence_length = 4\n").is_err());
        assert!(PipelineConfig::from_toml("[eval]\nsweep_min = 0.9\nsweep_max = 0.5\n").is_err());
        assert!(PipelineConfig::from_toml("[synth]\nscale = 0.0\n").is_err());
    }
}
