//! Run settings layered as flags over a config file over defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tomsim::dialogue::Scenario;
use tomsim::engine::EpisodeConfig;
use tomsim::tracker::{SvBaseline, TriggerPolicy, Variant};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    #[default]
    Scripted,
    Remote,
}

/// Every field is optional so a file or the command line may set any
/// subset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub scenario: Option<Scenario>,
    pub variant: Option<Variant>,
    pub k: Option<usize>,
    pub t: Option<usize>,
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub jobs: Option<usize>,
    pub cf_trigger: Option<TriggerPolicy>,
    pub sv_baseline: Option<SvBaseline>,
    pub reverse_probability: Option<f64>,
    pub tolerate_overflow: Option<bool>,
    pub truth_similarity: Option<bool>,
    pub backend: Option<BackendChoice>,
    pub script: Option<PathBuf>,
    pub model: Option<String>,
    pub embedding_model: Option<String>,
    pub episodes: Option<PathBuf>,
}

macro_rules! layer {
    ($self:ident, $other:ident, $($field:ident),*) => {
        Settings { $($field: $self.$field.or($other.$field)),* }
    };
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if is_json {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// Values set here win over `other`.
    pub fn over(self, other: Settings) -> Settings {
        layer!(
            self,
            other,
            scenario,
            variant,
            k,
            t,
            seed,
            n,
            jobs,
            cf_trigger,
            sv_baseline,
            reverse_probability,
            tolerate_overflow,
            truth_similarity,
            backend,
            script,
            model,
            embedding_model,
            episodes
        )
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn backend(&self) -> BackendChoice {
        self.backend.unwrap_or_default()
    }

    pub fn episode_config(&self) -> Result<EpisodeConfig, CliError> {
        let scenario = self.scenario.unwrap_or(Scenario::Empathetic);
        let variant = self.variant.unwrap_or(Variant::Cr);
        let mut config = EpisodeConfig::new(scenario, variant);
        if let Some(k) = self.k {
            config.top_k = k;
        }
        if let Some(t) = self.t {
            config.max_rounds = t;
        }
        config.rng_seed = self.seed();
        config.cf_trigger_policy = self.cf_trigger.unwrap_or_default();
        config.sv_baseline = self.sv_baseline.unwrap_or_default();
        config.reverse_probability = self.reverse_probability.unwrap_or(0.0);
        config.strict_capacity = !self.tolerate_overflow.unwrap_or(false);
        config.track_truth_similarity = self.truth_similarity.unwrap_or(false);
        config.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let file = Settings { k: Some(5), t: Some(4), ..Settings::default() };
        let flags = Settings { k: Some(2), ..Settings::default() };
        let merged = flags.over(file);
        assert_eq!((merged.k, merged.t), (Some(2), Some(4)));
        let config = merged.episode_config().unwrap();
        assert_eq!((config.top_k, config.max_rounds), (2, 4));
    }

    #[test]
    fn defaults_match_episode_defaults() {
        let config = Settings::default().episode_config().unwrap();
        assert_eq!((config.top_k, config.max_rounds), (3, 10));
    }

    #[test]
    fn toml_file_parses() {
        let s: Settings = toml::from_str("variant = \"reflection\"\nk = 4\nbackend = \"scripted\"").unwrap();
        assert_eq!(s.variant, Some(Variant::Reflection));
        assert!(toml::from_str::<Settings>("bogus = 1").is_err());
    }
}
