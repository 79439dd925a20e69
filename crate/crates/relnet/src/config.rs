//! Run configuration: built-in profiles, JSON config files and CLI
//! overrides.
//!
//! Resolution order: profile defaults, then the config file (deep-merged,
//! so a file only needs the keys it changes), then command-line flags.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use relnet_core::analysis::KMeansOptions;
use relnet_core::decoder::NoiseConfig;
use relnet_core::model::ModelConfig;
use relnet_core::physics::{Combo, DatasetSizes, SimConfig};
use relnet_core::train::TrainingConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Desk,
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            _ => Err(Error::Config(format!("unknown profile {s:?} (expected paper or desk)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        })
    }
}

/// Training-objective ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// Fixed encoder/decoder windows instead of random sampling.
    Rst,
    /// Standard-deviation loss weight set to zero.
    Rsdl,
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rst" => Ok(Ablation::Rst),
            "rsdl" => Ok(Ablation::Rsdl),
            _ => Err(Error::Config(format!("unknown ablation {s:?} (expected rst or rsdl)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Candidate cluster counts for silhouette selection.
    pub k_range: Vec<usize>,
    /// Silhouette is computed on a seeded subsample above this many points.
    pub max_silhouette_points: usize,
    pub kmeans: KMeansOptions,
    /// Cluster count used for the accuracy report; the vocabulary size
    /// when absent.
    pub k: Option<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            k_range: vec![2, 3, 4, 5],
            max_silhouette_points: 5000,
            kmeans: KMeansOptions::default(),
            k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Rollout length after the observed prefix.
    pub horizon: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { horizon: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    /// Seeds dataset generation and training.
    pub seed: u64,
    pub combo: Combo,
    pub simulation: SimConfig,
    pub sizes: DatasetSizes,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        let (sizes, model, training) = match profile {
            Profile::Paper => (DatasetSizes::paper(), ModelConfig::paper(), TrainingConfig::paper()),
            Profile::Desk => (DatasetSizes::desk(), ModelConfig::desk(), TrainingConfig::desk()),
        };
        Self {
            profile,
            seed: 0,
            combo: Combo::A,
            simulation: SimConfig::default(),
            sizes,
            model,
            training,
            eval: EvalConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }

    /// Profile defaults with `file` (a JSON object) merged on top. The
    /// file's own `profile` key picks the base unless `profile` is given.
    pub fn from_value(file: Value, profile: Option<Profile>) -> Result<Self> {
        if !file.is_object() {
            return Err(Error::Config("config file must hold a JSON object".into()));
        }
        let base = match (profile, file.get("profile")) {
            (Some(p), _) => p,
            (None, Some(v)) => serde_json::from_value(v.clone())
                .map_err(|e| Error::Config(format!("profile: {e}")))?,
            (None, None) => Profile::Desk,
        };
        let mut merged = serde_json::to_value(Self::profile(base)).expect("config serialises");
        merge(&mut merged, file);
        merged["profile"] = serde_json::to_value(base).expect("profile serialises");
        let mut cfg: Self =
            serde_json::from_value(merged).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.sync_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, profile: Option<Profile>) -> Result<Self> {
        let file = match path {
            Some(p) => crate::jsonio::read_json::<Value>(p)?,
            None => Value::Object(Default::default()),
        };
        Self::from_value(file, profile)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sync_seed();
    }

    fn sync_seed(&mut self) {
        self.training.seed = self.seed;
    }

    pub fn ablate(&mut self, a: Ablation) {
        match a {
            Ablation::Rst => self.training.random_sampling = false,
            Ablation::Rsdl => self.training.weights.sd = 0.0,
        }
    }

    /// Gaussian gate noise with unit standard deviation.
    pub fn gaussian_epsilon(&mut self) {
        self.training.noise = NoiseConfig::gaussian(1.0);
    }

    pub fn validate(&self) -> Result<()> {
        self.simulation.validate()?;
        self.sizes.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        if self.eval.horizon == 0 {
            return Err(Error::Config("eval.horizon must be >= 1".into()));
        }
        if self.training.observed_steps + self.eval.horizon > self.simulation.steps {
            return Err(Error::Config(format!(
                "observed_steps + eval.horizon = {} exceeds the {} simulated steps",
                self.training.observed_steps + self.eval.horizon,
                self.simulation.steps
            )));
        }
        if self.analysis.k_range.is_empty() || self.analysis.k_range.iter().any(|&k| k < 2) {
            return Err(Error::Config("analysis.k_range must be non-empty with every k >= 2".into()));
        }
        if self.analysis.k == Some(0) {
            return Err(Error::Config("analysis.k must be >= 1".into()));
        }
        if self.analysis.max_silhouette_points < 2 {
            return Err(Error::Config("analysis.max_silhouette_points must be >= 2".into()));
        }
        Ok(())
    }
}

/// Recursively overwrites `base` with `over`; objects merge key by key,
/// everything else is replaced.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn profiles_differ_in_scale() {
        let d = RunConfig::profile(Profile::Desk);
        let p = RunConfig::profile(Profile::Paper);
        assert_eq!((d.sizes.train, d.training.epochs, d.model.edge_hidden), (500, 150, 32));
        assert_eq!((p.sizes.train, p.training.epochs, p.model.edge_hidden), (5000, 1000, 128));
    }

    #[test]
    fn file_values_merge_over_profile() {
        let cfg = RunConfig::from_value(json!({"training": {"epochs": 3}, "seed": 9}), None).unwrap();
        assert_eq!(cfg.training.epochs, 3);
        assert_eq!(cfg.training.batch_size, TrainingConfig::desk().batch_size);
        assert_eq!(cfg.training.seed, 9);
        let paper = RunConfig::from_value(json!({"profile": "paper"}), None).unwrap();
        assert_eq!(paper.sizes.train, 5000);
        let forced = RunConfig::from_value(json!({"profile": "paper"}), Some(Profile::Desk)).unwrap();
        assert_eq!(forced.profile, Profile::Desk);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for v in [
            json!({"combo": "z"}),
            json!({"unknown_key": 1}),
            json!({"training": {"epochs": 0}}),
            json!({"analysis": {"k_range": [1, 2]}}),
            json!([1, 2]),
        ] {
            assert!(matches!(RunConfig::from_value(v, None), Err(Error::Config(_) | Error::Core(_))));
        }
    }

    #[test]
    fn ablations() {
        let mut c = RunConfig::profile(Profile::Desk);
        c.ablate(Ablation::Rsdl);
        assert_eq!(c.training.weights.sd, 0.0);
        c.ablate(Ablation::Rst);
        assert!(!c.training.random_sampling);
        assert!("xyz".parse::<Ablation>().is_err());
    }
}
