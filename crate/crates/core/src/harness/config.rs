use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{GeneratorConfig, TARGET_CLASSES};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, DEFAULT_PROXY_DIM};
use crate::train::TrainConfig;

pub const METRIC_NAMES: [&str; 5] = [
    "accuracy",
    "equalodds",
    "equal_opportunity",
    "statistical_parity",
    "counter_p",
];

/// The `model` section. Dimensions that follow from the data section may be
/// omitted; when given they must agree with it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy_dims: Option<Vec<usize>>,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 32]
}

fn default_classes() -> usize {
    TARGET_CLASSES
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            input_dim: None,
            hidden_dims: default_hidden(),
            num_classes: default_classes(),
            proxy_dims: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    #[serde(default = "yes")]
    pub counter_p: bool,
    #[serde(default = "all_metrics")]
    pub metrics: Vec<String>,
}

fn yes() -> bool {
    true
}

fn all_metrics() -> Vec<String> {
    METRIC_NAMES.iter().map(|s| s.to_string()).collect()
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            counter_p: true,
            metrics: all_metrics(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: GeneratorConfig,
    #[serde(default)]
    pub model: ModelSection,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Reference experiment on the reference generator config.
    pub fn reference(rho: &[f64], seed: u64, mode: crate::train::Mode) -> Self {
        ExperimentConfig {
            data: GeneratorConfig::reference(rho, seed),
            model: ModelSection::default(),
            train: TrainConfig::new(mode, seed),
            eval: EvalSection::default(),
            output_dir: default_output(),
        }
    }

    /// Parses and validates a config file, returning it with the SHA-256 of
    /// its bytes.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        cfg.validate()?;
        Ok((cfg, hash_bytes(&bytes)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Hash of the canonical serialisation, used for derived configs.
    pub fn hash(&self) -> String {
        hash_bytes(self.to_json().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        self.model_config()?.validate()?;
        if let Some(bad) = self.eval.metrics.iter().find(|m| !METRIC_NAMES.contains(&m.as_str())) {
            return Err(Error::Config(format!(
                "unknown metric {:?}; expected one of {:?}",
                bad, METRIC_NAMES
            )));
        }
        if !self.data.n_test.is_multiple_of(2usize << self.data.num_bias()) {
            return Err(Error::Config(format!(
                "n_test {} is not divisible into {} balanced cells",
                self.data.n_test,
                2usize << self.data.num_bias()
            )));
        }
        Ok(())
    }

    /// Model config resolved against the data section.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let input_dim = self.data.feature_dim();
        if let Some(d) = self.model.input_dim {
            if d != input_dim {
                return Err(Error::Config(format!(
                    "model.input_dim {} does not match the data feature dimension {}",
                    d, input_dim
                )));
            }
        }
        let k = self.data.num_bias();
        let proxy_dims = match &self.model.proxy_dims {
            Some(dims) if dims.len() != k => {
                return Err(Error::Config(format!(
                    "model.proxy_dims has {} entries for {} bias attributes",
                    dims.len(),
                    k
                )))
            }
            Some(dims) => dims.clone(),
            None => vec![DEFAULT_PROXY_DIM; k],
        };
        if self.model.num_classes != TARGET_CLASSES {
            return Err(Error::Config(format!(
                "generated data has {} target classes, model.num_classes is {}",
                TARGET_CLASSES, self.model.num_classes
            )));
        }
        Ok(ModelConfig {
            input_dim,
            hidden_dims: self.model.hidden_dims.clone(),
            num_classes: self.model.num_classes,
            proxy_dims,
        })
    }

    pub fn test_generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            n_samples: self.data.n_test,
            ..self.data.clone()
        }
    }

    /// Overrides the data and training seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.train.seed = seed;
        self
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::Mode;

    #[test]
    fn reference_round_trips_through_json() {
        let cfg = ExperimentConfig::reference(&[0.9], 3, Mode::ActivePd);
        let back: ExperimentConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.model_config().unwrap().proxy_dims, vec![100]);
        assert_eq!(cfg.model_config().unwrap().input_dim, 20);
    }

    #[test]
    fn minimal_document_uses_defaults() {
        let json = r#"{
            "data": {"n_samples": 100, "dim_target": 2, "dim_bias": [2], "dim_noise": 1,
                     "sep_target": 1.0, "sep_bias": [2.0], "noise_sigma": 1.0, "rho": [0.9]},
            "train": {"mode": "naive_pd"}
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.train.batch_size, 128);
        assert_eq!(cfg.train.epochs, 20);
        assert_eq!(cfg.model.hidden_dims, vec![64, 32]);
        assert_eq!(cfg.data.n_test, 800);
    }

    #[test]
    fn cross_section_dimension_checks() {
        let mut cfg = ExperimentConfig::reference(&[0.9], 0, Mode::ActivePd);
        cfg.model.input_dim = Some(7);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = ExperimentConfig::reference(&[0.9], 0, Mode::ActivePd);
        cfg.model.proxy_dims = Some(vec![10, 10]);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = ExperimentConfig::reference(&[0.9], 0, Mode::ActivePd);
        cfg.eval.metrics = vec!["auc".into()];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = ExperimentConfig::reference(&[0.9, 0.9], 0, Mode::ActivePd);
        cfg.data.n_test = 804;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = ExperimentConfig::load(Path::new("/nonexistent/cfg.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/cfg.json"));
        assert_eq!(err.exit_code(), 2);
    }
}
