//! Flat run configuration. Keys follow the usual hyperparameter-table
//! names (`LR`, `UPDATE_EPOCHS`, `popsize`, `sigma_init`, ...) so a table
//! row pastes straight into a config file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::InitMode;
use crate::engine::{HadesConfig, InnerConfig, Variant};
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::es::{EsConfig, Strategy};
use crate::nn::Activation;
use crate::supervised::ClassifyConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Environment id; required by the control commands.
    pub env: Option<String>,
    pub seed: u64,
    pub variant: Variant,
    pub k: usize,
    pub dataset_size: usize,
    pub init: InitMode,
    pub normalizer_episodes: usize,
    /// Stop once the population mean fitness reaches this value.
    pub target_return: Option<f64>,

    #[serde(rename = "LR")]
    pub lr: f64,
    #[serde(rename = "UPDATE_EPOCHS")]
    pub update_epochs: usize,
    #[serde(rename = "MAX_GRAD_NORM")]
    pub max_grad_norm: f64,
    #[serde(rename = "ACTIVATION")]
    pub activation: Activation,
    #[serde(rename = "WIDTH")]
    pub width: usize,
    #[serde(rename = "ANNEAL_LR")]
    pub anneal_lr: bool,
    #[serde(rename = "GREEDY_ACT")]
    pub greedy_act: bool,
    #[serde(rename = "NUM_ENVS")]
    pub num_envs: usize,
    pub rollouts_per_candidate: usize,

    pub strategy: Strategy,
    pub popsize: usize,
    pub n_generations: usize,
    pub sigma_init: f64,
    pub sigma_decay: f64,
    pub sigma_limit: f64,
    pub lrate_init: f64,
    pub lrate_decay: f64,
    pub temperature: f64,

    /// Classification data: `gaussians`, `digits`, a CSV path, or
    /// `idx:<images>,<labels>`.
    pub data: Option<String>,
    pub per_class: usize,
    pub eval_classifiers: usize,
    pub test_fraction: f64,
}

impl Default for RunConfig {
    /// Desk-scale CartPole settings.
    fn default() -> Self {
        Self {
            env: None,
            seed: 0,
            variant: Variant::F,
            k: 2,
            dataset_size: 4,
            init: InitMode::Random,
            normalizer_episodes: 16,
            target_return: None,
            lr: 0.05,
            update_epochs: 50,
            max_grad_norm: 2.0,
            activation: Activation::Tanh,
            width: 32,
            anneal_lr: false,
            greedy_act: false,
            num_envs: 2,
            rollouts_per_candidate: 1,
            strategy: Strategy::OpenEs,
            popsize: 256,
            n_generations: 300,
            sigma_init: 0.3,
            sigma_decay: 0.99,
            sigma_limit: 0.05,
            lrate_init: 0.05,
            lrate_decay: 1.0,
            temperature: 20.0,
            data: None,
            per_class: 1,
            eval_classifiers: 20,
            test_fraction: 0.25,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(field_of(&e, text), e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hades(&self) -> HadesConfig {
        HadesConfig {
            variant: self.variant,
            k: self.k,
            inner: InnerConfig {
                lr: self.lr,
                update_epochs: self.update_epochs,
                max_grad_norm: self.max_grad_norm,
                greedy_act: self.greedy_act,
                anneal_lr: self.anneal_lr,
                width: self.width,
                activation: self.activation,
            },
            rollouts_per_candidate: self.rollouts_per_candidate,
            num_eval_envs: self.num_envs,
            es: EsConfig {
                popsize: self.popsize,
                sigma_init: self.sigma_init,
                sigma_decay: self.sigma_decay,
                sigma_limit: self.sigma_limit,
                lrate_init: self.lrate_init,
                lrate_decay: self.lrate_decay,
                strategy: self.strategy,
                temperature: self.temperature,
                n_generations: self.n_generations,
            },
            dataset_size: self.dataset_size,
            init: self.init,
            normalizer_episodes: self.normalizer_episodes,
            target_return: self.target_return,
        }
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        let name = self
            .env
            .as_deref()
            .ok_or_else(|| Error::config("env", "no environment given"))?;
        EnvSpec::from_name(name)
    }

    /// Checks everything a control run needs before it starts.
    pub fn validate_control(&self) -> Result<(EnvSpec, HadesConfig)> {
        let spec = self.env_spec()?;
        let cfg = self.hades();
        cfg.validate()?;
        if self.init == InitMode::ClassMean {
            return Err(Error::config("init", "class_mean needs labelled data"));
        }
        if let crate::env::ActionSpace::Discrete { n } = spec.action_space {
            if self.dataset_size < n {
                return Err(Error::config(
                    "dataset_size",
                    format!("{} rows cannot cover {n} actions", self.dataset_size),
                ));
            }
        }
        Ok((spec, cfg))
    }

    /// Checks everything a classification run needs before it starts.
    pub fn validate_classify(&self) -> Result<ClassifyConfig> {
        let cfg = ClassifyConfig {
            hades: self.hades(),
            per_class: self.per_class,
            eval_classifiers: self.eval_classifiers,
        };
        cfg.hades.validate()?;
        if self.data.is_none() {
            return Err(Error::config("data", "no classification data given"));
        }
        if self.per_class == 0 {
            return Err(Error::config("per_class", "must be at least 1"));
        }
        if self.eval_classifiers == 0 {
            return Err(Error::config("eval_classifiers", "must be at least 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction", "must lie strictly between 0 and 1"));
        }
        Ok(cfg)
    }
}

/// Name of the key a TOML error points at: the unknown key itself, or the
/// key on the offending line.
fn field_of(e: &toml::de::Error, text: &str) -> String {
    if let Some(rest) = e.message().strip_prefix("unknown field `") {
        return rest.split('`').next().unwrap_or("config").to_string();
    }
    e.span()
        .and_then(|span| {
            let start = text[..span.start].rfind('\n').map_or(0, |p| p + 1);
            let line = text[start..].lines().next()?;
            let key = line.split('=').next()?.trim();
            (!key.is_empty() && line.contains('=')).then(|| key.to_string())
        })
        .unwrap_or_else(|| "config".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_names_parse_and_round_trip() {
        let text = "env = \"cartpole\"\nLR = 0.005\nUPDATE_EPOCHS = 400\nMAX_GRAD_NORM = 0.5\n\
                    ACTIVATION = \"tanh\"\nWIDTH = 512\nANNEAL_LR = false\nGREEDY_ACT = false\n\
                    NUM_ENVS = 4\npopsize = 2048\ndataset_size = 64\nrollouts_per_candidate = 1\n\
                    n_generations = 2000\nsigma_init = 0.03\nsigma_decay = 1.0\nlrate_init = 0.05\n\
                    strategy = \"OpenES\"\n";
        let c = RunConfig::from_toml(text).unwrap();
        assert_eq!((c.lr, c.update_epochs, c.width, c.popsize), (0.005, 400, 512, 2048));
        assert_eq!(c.strategy, Strategy::OpenEs);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::from_toml("popsiz = 3").unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field == "popsiz"), "{e}");
        let c = RunConfig {
            popsize: 7,
            env: Some("cartpole".into()),
            ..RunConfig::default()
        };
        let e = c.validate_control().unwrap_err();
        assert!(
            matches!(e, Error::Config { ref field, .. } if field == "popsize"),
            "{e}"
        );
        let e = RunConfig::default().validate_control().unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field == "env"), "{e}");
        let c = RunConfig {
            env: Some("acrobot".into()),
            dataset_size: 2,
            ..RunConfig::default()
        };
        assert!(c.validate_control().unwrap_err().is_config_error());
        let e = RunConfig::from_toml("seed = 1\nLR = \"fast\"").unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field == "LR"), "{e}");
    }
}
