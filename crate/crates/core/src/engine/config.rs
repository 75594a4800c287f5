use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::searchspace::TaskStats;
use crate::supernet::SupernetConfig;

/// How surrogate rewards score a rollout against the planted vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateMode {
    /// Mean over decisions of `1` for a match and `miss_reward` otherwise.
    PerDecision,
    /// `1` for the exact planted vector, `miss_reward` for anything else.
    Exact,
}

/// Replaces dice evaluation with a deterministic function of the choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub mode: SurrogateMode,
    pub miss_reward: f64,
    /// Planted choice indices; drawn from the seed when absent.
    pub planted: Option<Vec<usize>>,
    /// Schema statistics to search over when no dataset is given.
    pub stats: Option<TaskStats>,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            mode: SurrogateMode::PerDecision,
            miss_reward: 0.1,
            planted: None,
            stats: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: Option<PathBuf>,
    pub fold: usize,
    pub folds: usize,
    pub episodes: usize,
    pub rollouts_per_episode: usize,
    pub child_epochs_per_episode: usize,
    pub child_lr: f64,
    pub child_weight_decay: f64,
    pub controller_lr: f64,
    pub controller_weight_decay: f64,
    pub entropy_coef: f64,
    pub baseline_decay: f64,
    pub controller_hidden: usize,
    pub controller_embedding: usize,
    pub batch_size: usize,
    pub base_channels: usize,
    pub seed: u64,
    pub surrogate: Option<SurrogateConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: None,
            fold: 0,
            folds: 5,
            episodes: 150,
            rollouts_per_episode: 20,
            child_epochs_per_episode: 3,
            child_lr: 1e-3,
            child_weight_decay: 1e-5,
            controller_lr: 1e-3,
            controller_weight_decay: 1e-6,
            entropy_coef: 1e-4,
            baseline_decay: 0.95,
            controller_hidden: 64,
            controller_embedding: 32,
            batch_size: 2,
            base_channels: 4,
            seed: 0,
            surrogate: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.folds < 2 || self.fold >= self.folds {
            return fail(format!("fold {} must be below fold count {} (>= 2)", self.fold, self.folds));
        }
        for (name, v) in [
            ("child_lr", self.child_lr),
            ("controller_lr", self.controller_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("child_weight_decay", self.child_weight_decay),
            ("controller_weight_decay", self.controller_weight_decay),
            ("entropy_coef", self.entropy_coef),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.rollouts_per_episode == 0 || self.batch_size == 0 {
            return fail("rollouts_per_episode and batch_size must be positive".into());
        }
        match &self.surrogate {
            Some(s) => {
                if !(0.0..=1.0).contains(&s.miss_reward) {
                    return fail(format!("miss_reward {} outside [0, 1]", s.miss_reward));
                }
                if s.stats.is_none() && self.data.is_none() {
                    return fail("surrogate mode needs either stats or a dataset".into());
                }
            }
            None => {
                if self.data.is_none() {
                    return fail("a dataset path is required".into());
                }
            }
        }
        self.controller().validate()
    }

    pub fn controller(&self) -> ControllerConfig {
        ControllerConfig {
            hidden: self.controller_hidden,
            embedding: self.controller_embedding,
            lr: self.controller_lr,
            weight_decay: self.controller_weight_decay,
            entropy_coef: self.entropy_coef,
            baseline_decay: self.baseline_decay,
            ..ControllerConfig::default()
        }
    }

    pub fn supernet(&self, stats: &TaskStats) -> SupernetConfig {
        SupernetConfig {
            base_channels: self.base_channels,
            in_channels: stats.in_channels,
            out_channels: stats.out_channels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_setup() {
        let c = ExperimentConfig::default();
        assert_eq!((c.rollouts_per_episode, c.child_epochs_per_episode, c.folds), (20, 3, 5));
        assert_eq!((c.child_lr, c.child_weight_decay), (1e-3, 1e-5));
        assert_eq!((c.controller_lr, c.controller_weight_decay, c.entropy_coef), (1e-3, 1e-6, 1e-4));
    }

    #[test]
    fn json_overrides_and_rejects_unknown_keys() {
        let c = ExperimentConfig::from_json(r#"{"episodes": 7, "data": "d"}"#).unwrap();
        assert_eq!(c.episodes, 7);
        assert!(c.validate().is_ok());
        assert!(ExperimentConfig::from_json(r#"{"epochs": 7}"#).is_err());
    }

    #[test]
    fn invalid_settings_are_config_errors() {
        let base = ExperimentConfig {
            data: Some("d".into()),
            ..Default::default()
        };
        for bad in [
            ExperimentConfig { fold: 5, ..base.clone() },
            ExperimentConfig { child_lr: 0.0, ..base.clone() },
            ExperimentConfig { entropy_coef: -1.0, ..base.clone() },
            ExperimentConfig { data: None, ..base.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
