use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::env::synth::{CONTINUOUS_ACTION_DIM, CONTINUOUS_USER_DIM};
use crate::env::{ExitConfig, ExitThreshold, LogSpec};
use crate::policy::{ActMode, PolicyConfig, PpoConfig};
use crate::usermodel::{ExposureConfig, LossKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    SyntheticCategorical,
    SyntheticContinuous,
    Files,
}

impl std::str::FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "synthetic-categorical" => Ok(Self::SyntheticCategorical),
            "synthetic-continuous" => Ok(Self::SyntheticContinuous),
            "files" => Ok(Self::Files),
            _ => Err(format!(
                "unknown env `{s}` (expected synthetic-categorical, synthetic-continuous or files)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Cirs,
    CirsNoCi,
    Random,
    EpsGreedy,
    Ucb,
    SoftmaxStatic,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        Self::Cirs,
        Self::CirsNoCi,
        Self::Random,
        Self::EpsGreedy,
        Self::Ucb,
        Self::SoftmaxStatic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Cirs => "cirs",
            Self::CirsNoCi => "cirs-no-ci",
            Self::Random => "random",
            Self::EpsGreedy => "eps-greedy",
            Self::Ucb => "ucb",
            Self::SoftmaxStatic => "softmax-static",
        }
    }

    /// Whether the policy is trained by RL planning.
    pub fn plans(self) -> bool {
        matches!(self, Self::Cirs | Self::CirsNoCi)
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

/// Where the evaluation world and training logs come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub n_users: usize,
    pub n_items: usize,
    /// Tag vocabulary of a synthetic categorical catalog.
    pub vocab: usize,
    pub user_dim: usize,
    pub action_dim: usize,
    /// Exit window N.
    pub window: usize,
    /// Shared-tag exit threshold; categorical catalogs only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_q: Option<usize>,
    /// Distance exit threshold.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_q: Option<f64>,
    /// Horizon H.
    pub max_round: usize,
    /// Fully observed rating matrix (`files` only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    /// Training log (`files` only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logs: Option<PathBuf>,
    /// Tag vocabulary for a tag catalog file; inferred when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catalog_vocab: Option<usize>,
    /// Rating normalizer; defaults to the matrix maximum for files.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rating_scale: Option<f64>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            kind: EnvKind::SyntheticCategorical,
            n_users: 20,
            n_items: 100,
            vocab: 10,
            user_dim: CONTINUOUS_USER_DIM,
            action_dim: CONTINUOUS_ACTION_DIM,
            window: 1,
            n_q: None,
            d_q: None,
            max_round: 30,
            matrix: None,
            catalog: None,
            logs: None,
            catalog_vocab: None,
            rating_scale: None,
        }
    }
}

impl EnvConfig {
    /// Default distance threshold for vector catalogs.
    pub const DEFAULT_D_Q: f64 = 3.0;

    pub fn exit_config(&self) -> Result<ExitConfig, HarnessError> {
        let threshold = match (self.n_q, self.d_q) {
            (Some(_), Some(_)) => {
                return Err(HarnessError::Config(
                    "set only one of env.n_q and env.d_q".into(),
                ))
            }
            (Some(n), None) => ExitThreshold::SharedTags(n),
            (None, Some(d)) => ExitThreshold::Distance(d),
            (None, None) => match self.kind {
                EnvKind::SyntheticContinuous => ExitThreshold::Distance(Self::DEFAULT_D_Q),
                _ => ExitThreshold::SharedTags(1),
            },
        };
        let exit = ExitConfig {
            window: self.window,
            threshold,
            max_round: self.max_round,
        };
        exit.validate().map_err(HarnessError::Config)?;
        Ok(exit)
    }
}

/// Settings of the non-RL comparison policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub eps: f64,
    pub ucb_c: f64,
    pub softmax_temperature: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            ucb_c: 1.0,
            softmax_temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub policy: PolicyKind,
    /// Planning epochs; one metrics row per epoch.
    pub epochs: usize,
    pub eval_trajectories: usize,
    pub eval_mode: ActMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub env: EnvConfig,
    pub logs: LogSpec,
    pub user_model: TrainConfig,
    pub exposure: ExposureConfig,
    pub planner: PolicyConfig,
    pub baselines: BaselineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let user_model = TrainConfig {
            loss: LossKind::Mse,
            ..TrainConfig::default()
        };
        let planner = PolicyConfig {
            ppo: PpoConfig {
                gamma: 0.5,
                minibatch_size: 2,
                actor_lr: 3e-3,
                critic_lr: 3e-3,
                tracker_lr: 3e-3,
                ..PpoConfig::default()
            },
            ..PolicyConfig::default()
        };
        Self {
            seed: 0,
            policy: PolicyKind::Cirs,
            epochs: 150,
            eval_trajectories: 100,
            eval_mode: ActMode::Sample,
            out_dir: None,
            env: EnvConfig::default(),
            logs: LogSpec::default(),
            user_model,
            exposure: ExposureConfig {
                tau_star: 0.05,
                ..ExposureConfig::default()
            },
            planner,
            baselines: BaselineConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Exposure settings the selected policy's user model is trained with.
    pub fn effective_exposure(&self) -> ExposureConfig {
        match self.policy {
            PolicyKind::Cirs => self.exposure,
            _ => ExposureConfig {
                gamma_star: self.exposure.gamma_star,
                ..ExposureConfig::without_exposure()
            },
        }
    }

    /// Check invariants and tie the planning horizon to the environment's.
    pub fn validate(&mut self) -> Result<(), HarnessError> {
        if self.eval_trajectories == 0 {
            return Err(HarnessError::Config(
                "eval_trajectories must be >= 1".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(HarnessError::Config("epochs must be >= 1".into()));
        }
        self.env.exit_config()?;
        let e = &self.env;
        match e.kind {
            EnvKind::Files => {
                for (key, p) in [
                    ("matrix", &e.matrix),
                    ("catalog", &e.catalog),
                    ("logs", &e.logs),
                ] {
                    match p {
                        None => {
                            return Err(HarnessError::Config(format!(
                                "env.{key} is required for files"
                            )))
                        }
                        Some(p) if !p.is_file() => {
                            return Err(HarnessError::Config(format!(
                                "env.{key}: {} does not exist",
                                p.display()
                            )))
                        }
                        _ => {}
                    }
                }
            }
            _ => {
                if e.n_users == 0 || e.n_items == 0 {
                    return Err(HarnessError::Config("env sizes must be >= 1".into()));
                }
            }
        }
        if let Some(s) = e.rating_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(HarnessError::Config(format!(
                    "rating_scale {s} must be > 0"
                )));
            }
        }
        self.user_model
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.exposure
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let h = self.env.max_round;
        self.planner.ppo.horizon = h;
        self.planner.tracker.max_len = self.planner.tracker.max_len.max(h);
        self.planner
            .ppo
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["bogus = 1", "[env]\nwidth = 3", "[planner.ppo]\nclip = 0.1"] {
            assert!(
                matches!(
                    ExperimentConfig::from_toml_str(text),
                    Err(HarnessError::Config(_))
                ),
                "{text}"
            );
        }
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "policy = \"ucb\"\nseed = 9\n[env]\nwindow = 3\nmax_round = 10\n",
        )
        .unwrap();
        assert_eq!(cfg.policy, PolicyKind::Ucb);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.env.window, 3);
        assert_eq!(cfg.env.n_items, 100);
    }

    #[test]
    fn validation() {
        let mut cfg = ExperimentConfig::default();
        cfg.env.max_round = 50;
        cfg.validate().unwrap();
        assert_eq!(cfg.planner.ppo.horizon, 50);

        let mut bad = ExperimentConfig::default();
        bad.eval_trajectories = 0;
        assert!(bad.validate().is_err());

        let mut both = ExperimentConfig::default();
        both.env.n_q = Some(1);
        both.env.d_q = Some(1.0);
        assert!(both.validate().is_err());

        let mut missing = ExperimentConfig::default();
        missing.env.kind = EnvKind::Files;
        missing.env.matrix = Some("/nonexistent/m.csv".into());
        assert!(missing.validate().is_err());
    }

    #[test]
    fn ablation_trains_without_exposure() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.effective_exposure().tau_star > 0.0);
        cfg.policy = PolicyKind::CirsNoCi;
        let e = cfg.effective_exposure();
        assert_eq!((e.tau, e.tau_star), (0.0, 0.0));
    }

    #[test]
    fn names_parse_back() {
        for p in PolicyKind::ALL {
            assert_eq!(p.name().parse::<PolicyKind>().unwrap(), p);
        }
        assert!("greedy".parse::<PolicyKind>().is_err());
        assert_eq!("files".parse::<EnvKind>().unwrap(), EnvKind::Files);
    }
}
