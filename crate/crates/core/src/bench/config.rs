//! Declarative experiment description, read from TOML or JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::{CliffWalk, MountainCar, QFeatures, QLearnConfig, SyntheticGaussianMdp};
use crate::error::{Error, Result};
use crate::estimators::{Bandwidth, EstimatorKind};
use crate::features::{FeatureMap, RbfFeatures, RbfSpec};
use crate::nuisance::EmptyCells;
use crate::oracle::TabularMdpSpec;
use crate::policy::Policy;

/// One Monte Carlo benchmark: an environment and policy pair, a list of
/// nuisance settings, and the sample sizes and replication count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvConfig,
    #[serde(default)]
    pub policies: PolicyConfig,
    pub settings: Vec<SettingConfig>,
    /// Ascending sample sizes.
    pub sizes: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    /// Number of cross-fitting folds.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub truth: TruthConfig,
    /// Bootstrap resamples for the RMSE standard error.
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    /// Largest tolerated fraction of failed replications per row.
    #[serde(default = "default_failure_fraction")]
    pub max_failure_fraction: f64,
    /// Record wall-clock seconds per row (makes the CSV run-dependent).
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_k() -> usize {
    2
}

fn default_bootstrap() -> usize {
    200
}

fn default_failure_fraction() -> f64 {
    0.05
}

/// Environment by name with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Synthetic(SyntheticGaussianMdp),
    Cliff(CliffWalk),
    MountainCar(MountainCar),
    /// An explicit tabular model, inline or from a JSON file.
    Tabular {
        #[serde(default)]
        spec: Option<TabularMdpSpec>,
        #[serde(default)]
        path: Option<PathBuf>,
    },
}

impl EnvConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Synthetic(_) => "synthetic",
            EnvConfig::Cliff(_) => "cliff",
            EnvConfig::MountainCar(_) => "mountain_car",
            EnvConfig::Tabular { .. } => "tabular",
        }
    }
}

/// Where the behavior and target policies come from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum PolicyConfig {
    /// The environment's built-in pair (synthetic environment only).
    #[default]
    Default,
    Explicit { behavior: Policy, target: Policy },
    /// `π^b = (1 − α_b) π^d + α_b·uniform` and likewise for `π^e`.
    Mixture {
        pi_d: PiDSource,
        #[serde(default = "default_behavior_alpha")]
        behavior_alpha: f64,
        #[serde(default = "default_target_alpha")]
        target_alpha: f64,
    },
}

fn default_behavior_alpha() -> f64 {
    0.8
}

fn default_target_alpha() -> f64 {
    0.9
}

/// How to obtain the near-optimal policy `π^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "snake_case")]
pub enum PiDSource {
    /// q-learning; `features` defaults to tabular for finite state spaces and
    /// to the environment's RBF expansion otherwise.
    Train {
        #[serde(default)]
        episodes: Option<usize>,
        #[serde(default)]
        learning_rate: Option<f64>,
        #[serde(default)]
        epsilon: Option<f64>,
        #[serde(default)]
        discount: Option<f64>,
        #[serde(default)]
        features: Option<QFeatures>,
        #[serde(default)]
        seed: u64,
    },
    /// A policy JSON written by `train-pid`.
    Load { path: PathBuf },
}

impl PiDSource {
    /// q-learning settings with environment-dependent defaults filled in.
    pub fn qlearn_config(&self, env: &EnvConfig) -> Option<(QLearnConfig, u64)> {
        let PiDSource::Train {
            episodes,
            learning_rate,
            epsilon,
            discount,
            features,
            seed,
        } = self
        else {
            return None;
        };
        let base = QLearnConfig::default();
        let features = features.clone().unwrap_or_else(|| match env {
            EnvConfig::MountainCar(mc) => QFeatures::Rbf(mc.rbf_spec(*seed)),
            _ => QFeatures::Tabular,
        });
        Some((
            QLearnConfig {
                episodes: episodes.unwrap_or(base.episodes),
                learning_rate: learning_rate.unwrap_or(base.learning_rate),
                epsilon: epsilon.unwrap_or(base.epsilon),
                discount: discount.unwrap_or(base.discount),
                features,
            },
            *seed,
        ))
    }
}

/// Ground-truth computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    /// On-policy rollouts for environments without an exact model.
    #[serde(default = "default_rollouts")]
    pub rollouts: usize,
    /// Directory holding cached values keyed by a hash of env and target.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

fn yes() -> bool {
    true
}

fn default_rollouts() -> usize {
    1_000_000
}

impl Default for TruthConfig {
    fn default() -> Self {
        TruthConfig {
            rollouts: default_rollouts(),
            cache_dir: None,
        }
    }
}

/// A named nuisance specification shared by a list of estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingConfig {
    pub name: String,
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub q: Option<QConfig>,
    /// Marginal-ratio nuisance for MIS and the M2 estimators.
    #[serde(default)]
    pub mu: Option<MuConfig>,
}

/// Feature maps as written in configs; RBF maps are given by their sampling spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureConfig {
    Intercept,
    Polynomial { powers: Vec<i32> },
    Interaction { powers: Vec<i32> },
    /// One-hot over the environment's finite state space.
    Tabular,
    Rbf(RbfSpec),
    /// The environment's default RBF expansion (Mountain Car).
    EnvRbf {
        #[serde(default)]
        seed: u64,
    },
}

impl FeatureConfig {
    pub fn resolve(&self, env: &EnvConfig, n_states: Option<usize>) -> Result<FeatureMap> {
        Ok(match self {
            FeatureConfig::Intercept => FeatureMap::Intercept,
            FeatureConfig::Polynomial { powers } => FeatureMap::Polynomial { powers: powers.clone() },
            FeatureConfig::Interaction { powers } => FeatureMap::Interaction { powers: powers.clone() },
            FeatureConfig::Tabular => FeatureMap::Tabular {
                n_states: n_states.ok_or(Error::InfiniteStateSpace("tabular features"))?,
            },
            FeatureConfig::Rbf(spec) => FeatureMap::Rbf(RbfFeatures::sample(spec)?),
            FeatureConfig::EnvRbf { seed } => match env {
                EnvConfig::MountainCar(mc) => FeatureMap::Rbf(RbfFeatures::sample(&mc.rbf_spec(*seed))?),
                _ => return Err(Error::config("env_rbf features are only defined for mountain_car")),
            },
        })
    }
}

/// q-function nuisance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QConfig {
    /// Backward-recursive ridge regression.
    Linear {
        features: FeatureConfig,
        #[serde(default = "crate::estimators::default_ridge")]
        ridge: f64,
        /// Filling of one-hot cells without data.
        #[serde(default)]
        empty_cells: EmptyCells,
    },
    /// Exact q from dynamic programming (tabular models only).
    Oracle,
    Zero,
}

/// Marginal-ratio nuisance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MuConfig {
    /// Least squares of `λ_t` on features of `(s_t, a_t)`.
    LsMu {
        features: FeatureConfig,
        #[serde(default = "crate::estimators::default_ridge")]
        ridge: f64,
        #[serde(default)]
        clip: Option<f64>,
        /// Clip predictions below at zero; `false` gives plain least squares.
        #[serde(default = "yes")]
        nonnegative: bool,
    },
    HistogramW {
        #[serde(default)]
        clip: Option<f64>,
    },
    KernelW {
        bandwidth: Bandwidth,
        /// Per-coordinate state scales; defaults to ones.
        #[serde(default)]
        scales: Option<Vec<f64>>,
        #[serde(default)]
        clip: Option<f64>,
    },
    /// Exact `μ` from forward recursion (tabular models only).
    Oracle,
    /// The cumulative ratio `λ_t` itself.
    KnownLambda,
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the extension is `.json`. Relative input paths
    /// are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = if path.extension().is_some_and(|x| x == "json") {
            ExperimentConfig::from_json(&text)?
        } else {
            ExperimentConfig::from_toml(&text)?
        };
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let EnvConfig::Tabular { path: Some(p), .. } = &mut self.env {
            fix(p);
        }
        if let Some(p) = &mut self.output {
            fix(p);
        }
        if let Some(p) = &mut self.truth.cache_dir {
            fix(p);
        }
        if let PolicyConfig::Mixture {
            pi_d: PiDSource::Load { path },
            ..
        } = &mut self.policies
        {
            fix(path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::config("replications must be at least 1"));
        }
        if self.sizes.is_empty() || self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("sizes must be non-empty and strictly ascending"));
        }
        if self.bootstrap < 2 {
            return Err(Error::config("bootstrap needs at least 2 resamples"));
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return Err(Error::config("max_failure_fraction must lie in [0, 1]"));
        }
        if self.truth.rollouts < 2 {
            return Err(Error::config("truth.rollouts must be at least 2"));
        }
        if self.settings.is_empty() {
            return Err(Error::config("at least one setting is required"));
        }
        let uses_folds = self.settings.iter().flat_map(|s| &s.estimators).any(|e| e.needs_folds());
        if uses_folds && (self.k < 2 || self.sizes[0] < self.k) {
            return Err(Error::InvalidFoldCount {
                k: self.k,
                n: self.sizes[0],
            });
        }
        for (i, s) in self.settings.iter().enumerate() {
            if self.settings[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::config(format!("duplicate setting name {:?}", s.name)));
            }
            if s.estimators.is_empty() {
                return Err(Error::config(format!("setting {:?} lists no estimators", s.name)));
            }
            for e in &s.estimators {
                if e.needs_q() && s.q.is_none() {
                    return Err(Error::config(format!("setting {:?}: {e} needs a q model", s.name)));
                }
                if e.needs_mu() && s.mu.is_none() {
                    return Err(Error::config(format!("setting {:?}: {e} needs a mu model", s.name)));
                }
            }
        }
        match &self.env {
            EnvConfig::Synthetic(env) => env.validate()?,
            EnvConfig::Tabular { spec, path } if spec.is_some() == path.is_some() => {
                return Err(Error::config("tabular env needs exactly one of spec or path"));
            }
            _ => {}
        }
        if let PolicyConfig::Mixture {
            behavior_alpha,
            target_alpha,
            ..
        } = &self.policies
        {
            for a in [behavior_alpha, target_alpha] {
                if !(0.0..=1.0).contains(a) {
                    return Err(Error::config(format!("mixture weight {a} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        name = "t"
        sizes = [100, 200]
        replications = 3
        seed = 1
        [env]
        kind = "cliff"
        [policies]
        source = "mixture"
        pi_d = { from = "load", path = "pid.json" }
        [[settings]]
        name = "s"
        estimators = ["is", "drl_m1"]
        q = { kind = "linear", features = { kind = "tabular" } }
    "#;

    #[test]
    fn defaults_are_filled_in() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        c.validate().unwrap();
        assert_eq!(c.k, 2);
        assert_eq!(c.bootstrap, 200);
        assert_eq!(c.truth.rollouts, 1_000_000);
        assert_eq!(c.env, EnvConfig::Cliff(CliffWalk { horizon: 400 }));
        let PolicyConfig::Mixture { behavior_alpha, target_alpha, .. } = c.policies else { panic!() };
        assert_eq!((behavior_alpha, target_alpha), (0.8, 0.9));
    }

    #[test]
    fn json_and_toml_agree_and_paths_resolve() {
        let mut c = ExperimentConfig::from_toml(BASE).unwrap();
        c.output = Some("out/table.csv".into());
        c.truth.cache_dir = Some("/abs/cache".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, serde_json::to_string(&c).unwrap()).unwrap();
        let loaded = ExperimentConfig::load(&path).unwrap();
        let PolicyConfig::Mixture { pi_d: PiDSource::Load { path: p }, .. } = &loaded.policies else { panic!() };
        assert_eq!(p, &dir.path().join("pid.json"));
        assert_eq!(loaded.output, Some(dir.path().join("out/table.csv")));
        assert_eq!(loaded.truth.cache_dir, Some(PathBuf::from("/abs/cache")));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = |edit: fn(&mut ExperimentConfig)| {
            let mut c = ExperimentConfig::from_toml(BASE).unwrap();
            edit(&mut c);
            c.validate().unwrap_err()
        };
        bad(|c| c.replications = 0);
        bad(|c| c.sizes = vec![200, 100]);
        bad(|c| c.sizes.clear());
        bad(|c| c.settings[0].q = None);
        bad(|c| c.settings[0].estimators.push(EstimatorKind::Mis));
        bad(|c| c.settings.push(c.settings[0].clone()));
        assert!(matches!(bad(|c| c.k = 1), Error::InvalidFoldCount { .. }));
        assert!(ExperimentConfig::from_toml(&BASE.replace("seed = 1", "seed = 1\nbogus = 2")).is_err());
        assert!(ExperimentConfig::from_toml(&BASE.replace("\"is\"", "\"nope\"")).is_err());
    }

    #[test]
    fn qlearn_defaults_depend_on_env() {
        let src = PiDSource::Train {
            episodes: None,
            learning_rate: None,
            epsilon: None,
            discount: None,
            features: None,
            seed: 4,
        };
        let (cfg, _) = src.qlearn_config(&EnvConfig::Cliff(CliffWalk::default())).unwrap();
        assert_eq!(cfg.features, QFeatures::Tabular);
        assert_eq!(cfg.episodes, 4000);
        let mc = MountainCar::default();
        let (cfg, seed) = src.qlearn_config(&EnvConfig::MountainCar(mc.clone())).unwrap();
        assert_eq!(cfg.features, QFeatures::Rbf(mc.rbf_spec(4)));
        assert_eq!(seed, 4);
    }
}
