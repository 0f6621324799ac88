//! Turning a configuration into a concrete environment, policy pair and set of
//! nuisance learners.

use std::path::Path;

use crate::data::{SpaceSpec, StateKind, StateRef};
use crate::envs::{
    mixture_policy, train_q_learning, CliffWalk, Environment, MountainCar, SyntheticGaussianMdp,
};
use crate::error::{Error, Result};
use crate::estimators::{
    FixedMu, FixedQ, HistogramWLearner, KernelWLearner, KnownLambda, LinearQLearner, LsMuLearner, QLearner,
    RatioLearner,
};
use crate::oracle::{dp_q, exact_mu, TabularMdpSpec};
use crate::policy::Policy;

use super::config::{EnvConfig, ExperimentConfig, MuConfig, PiDSource, PolicyConfig, QConfig, SettingConfig};

/// A constructed environment.
#[derive(Clone, Debug)]
pub enum BuiltEnv {
    Synthetic(SyntheticGaussianMdp),
    Cliff(CliffWalk),
    MountainCar(MountainCar),
    Tabular(TabularMdpSpec),
}

/// Evaluates `$body` with `$e` bound to the concrete environment.
#[macro_export]
macro_rules! with_env {
    ($env:expr, $e:ident => $body:expr) => {
        match $env {
            $crate::bench::BuiltEnv::Synthetic($e) => $body,
            $crate::bench::BuiltEnv::Cliff($e) => $body,
            $crate::bench::BuiltEnv::MountainCar($e) => $body,
            $crate::bench::BuiltEnv::Tabular($e) => $body,
        }
    };
}

impl BuiltEnv {
    pub fn from_config(config: &EnvConfig) -> Result<Self> {
        Ok(match config {
            EnvConfig::Synthetic(e) => {
                e.validate()?;
                BuiltEnv::Synthetic(e.clone())
            }
            EnvConfig::Cliff(e) => BuiltEnv::Cliff(e.clone()),
            EnvConfig::MountainCar(e) => BuiltEnv::MountainCar(e.clone()),
            EnvConfig::Tabular { spec: Some(s), .. } => BuiltEnv::Tabular(s.clone()),
            EnvConfig::Tabular { path: Some(p), .. } => BuiltEnv::Tabular(load_json(p)?),
            EnvConfig::Tabular { .. } => return Err(Error::config("tabular env needs spec or path")),
        })
    }

    pub fn space(&self) -> SpaceSpec {
        with_env!(self, e => e.space())
    }

    /// The exact tabular model, when the environment has one.
    pub fn tabular_model(&self) -> Option<TabularMdpSpec> {
        match self {
            BuiltEnv::Cliff(e) => Some(TabularMdpSpec::from_cliff(e)),
            BuiltEnv::Tabular(s) => Some(s.clone()),
            _ => None,
        }
    }

    /// A stable description of the dynamics, used as a cache key.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(match self {
            BuiltEnv::Synthetic(e) => format!("synthetic:{}", serde_json::to_string(e)?),
            BuiltEnv::Cliff(e) => format!("cliff:{}", serde_json::to_string(e)?),
            BuiltEnv::MountainCar(e) => format!("mountain_car:{}", serde_json::to_string(e)?),
            BuiltEnv::Tabular(s) => format!("tabular:{}", serde_json::to_string(s)?),
        })
    }
}

pub(crate) fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

/// Builds `π^d` as configured (training or loading it).
pub fn build_pi_d(env: &BuiltEnv, env_config: &EnvConfig, source: &PiDSource) -> Result<Policy> {
    match source {
        PiDSource::Load { path } => load_json(path),
        PiDSource::Train { .. } => {
            let (cfg, seed) = source.qlearn_config(env_config).expect("train source");
            cfg.validate()?;
            with_env!(env, e => train_q_learning(e, &cfg, seed))
        }
    }
}

/// `(behavior, target)` for the configured policy source.
pub fn build_policies(env: &BuiltEnv, config: &ExperimentConfig) -> Result<(Policy, Policy)> {
    let (b, e) = match &config.policies {
        PolicyConfig::Default => match env {
            BuiltEnv::Synthetic(_) => (
                SyntheticGaussianMdp::behavior_policy(),
                SyntheticGaussianMdp::target_policy(),
            ),
            _ => return Err(Error::config("default policies exist only for the synthetic env")),
        },
        PolicyConfig::Explicit { behavior, target } => (behavior.clone(), target.clone()),
        PolicyConfig::Mixture {
            pi_d,
            behavior_alpha,
            target_alpha,
        } => {
            let base = build_pi_d(env, &config.env, pi_d)?;
            (
                mixture_policy(base.clone(), *behavior_alpha)?,
                mixture_policy(base, *target_alpha)?,
            )
        }
    };
    let space = env.space();
    b.check_space(&space)?;
    e.check_space(&space)?;
    Ok((b, e))
}

/// The learners of one setting; absent when no estimator needs them.
pub struct SettingLearners {
    pub q: Option<Box<dyn QLearner>>,
    pub mu: Option<Box<dyn RatioLearner>>,
}

pub fn build_learners(
    setting: &SettingConfig,
    env: &BuiltEnv,
    env_config: &EnvConfig,
    behavior: &Policy,
    target: &Policy,
) -> Result<SettingLearners> {
    let space = env.space();
    let n_states = space.cardinality();
    let model = || {
        env.tabular_model()
            .ok_or_else(|| Error::config(format!("setting {:?}: oracle nuisances need a tabular env", setting.name)))
    };
    let q: Option<Box<dyn QLearner>> = match &setting.q {
        None => None,
        Some(QConfig::Linear {
            features,
            ridge,
            empty_cells,
        }) => {
            let features = features.resolve(env_config, n_states)?;
            features.check_space(&space)?;
            Some(Box::new(LinearQLearner {
                features,
                ridge: *ridge,
                empty_cells: *empty_cells,
            }))
        }
        Some(QConfig::Oracle) => Some(Box::new(FixedQ::new(dp_q(&model()?, target)?))),
        Some(QConfig::Zero) => Some(Box::new(FixedQ::zero())),
    };
    let mu: Option<Box<dyn RatioLearner>> = match &setting.mu {
        None => None,
        Some(MuConfig::LsMu {
            features,
            ridge,
            clip,
            nonnegative,
        }) => {
            let features = features.resolve(env_config, n_states)?;
            features.check_space(&space)?;
            Some(Box::new(LsMuLearner {
                features,
                ridge: *ridge,
                clip: *clip,
                nonnegative: *nonnegative,
            }))
        }
        Some(MuConfig::HistogramW { clip }) => {
            if n_states.is_none() {
                return Err(Error::InfiniteStateSpace("histogram w"));
            }
            Some(Box::new(HistogramWLearner { clip: *clip }))
        }
        Some(MuConfig::KernelW { bandwidth, scales, clip }) => {
            let StateKind::RealVector { dimension } = space.state else {
                return Err(Error::config("kernel w needs real-vector states"));
            };
            let scales = scales.clone().unwrap_or_else(|| vec![1.0; dimension]);
            if scales.len() != dimension {
                return Err(Error::config(format!("kernel scales need {dimension} entries")));
            }
            Some(Box::new(KernelWLearner {
                bandwidth: bandwidth.clone(),
                scales,
                clip: *clip,
            }))
        }
        Some(MuConfig::Oracle) => {
            let table = exact_mu(&model()?, behavior, target)?;
            Some(Box::new(FixedMu::new(move |t, s: StateRef<'_>, a| table.mu(t, s.code(), a))))
        }
        Some(MuConfig::KnownLambda) => Some(Box::new(KnownLambda)),
    };
    Ok(SettingLearners { q, mu })
}
