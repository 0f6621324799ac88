use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::data::StateRef;
use crate::error::{Error, Result};
use crate::features::{FeatureMap, RbfFeatures, RbfSpec};
use crate::policy::{argmax, ActionValues, GreedyPolicy, Policy};
use crate::rng;

/// Function class for the learned action values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QFeatures {
    /// One value per `(s, a)`; requires a finite state space.
    Tabular,
    /// Linear in random Fourier features of `(s, a)`.
    Rbf(RbfSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QLearnConfig {
    pub episodes: usize,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub discount: f64,
    pub features: QFeatures,
}

impl Default for QLearnConfig {
    fn default() -> Self {
        QLearnConfig {
            episodes: 4000,
            learning_rate: 0.1,
            epsilon: 0.1,
            discount: 0.99,
            features: QFeatures::Tabular,
        }
    }
}

impl QLearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::config("q-learning needs at least one episode"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config("exploration rate must lie in [0, 1]"));
        }
        if !(self.learning_rate > 0.0) || !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::config("learning rate must be positive and discount in [0, 1]"));
        }
        Ok(())
    }
}

/// ε-greedy q-learning; returns the greedy policy of the learned values.
///
/// Episode `e` draws from stream `e` of `seed`. Episodes end at the horizon or
/// on reaching a terminal state.
pub fn train_q_learning<E: Environment>(env: &E, config: &QLearnConfig, seed: u64) -> Result<Policy> {
    config.validate()?;
    let space = env.space();
    let na = space.n_actions;
    let values = match &config.features {
        QFeatures::Tabular => {
            let n_states = space
                .cardinality()
                .ok_or(Error::InfiniteStateSpace("tabular q-learning"))?;
            let mut table = Table {
                q: vec![0.0; n_states * na],
                na,
            };
            run(env, config, seed, &mut table)?;
            ActionValues::Table {
                n_states,
                n_actions: na,
                q: table.q,
            }
        }
        QFeatures::Rbf(spec) => {
            let features = FeatureMap::Rbf(RbfFeatures::sample(spec)?);
            features.check_space(&space)?;
            let d = features.dim(na);
            let mut linear = Linear {
                features,
                na,
                d,
                w: vec![0.0; d],
                buf: vec![0.0; d * na],
            };
            run(env, config, seed, &mut linear)?;
            ActionValues::Linear {
                features: linear.features,
                n_actions: na,
                weights: linear.w,
            }
        }
    };
    Ok(Policy::Greedy(GreedyPolicy::new(values)))
}

trait ActionValueLearner {
    fn values(&mut self, s: StateRef<'_>, out: &mut [f64]);
    fn update(&mut self, s: StateRef<'_>, a: usize, step: f64);
}

struct Table {
    q: Vec<f64>,
    na: usize,
}

impl ActionValueLearner for Table {
    fn values(&mut self, s: StateRef<'_>, out: &mut [f64]) {
        let c = s.code();
        out.copy_from_slice(&self.q[c * self.na..(c + 1) * self.na]);
    }

    fn update(&mut self, s: StateRef<'_>, a: usize, step: f64) {
        self.q[s.code() * self.na + a] += step;
    }
}

struct Linear {
    features: FeatureMap,
    na: usize,
    d: usize,
    w: Vec<f64>,
    buf: Vec<f64>,
}

impl ActionValueLearner for Linear {
    fn values(&mut self, s: StateRef<'_>, out: &mut [f64]) {
        self.features.encode_all(s, self.na, &mut self.buf);
        let d = self.d;
        for (a, o) in out.iter_mut().enumerate() {
            *o = self.buf[a * d..(a + 1) * d]
                .iter()
                .zip(&self.w)
                .map(|(x, y)| x * y)
                .sum();
        }
    }

    fn update(&mut self, s: StateRef<'_>, a: usize, step: f64) {
        self.features.encode_all(s, self.na, &mut self.buf);
        let d = self.d;
        for (wj, xj) in self.w.iter_mut().zip(&self.buf[a * d..(a + 1) * d]) {
            *wj += step * xj;
        }
    }
}

fn run<E: Environment, L: ActionValueLearner>(
    env: &E,
    config: &QLearnConfig,
    seed: u64,
    learner: &mut L,
) -> Result<()> {
    let na = env.space().n_actions;
    let steps = env.space().steps();
    let mut q = vec![0.0; na];
    let mut q_next = vec![0.0; na];
    for episode in 0..config.episodes {
        let mut r = rng::stream(seed, episode as u64);
        let mut s = env.reset(&mut r);
        for t in 0..steps {
            if env.is_terminal(&s) {
                break;
            }
            learner.values(E::view(&s), &mut q);
            let a = if r.random::<f64>() < config.epsilon {
                r.random_range(0..na)
            } else {
                argmax(&q)
            };
            let (reward, next) = env.step(t, &s, a, &mut r);
            let bootstrap = if env.is_terminal(&next) {
                0.0
            } else {
                learner.values(E::view(&next), &mut q_next);
                q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            let delta = reward + config.discount * bootstrap - q[a];
            if !delta.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "non-finite temporal difference in episode {episode}, step {t}"
                )));
            }
            learner.update(E::view(&s), a, config.learning_rate * delta);
            s = next;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{rollout, CliffWalk};

    #[test]
    fn cliff_policy_reaches_goal_near_optimally() {
        let env = CliffWalk::default();
        let pi = train_q_learning(&env, &QLearnConfig::default(), 1).unwrap();
        let traj = rollout(&env, &pi, &mut rng::root(0));
        assert_eq!(traj.state(traj.len() - 1).code(), CliffWalk::GOAL);
        assert!(traj.total_reward() >= -20.0, "{}", traj.total_reward());
    }

    #[test]
    fn single_episode_still_returns_a_policy() {
        let env = CliffWalk::default();
        let cfg = QLearnConfig {
            episodes: 1,
            ..Default::default()
        };
        let pi = train_q_learning(&env, &cfg, 0).unwrap();
        assert_eq!(pi.n_actions(), 4);
    }

    #[test]
    fn training_is_deterministic() {
        let env = CliffWalk { horizon: 100 };
        let cfg = QLearnConfig {
            episodes: 50,
            ..Default::default()
        };
        assert_eq!(
            train_q_learning(&env, &cfg, 9).unwrap(),
            train_q_learning(&env, &cfg, 9).unwrap()
        );
    }

    #[test]
    fn rejects_bad_config() {
        let env = CliffWalk::default();
        let cfg = QLearnConfig {
            epsilon: 1.5,
            ..Default::default()
        };
        assert!(matches!(train_q_learning(&env, &cfg, 0), Err(Error::Config(_))));
    }
}
