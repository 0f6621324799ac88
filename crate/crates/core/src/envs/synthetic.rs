use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::data::{SpaceSpec, StateRef};
use crate::error::{Error, Result};
use crate::policy::{LogisticBernoulli, Policy};
use crate::rng::Rng;

/// Scalar Gaussian MDP with two actions:
/// `s_0 ~ N(μ_0, σ_0)`, `s' ~ N(s + shift·a + drift, σ)`,
/// `r_t = scale·σ(slope·s_t) + ε_t` with `ε_t ~ N(0, σ_r)` clamped to `±4σ_r`.
///
/// Rewards are bounded in `(−4σ_r, scale + 4σ_r)`; the slope is small enough
/// that the mean reward is nearly linear over the visited states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticGaussianMdp {
    pub horizon: usize,
    pub init_mean: f64,
    pub init_sd: f64,
    pub action_shift: f64,
    pub drift: f64,
    pub noise_sd: f64,
    pub reward_scale: f64,
    pub reward_slope: f64,
    pub reward_noise_sd: f64,
}

impl Default for SyntheticGaussianMdp {
    fn default() -> Self {
        SyntheticGaussianMdp {
            horizon: 30,
            init_mean: 0.5,
            init_sd: 0.2,
            action_shift: 0.3,
            drift: -0.15,
            noise_sd: 0.2,
            reward_scale: 10.0,
            reward_slope: 0.1,
            reward_noise_sd: 0.5,
        }
    }
}

impl SyntheticGaussianMdp {
    pub fn validate(&self) -> Result<()> {
        if !(self.init_sd > 0.0 && self.noise_sd > 0.0 && self.reward_scale > 0.0) {
            return Err(Error::config("synthetic MDP needs positive sds and reward scale"));
        }
        if !(self.reward_noise_sd >= 0.0 && self.reward_noise_sd.is_finite()) {
            return Err(Error::config("reward noise sd must be finite and non-negative"));
        }
        Ok(())
    }

    /// Transition mean `s + shift·a + drift`.
    pub fn transition_mean(&self, s: f64, a: usize) -> f64 {
        s + self.action_shift * a as f64 + self.drift
    }

    /// Mean reward at state `s`.
    pub fn reward(&self, s: f64) -> f64 {
        self.reward_scale / (1.0 + (-self.reward_slope * s).exp())
    }

    /// Evaluation policy `P(a=1|s) = 0.2/(1+e^{−0.1s}) + 0.1`.
    pub fn target_policy() -> Policy {
        Policy::LogisticBernoulli(LogisticBernoulli::new(0.2, 0.1, 0.1).expect("valid"))
    }

    /// Behavior policy `P(a=1|s) = 0.9/(1+e^{−0.1s}) + 0.05`.
    pub fn behavior_policy() -> Policy {
        Policy::LogisticBernoulli(LogisticBernoulli::new(0.9, 0.1, 0.05).expect("valid"))
    }
}

/// Reward noise is clamped at this many standard deviations.
const REWARD_NOISE_CLAMP: f64 = 4.0;

impl Environment for SyntheticGaussianMdp {
    type State = [f64; 1];

    fn space(&self) -> SpaceSpec {
        SpaceSpec::real(1, 2, self.horizon).expect("valid space")
    }

    fn reward_bounds(&self) -> (f64, f64) {
        let m = REWARD_NOISE_CLAMP * self.reward_noise_sd;
        (-m, self.reward_scale + m)
    }

    fn reset(&self, rng: &mut Rng) -> [f64; 1] {
        [Normal::new(self.init_mean, self.init_sd).expect("sd > 0").sample(rng)]
    }

    fn step(&self, _t: usize, s: &[f64; 1], a: usize, rng: &mut Rng) -> (f64, [f64; 1]) {
        let mut r = self.reward(s[0]);
        if self.reward_noise_sd > 0.0 {
            let m = REWARD_NOISE_CLAMP * self.reward_noise_sd;
            let e: f64 = rand_distr::StandardNormal.sample(rng);
            r += (self.reward_noise_sd * e).clamp(-m, m);
        }
        let mean = self.transition_mean(s[0], a);
        let next = Normal::new(mean, self.noise_sd).expect("sd > 0").sample(rng);
        (r, [next])
    }

    fn view(state: &[f64; 1]) -> StateRef<'_> {
        StateRef::Real(state)
    }
}
