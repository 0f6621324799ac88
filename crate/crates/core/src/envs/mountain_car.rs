use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::data::{SpaceSpec, StateRef};
use crate::features::RbfSpec;
use crate::rng::Rng;

/// Mountain Car on positions `[min_position, goal_position]`.
///
/// `v' = clamp(v + thrust·(a − 1) − gravity·cos(3x), ±max_speed)`, `x' = clamp(x + v')`;
/// hitting the left wall zeroes the velocity. The goal is absorbing; every step
/// taken outside the goal costs −1. Actions: 0 back, 1 coast, 2 forward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MountainCar {
    pub horizon: usize,
    pub min_position: f64,
    pub goal_position: f64,
    pub max_speed: f64,
    pub thrust: f64,
    pub gravity: f64,
    pub start_low: f64,
    pub start_high: f64,
}

impl Default for MountainCar {
    fn default() -> Self {
        MountainCar {
            horizon: 200,
            min_position: -0.7,
            goal_position: 0.5,
            max_speed: 0.07,
            thrust: 0.0015,
            gravity: 0.0025,
            start_low: -0.6,
            start_high: -0.4,
        }
    }
}

impl MountainCar {
    pub fn physics(&self, s: &[f64; 2], a: usize) -> [f64; 2] {
        let [x, v] = *s;
        let mut v2 = v + self.thrust * (a as f64 - 1.0) - self.gravity * (3.0 * x).cos();
        v2 = v2.clamp(-self.max_speed, self.max_speed);
        let mut x2 = x + v2;
        if x2 <= self.min_position {
            x2 = self.min_position;
            v2 = 0.0;
        }
        if x2 >= self.goal_position {
            x2 = self.goal_position;
        }
        [x2, v2]
    }

    /// Random Fourier features over standardized `(position, velocity, action)`.
    pub fn rbf_spec(&self, seed: u64) -> RbfSpec {
        RbfSpec {
            center: vec![
                0.5 * (self.min_position + self.goal_position),
                0.0,
            ],
            width: vec![0.5 * (self.goal_position - self.min_position), self.max_speed],
            n_actions: 3,
            action_scale: 1.0,
            gammas: vec![5.0, 2.0, 1.0, 0.5],
            per_gamma: 100,
            intercept: true,
            seed,
        }
    }
}

impl Environment for MountainCar {
    type State = [f64; 2];

    fn space(&self) -> SpaceSpec {
        SpaceSpec::real(2, 3, self.horizon).expect("valid space")
    }

    fn reward_bounds(&self) -> (f64, f64) {
        (-1.0, 0.0)
    }

    fn reset(&self, rng: &mut Rng) -> [f64; 2] {
        let x = Uniform::new_inclusive(self.start_low, self.start_high)
            .expect("valid range")
            .sample(rng);
        [x, 0.0]
    }

    fn step(&self, _t: usize, s: &[f64; 2], a: usize, _rng: &mut Rng) -> (f64, [f64; 2]) {
        if self.is_terminal(s) {
            return (0.0, *s);
        }
        (-1.0, self.physics(s, a))
    }

    fn view(state: &[f64; 2]) -> StateRef<'_> {
        StateRef::Real(state)
    }

    fn is_terminal(&self, s: &[f64; 2]) -> bool {
        s[0] >= self.goal_position
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::simulate;
    use crate::features::FeatureMap;
    use crate::policy::{ActionValues, GreedyPolicy, Policy};

    #[test]
    fn coasting_never_reaches_the_goal() {
        let env = MountainCar::default();
        let coast = Policy::Greedy(GreedyPolicy::new(ActionValues::Linear {
            features: FeatureMap::Polynomial { powers: vec![0] },
            n_actions: 3,
            weights: vec![0.0, 1.0, 0.0],
        }));
        let data = simulate(&env, &coast, 5, 2).unwrap();
        for traj in data.trajectories() {
            assert!(traj.actions().iter().all(|&a| a == 1));
            assert!(traj.rewards().iter().all(|&r| r == -1.0));
            let xs: Vec<f64> = (0..traj.len()).map(|t| traj.state(t).coords()[0]).collect();
            assert!(xs.iter().any(|&x| x < -0.5236) && xs.iter().any(|&x| x > -0.5236));
        }
    }

    #[test]
    fn energy_pumping_reaches_the_goal() {
        let env = MountainCar::default();
        for x0 in [-0.6, -0.5, -0.4] {
            let mut s = [x0, 0.0];
            let mut steps = 0;
            while !env.is_terminal(&s) && steps < env.horizon {
                let a = if s[1] >= 0.0 { 2 } else { 0 };
                s = env.physics(&s, a);
                steps += 1;
            }
            assert!(env.is_terminal(&s), "start {x0}");
        }
    }

    #[test]
    fn uniform_policy_respects_bounds() {
        let env = MountainCar { horizon: 50, ..Default::default() };
        let data = simulate(&env, &Policy::uniform(3), 10, 1).unwrap();
        for traj in data.trajectories() {
            for t in 0..traj.len() {
                let x = traj.state(t).coords();
                assert!(x[0] >= -0.7 && x[0] <= 0.5 && x[1].abs() <= 0.07);
            }
        }
    }
}
