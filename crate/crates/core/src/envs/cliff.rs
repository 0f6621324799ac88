use serde::{Deserialize, Serialize};

use super::Environment;
use crate::data::{SpaceSpec, StateRef};
use crate::rng::Rng;

pub const ROWS: usize = 4;
pub const COLS: usize = 12;

/// Cliff Walking on a 4×12 grid. State code `row·12 + col`; the agent starts at
/// the bottom-left cell and the goal is the bottom-right cell. Bottom-row cells
/// between them form the cliff.
///
/// Actions: 0 up, 1 right, 2 down, 3 left. Each move costs −1; stepping into the
/// cliff costs −100 and returns the agent to the start; the goal is absorbing
/// with reward 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CliffWalk {
    pub horizon: usize,
}

impl Default for CliffWalk {
    fn default() -> Self {
        CliffWalk { horizon: 400 }
    }
}

impl CliffWalk {
    pub const N_STATES: usize = ROWS * COLS;
    pub const N_ACTIONS: usize = 4;
    pub const START: usize = 36;
    pub const GOAL: usize = 47;
    pub const CLIFF_REWARD: f64 = -100.0;

    pub fn is_cliff(s: usize) -> bool {
        s > Self::START && s < Self::GOAL
    }

    /// Deterministic transition: `(reward, next state)`.
    pub fn transition(s: usize, a: usize) -> (f64, usize) {
        if s == Self::GOAL {
            return (0.0, Self::GOAL);
        }
        let (row, col) = (s / COLS, s % COLS);
        let (r2, c2) = match a {
            0 => (row.saturating_sub(1), col),
            1 => (row, (col + 1).min(COLS - 1)),
            2 => ((row + 1).min(ROWS - 1), col),
            _ => (row, col.saturating_sub(1)),
        };
        let next = r2 * COLS + c2;
        if Self::is_cliff(next) {
            (Self::CLIFF_REWARD, Self::START)
        } else {
            (-1.0, next)
        }
    }
}

impl Environment for CliffWalk {
    type State = usize;

    fn space(&self) -> SpaceSpec {
        SpaceSpec::finite(Self::N_STATES, Self::N_ACTIONS, self.horizon).expect("valid space")
    }

    fn reward_bounds(&self) -> (f64, f64) {
        (Self::CLIFF_REWARD, 0.0)
    }

    fn reset(&self, _rng: &mut Rng) -> usize {
        Self::START
    }

    fn step(&self, _t: usize, s: &usize, a: usize, _rng: &mut Rng) -> (f64, usize) {
        Self::transition(*s, a)
    }

    fn view(state: &usize) -> StateRef<'_> {
        StateRef::Discrete(*state)
    }

    fn is_terminal(&self, s: &usize) -> bool {
        *s == Self::GOAL
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::simulate;
    use crate::policy::{Policy, TabularPolicy};

    #[test]
    fn always_right_falls_off_and_resets() {
        let env = CliffWalk { horizon: 5 };
        let right = Policy::Tabular(TabularPolicy::deterministic(&[1; 48], 4).unwrap());
        let data = simulate(&env, &right, 1, 0).unwrap();
        let traj = data.trajectory(0);
        for t in 0..6 {
            assert_eq!(traj.state(t).code(), CliffWalk::START);
            assert_eq!(traj.reward(t), -100.0);
        }
    }

    #[test]
    fn optimal_path_takes_thirteen_steps() {
        let mut s = CliffWalk::START;
        let mut total = 0.0;
        for a in std::iter::once(0).chain(std::iter::repeat(1).take(11)).chain(std::iter::once(2)) {
            let (r, next) = CliffWalk::transition(s, a);
            total += r;
            s = next;
        }
        assert_eq!(s, CliffWalk::GOAL);
        assert_eq!(total, -13.0);
        assert_eq!(CliffWalk::transition(CliffWalk::GOAL, 3), (0.0, CliffWalk::GOAL));
    }

    #[test]
    fn walls_keep_the_agent_in_place() {
        assert_eq!(CliffWalk::transition(0, 0), (-1.0, 0));
        assert_eq!(CliffWalk::transition(0, 3), (-1.0, 0));
        assert_eq!(CliffWalk::transition(CliffWalk::START, 2), (-1.0, CliffWalk::START));
        assert_eq!(CliffWalk::transition(25, 2), (-100.0, CliffWalk::START));
    }

    #[test]
    fn states_stay_on_the_board() {
        let env = CliffWalk::default();
        let data = simulate(&env, &Policy::uniform(4), 20, 3).unwrap();
        for traj in data.trajectories() {
            for t in 0..traj.len() {
                let s = traj.state(t).code();
                assert!(s < 48 && !CliffWalk::is_cliff(s));
                if traj.reward(t) == -100.0 && t + 1 < traj.len() {
                    assert_eq!(traj.state(t + 1).code(), CliffWalk::START);
                }
            }
        }
    }
}
