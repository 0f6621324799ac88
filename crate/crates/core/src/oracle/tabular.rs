//! Exact finite MDP models: initial law, per-step transition kernels and
//! finite-support reward distributions.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::data::{SpaceSpec, StateRef};
use crate::envs::{CliffWalk, Environment};
use crate::error::{Error, Result};
use crate::policy::{sample_index, Policy, TabularPolicy};
use crate::rng::Rng;

const ROW_TOL: f64 = 1e-12;

/// One support point of a reward distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardAtom {
    pub value: f64,
    pub prob: f64,
}

impl RewardAtom {
    pub fn sure(value: f64) -> Self {
        RewardAtom { value, prob: 1.0 }
    }
}

/// Nested JSON layout: either one `[S][A][·]` block shared by every step or a
/// list of per-step blocks.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum Layered<T> {
    Stationary(Vec<Vec<T>>),
    TimeVarying(Vec<Vec<Vec<T>>>),
}

impl<T: Clone> Layered<T> {
    fn flatten(self, n_states: usize, n_actions: usize, what: &str) -> Result<(usize, Vec<T>)> {
        let layers = match self {
            Layered::Stationary(block) => vec![block],
            Layered::TimeVarying(blocks) => blocks,
        };
        let mut flat = Vec::with_capacity(layers.len() * n_states * n_actions);
        for block in &layers {
            if block.len() != n_states || block.iter().any(|row| row.len() != n_actions) {
                return Err(Error::invalid(format!("{what}: expected {n_states} x {n_actions} cells per layer")));
            }
            flat.extend(block.iter().flatten().cloned());
        }
        Ok((layers.len(), flat))
    }

    fn nest(layers: usize, n_states: usize, n_actions: usize, flat: &[T]) -> Self {
        let blocks: Vec<Vec<Vec<T>>> = flat
            .chunks(n_states * n_actions)
            .map(|block| block.chunks(n_actions).map(|row| row.to_vec()).collect())
            .collect();
        if layers == 1 {
            Layered::Stationary(blocks.into_iter().next().unwrap_or_default())
        } else {
            Layered::TimeVarying(blocks)
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawSpec {
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    initial: Vec<f64>,
    transitions: Layered<Vec<f64>>,
    rewards: Layered<Vec<RewardAtom>>,
}

/// A finite-horizon tabular MDP. Rewards and next states are drawn
/// independently given `(t, s, a)`. Kernels have either one layer (stationary)
/// or `T + 1` layers indexed by `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct TabularMdpSpec {
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    initial: Vec<f64>,
    p_layers: usize,
    /// `[layer][s][a][s']`.
    p: Vec<f64>,
    r_layers: usize,
    /// `[layer][s][a]`.
    atoms: Vec<Vec<RewardAtom>>,
}

impl TryFrom<RawSpec> for TabularMdpSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        let (p_layers, rows) = raw.transitions.flatten(raw.n_states, raw.n_actions, "transitions")?;
        if rows.iter().any(|row| row.len() != raw.n_states) {
            return Err(Error::invalid("transitions: every row needs one entry per next state"));
        }
        let p = rows.into_iter().flatten().collect();
        let (r_layers, atoms) = raw.rewards.flatten(raw.n_states, raw.n_actions, "rewards")?;
        TabularMdpSpec::new(raw.n_states, raw.n_actions, raw.horizon, raw.initial, p_layers, p, r_layers, atoms)
    }
}

impl From<TabularMdpSpec> for RawSpec {
    fn from(spec: TabularMdpSpec) -> Self {
        let (s, a) = (spec.n_states, spec.n_actions);
        let rows: Vec<Vec<f64>> = spec.p.chunks(s).map(|r| r.to_vec()).collect();
        RawSpec {
            n_states: s,
            n_actions: a,
            horizon: spec.horizon,
            initial: spec.initial,
            transitions: Layered::nest(spec.p_layers, s, a, &rows),
            rewards: Layered::nest(spec.r_layers, s, a, &spec.atoms),
        }
    }
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::invalid(format!("{what}: negative or non-finite probability")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOL {
        return Err(Error::invalid(format!("{what}: probabilities sum to {total}")));
    }
    Ok(())
}

impl TabularMdpSpec {
    /// Builds a spec from flat arrays: `p` is `[layer][s][a][s']` and `atoms`
    /// is `[layer][s][a]`; each may have 1 or `horizon + 1` layers.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        initial: Vec<f64>,
        p_layers: usize,
        p: Vec<f64>,
        r_layers: usize,
        atoms: Vec<Vec<RewardAtom>>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("tabular spec needs at least one state and one action"));
        }
        for (layers, what) in [(p_layers, "transitions"), (r_layers, "rewards")] {
            if layers != 1 && layers != horizon + 1 {
                return Err(Error::invalid(format!(
                    "{what}: {layers} layers; expected 1 or {}",
                    horizon + 1
                )));
            }
        }
        if initial.len() != n_states {
            return Err(Error::invalid("initial law has the wrong length"));
        }
        check_distribution(&initial, "initial law")?;
        let sa = n_states * n_actions;
        if p.len() != p_layers * sa * n_states || atoms.len() != r_layers * sa {
            return Err(Error::invalid("tabular spec arrays have the wrong size"));
        }
        for (k, row) in p.chunks(n_states).enumerate() {
            check_distribution(row, &format!("transition row {k}"))?;
        }
        for (k, cell) in atoms.iter().enumerate() {
            if cell.is_empty() || cell.iter().any(|x| !x.value.is_finite()) {
                return Err(Error::invalid(format!("reward cell {k}: empty or non-finite support")));
            }
            let probs: Vec<f64> = cell.iter().map(|x| x.prob).collect();
            check_distribution(&probs, &format!("reward cell {k}"))?;
        }
        Ok(TabularMdpSpec {
            n_states,
            n_actions,
            horizon,
            initial,
            p_layers,
            p,
            r_layers,
            atoms,
        })
    }

    /// Stationary spec from nested `[s][a][s']` transitions and `[s][a]` reward cells.
    pub fn stationary(
        horizon: usize,
        initial: Vec<f64>,
        transitions: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<Vec<RewardAtom>>>,
    ) -> Result<Self> {
        let n_states = initial.len();
        let n_actions = transitions.first().map_or(0, |row| row.len());
        TabularMdpSpec::try_from(RawSpec {
            n_states,
            n_actions,
            horizon,
            initial,
            transitions: Layered::Stationary(transitions),
            rewards: Layered::Stationary(rewards),
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.horizon + 1
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// `P(· | s, a)` at step `t`.
    pub fn transition(&self, t: usize, s: usize, a: usize) -> &[f64] {
        let layer = if self.p_layers == 1 { 0 } else { t };
        let start = ((layer * self.n_states + s) * self.n_actions + a) * self.n_states;
        &self.p[start..start + self.n_states]
    }

    pub fn reward_atoms(&self, t: usize, s: usize, a: usize) -> &[RewardAtom] {
        let layer = if self.r_layers == 1 { 0 } else { t };
        &self.atoms[(layer * self.n_states + s) * self.n_actions + a]
    }

    /// `E[r_t | s, a]`.
    pub fn reward_mean(&self, t: usize, s: usize, a: usize) -> f64 {
        self.reward_atoms(t, s, a).iter().map(|x| x.prob * x.value).sum()
    }

    /// `Var(r_t | s, a)`.
    pub fn reward_var(&self, t: usize, s: usize, a: usize) -> f64 {
        let atoms = self.reward_atoms(t, s, a);
        let m = self.reward_mean(t, s, a);
        atoms.iter().map(|x| x.prob * (x.value - m).powi(2)).sum()
    }

    /// Smallest and largest reward atoms with positive mass.
    pub fn reward_range(&self) -> (f64, f64) {
        self.atoms
            .iter()
            .flatten()
            .filter(|x| x.prob > 0.0)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(x.value), hi.max(x.value))
            })
    }

    pub fn space_spec(&self) -> SpaceSpec {
        SpaceSpec::finite(self.n_states, self.n_actions, self.horizon).expect("validated sizes")
    }

    /// A random spec: Dirichlet(1) initial law and transition rows, and
    /// two-atom rewards on `[0, 1]`.
    pub fn random(n_states: usize, n_actions: usize, horizon: usize, rng: &mut Rng) -> Result<Self> {
        let initial = dirichlet(n_states, rng);
        let sa = n_states * n_actions;
        let p: Vec<f64> = (0..sa).flat_map(|_| dirichlet(n_states, rng)).collect();
        let atoms = (0..sa)
            .map(|_| {
                let q: f64 = rng.random_range(0.1..0.9);
                vec![
                    RewardAtom {
                        value: rng.random::<f64>(),
                        prob: q,
                    },
                    RewardAtom {
                        value: rng.random::<f64>(),
                        prob: 1.0 - q,
                    },
                ]
            })
            .collect();
        TabularMdpSpec::new(n_states, n_actions, horizon, initial, 1, p, 1, atoms)
    }

    /// The Cliff Walking simulator written out as an exact model.
    pub fn from_cliff(env: &CliffWalk) -> Self {
        let (ns, na) = (CliffWalk::N_STATES, CliffWalk::N_ACTIONS);
        let mut initial = vec![0.0; ns];
        initial[CliffWalk::START] = 1.0;
        let mut p = vec![0.0; ns * na * ns];
        let mut atoms = Vec::with_capacity(ns * na);
        for s in 0..ns {
            for a in 0..na {
                let (r, next) = CliffWalk::transition(s, a);
                p[(s * na + a) * ns + next] = 1.0;
                atoms.push(vec![RewardAtom::sure(r)]);
            }
        }
        TabularMdpSpec::new(ns, na, env.horizon, initial, 1, p, 1, atoms).expect("cliff model is valid")
    }
}

fn dirichlet(k: usize, rng: &mut Rng) -> Vec<f64> {
    let mut x: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= total);
    x
}

/// A stationary random policy whose probabilities are all at least
/// `floor / n_actions`, so any two such policies overlap.
pub fn random_policy(n_states: usize, n_actions: usize, floor: f64, rng: &mut Rng) -> Result<Policy> {
    if !(0.0..=1.0).contains(&floor) {
        return Err(Error::invalid(format!("policy floor {floor} outside [0, 1]")));
    }
    let rows = (0..n_states)
        .map(|_| {
            dirichlet(n_actions, rng)
                .into_iter()
                .map(|p| (1.0 - floor) * p + floor / n_actions as f64)
                .collect()
        })
        .collect();
    Ok(Policy::Tabular(TabularPolicy::stationary(rows)?))
}

impl Environment for TabularMdpSpec {
    type State = usize;

    fn space(&self) -> SpaceSpec {
        self.space_spec()
    }

    fn reward_bounds(&self) -> (f64, f64) {
        self.reward_range()
    }

    fn reset(&self, rng: &mut Rng) -> usize {
        sample_index(&self.initial, rng.random())
    }

    fn step(&self, t: usize, s: &usize, a: usize, rng: &mut Rng) -> (f64, usize) {
        let atoms = self.reward_atoms(t, *s, a);
        let r = if atoms.len() == 1 {
            atoms[0].value
        } else {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = atoms[atoms.len() - 1].value;
            for x in atoms {
                acc += x.prob;
                if u < acc && x.prob > 0.0 {
                    pick = x.value;
                    break;
                }
            }
            pick
        };
        let next = sample_index(self.transition(t, *s, a), rng.random());
        (r, next)
    }

    fn view(state: &usize) -> StateRef<'_> {
        StateRef::Discrete(*state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::simulate;
    use crate::rng;

    fn two_state() -> TabularMdpSpec {
        TabularMdpSpec::stationary(
            1,
            vec![0.5, 0.5],
            vec![
                vec![vec![0.9, 0.1], vec![0.2, 0.8]],
                vec![vec![0.5, 0.5], vec![0.0, 1.0]],
            ],
            vec![
                vec![vec![RewardAtom::sure(1.0)], vec![RewardAtom { value: 0.0, prob: 0.5 }, RewardAtom { value: 2.0, prob: 0.5 }]],
                vec![vec![RewardAtom::sure(0.0)], vec![RewardAtom::sure(3.0)]],
            ],
        )
        .unwrap()
    }

    #[test]
    fn reward_moments() {
        let spec = two_state();
        assert_eq!(spec.reward_mean(0, 0, 1), 1.0);
        assert_eq!(spec.reward_var(0, 0, 1), 1.0);
        assert_eq!(spec.reward_range(), (0.0, 3.0));
    }

    #[test]
    fn json_round_trip_stationary_and_layered() {
        let spec = two_state();
        let text = serde_json::to_string(&spec).unwrap();
        let back: TabularMdpSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);

        let layered = TabularMdpSpec::new(
            2,
            1,
            1,
            vec![1.0, 0.0],
            2,
            vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0],
            1,
            vec![vec![RewardAtom::sure(1.0)], vec![RewardAtom::sure(2.0)]],
        )
        .unwrap();
        let text = serde_json::to_string(&layered).unwrap();
        let back: TabularMdpSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, layered);
        assert_eq!(back.transition(1, 0, 0), &[1.0, 0.0]);
    }

    #[test]
    fn rejects_rows_that_do_not_sum_to_one() {
        let bad = TabularMdpSpec::stationary(
            0,
            vec![1.0],
            vec![vec![vec![0.9]]],
            vec![vec![vec![RewardAtom::sure(0.0)]]],
        );
        assert!(bad.is_err());
        let json = r#"{"n_states":1,"n_actions":1,"horizon":0,"initial":[1.0],
            "transitions":[[[1.0]]],"rewards":[[[{"value":0.0,"prob":0.7}]]]}"#;
        assert!(serde_json::from_str::<TabularMdpSpec>(json).is_err());
    }

    #[test]
    fn cliff_model_matches_simulator() {
        let spec = TabularMdpSpec::from_cliff(&CliffWalk { horizon: 30 });
        for s in 0..CliffWalk::N_STATES {
            for a in 0..CliffWalk::N_ACTIONS {
                let (r, next) = CliffWalk::transition(s, a);
                assert_eq!(spec.transition(7, s, a)[next], 1.0);
                assert_eq!(spec.reward_mean(7, s, a), r);
                assert_eq!(spec.reward_var(7, s, a), 0.0);
            }
        }
        let data = simulate(&spec, &Policy::uniform(4), 5, 3).unwrap();
        assert!(data.trajectories().iter().all(|tr| tr.state(0).code() == CliffWalk::START));
    }

    #[test]
    fn random_specs_and_policies_validate() {
        let mut g = rng::root(5);
        for _ in 0..10 {
            let spec = TabularMdpSpec::random(4, 3, 5, &mut g).unwrap();
            let pol = random_policy(4, 3, 0.3, &mut g).unwrap();
            pol.check_space(&spec.space_spec()).unwrap();
            for s in 0..4 {
                assert!(pol.probs(0, StateRef::Discrete(s)).iter().all(|&p| p >= 0.1 - 1e-15));
            }
        }
    }

    #[test]
    fn reward_sampling_frequencies() {
        let spec = two_state();
        let mut g = rng::root(9);
        let n = 40_000;
        let twos = (0..n).filter(|_| spec.step(0, &0, 1, &mut g).0 == 2.0).count();
        assert!((twos as f64 / n as f64 - 0.5).abs() < 0.015);
    }
}
