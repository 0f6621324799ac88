//! Finite-action policies with exact probability queries and sampling.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::data::{SpaceSpec, StateKind, StateRef};
use crate::error::{Error, Result};
use crate::features::FeatureMap;

/// Inline buffer for per-action probabilities.
pub type ActionProbs = SmallVec<[f64; 8]>;

/// A per-step conditional action distribution `π_t(a | s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    Uniform { n_actions: usize },
    Tabular(TabularPolicy),
    LogisticBernoulli(LogisticBernoulli),
    /// `(1 − α)·base + α·uniform`.
    Mixture { alpha: f64, base: Box<Policy> },
    Greedy(GreedyPolicy),
}

impl Policy {
    pub fn uniform(n_actions: usize) -> Self {
        Policy::Uniform { n_actions }
    }

    /// Mixture `(1 − α)·base + α·uniform`; requires `0 ≤ α ≤ 1`.
    pub fn mixture(base: Policy, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config(format!("mixture weight {alpha} outside [0, 1]")));
        }
        Ok(Policy::Mixture {
            alpha,
            base: Box::new(base),
        })
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Policy::Uniform { n_actions } => *n_actions,
            Policy::Tabular(p) => p.n_actions,
            Policy::LogisticBernoulli(_) => 2,
            Policy::Mixture { base, .. } => base.n_actions(),
            Policy::Greedy(g) => g.n_actions(),
        }
    }

    /// Checks that the policy can be queried on states and actions of `space`.
    pub fn check_space(&self, space: &SpaceSpec) -> Result<()> {
        if self.n_actions() != space.n_actions {
            return Err(Error::config(format!(
                "policy has {} actions, space has {}",
                self.n_actions(),
                space.n_actions
            )));
        }
        match (self, space.state) {
            (Policy::Uniform { .. }, _) => Ok(()),
            (Policy::Tabular(p), StateKind::Finite { cardinality }) => {
                if p.n_states != cardinality {
                    return Err(Error::config("tabular policy state count mismatch"));
                }
                if p.layers() != 1 && p.layers() != space.steps() {
                    return Err(Error::config("tabular policy layers must be 1 or T+1"));
                }
                Ok(())
            }
            (Policy::LogisticBernoulli(_), StateKind::RealVector { .. }) => Ok(()),
            (Policy::Mixture { base, .. }, _) => base.check_space(space),
            (Policy::Greedy(g), _) => match &g.values {
                ActionValues::Table { n_states, .. } => match space.state {
                    StateKind::Finite { cardinality } if cardinality == *n_states => Ok(()),
                    _ => Err(Error::config("greedy table does not match the state space")),
                },
                ActionValues::Linear { features, .. } => features.check_space(space),
            },
            _ => Err(Error::config("policy kind does not match the state space")),
        }
    }

    /// Writes `π_t(· | s)` into `out` (length `n_actions`).
    pub fn probs_into(&self, t: usize, s: StateRef<'_>, out: &mut [f64]) {
        match self {
            Policy::Uniform { n_actions } => out.fill(1.0 / *n_actions as f64),
            Policy::Tabular(p) => out.copy_from_slice(p.row(t, s.code())),
            Policy::LogisticBernoulli(p) => {
                let p1 = p.p1(s.scalar());
                out[0] = 1.0 - p1;
                out[1] = p1;
            }
            Policy::Mixture { alpha, base } => {
                base.probs_into(t, s, out);
                let u = alpha / out.len() as f64;
                for p in out.iter_mut() {
                    *p = (1.0 - alpha) * *p + u;
                }
            }
            Policy::Greedy(g) => {
                out.fill(0.0);
                out[g.action(s)] = 1.0;
            }
        }
    }

    pub fn probs(&self, t: usize, s: StateRef<'_>) -> ActionProbs {
        let mut out: ActionProbs = SmallVec::from_elem(0.0, self.n_actions());
        self.probs_into(t, s, &mut out);
        out
    }

    pub fn prob(&self, t: usize, s: StateRef<'_>, a: usize) -> f64 {
        match self {
            Policy::Uniform { n_actions } => 1.0 / *n_actions as f64,
            Policy::Tabular(p) => p.row(t, s.code())[a],
            Policy::LogisticBernoulli(p) => {
                let p1 = p.p1(s.scalar());
                if a == 1 {
                    p1
                } else {
                    1.0 - p1
                }
            }
            Policy::Mixture { alpha, base } => {
                (1.0 - alpha) * base.prob(t, s, a) + alpha / base.n_actions() as f64
            }
            Policy::Greedy(g) => f64::from(u8::from(g.action(s) == a)),
        }
    }

    /// Draws an action from one uniform variate.
    pub fn sample<R: rand::Rng + ?Sized>(&self, t: usize, s: StateRef<'_>, rng: &mut R) -> usize {
        self.sample_with(t, s, rng.random::<f64>())
    }

    /// Inversion sampling from `u ∈ [0, 1)`. A mixture first picks its
    /// component, so the base policy is only evaluated when it is used.
    pub fn sample_with(&self, t: usize, s: StateRef<'_>, u: f64) -> usize {
        match self {
            Policy::Uniform { n_actions } => ((u * *n_actions as f64) as usize).min(n_actions - 1),
            Policy::Mixture { alpha, base } => {
                if u < *alpha {
                    Policy::uniform(base.n_actions()).sample_with(t, s, u / alpha)
                } else {
                    base.sample_with(t, s, (u - alpha) / (1.0 - alpha))
                }
            }
            Policy::Greedy(g) => g.action(s),
            _ => sample_index(&self.probs(t, s), u),
        }
    }
}

/// Smallest index whose cumulative mass exceeds `u`; zero-mass actions are never chosen.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (a, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = a;
            if u < acc {
                return a;
            }
        }
    }
    last
}

/// Stochastic matrices `π_t(a | s)`, either one shared layer or one per step.
/// Serialized as `{"layers": [[[π(a|s) ...] ...] ...]}` and validated on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TabularLayers", into = "TabularLayers")]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    /// Layer-major, then state-major: `probs[(layer * n_states + s) * n_actions + a]`.
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TabularLayers {
    layers: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<TabularLayers> for TabularPolicy {
    type Error = Error;

    fn try_from(raw: TabularLayers) -> Result<Self> {
        TabularPolicy::new(raw.layers)
    }
}

impl From<TabularPolicy> for TabularLayers {
    fn from(p: TabularPolicy) -> Self {
        let layers = p
            .probs
            .chunks(p.n_states * p.n_actions)
            .map(|layer| layer.chunks(p.n_actions).map(<[f64]>::to_vec).collect())
            .collect();
        TabularLayers { layers }
    }
}

impl TabularPolicy {
    /// Builds from `layers[l][s][a]`; one layer means a stationary policy.
    pub fn new(layers: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n_states = layers.first().map_or(0, Vec::len);
        let n_actions = layers
            .first()
            .and_then(|l| l.first())
            .map_or(0, Vec::len);
        if n_states == 0 || n_actions == 0 {
            return Err(Error::config("tabular policy must be non-empty"));
        }
        let mut probs = Vec::with_capacity(layers.len() * n_states * n_actions);
        for layer in &layers {
            if layer.len() != n_states {
                return Err(Error::config("tabular policy layers differ in state count"));
            }
            for row in layer {
                if row.len() != n_actions {
                    return Err(Error::config("tabular policy rows differ in action count"));
                }
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::config(format!(
                        "tabular policy row {row:?} is not a probability vector"
                    )));
                }
                probs.extend_from_slice(row);
            }
        }
        Ok(TabularPolicy {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn stationary(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(vec![rows])
    }

    /// Deterministic stationary policy choosing `actions[s]`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let rows = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; n_actions];
                *row.get_mut(a).ok_or_else(|| Error::config("action out of range"))? = 1.0;
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::stationary(rows)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn layers(&self) -> usize {
        self.probs.len() / (self.n_states * self.n_actions)
    }

    pub fn row(&self, t: usize, s: usize) -> &[f64] {
        let layer = if self.layers() == 1 { 0 } else { t };
        let start = (layer * self.n_states + s) * self.n_actions;
        &self.probs[start..start + self.n_actions]
    }
}

/// Two-action policy with `P(a = 1 | s) = scale/(1 + e^{−slope·s}) + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LogisticRaw")]
pub struct LogisticBernoulli {
    pub scale: f64,
    pub slope: f64,
    pub offset: f64,
}

#[derive(Deserialize)]
struct LogisticRaw {
    scale: f64,
    slope: f64,
    offset: f64,
}

impl TryFrom<LogisticRaw> for LogisticBernoulli {
    type Error = Error;

    fn try_from(raw: LogisticRaw) -> Result<Self> {
        LogisticBernoulli::new(raw.scale, raw.slope, raw.offset)
    }
}

impl LogisticBernoulli {
    pub fn new(scale: f64, slope: f64, offset: f64) -> Result<Self> {
        if !(scale >= 0.0 && offset >= 0.0 && scale + offset <= 1.0 && slope.is_finite()) {
            return Err(Error::config(format!(
                "logistic policy needs scale, offset >= 0 and scale + offset <= 1 (got {scale}, {offset})"
            )));
        }
        Ok(LogisticBernoulli {
            scale,
            slope,
            offset,
        })
    }

    pub fn p1(&self, s: f64) -> f64 {
        self.scale / (1.0 + (-self.slope * s).exp()) + self.offset
    }
}

/// Action values behind a greedy policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionValues {
    /// `q[s * n_actions + a]`.
    Table {
        n_states: usize,
        n_actions: usize,
        q: Vec<f64>,
    },
    /// `q(s, a) = weights · φ(s, a)`.
    Linear {
        features: FeatureMap,
        n_actions: usize,
        weights: Vec<f64>,
    },
}

impl ActionValues {
    pub fn n_actions(&self) -> usize {
        match self {
            ActionValues::Table { n_actions, .. } | ActionValues::Linear { n_actions, .. } => {
                *n_actions
            }
        }
    }

    pub fn values_into(&self, s: StateRef<'_>, out: &mut [f64]) {
        match self {
            ActionValues::Table { n_actions, q, .. } => {
                let c = s.code();
                out.copy_from_slice(&q[c * n_actions..(c + 1) * n_actions]);
            }
            ActionValues::Linear {
                features,
                n_actions,
                weights,
            } => {
                let d = weights.len();
                let mut phi = vec![0.0; d * n_actions];
                features.encode_all(s, *n_actions, &mut phi);
                for (a, o) in out.iter_mut().enumerate() {
                    *o = phi[a * d..(a + 1) * d]
                        .iter()
                        .zip(weights)
                        .map(|(x, w)| x * w)
                        .sum();
                }
            }
        }
    }
}

/// Deterministic stationary policy `argmax_a q(s, a)`; ties go to the lowest index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyPolicy {
    pub values: ActionValues,
}

impl GreedyPolicy {
    pub fn new(values: ActionValues) -> Self {
        GreedyPolicy { values }
    }

    pub fn n_actions(&self) -> usize {
        self.values.n_actions()
    }

    pub fn action(&self, s: StateRef<'_>) -> usize {
        let mut q: ActionProbs = SmallVec::from_elem(0.0, self.n_actions());
        self.values.values_into(s, &mut q);
        argmax(&q)
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn sum(p: &[f64]) -> f64 {
        p.iter().sum()
    }

    #[test]
    fn mixture_of_deterministic_policy() {
        let d = Policy::Tabular(TabularPolicy::deterministic(&[1, 3], 4).unwrap());
        let m = Policy::mixture(d.clone(), 0.8).unwrap();
        let p = m.probs(0, StateRef::Discrete(0));
        assert!((p[1] - 0.4).abs() < 1e-15);
        assert!((p[0] - 0.2).abs() < 1e-15);
        assert!((p[3] - 0.2).abs() < 1e-15);
        let u = Policy::mixture(d.clone(), 1.0).unwrap();
        assert_eq!(u.probs(0, StateRef::Discrete(1)).to_vec(), vec![0.25; 4]);
        let same = Policy::mixture(d.clone(), 0.0).unwrap();
        assert_eq!(
            same.probs(0, StateRef::Discrete(1)).to_vec(),
            d.probs(0, StateRef::Discrete(1)).to_vec()
        );
        assert!(Policy::mixture(d, 1.5).is_err());
    }

    #[test]
    fn prob_agrees_with_probs() {
        let l = Policy::LogisticBernoulli(LogisticBernoulli::new(0.9, 0.1, 0.05).unwrap());
        let x = [0.5];
        let s = StateRef::Real(&x);
        let p = l.probs(3, s);
        assert_eq!(p[1], l.prob(3, s, 1));
        assert_eq!(p[0], l.prob(3, s, 0));
    }

    #[test]
    fn greedy_breaks_ties_low() {
        let g = Policy::Greedy(GreedyPolicy::new(ActionValues::Table {
            n_states: 1,
            n_actions: 3,
            q: vec![1.0, 2.0, 2.0],
        }));
        assert_eq!(g.probs(0, StateRef::Discrete(0)).to_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn sampling_frequencies_match_probabilities() {
        let tab = Policy::Tabular(TabularPolicy::stationary(vec![vec![0.1, 0.6, 0.3]]).unwrap());
        let mix = Policy::mixture(tab.clone(), 0.3).unwrap();
        for p in [tab, mix, Policy::uniform(3)] {
            let mut r = rng::root(3);
            let mut counts = [0usize; 3];
            let n = 200_000;
            for _ in 0..n {
                counts[p.sample(0, StateRef::Discrete(0), &mut r)] += 1;
            }
            for (a, &c) in counts.iter().enumerate() {
                let target = p.prob(0, StateRef::Discrete(0), a);
                let se = (target * (1.0 - target) / n as f64).sqrt();
                assert!((c as f64 / n as f64 - target).abs() < 5.0 * se);
            }
        }
    }

    #[test]
    fn zero_mass_actions_never_sampled() {
        assert_eq!(sample_index(&[0.0, 1.0, 0.0], 0.9999999), 1);
        assert_eq!(sample_index(&[0.5, 0.5, 0.0], 0.99999999999), 1);
    }

    #[test]
    fn invalid_tabular_rows_are_rejected() {
        assert!(TabularPolicy::stationary(vec![vec![0.5, 0.6]]).is_err());
        assert!(TabularPolicy::stationary(vec![vec![-0.1, 1.1]]).is_err());
    }

    #[test]
    fn policy_serde_round_trip() {
        let p = Policy::mixture(
            Policy::Tabular(TabularPolicy::deterministic(&[0, 1], 2).unwrap()),
            0.3,
        )
        .unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<Policy>(&json).unwrap(), p);
        let t: Policy = serde_json::from_str(r#"{"kind":"tabular","layers":[[[0.25,0.75]],[[1,0]]]}"#).unwrap();
        assert_eq!(t.prob(1, StateRef::Discrete(0), 0), 1.0);
    }

    #[test]
    fn invalid_policies_are_rejected_on_load() {
        for bad in [
            r#"{"kind":"tabular","layers":[[[0.5,0.6]]]}"#,
            r#"{"kind":"logistic_bernoulli","scale":0.9,"slope":1,"offset":0.2}"#,
        ] {
            assert!(serde_json::from_str::<Policy>(bad).is_err(), "{bad}");
        }
    }

    proptest! {
        #[test]
        fn logistic_and_mixture_normalize(
            scale in 0.0f64..0.5, offset in 0.0f64..0.5, slope in -2.0f64..2.0,
            alpha in 0.0f64..=1.0, s in -50.0f64..50.0,
        ) {
            let base = Policy::LogisticBernoulli(LogisticBernoulli::new(scale, slope, offset).unwrap());
            let x = [s];
            for p in [base.clone(), Policy::mixture(base, alpha).unwrap()] {
                let probs = p.probs(0, StateRef::Real(&x));
                prop_assert!((sum(&probs) - 1.0).abs() <= 1e-12);
                prop_assert!(probs.iter().all(|v| *v >= 0.0));
            }
        }

        #[test]
        fn random_tabular_normalizes(weights in prop::collection::vec(0.001f64..1.0, 12), alpha in 0.0f64..=1.0) {
            let rows: Vec<Vec<f64>> = weights
                .chunks(4)
                .map(|c| {
                    let z: f64 = c.iter().sum();
                    let mut row: Vec<f64> = c.iter().map(|w| w / z).collect();
                    let head: f64 = row[..3].iter().sum();
                    row[3] = 1.0 - head;
                    row
                })
                .collect();
            let p = Policy::mixture(Policy::Tabular(TabularPolicy::stationary(rows).unwrap()), alpha).unwrap();
            for s in 0..3 {
                let probs = p.probs(0, StateRef::Discrete(s));
                prop_assert!((sum(&probs) - 1.0).abs() <= 1e-12);
            }
        }
    }
}
