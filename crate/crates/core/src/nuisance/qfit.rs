//! Backward-recursive least squares for `q_t`:
//! regress `r_T` on `φ(s_T, a_T)`, then `r_t + v̂_{t+1}(s_{t+1})` on `φ(s_t, a_t)`
//! for `t = T−1, …, 0`, where `v̂_{t+1}` averages the fitted `q̂_{t+1}` over the target policy.

use serde::{Deserialize, Serialize};

use super::design::{encode_step, predict_step, solve_step, Membership};
use crate::data::{Dataset, StateRef};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::policy::Policy;
use crate::ratios::{Prepared, QFunction};

/// Linear q-model `q̂_t(s, a) = clip(β_t·φ(s, a))` with per-step clip ranges
/// `[(T+1−t)·R_min, (T+1−t)·R_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearQModel {
    features: FeatureMap,
    n_actions: usize,
    coefs: Vec<Vec<f64>>,
    reward_bounds: (f64, f64),
}

impl LinearQModel {
    pub fn horizon(&self) -> usize {
        self.coefs.len() - 1
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn coefficients(&self, t: usize) -> &[f64] {
        &self.coefs[t]
    }

    /// Clip range of `q̂_t`.
    pub fn q_range(&self, t: usize) -> (f64, f64) {
        q_range(self.reward_bounds, self.coefs.len(), t)
    }
}

fn q_range(bounds: (f64, f64), steps: usize, t: usize) -> (f64, f64) {
    let k = (steps - t) as f64;
    (k * bounds.0, k * bounds.1)
}

impl QFunction for LinearQModel {
    fn q(&self, t: usize, s: StateRef<'_>, a: usize) -> f64 {
        let mut all = vec![0.0; self.n_actions];
        self.q_all(t, s, &mut all);
        all[a]
    }

    fn q_all(&self, t: usize, s: StateRef<'_>, out: &mut [f64]) {
        let (lo, hi) = self.q_range(t);
        let beta = &self.coefs[t];
        if let Some(_) = self.features.one_hot_index(s, 0) {
            for (a, o) in out.iter_mut().enumerate() {
                let j = self.features.one_hot_index(s, a).expect("one-hot");
                *o = beta[j].clamp(lo, hi);
            }
            return;
        }
        let d = beta.len();
        let mut phi = vec![0.0; d * self.n_actions];
        self.features.encode_all(s, self.n_actions, &mut phi);
        for (a, o) in out.iter_mut().enumerate() {
            let raw: f64 = phi[a * d..(a + 1) * d].iter().zip(beta).map(|(x, b)| x * b).sum();
            *o = raw.clamp(lo, hi);
        }
    }
}

/// Fitted `q̂_t(s_t, a_t)` and `v̂_t(s_t)` at every logged step of every row.
#[derive(Clone, Debug, PartialEq)]
pub struct AlongQ {
    steps: usize,
    q: Vec<f64>,
    v: Vec<f64>,
}

impl AlongQ {
    pub fn new(n: usize, steps: usize) -> Self {
        AlongQ {
            steps,
            q: vec![0.0; n * steps],
            v: vec![0.0; n * steps],
        }
    }

    /// Predictions of an arbitrary q-function along the logged data.
    pub fn from_q<Q: QFunction + ?Sized>(q: &Q, prep: &Prepared<'_>) -> Self {
        let steps = prep.steps();
        let na = prep.n_actions();
        let mut out = AlongQ::new(prep.n(), steps);
        let mut all = vec![0.0; na];
        for i in 0..prep.n() {
            let traj = prep.data.trajectory(i);
            for t in 0..steps {
                q.q_all(t, traj.state(t), &mut all);
                let probs = prep.target_probs(i, t);
                out.q[i * steps + t] = all[traj.action(t)];
                out.v[i * steps + t] = probs
                    .iter()
                    .zip(&all)
                    .filter(|(p, _)| **p > 0.0)
                    .map(|(p, q)| p * q)
                    .sum();
            }
        }
        out
    }

    pub fn q(&self, i: usize, t: usize) -> f64 {
        self.q[i * self.steps + t]
    }

    pub fn v(&self, i: usize, t: usize) -> f64 {
        self.v[i * self.steps + t]
    }

    pub fn set(&mut self, i: usize, t: usize, q: f64, v: f64) {
        self.q[i * self.steps + t] = q;
        self.v[i * self.steps + t] = v;
    }
}

/// One fitted q-model with its predictions on every row of the prepared data.
#[derive(Clone, Debug)]
pub struct QFit {
    pub model: LinearQModel,
    pub along: AlongQ,
    pub train_rows: Vec<usize>,
}

/// How a one-hot q-model fills `(t, s, a)` cells without training data, where
/// least squares is not identified.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyCells {
    /// The ridge solution, zero.
    #[default]
    Zero,
    /// One-step lookahead through reward and transition frequencies of
    /// `(s, a)` pooled over all steps: `r̄(s, a) + Σ_{s'} P̂(s' | s, a) v̂_{t+1}(s')`.
    /// Exact in the limit for time-homogeneous dynamics; cells of pairs never
    /// seen at any step stay zero.
    PooledModel,
}

/// Fits `q̂` on all of `train`.
pub fn fit_q_backward(
    train: &Dataset,
    target: &Policy,
    features: &FeatureMap,
    ridge: f64,
) -> Result<LinearQModel> {
    let prep = Prepared::new(train, target, target)?;
    let all: Vec<usize> = (0..train.n()).collect();
    let mut fits = fit_q_backward_sets(&prep, features, ridge, EmptyCells::Zero, &[all])?;
    Ok(fits.pop().expect("one fit").model)
}

/// Time-pooled one-step model of a finite MDP, from one training set.
struct PooledModel {
    n_states: usize,
    /// Visits, reward sums and successor counts of `(s, a)`, indexed `a·S + s`.
    visits: Vec<f64>,
    reward: Vec<f64>,
    next: Vec<Vec<(usize, f64)>>,
}

impl PooledModel {
    fn new(prep: &Prepared<'_>, n_states: usize, rows: &[usize]) -> Self {
        let cells = n_states * prep.n_actions();
        let mut visits = vec![0.0; cells];
        let mut reward = vec![0.0; cells];
        let mut next = vec![vec![0.0; n_states]; cells];
        let steps = prep.steps();
        for &i in rows {
            let traj = prep.data.trajectory(i);
            for t in 0..steps.saturating_sub(1) {
                let j = traj.action(t) * n_states + traj.state(t).code();
                visits[j] += 1.0;
                reward[j] += traj.reward(t);
                next[j][traj.state(t + 1).code()] += 1.0;
            }
        }
        let next = next
            .into_iter()
            .map(|row| row.into_iter().enumerate().filter(|(_, c)| *c > 0.0).collect())
            .collect();
        PooledModel {
            n_states,
            visits,
            reward,
            next,
        }
    }

    /// Replaces cells of `beta` (step `t`) that have no rows in `rows`.
    fn fill(&self, prep: &Prepared<'_>, t: usize, rows: &[usize], beta: &mut [f64], v_next: &[f64]) {
        let ns = self.n_states;
        let mut seen = vec![false; beta.len()];
        for &i in rows {
            let traj = prep.data.trajectory(i);
            seen[traj.action(t) * ns + traj.state(t).code()] = true;
        }
        for (j, b) in beta.iter_mut().enumerate() {
            if seen[j] || self.visits[j] == 0.0 {
                continue;
            }
            let lookahead: f64 = if t + 1 < prep.steps() {
                self.next[j].iter().map(|&(s2, c)| c * v_next[s2]).sum()
            } else {
                0.0
            };
            *b = (self.reward[j] + lookahead) / self.visits[j];
        }
    }
}

/// `v̂_t(s)` on every state of a one-hot model.
fn state_values(prep: &Prepared<'_>, t: usize, n_states: usize, beta: &[f64], range: (f64, f64)) -> Vec<f64> {
    let na = prep.n_actions();
    let mut probs = vec![0.0; na];
    (0..n_states)
        .map(|s| {
            prep.target.probs_into(t, StateRef::Discrete(s), &mut probs);
            probs
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(a, p)| p * beta[a * n_states + s].clamp(range.0, range.1))
                .sum()
        })
        .collect()
}

/// Fits one q-model per training set in a single backward sweep and returns,
/// for each, its predictions along every row (training or not).
pub fn fit_q_backward_sets(
    prep: &Prepared<'_>,
    features: &FeatureMap,
    ridge: f64,
    empty: EmptyCells,
    sets: &[Vec<usize>],
) -> Result<Vec<QFit>> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::config(format!("ridge must be finite and non-negative, got {ridge}")));
    }
    features.check_space(prep.data.space())?;
    let mem = Membership::new(prep.n(), sets)?;
    let n = prep.n();
    let steps = prep.steps();
    let na = prep.n_actions();
    let nf = mem.n_fits();
    let bounds = prep.data.reward_bounds();

    let mut coefs = vec![vec![Vec::new(); steps]; nf];
    let mut along = vec![AlongQ::new(n, steps); nf];
    let mut v_next = vec![vec![0.0; n]; nf];
    let mut targets = vec![vec![0.0; n]; nf];
    let pooled: Option<(usize, Vec<PooledModel>)> = match (empty, features) {
        (EmptyCells::Zero, _) => None,
        (EmptyCells::PooledModel, FeatureMap::Tabular { n_states }) => Some((
            *n_states,
            mem.sets.iter().map(|rows| PooledModel::new(prep, *n_states, rows)).collect(),
        )),
        (EmptyCells::PooledModel, _) => {
            return Err(Error::config("pooled-model filling needs tabular features"));
        }
    };
    // v̂_{t+1} on every state, per fit (pooled filling only).
    let mut v_table = vec![Vec::new(); nf];

    for t in (0..steps).rev() {
        let enc = encode_step(prep, features, t);
        for f in 0..nf {
            for &i in &mem.sets[f] {
                targets[f][i] = prep.data.trajectory(i).reward(t) + v_next[f][i];
            }
        }
        let mut beta = solve_step(&enc, prep, t, &mem, &targets, ridge)?;
        let (lo, hi) = q_range(bounds, steps, t);
        if let Some((ns, models)) = &pooled {
            for f in 0..nf {
                models[f].fill(prep, t, &mem.sets[f], &mut beta[f], &v_table[f]);
                v_table[f] = state_values(prep, t, *ns, &beta[f], (lo, hi));
            }
        }
        let raw = predict_step(&enc, &beta);
        for f in 0..nf {
            for i in 0..n {
                let probs = prep.target_probs(i, t);
                let a_t = prep.data.trajectory(i).action(t);
                let preds = &raw[f][i * na..(i + 1) * na];
                let mut v = 0.0;
                for (p, &q) in probs.iter().zip(preds) {
                    if *p > 0.0 {
                        v += p * q.clamp(lo, hi);
                    }
                }
                along[f].set(i, t, preds[a_t].clamp(lo, hi), v);
                v_next[f][i] = v;
            }
        }
        for (f, b) in beta.into_iter().enumerate() {
            coefs[f][t] = b;
        }
    }

    Ok(coefs
        .into_iter()
        .zip(along)
        .zip(mem.sets)
        .map(|((coefs, along), train_rows)| QFit {
            model: LinearQModel {
                features: features.clone(),
                n_actions: na,
                coefs,
                reward_bounds: bounds,
            },
            along,
            train_rows,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::simulate;
    use crate::oracle::{dp_q, RewardAtom, TabularMdpSpec};

    /// Mean absolute error of `q̂` over every `(t, s, a)` cell.
    fn cell_error(empty: EmptyCells) -> f64 {
        let det = |v: f64| vec![RewardAtom { value: v, prob: 1.0 }];
        let spec = TabularMdpSpec::stationary(
            30,
            vec![1.0, 0.0, 0.0],
            vec![
                vec![vec![0.1, 0.9, 0.0], vec![0.9, 0.0, 0.1]],
                vec![vec![0.0, 0.2, 0.8], vec![0.5, 0.5, 0.0]],
                vec![vec![0.7, 0.0, 0.3], vec![0.0, 0.6, 0.4]],
            ],
            vec![vec![det(-1.0), det(0.5)], vec![det(2.0), det(-3.0)], vec![det(1.0), det(0.0)]],
        )
        .unwrap();
        let behavior = Policy::uniform(2);
        let target = Policy::Tabular(crate::policy::TabularPolicy::stationary(vec![vec![0.3, 0.7]; 3]).unwrap());
        let data = simulate(&spec, &behavior, 8, 4).unwrap();
        let prep = Prepared::new(&data, &behavior, &target).unwrap();
        let rows: Vec<usize> = (0..data.n()).collect();
        let features = FeatureMap::Tabular { n_states: 3 };
        let fit = fit_q_backward_sets(&prep, &features, 1e-8, empty, &[rows]).unwrap().pop().unwrap();
        let truth = dp_q(&spec, &target).unwrap();
        let mut total = 0.0;
        for t in 0..=30 {
            for s in 0..3 {
                for a in 0..2 {
                    total += (fit.model.q(t, StateRef::Discrete(s), a) - truth.q_at(t, s, a)).abs();
                }
            }
        }
        total / (31.0 * 6.0)
    }

    #[test]
    fn pooled_filling_recovers_empty_cells_of_homogeneous_mdp() {
        let zero = cell_error(EmptyCells::Zero);
        let pooled = cell_error(EmptyCells::PooledModel);
        assert!(pooled < 0.25 * zero, "pooled {pooled} vs zero {zero}");
    }

    #[test]
    fn pooled_filling_needs_tabular_features() {
        let data = simulate(&crate::envs::SyntheticGaussianMdp::default(), &Policy::uniform(2), 5, 1).unwrap();
        let p = Policy::uniform(2);
        let prep = Prepared::new(&data, &p, &p).unwrap();
        let f = FeatureMap::Polynomial { powers: vec![0, 1] };
        assert!(fit_q_backward_sets(&prep, &f, 1e-8, EmptyCells::PooledModel, &[vec![0, 1, 2]]).is_err());
    }
}
