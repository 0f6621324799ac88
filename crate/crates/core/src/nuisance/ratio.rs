//! Marginal density-ratio models: `ŵ_t(s) ≈ E[λ_{t−1} | s_t = s]` by histogram or
//! Epanechnikov kernel regression (giving `μ̂_t = η_t·ŵ_t`), and direct least
//! squares `μ̂_t(s, a) ≈ E[λ_t | s_t, a_t]`.

use serde::{Deserialize, Serialize};

use super::design::{encode_step, predict_step, solve_step, Membership};
use crate::data::{Dataset, StateKind, StateRef};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::policy::Policy;
use crate::ratios::{eta, Prepared};

/// A fitted (or exact) ratio nuisance. Emitted ratios are clipped to `[0, clip]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RatioModel {
    /// The exact cumulative ratio `λ_t` computed from the policies (never clipped).
    KnownLambda,
    HistogramW(HistogramW),
    KernelW(KernelW),
    LsMu(LinearMuModel),
}

impl RatioModel {
    pub fn clip(&self) -> Option<f64> {
        match self {
            RatioModel::KnownLambda => None,
            RatioModel::HistogramW(m) => m.clip,
            RatioModel::KernelW(m) => m.clip,
            RatioModel::LsMu(m) => m.clip,
        }
    }

    /// Replaces the clip bound `C'`.
    pub fn with_clip(mut self, clip: Option<f64>) -> Self {
        match &mut self {
            RatioModel::KnownLambda => {}
            RatioModel::HistogramW(m) => m.clip = clip,
            RatioModel::KernelW(m) => m.clip = clip,
            RatioModel::LsMu(m) => m.clip = clip,
        }
        self
    }

    /// Turns the lower clip at zero on or off for least-squares `μ̂`; the
    /// other models are nonnegative by construction.
    pub fn with_nonnegative(mut self, on: bool) -> Self {
        if let RatioModel::LsMu(m) = &mut self {
            m.nonnegative = on;
        }
        self
    }

    /// `ŵ_t(s)` for state-ratio models.
    pub fn w(&self, t: usize, s: StateRef<'_>) -> Option<f64> {
        match self {
            RatioModel::HistogramW(m) => Some(m.w(t, s.code())),
            RatioModel::KernelW(m) => Some(m.w(t, s.coords())),
            _ => None,
        }
    }

    /// `μ̂_t(s, a)`; unavailable for the history-dependent known `λ`.
    pub fn mu(&self, behavior: &Policy, target: &Policy, t: usize, s: StateRef<'_>, a: usize) -> Result<f64> {
        match self {
            RatioModel::KnownLambda => Err(Error::invalid(
                "the known cumulative ratio depends on the history, not on (t, s, a)",
            )),
            RatioModel::HistogramW(_) | RatioModel::KernelW(_) => {
                mu_from_w(self, behavior, target, t, s, a)
            }
            RatioModel::LsMu(m) => Ok(m.mu(t, s, a)),
        }
    }

    /// Ratios at every logged step, `[i·steps + t]`.
    pub fn along(&self, prep: &Prepared<'_>) -> Result<RatioAlong> {
        let steps = prep.steps();
        let n = prep.n();
        let mut values = vec![0.0; n * steps];
        let mut unvisited = 0;
        match self {
            RatioModel::KnownLambda => values.copy_from_slice(prep.lambda_table()),
            RatioModel::HistogramW(m) => {
                for i in 0..n {
                    let traj = prep.data.trajectory(i);
                    for t in 0..steps {
                        let s = traj.state(t).code();
                        if t > 0 && !m.visited(t, s) {
                            unvisited += 1;
                        }
                        values[i * steps + t] = clip(prep.eta(i, t) * m.w(t, s), m.clip);
                    }
                }
            }
            RatioModel::KernelW(m) => {
                for i in 0..n {
                    let traj = prep.data.trajectory(i);
                    for t in 0..steps {
                        let w = m.w(t, traj.state(t).coords());
                        values[i * steps + t] = clip(prep.eta(i, t) * w, m.clip);
                    }
                }
            }
            RatioModel::LsMu(m) => {
                for i in 0..n {
                    let traj = prep.data.trajectory(i);
                    for t in 0..steps {
                        values[i * steps + t] = m.mu(t, traj.state(t), traj.action(t));
                    }
                }
            }
        }
        Ok(RatioAlong {
            steps,
            values,
            unvisited,
        })
    }
}

fn clip(x: f64, bound: Option<f64>) -> f64 {
    x.clamp(0.0, bound.unwrap_or(f64::INFINITY))
}

/// Ratio values at every logged step of every row.
#[derive(Clone, Debug, PartialEq)]
pub struct RatioAlong {
    steps: usize,
    values: Vec<f64>,
    /// Number of histogram queries that fell on states unseen in training.
    pub unvisited: usize,
}

impl RatioAlong {
    pub fn from_values(steps: usize, values: Vec<f64>) -> Self {
        RatioAlong {
            steps,
            values,
            unvisited: 0,
        }
    }

    pub fn get(&self, i: usize, t: usize) -> f64 {
        self.values[i * self.steps + t]
    }

    /// Ratio at step `t − 1`, with the convention value 1 at `t = 0`.
    pub fn prev(&self, i: usize, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.get(i, t - 1)
        }
    }
}

/// `μ̂_t(s, a) = clip(η_t(s, a)·ŵ_t(s), 0, C')`.
pub fn mu_from_w(
    wmodel: &RatioModel,
    behavior: &Policy,
    target: &Policy,
    t: usize,
    s: StateRef<'_>,
    a: usize,
) -> Result<f64> {
    let w = wmodel
        .w(t, s)
        .ok_or_else(|| Error::invalid("mu_from_w needs a histogram or kernel w-model"))?;
    Ok(clip(eta(behavior, target, t, s, a)? * w, wmodel.clip()))
}

// ── Histogram ──────────────────────────────────────────────────────────────

/// Per-step table of `ŵ_t(s)`; unvisited states map to 0, `ŵ_0 ≡ 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramW {
    n_states: usize,
    /// `[t·n_states + s]`.
    w: Vec<f64>,
    counts: Vec<u32>,
    clip: Option<f64>,
}

impl HistogramW {
    pub fn w(&self, t: usize, s: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.w[t * self.n_states + s]
        }
    }

    pub fn visited(&self, t: usize, s: usize) -> bool {
        t == 0 || self.counts[t * self.n_states + s] > 0
    }
}

pub fn fit_w_histogram(train: &Dataset, behavior: &Policy, target: &Policy) -> Result<RatioModel> {
    let prep = Prepared::new(train, behavior, target)?;
    fit_w_histogram_rows(&prep, &(0..train.n()).collect::<Vec<_>>())
}

pub fn fit_w_histogram_rows(prep: &Prepared<'_>, rows: &[usize]) -> Result<RatioModel> {
    let n_states = match prep.data.space().state {
        StateKind::Finite { cardinality } => cardinality,
        StateKind::RealVector { .. } => return Err(Error::InfiniteStateSpace("histogram w")),
    };
    let steps = prep.steps();
    let mut sums = vec![0.0; steps * n_states];
    let mut counts = vec![0u32; steps * n_states];
    for &i in rows {
        let traj = prep.data.trajectory(i);
        for t in 1..steps {
            let k = t * n_states + traj.state(t).code();
            sums[k] += prep.lambda(i, t - 1);
            counts[k] += 1;
        }
    }
    let w = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(RatioModel::HistogramW(HistogramW {
        n_states,
        w,
        counts,
        clip: prep.data.ratio_bound(),
    }))
}

// ── Kernel ─────────────────────────────────────────────────────────────────

/// Nadaraya–Watson `ŵ_t(s)` with a product Epanechnikov kernel of bandwidth `h`
/// on coordinates divided by `scales`. Queries with zero kernel mass return 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelW {
    bandwidth: f64,
    scales: Vec<f64>,
    /// Per step `t ≥ 1`: training points sorted by their first scaled coordinate.
    steps: Vec<KernelStep>,
    clip: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct KernelStep {
    /// Scaled coordinates, row-major.
    points: Vec<f64>,
    lambdas: Vec<f64>,
}

impl KernelW {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn w(&self, t: usize, s: &[f64]) -> f64 {
        if t == 0 {
            return 1.0;
        }
        let (num, den) = self.sums(&self.steps[t - 1], s, None);
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }

    /// Kernel-weighted sums `(Σ K·λ, Σ K)`, optionally skipping one training index.
    fn sums(&self, step: &KernelStep, s: &[f64], skip: Option<usize>) -> (f64, f64) {
        let d = self.scales.len();
        let h = self.bandwidth;
        let q0 = s[0] / self.scales[0];
        let first = |k: usize| step.points[k * d];
        let m = step.lambdas.len();
        let start = partition_point(m, |k| first(k) <= q0 - h);
        let mut num = 0.0;
        let mut den = 0.0;
        let mut k = start;
        while k < m && first(k) < q0 + h {
            if Some(k) != skip {
                let mut weight = 1.0;
                for j in 0..d {
                    let u = (step.points[k * d + j] - s[j] / self.scales[j]) / h;
                    if u.abs() >= 1.0 {
                        weight = 0.0;
                        break;
                    }
                    weight *= 1.0 - u * u;
                }
                num += weight * step.lambdas[k];
                den += weight;
            }
            k += 1;
        }
        (num, den)
    }
}

fn partition_point(len: usize, pred: impl Fn(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, len);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

fn kernel_steps(prep: &Prepared<'_>, rows: &[usize], scales: &[f64], only_first: bool) -> Vec<KernelStep> {
    let d = scales.len();
    let last = if only_first { prep.steps().min(2) } else { prep.steps() };
    (1..last)
        .map(|t| {
            let mut pts: Vec<(Vec<f64>, f64)> = rows
                .iter()
                .map(|&i| {
                    let x = prep.data.trajectory(i).state(t).coords();
                    let scaled: Vec<f64> = (0..d).map(|j| x[j] / scales[j]).collect();
                    (scaled, prep.lambda(i, t - 1))
                })
                .collect();
            pts.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]));
            KernelStep {
                points: pts.iter().flat_map(|p| p.0.iter().copied()).collect(),
                lambdas: pts.iter().map(|p| p.1).collect(),
            }
        })
        .collect()
}

fn check_kernel_inputs(prep: &Prepared<'_>, bandwidth: f64, scales: &[f64]) -> Result<()> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::NonpositiveBandwidth(bandwidth));
    }
    match prep.data.space().state {
        StateKind::RealVector { dimension } if dimension == scales.len() => {}
        StateKind::RealVector { .. } => {
            return Err(Error::config("kernel scales must match the state dimension"))
        }
        StateKind::Finite { .. } => {
            return Err(Error::config("kernel w-model needs real-vector states"))
        }
    }
    if scales.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::config("kernel scales must be positive"));
    }
    Ok(())
}

/// Kernel `ŵ` with unit coordinate scales.
pub fn fit_w_kernel(train: &Dataset, behavior: &Policy, target: &Policy, bandwidth: f64) -> Result<RatioModel> {
    let dim = match train.space().state {
        StateKind::RealVector { dimension } => dimension,
        StateKind::Finite { .. } => return Err(Error::config("kernel w-model needs real-vector states")),
    };
    fit_w_kernel_scaled(train, behavior, target, bandwidth, &vec![1.0; dim])
}

pub fn fit_w_kernel_scaled(
    train: &Dataset,
    behavior: &Policy,
    target: &Policy,
    bandwidth: f64,
    scales: &[f64],
) -> Result<RatioModel> {
    let prep = Prepared::new(train, behavior, target)?;
    fit_w_kernel_rows(&prep, &(0..train.n()).collect::<Vec<_>>(), bandwidth, scales)
}

pub fn fit_w_kernel_rows(prep: &Prepared<'_>, rows: &[usize], bandwidth: f64, scales: &[f64]) -> Result<RatioModel> {
    check_kernel_inputs(prep, bandwidth, scales)?;
    Ok(RatioModel::KernelW(KernelW {
        bandwidth,
        scales: scales.to_vec(),
        steps: kernel_steps(prep, rows, scales, false),
        clip: prep.data.ratio_bound(),
    }))
}

/// Leave-one-out squared error of `ŵ_1(s_1)` predicting `λ_0`, per candidate.
pub fn bandwidth_risks(prep: &Prepared<'_>, rows: &[usize], candidates: &[f64], scales: &[f64]) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::config("at least one bandwidth candidate is required"));
    }
    for &h in candidates {
        check_kernel_inputs(prep, h, scales)?;
    }
    if prep.steps() < 2 {
        return Ok(vec![0.0; candidates.len()]);
    }
    let step = kernel_steps(prep, rows, scales, true).pop().expect("step 1");
    let d = scales.len();
    Ok(candidates
        .iter()
        .map(|&h| {
            let model = KernelW {
                bandwidth: h,
                scales: scales.to_vec(),
                steps: Vec::new(),
                clip: None,
            };
            let m = step.lambdas.len();
            let mut risk = 0.0;
            for k in 0..m {
                let s: Vec<f64> = (0..d).map(|j| step.points[k * d + j] * scales[j]).collect();
                let (num, den) = model.sums(&step, &s, Some(k));
                let pred = if den > 0.0 { num / den } else { 0.0 };
                risk += (step.lambdas[k] - pred).powi(2);
            }
            risk / m as f64
        })
        .collect())
}

/// Candidate with the smallest leave-one-out risk; the first one wins ties.
pub fn select_bandwidth(train: &Dataset, behavior: &Policy, target: &Policy, candidates: &[f64]) -> Result<f64> {
    let dim = match train.space().state {
        StateKind::RealVector { dimension } => dimension,
        StateKind::Finite { .. } => return Err(Error::config("bandwidth selection needs real-vector states")),
    };
    let prep = Prepared::new(train, behavior, target)?;
    select_bandwidth_rows(&prep, &(0..train.n()).collect::<Vec<_>>(), candidates, &vec![1.0; dim])
}

pub fn select_bandwidth_rows(prep: &Prepared<'_>, rows: &[usize], candidates: &[f64], scales: &[f64]) -> Result<f64> {
    let risks = bandwidth_risks(prep, rows, candidates, scales)?;
    let mut best = 0;
    for (k, r) in risks.iter().enumerate() {
        if *r < risks[best] {
            best = k;
        }
    }
    Ok(candidates[best])
}

// ── Direct least squares ───────────────────────────────────────────────────

/// `μ̂_t(s, a) = clip(β_t·φ(s, a), 0, C')`, fitted by ridge regression of `λ_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearMuModel {
    features: FeatureMap,
    n_actions: usize,
    coefs: Vec<Vec<f64>>,
    clip: Option<f64>,
    nonnegative: bool,
}

impl LinearMuModel {
    pub fn coefficients(&self, t: usize) -> &[f64] {
        &self.coefs[t]
    }

    pub fn mu(&self, t: usize, s: StateRef<'_>, a: usize) -> f64 {
        let beta = &self.coefs[t];
        let raw = match self.features.one_hot_index(s, a) {
            Some(j) if self.features.is_one_hot() => beta[j],
            _ => {
                let d = beta.len();
                let mut phi = vec![0.0; d];
                self.features.encode(s, a, self.n_actions, &mut phi);
                phi.iter().zip(beta).map(|(x, b)| x * b).sum()
            }
        };
        clip_mu(raw, self.nonnegative, self.clip)
    }
}

fn clip_mu(raw: f64, nonnegative: bool, bound: Option<f64>) -> f64 {
    if nonnegative {
        clip(raw, bound)
    } else {
        raw.min(bound.unwrap_or(f64::INFINITY))
    }
}

pub fn fit_mu_ls(
    train: &Dataset,
    behavior: &Policy,
    target: &Policy,
    features: &FeatureMap,
    ridge: f64,
) -> Result<RatioModel> {
    let prep = Prepared::new(train, behavior, target)?;
    let all: Vec<usize> = (0..train.n()).collect();
    let (model, _) = fit_mu_ls_sets(&prep, features, ridge, true, &[all])?
        .pop()
        .expect("one fit");
    Ok(model)
}

/// One μ-regression per training set, with ratios along every row.
/// `nonnegative = false` keeps negative predictions (plain least squares).
pub fn fit_mu_ls_sets(
    prep: &Prepared<'_>,
    features: &FeatureMap,
    ridge: f64,
    nonnegative: bool,
    sets: &[Vec<usize>],
) -> Result<Vec<(RatioModel, RatioAlong)>> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::config(format!("ridge must be finite and non-negative, got {ridge}")));
    }
    features.check_space(prep.data.space())?;
    let mem = Membership::new(prep.n(), sets)?;
    let n = prep.n();
    let steps = prep.steps();
    let na = prep.n_actions();
    let nf = mem.n_fits();
    let c = prep.data.ratio_bound();
    let mut coefs = vec![vec![Vec::new(); steps]; nf];
    let mut values = vec![vec![0.0; n * steps]; nf];
    let mut targets = vec![vec![0.0; n]; nf];
    for t in 0..steps {
        let enc = encode_step(prep, features, t);
        for (f, set) in mem.sets.iter().enumerate() {
            for &i in set {
                targets[f][i] = prep.lambda(i, t);
            }
        }
        let beta = solve_step(&enc, prep, t, &mem, &targets, ridge)?;
        let raw = predict_step(&enc, &beta);
        for f in 0..nf {
            for i in 0..n {
                let a = prep.data.trajectory(i).action(t);
                values[f][i * steps + t] = clip_mu(raw[f][i * na + a], nonnegative, c);
            }
        }
        for (f, b) in beta.into_iter().enumerate() {
            coefs[f][t] = b;
        }
    }
    Ok(coefs
        .into_iter()
        .zip(values)
        .map(|(coefs, values)| {
            (
                RatioModel::LsMu(LinearMuModel {
                    features: features.clone(),
                    n_actions: na,
                    coefs,
                    clip: c,
                    nonnegative,
                }),
                RatioAlong::from_values(steps, values),
            )
        })
        .collect())
}
