//! Nuisance learners: objects that fit a q-function or ratio on each of several
//! training sets and report predictions along every logged row.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::StateRef;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::nuisance::{
    EmptyCells,
    fit_mu_ls_sets, fit_q_backward_sets, fit_w_histogram_rows, fit_w_kernel_rows, select_bandwidth_rows,
    AlongQ, RatioAlong, RatioModel,
};
use crate::ratios::{Prepared, QFunction};

/// Predictions of one fitted nuisance along every row, plus the rows it was fitted on.
#[derive(Clone, Debug)]
pub struct NuisanceFit<A> {
    pub along: A,
    pub train_rows: Vec<usize>,
}

pub trait QLearner: Sync {
    /// One fit per training set.
    fn fit_sets(&self, prep: &Prepared<'_>, sets: &[Vec<usize>]) -> Result<Vec<NuisanceFit<AlongQ>>>;
}

pub trait RatioLearner: Sync {
    fn fit_sets(&self, prep: &Prepared<'_>, sets: &[Vec<usize>]) -> Result<Vec<NuisanceFit<RatioAlong>>>;
}

/// Backward-recursive ridge regression on a feature map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearQLearner {
    pub features: FeatureMap,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default)]
    pub empty_cells: EmptyCells,
}

pub fn default_ridge() -> f64 {
    1e-8
}

impl QLearner for LinearQLearner {
    fn fit_sets(&self, prep: &Prepared<'_>, sets: &[Vec<usize>]) -> Result<Vec<NuisanceFit<AlongQ>>> {
        Ok(fit_q_backward_sets(prep, &self.features, self.ridge, self.empty_cells, sets)?
            .into_iter()
            .map(|f| NuisanceFit {
                along: f.along,
                train_rows: f.train_rows,
            })
            .collect())
    }
}

/// A fixed q-function that is not learned from data (an oracle or a deliberately wrong guess).
#[derive(Clone)]
pub struct FixedQ(pub Arc<dyn QFunction + Send + Sync>);

impl FixedQ {
    pub fn new<Q: QFunction + Send + Sync + 'static>(q: Q) -> Self {
        FixedQ(Arc::new(q))
    }

    /// `q ≡ 0`.
    pub fn zero() -> Self {
        FixedQ::new(|_t: usize, _s: StateRef<'_>, _a: usize| 0.0)
    }
}

impl QLearner for FixedQ {
    fn fit_sets(&self, prep: &Prepared<'_>, sets: &[Vec<usize>]) -> Result<Vec<NuisanceFit<AlongQ>>> {
        let along = AlongQ::from_q(self.0.as_ref(), prep);
        Ok(sets
            .iter()
            .map(|_| NuisanceFit {
                along: along.clone(),
                train_rows: Vec::new(),
            })
            .collect())
    }
}

/// The exact cumulative ratio `λ_t` from the known policies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KnownLambda;

impl RatioLearner for KnownLambda {
    fn fit_sets(&self, prep: &Prepared<'_>, sets: &[Vec<usize>]) -> Result<Vec<NuisanceFit<RatioAlong>>> {
        let along = RatioModel::KnownLambda.along(prep)?;
        Ok(sets
            .iter()
            .map(|_| NuisanceFit {
                along: along.clone(),
                train_rows: Vec::new(),
            })
            .collect())
    }
}

/// A fixed `μ_t(s, a)` (e.g. the exact marginal ratio of a tabular model).
#[derive(Clone)]
pub struct FixedMu(pub Arc<dyn Fn(usize, StateRef<'_>, usize) -> f64 + Send + Sync>);

impl FixedMu {
    pub fn new<F: Fn(usize, StateRef<'_>, usize) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        FixedMu(Arc::new(f))
    }
}

impl RatioLearner for FixedMu {
    fn fit_sets(&self, prep: &Prepared<'_>, sets: &[Vec<usize>]) -> Result<Vec<NuisanceFit<RatioAlong>>> {
        let steps = prep.steps();
        let mut values = vec![0.0; prep.n() * steps];
        for i in 0..prep.n() {
            let traj = prep.data.trajectory(i);
            for t in 0..steps {
                values[i * steps + t] = (self.0)(t, traj.state(t), traj.action(t));
            }
        }
        let along = RatioAlong::from_values(steps, values);
        Ok(sets
            .iter()
            .map(|_| NuisanceFit {
                along: along.clone(),
                train_rows: Vec::new(),
            })
            .collect())
    }
}

/// Histogram `ŵ` turned into `μ̂ = clip(η·ŵ)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HistogramWLearner {
    /// Overrides the dataset's ratio bound when set.
    #[serde(default)]
    pub clip: Option<f64>,
}

impl RatioLearner for HistogramWLearner {
    fn fit_sets(&self, prep: &Prepared<'_>, sets: &[Vec<usize>]) -> Result<Vec<NuisanceFit<RatioAlong>>> {
        sets.iter()
            .map(|rows| {
                let model = with_clip(fit_w_histogram_rows(prep, rows)?, self.clip);
                Ok(NuisanceFit {
                    along: model.along(prep)?,
                    train_rows: rows.clone(),
                })
            })
            .collect()
    }
}

fn with_clip(model: RatioModel, clip: Option<f64>) -> RatioModel {
    match clip {
        Some(c) => model.with_clip(Some(c)),
        None => model,
    }
}

/// Bandwidth of the kernel `ŵ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    /// Leave-one-out selection at `t = 1` on each training set.
    Select(Vec<f64>),
}

/// Epanechnikov kernel `ŵ` turned into `μ̂ = clip(η·ŵ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelWLearner {
    pub bandwidth: Bandwidth,
    pub scales: Vec<f64>,
    #[serde(default)]
    pub clip: Option<f64>,
}

impl RatioLearner for KernelWLearner {
    fn fit_sets(&self, prep: &Prepared<'_>, sets: &[Vec<usize>]) -> Result<Vec<NuisanceFit<RatioAlong>>> {
        sets.iter()
            .map(|rows| {
                let h = match &self.bandwidth {
                    Bandwidth::Fixed(h) => *h,
                    Bandwidth::Select(c) => select_bandwidth_rows(prep, rows, c, &self.scales)?,
                };
                let model = with_clip(fit_w_kernel_rows(prep, rows, h, &self.scales)?, self.clip);
                Ok(NuisanceFit {
                    along: model.along(prep)?,
                    train_rows: rows.clone(),
                })
            })
            .collect()
    }
}

/// Ridge regression of `λ_t` on `φ(s_t, a_t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsMuLearner {
    pub features: FeatureMap,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default)]
    pub clip: Option<f64>,
    /// Clip predictions below at zero. Plain least squares when off.
    #[serde(default = "yes")]
    pub nonnegative: bool,
}

fn yes() -> bool {
    true
}

impl RatioLearner for LsMuLearner {
    fn fit_sets(&self, prep: &Prepared<'_>, sets: &[Vec<usize>]) -> Result<Vec<NuisanceFit<RatioAlong>>> {
        let fits = fit_mu_ls_sets(prep, &self.features, self.ridge, self.nonnegative, sets)?;
        fits.into_iter()
            .zip(sets)
            .map(|((model, along), rows)| {
                let along = match self.clip {
                    Some(c) => model.with_clip(Some(c)).along(prep)?,
                    None => along,
                };
                Ok(NuisanceFit {
                    along,
                    train_rows: rows.clone(),
                })
            })
            .collect()
    }
}

pub(crate) fn check_fit_count<A>(fits: &[NuisanceFit<A>], expected: usize) -> Result<()> {
    if fits.len() != expected {
        return Err(Error::invalid(format!(
            "learner returned {} fits for {expected} training sets",
            fits.len()
        )));
    }
    Ok(())
}
