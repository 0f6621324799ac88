//! Feature maps on state-action pairs used by linear nuisance models and by
//! greedy policies.

use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{SpaceSpec, StateKind, StateRef};
use crate::error::{Error, Result};
use crate::fastmath::sin_cos;
use crate::rng;

/// A fixed-length encoding `φ(s, a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    /// The single constant feature 1.
    Intercept,
    /// Per-action blocks of monomials `s^p` of the first state coordinate.
    /// `powers = [0, 1]` is the linear model `{1, s, a, s·a}` on two actions.
    Polynomial { powers: Vec<i32> },
    /// Monomials `s^p` shared across actions plus `a·s^p` for every nonzero
    /// power, with `a` the action index. `powers = [0, 2]` is `{1, s², a·s²}`:
    /// no action main effect.
    Interaction { powers: Vec<i32> },
    /// One-hot indicator of `(s, a)` on a finite state space.
    Tabular { n_states: usize },
    /// Random Fourier features of the joint `(s, a)` input.
    Rbf(RbfFeatures),
}

impl FeatureMap {
    pub fn dim(&self, n_actions: usize) -> usize {
        match self {
            FeatureMap::Intercept => 1,
            FeatureMap::Polynomial { powers } => powers.len() * n_actions,
            FeatureMap::Interaction { powers } => powers.len() + powers.iter().filter(|&&p| p != 0).count(),
            FeatureMap::Tabular { n_states } => n_states * n_actions,
            FeatureMap::Rbf(rbf) => rbf.dim(),
        }
    }

    /// True when every row is a single indicator (handled without dense Gram matrices).
    pub fn is_one_hot(&self) -> bool {
        matches!(self, FeatureMap::Tabular { .. })
    }

    /// Index of the active indicator for one-hot maps.
    pub fn one_hot_index(&self, s: StateRef<'_>, a: usize) -> Option<usize> {
        match self {
            FeatureMap::Tabular { n_states } => Some(a * n_states + s.code()),
            _ => None,
        }
    }

    pub fn check_space(&self, space: &SpaceSpec) -> Result<()> {
        match (self, space.state) {
            (FeatureMap::Intercept, _) => Ok(()),
            (
                FeatureMap::Polynomial { powers } | FeatureMap::Interaction { powers },
                StateKind::RealVector { .. },
            ) => {
                if powers.is_empty() {
                    Err(Error::config("polynomial feature map needs at least one power"))
                } else {
                    Ok(())
                }
            }
            (FeatureMap::Tabular { n_states }, StateKind::Finite { cardinality }) => {
                if *n_states == cardinality {
                    Ok(())
                } else {
                    Err(Error::config(format!(
                        "tabular features over {n_states} states, space has {cardinality}"
                    )))
                }
            }
            (FeatureMap::Rbf(rbf), StateKind::RealVector { dimension }) => {
                if rbf.state_dim() != dimension || rbf.n_actions != space.n_actions {
                    Err(Error::config("RBF feature map does not match the space"))
                } else {
                    Ok(())
                }
            }
            _ => Err(Error::config("feature map does not match the state kind")),
        }
    }

    /// Writes `φ(s, a)` for every action: row `a` occupies `out[a*d..(a+1)*d]`.
    pub fn encode_all(&self, s: StateRef<'_>, n_actions: usize, out: &mut [f64]) {
        let d = self.dim(n_actions);
        debug_assert_eq!(out.len(), d * n_actions);
        match self {
            FeatureMap::Intercept => out.fill(1.0),
            FeatureMap::Polynomial { powers } => {
                out.fill(0.0);
                let x = s.scalar();
                let p = powers.len();
                for a in 0..n_actions {
                    for (j, &k) in powers.iter().enumerate() {
                        out[a * d + a * p + j] = x.powi(k);
                    }
                }
            }
            FeatureMap::Interaction { powers } => {
                let x = s.scalar();
                for a in 0..n_actions {
                    let row = &mut out[a * d..(a + 1) * d];
                    let mut j = 0;
                    for &k in powers {
                        row[j] = x.powi(k);
                        j += 1;
                    }
                    for &k in powers.iter().filter(|&&k| k != 0) {
                        row[j] = a as f64 * x.powi(k);
                        j += 1;
                    }
                }
            }
            FeatureMap::Tabular { n_states } => {
                out.fill(0.0);
                for a in 0..n_actions {
                    out[a * d + a * n_states + s.code()] = 1.0;
                }
            }
            FeatureMap::Rbf(rbf) => rbf.encode_all(s.coords(), out),
        }
    }

    /// Writes `φ(s, a)` for one action.
    pub fn encode(&self, s: StateRef<'_>, a: usize, n_actions: usize, out: &mut [f64]) {
        let d = self.dim(n_actions);
        let mut all = vec![0.0; d * n_actions];
        self.encode_all(s, n_actions, &mut all);
        out.copy_from_slice(&all[a * d..(a + 1) * d]);
    }
}

/// Largest state dimension accepted by [`RbfFeatures`].
pub const MAX_STATE_DIM: usize = 8;

/// Serialized parameters of [`RbfFeatures`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RbfParams {
    center: Vec<f64>,
    width: Vec<f64>,
    n_actions: usize,
    action_center: f64,
    action_scale: f64,
    omega: Vec<f64>,
    omega_action: Vec<f64>,
    phase: Vec<f64>,
    intercept: bool,
}

/// Random Fourier features approximating Gaussian kernels on the standardized
/// input `((s − center)/width, (a − action_center)·action_scale)`.
///
/// Each frequency block uses `ω ~ N(0, 2γ)` so that `φ(x)·φ(y) ≈ exp(−γ|x−y|²)`
/// averaged over blocks. An optional trailing constant feature absorbs the mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "RbfParams", into = "RbfParams")]
pub struct RbfFeatures {
    center: Vec<f64>,
    width: Vec<f64>,
    n_actions: usize,
    action_center: f64,
    action_scale: f64,
    omega: Vec<f64>,
    omega_action: Vec<f64>,
    phase: Vec<f64>,
    intercept: bool,
    norm: f64,
    // cos/sin of the action phase, indexed [a * m + k]
    action_cos: Vec<f64>,
    action_sin: Vec<f64>,
}

impl From<RbfParams> for RbfFeatures {
    fn from(p: RbfParams) -> Self {
        let m = p.phase.len();
        let mut action_cos = vec![0.0; p.n_actions * m];
        let mut action_sin = vec![0.0; p.n_actions * m];
        for a in 0..p.n_actions {
            let z = (a as f64 - p.action_center) * p.action_scale;
            for k in 0..m {
                let (s, c) = (p.omega_action[k] * z).sin_cos();
                action_cos[a * m + k] = c;
                action_sin[a * m + k] = s;
            }
        }
        RbfFeatures {
            norm: (2.0 / m.max(1) as f64).sqrt(),
            center: p.center,
            width: p.width,
            n_actions: p.n_actions,
            action_center: p.action_center,
            action_scale: p.action_scale,
            omega: p.omega,
            omega_action: p.omega_action,
            phase: p.phase,
            intercept: p.intercept,
            action_cos,
            action_sin,
        }
    }
}

impl From<RbfFeatures> for RbfParams {
    fn from(r: RbfFeatures) -> Self {
        RbfParams {
            center: r.center,
            width: r.width,
            n_actions: r.n_actions,
            action_center: r.action_center,
            action_scale: r.action_scale,
            omega: r.omega,
            omega_action: r.omega_action,
            phase: r.phase,
            intercept: r.intercept,
        }
    }
}

/// Construction parameters for [`RbfFeatures::sample`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfSpec {
    pub center: Vec<f64>,
    pub width: Vec<f64>,
    pub n_actions: usize,
    #[serde(default = "default_action_scale")]
    pub action_scale: f64,
    pub gammas: Vec<f64>,
    pub per_gamma: usize,
    #[serde(default = "default_true")]
    pub intercept: bool,
    pub seed: u64,
}

fn default_action_scale() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

impl RbfFeatures {
    pub fn sample(spec: &RbfSpec) -> Result<Self> {
        let d = spec.center.len();
        if d > MAX_STATE_DIM {
            return Err(Error::config(format!("RBF state dimension above {MAX_STATE_DIM}")));
        }
        if d == 0 || spec.width.len() != d || spec.width.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::config("RBF center/width must be non-empty, equal length, positive widths"));
        }
        if spec.gammas.is_empty() || spec.per_gamma == 0 || spec.gammas.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::config("RBF needs positive gammas and per_gamma >= 1"));
        }
        if spec.n_actions == 0 {
            return Err(Error::config("RBF needs at least one action"));
        }
        let mut rng = rng::root(spec.seed);
        let m = spec.gammas.len() * spec.per_gamma;
        let mut omega = Vec::with_capacity(m * d);
        let mut omega_action = Vec::with_capacity(m);
        let mut phase = Vec::with_capacity(m);
        let uniform = Uniform::new(0.0, 2.0 * std::f64::consts::PI).expect("valid range");
        for &gamma in &spec.gammas {
            let normal = Normal::new(0.0, (2.0 * gamma).sqrt()).expect("positive sd");
            for _ in 0..spec.per_gamma {
                for _ in 0..d {
                    omega.push(normal.sample(&mut rng));
                }
                omega_action.push(normal.sample(&mut rng));
                phase.push(uniform.sample(&mut rng));
            }
        }
        Ok(RbfParams {
            center: spec.center.clone(),
            width: spec.width.clone(),
            n_actions: spec.n_actions,
            action_center: (spec.n_actions as f64 - 1.0) / 2.0,
            action_scale: spec.action_scale,
            omega,
            omega_action,
            phase,
            intercept: spec.intercept,
        }
        .into())
    }

    pub fn state_dim(&self) -> usize {
        self.center.len()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_frequencies(&self) -> usize {
        self.phase.len()
    }

    pub fn dim(&self) -> usize {
        self.phase.len() + usize::from(self.intercept)
    }

    /// Writes the features of every action at state `x`, row-major by action.
    pub fn encode_all(&self, x: &[f64], out: &mut [f64]) {
        let m = self.phase.len();
        let d = self.center.len();
        let dim = self.dim();
        let mut buf = [0.0f64; MAX_STATE_DIM];
        for j in 0..d {
            buf[j] = (x[j] - self.center[j]) / self.width[j];
        }
        let z = &buf[..d];
        for k in 0..m {
            let row = &self.omega[k * d..(k + 1) * d];
            let mut u = self.phase[k];
            for j in 0..d {
                u += row[j] * z[j];
            }
            let (s, c) = sin_cos(u);
            for a in 0..self.n_actions {
                let idx = a * m + k;
                out[a * dim + k] = self.norm * (c * self.action_cos[idx] - s * self.action_sin[idx]);
            }
        }
        if self.intercept {
            for a in 0..self.n_actions {
                out[a * dim + m] = 1.0;
            }
        }
    }
}
