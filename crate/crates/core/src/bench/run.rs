//! The replication loop and RMSE aggregation.

use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{
    adaptive_from_along, dm_from_along, is_estimate_prepared, mis_from_along, EstimatorKind, IsForm,
    NuisanceFit, NuisanceSet, PolicyValueEstimate,
};
use crate::folds::{assign_folds, FoldAssignment};
use crate::nuisance::{AlongQ, RatioAlong, RatioModel};
use crate::policy::Policy;
use crate::ratios::Prepared;
use crate::rng;

use super::config::ExperimentConfig;
use super::problem::{build_learners, build_policies, BuiltEnv, SettingLearners};
use super::truth::{true_value, TrueValue};
use super::with_env;

const TAG_DATA: u64 = 1;
const TAG_FOLDS: u64 = 2;
const TAG_BOOTSTRAP: u64 = 3;

/// One line of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub env: String,
    pub setting: String,
    pub estimator: String,
    pub n: usize,
    pub replications: usize,
    pub rmse: f64,
    /// Bootstrap standard error of the RMSE over replication errors.
    pub rmse_std_error: f64,
    pub mean_bias: f64,
    pub mean_plug_in_se: f64,
    /// Mean seconds per replication (nuisance fits included); empty unless timing is on.
    pub wall_time: Option<f64>,
    pub failures: usize,
}

/// Everything a run needs besides the configuration.
pub struct Problem {
    pub env: BuiltEnv,
    pub behavior: Policy,
    pub target: Policy,
    /// Required by [`run_problem`]; single-dataset evaluation does without it.
    pub truth: Option<TrueValue>,
    pub learners: Vec<SettingLearners>,
}

impl Problem {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        let mut problem = Problem::prepare(config)?;
        let truth = true_value(
            &problem.env,
            &problem.target,
            config.truth.rollouts,
            config.truth.cache_dir.as_deref(),
        )?;
        problem.truth = Some(truth);
        Ok(problem)
    }

    /// Environment, policies and learners, without the true value.
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let env = BuiltEnv::from_config(&config.env)?;
        let (behavior, target) = build_policies(&env, config)?;
        Problem::with_parts(config, env, behavior, target, None)
    }

    /// Assembles a problem from parts built elsewhere (e.g. a cached `π^d`).
    pub fn with_parts(
        config: &ExperimentConfig,
        env: BuiltEnv,
        behavior: Policy,
        target: Policy,
        truth: Option<TrueValue>,
    ) -> Result<Self> {
        let learners = config
            .settings
            .iter()
            .map(|s| build_learners(s, &env, &config.env, &behavior, &target))
            .collect::<Result<Vec<_>>>()?;
        Ok(Problem {
            env,
            behavior,
            target,
            truth,
            learners,
        })
    }
}

/// Result of one estimator on one replication.
#[derive(Clone, Copy, Debug)]
struct Draw {
    rho_hat: f64,
    std_error: f64,
    seconds: f64,
}

/// Seed of replication `r` at sample size `n`.
pub fn replication_seed(master: u64, n: usize, r: usize) -> u64 {
    rng::derive(rng::derive(master, n as u64), r as u64)
}

/// Runs every replication and aggregates one row per (setting, estimator, n).
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let problem = Problem::build(config)?;
    run_problem(config, &problem)
}

pub fn run_problem(config: &ExperimentConfig, problem: &Problem) -> Result<Vec<ResultRow>> {
    let truth = problem
        .truth
        .ok_or_else(|| Error::config("the problem has no true value"))?
        .value;
    let mut rows = Vec::new();
    for &n in &config.sizes {
        let draws: Vec<Vec<Vec<Option<Draw>>>> = (0..config.replications)
            .into_par_iter()
            .map(|r| replicate(config, problem, n, replication_seed(config.seed, n, r)))
            .collect::<Result<_>>()?;
        for (si, setting) in config.settings.iter().enumerate() {
            for (ei, kind) in setting.estimators.iter().enumerate() {
                let outcomes: Vec<Option<Draw>> = draws.iter().map(|d| d[si][ei]).collect();
                let boot_seed = rng::derive(rng::derive(config.seed, TAG_BOOTSTRAP), rows.len() as u64);
                rows.push(aggregate(
                    config,
                    &setting.name,
                    *kind,
                    n,
                    &outcomes,
                    truth,
                    boot_seed,
                ));
            }
        }
    }
    Ok(rows)
}

fn aggregate(
    config: &ExperimentConfig,
    setting: &str,
    kind: EstimatorKind,
    n: usize,
    outcomes: &[Option<Draw>],
    truth: f64,
    boot_seed: u64,
) -> ResultRow {
    let ok: Vec<Draw> = outcomes.iter().flatten().copied().collect();
    let errors: Vec<f64> = ok.iter().map(|d| d.rho_hat - truth).collect();
    let m = errors.len() as f64;
    let rmse_of = |sq_sum: f64| (sq_sum / m).sqrt();
    let rmse = rmse_of(errors.iter().map(|e| e * e).sum());
    let mean_bias = errors.iter().sum::<f64>() / m;
    let mean_plug_in_se = ok.iter().map(|d| d.std_error).sum::<f64>() / m;
    let rmse_std_error = if errors.len() < 2 {
        0.0
    } else {
        let mut g = rng::root(boot_seed);
        let boots: Vec<f64> = (0..config.bootstrap)
            .map(|_| {
                let s: f64 = (0..errors.len())
                    .map(|_| errors[g.random_range(0..errors.len())].powi(2))
                    .sum();
                rmse_of(s)
            })
            .collect();
        let b = boots.len() as f64;
        let mean = boots.iter().sum::<f64>() / b;
        (boots.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1.0)).sqrt()
    };
    ResultRow {
        env: config.env.name().to_string(),
        setting: setting.to_string(),
        estimator: kind.name().to_string(),
        n,
        replications: outcomes.len(),
        rmse,
        rmse_std_error,
        mean_bias,
        mean_plug_in_se,
        wall_time: config.timing.then(|| ok.iter().map(|d| d.seconds).sum::<f64>() / m),
        failures: outcomes.len() - ok.len(),
    }
}

/// One replication: simulate, then every setting's estimators. Estimator
/// failures become `None`; only simulation failures abort the run.
fn replicate(config: &ExperimentConfig, problem: &Problem, n: usize, seed: u64) -> Result<Vec<Vec<Option<Draw>>>> {
    let data = with_env!(&problem.env, e => crate::envs::simulate(e, &problem.behavior, n, rng::derive(seed, TAG_DATA)))?;
    let prep = match Prepared::new(&data, &problem.behavior, &problem.target) {
        Ok(p) => p,
        Err(_) => {
            return Ok(config.settings.iter().map(|s| vec![None; s.estimators.len()]).collect());
        }
    };
    let fold_seed = rng::derive(seed, TAG_FOLDS);
    Ok(config
        .settings
        .iter()
        .zip(&problem.learners)
        .map(|(setting, learners)| {
            run_setting(&prep, &setting.estimators, learners, config.k, fold_seed)
                .into_iter()
                .map(|r| {
                    r.ok().map(|(e, seconds)| Draw {
                        rho_hat: e.rho_hat,
                        std_error: e.std_error,
                        seconds,
                    })
                })
                .collect()
        })
        .collect())
}

/// Runs setting `setting`'s estimators on one dataset; `fold_seed` drives
/// the cross-fitting split. One result per listed estimator.
pub fn evaluate_dataset(
    config: &ExperimentConfig,
    problem: &Problem,
    setting: usize,
    data: &Dataset,
    fold_seed: u64,
) -> Result<Vec<Result<PolicyValueEstimate>>> {
    let s = config
        .settings
        .get(setting)
        .ok_or_else(|| Error::config(format!("no setting with index {setting}")))?;
    let prep = Prepared::new(data, &problem.behavior, &problem.target)?;
    Ok(run_setting(&prep, &s.estimators, &problem.learners[setting], config.k, fold_seed)
        .into_iter()
        .map(|r| r.map(|(e, _)| e))
        .collect())
}

fn run_setting(
    prep: &Prepared<'_>,
    estimators: &[EstimatorKind],
    learners: &SettingLearners,
    k: usize,
    fold_seed: u64,
) -> Vec<Result<(PolicyValueEstimate, f64)>> {
    let start = Instant::now();
    let needs_folds = estimators.iter().any(|e| e.needs_folds());
    let needs_full = estimators.iter().any(|e| {
        matches!(
            e,
            EstimatorKind::Dm | EstimatorKind::Mis | EstimatorKind::DrAdaptiveM1 | EstimatorKind::DrAdaptiveM2
        )
    });
    let folds = if needs_folds { Some(assign_folds(prep.n(), k, fold_seed)) } else { None };
    let mut sets: Vec<Vec<usize>> = Vec::new();
    if let Some(Ok(f)) = &folds {
        sets.extend((0..f.k()).map(|j| f.complement(j)));
    }
    if needs_full {
        sets.push((0..prep.n()).collect());
    }
    let q_fits = learners.q.as_ref().map(|l| l.fit_sets(prep, &sets));
    let mu_fits = learners.mu.as_ref().map(|l| l.fit_sets(prep, &sets));
    let lambda = estimators
        .iter()
        .any(|e| matches!(e, EstimatorKind::DrlM1 | EstimatorKind::DrAdaptiveM1))
        .then(|| RatioModel::KnownLambda.along(prep));
    let shared = start.elapsed().as_secs_f64();

    estimators
        .iter()
        .map(|kind| {
            let t0 = Instant::now();
            let est = match kind {
                EstimatorKind::Is => is_estimate_prepared(prep, IsForm::PerDecision),
                EstimatorKind::Dm => full_fit(&q_fits, "q").and_then(|q| dm_from_along(q, prep.n())),
                EstimatorKind::Mis => full_fit(&mu_fits, "mu").and_then(|mu| mis_from_along(prep, mu)),
                EstimatorKind::DrAdaptiveM1 => full_fit(&q_fits, "q")
                    .and_then(|q| adaptive_from_along(kind.name(), prep, q, shared_ref(&lambda)?)),
                EstimatorKind::DrAdaptiveM2 => full_fit(&q_fits, "q")
                    .and_then(|q| adaptive_from_along(kind.name(), prep, q, full_fit(&mu_fits, "mu")?)),
                EstimatorKind::DrlM1 | EstimatorKind::DrlM2 => {
                    cross_fitted(prep, *kind, &folds, &q_fits, &mu_fits, &lambda)
                }
            };
            est.map(|e| (e, shared + t0.elapsed().as_secs_f64()))
        })
        .collect()
}

type Fits<A> = Option<Result<Vec<NuisanceFit<A>>>>;

/// Re-raises a shared failure for each estimator that depends on it.
fn shared_err(e: &Error) -> Error {
    match e {
        Error::SingularDesign { t } => Error::SingularDesign { t: *t },
        Error::OverlapViolation { t, action, target_prob } => Error::OverlapViolation {
            t: *t,
            action: *action,
            target_prob: *target_prob,
        },
        other => Error::invalid(other.to_string()),
    }
}

fn shared_ref<A>(x: &Option<Result<A>>) -> Result<&A> {
    match x {
        Some(Ok(a)) => Ok(a),
        Some(Err(e)) => Err(shared_err(e)),
        None => Err(Error::config("nuisance not configured")),
    }
}

/// The fit on the full sample, which is always the last training set.
fn full_fit<'f, A>(fits: &'f Fits<A>, what: &str) -> Result<&'f A> {
    shared_ref(fits)?
        .last()
        .map(|f| &f.along)
        .ok_or_else(|| Error::config(format!("no full-sample {what} fit")))
}

fn cross_fitted(
    prep: &Prepared<'_>,
    kind: EstimatorKind,
    folds: &Option<Result<FoldAssignment>>,
    q_fits: &Fits<AlongQ>,
    mu_fits: &Fits<RatioAlong>,
    lambda: &Option<Result<RatioAlong>>,
) -> Result<PolicyValueEstimate> {
    let folds = shared_ref(folds)?;
    let k = folds.k();
    let q = shared_ref(q_fits)?[..k].to_vec();
    let ratio = if kind == EstimatorKind::DrlM1 {
        let along = shared_ref(lambda)?;
        (0..k)
            .map(|_| NuisanceFit {
                along: along.clone(),
                train_rows: Vec::new(),
            })
            .collect()
    } else {
        shared_ref(mu_fits)?[..k].to_vec()
    };
    NuisanceSet::new(folds.clone(), q, ratio)?.estimate(prep, kind.name())
}

/// Fails when any row's failure fraction exceeds the budget.
pub fn check_failure_budget(rows: &[ResultRow], max_fraction: f64) -> Result<()> {
    for row in rows {
        if row.failures as f64 > max_fraction * row.replications as f64 || row.failures == row.replications {
            return Err(Error::FailureBudgetExceeded {
                failures: row.failures,
                attempts: row.replications,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{write_csv, ExperimentConfig};
    use crate::envs::{mean_return, simulate, SyntheticGaussianMdp};

    fn on_policy_config() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            r#"
            name = "on_policy"
            sizes = [50]
            replications = 1
            seed = 9
            truth = { rollouts = 4000 }

            [env]
            kind = "synthetic"
            horizon = 5

            [policies]
            source = "explicit"
            behavior = { kind = "logistic_bernoulli", scale = 0.2, slope = 0.1, offset = 0.1 }
            target = { kind = "logistic_bernoulli", scale = 0.2, slope = 0.1, offset = 0.1 }

            [[settings]]
            name = "plain"
            estimators = ["is"]
            "#,
        )
        .unwrap()
    }

    #[test]
    fn single_on_policy_is_replication_is_the_mean_return_error() {
        let config = on_policy_config();
        let rows = run_experiment(&config).unwrap();
        assert_eq!(rows.len(), 1);
        let env = SyntheticGaussianMdp { horizon: 5, ..Default::default() };
        let policy = SyntheticGaussianMdp::target_policy();
        let data = simulate(&env, &policy, 50, rng::derive(replication_seed(9, 50, 0), TAG_DATA)).unwrap();
        let mean = data.trajectories().iter().map(|t| t.total_reward()).sum::<f64>() / 50.0;
        let problem = Problem::build(&config).unwrap();
        assert!((rows[0].rmse - (mean - problem.truth.unwrap().value).abs()).abs() < 1e-12);
        assert_eq!(rows[0].rmse_std_error, 0.0);
        assert_eq!(rows[0].failures, 0);
    }

    fn mixed_config() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            r#"
            name = "mixed"
            sizes = [40, 80]
            replications = 6
            seed = 3
            bootstrap = 50
            truth = { rollouts = 2000 }

            [env]
            kind = "synthetic"
            horizon = 4

            [[settings]]
            name = "correct"
            estimators = ["is", "dm", "mis", "drl_m1", "drl_m2", "dr_adaptive_m1", "dr_adaptive_m2"]
            q = { kind = "linear", features = { kind = "polynomial", powers = [0, 1] } }
            mu = { kind = "ls_mu", features = { kind = "polynomial", powers = [0, 1] } }

            [[settings]]
            name = "kernel"
            estimators = ["mis", "drl_m2"]
            q = { kind = "zero" }
            mu = { kind = "kernel_w", bandwidth = { select = [0.2, 0.5] } }
            "#,
        )
        .unwrap()
    }

    fn csv_of(rows: &[ResultRow]) -> Vec<u8> {
        let mut buf = Vec::new();
        write_csv(rows, &mut buf).unwrap();
        buf
    }

    #[test]
    fn runs_are_deterministic_across_thread_counts() {
        let config = mixed_config();
        let problem = Problem::build(&config).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| run_problem(&config, &problem)).unwrap();
        let b = four.install(|| run_problem(&config, &problem)).unwrap();
        assert_eq!(a.len(), 2 * 9);
        assert_eq!(csv_of(&a), csv_of(&b));
        for row in &a {
            assert_eq!(row.failures, 0, "{row:?}");
            assert!(row.rmse.is_finite() && row.rmse + 1e-12 >= row.mean_bias.abs());
        }
        check_failure_budget(&a, 0.0).unwrap();
    }

    #[test]
    fn replication_outcomes_do_not_depend_on_order() {
        let config = mixed_config();
        let problem = Problem::build(&config).unwrap();
        let fwd: Vec<_> = (0..4).map(|r| replicate(&config, &problem, 40, replication_seed(3, 40, r)).unwrap()).collect();
        let rev: Vec<_> = (0..4)
            .rev()
            .map(|r| replicate(&config, &problem, 40, replication_seed(3, 40, r)).unwrap())
            .collect();
        for (x, y) in fwd.iter().zip(rev.iter().rev()) {
            for (sx, sy) in x.iter().zip(y) {
                for (dx, dy) in sx.iter().zip(sy) {
                    assert_eq!(dx.map(|d| d.rho_hat), dy.map(|d| d.rho_hat));
                }
            }
        }
    }

    #[test]
    fn estimator_failures_are_counted_not_fatal() {
        // A singular design with zero ridge fails every DM fit.
        let mut config = mixed_config();
        config.settings.truncate(1);
        config.settings[0].estimators = vec![EstimatorKind::Is, EstimatorKind::Dm];
        config.settings[0].q = Some(crate::bench::QConfig::Linear {
            features: crate::bench::FeatureConfig::Polynomial { powers: vec![0, 0] },
            ridge: 0.0,
            empty_cells: Default::default(),
        });
        let rows = run_experiment(&config).unwrap();
        let dm = rows.iter().find(|r| r.estimator == "dm").unwrap();
        assert_eq!(dm.failures, dm.replications);
        assert!(rows.iter().find(|r| r.estimator == "is").unwrap().failures == 0);
        assert!(matches!(
            check_failure_budget(&rows, 0.05),
            Err(Error::FailureBudgetExceeded { .. })
        ));
    }

    #[test]
    fn truth_for_synthetic_env_is_monte_carlo() {
        let config = on_policy_config();
        let problem = Problem::build(&config).unwrap();
        let env = SyntheticGaussianMdp { horizon: 5, ..Default::default() };
        let (m, se) = mean_return(&env, &problem.target, 4000, 77).unwrap();
        assert!((problem.truth.unwrap().value - m).abs() < 4.0 * (se * se + problem.truth.unwrap().std_error.powi(2)).sqrt());
    }
}
