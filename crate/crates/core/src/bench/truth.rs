//! Ground-truth policy values: exact for tabular models, on-policy Monte Carlo
//! otherwise, with an optional on-disk cache.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::mean_return;
use crate::error::{Error, Result};
use crate::oracle::exact_value;
use crate::policy::Policy;
use crate::rng;

use super::problem::BuiltEnv;
use super::with_env;

/// The target value with its Monte Carlo standard error (zero when exact).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueValue {
    pub value: f64,
    pub std_error: f64,
    pub exact: bool,
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Cache key: depends on the dynamics, the target policy and the rollout count only.
pub fn truth_key(env: &BuiltEnv, target: &Policy, rollouts: usize) -> Result<u64> {
    let text = format!("{}|{}|{rollouts}", env.fingerprint()?, serde_json::to_string(target)?);
    Ok(fnv1a(text.as_bytes()))
}

/// Exact DP value when a tabular model exists, else `rollouts` on-policy
/// episodes seeded from `seed`.
pub fn compute_true_value(env: &BuiltEnv, target: &Policy, rollouts: usize, seed: u64) -> Result<TrueValue> {
    if let Some(spec) = env.tabular_model() {
        return Ok(TrueValue {
            value: exact_value(&spec, target)?,
            std_error: 0.0,
            exact: true,
        });
    }
    if rollouts < 2 {
        return Err(Error::config("truth needs at least 2 rollouts"));
    }
    let (value, std_error) = with_env!(env, e => mean_return(e, target, rollouts, seed))?;
    Ok(TrueValue {
        value,
        std_error,
        exact: false,
    })
}

fn cache_path(dir: &Path, key: u64) -> PathBuf {
    dir.join(format!("truth-{key:016x}.json"))
}

/// [`compute_true_value`] behind the cache. The rollout seed is derived from
/// the cache key, so the value does not depend on the experiment's master seed.
pub fn true_value(env: &BuiltEnv, target: &Policy, rollouts: usize, cache_dir: Option<&Path>) -> Result<TrueValue> {
    let key = truth_key(env, target, rollouts)?;
    if let Some(dir) = cache_dir {
        let path = cache_path(dir, key);
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(v) = serde_json::from_str::<TrueValue>(&text) {
                return Ok(v);
            }
        }
    }
    let v = compute_true_value(env, target, rollouts, rng::derive(key, 0x7275_7468))?;
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(cache_path(dir, key), serde_json::to_string(&v)?)?;
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{mixture_policy, CliffWalk, SyntheticGaussianMdp};
    use crate::oracle::{random_policy, TabularMdpSpec};

    #[test]
    fn fnv_matches_reference_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn tabular_dp_value_matches_rollouts() {
        let mut g = rng::root(11);
        let spec = TabularMdpSpec::random(4, 3, 5, &mut g).unwrap();
        let pi = random_policy(4, 3, 0.0, &mut g).unwrap();
        let env = BuiltEnv::Tabular(spec.clone());
        let exact = compute_true_value(&env, &pi, 10, 1).unwrap();
        assert!(exact.exact);
        let (mc, se) = mean_return(&spec, &pi, 200_000, 2).unwrap();
        assert!((exact.value - mc).abs() < 4.0 * se, "{} vs {mc} ± {se}", exact.value);
    }

    #[test]
    fn truth_ignores_behavior_and_is_cached() {
        let env = BuiltEnv::Synthetic(SyntheticGaussianMdp::default());
        let target = SyntheticGaussianMdp::target_policy();
        let dir = tempfile::tempdir().unwrap();
        let a = true_value(&env, &target, 2000, Some(dir.path())).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let b = true_value(&env, &target, 2000, Some(dir.path())).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, true_value(&env, &target, 2000, None).unwrap());
        assert!(!a.exact && a.std_error > 0.0);
    }

    #[test]
    fn cliff_rollout_value_agrees_across_seeds() {
        // Near-optimal greedy path plus 90% uniform noise, as in the benchmark.
        let env = CliffWalk { horizon: 60 };
        let mut rows = vec![vec![0.0; 4]; CliffWalk::N_STATES];
        for (s, row) in rows.iter_mut().enumerate() {
            let a = if s == CliffWalk::START { 0 } else if s / 12 == 2 && s % 12 < 11 { 1 } else { 2 };
            row[a] = 1.0;
        }
        let pi_d = Policy::Tabular(crate::policy::TabularPolicy::stationary(rows).unwrap());
        let target = mixture_policy(pi_d, 0.9).unwrap();
        let (a, sa) = mean_return(&env, &target, 20_000, 1).unwrap();
        let (b, sb) = mean_return(&env, &target, 20_000, 2).unwrap();
        assert!((a - b).abs() < 2.0 * (sa * sa + sb * sb).sqrt());
        let exact = compute_true_value(&BuiltEnv::Cliff(env), &target, 10, 0).unwrap();
        assert!((exact.value - a).abs() < 4.0 * sa);
    }
}
