//! Ground truth for tabular problems: exact q-functions by dynamic
//! programming, exact marginal ratios by forward recursion, the efficient
//! influence functions, and Monte Carlo efficiency bounds with closed-form
//! cross-checks.

mod bounds;
mod dp;
mod eif;
mod tabular;

pub use bounds::{
    effbound_from_data, effbound_mc, effbounds, exact_bounds, horizon_bound_check, mis_gap_mc, oracle_draws,
    EffBounds, ExactBounds, HorizonReport, McEstimate, Model, OracleDraws, TabularOracle,
};
pub use dp::{dp_q, exact_mu, exact_value, marginals, Marginals, MuTable, QTable};
pub use eif::{eif_m1, eif_m2, eif_parts, mis_influence, EifParts};
pub use tabular::{random_policy, RewardAtom, TabularMdpSpec};
