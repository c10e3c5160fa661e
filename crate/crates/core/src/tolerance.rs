//! Numerical tolerances shared by the exact (tabular) machinery and its checks.

/// Row sums of transition kernels and policies must equal one within this.
pub const PROBABILITY_SUM: f64 = 1e-12;

/// Slack on exact algebraic identities (Bellman consistency, advantage decomposition).
pub const ALGEBRA: f64 = 1e-10;

/// Slack allowed on monotone improvement and on constraint satisfaction per iteration.
pub const IMPROVEMENT: f64 = 1e-9;

/// Slack on the surrogate cost upper bound.
pub const COST_BOUND: f64 = 1e-8;

/// Probabilities are floored here before renormalisation so that KL terms stay finite.
pub const PROBABILITY_FLOOR: f64 = 1e-9;

/// `|c^2/s - delta|` below this counts as the constraint plane touching the trust region.
pub const LQCLP_BORDERLINE: f64 = 1e-10;
