//! Exact safe multi-agent policy iteration on tabular games.
//!
//! Each iteration evaluates `pi_k` exactly, computes the penalty coefficients,
//! draws a random agent order and updates agents one at a time. Agent `i_h`
//! maximises its penalised surrogate over the set of policies that stay within
//! the max-KL radius `delta^{i_h}` and keep its own cost bound certified.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cmg::{draw_permutation, JointPolicy, TabularCmg, TabularPolicy};
use crate::error::{Error, Result};
use crate::oracle::{
    cost_advantage_table, max_kl, occupancy_expectation, surrogate_advantage_table, PolicyEvaluation,
};
use crate::serde_util;
use crate::tolerance;

/// `4 gamma / (1 - gamma)^2`, the factor shared by every penalty coefficient.
pub fn penalty_factor(discount: f64) -> f64 {
    4.0 * discount / ((1.0 - discount) * (1.0 - discount))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyCoefficients {
    /// `nu`
    pub reward: f64,
    /// `nu^i_j`
    pub cost: Vec<Vec<f64>>,
}

pub fn penalty_coefficients(game: &TabularCmg, eval: &PolicyEvaluation) -> PenaltyCoefficients {
    let factor = penalty_factor(game.discount());
    PenaltyCoefficients {
        reward: factor * eval.values.max_abs_advantage(),
        cost: (0..game.n_agents())
            .map(|i| {
                (0..game.n_costs(i))
                    .map(|j| factor * eval.values.max_abs_cost_advantage(game, i, j))
                    .collect()
            })
            .collect(),
    }
}

/// `numerator / nu` with the degenerate `nu = 0` case mapped to `+inf` (no
/// restriction) or `-inf` (already violated).
fn radius_term(numerator: f64, nu: f64) -> f64 {
    if numerator.is_nan() {
        return f64::NEG_INFINITY;
    }
    if nu > 0.0 {
        numerator / nu
    } else if numerator >= 0.0 {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    }
}

/// One agent's own cost constraint inside the feasible set.
#[derive(Debug, Clone)]
struct OwnConstraint {
    current: f64,
    advantage: Vec<f64>,
    nu: f64,
    /// `c - nu * sum of prior KLs`
    limit: f64,
}

/// The per-agent problem of one sweep step.
#[derive(Debug, Clone)]
pub struct AgentProblem {
    pub agent: usize,
    pub radius: f64,
    pub nu: f64,
    base: TabularPolicy,
    advantage: Vec<f64>,
    rho: Vec<f64>,
    constraints: Vec<OwnConstraint>,
}

/// A scored policy.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub policy: TabularPolicy,
    pub value: f64,
    pub kl: f64,
    pub member: bool,
}

impl Candidate {
    fn beats(&self, other: &Candidate) -> bool {
        self.value > other.value || (self.value == other.value && self.kl < other.kl)
    }
}

impl AgentProblem {
    pub fn base(&self) -> &TabularPolicy {
        &self.base
    }

    fn expectation(&self, policy: &TabularPolicy, table: &[f64]) -> f64 {
        let k = policy.n_actions();
        self.rho
            .iter()
            .enumerate()
            .map(|(s, w)| {
                w * policy
                    .row(s)
                    .iter()
                    .zip(&table[s * k..(s + 1) * k])
                    .map(|(p, a)| p * a)
                    .sum::<f64>()
            })
            .sum()
    }

    /// Surrogate return of `policy` given the agents already updated.
    pub fn surrogate(&self, policy: &TabularPolicy) -> f64 {
        self.expectation(policy, &self.advantage)
    }

    /// `L(., policy) - nu * D^max_KL(pi_k, policy)`.
    pub fn objective(&self, policy: &TabularPolicy) -> Result<f64> {
        Ok(self.surrogate(policy) - self.nu * max_kl(&self.base, policy)?)
    }

    /// Scores `policy`; membership is tested against the set shrunk by `margin`.
    pub fn score(&self, policy: TabularPolicy, margin: f64) -> Result<Candidate> {
        let kl = max_kl(&self.base, &policy)?;
        let value = self.surrogate(&policy) - self.nu * kl;
        let member = self.member_given_kl(&policy, kl, margin);
        Ok(Candidate {
            policy,
            value,
            kl,
            member,
        })
    }

    fn member_given_kl(&self, policy: &TabularPolicy, kl: f64, margin: f64) -> bool {
        if !(kl <= self.radius * (1.0 - margin)) {
            return false;
        }
        self.constraints.iter().all(|c| {
            if c.limit == f64::INFINITY {
                return true;
            }
            let bound = c.current + self.expectation(policy, &c.advantage) + c.nu * kl;
            bound <= c.limit - margin * (1.0 + c.limit.abs())
        })
    }

    /// Membership in the feasible set.
    pub fn is_member(&self, policy: &TabularPolicy) -> Result<bool> {
        let kl = max_kl(&self.base, policy)?;
        Ok(self.member_given_kl(policy, kl, 0.0))
    }

    /// Search directions: exponential tilts of `pi_k` toward the surrogate
    /// advantage, optionally traded off against each own cost advantage.
    fn scores(&self) -> Vec<Vec<f64>> {
        let scale = |t: &[f64]| t.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let reward_scale = scale(&self.advantage);
        let mut out = Vec::new();
        if reward_scale > 0.0 {
            out.push(self.advantage.iter().map(|a| a / reward_scale).collect());
        }
        for c in &self.constraints {
            let cost_scale = scale(&c.advantage);
            if cost_scale == 0.0 {
                continue;
            }
            out.push(c.advantage.iter().map(|a| -a / cost_scale).collect());
            if reward_scale > 0.0 {
                for mu in [0.3, 1.0, 3.0, 10.0] {
                    out.push(
                        self.advantage
                            .iter()
                            .zip(&c.advantage)
                            .map(|(a, b)| a / reward_scale - mu * b / cost_scale)
                            .collect(),
                    );
                }
            }
        }
        out
    }
}

/// `pi(a|s) proportional to base(a|s) * exp(eta * score(s, a))`.
fn tilt(base: &TabularPolicy, score: &[f64], eta: f64) -> Result<TabularPolicy> {
    let k = base.n_actions();
    let mut weights = Vec::with_capacity(base.table().len());
    for s in 0..base.n_states() {
        let row = &score[s * k..(s + 1) * k];
        let top = row.iter().fold(f64::NEG_INFINITY, |m, x| m.max(eta * x));
        weights.extend(
            base.row(s)
                .iter()
                .zip(row)
                .map(|(p, x)| p * (eta * x - top).exp()),
        );
    }
    TabularPolicy::from_weights(base.n_states(), k, weights)
}

const TILT_STRENGTHS: [f64; 16] = [
    1e-2, 2.2e-2, 4.6e-2, 1e-1, 2.2e-1, 4.6e-1, 1.0, 2.2, 4.6, 10.0, 22.0, 46.0, 100.0, 220.0, 460.0, 1000.0,
];

/// Best member on the segment from `base` to `target`, assuming membership is
/// an interval containing `base` and the value is concave along the segment.
fn segment_search<F>(base: &TabularPolicy, target: &TabularPolicy, steps: usize, score: &F) -> Result<Option<Candidate>>
where
    F: Fn(TabularPolicy) -> Result<Candidate>,
{
    let end = score(base.mix(target, 1.0))?;
    let t_max = if end.member {
        1.0
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..steps {
            let mid = 0.5 * (lo + hi);
            if score(base.mix(target, mid))?.member {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    if t_max <= 0.0 {
        return Ok(None);
    }
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.0, t_max);
    let mut x1 = b - golden * (b - a);
    let mut x2 = a + golden * (b - a);
    let mut f1 = score(base.mix(target, x1))?.value;
    let mut f2 = score(base.mix(target, x2))?.value;
    for _ in 0..steps {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + golden * (b - a);
            f2 = score(base.mix(target, x2))?.value;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - golden * (b - a);
            f1 = score(base.mix(target, x1))?.value;
        }
    }
    let mut best: Option<Candidate> = None;
    for t in [0.5 * (a + b), t_max] {
        let c = score(base.mix(target, t))?;
        if c.member && best.as_ref().is_none_or(|b| c.beats(b)) {
            best = Some(c);
        }
    }
    Ok(best)
}

/// Maximises `score` over tilted segments from `base`; the incumbent is always a candidate.
fn tilted_search<F>(base: &TabularPolicy, directions: &[Vec<f64>], steps: usize, score: F) -> Result<(Candidate, Candidate)>
where
    F: Fn(TabularPolicy) -> Result<Candidate>,
{
    let incumbent = score(base.clone())?;
    let mut best = incumbent.clone();
    for direction in directions {
        for eta in TILT_STRENGTHS {
            let target = tilt(base, direction, eta)?;
            if let Some(c) = segment_search(base, &target, steps, &score)? {
                if !best.member || c.beats(&best) {
                    best = c;
                }
            }
        }
    }
    Ok((incumbent, best))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeIterationConfig {
    /// Max-KL radius of the cost-reduction step taken while `pi_k` is infeasible.
    pub recovery_radius: f64,
    /// The cost-reduction step aims this far below each violated bound.
    pub recovery_margin: f64,
    /// Bisection and golden-section iterations per search segment.
    pub search_steps: usize,
    /// Relative shrinkage of the feasible set during search, so that rounding in
    /// the exact re-evaluation cannot push an accepted update across a bound.
    pub search_margin: f64,
}

impl Default for SafeIterationConfig {
    fn default() -> Self {
        Self {
            recovery_radius: 0.02,
            recovery_margin: 1e-3,
            search_steps: 60,
            search_margin: 1e-12,
        }
    }
}

/// Outcome of one agent's update.
#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub policy: TabularPolicy,
    pub objective: f64,
    pub incumbent_objective: f64,
    pub kl: f64,
    /// False when the incumbent was kept.
    pub moved: bool,
    pub incumbent_member: bool,
}

/// Approximate argmax of the penalised surrogate over the feasible set. Returns
/// the incumbent unless a member with a strictly larger objective is found.
pub fn inner_maximize(problem: &AgentProblem, config: &SafeIterationConfig) -> Result<InnerOutcome> {
    let (mut incumbent, best) = tilted_search(&problem.base, &problem.scores(), config.search_steps, |p| {
        problem.score(p, config.search_margin)
    })?;
    let moved = best.member && best.beats(&incumbent) && best.value > incumbent.value;
    incumbent.member = problem.is_member(&incumbent.policy)?;
    let chosen = if moved { best } else { incumbent.clone() };
    Ok(InnerOutcome {
        objective: chosen.value,
        kl: chosen.kl,
        policy: chosen.policy,
        incumbent_objective: incumbent.value,
        moved,
        incumbent_member: incumbent.member,
    })
}

/// State of a sweep through the agents within one iteration.
#[derive(Debug, Clone)]
pub struct Sweep<'a> {
    game: &'a TabularCmg,
    base: &'a JointPolicy,
    eval: &'a PolicyEvaluation,
    coefficients: &'a PenaltyCoefficients,
    order: Vec<usize>,
    updated: Vec<TabularPolicy>,
    kls: Vec<f64>,
    surrogate_costs: Vec<Vec<f64>>,
}

impl<'a> Sweep<'a> {
    pub fn new(
        game: &'a TabularCmg,
        base: &'a JointPolicy,
        eval: &'a PolicyEvaluation,
        coefficients: &'a PenaltyCoefficients,
        order: Vec<usize>,
    ) -> Result<Self> {
        let mut seen = vec![false; game.n_agents()];
        for &i in &order {
            if i >= seen.len() || seen[i] {
                return Err(Error::InvalidInput("order is not a permutation of the agents".into()));
            }
            seen[i] = true;
        }
        if order.len() != game.n_agents() {
            return Err(Error::InvalidInput("order is not a permutation of the agents".into()));
        }
        Ok(Self {
            game,
            base,
            eval,
            coefficients,
            order,
            updated: Vec::new(),
            kls: Vec::new(),
            surrogate_costs: Vec::new(),
        })
    }

    /// Zero-based position `h - 1` of the next agent to update.
    pub fn position(&self) -> usize {
        self.updated.len()
    }

    pub fn is_done(&self) -> bool {
        self.position() == self.order.len()
    }

    pub fn current_agent(&self) -> usize {
        self.order[self.position()]
    }

    /// `sum_{u < h} D^max_KL(pi^{i_u}_k, pi^{i_u}_{k+1})`
    pub fn prior_kl_sum(&self) -> f64 {
        self.kls.iter().sum()
    }

    /// KL radius `delta^{i_h}` for the next agent.
    pub fn radius(&self) -> f64 {
        let h = self.position();
        let prior = self.prior_kl_sum();
        let mut delta = f64::INFINITY;
        for (pos, &l) in self.order.iter().enumerate() {
            if pos == h {
                continue;
            }
            for j in 0..self.game.n_costs(l) {
                let c = self.game.bound(l, j);
                if c == f64::INFINITY {
                    continue;
                }
                let nu = self.coefficients.cost[l][j];
                let surrogate = if pos < h { self.surrogate_costs[pos][j] } else { 0.0 };
                let numerator = c - self.eval.expected_costs[l][j] - surrogate - nu * prior;
                delta = delta.min(radius_term(numerator, nu));
            }
        }
        delta
    }

    pub fn prior_updates(&self) -> Vec<(usize, &TabularPolicy)> {
        self.order.iter().copied().zip(self.updated.iter()).collect()
    }

    /// The problem faced by the next agent.
    pub fn problem(&self) -> Result<AgentProblem> {
        let agent = self.current_agent();
        let prior = self.prior_updates();
        let advantage = surrogate_advantage_table(self.game, self.base, &self.eval.values, &prior, agent)?;
        let prior_kl = self.prior_kl_sum();
        let constraints = (0..self.game.n_costs(agent))
            .map(|j| {
                let nu = self.coefficients.cost[agent][j];
                Ok(OwnConstraint {
                    current: self.eval.expected_costs[agent][j],
                    advantage: cost_advantage_table(self.game, &self.eval.values, agent, j)?,
                    nu,
                    limit: self.game.bound(agent, j) - nu * prior_kl,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AgentProblem {
            agent,
            radius: self.radius(),
            nu: self.coefficients.reward,
            base: self.base.agent(agent).clone(),
            advantage,
            rho: self.eval.occupancy.rho.clone(),
            constraints,
        })
    }

    /// Records the new policy of the current agent.
    pub fn commit(&mut self, policy: TabularPolicy) -> Result<()> {
        let agent = self.current_agent();
        let kl = max_kl(self.base.agent(agent), &policy)?;
        let surrogate = (0..self.game.n_costs(agent))
            .map(|j| {
                let table = cost_advantage_table(self.game, &self.eval.values, agent, j)?;
                Ok(occupancy_expectation(&self.eval.occupancy, &policy, &table))
            })
            .collect::<Result<Vec<_>>>()?;
        self.updated.push(policy);
        self.kls.push(kl);
        self.surrogate_costs.push(surrogate);
        Ok(())
    }

    /// `pi_k` with the agents updated so far replaced.
    pub fn partial_policy(&self) -> JointPolicy {
        let mut joint = self.base.clone();
        for (&i, p) in self.order.iter().zip(&self.updated) {
            joint.set_agent(i, p.clone());
        }
        joint
    }

    /// Largest excess over `c^{i_l}_j` of the certified cost bound of the partial
    /// policy: `J + (L if updated) + nu * sum of KLs so far`.
    pub fn certified_bound_excess(&self) -> f64 {
        let kl_sum = self.prior_kl_sum();
        let mut worst = f64::NEG_INFINITY;
        for (pos, &l) in self.order.iter().enumerate() {
            for j in 0..self.game.n_costs(l) {
                let c = self.game.bound(l, j);
                if c == f64::INFINITY {
                    continue;
                }
                let surrogate = if pos < self.updated.len() { self.surrogate_costs[pos][j] } else { 0.0 };
                let bound = self.eval.expected_costs[l][j] + surrogate + self.coefficients.cost[l][j] * kl_sum;
                worst = worst.max(bound - c);
            }
        }
        worst
    }

    pub fn kls(&self) -> &[f64] {
        &self.kls
    }
}

/// Record of one iteration `pi_k -> pi_{k+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationCertificate {
    pub iteration: usize,
    pub order: Vec<usize>,
    pub permutation_seed: u64,
    /// `J(pi_k)`
    pub expected_return: f64,
    /// `J^i_j(pi_k)`
    pub expected_costs: Vec<Vec<f64>>,
    pub feasible: bool,
    pub recovery: bool,
    pub coefficients: PenaltyCoefficients,
    /// `delta^{i_h}` per position (`+inf` when no other agent is constrained).
    #[serde(with = "serde_util::nullable_vec")]
    pub radii: Vec<f64>,
    /// `D^max_KL(pi^{i_h}_k, pi^{i_h}_{k+1})` per position.
    pub kls: Vec<f64>,
    /// Penalised objective of the chosen update minus that of the incumbent, per position.
    pub objective_gains: Vec<f64>,
    /// Whether a non-incumbent candidate was accepted, per position.
    pub accepted: Vec<bool>,
    /// Certified bound excess after each position's update (nonpositive when
    /// certified, `None` when no bound is finite).
    pub bound_excess: Vec<Option<f64>>,
    /// Exact worst constraint excess of the partially updated joint policy after each position.
    pub partial_violation: Vec<Option<f64>>,
    pub return_after: f64,
    pub costs_after: Vec<Vec<f64>>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SafeIterationRun {
    pub policy: JointPolicy,
    pub certificates: Vec<IterationCertificate>,
}

/// Cost-reduction step for an agent while `pi_k` violates its constraints:
/// maximise `-sum_j max(0, J^i_j + L^i_j(pi) - c^i_j + margin)` within the recovery radius.
fn recovery_step(
    game: &TabularCmg,
    base: &JointPolicy,
    eval: &PolicyEvaluation,
    agent: usize,
    config: &SafeIterationConfig,
) -> Result<Option<(TabularPolicy, f64)>> {
    let violated: Vec<usize> = (0..game.n_costs(agent))
        .filter(|&j| eval.expected_costs[agent][j] > game.bound(agent, j))
        .collect();
    if violated.is_empty() {
        return Ok(None);
    }
    let tables = (0..game.n_costs(agent))
        .map(|j| cost_advantage_table(game, &eval.values, agent, j))
        .collect::<Result<Vec<_>>>()?;
    let own = base.agent(agent);
    let score = |policy: TabularPolicy| -> Result<Candidate> {
        let kl = max_kl(own, &policy)?;
        let value = -(0..game.n_costs(agent))
            .map(|j| {
                let bound = eval.expected_costs[agent][j] + occupancy_expectation(&eval.occupancy, &policy, &tables[j]);
                (bound - game.bound(agent, j) + config.recovery_margin).max(0.0)
            })
            .sum::<f64>();
        Ok(Candidate {
            member: kl <= config.recovery_radius,
            policy,
            value,
            kl,
        })
    };
    let directions: Vec<Vec<f64>> = violated
        .iter()
        .map(|&j| {
            let scale = tables[j].iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            tables[j].iter().map(|a| if scale > 0.0 { -a / scale } else { 0.0 }).collect()
        })
        .collect();
    let (incumbent, best) = tilted_search(own, &directions, config.search_steps, score)?;
    if best.member && best.value > incumbent.value {
        Ok(Some((best.policy, best.kl)))
    } else {
        Ok(None)
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Runs `iterations` steps of safe policy iteration from `initial`.
pub fn safe_iteration<R: Rng + ?Sized>(
    game: &TabularCmg,
    initial: &JointPolicy,
    iterations: usize,
    config: &SafeIterationConfig,
    rng: &mut R,
) -> Result<SafeIterationRun> {
    initial.validate_for(game)?;
    let mut policy = initial.clone();
    let mut certificates = Vec::with_capacity(iterations);
    for k in 0..iterations {
        let eval = PolicyEvaluation::new(game, &policy)?;
        let coefficients = penalty_coefficients(game, &eval);
        let permutation = draw_permutation(game.n_agents(), rng);
        let feasible = eval.is_feasible(game, tolerance::ALGEBRA);
        let mut flags = Vec::new();
        let mut radii = Vec::new();
        let mut kls = Vec::new();
        let mut gains = Vec::new();
        let mut accepted = Vec::new();
        let mut bound_excess = Vec::new();
        let mut partial_violation = Vec::new();
        let next = if feasible {
            let mut sweep = Sweep::new(game, &policy, &eval, &coefficients, permutation.order.clone())?;
            while !sweep.is_done() {
                let problem = sweep.problem()?;
                let outcome = inner_maximize(&problem, config)?;
                if !outcome.incumbent_member {
                    flags.push(format!("incumbent_outside_feasible_set:{}", problem.agent));
                }
                radii.push(problem.radius);
                kls.push(outcome.kl);
                gains.push(outcome.objective - outcome.incumbent_objective);
                accepted.push(outcome.moved);
                sweep.commit(outcome.policy)?;
                bound_excess.push(finite(sweep.certified_bound_excess()));
                let partial = PolicyEvaluation::new(game, &sweep.partial_policy())?;
                partial_violation.push(finite(partial.worst_violation(game)));
            }
            sweep.partial_policy()
        } else {
            flags.push("recovery".to_string());
            let mut next = policy.clone();
            for &agent in &permutation.order {
                match recovery_step(game, &policy, &eval, agent, config)? {
                    Some((p, kl)) => {
                        next.set_agent(agent, p);
                        kls.push(kl);
                        accepted.push(true);
                    }
                    None => {
                        kls.push(0.0);
                        accepted.push(false);
                    }
                }
                radii.push(config.recovery_radius);
                gains.push(0.0);
            }
            next
        };
        let after = PolicyEvaluation::new(game, &next)?;
        certificates.push(IterationCertificate {
            iteration: k,
            order: permutation.order,
            permutation_seed: permutation.seed,
            expected_return: eval.expected_return,
            expected_costs: eval.expected_costs.clone(),
            feasible,
            recovery: !feasible,
            coefficients,
            radii,
            kls,
            objective_gains: gains,
            accepted,
            bound_excess,
            partial_violation,
            return_after: after.expected_return,
            costs_after: after.expected_costs,
            flags,
        });
        policy = next;
    }
    Ok(SafeIterationRun { policy, certificates })
}

/// Summary of the monotonic-improvement and safety claims over a run.
#[derive(Debug, Clone, PartialEq)]
pub struct GuaranteeCheck {
    /// Index of the first feasible iterate, if any.
    pub first_feasible: Option<usize>,
    /// Largest `J(pi_k) - J(pi_{k+1})` from the first feasible iterate on.
    pub max_return_drop: f64,
    /// Largest `J^i_j(pi_k) - c^i_j` from the first feasible iterate on.
    pub max_violation: f64,
}

impl GuaranteeCheck {
    pub fn holds(&self, tolerance: f64) -> bool {
        self.first_feasible.is_some() && self.max_return_drop <= tolerance && self.max_violation <= tolerance
    }
}

pub fn check_guarantees(game: &TabularCmg, certificates: &[IterationCertificate]) -> GuaranteeCheck {
    let first = certificates.iter().position(|c| c.feasible);
    let mut drop = f64::NEG_INFINITY;
    let mut violation = f64::NEG_INFINITY;
    if let Some(start) = first {
        for c in &certificates[start..] {
            drop = drop.max(c.expected_return - c.return_after);
            for (costs, bounds) in [&c.expected_costs, &c.costs_after].into_iter().map(|cs| (cs, game.bounds())) {
                for (js, bs) in costs.iter().zip(bounds) {
                    for (j, b) in js.iter().zip(bs) {
                        violation = violation.max(j - b);
                    }
                }
            }
        }
    }
    GuaranteeCheck {
        first_feasible: first,
        max_return_drop: drop,
        max_violation: violation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmg::random_tabular_cmg;
    use crate::rng::seeded_rng;

    #[test]
    fn penalty_factor_plug_in() {
        assert!((penalty_factor(0.99) - 39600.0).abs() < 1e-6);
        assert_eq!(penalty_factor(0.0), 0.0);
    }

    #[test]
    fn radius_term_degenerate_nu() {
        assert_eq!(radius_term(1.0, 0.0), f64::INFINITY);
        assert_eq!(radius_term(-1.0, 0.0), f64::NEG_INFINITY);
        assert_eq!(radius_term(1.0, 4.0), 0.25);
    }

    #[test]
    fn tilt_with_zero_strength_is_identity() {
        let base = TabularPolicy::random(3, 3, 1.0, &mut seeded_rng(0));
        let t = tilt(&base, &[1.0; 9], 0.0).unwrap();
        for (a, b) in t.table().iter().zip(base.table()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_iterations_return_initial() {
        let g = random_tabular_cmg(3, 2, &[2, 2], 1, 0).unwrap();
        let pi = JointPolicy::uniform(&g);
        let run = safe_iteration(&g, &pi, 0, &SafeIterationConfig::default(), &mut seeded_rng(0)).unwrap();
        assert_eq!(run.policy, pi);
        assert!(run.certificates.is_empty());
    }

    #[test]
    fn sweep_rejects_bad_order() {
        let g = random_tabular_cmg(2, 2, &[2, 2], 1, 0).unwrap();
        let pi = JointPolicy::uniform(&g);
        let eval = PolicyEvaluation::new(&g, &pi).unwrap();
        let coef = penalty_coefficients(&g, &eval);
        assert!(Sweep::new(&g, &pi, &eval, &coef, vec![0, 0]).is_err());
        assert!(Sweep::new(&g, &pi, &eval, &coef, vec![0]).is_err());
    }

    #[test]
    fn certificate_json_round_trip_with_infinite_radius() {
        let g = random_tabular_cmg(2, 1, &[2], 1, 5).unwrap().unconstrained();
        let run = safe_iteration(&g, &JointPolicy::uniform(&g), 1, &SafeIterationConfig::default(), &mut seeded_rng(1)).unwrap();
        let cert = &run.certificates[0];
        assert_eq!(cert.radii, vec![f64::INFINITY]);
        let text = serde_json::to_string(cert).unwrap();
        let back: IterationCertificate = serde_json::from_str(&text).unwrap();
        assert_eq!(&back, cert);
    }
}
