//! Exact evaluation of tabular games by dense linear algebra.
//!
//! Everything here is a pure function of a game and a joint policy:
//! `V = (I - gamma P_pi)^{-1} r_pi`, one-step backups for `Q`, the same for
//! every cost channel, and the unnormalised discounted occupancy
//! `rho_pi = (I - gamma P_pi^T)^{-1} rho0`, whose total mass is `1 / (1 - gamma)`.
//! Surrogates are exact sums against `rho_pi`.

use nalgebra::{DMatrix, DVector};

use crate::cmg::{JointPolicy, TabularCmg, TabularPolicy};
use crate::error::{ensure_len, Error, Result};

/// Reward and cost value functions of one joint policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    /// `V(s)`
    pub v: Vec<f64>,
    /// `Q(s, a)` indexed `[s * n_joint + joint]`
    pub q: Vec<f64>,
    /// `V^i_j(s)` indexed `[i][j][s]`
    pub cost_v: Vec<Vec<Vec<f64>>>,
    /// `Q^i_j(s, a^i)` indexed `[i][j][s * |A^i| + a^i]`
    pub cost_q: Vec<Vec<Vec<f64>>>,
    n_joint: usize,
}

impl ValueTables {
    pub fn q(&self, s: usize, joint: usize) -> f64 {
        self.q[s * self.n_joint + joint]
    }

    pub fn advantage(&self, s: usize, joint: usize) -> f64 {
        self.q(s, joint) - self.v[s]
    }

    pub fn cost_q(&self, game: &TabularCmg, i: usize, j: usize, s: usize, a: usize) -> f64 {
        self.cost_q[i][j][s * game.action_count(i) + a]
    }

    /// `A^i_j(s, a^i) = Q^i_j(s, a^i) - V^i_j(s)`
    pub fn cost_advantage(&self, game: &TabularCmg, i: usize, j: usize, s: usize, a: usize) -> f64 {
        self.cost_q(game, i, j, s, a) - self.cost_v[i][j][s]
    }

    /// `max_{s,a} |A(s, a)|`
    pub fn max_abs_advantage(&self) -> f64 {
        self.q
            .chunks(self.n_joint)
            .zip(&self.v)
            .flat_map(|(row, v)| row.iter().map(move |q| (q - v).abs()))
            .fold(0.0, f64::max)
    }

    /// `max_{s,a^i} |A^i_j(s, a^i)|`
    pub fn max_abs_cost_advantage(&self, game: &TabularCmg, i: usize, j: usize) -> f64 {
        let k = game.action_count(i);
        self.cost_q[i][j]
            .chunks(k)
            .zip(&self.cost_v[i][j])
            .flat_map(|(row, v)| row.iter().map(move |q| (q - v).abs()))
            .fold(0.0, f64::max)
    }
}

/// Unnormalised discounted state visitation `sum_t gamma^t Pr(s_t = s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    pub rho: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn total_mass(&self) -> f64 {
        self.rho.iter().sum()
    }
}

/// Decoded joint actions, `table[joint]`.
pub(crate) fn joint_table(game: &TabularCmg) -> Vec<Vec<usize>> {
    (0..game.n_joint_actions())
        .map(|joint| game.joint_actions(joint))
        .collect()
}

/// `pi(a | s)` for every state and joint action, `[s * n_joint + joint]`.
fn joint_probabilities(game: &TabularCmg, policy: &JointPolicy, table: &[Vec<usize>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(game.n_states() * table.len());
    for s in 0..game.n_states() {
        out.extend(table.iter().map(|actions| policy.joint_prob(s, actions)));
    }
    out
}

/// `P_pi[s][s'] = sum_a pi(a|s) p(s'|s,a)` as a dense matrix.
fn policy_transition(game: &TabularCmg, pi_joint: &[f64]) -> DMatrix<f64> {
    let n = game.n_states();
    let nj = game.n_joint_actions();
    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        for joint in 0..nj {
            let w = pi_joint[s * nj + joint];
            for (s2, prob) in game.transition_row(s, joint).iter().enumerate() {
                p[(s, s2)] += w * prob;
            }
        }
    }
    p
}

/// Solves `(I - gamma P) x = rhs` for each right-hand side by one LU factorisation.
fn solve_discounted(p: &DMatrix<f64>, gamma: f64, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = p.nrows();
    let system = DMatrix::identity(n, n) - p * gamma;
    let lu = system.lu();
    rhs.iter()
        .map(|b| {
            lu.solve(&DVector::from_column_slice(b))
                .map(|x| x.iter().copied().collect())
                .ok_or_else(|| Error::Singular("I - gamma P_pi".into()))
        })
        .collect()
}

/// Exact reward and cost value functions of `policy`.
pub fn exact_values(game: &TabularCmg, policy: &JointPolicy) -> Result<ValueTables> {
    policy.validate_for(game)?;
    let n = game.n_states();
    let nj = game.n_joint_actions();
    let gamma = game.discount();
    let table = joint_table(game);
    let pi_joint = joint_probabilities(game, policy, &table);
    let p = policy_transition(game, &pi_joint);

    let mut rhs = Vec::new();
    let r_pi: Vec<f64> = (0..n)
        .map(|s| (0..nj).map(|jt| pi_joint[s * nj + jt] * game.reward(s, jt)).sum())
        .collect();
    rhs.push(r_pi);
    for i in 0..game.n_agents() {
        for j in 0..game.n_costs(i) {
            rhs.push(
                (0..n)
                    .map(|s| {
                        let row = policy.agent(i).row(s);
                        row.iter()
                            .enumerate()
                            .map(|(a, pa)| pa * game.cost(i, j, s, a))
                            .sum()
                    })
                    .collect(),
            );
        }
    }
    let mut solutions = solve_discounted(&p, gamma, &rhs)?.into_iter();
    let v = solutions.next().expect("reward channel");

    let backup = |values: &[f64], s: usize, joint: usize| -> f64 {
        game.transition_row(s, joint)
            .iter()
            .zip(values)
            .map(|(p, v)| p * v)
            .sum::<f64>()
    };

    let mut q = vec![0.0; n * nj];
    for s in 0..n {
        for joint in 0..nj {
            q[s * nj + joint] = game.reward(s, joint) + gamma * backup(&v, s, joint);
        }
    }

    let mut cost_v = Vec::with_capacity(game.n_agents());
    let mut cost_q = Vec::with_capacity(game.n_agents());
    for i in 0..game.n_agents() {
        let k = game.action_count(i);
        let mut agent_v = Vec::new();
        let mut agent_q = Vec::new();
        for j in 0..game.n_costs(i) {
            let vij = solutions.next().expect("cost channel");
            let mut qij = vec![0.0; n * k];
            for s in 0..n {
                for (joint, actions) in table.iter().enumerate() {
                    let others: f64 = actions
                        .iter()
                        .enumerate()
                        .filter(|(l, _)| *l != i)
                        .map(|(l, &a)| policy.agent(l).prob(s, a))
                        .product();
                    qij[s * k + actions[i]] += others * gamma * backup(&vij, s, joint);
                }
                for a in 0..k {
                    qij[s * k + a] += game.cost(i, j, s, a);
                }
            }
            agent_v.push(vij);
            agent_q.push(qij);
        }
        cost_v.push(agent_v);
        cost_q.push(agent_q);
    }
    Ok(ValueTables {
        v,
        q,
        cost_v,
        cost_q,
        n_joint: nj,
    })
}

/// `rho_pi = (I - gamma P_pi^T)^{-1} rho0`.
pub fn occupancy(game: &TabularCmg, policy: &JointPolicy) -> Result<OccupancyMeasure> {
    policy.validate_for(game)?;
    let table = joint_table(game);
    let pi_joint = joint_probabilities(game, policy, &table);
    let p = policy_transition(game, &pi_joint).transpose();
    let rho = solve_discounted(&p, game.discount(), &[game.initial().to_vec()])?
        .pop()
        .expect("one solution");
    Ok(OccupancyMeasure { rho })
}

/// `J(pi) = rho0^T V`.
pub fn expected_return(game: &TabularCmg, values: &ValueTables) -> f64 {
    dot(game.initial(), &values.v)
}

/// `J^i_j(pi) = rho0^T V^i_j`.
pub fn expected_total_cost(game: &TabularCmg, values: &ValueTables, i: usize, j: usize) -> Result<f64> {
    check_cost_index(game, i, j)?;
    Ok(dot(game.initial(), &values.cost_v[i][j]))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_cost_index(game: &TabularCmg, i: usize, j: usize) -> Result<()> {
    if i >= game.n_agents() || j >= game.n_costs(i) {
        return Err(Error::InvalidInput(format!("no cost ({i}, {j}) in this game")));
    }
    Ok(())
}

fn check_distinct(agents: &[usize], n_agents: usize) -> Result<()> {
    let mut seen = vec![false; n_agents];
    for &i in agents {
        if i >= n_agents {
            return Err(Error::InvalidInput(format!("agent {i} out of range")));
        }
        if seen[i] {
            return Err(Error::InvalidInput(format!("agent {i} listed twice")));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Multi-agent state-action value `Q^{i_{1:h}}(s, a^{i_{1:h}})`: the expectation
/// of `Q(s, a)` over the actions of every agent outside `subset`.
pub fn multi_agent_q(
    game: &TabularCmg,
    policy: &JointPolicy,
    values: &ValueTables,
    subset: &[usize],
    s: usize,
    actions: &[usize],
) -> Result<f64> {
    check_distinct(subset, game.n_agents())?;
    ensure_len(actions.len(), subset.len(), "subset actions")?;
    for (&i, &a) in subset.iter().zip(actions) {
        if a >= game.action_count(i) {
            return Err(Error::InvalidInput(format!("action {a} invalid for agent {i}")));
        }
    }
    let mut fixed: Vec<Option<usize>> = vec![None; game.n_agents()];
    for (&i, &a) in subset.iter().zip(actions) {
        fixed[i] = Some(a);
    }
    let mut decoded = vec![0; game.n_agents()];
    let mut total = 0.0;
    'joint: for joint in 0..game.n_joint_actions() {
        game.decode_joint(joint, &mut decoded);
        let mut weight = 1.0;
        for (l, &a) in decoded.iter().enumerate() {
            match fixed[l] {
                Some(f) if f != a => continue 'joint,
                Some(_) => {}
                None => weight *= policy.agent(l).prob(s, a),
            }
        }
        total += weight * values.q(s, joint);
    }
    Ok(total)
}

/// Multi-agent advantage `A^{i_{1:h}}(s, a^{j_{1:k}}, a^{i_{1:h}})
/// = Q^{j_{1:k}, i_{1:h}}(s, .) - Q^{j_{1:k}}(s, .)`.
#[allow(clippy::too_many_arguments)]
pub fn multi_agent_advantage(
    game: &TabularCmg,
    policy: &JointPolicy,
    values: &ValueTables,
    given: &[usize],
    given_actions: &[usize],
    subset: &[usize],
    subset_actions: &[usize],
    s: usize,
) -> Result<f64> {
    if given.iter().any(|g| subset.contains(g)) {
        return Err(Error::InvalidInput("conditioning and acting sets overlap".into()));
    }
    let union: Vec<usize> = given.iter().chain(subset).copied().collect();
    let union_actions: Vec<usize> = given_actions.iter().chain(subset_actions).copied().collect();
    let with = multi_agent_q(game, policy, values, &union, s, &union_actions)?;
    let without = multi_agent_q(game, policy, values, given, s, given_actions)?;
    Ok(with - without)
}

/// Per-state, per-action coefficients `Abar(s, a)` such that the surrogate
/// return of a candidate for `agent`, with `prior` agents following their
/// new policies, is `sum_s rho(s) sum_a candidate(a|s) Abar(s, a)`.
///
/// `Abar(s, a) = E_{a^prior ~ new, a^rest ~ pi}[Q(s, a^prior, a, a^rest)] - Q^{prior}(s, .)`
/// averaged over the prior agents' new actions.
pub fn surrogate_advantage_table(
    game: &TabularCmg,
    policy: &JointPolicy,
    values: &ValueTables,
    prior: &[(usize, &TabularPolicy)],
    agent: usize,
) -> Result<Vec<f64>> {
    let prior_agents: Vec<usize> = prior.iter().map(|(i, _)| *i).collect();
    let mut all = prior_agents.clone();
    all.push(agent);
    check_distinct(&all, game.n_agents())?;
    let n_agents = game.n_agents();
    let mut replacement: Vec<Option<&TabularPolicy>> = vec![None; n_agents];
    for (i, p) in prior {
        replacement[*i] = Some(*p);
    }
    let k = game.action_count(agent);
    let mut out = vec![0.0; game.n_states() * k];
    let mut decoded = vec![0; n_agents];
    for s in 0..game.n_states() {
        // E over (prior ~ new, agent = a, rest ~ pi) of Q, and the baseline with agent ~ pi.
        let mut conditional = vec![0.0; k];
        for joint in 0..game.n_joint_actions() {
            game.decode_joint(joint, &mut decoded);
            let mut weight = 1.0;
            for (l, &a) in decoded.iter().enumerate() {
                if l == agent {
                    continue;
                }
                weight *= match replacement[l] {
                    Some(p) => p.prob(s, a),
                    None => policy.agent(l).prob(s, a),
                };
            }
            conditional[decoded[agent]] += weight * values.q(s, joint);
        }
        let baseline: f64 = policy
            .agent(agent)
            .row(s)
            .iter()
            .zip(&conditional)
            .map(|(p, q)| p * q)
            .sum();
        for a in 0..k {
            out[s * k + a] = conditional[a] - baseline;
        }
    }
    Ok(out)
}

/// `sum_s rho(s) sum_a candidate(a|s) table(s, a)`.
pub fn occupancy_expectation(rho: &OccupancyMeasure, candidate: &TabularPolicy, table: &[f64]) -> f64 {
    let k = candidate.n_actions();
    rho.rho
        .iter()
        .enumerate()
        .map(|(s, w)| {
            w * candidate
                .row(s)
                .iter()
                .zip(&table[s * k..(s + 1) * k])
                .map(|(p, a)| p * a)
                .sum::<f64>()
        })
        .sum()
}

/// Surrogate return `L^{i_{1:h}}_pi(pibar^{i_{1:h-1}}, pihat^{i_h})`.
pub fn surrogate_return(
    game: &TabularCmg,
    policy: &JointPolicy,
    values: &ValueTables,
    rho: &OccupancyMeasure,
    prior: &[(usize, &TabularPolicy)],
    agent: usize,
    candidate: &TabularPolicy,
) -> Result<f64> {
    let table = surrogate_advantage_table(game, policy, values, prior, agent)?;
    Ok(occupancy_expectation(rho, candidate, &table))
}

/// `A^i_j(s, a^i)` for every state and own action, `[s * |A^i| + a^i]`.
pub fn cost_advantage_table(game: &TabularCmg, values: &ValueTables, i: usize, j: usize) -> Result<Vec<f64>> {
    check_cost_index(game, i, j)?;
    let k = game.action_count(i);
    Ok((0..game.n_states() * k)
        .map(|idx| values.cost_q[i][j][idx] - values.cost_v[i][j][idx / k])
        .collect())
}

/// Surrogate cost `L^i_{j,pi}(pibar^i) = E_{s ~ rho_pi, a^i ~ pibar^i}[A^i_j(s, a^i)]`.
pub fn surrogate_cost(
    game: &TabularCmg,
    values: &ValueTables,
    rho: &OccupancyMeasure,
    i: usize,
    j: usize,
    candidate: &TabularPolicy,
) -> Result<f64> {
    let table = cost_advantage_table(game, values, i, j)?;
    Ok(occupancy_expectation(rho, candidate, &table))
}

/// `p * ln(p / q) + q - p`, computed without cancellation when `q ~ p`.
fn kl_term(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        return q;
    }
    let x = (q - p) / p;
    let f = if x.abs() < 1e-3 {
        x * x * (0.5 - x / 3.0 + x * x / 4.0 - x * x * x / 5.0)
    } else {
        x - x.ln_1p()
    };
    p * f
}

/// `D_KL(p || q)` for discrete distributions.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    ensure_len(q.len(), p.len(), "distribution support")?;
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 && b <= 0.0 {
            return Err(Error::DivergenceUndefined(
                "first argument has mass where the second has none".into(),
            ));
        }
        total += kl_term(a, b);
    }
    Ok(total.max(0.0))
}

/// Total variation distance `0.5 * sum |p - q|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// `D^max_KL(pi, pibar) = max_s D_KL(pi(.|s) || pibar(.|s))`.
pub fn max_kl(pi: &TabularPolicy, pibar: &TabularPolicy) -> Result<f64> {
    ensure_len(pibar.n_states(), pi.n_states(), "policy states")?;
    (0..pi.n_states()).try_fold(0.0_f64, |acc, s| Ok(acc.max(kl_divergence(pi.row(s), pibar.row(s))?)))
}

/// Max-KL between joint policies: `max_s sum_l D_KL(pi^l(.|s) || pibar^l(.|s))`.
pub fn joint_max_kl(pi: &JointPolicy, pibar: &JointPolicy) -> Result<f64> {
    ensure_len(pibar.n_agents(), pi.n_agents(), "agents")?;
    let n_states = pi.agent(0).n_states();
    let mut worst = 0.0_f64;
    for s in 0..n_states {
        let mut total = 0.0;
        for l in 0..pi.n_agents() {
            total += kl_divergence(pi.agent(l).row(s), pibar.agent(l).row(s))?;
        }
        worst = worst.max(total);
    }
    Ok(worst)
}

/// Checks `D^max_KL(pi, pibar) <= sum_l D^max_KL(pi^l, pibar^l)`.
pub fn kl_sum_bound_check(pi: &JointPolicy, pibar: &JointPolicy) -> Result<bool> {
    let joint = joint_max_kl(pi, pibar)?;
    let mut per_agent = 0.0;
    for l in 0..pi.n_agents() {
        per_agent += max_kl(pi.agent(l), pibar.agent(l))?;
    }
    Ok(joint <= per_agent * (1.0 + 1e-12) + 1e-15)
}

/// Bundles the exact quantities for one joint policy.
#[derive(Debug, Clone)]
pub struct PolicyEvaluation {
    pub values: ValueTables,
    pub occupancy: OccupancyMeasure,
    /// `J(pi)`
    pub expected_return: f64,
    /// `J^i_j(pi)`
    pub expected_costs: Vec<Vec<f64>>,
}

impl PolicyEvaluation {
    pub fn new(game: &TabularCmg, policy: &JointPolicy) -> Result<Self> {
        let values = exact_values(game, policy)?;
        let occupancy = occupancy(game, policy)?;
        let expected_return = expected_return(game, &values);
        let expected_costs = (0..game.n_agents())
            .map(|i| {
                (0..game.n_costs(i))
                    .map(|j| dot(game.initial(), &values.cost_v[i][j]))
                    .collect()
            })
            .collect();
        Ok(Self {
            values,
            occupancy,
            expected_return,
            expected_costs,
        })
    }

    /// True when every `J^i_j <= c^i_j + slack`.
    pub fn is_feasible(&self, game: &TabularCmg, slack: f64) -> bool {
        self.expected_costs
            .iter()
            .zip(game.bounds())
            .all(|(js, cs)| js.iter().zip(cs).all(|(j, c)| *j <= c + slack))
    }

    /// Largest `J^i_j - c^i_j` (positive means violated).
    pub fn worst_violation(&self, game: &TabularCmg) -> f64 {
        self.expected_costs
            .iter()
            .zip(game.bounds())
            .flat_map(|(js, cs)| js.iter().zip(cs).map(|(j, c)| j - c))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmg::random_tabular_cmg;
    use crate::rng::seeded_rng;

    fn one_state(reward: f64, cost: f64, gamma: f64) -> TabularCmg {
        TabularCmg::new(1, vec![1], vec![1.0], vec![reward], vec![vec![vec![cost]]], vec![1.0], gamma, vec![vec![1.0]])
            .unwrap()
    }

    #[test]
    fn geometric_series_single_state() {
        let g = one_state(1.0, 1.0, 0.99);
        let pi = JointPolicy::uniform(&g);
        let values = exact_values(&g, &pi).unwrap();
        assert!((values.v[0] - 100.0).abs() < 1e-9);
        assert!((expected_total_cost(&g, &values, 0, 0).unwrap() - 100.0).abs() < 1e-9);
        let rho = occupancy(&g, &pi).unwrap();
        assert!((rho.rho[0] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn zero_reward_gives_zero_values() {
        let g = random_tabular_cmg(3, 2, &[2, 2], 1, 4).unwrap();
        let g = g.clone().with_reward_table(vec![0.0; 3 * 4]).unwrap();
        let values = exact_values(&g, &JointPolicy::uniform(&g)).unwrap();
        assert!(values.v.iter().chain(&values.q).all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn bellman_consistency() {
        let g = random_tabular_cmg(5, 2, &[2, 3], 2, 8).unwrap();
        let pi = JointPolicy::random(&g, 2.0, &mut seeded_rng(1));
        let values = exact_values(&g, &pi).unwrap();
        let table = joint_table(&g);
        for s in 0..5 {
            let v: f64 = table.iter().enumerate().map(|(jt, a)| pi.joint_prob(s, a) * values.q(s, jt)).sum();
            assert!((v - values.v[s]).abs() < 1e-10);
            for i in 0..2 {
                for j in 0..2 {
                    let cv: f64 = (0..g.action_count(i))
                        .map(|a| pi.agent(i).prob(s, a) * values.cost_q(&g, i, j, s, a))
                        .sum();
                    assert!((cv - values.cost_v[i][j][s]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn multi_agent_q_limits() {
        let g = random_tabular_cmg(3, 3, &[2, 2, 3], 1, 2).unwrap();
        let pi = JointPolicy::random(&g, 1.0, &mut seeded_rng(2));
        let values = exact_values(&g, &pi).unwrap();
        let all = [0, 1, 2];
        let acts = [1, 0, 2];
        let jt = g.joint_index(&acts).unwrap();
        assert_eq!(multi_agent_q(&g, &pi, &values, &all, 1, &acts).unwrap(), values.q(1, jt));
        assert!((multi_agent_q(&g, &pi, &values, &[], 1, &[]).unwrap() - values.v[1]).abs() < 1e-12);
        assert!(multi_agent_q(&g, &pi, &values, &[0, 0], 1, &[0, 1]).is_err());
    }

    #[test]
    fn multi_agent_q_two_agent_hand_expansion() {
        let g = random_tabular_cmg(2, 2, &[2, 2], 1, 6).unwrap();
        let pi = JointPolicy::random(&g, 1.0, &mut seeded_rng(6));
        let values = exact_values(&g, &pi).unwrap();
        for s in 0..2 {
            for a1 in 0..2 {
                let by_hand: f64 = (0..2)
                    .map(|a2| pi.agent(1).prob(s, a2) * values.q(s, g.joint_index(&[a1, a2]).unwrap()))
                    .sum();
                let got = multi_agent_q(&g, &pi, &values, &[0], s, &[a1]).unwrap();
                assert!((got - by_hand).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn advantage_edge_cases() {
        let g = random_tabular_cmg(2, 2, &[2, 3], 1, 3).unwrap();
        let pi = JointPolicy::random(&g, 1.0, &mut seeded_rng(3));
        let values = exact_values(&g, &pi).unwrap();
        let empty = multi_agent_advantage(&g, &pi, &values, &[0], &[1], &[], &[], 0).unwrap();
        assert_eq!(empty, 0.0);
        let full = multi_agent_advantage(&g, &pi, &values, &[], &[], &[0, 1], &[1, 2], 1).unwrap();
        let jt = g.joint_index(&[1, 2]).unwrap();
        assert!((full - values.advantage(1, jt)).abs() < 1e-12);
        assert!(multi_agent_advantage(&g, &pi, &values, &[0], &[1], &[0], &[1], 0).is_err());
    }

    #[test]
    fn surrogate_cost_errors_on_bad_index() {
        let g = random_tabular_cmg(2, 1, &[2], 1, 3).unwrap();
        let pi = JointPolicy::uniform(&g);
        let ev = PolicyEvaluation::new(&g, &pi).unwrap();
        assert!(surrogate_cost(&g, &ev.values, &ev.occupancy, 0, 1, pi.agent(0)).is_err());
    }

    #[test]
    fn kl_closed_form_bernoulli() {
        let kl = kl_divergence(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((kl - expected).abs() < 1e-14);
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!(matches!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]),
            Err(Error::DivergenceUndefined(_))
        ));
    }

    #[test]
    fn kl_is_accurate_for_tiny_perturbations() {
        let p = [0.2, 0.3, 0.5];
        let eps = 1e-7;
        let q = [0.2 + eps, 0.3 - eps, 0.5];
        // Second-order expansion: 0.5 * sum (q - p)^2 / p
        let approx = 0.5 * (eps * eps / 0.2 + eps * eps / 0.3);
        let kl = kl_divergence(&p, &q).unwrap();
        assert!((kl - approx).abs() / approx < 1e-5, "{kl} vs {approx}");
    }
}
