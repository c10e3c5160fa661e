//! Constrained Markov games: the tabular representation, tabular joint
//! policies, and agent orderings.
//!
//! Joint actions are flattened row-major in agent order: agent 0 is the most
//! significant digit, so for action counts `(n0, n1, n2)` the joint action
//! `(a0, a1, a2)` has index `(a0 * n1 + a1) * n2 + a2`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::rng::seeded_rng;
use crate::tolerance;

/// Largest joint action space accepted by the generators.
pub const MAX_JOINT_ACTIONS: usize = 10_000;

pub const SCHEMA_VERSION: u32 = 1;

/// Finite constrained Markov game.
///
/// Costs depend on the state and the paying agent's own action only; other
/// agents influence an agent's costs through the transition kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TabularCmgDocument", into = "TabularCmgDocument")]
pub struct TabularCmg {
    n_states: usize,
    action_counts: Vec<usize>,
    n_joint: usize,
    /// `[s][joint][s']`
    transition: Vec<f64>,
    /// `[s][joint]`
    reward: Vec<f64>,
    /// `costs[i][j][s * |A^i| + a^i]`
    costs: Vec<Vec<Vec<f64>>>,
    initial: Vec<f64>,
    discount: f64,
    /// `+inf` marks a vacuous constraint.
    bounds: Vec<Vec<f64>>,
}

/// Serialized form of a [`TabularCmg`]. Unbounded constraints are written as `null`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularCmgDocument {
    pub schema_version: u32,
    pub n_states: usize,
    pub action_counts: Vec<usize>,
    /// `transition[s][joint][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `reward[s][joint]`
    pub reward: Vec<Vec<f64>>,
    /// `costs[i][j][s][a_i]`
    pub costs: Vec<Vec<Vec<Vec<f64>>>>,
    pub initial: Vec<f64>,
    pub discount: f64,
    pub bounds: Vec<Vec<Option<f64>>>,
}

/// Outcome of one sampled transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: usize,
    pub reward: f64,
    /// `costs[i][j] = C^i_j(s, a^i)`
    pub costs: Vec<Vec<f64>>,
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidInput(format!("{what}: negative or non-finite entry")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > tolerance::PROBABILITY_SUM {
        return Err(Error::InvalidInput(format!("{what}: sums to {total}, not 1")));
    }
    Ok(())
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // Rounding left a sliver above the cumulative sum: return the last supported outcome.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// Rescales `row` to sum to one in place.
fn normalize(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= total);
}

impl TabularCmg {
    /// Builds a game from flat tables, validating every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        action_counts: Vec<usize>,
        transition: Vec<f64>,
        reward: Vec<f64>,
        costs: Vec<Vec<Vec<f64>>>,
        initial: Vec<f64>,
        discount: f64,
        bounds: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if n_states == 0 || action_counts.is_empty() || action_counts.contains(&0) {
            return Err(Error::InvalidInput(
                "need at least one state, one agent and one action per agent".into(),
            ));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidInput(format!("discount {discount} outside [0, 1)")));
        }
        let n_joint = action_counts
            .iter()
            .try_fold(1usize, |acc, &k| acc.checked_mul(k))
            .ok_or_else(|| Error::Capacity("joint action space overflows".into()))?;
        ensure_len(transition.len(), n_states * n_joint * n_states, "transition tensor")?;
        ensure_len(reward.len(), n_states * n_joint, "reward table")?;
        ensure_len(initial.len(), n_states, "initial distribution")?;
        ensure_len(costs.len(), action_counts.len(), "cost tables per agent")?;
        ensure_len(bounds.len(), action_counts.len(), "bounds per agent")?;
        for (i, agent_costs) in costs.iter().enumerate() {
            ensure_len(bounds[i].len(), agent_costs.len(), "bounds per constraint")?;
            for table in agent_costs {
                ensure_len(table.len(), n_states * action_counts[i], "cost table")?;
                crate::error::ensure_finite(table, "cost table")?;
            }
            for b in &bounds[i] {
                if b.is_nan() || *b == f64::NEG_INFINITY {
                    return Err(Error::InvalidInput(format!("bound {b} for agent {i}")));
                }
            }
        }
        crate::error::ensure_finite(&reward, "reward table")?;
        check_distribution(&initial, "initial distribution")?;
        for (k, row) in transition.chunks(n_states).enumerate() {
            check_distribution(row, &format!("transition row {k}"))?;
        }
        Ok(Self {
            n_states,
            action_counts,
            n_joint,
            transition,
            reward,
            costs,
            initial,
            discount,
            bounds,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_agents(&self) -> usize {
        self.action_counts.len()
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.action_counts
    }

    pub fn action_count(&self, agent: usize) -> usize {
        self.action_counts[agent]
    }

    pub fn n_joint_actions(&self) -> usize {
        self.n_joint
    }

    pub fn n_costs(&self, agent: usize) -> usize {
        self.costs[agent].len()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn bounds(&self) -> &[Vec<f64>] {
        &self.bounds
    }

    pub fn bound(&self, agent: usize, j: usize) -> f64 {
        self.bounds[agent][j]
    }

    /// `p(. | s, a)` for a flattened joint action.
    pub fn transition_row(&self, s: usize, joint: usize) -> &[f64] {
        let start = (s * self.n_joint + joint) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, joint: usize) -> f64 {
        self.reward[s * self.n_joint + joint]
    }

    pub fn cost(&self, agent: usize, j: usize, s: usize, action: usize) -> f64 {
        self.costs[agent][j][s * self.action_counts[agent] + action]
    }

    /// Row-major joint index of per-agent actions.
    pub fn joint_index(&self, actions: &[usize]) -> Result<usize> {
        ensure_len(actions.len(), self.n_agents(), "joint action")?;
        let mut idx = 0;
        for (a, &k) in actions.iter().zip(&self.action_counts) {
            if *a >= k {
                return Err(Error::InvalidInput(format!("action {a} out of range 0..{k}")));
            }
            idx = idx * k + a;
        }
        Ok(idx)
    }

    /// Inverse of [`joint_index`](Self::joint_index).
    pub fn decode_joint(&self, mut joint: usize, out: &mut [usize]) {
        for (slot, &k) in out.iter_mut().zip(&self.action_counts).rev() {
            *slot = joint % k;
            joint /= k;
        }
    }

    pub fn joint_actions(&self, joint: usize) -> Vec<usize> {
        let mut out = vec![0; self.n_agents()];
        self.decode_joint(joint, &mut out);
        out
    }

    /// Samples `s' ~ p(.|s,a)` and reports the reward and every agent's costs.
    pub fn sample_step<R: Rng + ?Sized>(
        &self,
        state: usize,
        joint_action: &[usize],
        rng: &mut R,
    ) -> Result<StepOutcome> {
        if state >= self.n_states {
            return Err(Error::InvalidInput(format!("state {state} out of range")));
        }
        let joint = self.joint_index(joint_action)?;
        let next_state = sample_categorical(self.transition_row(state, joint), rng);
        let costs = (0..self.n_agents())
            .map(|i| {
                (0..self.n_costs(i))
                    .map(|j| self.cost(i, j, state, joint_action[i]))
                    .collect()
            })
            .collect();
        Ok(StepOutcome {
            next_state,
            reward: self.reward(state, joint),
            costs,
        })
    }

    pub fn with_bounds(mut self, bounds: Vec<Vec<f64>>) -> Result<Self> {
        ensure_len(bounds.len(), self.n_agents(), "bounds per agent")?;
        for (i, b) in bounds.iter().enumerate() {
            ensure_len(b.len(), self.n_costs(i), "bounds per constraint")?;
            if b.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
                return Err(Error::InvalidInput("bound must be finite or +inf".into()));
            }
        }
        self.bounds = bounds;
        Ok(self)
    }

    /// Same game with every constraint made vacuous.
    pub fn unconstrained(&self) -> Self {
        let mut g = self.clone();
        g.bounds = g
            .costs
            .iter()
            .map(|c| vec![f64::INFINITY; c.len()])
            .collect();
        g
    }

    pub fn with_discount(mut self, discount: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidInput(format!("discount {discount} outside [0, 1)")));
        }
        self.discount = discount;
        Ok(self)
    }

    /// Adds `shift` to every entry of `C^agent_j`.
    pub fn with_cost_shift(mut self, agent: usize, j: usize, shift: f64) -> Self {
        self.costs[agent][j].iter_mut().for_each(|c| *c += shift);
        self
    }

    pub fn with_reward_table(mut self, reward: Vec<f64>) -> Result<Self> {
        ensure_len(reward.len(), self.n_states * self.n_joint, "reward table")?;
        self.reward = reward;
        Ok(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl TryFrom<TabularCmgDocument> for TabularCmg {
    type Error = Error;

    fn try_from(doc: TabularCmgDocument) -> Result<Self> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Serde(format!(
                "unsupported schema version {}",
                doc.schema_version
            )));
        }
        let n_agents = doc.action_counts.len();
        let costs = doc
            .costs
            .into_iter()
            .map(|agent| {
                agent
                    .into_iter()
                    .map(|table| table.into_iter().flatten().collect())
                    .collect()
            })
            .collect();
        let bounds = doc
            .bounds
            .into_iter()
            .map(|b| b.into_iter().map(|v| v.unwrap_or(f64::INFINITY)).collect())
            .collect::<Vec<Vec<f64>>>();
        if bounds.len() != n_agents {
            return Err(Error::Serde("bounds must list every agent".into()));
        }
        TabularCmg::new(
            doc.n_states,
            doc.action_counts,
            doc.transition.into_iter().flatten().flatten().collect(),
            doc.reward.into_iter().flatten().collect(),
            costs,
            doc.initial,
            doc.discount,
            bounds,
        )
    }
}

impl From<TabularCmg> for TabularCmgDocument {
    fn from(g: TabularCmg) -> Self {
        let n = g.n_states;
        TabularCmgDocument {
            schema_version: SCHEMA_VERSION,
            n_states: n,
            transition: g
                .transition
                .chunks(g.n_joint * n)
                .map(|per_state| per_state.chunks(n).map(<[f64]>::to_vec).collect())
                .collect(),
            reward: g.reward.chunks(g.n_joint).map(<[f64]>::to_vec).collect(),
            costs: g
                .costs
                .iter()
                .zip(&g.action_counts)
                .map(|(agent, &k)| {
                    agent
                        .iter()
                        .map(|table| table.chunks(k).map(<[f64]>::to_vec).collect())
                        .collect()
                })
                .collect(),
            bounds: g
                .bounds
                .iter()
                .map(|b| b.iter().map(|v| v.is_finite().then_some(*v)).collect())
                .collect(),
            action_counts: g.action_counts,
            initial: g.initial,
            discount: g.discount,
        }
    }
}

/// Generates a random game: transition rows and the initial distribution are
/// normalised uniform draws, rewards and costs are uniform in `[0, 1]`, and
/// every bound is set to the trivial value `1 / (1 - discount)`.
pub fn random_tabular_cmg(
    n_states: usize,
    n_agents: usize,
    actions_per_agent: &[usize],
    n_costs: usize,
    seed: u64,
) -> Result<TabularCmg> {
    random_tabular_cmg_with_discount(n_states, n_agents, actions_per_agent, n_costs, 0.9, seed)
}

pub fn random_tabular_cmg_with_discount(
    n_states: usize,
    n_agents: usize,
    actions_per_agent: &[usize],
    n_costs: usize,
    discount: f64,
    seed: u64,
) -> Result<TabularCmg> {
    if n_states == 0 || n_agents == 0 || n_costs == 0 {
        return Err(Error::InvalidInput("all counts must be at least one".into()));
    }
    ensure_len(actions_per_agent.len(), n_agents, "actions per agent")?;
    if actions_per_agent.contains(&0) {
        return Err(Error::InvalidInput("every agent needs an action".into()));
    }
    let n_joint = actions_per_agent
        .iter()
        .try_fold(1usize, |acc, &k| acc.checked_mul(k))
        .filter(|&n| n <= MAX_JOINT_ACTIONS)
        .ok_or_else(|| {
            Error::Capacity(format!("joint action space exceeds {MAX_JOINT_ACTIONS}"))
        })?;
    let mut rng = seeded_rng(seed);
    let mut transition = Vec::with_capacity(n_states * n_joint * n_states);
    for _ in 0..n_states * n_joint {
        let mut row: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>() + 1e-3).collect();
        normalize(&mut row);
        transition.extend(row);
    }
    let reward = (0..n_states * n_joint).map(|_| rng.random()).collect();
    let costs = actions_per_agent
        .iter()
        .map(|&k| {
            (0..n_costs)
                .map(|_| (0..n_states * k).map(|_| rng.random()).collect())
                .collect()
        })
        .collect();
    let mut initial: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>() + 1e-3).collect();
    normalize(&mut initial);
    let bounds = vec![vec![1.0 / (1.0 - discount); n_costs]; n_agents];
    TabularCmg::new(
        n_states,
        actions_per_agent.to_vec(),
        transition,
        reward,
        costs,
        initial,
        discount,
        bounds,
    )
}

/// Row-stochastic policy `pi(a | s)` of one agent.
///
/// Construction floors every probability at [`tolerance::PROBABILITY_FLOOR`]
/// and renormalises, so KL divergences between tabular policies are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    /// Builds from nonnegative weights (rows are normalised, then floored).
    pub fn from_weights(n_states: usize, n_actions: usize, mut probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidInput("empty policy table".into()));
        }
        ensure_len(probs.len(), n_states * n_actions, "policy table")?;
        for row in probs.chunks_mut(n_actions) {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidInput("policy weights must be finite and >= 0".into()));
            }
            if row.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidInput("policy row has zero mass".into()));
            }
            normalize(row);
            row.iter_mut()
                .for_each(|p| *p = p.max(tolerance::PROBABILITY_FLOOR));
            normalize(row);
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Rows drawn as normalised `u^sharpness` for `u ~ U(0,1)`; larger sharpness
    /// gives more peaked rows.
    pub fn random<R: Rng + ?Sized>(
        n_states: usize,
        n_actions: usize,
        sharpness: f64,
        rng: &mut R,
    ) -> Self {
        let weights = (0..n_states * n_actions)
            .map(|_| rng.random::<f64>().powf(sharpness) + 1e-6)
            .collect();
        Self::from_weights(n_states, n_actions, weights).expect("positive weights")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn table(&self) -> &[f64] {
        &self.probs
    }

    /// Convex combination `(1 - t) * self + t * other`, row by row.
    pub fn mix(&self, other: &Self, t: f64) -> Self {
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| (1.0 - t) * p + t * q)
            .collect();
        Self {
            n_states: self.n_states,
            n_actions: self.n_actions,
            probs,
        }
    }

    /// Multiplicative perturbation `pi(a|s) * exp(scale * z)` with `z ~ N(0,1)`, renormalised.
    pub fn perturbed<R: Rng + ?Sized>(&self, scale: f64, rng: &mut R) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let weights = self
            .probs
            .iter()
            .map(|p| {
                let z: f64 = StandardNormal.sample(rng);
                p * (scale * z).exp()
            })
            .collect();
        Self::from_weights(self.n_states, self.n_actions, weights).expect("positive weights")
    }
}

/// Product policy `pi(a | s) = prod_i pi^i(a^i | s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPolicy {
    agents: Vec<TabularPolicy>,
}

impl JointPolicy {
    pub fn new(agents: Vec<TabularPolicy>) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::InvalidInput("joint policy needs an agent".into()));
        }
        let n_states = agents[0].n_states;
        if agents.iter().any(|p| p.n_states != n_states) {
            return Err(Error::InvalidInput("agents disagree on state count".into()));
        }
        Ok(Self { agents })
    }

    pub fn uniform(game: &TabularCmg) -> Self {
        Self {
            agents: game
                .action_counts()
                .iter()
                .map(|&k| TabularPolicy::uniform(game.n_states(), k))
                .collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(game: &TabularCmg, sharpness: f64, rng: &mut R) -> Self {
        Self {
            agents: game
                .action_counts()
                .iter()
                .map(|&k| TabularPolicy::random(game.n_states(), k, sharpness, rng))
                .collect(),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn agent(&self, i: usize) -> &TabularPolicy {
        &self.agents[i]
    }

    pub fn agents(&self) -> &[TabularPolicy] {
        &self.agents
    }

    /// Copy with agent `i`'s policy replaced.
    pub fn with_agent(&self, i: usize, policy: TabularPolicy) -> Self {
        let mut agents = self.agents.clone();
        agents[i] = policy;
        Self { agents }
    }

    pub fn set_agent(&mut self, i: usize, policy: TabularPolicy) {
        self.agents[i] = policy;
    }

    /// Checks shapes against `game`.
    pub fn validate_for(&self, game: &TabularCmg) -> Result<()> {
        ensure_len(self.agents.len(), game.n_agents(), "policies per agent")?;
        for (i, p) in self.agents.iter().enumerate() {
            ensure_len(p.n_states, game.n_states(), "policy states")?;
            ensure_len(p.n_actions, game.action_count(i), "policy actions")?;
        }
        Ok(())
    }

    /// `pi(a | s)` for a decoded joint action.
    pub fn joint_prob(&self, s: usize, actions: &[usize]) -> f64 {
        self.agents
            .iter()
            .zip(actions)
            .map(|(p, &a)| p.prob(s, a))
            .product()
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> Vec<usize> {
        self.agents
            .iter()
            .map(|p| sample_categorical(p.row(s), rng))
            .collect()
    }
}

/// An ordering `i_1, ..., i_n` of the agents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPermutation {
    pub order: Vec<usize>,
    pub seed: u64,
}

impl AgentPermutation {
    pub fn identity(n_agents: usize) -> Self {
        Self {
            order: (0..n_agents).collect(),
            seed: 0,
        }
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.order.len()];
        for &i in &self.order {
            if i >= seen.len() || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        true
    }
}

/// Uniformly random permutation. The seed recorded in the result reproduces it.
pub fn draw_permutation<R: Rng + ?Sized>(n_agents: usize, rng: &mut R) -> AgentPermutation {
    let seed: u64 = rng.random();
    let mut order: Vec<usize> = (0..n_agents).collect();
    order.shuffle(&mut seeded_rng(seed));
    AgentPermutation { order, seed }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_state_game(reward: f64, cost: f64) -> TabularCmg {
        TabularCmg::new(
            1,
            vec![1],
            vec![1.0],
            vec![reward],
            vec![vec![vec![cost]]],
            vec![1.0],
            0.99,
            vec![vec![1.0]],
        )
        .unwrap()
    }

    #[test]
    fn degenerate_single_state_step() {
        let g = single_state_game(1.0, 0.25);
        let out = g.sample_step(0, &[0], &mut seeded_rng(1)).unwrap();
        assert_eq!(out.next_state, 0);
        assert_eq!(out.reward, 1.0);
        assert_eq!(out.costs, vec![vec![0.25]]);
    }

    #[test]
    fn deterministic_row_always_lands_on_target() {
        // 3 states, one agent with 2 actions; from state 0 action 1 goes to state 2.
        let mut transition = vec![0.0; 3 * 2 * 3];
        for s in 0..3 {
            for a in 0..2 {
                let target = if s == 0 && a == 1 { 2 } else { s };
                transition[(s * 2 + a) * 3 + target] = 1.0;
            }
        }
        let g = TabularCmg::new(
            3,
            vec![2],
            transition,
            vec![0.0; 6],
            vec![vec![vec![0.0; 6]]],
            vec![1.0, 0.0, 0.0],
            0.9,
            vec![vec![1.0]],
        )
        .unwrap();
        let mut rng = seeded_rng(3);
        for _ in 0..100 {
            assert_eq!(g.sample_step(0, &[1], &mut rng).unwrap().next_state, 2);
        }
    }

    #[test]
    fn invalid_actions_are_rejected() {
        let g = random_tabular_cmg(2, 2, &[2, 3], 1, 0).unwrap();
        let mut rng = seeded_rng(0);
        assert!(g.sample_step(0, &[0, 3], &mut rng).is_err());
        assert!(g.sample_step(0, &[0], &mut rng).is_err());
        assert!(g.sample_step(2, &[0, 0], &mut rng).is_err());
    }

    #[test]
    fn joint_index_is_row_major() {
        let g = random_tabular_cmg(1, 3, &[2, 3, 2], 1, 0).unwrap();
        assert_eq!(g.joint_index(&[1, 2, 1]).unwrap(), (1 * 3 + 2) * 2 + 1);
        for joint in 0..g.n_joint_actions() {
            assert_eq!(g.joint_index(&g.joint_actions(joint)).unwrap(), joint);
        }
    }

    #[test]
    fn same_seed_same_game() {
        let a = random_tabular_cmg(4, 2, &[2, 2], 2, 11).unwrap();
        let b = random_tabular_cmg(4, 2, &[2, 2], 2, 11).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_ne!(a, random_tabular_cmg(4, 2, &[2, 2], 2, 12).unwrap());
    }

    #[test]
    fn single_state_generator_is_valid() {
        let g = random_tabular_cmg(1, 1, &[3], 1, 5).unwrap();
        for joint in 0..3 {
            assert_eq!(g.transition_row(0, joint), &[1.0]);
        }
    }

    #[test]
    fn generator_enforces_size_guard() {
        let err = random_tabular_cmg(1, 2, &[101, 100], 1, 0).unwrap_err();
        assert!(matches!(err, Error::Capacity(_)));
        assert!(random_tabular_cmg(1, 2, &[100, 100], 1, 0).is_ok());
    }

    #[test]
    fn generated_games_pass_invariants() {
        for seed in 0..100 {
            let g = random_tabular_cmg(1 + (seed as usize % 6), 2, &[2, 3], 2, seed).unwrap();
            // Round trip through the validating constructor.
            let again = TabularCmg::from_json(&g.to_json().unwrap()).unwrap();
            assert_eq!(g, again);
            for s in 0..g.n_states() {
                for joint in 0..g.n_joint_actions() {
                    let sum: f64 = g.transition_row(s, joint).iter().sum();
                    assert!((sum - 1.0).abs() <= tolerance::PROBABILITY_SUM);
                }
            }
            for i in 0..g.n_agents() {
                for j in 0..g.n_costs(i) {
                    for s in 0..g.n_states() {
                        for a in 0..g.action_count(i) {
                            assert!((0.0..=1.0).contains(&g.cost(i, j, s, a)));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn unbounded_constraints_serialize_as_null() {
        let g = random_tabular_cmg(2, 1, &[2], 1, 3).unwrap().unconstrained();
        let json = g.to_json().unwrap();
        assert!(json.contains("null"));
        assert_eq!(TabularCmg::from_json(&json).unwrap().bound(0, 0), f64::INFINITY);
    }

    #[test]
    fn bad_discount_and_rows_rejected() {
        assert!(TabularCmg::new(1, vec![1], vec![1.0], vec![0.0], vec![vec![vec![0.0]]], vec![1.0], 1.0, vec![vec![1.0]]).is_err());
        assert!(TabularCmg::new(1, vec![1], vec![0.9], vec![0.0], vec![vec![vec![0.0]]], vec![1.0], 0.5, vec![vec![1.0]]).is_err());
        assert!(TabularCmg::new(1, vec![1], vec![1.0], vec![0.0], vec![vec![vec![0.0]]], vec![1.0], 0.5, vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn policy_rows_are_normalised_and_floored() {
        let p = TabularPolicy::from_weights(2, 3, vec![1.0, 0.0, 1.0, 0.2, 0.3, 0.5]).unwrap();
        for s in 0..2 {
            let sum: f64 = p.row(s).iter().sum();
            assert!((sum - 1.0).abs() <= tolerance::PROBABILITY_SUM);
            assert!(p.row(s).iter().all(|&x| x > 0.0));
        }
        assert!(TabularPolicy::from_weights(1, 2, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn permutation_of_one_is_identity() {
        let p = draw_permutation(1, &mut seeded_rng(9));
        assert_eq!(p.order, vec![0]);
    }

    #[test]
    fn permutation_is_reproducible_and_bijective() {
        let a = draw_permutation(3, &mut seeded_rng(42));
        let b = draw_permutation(3, &mut seeded_rng(42));
        assert_eq!(a, b);
        assert!(a.is_bijection());
        let mut replay: Vec<usize> = (0..3).collect();
        replay.shuffle(&mut seeded_rng(a.seed));
        assert_eq!(replay, a.order);
    }
}
