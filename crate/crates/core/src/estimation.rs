//! Rollout storage and advantage estimation.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{ensure_len, Error, Result};

/// Default GAE smoothing.
pub const DEFAULT_GAE_LAMBDA: f64 = 0.95;

/// How a step ends its trajectory segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// The next row continues the same episode.
    Continue,
    /// The episode terminated; the successor state has value 0.
    Terminal,
    /// The episode was cut off (time limit or end of buffer); bootstrap from the critic.
    Truncated,
}

impl Boundary {
    pub fn ends_segment(self) -> bool {
        !matches!(self, Boundary::Continue)
    }
}

fn check_gae_inputs(values: &[f64], next_values: &[f64], rewards: &[f64], ends: &[Boundary], gamma: f64, lambda: f64) -> Result<()> {
    let n = rewards.len();
    ensure_len(values.len(), n, "gae values")?;
    ensure_len(next_values.len(), n, "gae next values")?;
    ensure_len(ends.len(), n, "gae boundaries")?;
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("gamma {gamma} and lambda {lambda} must lie in [0, 1]")));
    }
    Ok(())
}

/// Generalised advantage estimation.
///
/// `values[t]` is V(s_t) and `next_values[t]` is V(s_{t+1}) for the successor actually
/// reached at step t (only read when the step does not terminate). The recursion is
/// cut at every boundary, and the last row is always treated as a cut.
pub fn gae(values: &[f64], next_values: &[f64], rewards: &[f64], ends: &[Boundary], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    check_gae_inputs(values, next_values, rewards, ends, gamma, lambda)?;
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let bootstrap = if ends[t] == Boundary::Terminal { 0.0 } else { next_values[t] };
        let delta = rewards[t] + gamma * bootstrap - values[t];
        let carry = if ends[t].ends_segment() || t + 1 == n { 0.0 } else { running };
        running = delta + gamma * lambda * carry;
        adv[t] = running;
    }
    if adv.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("gae advantages".into()));
    }
    Ok(adv)
}

/// The same recursion applied to one cost channel.
pub fn cost_gae(cost_values: &[f64], next_cost_values: &[f64], costs: &[f64], ends: &[Boundary], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    gae(cost_values, next_cost_values, costs, ends, gamma, lambda)
}

/// Critic regression targets: advantage plus baseline.
pub fn returns_from_advantages(advantages: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    ensure_len(values.len(), advantages.len(), "returns values")?;
    Ok(advantages.iter().zip(values).map(|(a, v)| a + v).collect())
}

/// Discounted return-to-go of every step, restarting at episode boundaries.
/// Truncated ends are not bootstrapped.
pub fn discounted_returns(rewards: &[f64], ends: &[Boundary], gamma: f64) -> Result<Vec<f64>> {
    ensure_len(ends.len(), rewards.len(), "discounted returns boundaries")?;
    let mut out = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        if ends[t].ends_segment() {
            running = 0.0;
        }
        running = rewards[t] + gamma * running;
        out[t] = running;
    }
    Ok(out)
}

/// Zero-mean, unit-std normalisation in place. Constant inputs become zero.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}

/// Multiplies the running M-factor by the updated agent's probability ratios.
pub fn update_m_factor(m: &mut [f64], ratios: &[f64]) -> Result<()> {
    ensure_len(ratios.len(), m.len(), "m-factor ratios")?;
    if let Some(t) = ratios.iter().position(|r| !r.is_finite()) {
        return Err(Error::NonFinite(format!("probability ratio at step {t} (poisoned batch)")));
    }
    for (x, r) in m.iter_mut().zip(ratios) {
        *x *= r;
    }
    Ok(())
}

/// Mean of the cost estimates minus the bound; positive means violating.
pub fn constraint_violation(estimates: &[f64], bound: f64) -> f64 {
    if estimates.is_empty() {
        return -bound;
    }
    estimates.iter().sum::<f64>() / estimates.len() as f64 - bound
}

/// Time-aligned transitions for all agents, flattened row-major per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub n_agents: usize,
    pub obs_dims: Vec<usize>,
    pub state_dim: usize,
    pub action_dims: Vec<usize>,
    /// `obs[i]` holds agent i's observations, `obs_dims[i]` per step.
    pub obs: Vec<Vec<f64>>,
    /// `next_obs[i]` holds agent i's successor observations.
    pub next_obs: Vec<Vec<f64>>,
    pub states: Vec<f64>,
    pub next_states: Vec<f64>,
    pub actions: Vec<Vec<f64>>,
    /// Log-probabilities of the logged actions under the collecting policies.
    pub log_probs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// `costs[i][j][t]`.
    pub costs: Vec<Vec<Vec<f64>>>,
    pub ends: Vec<Boundary>,
}

impl RolloutBatch {
    pub fn new(obs_dims: Vec<usize>, state_dim: usize, action_dims: Vec<usize>, n_costs: &[usize]) -> Result<Self> {
        let n = obs_dims.len();
        ensure_len(action_dims.len(), n, "batch action dims")?;
        ensure_len(n_costs.len(), n, "batch cost counts")?;
        Ok(Self {
            n_agents: n,
            obs_dims,
            state_dim,
            action_dims,
            obs: vec![Vec::new(); n],
            next_obs: vec![Vec::new(); n],
            states: Vec::new(),
            next_states: Vec::new(),
            actions: vec![Vec::new(); n],
            log_probs: vec![Vec::new(); n],
            rewards: Vec::new(),
            costs: n_costs.iter().map(|&m| vec![Vec::new(); m]).collect(),
            ends: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Appends one joint transition after validating every shape.
    pub fn push(&mut self, step: Transition<'_>) -> Result<()> {
        let n = self.n_agents;
        ensure_len(step.obs.len(), n, "transition obs")?;
        ensure_len(step.next_obs.len(), n, "transition next obs")?;
        ensure_len(step.actions.len(), n, "transition actions")?;
        ensure_len(step.log_probs.len(), n, "transition log-probs")?;
        ensure_len(step.costs.len(), n, "transition costs")?;
        ensure_len(step.state.len(), self.state_dim, "transition state")?;
        ensure_len(step.next_state.len(), self.state_dim, "transition next state")?;
        for i in 0..n {
            ensure_len(step.obs[i].len(), self.obs_dims[i], "transition agent obs")?;
            ensure_len(step.next_obs[i].len(), self.obs_dims[i], "transition agent next obs")?;
            ensure_len(step.actions[i].len(), self.action_dims[i], "transition agent action")?;
            ensure_len(step.costs[i].len(), self.costs[i].len(), "transition agent costs")?;
        }
        if step.log_probs.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("collection log-probability".into()));
        }
        for i in 0..n {
            self.obs[i].extend_from_slice(&step.obs[i]);
            self.next_obs[i].extend_from_slice(&step.next_obs[i]);
            self.actions[i].extend_from_slice(&step.actions[i]);
            self.log_probs[i].push(step.log_probs[i]);
            for (j, c) in step.costs[i].iter().enumerate() {
                self.costs[i][j].push(*c);
            }
        }
        self.states.extend_from_slice(step.state);
        self.next_states.extend_from_slice(step.next_state);
        self.rewards.push(step.reward);
        self.ends.push(step.end);
        Ok(())
    }

    pub fn agent_obs(&self, i: usize, t: usize) -> &[f64] {
        let d = self.obs_dims[i];
        &self.obs[i][t * d..(t + 1) * d]
    }

    pub fn agent_next_obs(&self, i: usize, t: usize) -> &[f64] {
        let d = self.obs_dims[i];
        &self.next_obs[i][t * d..(t + 1) * d]
    }

    pub fn agent_action(&self, i: usize, t: usize) -> &[f64] {
        let d = self.action_dims[i];
        &self.actions[i][t * d..(t + 1) * d]
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn next_state(&self, t: usize) -> &[f64] {
        &self.next_states[t * self.state_dim..(t + 1) * self.state_dim]
    }

    /// Marks the final row as a truncation if it does not already end an episode.
    pub fn close(&mut self) {
        if let Some(last) = self.ends.last_mut() {
            if *last == Boundary::Continue {
                *last = Boundary::Truncated;
            }
        }
    }

    /// Appends every row of `other`, which must have the same layout.
    pub fn append(&mut self, other: &RolloutBatch) -> Result<()> {
        if other.obs_dims != self.obs_dims || other.state_dim != self.state_dim || other.action_dims != self.action_dims {
            return Err(Error::InvalidInput("appending a batch with a different layout".into()));
        }
        for i in 0..self.n_agents {
            ensure_len(other.costs[i].len(), self.costs[i].len(), "appended cost channels")?;
            self.obs[i].extend_from_slice(&other.obs[i]);
            self.next_obs[i].extend_from_slice(&other.next_obs[i]);
            self.actions[i].extend_from_slice(&other.actions[i]);
            self.log_probs[i].extend_from_slice(&other.log_probs[i]);
            for (mine, theirs) in self.costs[i].iter_mut().zip(&other.costs[i]) {
                mine.extend_from_slice(theirs);
            }
        }
        self.states.extend_from_slice(&other.states);
        self.next_states.extend_from_slice(&other.next_states);
        self.rewards.extend_from_slice(&other.rewards);
        self.ends.extend_from_slice(&other.ends);
        Ok(())
    }

    /// Start indices of the episode segments.
    pub fn segment_starts(&self) -> Vec<usize> {
        let mut starts = Vec::new();
        let mut fresh = true;
        for (t, e) in self.ends.iter().enumerate() {
            if fresh {
                starts.push(t);
            }
            fresh = e.ends_segment();
        }
        starts
    }

    /// Columnar CSV dump for debugging: one row per step, columns
    /// `t,end,reward,state_k...,obs_i_k...,action_i_k...,logp_i,cost_i_j...`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "end".into(), "reward".into()];
        header.extend((0..self.state_dim).map(|k| format!("state_{k}")));
        for i in 0..self.n_agents {
            header.extend((0..self.obs_dims[i]).map(|k| format!("obs_{i}_{k}")));
            header.extend((0..self.action_dims[i]).map(|k| format!("action_{i}_{k}")));
            header.push(format!("logp_{i}"));
            header.extend((0..self.costs[i].len()).map(|j| format!("cost_{i}_{j}")));
        }
        w.write_record(&header).map_err(csv_error)?;
        for t in 0..self.len() {
            let mut row = vec![t.to_string(), format!("{:?}", self.ends[t]), self.rewards[t].to_string()];
            row.extend(self.state(t).iter().map(f64::to_string));
            for i in 0..self.n_agents {
                row.extend(self.agent_obs(i, t).iter().map(f64::to_string));
                row.extend(self.agent_action(i, t).iter().map(f64::to_string));
                row.push(self.log_probs[i][t].to_string());
                row.extend(self.costs[i].iter().map(|c| c[t].to_string()));
            }
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// One joint step handed to [`RolloutBatch::push`].
#[derive(Debug, Clone)]
pub struct Transition<'a> {
    pub obs: &'a [Vec<f64>],
    pub next_obs: &'a [Vec<f64>],
    pub state: &'a [f64],
    pub next_state: &'a [f64],
    pub actions: &'a [Vec<f64>],
    pub log_probs: &'a [f64],
    pub reward: f64,
    pub costs: &'a [Vec<f64>],
    pub end: Boundary,
}

/// Reward and cost advantages for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    /// Reward advantages (normalised when requested).
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// `cost_advantages[i][j][t]`, never normalised.
    pub cost_advantages: Vec<Vec<Vec<f64>>>,
    pub cost_returns: Vec<Vec<Vec<f64>>>,
    /// Running M-factor, initialised to the reward advantages.
    pub m_factor: Vec<f64>,
}

impl AdvantageSet {
    /// Builds every channel from critic evaluations along the batch.
    ///
    /// `cost_values[i][j]` and `next_cost_values[i][j]` are the cost critic outputs.
    #[allow(clippy::too_many_arguments)]
    pub fn compute(
        batch: &RolloutBatch,
        values: &[f64],
        next_values: &[f64],
        cost_values: &[Vec<Vec<f64>>],
        next_cost_values: &[Vec<Vec<f64>>],
        gamma: f64,
        lambda: f64,
        normalize: bool,
    ) -> Result<Self> {
        let raw = gae(values, next_values, &batch.rewards, &batch.ends, gamma, lambda)?;
        let returns = returns_from_advantages(&raw, values)?;
        ensure_len(cost_values.len(), batch.n_agents, "cost values agents")?;
        ensure_len(next_cost_values.len(), batch.n_agents, "next cost values agents")?;
        let mut cost_advantages = Vec::with_capacity(batch.n_agents);
        let mut cost_returns = Vec::with_capacity(batch.n_agents);
        for i in 0..batch.n_agents {
            ensure_len(cost_values[i].len(), batch.costs[i].len(), "cost values channels")?;
            ensure_len(next_cost_values[i].len(), batch.costs[i].len(), "next cost values channels")?;
            let mut adv_i = Vec::new();
            let mut ret_i = Vec::new();
            for j in 0..batch.costs[i].len() {
                let a = cost_gae(&cost_values[i][j], &next_cost_values[i][j], &batch.costs[i][j], &batch.ends, gamma, lambda)?;
                ret_i.push(returns_from_advantages(&a, &cost_values[i][j])?);
                adv_i.push(a);
            }
            cost_advantages.push(adv_i);
            cost_returns.push(ret_i);
        }
        let mut advantages = raw;
        if normalize {
            normalize_advantages(&mut advantages);
        }
        Ok(Self {
            m_factor: advantages.clone(),
            advantages,
            returns,
            cost_advantages,
            cost_returns,
        })
    }
}
