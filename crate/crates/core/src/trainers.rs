//! Training loops for the practical algorithms.
//!
//! All six algorithms share rollout collection, advantage estimation and critic
//! regression. They differ only in how each agent's policy step is taken:
//!
//! | algorithm          | scheme       | policy step                               | constraints |
//! |--------------------|--------------|-------------------------------------------|-------------|
//! | `macpo`            | sequential   | trust region: dual, CG, line search       | yes         |
//! | `hatrpo`           | sequential   | trust region                              | no          |
//! | `mappo_lagrangian` | sequential   | clipped surrogate on `M − Σ λ Âc`         | yes         |
//! | `happo`            | sequential   | clipped surrogate on `M`                  | no          |
//! | `mappo`            | simultaneous | clipped surrogate on `Â`, shared critic   | no          |
//! | `ippo`             | simultaneous | clipped surrogate, per-agent local critic | no          |
//!
//! In the sequential scheme agents are visited in a random order each
//! iteration and the M-factor `M = Â · Π ratio` carries the ratios of the
//! agents already updated.
//!
//! Randomness is split into named streams (see [`crate::rng`]) so that the cost
//! critics of the constrained algorithms never shift the draws seen by the
//! policies: MACPO with infinite bounds reproduces HATRPO and MAPPO-Lagrangian
//! with a frozen zero multiplier reproduces HAPPO.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cmg::draw_permutation;
use crate::envs::{ActionSpace, Env, EnvConfig, Environment};
use crate::error::{ensure_finite, Error, Result};
use crate::estimation::{csv_error, update_m_factor, AdvantageSet, RolloutBatch, Transition, DEFAULT_GAE_LAMBDA};
use crate::nn::{clip_grad_norm, Adam, PolicyNet, RunningNorm, ValueNet};
use crate::rng::derived_rng;
use crate::solver::{
    backtracking_line_search, primal_step, recovery_step, solve_dual, LineSearchConfig, LqclpProblem, Preconditioned, Probe,
    SolverConfig, StepMode, TrustRegionStep,
};

/// Checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Macpo,
    Hatrpo,
    MappoLagrangian,
    Happo,
    Mappo,
    Ippo,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Macpo,
        Algorithm::Hatrpo,
        Algorithm::MappoLagrangian,
        Algorithm::Happo,
        Algorithm::Mappo,
        Algorithm::Ippo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Macpo => "macpo",
            Algorithm::Hatrpo => "hatrpo",
            Algorithm::MappoLagrangian => "mappo_lagrangian",
            Algorithm::Happo => "happo",
            Algorithm::Mappo => "mappo",
            Algorithm::Ippo => "ippo",
        }
    }

    pub fn is_constrained(self) -> bool {
        matches!(self, Algorithm::Macpo | Algorithm::MappoLagrangian)
    }

    pub fn is_trust_region(self) -> bool {
        matches!(self, Algorithm::Macpo | Algorithm::Hatrpo)
    }

    pub fn is_sequential(self) -> bool {
        !matches!(self, Algorithm::Mappo | Algorithm::Ippo)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == key)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

/// How the current constraint value J is estimated when forming `d = J − c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationEstimate {
    /// Mean discounted cost of the episodes completed in the batch; falls back
    /// to the critic when no episode completed.
    #[default]
    EpisodeCost,
    /// Mean cost-critic value over the episode start states of the batch.
    CriticMean,
}

/// Per-sample weights of the sampled constraint surrogate `(1/(1−γ)) E[(r−1) Âc]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintWeighting {
    /// `γ^τ` with τ the step within the episode (normalised to mean 1), so the
    /// batch approximates the discounted state distribution J is defined under.
    #[default]
    Discounted,
    /// Every sample weighted equally.
    Uniform,
}

/// Every hyperparameter of a run. Defaults are the reference hyperparameters where
/// they exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub algorithm: Algorithm,
    /// Required; `None` fails validation.
    pub env: Option<EnvConfig>,
    pub seed: u64,
    /// Number of training iterations K.
    pub iterations: usize,
    /// Environment steps collected per iteration.
    pub batch_size: usize,
    /// Rollout threads; each owns a contiguous slice of the batch.
    pub rollout_workers: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub hidden: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub adam_eps: f64,
    pub ppo_epochs: usize,
    pub clip: f64,
    pub num_mini_batch: usize,
    pub max_grad_norm: f64,
    /// Output-layer gain of the policy networks.
    pub gain: f64,
    pub std_x_coef: f64,
    pub std_y_coef: f64,
    /// Trust-region radius δ.
    pub kl_threshold: f64,
    pub line_search: LineSearchConfig,
    pub solver: SolverConfig,
    pub hvp_damping: f64,
    pub lagrangian_init: f64,
    pub lagrangian_lr: f64,
    pub violation_estimate: ViolationEstimate,
    pub constraint_weighting: ConstraintWeighting,
    /// `bounds[i][j]`; `null` means unconstrained. Defaults to the env's bounds.
    pub bounds: Option<Vec<Vec<Option<f64>>>>,
    pub normalize_advantages: bool,
    pub normalize_observations: bool,
    pub eval_episodes: usize,
    /// Evaluate every this many iterations (and after the last); 0 disables.
    pub eval_interval: usize,
    /// Checkpoint every this many iterations; 0 disables.
    pub checkpoint_interval: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Macpo,
            env: None,
            seed: 0,
            iterations: 100,
            batch_size: 16000,
            rollout_workers: 1,
            gamma: 0.99,
            gae_lambda: DEFAULT_GAE_LAMBDA,
            hidden: 64,
            actor_lr: 9e-5,
            critic_lr: 5e-3,
            adam_eps: 1e-5,
            ppo_epochs: 5,
            clip: 0.2,
            num_mini_batch: 40,
            max_grad_norm: 10.0,
            gain: 0.01,
            std_x_coef: 1.0,
            std_y_coef: 0.5,
            kl_threshold: 0.0065,
            line_search: LineSearchConfig::default(),
            solver: SolverConfig::default(),
            hvp_damping: 1e-2,
            lagrangian_init: 0.78,
            lagrangian_lr: 1e-3,
            violation_estimate: ViolationEstimate::EpisodeCost,
            constraint_weighting: ConstraintWeighting::Discounted,
            bounds: None,
            normalize_advantages: true,
            normalize_observations: true,
            eval_episodes: 32,
            eval_interval: 1,
            checkpoint_interval: 0,
        }
    }
}

impl TrainingConfig {
    pub fn new(algorithm: Algorithm, env: EnvConfig) -> Self {
        Self {
            algorithm,
            env: Some(env),
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn env_config(&self) -> Result<&EnvConfig> {
        self.env.as_ref().ok_or_else(|| Error::Config("env: missing environment selection".into()))
    }

    /// Checks every field and reports all offending ones at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        let mut positive = |name: &str, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(format!("{name}: must be positive and finite (got {v})"));
            }
        };
        positive("actor_lr", self.actor_lr);
        positive("critic_lr", self.critic_lr);
        positive("adam_eps", self.adam_eps);
        positive("max_grad_norm", self.max_grad_norm);
        positive("gain", self.gain);
        positive("std_x_coef", self.std_x_coef);
        positive("std_y_coef", self.std_y_coef);
        positive("kl_threshold", self.kl_threshold);
        positive("line_search.ratio", self.line_search.ratio);
        positive("line_search.initial_scale", self.line_search.initial_scale);
        if self.env.is_none() {
            bad.push("env: missing environment selection".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            bad.push(format!("gamma: must lie in [0, 1) (got {})", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            bad.push(format!("gae_lambda: must lie in [0, 1] (got {})", self.gae_lambda));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            bad.push(format!("clip: must lie in (0, 1) (got {})", self.clip));
        }
        if self.line_search.ratio >= 1.0 {
            bad.push("line_search.ratio: must be below 1".into());
        }
        if !(self.hvp_damping >= 0.0) {
            bad.push("hvp_damping: must be nonnegative".into());
        }
        if !(self.lagrangian_init >= 0.0 && self.lagrangian_init.is_finite()) {
            bad.push("lagrangian_init: must be nonnegative".into());
        }
        if !(self.lagrangian_lr >= 0.0 && self.lagrangian_lr.is_finite()) {
            bad.push("lagrangian_lr: must be nonnegative".into());
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("rollout_workers", self.rollout_workers),
            ("hidden", self.hidden),
            ("ppo_epochs", self.ppo_epochs),
            ("num_mini_batch", self.num_mini_batch),
            ("solver.cg_iters", self.solver.cg_iters),
        ] {
            if v == 0 {
                bad.push(format!("{name}: must be at least 1"));
            }
        }
        if self.rollout_workers > self.batch_size {
            bad.push("rollout_workers: exceeds batch_size".into());
        }
        if let Some(bounds) = &self.bounds {
            if bounds.iter().flatten().flatten().any(|c| !c.is_finite()) {
                bad.push("bounds: finite values or null only".into());
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// A value network with its optimiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub net: ValueNet,
    pub opt: Adam,
}

impl Critic {
    fn new(input: usize, config: &TrainingConfig, seed_index: (&str, u64)) -> Self {
        let mut rng = derived_rng(config.seed, seed_index.0, seed_index.1);
        let net = ValueNet::new(input, config.hidden, &mut rng);
        let opt = Adam::new(net.n_params(), config.critic_lr, config.adam_eps);
        Self { net, opt }
    }

    fn values(&self, inputs: &[f64]) -> Vec<f64> {
        inputs.chunks_exact(self.net.obs_dim()).map(|x| self.net.value(x)).collect()
    }
}

/// Running observation statistics: one per agent plus the global state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNorms {
    pub agents: Vec<RunningNorm>,
    pub state: RunningNorm,
}

impl ObsNorms {
    fn agent(norms: Option<&Self>, i: usize, raw: &[f64]) -> Vec<f64> {
        match norms {
            Some(n) => n.agents[i].normalize(raw),
            None => raw.to_vec(),
        }
    }

    fn state(norms: Option<&Self>, raw: &[f64]) -> Vec<f64> {
        match norms {
            Some(n) => n.state.normalize(raw),
            None => raw.to_vec(),
        }
    }
}

/// Everything that changes during training. Cloned as a rollback snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    /// Completed iterations.
    pub iteration: usize,
    pub env_steps: u64,
    pub policies: Vec<PolicyNet>,
    /// Actor optimisers of the clipped-surrogate algorithms.
    pub actor_opts: Vec<Adam>,
    /// One shared critic on the global state, or one per agent on local
    /// observations for IPPO.
    pub critics: Vec<Critic>,
    /// `cost_critics[i][j]` on the global state (constrained algorithms only).
    pub cost_critics: Vec<Vec<Critic>>,
    /// Lagrange multipliers `lagrange[i][j] ≥ 0` (MAPPO-Lagrangian only).
    pub lagrange: Vec<Vec<f64>>,
    pub norms: Option<ObsNorms>,
}

/// JSON checkpoint: the config plus every parameter as flat `f64` vectors with
/// their layer sizes. JSON numbers are written in shortest round-trip decimal
/// form, so no byte order is involved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainingConfig,
    pub state: TrainerState,
}

/// Statistics of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub length: usize,
    pub reward: f64,
    /// Discounted cost `Σ γ^t C_t`, `[i][j]`.
    pub cost: Vec<Vec<f64>>,
    pub cost_undiscounted: Vec<Vec<f64>>,
}

impl EpisodeStats {
    fn empty(n_costs: &[usize]) -> Self {
        Self {
            length: 0,
            reward: 0.0,
            cost: n_costs.iter().map(|&m| vec![0.0; m]).collect(),
            cost_undiscounted: n_costs.iter().map(|&m| vec![0.0; m]).collect(),
        }
    }

    fn record(&mut self, reward: f64, costs: &[Vec<f64>], gamma: f64) {
        let w = gamma.powi(self.length as i32);
        self.reward += reward;
        for (i, ci) in costs.iter().enumerate() {
            for (j, c) in ci.iter().enumerate() {
                self.cost[i][j] += w * c;
                self.cost_undiscounted[i][j] += c;
            }
        }
        self.length += 1;
    }
}

/// Means over a set of episodes; `NaN` when the set is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episodes: usize,
    pub reward: f64,
    pub cost: Vec<Vec<f64>>,
    pub cost_undiscounted: Vec<Vec<f64>>,
}

impl EpisodeSummary {
    pub fn from_episodes(episodes: &[EpisodeStats], n_costs: &[usize]) -> Self {
        let k = episodes.len() as f64;
        let mean = |f: &dyn Fn(&EpisodeStats) -> f64| {
            if episodes.is_empty() {
                f64::NAN
            } else {
                episodes.iter().map(f).sum::<f64>() / k
            }
        };
        let grid = |undiscounted: bool| -> Vec<Vec<f64>> {
            n_costs
                .iter()
                .enumerate()
                .map(|(i, &m)| {
                    (0..m)
                        .map(|j| mean(&|e: &EpisodeStats| if undiscounted { e.cost_undiscounted[i][j] } else { e.cost[i][j] }))
                        .collect()
                })
                .collect()
        };
        Self {
            episodes: episodes.len(),
            reward: mean(&|e: &EpisodeStats| e.reward),
            cost: grid(false),
            cost_undiscounted: grid(true),
        }
    }
}

/// Result of [`evaluate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub summary: EpisodeSummary,
    pub episodes: Vec<EpisodeStats>,
}

fn n_costs_of(env: &Env) -> Vec<usize> {
    (0..env.n_agents()).map(|i| env.n_costs(i)).collect()
}

/// Runs `episodes` full episodes. With `deterministic` the Gaussian heads use
/// their mean and categorical heads their most likely action; observation
/// statistics stay frozen.
pub fn evaluate(
    env: &Env,
    policies: &[PolicyNet],
    norms: Option<&ObsNorms>,
    episodes: usize,
    gamma: f64,
    seed: u64,
    deterministic: bool,
) -> Result<Evaluation> {
    let n_costs = n_costs_of(env);
    let n = env.n_agents();
    if policies.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: policies.len(),
            context: "evaluation policies",
        });
    }
    let mut out = Vec::with_capacity(episodes);
    for e in 0..episodes as u64 {
        let mut env = env.clone();
        let mut env_rng = derived_rng(seed, "eval_env", e);
        let mut action_rng = derived_rng(seed, "eval_action", e);
        let mut observation = env.reset(&mut env_rng);
        let mut stats = EpisodeStats::empty(&n_costs);
        for _ in 0..env.episode_length() {
            let mut actions = Vec::with_capacity(n);
            for (i, policy) in policies.iter().enumerate() {
                let o = ObsNorms::agent(norms, i, &observation.obs[i]);
                actions.push(if deterministic { policy.mode(&o)? } else { policy.sample(&o, &mut action_rng)? });
            }
            let step = env.step(&actions, &mut env_rng)?;
            stats.record(step.reward, &step.costs, gamma);
            observation = step.observation;
            if step.end.ends_segment() {
                break;
            }
        }
        out.push(stats);
    }
    Ok(Evaluation {
        summary: EpisodeSummary::from_episodes(&out, &n_costs),
        episodes: out,
    })
}

/// One worker's share of a rollout.
struct Collected {
    batch: RolloutBatch,
    raw_obs: Vec<Vec<f64>>,
    raw_states: Vec<f64>,
    /// Completed episodes only.
    episodes: Vec<EpisodeStats>,
}

fn rollout(env: &Env, policies: &[PolicyNet], norms: Option<&ObsNorms>, gamma: f64, steps: usize, seed: u64, index: u64) -> Result<Collected> {
    let mut env = env.clone();
    let n = env.n_agents();
    let n_costs = n_costs_of(&env);
    let obs_dims: Vec<usize> = (0..n).map(|i| env.obs_dim(i)).collect();
    let action_dims: Vec<usize> = policies.iter().map(|p| p.action_dim()).collect();
    let mut batch = RolloutBatch::new(obs_dims, env.state_dim(), action_dims, &n_costs)?;
    let mut raw_obs = vec![Vec::new(); n];
    let mut raw_states = Vec::new();
    let mut episodes = Vec::new();
    let mut env_rng = derived_rng(seed, "rollout_env", index);
    let mut action_rng = derived_rng(seed, "rollout_action", index);
    let mut observation = env.reset(&mut env_rng);
    let mut stats = EpisodeStats::empty(&n_costs);
    for _ in 0..steps {
        let obs: Vec<Vec<f64>> = (0..n).map(|i| ObsNorms::agent(norms, i, &observation.obs[i])).collect();
        let state = ObsNorms::state(norms, &observation.state);
        let mut actions = Vec::with_capacity(n);
        let mut log_probs = Vec::with_capacity(n);
        for (i, policy) in policies.iter().enumerate() {
            let dist = policy.distribution(&obs[i])?;
            let a = dist.sample(&mut action_rng);
            log_probs.push(dist.log_prob(&a)?);
            actions.push(a);
        }
        let step = env.step(&actions, &mut env_rng)?;
        let next_obs: Vec<Vec<f64>> = (0..n).map(|i| ObsNorms::agent(norms, i, &step.observation.obs[i])).collect();
        let next_state = ObsNorms::state(norms, &step.observation.state);
        batch.push(Transition {
            obs: &obs,
            next_obs: &next_obs,
            state: &state,
            next_state: &next_state,
            actions: &actions,
            log_probs: &log_probs,
            reward: step.reward,
            costs: &step.costs,
            end: step.end,
        })?;
        for i in 0..n {
            raw_obs[i].extend_from_slice(&observation.obs[i]);
        }
        raw_states.extend_from_slice(&observation.state);
        stats.record(step.reward, &step.costs, gamma);
        if step.end.ends_segment() {
            episodes.push(std::mem::replace(&mut stats, EpisodeStats::empty(&n_costs)));
            observation = env.reset(&mut env_rng);
        } else {
            observation = step.observation;
        }
    }
    batch.close();
    Ok(Collected {
        batch,
        raw_obs,
        raw_states,
        episodes,
    })
}

/// What one agent's update did.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentReport {
    pub agent: usize,
    /// `optimize`, `recover` or `reject` for trust-region steps, `clip` otherwise.
    pub mode: &'static str,
    /// Sampled mean KL between the policy before and after the update.
    pub kl: f64,
    pub backtracks: Option<usize>,
    /// Multipliers after the update: ν from the dual for MACPO, λ for
    /// MAPPO-Lagrangian, empty otherwise.
    pub multipliers: Vec<f64>,
    /// Per-step probability ratios of the final policy.
    pub ratios: Vec<f64>,
}

/// One row of the training log. Optional cells are written empty.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub env_steps: u64,
    pub train: EpisodeSummary,
    pub eval: Option<EpisodeSummary>,
    /// `[i][j]`, present for constrained algorithms.
    pub multipliers: Option<Vec<Vec<f64>>>,
    /// `d = J − c`, `[i][j]`, present for constrained algorithms.
    pub violations: Option<Vec<Vec<f64>>>,
    pub kl: Vec<f64>,
    pub modes: Vec<&'static str>,
    pub backtracks: Vec<Option<usize>>,
    pub order: Vec<usize>,
    /// Mean squared error of the reward critic(s) before fitting.
    pub critic_loss: f64,
    pub cost_critic_loss: Option<f64>,
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl IterationLog {
    /// CSV header for a run with `n_costs[i]` constraints on agent i.
    pub fn csv_header(n_costs: &[usize]) -> Vec<String> {
        let pairs = |prefix: &str| -> Vec<String> {
            n_costs
                .iter()
                .enumerate()
                .flat_map(|(i, &m)| (0..m).map(move |j| (i, j)))
                .map(|(i, j)| format!("{prefix}_{i}_{j}"))
                .collect()
        };
        let agents = |prefix: &str| -> Vec<String> { (0..n_costs.len()).map(|i| format!("{prefix}_{i}")).collect() };
        let mut h: Vec<String> = vec!["iteration".into(), "env_steps".into(), "episodes".into(), "train_reward".into()];
        h.extend(pairs("train_cost"));
        h.extend(pairs("train_cost_undiscounted"));
        h.push("eval_reward".into());
        h.extend(pairs("eval_cost"));
        h.extend(pairs("eval_cost_undiscounted"));
        h.extend(pairs("multiplier"));
        h.extend(pairs("violation"));
        h.extend(agents("kl"));
        h.extend(agents("mode"));
        h.extend(agents("backtracks"));
        h.extend(["order".into(), "critic_loss".into(), "cost_critic_loss".into()]);
        h
    }

    pub fn csv_record(&self, n_costs: &[usize]) -> Vec<String> {
        let flat = |grid: Option<&Vec<Vec<f64>>>| -> Vec<String> {
            n_costs
                .iter()
                .enumerate()
                .flat_map(|(i, &m)| (0..m).map(move |j| (i, j)))
                .map(|(i, j)| opt_cell(grid.map(|g| g[i][j])))
                .collect()
        };
        let mut r = vec![
            self.iteration.to_string(),
            self.env_steps.to_string(),
            self.train.episodes.to_string(),
            self.train.reward.to_string(),
        ];
        r.extend(flat(Some(&self.train.cost)));
        r.extend(flat(Some(&self.train.cost_undiscounted)));
        r.push(opt_cell(self.eval.as_ref().map(|e| e.reward)));
        r.extend(flat(self.eval.as_ref().map(|e| &e.cost)));
        r.extend(flat(self.eval.as_ref().map(|e| &e.cost_undiscounted)));
        r.extend(flat(self.multipliers.as_ref()));
        r.extend(flat(self.violations.as_ref()));
        r.extend(self.kl.iter().map(f64::to_string));
        r.extend(self.modes.iter().map(|m| m.to_string()));
        r.extend(self.backtracks.iter().map(|b| b.map(|x| x.to_string()).unwrap_or_default()));
        r.push(self.order.iter().map(usize::to_string).collect::<Vec<_>>().join(" "));
        r.push(self.critic_loss.to_string());
        r.push(opt_cell(self.cost_critic_loss));
        r
    }
}

/// Streams log rows to CSV, flushing after every row.
pub struct LogWriter<W: Write> {
    writer: csv::Writer<W>,
    n_costs: Vec<usize>,
}

impl<W: Write> LogWriter<W> {
    pub fn new(out: W, n_costs: &[usize]) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(IterationLog::csv_header(n_costs)).map_err(csv_error)?;
        writer.flush()?;
        Ok(Self {
            writer,
            n_costs: n_costs.to_vec(),
        })
    }

    pub fn write(&mut self, row: &IterationLog) -> Result<()> {
        self.writer.write_record(row.csv_record(&self.n_costs)).map_err(csv_error)?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Stream index for per-(iteration, unit, epoch) draws.
fn stream(iteration: usize, unit: usize, epoch: usize) -> u64 {
    ((iteration as u64) << 32) | ((unit as u64) << 16) | epoch as u64
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Squared-error regression of `critic` onto `targets` over `epochs` shuffled
/// passes of `num_mini_batch` minibatches. Returns the loss before fitting.
#[allow(clippy::too_many_arguments)]
fn fit_critic(
    critic: &mut Critic,
    inputs: &[f64],
    targets: &[f64],
    config: &TrainingConfig,
    purpose: &str,
    iteration: usize,
    unit: usize,
) -> Result<f64> {
    let dim = critic.net.obs_dim();
    let n = targets.len();
    let row = |t: usize| &inputs[t * dim..(t + 1) * dim];
    let before = (0..n).map(|t| (critic.net.value(row(t)) - targets[t]).powi(2)).sum::<f64>() / n as f64;
    let mb = n.div_ceil(config.num_mini_batch).max(1);
    let mut params = critic.net.params().to_vec();
    for epoch in 0..config.ppo_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut derived_rng(config.seed, purpose, stream(iteration, unit, epoch)));
        for chunk in order.chunks(mb) {
            let mut grad = vec![0.0; params.len()];
            let scale = 2.0 / chunk.len() as f64;
            for &t in chunk {
                let v = critic.net.value(row(t));
                critic.net.accumulate_grad(row(t), scale * (v - targets[t]), &mut grad);
            }
            ensure_finite(&grad, "critic gradient")?;
            clip_grad_norm(&mut grad, config.max_grad_norm);
            critic.opt.step(&mut params, &grad)?;
            critic.net.set_params(&params)?;
        }
    }
    Ok(before)
}

fn ratios(policy: &PolicyNet, batch: &RolloutBatch, i: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(batch.len());
    for t in 0..batch.len() {
        let lp = policy.log_prob(batch.agent_obs(i, t), batch.agent_action(i, t))?;
        out.push((lp - batch.log_probs[i][t]).exp());
    }
    ensure_finite(&out, "probability ratios")?;
    Ok(out)
}

/// Gradient of the minibatch clipped surrogate `mean min(r A, clip(r) A)`,
/// negated for descent.
fn clip_gradient(policy: &PolicyNet, batch: &RolloutBatch, i: usize, adv: &[f64], chunk: &[usize], clip: f64) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; policy.n_params()];
    let inv = 1.0 / chunk.len() as f64;
    for &t in chunk {
        let (o, a) = (batch.agent_obs(i, t), batch.agent_action(i, t));
        let r = (policy.log_prob(o, a)? - batch.log_probs[i][t]).exp();
        let unclipped = if adv[t] >= 0.0 { r < 1.0 + clip } else { r > 1.0 - clip };
        if unclipped {
            policy.accumulate_grad_log_prob(o, a, -adv[t] * r * inv, &mut grad)?;
        }
    }
    ensure_finite(&grad, "policy gradient")?;
    Ok(grad)
}

/// Constraint-surrogate weights for every row of `batch`, mean 1.
pub fn constraint_weights(batch: &RolloutBatch, gamma: f64, weighting: ConstraintWeighting) -> Vec<f64> {
    match weighting {
        ConstraintWeighting::Uniform => vec![1.0; batch.len()],
        ConstraintWeighting::Discounted => {
            let mut w = Vec::with_capacity(batch.len());
            let mut tau = 0i32;
            for end in &batch.ends {
                w.push(gamma.powi(tau));
                tau = if end.ends_segment() { 0 } else { tau + 1 };
            }
            let m = mean(&w);
            w.iter().map(|x| x / m).collect()
        }
    }
}

/// Per-step value of the clipped surrogate (for inspection and tests).
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// One multiplier update: `λ ← max(0, λ − α Δλ)` with
/// `Δλ = −(d (1 − γ) + mean_t r_t Âc_t)`.
pub fn lagrange_step(lambda: f64, lr: f64, violation: f64, gamma: f64, ratio_cost_mean: f64) -> f64 {
    if lr == 0.0 {
        return lambda;
    }
    let delta = -(violation * (1.0 - gamma) + ratio_cost_mean);
    (lambda - lr * delta).max(0.0)
}

/// Runs one algorithm on one environment.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainingConfig,
    env: Env,
    bounds: Vec<Vec<f64>>,
    n_costs: Vec<usize>,
    state: TrainerState,
}

impl Trainer {
    pub fn new(config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let env = Env::from_config(config.env_config()?)?;
        let n = env.n_agents();
        let n_costs = n_costs_of(&env);
        let bounds = match &config.bounds {
            None => env.default_bounds(),
            Some(b) => {
                if b.len() != n || b.iter().zip(&n_costs).any(|(bi, &m)| bi.len() != m) {
                    return Err(Error::Config(format!("bounds: expected shape {n_costs:?} (constraints per agent)")));
                }
                b.iter().map(|bi| bi.iter().map(|c| c.unwrap_or(f64::INFINITY)).collect()).collect()
            }
        };
        let mut policies = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = derived_rng(config.seed, "policy_init", i as u64);
            policies.push(match env.action_space(i) {
                ActionSpace::Continuous { dim, .. } => {
                    PolicyNet::gaussian(env.obs_dim(i), dim, config.hidden, config.gain, config.std_x_coef, config.std_y_coef, &mut rng)?
                }
                ActionSpace::Discrete { n: k } => PolicyNet::categorical(env.obs_dim(i), k, config.hidden, config.gain, &mut rng),
            });
        }
        let actor_opts = if config.algorithm.is_trust_region() {
            Vec::new()
        } else {
            policies.iter().map(|p| Adam::new(p.n_params(), config.actor_lr, config.adam_eps)).collect()
        };
        let critics = if config.algorithm == Algorithm::Ippo {
            (0..n).map(|i| Critic::new(env.obs_dim(i), &config, ("critic_init", i as u64))).collect()
        } else {
            vec![Critic::new(env.state_dim(), &config, ("critic_init", 0))]
        };
        let cost_critics = if config.algorithm.is_constrained() {
            (0..n)
                .map(|i| {
                    (0..n_costs[i])
                        .map(|j| Critic::new(env.state_dim(), &config, ("cost_critic_init", stream(0, i, j))))
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        let lagrange = if config.algorithm == Algorithm::MappoLagrangian {
            n_costs.iter().map(|&m| vec![config.lagrangian_init; m]).collect()
        } else {
            Vec::new()
        };
        let norms = config.normalize_observations.then(|| ObsNorms {
            agents: (0..n).map(|i| RunningNorm::new(env.obs_dim(i))).collect(),
            state: RunningNorm::new(env.state_dim()),
        });
        Ok(Self {
            config,
            env,
            bounds,
            n_costs,
            state: TrainerState {
                iteration: 0,
                env_steps: 0,
                policies,
                actor_opts,
                critics,
                cost_critics,
                lagrange,
                norms,
            },
        })
    }

    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Self> {
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", checkpoint.version)));
        }
        let mut trainer = Self::new(checkpoint.config)?;
        let fresh = &trainer.state;
        let s = &checkpoint.state;
        if s.policies.len() != fresh.policies.len()
            || s.critics.len() != fresh.critics.len()
            || s.cost_critics.len() != fresh.cost_critics.len()
            || s.policies.iter().zip(&fresh.policies).any(|(a, b)| a.n_params() != b.n_params())
        {
            return Err(Error::Config("checkpoint does not match its config".into()));
        }
        trainer.state = checkpoint.state;
        Ok(trainer)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            state: self.state.clone(),
        }
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    /// Resolved bounds `[i][j]` (`+∞` when unconstrained).
    pub fn bounds(&self) -> &[Vec<f64>] {
        &self.bounds
    }

    pub fn n_costs(&self) -> &[usize] {
        &self.n_costs
    }

    /// Deterministic evaluation of the current policies with the configured
    /// episode count; `stream_index` selects the evaluation seed stream.
    pub fn evaluate(&self, stream_index: u64) -> Result<Evaluation> {
        let seed = crate::rng::derive_seed(self.config.seed, "eval", stream_index);
        evaluate(
            &self.env,
            &self.state.policies,
            self.state.norms.as_ref(),
            self.config.eval_episodes,
            self.config.gamma,
            seed,
            true,
        )
    }

    /// Runs iterations until `config.iterations` are complete, handing each row
    /// to `on_row`.
    pub fn run<F>(&mut self, mut on_row: F) -> Result<Vec<IterationLog>>
    where
        F: FnMut(&Self, &IterationLog) -> Result<()>,
    {
        let mut rows = Vec::new();
        while self.state.iteration < self.config.iterations {
            let row = self.iterate()?;
            on_row(self, &row)?;
            rows.push(row);
        }
        Ok(rows)
    }

    /// One training iteration. On any error the state is rolled back to the
    /// start of the iteration and the error is returned.
    pub fn iterate(&mut self) -> Result<IterationLog> {
        let snapshot = self.state.clone();
        let out = self.iterate_inner();
        if out.is_err() {
            self.state = snapshot;
        }
        out
    }

    fn collect(&self, iteration: usize) -> Result<Collected> {
        let workers = self.config.rollout_workers;
        let base = self.config.batch_size / workers;
        let extra = self.config.batch_size % workers;
        let shares: Vec<usize> = (0..workers).map(|w| base + usize::from(w < extra)).collect();
        let job = |w: usize| {
            rollout(
                &self.env,
                &self.state.policies,
                self.state.norms.as_ref(),
                self.config.gamma,
                shares[w],
                self.config.seed,
                stream(iteration, w, 0),
            )
        };
        let parts: Vec<Result<Collected>> = if workers == 1 {
            vec![job(0)]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..workers).map(|w| scope.spawn(move || job(w))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidInput("rollout worker panicked".into()))))
                    .collect()
            })
        };
        let mut parts = parts.into_iter();
        let mut all = parts.next().expect("at least one worker")?;
        for part in parts {
            let part = part?;
            all.batch.append(&part.batch)?;
            for (mine, theirs) in all.raw_obs.iter_mut().zip(&part.raw_obs) {
                mine.extend_from_slice(theirs);
            }
            all.raw_states.extend_from_slice(&part.raw_states);
            all.episodes.extend(part.episodes);
        }
        Ok(all)
    }

    /// Constraint value estimates J `[i][j]`.
    fn constraint_estimates(&self, collected: &Collected, cost_values: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
        let starts = collected.batch.segment_starts();
        let critic_mean = |i: usize, j: usize| starts.iter().map(|&t| cost_values[i][j][t]).sum::<f64>() / starts.len() as f64;
        (0..self.n_costs.len())
            .map(|i| {
                (0..self.n_costs[i])
                    .map(|j| match self.config.violation_estimate {
                        ViolationEstimate::EpisodeCost if !collected.episodes.is_empty() => {
                            collected.episodes.iter().map(|e| e.cost[i][j]).sum::<f64>() / collected.episodes.len() as f64
                        }
                        _ => critic_mean(i, j),
                    })
                    .collect()
            })
            .collect()
    }

    fn iterate_inner(&mut self) -> Result<IterationLog> {
        let k = self.state.iteration;
        let algorithm = self.config.algorithm;
        let gamma = self.config.gamma;
        let lambda = self.config.gae_lambda;
        let n = self.env.n_agents();
        let collected = self.collect(k)?;
        let batch = &collected.batch;
        let len = batch.len();

        let zero_costs: Vec<Vec<Vec<f64>>> = self.n_costs.iter().map(|&m| vec![vec![0.0; len]; m]).collect();
        let (cost_values, next_cost_values) = if algorithm.is_constrained() {
            let eval = |inputs: &[f64]| -> Vec<Vec<Vec<f64>>> {
                self.state.cost_critics.iter().map(|ci| ci.iter().map(|c| c.values(inputs)).collect()).collect()
            };
            (eval(&batch.states), eval(&batch.next_states))
        } else {
            (zero_costs.clone(), zero_costs)
        };
        let sets: Vec<AdvantageSet> = if algorithm == Algorithm::Ippo {
            (0..n)
                .map(|i| {
                    let c = &self.state.critics[i];
                    AdvantageSet::compute(
                        batch,
                        &c.values(&batch.obs[i]),
                        &c.values(&batch.next_obs[i]),
                        &cost_values,
                        &next_cost_values,
                        gamma,
                        lambda,
                        self.config.normalize_advantages,
                    )
                })
                .collect::<Result<_>>()?
        } else {
            let c = &self.state.critics[0];
            vec![AdvantageSet::compute(
                batch,
                &c.values(&batch.states),
                &c.values(&batch.next_states),
                &cost_values,
                &next_cost_values,
                gamma,
                lambda,
                self.config.normalize_advantages,
            )?]
        };
        let violations: Vec<Vec<f64>> = if algorithm.is_constrained() {
            let j_hat = self.constraint_estimates(&collected, &cost_values);
            j_hat
                .iter()
                .zip(&self.bounds)
                .map(|(ji, ci)| ji.iter().zip(ci).map(|(j, c)| j - c).collect())
                .collect()
        } else {
            Vec::new()
        };

        let order = if algorithm.is_sequential() {
            draw_permutation(n, &mut derived_rng(self.config.seed, "permutation", k as u64)).order
        } else {
            (0..n).collect()
        };
        let weights = constraint_weights(batch, gamma, self.config.constraint_weighting);
        let mut m_factor = sets[0].m_factor.clone();
        let mut reports: Vec<Option<AgentReport>> = vec![None; n];
        for &i in &order {
            let report = match algorithm {
                Algorithm::Macpo => self.trust_region_update(
                    i,
                    batch,
                    &m_factor,
                    Some((&sets[0].cost_advantages[i], &violations[i], &weights)),
                )?,
                Algorithm::Hatrpo => self.trust_region_update(i, batch, &m_factor, None)?,
                Algorithm::MappoLagrangian => {
                    self.clip_update(i, batch, &m_factor, Some((&sets[0].cost_advantages[i], &violations[i])), k)?
                }
                Algorithm::Happo => self.clip_update(i, batch, &m_factor, None, k)?,
                Algorithm::Mappo => self.clip_update(i, batch, &sets[0].advantages, None, k)?,
                Algorithm::Ippo => self.clip_update(i, batch, &sets[i].advantages, None, k)?,
            };
            if algorithm.is_sequential() {
                update_m_factor(&mut m_factor, &report.ratios)?;
            }
            reports[i] = Some(report);
        }
        let reports: Vec<AgentReport> = reports.into_iter().map(|r| r.expect("every agent updated")).collect();

        let mut critic_loss = 0.0;
        if algorithm == Algorithm::Ippo {
            for i in 0..n {
                critic_loss += fit_critic(&mut self.state.critics[i], &batch.obs[i], &sets[i].returns, &self.config, "critic_fit", k, i)?;
            }
            critic_loss /= n as f64;
        } else {
            critic_loss = fit_critic(&mut self.state.critics[0], &batch.states, &sets[0].returns, &self.config, "critic_fit", k, 0)?;
        }
        let mut cost_critic_loss = None;
        if algorithm.is_constrained() {
            let mut total = 0.0;
            let mut count = 0usize;
            for i in 0..n {
                for j in 0..self.n_costs[i] {
                    let unit = i * 256 + j;
                    total += fit_critic(
                        &mut self.state.cost_critics[i][j],
                        &batch.states,
                        &sets[0].cost_returns[i][j],
                        &self.config,
                        "cost_critic_fit",
                        k,
                        unit,
                    )?;
                    count += 1;
                }
            }
            if count > 0 {
                cost_critic_loss = Some(total / count as f64);
            }
        }

        if let Some(norms) = self.state.norms.as_mut() {
            for (norm, raw) in norms.agents.iter_mut().zip(&collected.raw_obs) {
                norm.update(raw)?;
            }
            norms.state.update(&collected.raw_states)?;
        }
        self.state.iteration += 1;
        self.state.env_steps += len as u64;
        let done = self.state.iteration;
        let interval = self.config.eval_interval;
        let eval = if interval > 0 && (done % interval == 0 || done == self.config.iterations) && self.config.eval_episodes > 0 {
            Some(self.evaluate(done as u64)?.summary)
        } else {
            None
        };
        let multipliers = match algorithm {
            Algorithm::MappoLagrangian => Some(self.state.lagrange.clone()),
            Algorithm::Macpo => Some(reports.iter().map(|r| r.multipliers.clone()).collect()),
            _ => None,
        };
        Ok(IterationLog {
            iteration: done,
            env_steps: self.state.env_steps,
            train: EpisodeSummary::from_episodes(&collected.episodes, &self.n_costs),
            eval,
            multipliers,
            violations: algorithm.is_constrained().then_some(violations),
            kl: reports.iter().map(|r| r.kl).collect(),
            modes: reports.iter().map(|r| r.mode).collect(),
            backtracks: reports.iter().map(|r| r.backtracks).collect(),
            order,
            critic_loss,
            cost_critic_loss,
        })
    }

    /// Trust-region step of agent `i` on the M-factor surrogate, optionally
    /// subject to `(cost advantages [j][t], violations d_j, sample weights)`.
    fn trust_region_update(
        &mut self,
        i: usize,
        batch: &RolloutBatch,
        m: &[f64],
        constraints: Option<(&[Vec<f64>], &[f64], &[f64])>,
    ) -> Result<AgentReport> {
        let cfg = &self.config;
        let policy = &self.state.policies[i];
        let len = batch.len();
        let inv = 1.0 / len as f64;
        let horizon = 1.0 / (1.0 - cfg.gamma);
        let (cost_adv, d, w): (&[Vec<f64>], &[f64], &[f64]) = constraints.unwrap_or((&[], &[], &[]));
        let p = policy.n_params();
        let mut g = vec![0.0; p];
        let mut b = vec![vec![0.0; p]; d.len()];
        for t in 0..len {
            let score = policy.grad_log_prob(batch.agent_obs(i, t), batch.agent_action(i, t))?;
            for (gk, sk) in g.iter_mut().zip(&score) {
                *gk += m[t] * inv * sk;
            }
            for (j, bj) in b.iter_mut().enumerate() {
                let c = w[t] * cost_adv[j][t] * inv * horizon;
                for (bk, sk) in bj.iter_mut().zip(&score) {
                    *bk += c * sk;
                }
            }
        }
        ensure_finite(&g, "objective gradient")?;
        for bj in &b {
            ensure_finite(bj, "constraint gradient")?;
        }
        let problem = LqclpProblem {
            g,
            b,
            d: d.to_vec(),
            delta: cfg.kl_threshold,
        };
        let obs = &batch.obs[i];
        let damping = cfg.hvp_damping;
        let reject = |dim: usize| TrustRegionStep {
            direction: vec![0.0; dim],
            step: vec![0.0; dim],
            exponent: None,
            mode: StepMode::Reject,
        };
        let mean_m = mean(m);
        let surrogate_cost = |r: &[f64], j: usize| horizon * (0..len).map(|t| w[t] * (r[t] - 1.0) * cost_adv[j][t]).sum::<f64>() * inv;
        let feasible_now = d.iter().all(|x| *x <= 0.0);
        let mut multipliers = vec![0.0; d.len()];
        let pre = match Preconditioned::compute(&problem, |v| policy.kl_hessian_vector_product(obs, v, damping), &cfg.solver) {
            Ok(pre) => Some(pre),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        };
        let outcome = match &pre {
            None => reject(p),
            Some(pre) => match solve_dual(&problem, pre, &cfg.solver) {
                Ok(dual) => {
                    multipliers.clone_from(&dual.nu);
                    let x = primal_step(&dual, pre)?;
                    backtracking_line_search(&x, cfg.kl_threshold, &cfg.line_search, |step| {
                        let cand = policy.stepped(step, 1.0)?;
                        let r = ratios(&cand, batch, i)?;
                        let improvement = (0..len).map(|t| r[t] * m[t]).sum::<f64>() * inv - mean_m;
                        let kl = PolicyNet::mean_kl(policy, &cand, obs)?;
                        // While infeasible a step only has to reduce the cost surrogate.
                        let constraints_ok = (0..d.len()).all(|j| surrogate_cost(&r, j) <= (-d[j]).max(0.0));
                        Ok(Probe {
                            improvement,
                            kl,
                            constraints_ok,
                            require_improvement: feasible_now,
                        })
                    })?
                }
                Err(Error::RecoveryRequired) => {
                    let worst = (0..d.len()).fold(0, |w, j| if d[j] > d[w] { j } else { w });
                    recovery_step(&pre.hinv_b[worst], pre.s[worst], cfg.kl_threshold, &cfg.line_search, |step| {
                        let cand = policy.stepped(step, 1.0)?;
                        let r = ratios(&cand, batch, i)?;
                        let kl = PolicyNet::mean_kl(policy, &cand, obs)?;
                        Ok(if kl <= cfg.kl_threshold { surrogate_cost(&r, worst) } else { f64::INFINITY })
                    })
                    .or_else(|e| match e {
                        Error::Degenerate(_) => Ok(reject(p)),
                        e => Err(e),
                    })?
                }
                Err(Error::DegenerateDual(_)) => reject(p),
                Err(e) => return Err(e),
            },
        };
        let updated = policy.stepped(&outcome.step, 1.0)?;
        ensure_finite(&updated.params(), "policy parameters")?;
        let kl = PolicyNet::mean_kl(policy, &updated, obs)?;
        let r = ratios(&updated, batch, i)?;
        self.state.policies[i] = updated;
        Ok(AgentReport {
            agent: i,
            mode: outcome.mode.as_str(),
            kl,
            backtracks: outcome.exponent,
            multipliers,
            ratios: r,
        })
    }

    /// Clipped-surrogate epochs of agent `i` on `base` advantages. With
    /// `constraints`, the advantages are `base − Σ_j λ_j Âc_j` rebuilt every
    /// epoch and the multipliers descend after each epoch.
    fn clip_update(
        &mut self,
        i: usize,
        batch: &RolloutBatch,
        base: &[f64],
        constraints: Option<(&[Vec<f64>], &[f64])>,
        iteration: usize,
    ) -> Result<AgentReport> {
        let cfg = self.config.clone();
        let len = batch.len();
        let old = self.state.policies[i].clone();
        let mb = len.div_ceil(cfg.num_mini_batch).max(1);
        let mut params = old.params();
        for epoch in 0..cfg.ppo_epochs {
            let adv: Vec<f64> = match constraints {
                Some((cost_adv, _)) => (0..len)
                    .map(|t| {
                        base[t]
                            - self.state.lagrange[i]
                                .iter()
                                .zip(cost_adv)
                                .map(|(l, c)| l * c[t])
                                .sum::<f64>()
                    })
                    .collect(),
                None => base.to_vec(),
            };
            let mut order: Vec<usize> = (0..len).collect();
            order.shuffle(&mut derived_rng(cfg.seed, "actor_minibatch", stream(iteration, i, epoch)));
            for chunk in order.chunks(mb) {
                let policy = &mut self.state.policies[i];
                let mut grad = clip_gradient(policy, batch, i, &adv, chunk, cfg.clip)?;
                clip_grad_norm(&mut grad, cfg.max_grad_norm);
                self.state.actor_opts[i].step(&mut params, &grad)?;
                policy.set_params(&params)?;
            }
            if let Some((cost_adv, d)) = constraints {
                let r = ratios(&self.state.policies[i], batch, i)?;
                for (j, l) in self.state.lagrange[i].iter_mut().enumerate() {
                    let rc = (0..len).map(|t| r[t] * cost_adv[j][t]).sum::<f64>() / len as f64;
                    *l = lagrange_step(*l, cfg.lagrangian_lr, d[j], cfg.gamma, rc);
                }
            }
        }
        let policy = &self.state.policies[i];
        ensure_finite(&policy.params(), "policy parameters")?;
        Ok(AgentReport {
            agent: i,
            mode: "clip",
            kl: PolicyNet::mean_kl(&old, policy, &batch.obs[i])?,
            backtracks: None,
            multipliers: if constraints.is_some() { self.state.lagrange[i].clone() } else { Vec::new() },
            ratios: ratios(policy, batch, i)?,
        })
    }
}
