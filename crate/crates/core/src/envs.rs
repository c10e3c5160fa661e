//! Desk-scale constrained environments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cmg::{sample_categorical, TabularCmg};
use crate::error::{ensure_len, Error, Result};
use crate::estimation::Boundary;

/// Action space of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    /// Box `[low, high]^dim`; out-of-range actions are clipped by the env.
    Continuous { dim: usize, low: f64, high: f64 },
    /// Actions are `[index as f64]`.
    Discrete { n: usize },
}

/// Per-agent observations plus the global state seen by centralised critics.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub obs: Vec<Vec<f64>>,
    pub state: Vec<f64>,
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observation: Observation,
    pub reward: f64,
    /// `costs[i][j]`
    pub costs: Vec<Vec<f64>>,
    /// `Continue` or `Terminal` (the end of the episode horizon).
    pub end: Boundary,
    /// Number of action components that were clipped into range.
    pub clipped: usize,
}

/// Shared environment contract.
pub trait Environment {
    fn n_agents(&self) -> usize;
    fn obs_dim(&self, agent: usize) -> usize;
    fn state_dim(&self) -> usize;
    fn action_space(&self, agent: usize) -> ActionSpace;
    fn n_costs(&self, agent: usize) -> usize;
    fn episode_length(&self) -> usize;
    fn reset(&mut self, rng: &mut dyn rand::RngCore) -> Observation;
    fn step(&mut self, actions: &[Vec<f64>], rng: &mut dyn rand::RngCore) -> Result<EnvStep>;
}

fn clip(x: f64, lo: f64, hi: f64, clipped: &mut usize) -> f64 {
    if x < lo || x > hi {
        *clipped += 1;
    }
    x.clamp(lo, hi)
}

/// Point mass in a corridor: agent 0 thrusts along x, agent 1 along y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorridorConfig {
    pub width: f64,
    /// Cost is 1 when the distance to the nearest wall is below this.
    pub unsafe_margin: f64,
    pub dt: f64,
    pub damping: f64,
    pub thrust_bound: f64,
    /// Extra x-thrust gain at the walls: gain = 1 + bonus · |y| / (width / 2).
    pub edge_speed_bonus: f64,
    /// Initial y is uniform in `[-init_noise, init_noise]`.
    pub init_noise: f64,
    pub episode_length: usize,
}

impl Default for CorridorConfig {
    fn default() -> Self {
        Self {
            width: 9.0,
            unsafe_margin: 1.8,
            dt: 0.05,
            damping: 0.95,
            thrust_bound: 1.0,
            edge_speed_bonus: 1.0,
            init_noise: 0.1,
            episode_length: 200,
        }
    }
}

impl CorridorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width", self.width),
            ("dt", self.dt),
            ("thrust_bound", self.thrust_bound),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("corridor.{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.damping) {
            return Err(Error::Config("corridor.damping must lie in [0, 1]".into()));
        }
        if self.unsafe_margin < 0.0 || self.init_noise < 0.0 || self.edge_speed_bonus < 0.0 {
            return Err(Error::Config("corridor margins, noise and bonus must be non-negative".into()));
        }
        if self.init_noise > self.width / 2.0 {
            return Err(Error::Config("corridor.init_noise exceeds the half width".into()));
        }
        if self.episode_length == 0 {
            return Err(Error::Config("corridor.episode_length must be positive".into()));
        }
        Ok(())
    }
}

/// Physical state of the corridor point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorridorState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorridorEnv {
    config: CorridorConfig,
    state: CorridorState,
}

impl CorridorEnv {
    pub const OBS_DIM: usize = 5;

    pub fn new(config: CorridorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: CorridorState {
                x: 0.0,
                y: 0.0,
                vx: 0.0,
                vy: 0.0,
                t: 0,
            },
        })
    }

    pub fn config(&self) -> &CorridorConfig {
        &self.config
    }

    pub fn state(&self) -> CorridorState {
        self.state
    }

    pub fn set_state(&mut self, state: CorridorState) {
        self.state = state;
    }

    pub fn half_width(&self) -> f64 {
        self.config.width / 2.0
    }

    pub fn wall_distance(&self, y: f64) -> f64 {
        self.half_width() - y.abs()
    }

    /// Indicator cost of a position.
    pub fn cost_at(&self, y: f64) -> f64 {
        if self.wall_distance(y) < self.config.unsafe_margin {
            1.0
        } else {
            0.0
        }
    }

    /// `[vx, y / h, vy, wall distance / h, t / T]` with h the half width.
    pub fn observe(&self) -> Observation {
        let s = self.state;
        let h = self.half_width();
        let o = vec![
            s.vx,
            s.y / h,
            s.vy,
            self.wall_distance(s.y) / h,
            s.t as f64 / self.config.episode_length as f64,
        ];
        Observation {
            obs: vec![o.clone(), o.clone()],
            state: o,
        }
    }
}

impl Environment for CorridorEnv {
    fn n_agents(&self) -> usize {
        2
    }

    fn obs_dim(&self, _agent: usize) -> usize {
        Self::OBS_DIM
    }

    fn state_dim(&self) -> usize {
        Self::OBS_DIM
    }

    fn action_space(&self, _agent: usize) -> ActionSpace {
        ActionSpace::Continuous {
            dim: 1,
            low: -self.config.thrust_bound,
            high: self.config.thrust_bound,
        }
    }

    fn n_costs(&self, _agent: usize) -> usize {
        1
    }

    fn episode_length(&self) -> usize {
        self.config.episode_length
    }

    fn reset(&mut self, rng: &mut dyn rand::RngCore) -> Observation {
        let y = if self.config.init_noise > 0.0 {
            rng.random_range(-self.config.init_noise..=self.config.init_noise)
        } else {
            0.0
        };
        self.state = CorridorState {
            x: 0.0,
            y,
            vx: 0.0,
            vy: 0.0,
            t: 0,
        };
        self.observe()
    }

    fn step(&mut self, actions: &[Vec<f64>], _rng: &mut dyn rand::RngCore) -> Result<EnvStep> {
        ensure_len(actions.len(), 2, "corridor joint action")?;
        ensure_len(actions[0].len(), 1, "corridor x action")?;
        ensure_len(actions[1].len(), 1, "corridor y action")?;
        if actions.iter().flatten().any(|a| a.is_nan()) {
            return Err(Error::NonFinite("corridor action".into()));
        }
        let c = &self.config;
        let mut clipped = 0;
        let ax = clip(actions[0][0], -c.thrust_bound, c.thrust_bound, &mut clipped);
        let ay = clip(actions[1][0], -c.thrust_bound, c.thrust_bound, &mut clipped);
        let h = c.width / 2.0;
        let mut s = self.state;
        let gain = 1.0 + c.edge_speed_bonus * s.y.abs() / h;
        s.vx = c.damping * s.vx + c.dt * gain * ax;
        s.vy = c.damping * s.vy + c.dt * ay;
        s.x += c.dt * s.vx;
        s.y += c.dt * s.vy;
        if s.y.abs() > h {
            s.y = h.copysign(s.y);
            s.vy = 0.0;
        }
        s.t += 1;
        self.state = s;
        let cost = self.cost_at(s.y);
        let end = if s.t >= c.episode_length {
            Boundary::Terminal
        } else {
            Boundary::Continue
        };
        Ok(EnvStep {
            observation: self.observe(),
            reward: s.vx,
            costs: vec![vec![cost], vec![cost]],
            end,
            clipped,
        })
    }
}

/// Moves on the bridge grid.
pub const BRIDGE_MOVES: [(i64, i64); 5] = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)];

/// Agents cross a grid from the left column to the right column. The top and
/// bottom rows are edge cells: stepping onto one costs 1, but the middle rows
/// are slippery (a move fails and the agent stays put with probability `slip`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BridgeGridConfig {
    pub rows: usize,
    pub cols: usize,
    pub n_agents: usize,
    pub slip: f64,
    pub discount: f64,
    pub goal_reward: f64,
    pub episode_length: usize,
    /// Discounted cost bound of every agent; `None` means unconstrained.
    pub bound: Option<f64>,
}

impl Default for BridgeGridConfig {
    fn default() -> Self {
        Self {
            rows: 3,
            cols: 4,
            n_agents: 2,
            slip: 0.3,
            discount: 0.95,
            goal_reward: 1.0,
            episode_length: 100,
            bound: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeGridEnv {
    config: BridgeGridConfig,
    /// Cell index `row * cols + col` of every agent.
    positions: Vec<usize>,
    t: usize,
}

impl BridgeGridEnv {
    pub fn new(config: BridgeGridConfig) -> Result<Self> {
        if config.rows == 0 || config.cols == 0 || config.n_agents == 0 {
            return Err(Error::Config("bridge grid needs positive rows, cols and agents".into()));
        }
        if !(0.0..=1.0).contains(&config.slip) || !(0.0..1.0).contains(&config.discount) {
            return Err(Error::Config("bridge slip must lie in [0, 1] and discount in [0, 1)".into()));
        }
        if config.episode_length == 0 {
            return Err(Error::Config("bridge episode_length must be positive".into()));
        }
        let cells = config.rows * config.cols;
        let n_states = (cells as u128).checked_pow(config.n_agents as u32).unwrap_or(u128::MAX);
        if n_states > 1 << 16 {
            return Err(Error::Capacity(format!("bridge grid has {n_states} states")));
        }
        let start = config.rows / 2 * config.cols;
        Ok(Self {
            positions: vec![start; config.n_agents],
            config,
            t: 0,
        })
    }

    pub fn config(&self) -> &BridgeGridConfig {
        &self.config
    }

    pub fn n_cells(&self) -> usize {
        self.config.rows * self.config.cols
    }

    pub fn n_states(&self) -> usize {
        self.n_cells().pow(self.config.n_agents as u32)
    }

    pub fn start_cell(&self) -> usize {
        self.config.rows / 2 * self.config.cols
    }

    /// Mixed-radix encoding with agent 0 as the most significant digit.
    pub fn encode(&self, positions: &[usize]) -> usize {
        positions.iter().fold(0, |acc, p| acc * self.n_cells() + p)
    }

    pub fn decode(&self, mut state: usize) -> Vec<usize> {
        let mut out = vec![0; self.config.n_agents];
        for k in (0..self.config.n_agents).rev() {
            out[k] = state % self.n_cells();
            state /= self.n_cells();
        }
        out
    }

    pub fn state_index(&self) -> usize {
        self.encode(&self.positions)
    }

    pub fn set_state_index(&mut self, state: usize) {
        self.positions = self.decode(state);
    }

    pub fn is_edge(&self, cell: usize) -> bool {
        let row = cell / self.config.cols;
        self.config.rows > 2 && (row == 0 || row + 1 == self.config.rows)
    }

    pub fn is_goal(&self, cell: usize) -> bool {
        cell % self.config.cols + 1 == self.config.cols
    }

    /// Cell reached by a successful move (walls block).
    pub fn target(&self, cell: usize, action: usize) -> usize {
        let (dr, dc) = BRIDGE_MOVES[action];
        let row = (cell / self.config.cols) as i64 + dr;
        let col = (cell % self.config.cols) as i64 + dc;
        if row < 0 || col < 0 || row >= self.config.rows as i64 || col >= self.config.cols as i64 {
            cell
        } else {
            row as usize * self.config.cols + col as usize
        }
    }

    /// Probability that a move from `cell` fails.
    pub fn slip_at(&self, cell: usize) -> f64 {
        if self.is_edge(cell) {
            0.0
        } else {
            self.config.slip
        }
    }

    /// Edge-stepping indicator for one agent's intended move.
    pub fn cost(&self, cell: usize, action: usize) -> f64 {
        if self.is_edge(self.target(cell, action)) {
            1.0
        } else {
            0.0
        }
    }

    /// Shared reward: goal reward per agent whose intended move ends on the goal column.
    pub fn reward(&self, cells: &[usize], actions: &[usize]) -> f64 {
        cells
            .iter()
            .zip(actions)
            .filter(|(c, a)| self.is_goal(self.target(**c, **a)))
            .count() as f64
            * self.config.goal_reward
    }

    fn one_hot_obs(&self) -> Observation {
        let cells = self.n_cells();
        let mut state = vec![0.0; cells * self.config.n_agents];
        for (k, p) in self.positions.iter().enumerate() {
            state[k * cells + p] = 1.0;
        }
        Observation {
            obs: vec![state.clone(); self.config.n_agents],
            state,
        }
    }

    /// Exact tabular model of the same dynamics.
    pub fn as_tabular(&self) -> Result<TabularCmg> {
        let n = self.config.n_agents;
        let ns = self.n_states();
        let counts = vec![BRIDGE_MOVES.len(); n];
        let nj = BRIDGE_MOVES.len().pow(n as u32);
        let mut transition = vec![0.0; ns * nj * ns];
        let mut reward = vec![0.0; ns * nj];
        let mut actions = vec![0; n];
        for s in 0..ns {
            let cells = self.decode(s);
            for joint in 0..nj {
                let mut rest = joint;
                for k in (0..n).rev() {
                    actions[k] = rest % BRIDGE_MOVES.len();
                    rest /= BRIDGE_MOVES.len();
                }
                reward[s * nj + joint] = self.reward(&cells, &actions);
                // independent slips: enumerate which agents' moves succeed
                for mask in 0..(1usize << n) {
                    let mut p = 1.0;
                    let mut next = cells.clone();
                    for k in 0..n {
                        let slip = self.slip_at(cells[k]);
                        if mask >> k & 1 == 1 {
                            p *= 1.0 - slip;
                            next[k] = self.target(cells[k], actions[k]);
                        } else {
                            p *= slip;
                        }
                    }
                    if p > 0.0 {
                        transition[(s * nj + joint) * ns + self.encode(&next)] += p;
                    }
                }
            }
        }
        let mut costs = Vec::with_capacity(n);
        for i in 0..n {
            let mut table = Vec::with_capacity(ns * BRIDGE_MOVES.len());
            for s in 0..ns {
                let cell = self.decode(s)[i];
                table.extend((0..BRIDGE_MOVES.len()).map(|a| self.cost(cell, a)));
            }
            costs.push(vec![table]);
        }
        let mut initial = vec![0.0; ns];
        initial[self.encode(&vec![self.start_cell(); n])] = 1.0;
        let bound = self.config.bound.unwrap_or(f64::INFINITY);
        TabularCmg::new(ns, counts, transition, reward, costs, initial, self.config.discount, vec![vec![bound]; n])
    }
}

impl Environment for BridgeGridEnv {
    fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    fn obs_dim(&self, _agent: usize) -> usize {
        self.n_cells() * self.config.n_agents
    }

    fn state_dim(&self) -> usize {
        self.n_cells() * self.config.n_agents
    }

    fn action_space(&self, _agent: usize) -> ActionSpace {
        ActionSpace::Discrete { n: BRIDGE_MOVES.len() }
    }

    fn n_costs(&self, _agent: usize) -> usize {
        1
    }

    fn episode_length(&self) -> usize {
        self.config.episode_length
    }

    fn reset(&mut self, _rng: &mut dyn rand::RngCore) -> Observation {
        self.positions = vec![self.start_cell(); self.config.n_agents];
        self.t = 0;
        self.one_hot_obs()
    }

    fn step(&mut self, actions: &[Vec<f64>], rng: &mut dyn rand::RngCore) -> Result<EnvStep> {
        let acts = discrete_actions(actions, self.config.n_agents, BRIDGE_MOVES.len())?;
        let cells = self.positions.clone();
        let reward = self.reward(&cells, &acts);
        let costs = (0..self.config.n_agents).map(|i| vec![self.cost(cells[i], acts[i])]).collect();
        for k in 0..self.config.n_agents {
            let slipped = rng.random::<f64>() < self.slip_at(cells[k]);
            if !slipped {
                self.positions[k] = self.target(cells[k], acts[k]);
            }
        }
        self.t += 1;
        Ok(EnvStep {
            observation: self.one_hot_obs(),
            reward,
            costs,
            end: if self.t >= self.config.episode_length { Boundary::Terminal } else { Boundary::Continue },
            clipped: 0,
        })
    }
}

fn discrete_actions(actions: &[Vec<f64>], n_agents: usize, n_actions: usize) -> Result<Vec<usize>> {
    ensure_len(actions.len(), n_agents, "discrete joint action")?;
    actions
        .iter()
        .map(|a| {
            ensure_len(a.len(), 1, "discrete action")?;
            let v = a[0];
            if v.fract() != 0.0 || v < 0.0 || v >= n_actions as f64 {
                return Err(Error::InvalidInput(format!("action {v} is not an index below {n_actions}")));
            }
            Ok(v as usize)
        })
        .collect()
}

/// Runs a [`TabularCmg`] as a rollout environment with one-hot state observations.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularEnv {
    game: TabularCmg,
    episode_length: usize,
    state: usize,
    t: usize,
}

impl TabularEnv {
    pub fn new(game: TabularCmg, episode_length: usize) -> Result<Self> {
        if episode_length == 0 {
            return Err(Error::Config("tabular env episode_length must be positive".into()));
        }
        Ok(Self {
            game,
            episode_length,
            state: 0,
            t: 0,
        })
    }

    pub fn game(&self) -> &TabularCmg {
        &self.game
    }

    pub fn state_index(&self) -> usize {
        self.state
    }

    fn observe(&self) -> Observation {
        let mut o = vec![0.0; self.game.n_states()];
        o[self.state] = 1.0;
        Observation {
            obs: vec![o.clone(); self.game.n_agents()],
            state: o,
        }
    }
}

impl Environment for TabularEnv {
    fn n_agents(&self) -> usize {
        self.game.n_agents()
    }

    fn obs_dim(&self, _agent: usize) -> usize {
        self.game.n_states()
    }

    fn state_dim(&self) -> usize {
        self.game.n_states()
    }

    fn action_space(&self, agent: usize) -> ActionSpace {
        ActionSpace::Discrete {
            n: self.game.action_count(agent),
        }
    }

    fn n_costs(&self, agent: usize) -> usize {
        self.game.n_costs(agent)
    }

    fn episode_length(&self) -> usize {
        self.episode_length
    }

    fn reset(&mut self, rng: &mut dyn rand::RngCore) -> Observation {
        self.state = sample_categorical(self.game.initial(), rng);
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, actions: &[Vec<f64>], rng: &mut dyn rand::RngCore) -> Result<EnvStep> {
        let n = self.game.n_agents();
        let acts: Vec<usize> = (0..n)
            .map(|i| discrete_actions(&actions[i..i + 1], 1, self.game.action_count(i)).map(|v| v[0]))
            .collect::<Result<_>>()?;
        let out = self.game.sample_step(self.state, &acts, rng)?;
        self.state = out.next_state;
        self.t += 1;
        Ok(EnvStep {
            observation: self.observe(),
            reward: out.reward,
            costs: out.costs,
            end: if self.t >= self.episode_length { Boundary::Terminal } else { Boundary::Continue },
            clipped: 0,
        })
    }
}

/// Serializable environment selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum EnvConfig {
    Corridor(CorridorConfig),
    BridgeGrid(BridgeGridConfig),
    /// A tabular game stored as JSON at `path`.
    Tabular { path: String, episode_length: usize },
}

/// Any of the shipped environments.
#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    Corridor(CorridorEnv),
    BridgeGrid(BridgeGridEnv),
    Tabular(TabularEnv),
}

impl Env {
    pub fn from_config(config: &EnvConfig) -> Result<Self> {
        Ok(match config {
            EnvConfig::Corridor(c) => Env::Corridor(CorridorEnv::new(c.clone())?),
            EnvConfig::BridgeGrid(c) => Env::BridgeGrid(BridgeGridEnv::new(c.clone())?),
            EnvConfig::Tabular { path, episode_length } => {
                let text = std::fs::read_to_string(path)?;
                Env::Tabular(TabularEnv::new(TabularCmg::from_json(&text)?, *episode_length)?)
            }
        })
    }

    fn inner(&self) -> &dyn Environment {
        match self {
            Env::Corridor(e) => e,
            Env::BridgeGrid(e) => e,
            Env::Tabular(e) => e,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Environment {
        match self {
            Env::Corridor(e) => e,
            Env::BridgeGrid(e) => e,
            Env::Tabular(e) => e,
        }
    }

    /// Cost bounds the environment declares, `bounds[i][j]`.
    pub fn default_bounds(&self) -> Vec<Vec<f64>> {
        match self {
            Env::Corridor(_) => vec![vec![1.0]; 2],
            Env::BridgeGrid(e) => vec![vec![e.config().bound.unwrap_or(f64::INFINITY)]; e.config().n_agents],
            Env::Tabular(e) => e.game().bounds().to_vec(),
        }
    }
}

impl Environment for Env {
    fn n_agents(&self) -> usize {
        self.inner().n_agents()
    }

    fn obs_dim(&self, agent: usize) -> usize {
        self.inner().obs_dim(agent)
    }

    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }

    fn action_space(&self, agent: usize) -> ActionSpace {
        self.inner().action_space(agent)
    }

    fn n_costs(&self, agent: usize) -> usize {
        self.inner().n_costs(agent)
    }

    fn episode_length(&self) -> usize {
        self.inner().episode_length()
    }

    fn reset(&mut self, rng: &mut dyn rand::RngCore) -> Observation {
        self.inner_mut().reset(rng)
    }

    fn step(&mut self, actions: &[Vec<f64>], rng: &mut dyn rand::RngCore) -> Result<EnvStep> {
        self.inner_mut().step(actions, rng)
    }
}
