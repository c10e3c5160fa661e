//! Property suites with independent oracles, run by the `verify` command and the
//! acceptance target. Each suite draws its instances from a stream derived from
//! the report seed, checks them against a brute-force or closed-form reference
//! and records the worst residual per check. The first failing instance is kept
//! as JSON so that it can be replayed.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cmg::{random_tabular_cmg, JointPolicy, TabularCmg};
use crate::error::{Error, Result};
use crate::estimation::{gae, Boundary};
use crate::nn::PolicyNet;
use crate::oracle::{exact_values, max_kl, multi_agent_advantage, surrogate_cost, PolicyEvaluation, ValueTables};
use crate::rng::{derived_rng, SeededRng};
use crate::safe_iteration::{check_guarantees, safe_iteration, SafeIterationConfig};
use crate::solver::{conjugate_gradient, DenseLqclp, LqclpProblem, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Decomposition,
    CostBound,
    Improvement,
    Lqclp,
    ConjugateGradient,
    Gradients,
    Gae,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Decomposition,
        Suite::CostBound,
        Suite::Improvement,
        Suite::Lqclp,
        Suite::ConjugateGradient,
        Suite::Gradients,
        Suite::Gae,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Decomposition => "decomposition",
            Suite::CostBound => "cost_bound",
            Suite::Improvement => "improvement",
            Suite::Lqclp => "lqclp",
            Suite::ConjugateGradient => "conjugate_gradient",
            Suite::Gradients => "gradients",
            Suite::Gae => "gae",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.replace('-', "_");
        Suite::ALL
            .into_iter()
            .find(|suite| suite.as_str() == key)
            .ok_or_else(|| Error::InvalidInput(format!("unknown suite {s:?}")))
    }
}

/// Deliberate defects used as negative controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Adds 1e-6 to the first term of every advantage decomposition.
    PerturbedDecomposition,
}

impl FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "perturbed_decomposition" => Ok(Fault::PerturbedDecomposition),
            _ => Err(Error::InvalidInput(format!("unknown fault {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    pub decomposition_games: usize,
    pub cost_bound_triples: usize,
    pub improvement_games: usize,
    pub improvement_iterations: usize,
    pub lqclp_instances: usize,
    pub cg_systems: usize,
    pub gradient_nets: usize,
    pub score_samples: usize,
    pub gae_episodes: usize,
    pub fault: Option<Fault>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            decomposition_games: 100,
            cost_bound_triples: 200,
            improvement_games: 25,
            improvement_iterations: 20,
            lqclp_instances: 200,
            cg_systems: 50,
            gradient_nets: 20,
            score_samples: 100_000,
            gae_episodes: 100,
            fault: None,
        }
    }
}

/// Worst observed value of one residual; the check passes when `worst <= tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub name: String,
    pub worst: f64,
    pub tolerance: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub instances: usize,
    pub failed_instances: usize,
    pub checks: Vec<CheckSummary>,
    pub seconds: f64,
    /// First failing instance, enough to rebuild it without the generator.
    pub counterexample: Option<Value>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failed_instances == 0
    }

    pub fn check(&self, name: &str) -> Option<&CheckSummary> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub suites: Vec<SuiteReport>,
    pub passed_suites: usize,
    pub failed_suites: usize,
    /// Largest `J^i_j(pibar) - RHS` seen by the cost-bound suite (positive means the bound was exceeded).
    pub max_cost_bound_slack: Option<f64>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failed_suites == 0
    }
}

/// Accumulates residuals of one suite.
struct Tally {
    suite: Suite,
    checks: Vec<CheckSummary>,
    instances: usize,
    failed: usize,
    counterexample: Option<Value>,
    start: Instant,
}

impl Tally {
    fn new(suite: Suite, checks: &[(&str, f64)]) -> Self {
        Self {
            suite,
            checks: checks
                .iter()
                .map(|(name, tolerance)| CheckSummary {
                    name: name.to_string(),
                    worst: f64::NEG_INFINITY,
                    tolerance: *tolerance,
                    failures: 0,
                })
                .collect(),
            instances: 0,
            failed: 0,
            counterexample: None,
            start: Instant::now(),
        }
    }

    /// Records one instance; `residuals` follow the order of the checks. NaN fails.
    fn record(&mut self, residuals: &[f64], instance: impl FnOnce() -> Value) {
        self.instances += 1;
        let mut bad = false;
        for (check, &r) in self.checks.iter_mut().zip(residuals) {
            if r.is_nan() || r > check.worst {
                check.worst = if r.is_nan() { f64::NAN } else { r };
            }
            if r.is_nan() || r > check.tolerance {
                check.failures += 1;
                bad = true;
            }
        }
        if bad {
            self.failed += 1;
            if self.counterexample.is_none() {
                let mut value = instance();
                if let Value::Object(map) = &mut value {
                    map.insert("residuals".into(), json!(residuals));
                }
                self.counterexample = Some(value);
            }
        }
    }

    fn finish(self) -> SuiteReport {
        SuiteReport {
            suite: self.suite,
            instances: self.instances,
            failed_instances: self.failed,
            checks: self.checks,
            seconds: self.start.elapsed().as_secs_f64(),
            counterexample: self.counterexample,
        }
    }
}

fn suite_rng(config: &VerifyConfig, suite: Suite) -> SeededRng {
    derived_rng(config.seed, suite.as_str(), 0)
}

/// Random game with `n <= 3` agents, `|S| <= 6`, `|A^i| <= 3`.
fn small_game(rng: &mut SeededRng) -> Result<TabularCmg> {
    let n = rng.random_range(1..=3);
    let ns = rng.random_range(1..=6);
    let acts: Vec<usize> = (0..n).map(|_| rng.random_range(1..=3)).collect();
    random_tabular_cmg(ns, n, &acts, rng.random_range(1..=2), rng.random())
}

/// `Q^{subset}(s, a^{subset})` by explicit marginalisation over the remaining
/// agents, with `Q(s, a)` rebuilt by a one-step backup of `V`.
fn marginal_q(game: &TabularCmg, policy: &JointPolicy, v: &[f64], subset: &[usize], actions: &[usize], s: usize) -> f64 {
    let mut decoded = vec![0; game.n_agents()];
    let mut total = 0.0;
    for joint in 0..game.n_joint_actions() {
        game.decode_joint(joint, &mut decoded);
        if subset.iter().zip(actions).any(|(&i, &a)| decoded[i] != a) {
            continue;
        }
        let weight: f64 = (0..game.n_agents())
            .filter(|l| !subset.contains(l))
            .map(|l| policy.agent(l).prob(s, decoded[l]))
            .product();
        let backup: f64 = game.transition_row(s, joint).iter().zip(v).map(|(p, x)| p * x).sum();
        total += weight * (game.reward(s, joint) + game.discount() * backup);
    }
    total
}

/// Every ordered non-empty subset of `0..n`.
fn ordered_subsets(n: usize) -> Vec<Vec<usize>> {
    fn extend(n: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for i in 0..n {
            if prefix.contains(&i) {
                continue;
            }
            prefix.push(i);
            out.push(prefix.clone());
            extend(n, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    extend(n, &mut Vec::new(), &mut out);
    out
}

/// Enumerates every assignment of actions to `agents`.
fn action_tuples(game: &TabularCmg, agents: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &i in agents {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..game.action_count(i)).map(move |a| {
                    let mut t = prefix.clone();
                    t.push(a);
                    t
                })
            })
            .collect();
    }
    out
}

/// `A^{i_{1:m}}(s, a^{i_{1:m}}) = sum_h A^{i_h}(s, a^{i_{1:h-1}}, a^{i_h})` for
/// every state, ordered subset and action tuple. The left side is an
/// independent marginalisation; the terms come from the library.
fn decomposition(config: &VerifyConfig) -> Result<SuiteReport> {
    let mut rng = suite_rng(config, Suite::Decomposition);
    let mut tally = Tally::new(Suite::Decomposition, &[("residual", 1e-10)]);
    let bias = if config.fault == Some(Fault::PerturbedDecomposition) { 1e-6 } else { 0.0 };
    for _ in 0..config.decomposition_games {
        let game = small_game(&mut rng)?;
        let policy = JointPolicy::random(&game, 1.0, &mut rng);
        let values: ValueTables = exact_values(&game, &policy)?;
        let mut worst: f64 = 0.0;
        let mut witness = None;
        for s in 0..game.n_states() {
            let baseline = marginal_q(&game, &policy, &values.v, &[], &[], s);
            for order in ordered_subsets(game.n_agents()) {
                for acts in action_tuples(&game, &order) {
                    let whole = marginal_q(&game, &policy, &values.v, &order, &acts, s) - baseline;
                    let mut sum = bias;
                    for h in 0..order.len() {
                        sum += multi_agent_advantage(
                            &game,
                            &policy,
                            &values,
                            &order[..h],
                            &acts[..h],
                            &order[h..=h],
                            &acts[h..=h],
                            s,
                        )?;
                    }
                    let r = (whole - sum).abs();
                    if r.is_nan() || r > worst {
                        worst = r;
                        witness = Some((s, order.clone(), acts.clone(), whole, sum));
                    }
                }
            }
        }
        tally.record(&[worst], || {
            let (s, order, acts, whole, sum) = witness.unwrap_or_default();
            json!({ "game": game, "policy": policy, "state": s, "order": order, "actions": acts,
                    "joint_advantage": whole, "sum_of_terms": sum })
        });
    }
    Ok(tally.finish())
}

/// `J^i_j(pibar) <= J^i_j(pi) + L^i_{j,pi}(pibar^i) + nu^i_j sum_h D^max_KL(pi^h, pibar^h)`
/// with both sides evaluated exactly. Half of the pairs are independent random
/// policies and half are local perturbations of every agent.
fn cost_bound(config: &VerifyConfig) -> Result<SuiteReport> {
    let mut rng = suite_rng(config, Suite::CostBound);
    let mut tally = Tally::new(Suite::CostBound, &[("bound_excess", 1e-8)]);
    for t in 0..config.cost_bound_triples {
        let game = small_game(&mut rng)?;
        let pi = JointPolicy::random(&game, 1.0, &mut rng);
        let pibar = if t % 2 == 0 {
            JointPolicy::random(&game, 1.0, &mut rng)
        } else {
            let scale = 10f64.powf(rng.random_range(-3.0..0.0));
            JointPolicy::new(pi.agents().iter().map(|p| p.perturbed(scale, &mut rng)).collect())?
        };
        let ev = PolicyEvaluation::new(&game, &pi)?;
        let evb = PolicyEvaluation::new(&game, &pibar)?;
        let factor = 4.0 * game.discount() / (1.0 - game.discount()).powi(2);
        let kl_sum = (0..game.n_agents())
            .map(|h| max_kl(pi.agent(h), pibar.agent(h)))
            .sum::<Result<f64>>()?;
        let mut worst = f64::NEG_INFINITY;
        let mut witness = (0, 0, 0.0, 0.0);
        for i in 0..game.n_agents() {
            for j in 0..game.n_costs(i) {
                let nu = factor * ev.values.max_abs_cost_advantage(&game, i, j);
                let l = surrogate_cost(&game, &ev.values, &ev.occupancy, i, j, pibar.agent(i))?;
                let rhs = ev.expected_costs[i][j] + l + nu * kl_sum;
                let excess = evb.expected_costs[i][j] - rhs;
                if excess > worst {
                    worst = excess;
                    witness = (i, j, evb.expected_costs[i][j], rhs);
                }
            }
        }
        tally.record(&[worst], || {
            json!({ "game": game, "pi": pi, "pibar": pibar, "agent": witness.0, "constraint": witness.1,
                    "cost_after": witness.2, "bound": witness.3 })
        });
    }
    Ok(tally.finish())
}

/// Safe policy iteration from feasible starts: the return never drops and
/// every iterate satisfies every bound.
fn improvement(config: &VerifyConfig) -> Result<SuiteReport> {
    let mut rng = suite_rng(config, Suite::Improvement);
    let mut tally = Tally::new(Suite::Improvement, &[("return_drop", 1e-9), ("constraint_violation", 1e-9)]);
    let solver = SafeIterationConfig::default();
    for _ in 0..config.improvement_games {
        let n = rng.random_range(1..=3);
        let acts: Vec<usize> = (0..n).map(|_| rng.random_range(2..=3)).collect();
        let game = random_tabular_cmg(rng.random_range(2..=5), n, &acts, 2, rng.random())?;
        let start = JointPolicy::random(&game, 1.0, &mut rng);
        let ev = PolicyEvaluation::new(&game, &start)?;
        let slack = rng.random_range(0.05..0.3);
        let bounds = ev.expected_costs.iter().map(|row| row.iter().map(|j| j + slack).collect()).collect();
        let game = game.with_bounds(bounds)?;
        let perm_seed: u64 = rng.random();
        let mut perm_rng = crate::rng::seeded_rng(perm_seed);
        let run = safe_iteration(&game, &start, config.improvement_iterations, &solver, &mut perm_rng)?;
        let check = check_guarantees(&game, &run.certificates);
        let (drop, violation) = match check.first_feasible {
            Some(0) => (check.max_return_drop, check.max_violation),
            _ => (f64::NAN, f64::NAN),
        };
        tally.record(&[drop, violation], || {
            json!({ "game": game, "start": start, "permutation_seed": perm_seed,
                    "iterations": config.improvement_iterations, "certificates": run.certificates })
        });
    }
    Ok(tally.finish())
}

fn random_spd(rng: &mut SeededRng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1
}

fn normal_vec(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Brute-force maximiser of `g^T x` s.t. `b^T x + d <= 0`, `x^T H x / 2 <= delta`.
///
/// In whitened coordinates `y = L^T x` the optimum lies on the sphere
/// `|y|^2 = 2 delta` inside the plane spanned by `g` and `b`, so a dense scan of
/// the circle's angle, refined by bisection on the constraint boundary and a
/// golden-section search, finds it without any duality argument.
pub fn angle_scan_oracle(h: &DMatrix<f64>, g: &[f64], b: &[f64], d: f64, delta: f64) -> Option<Vec<f64>> {
    let chol = h.clone().cholesky()?;
    let l = chol.l();
    let gt = l.solve_lower_triangular(&DVector::from_column_slice(g))?;
    let bt = l.solve_lower_triangular(&DVector::from_column_slice(b))?;
    let gn = gt.norm();
    if gn == 0.0 {
        return None;
    }
    let u = &gt / gn;
    let mut w = &bt - &u * bt.dot(&u);
    if w.norm() < 1e-14 * bt.norm().max(1.0) {
        // any unit vector orthogonal to u
        let k = (0..u.len()).min_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs())).unwrap_or(0);
        w = DVector::zeros(u.len());
        w[k] = 1.0;
        w -= &u * u[k];
    }
    let w = w.normalize();
    let (bu, bw) = (bt.dot(&u), bt.dot(&w));
    let radius = (2.0 * delta).sqrt();
    let feasible = |t: f64| radius * (bu * t.cos() + bw * t.sin()) + d <= 0.0;
    // cos t on (-pi, pi] is decreasing in |t|; -|t| ranks angles the same way without the flat top
    let objective = |t: f64| -t.abs();
    const GRID: usize = 100_000;
    let step = std::f64::consts::TAU / GRID as f64;
    let best = (0..GRID)
        .map(|k| k as f64 * step - std::f64::consts::PI)
        .filter(|&t| feasible(t))
        .max_by(|a, b| objective(*a).total_cmp(&objective(*b)))?;
    // shrink [best - step, best + step] to its feasible part
    let boundary = |inside: f64, outside: f64| {
        let (mut a, mut c) = (inside, outside);
        for _ in 0..80 {
            let m = 0.5 * (a + c);
            if feasible(m) {
                a = m;
            } else {
                c = m;
            }
        }
        a
    };
    let lo = if feasible(best - step) { best - step } else { boundary(best, best - step) };
    let hi = if feasible(best + step) { best + step } else { boundary(best, best + step) };
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut c) = (lo, hi);
    for _ in 0..200 {
        let x1 = c - phi * (c - a);
        let x2 = a + phi * (c - a);
        if objective(x1) < objective(x2) {
            a = x1;
        } else {
            c = x2;
        }
    }
    let t = 0.5 * (a + c);
    let t = [lo, hi, t].into_iter().max_by(|a, b| objective(*a).total_cmp(&objective(*b)))?;
    let y = (&u * t.cos() + &w * t.sin()) * radius;
    let x = l.transpose().solve_upper_triangular(&y)?;
    Some(x.as_slice().to_vec())
}

/// Single-constraint LQCLPs of dimension 3 to 10 against the angle scan.
fn lqclp(config: &VerifyConfig) -> Result<SuiteReport> {
    let mut rng = suite_rng(config, Suite::Lqclp);
    let mut tally = Tally::new(
        Suite::Lqclp,
        &[("objective_error", 1e-4), ("step_error", 1e-3), ("weak_duality", 1e-6)],
    );
    let solver = SolverConfig {
        cg_iters: 200,
        cg_tol: 1e-14,
        ..SolverConfig::default()
    };
    for _ in 0..config.lqclp_instances {
        let n = rng.random_range(3..=10);
        let h = random_spd(&mut rng, n);
        let g = normal_vec(&mut rng, n);
        let b = normal_vec(&mut rng, n);
        let delta = 10f64.powf(rng.random_range(-2.0..0.0));
        let hinv = h.clone().try_inverse().ok_or_else(|| Error::Degenerate("singular test matrix".into()))?;
        let bv = DVector::from_column_slice(&b);
        let s = bv.dot(&(&hinv * &bv));
        // offsets from well inside to just short of the strictly feasible limit
        let d = rng.random_range(-2.0..0.9) * (2.0 * delta * s).sqrt();
        let dense = DenseLqclp {
            problem: LqclpProblem {
                g: g.clone(),
                b: vec![b.clone()],
                d: vec![d],
                delta,
            },
            h: h.transpose().as_slice().to_vec(),
        };
        let residuals = match (dense.solve(&solver), angle_scan_oracle(&h, &g, &b, d, delta)) {
            (Ok(sol), Some(oracle)) => {
                let objective_error = (sol.objective - dot(&g, &oracle)).abs();
                let step_error = sol.x.iter().zip(&oracle).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let duality = sol.dual.as_ref().map_or(f64::NAN, |dual| sol.objective - dual.dual_value);
                [objective_error, step_error, duality]
            }
            _ => [f64::NAN; 3],
        };
        tally.record(&residuals, || json!({ "instance": dense }));
    }
    Ok(tally.finish())
}

/// Conjugate gradient against a dense LU solve on 50x50 SPD systems.
fn conjugate_gradient_suite(config: &VerifyConfig) -> Result<SuiteReport> {
    let mut rng = suite_rng(config, Suite::ConjugateGradient);
    let mut tally = Tally::new(Suite::ConjugateGradient, &[("residual", 1e-8), ("distance_to_lu", 1e-8)]);
    for _ in 0..config.cg_systems {
        let h = random_spd(&mut rng, 50);
        let rhs = normal_vec(&mut rng, 50);
        let rhs_v = DVector::from_column_slice(&rhs);
        let residuals = match conjugate_gradient(|v| Ok((&h * DVector::from_column_slice(v)).as_slice().to_vec()), &rhs, 500, 1e-14) {
            Ok(sol) => {
                let x = DVector::from_column_slice(&sol.x);
                let lu = h.clone().lu().solve(&rhs_v).unwrap_or_else(|| DVector::from_element(50, f64::NAN));
                [(&h * &x - &rhs_v).norm(), (x - lu).norm()]
            }
            Err(_) => [f64::NAN; 2],
        };
        tally.record(&residuals, || json!({ "h": h.as_slice(), "rhs": rhs }));
    }
    Ok(tally.finish())
}

fn random_net(rng: &mut SeededRng, gaussian: bool) -> Result<(PolicyNet, Vec<f64>)> {
    let obs_dim = rng.random_range(2..6);
    let net = if gaussian {
        let act_dim = rng.random_range(1..4);
        let mut p = PolicyNet::gaussian(obs_dim, act_dim, 16, 1.0, 1.0, 0.5, rng)?;
        let params: Vec<f64> = p.params().iter().map(|x| x + 0.3 * rng.random_range(-1.0..1.0)).collect();
        p.set_params(&params)?;
        p
    } else {
        PolicyNet::categorical(obs_dim, rng.random_range(2..6), 16, 1.0, rng)
    };
    let obs = (0..obs_dim * 12).map(|_| rng.random_range(-2.0..2.0)).collect();
    Ok((net, obs))
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = dot(a, a).sqrt().max(dot(b, b).sqrt());
    diff / scale.max(1e-12)
}

/// True when a hidden pre-activation changes sign across the stencil, so that
/// central differences straddle a ReLU kink.
fn crosses_kink(p: &PolicyNet, obs: &[f64], v: &[f64], h: f64) -> Result<bool> {
    let plus = p.stepped(v, h)?;
    let minus = p.stepped(v, -h)?;
    Ok(obs.chunks(p.obs_dim()).any(|o| {
        let a = plus.mlp().forward_cache(o).pre;
        let b = minus.mlp().forward_cache(o).pre;
        let c = p.mlp().forward_cache(o).pre;
        a.iter().zip(&b).zip(&c).any(|((x, y), z)| x.signum() != z.signum() || y.signum() != z.signum())
    }))
}

/// Score gradients and KL Hessian-vector products against central differences,
/// and the zero mean of the score under the policy.
fn gradients(config: &VerifyConfig) -> Result<SuiteReport> {
    let mut rng = suite_rng(config, Suite::Gradients);
    let mut tally = Tally::new(
        Suite::Gradients,
        &[("score_relative_error", 1e-4), ("kl_hvp_relative_error", 1e-3), ("score_mean_sigmas", 3.0)],
    );
    for k in 0..config.gradient_nets {
        let (p, mut obs) = random_net(&mut rng, k % 2 == 0)?;
        let base = p.params();
        let h = 1e-5;
        let unit = |k: usize| {
            let mut v = vec![0.0; base.len()];
            v[k] = 1.0;
            v
        };
        let mut o = obs[..p.obs_dim()].to_vec();
        while (0..base.len()).map(|k| crosses_kink(&p, &o, &unit(k), h)).collect::<Result<Vec<_>>>()?.contains(&true) {
            o.iter_mut().for_each(|x| *x = rng.random_range(-2.0..2.0));
        }
        let action = p.sample(&o, &mut rng)?;
        let analytic = p.grad_log_prob(&o, &action)?;
        let numeric = (0..base.len())
            .map(|k| {
                let mut v = vec![0.0; base.len()];
                v[k] = h;
                Ok((p.stepped(&v, 1.0)?.log_prob(&o, &action)? - p.stepped(&v, -1.0)?.log_prob(&o, &action)?) / (2.0 * h))
            })
            .collect::<Result<Vec<f64>>>()?;
        let score_err = relative_error(&analytic, &numeric);

        let v: Vec<f64> = (0..p.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = 1e-4;
        while crosses_kink(&p, &obs, &v, h)? {
            obs.iter_mut().for_each(|x| *x = rng.random_range(-2.0..2.0));
        }
        let hvp = p.kl_hessian_vector_product(&obs, &v, 0.0)?;
        let gp = PolicyNet::mean_kl_grad(&p, &p.stepped(&v, h)?, &obs)?;
        let gm = PolicyNet::mean_kl_grad(&p, &p.stepped(&v, -h)?, &obs)?;
        let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let hvp_err = relative_error(&hvp, &fd);

        // the score projected on a random direction has mean zero
        let sigmas = if k < 2 {
            let dir: Vec<f64> = (0..p.n_params()).map(|_| rng.sample(StandardNormal)).collect();
            let (mut sum, mut sq) = (0.0, 0.0);
            for _ in 0..config.score_samples {
                let a = p.sample(&o, &mut rng)?;
                let x = dot(&p.grad_log_prob(&o, &a)?, &dir);
                sum += x;
                sq += x * x;
            }
            let n = config.score_samples as f64;
            let mean = sum / n;
            let se = ((sq / n - mean * mean) / n).sqrt();
            if se > 0.0 { mean.abs() / se } else { 0.0 }
        } else {
            0.0
        };
        tally.record(&[score_err, hvp_err, sigmas], || json!({ "net": p, "obs": obs, "action": action }));
    }
    Ok(tally.finish())
}

/// Direct summation of discounted TD errors up to the end of each segment.
pub fn brute_force_gae(values: &[f64], next_values: &[f64], rewards: &[f64], ends: &[Boundary], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let delta: Vec<f64> = (0..n)
        .map(|t| {
            let boot = if ends[t] == Boundary::Terminal { 0.0 } else { next_values[t] };
            rewards[t] + gamma * boot - values[t]
        })
        .collect();
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            let mut weight = 1.0;
            for u in t..n {
                total += weight * delta[u];
                if ends[u] != Boundary::Continue {
                    break;
                }
                weight *= gamma * lambda;
            }
            total
        })
        .collect()
}

fn gae_suite(config: &VerifyConfig) -> Result<SuiteReport> {
    let mut rng = suite_rng(config, Suite::Gae);
    let mut tally = Tally::new(Suite::Gae, &[("max_abs_error", 1e-10)]);
    for _ in 0..config.gae_episodes {
        let n = rng.random_range(1..=60);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut ends = Vec::with_capacity(n);
        let mut next_values = Vec::with_capacity(n);
        for t in 0..n {
            let end = match rng.random_range(0..10) {
                0 => Boundary::Terminal,
                1 => Boundary::Truncated,
                _ if t + 1 == n => Boundary::Truncated,
                _ => Boundary::Continue,
            };
            next_values.push(if end == Boundary::Continue { values[t + 1] } else { rng.random_range(-3.0..3.0) });
            ends.push(end);
        }
        let (gamma, lambda) = (0.99, 0.95);
        let err = match gae(&values, &next_values, &rewards, &ends, gamma, lambda) {
            Ok(fast) => {
                let slow = brute_force_gae(&values, &next_values, &rewards, &ends, gamma, lambda);
                fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            }
            Err(_) => f64::NAN,
        };
        tally.record(&[err], || {
            json!({ "values": values, "next_values": next_values, "rewards": rewards, "ends": ends,
                    "gamma": gamma, "lambda": lambda })
        });
    }
    Ok(tally.finish())
}

pub fn run_suite(suite: Suite, config: &VerifyConfig) -> Result<SuiteReport> {
    match suite {
        Suite::Decomposition => decomposition(config),
        Suite::CostBound => cost_bound(config),
        Suite::Improvement => improvement(config),
        Suite::Lqclp => lqclp(config),
        Suite::ConjugateGradient => conjugate_gradient_suite(config),
        Suite::Gradients => gradients(config),
        Suite::Gae => gae_suite(config),
    }
}

/// Runs `suites` (all when empty) and assembles the report.
pub fn verify(suites: &[Suite], config: &VerifyConfig) -> Result<VerifyReport> {
    let selected: Vec<Suite> = if suites.is_empty() { Suite::ALL.to_vec() } else { suites.to_vec() };
    let reports = selected.iter().map(|&s| run_suite(s, config)).collect::<Result<Vec<_>>>()?;
    let failed = reports.iter().filter(|r| !r.passed()).count();
    let max_cost_bound_slack = reports
        .iter()
        .find(|r| r.suite == Suite::CostBound)
        .and_then(|r| r.check("bound_excess"))
        .map(|c| c.worst);
    Ok(VerifyReport {
        config: config.clone(),
        passed_suites: reports.len() - failed,
        failed_suites: failed,
        suites: reports,
        max_cost_bound_slack,
    })
}
