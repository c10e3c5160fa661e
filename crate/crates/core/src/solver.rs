//! Constrained trust-region updates: conjugate gradient, the LQCLP dual,
//! primal reconstruction, backtracking line search and the recovery step.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::tolerance;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Result of a conjugate-gradient solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Norm of the recursively updated residual.
    pub residual_norm: f64,
    pub converged: bool,
}

/// Solves `H x = rhs` with a Hessian-vector oracle. Stops once the residual norm
/// is at most `tol * |rhs|` or after `iters` iterations (then `converged` is false).
pub fn conjugate_gradient<F>(mut hvp: F, rhs: &[f64], iters: usize, tol: f64) -> Result<CgSolution>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    ensure_finite(rhs, "conjugate gradient right-hand side")?;
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = tol * rr.sqrt();
    if rr.sqrt() <= target || rr == 0.0 {
        return Ok(CgSolution {
            x,
            iterations: 0,
            residual_norm: rr.sqrt(),
            converged: true,
        });
    }
    for k in 0..iters {
        let hp = hvp(&p)?;
        ensure_len(hp.len(), n, "conjugate gradient product")?;
        let php = dot(&p, &hp);
        if !php.is_finite() || !rr.is_finite() {
            return Err(Error::NonFinite("conjugate gradient (poisoned solve)".into()));
        }
        if php <= 0.0 {
            return Err(Error::Degenerate(format!("conjugate gradient curvature {php} is not positive")));
        }
        let alpha = rr / php;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * hp[i];
        }
        let rr_new = dot(&r, &r);
        if !rr_new.is_finite() {
            return Err(Error::NonFinite("conjugate gradient residual (poisoned solve)".into()));
        }
        if rr_new.sqrt() <= target {
            return Ok(CgSolution {
                x,
                iterations: k + 1,
                residual_norm: rr_new.sqrt(),
                converged: true,
            });
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Ok(CgSolution {
        x,
        iterations: iters,
        residual_norm: rr.sqrt(),
        converged: false,
    })
}

/// Dual optimum of an LQCLP. `q`, `r`, `s` are the H⁻¹ inner products of the
/// objective and constraint gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub lambda: f64,
    pub nu: Vec<f64>,
    pub q: f64,
    pub r: Vec<f64>,
    /// Row-major m×m.
    pub s: Vec<f64>,
    /// Constraint offsets the dual was solved for.
    pub offsets: Vec<f64>,
    /// Dual objective at the optimum, in the convention of the solver that produced it.
    pub dual_value: f64,
    /// True unless an iterative solve hit its cap.
    pub converged: bool,
}

/// Which branch of the single-constraint dual was selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DualCase {
    /// The trust region lies inside the constraint half-space; ν* = 0.
    TrustRegionOnly,
    /// Both branches were compared.
    Compared,
}

fn proj(x: f64, lo: f64, hi: f64) -> f64 {
    lo.max(hi.min(x))
}

/// Analytic solution of `min gᵀx s.t. bᵀx + c ≤ 0, xᵀHx ≤ δ` from the scalars
/// q = gᵀH⁻¹g, r = gᵀH⁻¹b, s = bᵀH⁻¹b. The primal optimum is
/// `x* = −(1/λ*) H⁻¹ (g + ν* b)`.
pub fn solve_lqclp_single(q: f64, r: f64, s: f64, c: f64, delta: f64) -> Result<(DualSolution, DualCase)> {
    for (v, name) in [(q, "q"), (r, "r"), (s, "s"), (c, "c"), (delta, "delta")] {
        if v.is_nan() {
            return Err(Error::NonFinite(format!("lqclp scalar {name}")));
        }
    }
    if q < 0.0 || s <= 0.0 || delta <= 0.0 {
        return Err(Error::InvalidInput(format!("lqclp needs q ≥ 0, s > 0, δ > 0 (got q={q}, s={s}, δ={delta})")));
    }
    let plane = c * c / s - delta;
    let borderline = plane.abs() < tolerance::LQCLP_BORDERLINE;
    if c > 0.0 && plane > 0.0 && !borderline {
        return Err(Error::RecoveryRequired);
    }
    let f_b = |lam: f64| -0.5 * (q / lam + lam * delta);
    if c < 0.0 && plane > 0.0 && !borderline {
        let lambda = (q / delta).sqrt();
        return Ok((
            DualSolution {
                lambda,
                nu: vec![0.0],
                q,
                r: vec![r],
                s: vec![s],
                offsets: vec![c],
                dual_value: f_b(lambda),
                converged: true,
            },
            DualCase::TrustRegionOnly,
        ));
    }
    // Λ_a = {λ ≥ 0 : λc − r > 0}, Λ_b its complement in [0, ∞)
    let (la, lb) = if c < 0.0 {
        ((0.0, r / c), (r / c, f64::INFINITY))
    } else if c > 0.0 {
        ((r / c, f64::INFINITY), (0.0, r / c))
    } else if r < 0.0 {
        ((0.0, f64::INFINITY), (f64::NAN, f64::NAN))
    } else {
        ((f64::NAN, f64::NAN), (0.0, f64::INFINITY))
    };
    let la = (la.0.max(0.0), la.1);
    let lb = (lb.0.max(0.0), lb.1);
    let a_coef = (q - r * r / s).max(0.0);
    let b_coef = (delta - c * c / s).max(0.0);
    let f_a = |lam: f64| {
        if lam.is_infinite() {
            // limit as λ → ∞ with δ = c²/s
            return -r * c / s - if b_coef > 0.0 { f64::INFINITY } else { 0.0 };
        }
        -0.5 * (a_coef / lam + b_coef * lam) - r * c / s
    };
    let mut best: Option<(f64, f64)> = None;
    if !la.0.is_nan() && la.0 <= la.1 {
        let raw = if b_coef > 0.0 { (a_coef / b_coef).sqrt() } else { f64::INFINITY };
        let lam = proj(raw, la.0, la.1);
        if lam > 0.0 {
            best = Some((lam, f_a(lam)));
        }
    }
    if !lb.0.is_nan() && lb.0 <= lb.1 {
        let lam = proj((q / delta).sqrt(), lb.0, lb.1);
        if lam > 0.0 {
            let v = f_b(lam);
            if best.is_none_or(|(_, fa)| v >= fa) {
                best = Some((lam, v));
            }
        }
    }
    let (lambda, dual_value) = best.ok_or_else(|| Error::DegenerateDual(format!("no positive multiplier (q={q}, r={r}, s={s}, c={c})")))?;
    let nu = if lambda.is_infinite() {
        f64::INFINITY
    } else {
        ((lambda * c - r) / s).max(0.0)
    };
    Ok((
        DualSolution {
            lambda,
            nu: vec![nu],
            q,
            r: vec![r],
            s: vec![s],
            offsets: vec![c],
            dual_value,
            converged: true,
        },
        DualCase::Compared,
    ))
}

/// Linearised constrained update in the maximisation convention:
/// `max gᵀx s.t. b_jᵀx + d_j ≤ 0, ½xᵀHx ≤ δ`, with H available through products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqclpProblem {
    pub g: Vec<f64>,
    pub b: Vec<Vec<f64>>,
    /// Constraint offsets J_j − c_j; positive means currently violating.
    pub d: Vec<f64>,
    pub delta: f64,
}

impl LqclpProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::InvalidInput(format!("trust region radius {} must be positive", self.delta)));
        }
        ensure_len(self.d.len(), self.b.len(), "lqclp offsets")?;
        ensure_finite(&self.g, "lqclp objective gradient")?;
        for b in &self.b {
            ensure_len(b.len(), self.g.len(), "lqclp constraint gradient")?;
            ensure_finite(b, "lqclp constraint gradient")?;
        }
        if self.d.iter().any(|d| d.is_nan()) {
            return Err(Error::NonFinite("lqclp offsets".into()));
        }
        Ok(())
    }
}

/// Settings for the iterative pieces of the solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub dual_iters: usize,
    pub dual_tol: f64,
    /// Use projected-gradient dual ascent when there is more than one active constraint.
    pub multi_constraint: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            cg_iters: 10,
            cg_tol: 1e-10,
            dual_iters: 10_000,
            dual_tol: 1e-6,
            multi_constraint: false,
        }
    }
}

/// H⁻¹ products and inner products shared by the dual and primal steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioned {
    pub hinv_g: Vec<f64>,
    pub hinv_b: Vec<Vec<f64>>,
    pub q: f64,
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    pub cg_converged: bool,
}

impl Preconditioned {
    pub fn compute<F>(problem: &LqclpProblem, mut hvp: F, config: &SolverConfig) -> Result<Self>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        problem.validate()?;
        let sol = conjugate_gradient(&mut hvp, &problem.g, config.cg_iters, config.cg_tol)?;
        let mut converged = sol.converged;
        let hinv_g = sol.x;
        let mut hinv_b = Vec::with_capacity(problem.b.len());
        for b in &problem.b {
            let sol = conjugate_gradient(&mut hvp, b, config.cg_iters, config.cg_tol)?;
            converged &= sol.converged;
            hinv_b.push(sol.x);
        }
        let m = problem.b.len();
        let q = dot(&problem.g, &hinv_g);
        let r = hinv_b.iter().map(|hb| dot(&problem.g, hb)).collect();
        let mut s = vec![0.0; m * m];
        for j in 0..m {
            for k in 0..m {
                s[j * m + k] = dot(&problem.b[j], &hinv_b[k]);
            }
        }
        Ok(Self {
            hinv_g,
            hinv_b,
            q,
            r,
            s,
            cg_converged: converged,
        })
    }
}

/// Threshold below which a constraint gradient is treated as zero.
const NEGLIGIBLE_CURVATURE: f64 = 1e-300;

/// Solves the dual of a problem in the maximisation convention.
///
/// Constraints with a zero gradient are dropped when satisfied and make the
/// problem infeasible otherwise; a single remaining constraint uses the analytic
/// solution, several use dual ascent when enabled.
pub fn solve_dual(problem: &LqclpProblem, pre: &Preconditioned, config: &SolverConfig) -> Result<DualSolution> {
    let m = problem.b.len();
    let mut active = Vec::new();
    for j in 0..m {
        let s_jj = pre.s[j * m + j];
        if s_jj > NEGLIGIBLE_CURVATURE {
            active.push(j);
        } else if problem.d[j] > 0.0 {
            return Err(Error::RecoveryRequired);
        }
    }
    if problem.d.iter().any(|d| *d == f64::INFINITY) {
        return Err(Error::RecoveryRequired);
    }
    let trust_only = |pre: &Preconditioned| -> Result<DualSolution> {
        if pre.q <= 0.0 {
            return Err(Error::DegenerateDual("objective gradient is zero".into()));
        }
        let lambda = (pre.q / (2.0 * problem.delta)).sqrt();
        Ok(DualSolution {
            lambda,
            nu: vec![0.0; m],
            q: pre.q,
            r: pre.r.clone(),
            s: pre.s.clone(),
            offsets: problem.d.clone(),
            dual_value: pre.q / (2.0 * lambda) + lambda * problem.delta,
            converged: true,
        })
    };
    match active.len() {
        0 => trust_only(pre),
        1 => {
            let j = active[0];
            // maximisation with ½xᵀHx ≤ δ is the minimisation of −gᵀx with xᵀHx ≤ 2δ
            let (single, _) = solve_lqclp_single(pre.q, -pre.r[j], pre.s[j * m + j], problem.d[j], 2.0 * problem.delta)?;
            let mut nu = vec![0.0; m];
            nu[j] = single.nu[0];
            Ok(DualSolution {
                lambda: single.lambda,
                nu,
                q: pre.q,
                r: pre.r.clone(),
                s: pre.s.clone(),
                offsets: problem.d.clone(),
                dual_value: -single.dual_value,
                converged: true,
            })
        }
        _ if !config.multi_constraint => Err(Error::Config(format!(
            "{} active constraints need the multi-constraint solver to be enabled",
            active.len()
        ))),
        _ => solve_dual_multi(problem, pre, &active, config),
    }
}

/// Projected-gradient minimisation of the λ-eliminated dual
/// `D(ν) = √(2δ Q(ν)) − νᵀd`, `Q(ν) = q − 2rᵀν + νᵀSν`, over ν ⪰ 0.
fn solve_dual_multi(problem: &LqclpProblem, pre: &Preconditioned, active: &[usize], config: &SolverConfig) -> Result<DualSolution> {
    let m = problem.b.len();
    for &j in active {
        let s = pre.s[j * m + j];
        let c = problem.d[j];
        if c > 0.0 && c * c / s - 2.0 * problem.delta > tolerance::LQCLP_BORDERLINE {
            return Err(Error::RecoveryRequired);
        }
    }
    let k = active.len();
    let quad = |nu: &[f64]| -> f64 {
        let mut v = pre.q;
        for a in 0..k {
            let ja = active[a];
            v -= 2.0 * pre.r[ja] * nu[a];
            for b in 0..k {
                v += nu[a] * pre.s[ja * m + active[b]] * nu[b];
            }
        }
        v.max(0.0)
    };
    let dual = |nu: &[f64]| -> f64 {
        let lin: f64 = (0..k).map(|a| nu[a] * problem.d[active[a]]).sum();
        (2.0 * problem.delta * quad(nu)).sqrt() - lin
    };
    let grad = |nu: &[f64]| -> Vec<f64> {
        let qv = quad(nu).max(1e-300);
        let scale = (2.0 * problem.delta / qv).sqrt();
        (0..k)
            .map(|a| {
                let ja = active[a];
                let snu: f64 = (0..k).map(|b| pre.s[ja * m + active[b]] * nu[b]).sum();
                scale * (snu - pre.r[ja]) - problem.d[ja]
            })
            .collect()
    };
    let projected_norm = |nu: &[f64], g: &[f64]| -> f64 {
        nu.iter()
            .zip(g)
            .map(|(n, g)| if *n <= 0.0 && *g > 0.0 { 0.0 } else { g * g })
            .sum::<f64>()
            .sqrt()
    };
    let mut nu = vec![0.0; k];
    let mut value = dual(&nu);
    let mut step = 1.0;
    let mut converged = false;
    for _ in 0..config.dual_iters {
        let g = grad(&nu);
        if projected_norm(&nu, &g) < config.dual_tol {
            converged = true;
            break;
        }
        step *= 2.0;
        loop {
            let cand: Vec<f64> = nu.iter().zip(&g).map(|(n, g)| (n - step * g).max(0.0)).collect();
            let cv = dual(&cand);
            let moved: f64 = cand.iter().zip(&nu).map(|(a, b)| (a - b) * (a - b)).sum();
            let decrease: f64 = g.iter().zip(cand.iter().zip(&nu)).map(|(g, (a, b))| g * (a - b)).sum();
            if cv <= value + 0.5 * decrease || moved == 0.0 {
                nu = cand;
                value = cv;
                break;
            }
            step *= 0.5;
            if step < 1e-300 {
                break;
            }
        }
        if nu.iter().any(|n| *n > 1e12) {
            return Err(Error::RecoveryRequired);
        }
    }
    let qv = quad(&nu);
    if qv <= 0.0 {
        return Err(Error::DegenerateDual("objective lies in the span of the constraint gradients".into()));
    }
    let lambda = (qv / (2.0 * problem.delta)).sqrt();
    let mut full = vec![0.0; m];
    for (a, &j) in active.iter().enumerate() {
        full[j] = nu[a];
    }
    Ok(DualSolution {
        lambda,
        nu: full,
        q: pre.q,
        r: pre.r.clone(),
        s: pre.s.clone(),
        offsets: problem.d.clone(),
        dual_value: value,
        converged,
    })
}

/// `x = (1/λ) H⁻¹ (g − B ν)` in the maximisation convention.
pub fn primal_step(dual: &DualSolution, pre: &Preconditioned) -> Result<Vec<f64>> {
    if !(dual.lambda > 0.0) {
        return Err(Error::DegenerateDual(format!("multiplier λ = {}", dual.lambda)));
    }
    let m = dual.nu.len();
    if dual.lambda.is_infinite() {
        // the constraint plane is tangent to the trust region: x = −(d/s) H⁻¹b
        let j = dual
            .nu
            .iter()
            .position(|n| n.is_infinite())
            .ok_or_else(|| Error::DegenerateDual("unbounded λ without an unbounded ν".into()))?;
        let ratio = dual.offsets[j] / dual.s[j * m + j];
        return Ok(pre.hinv_b[j].iter().map(|h| -ratio * h).collect());
    }
    let mut x = pre.hinv_g.clone();
    for (nu, hb) in dual.nu.iter().zip(&pre.hinv_b) {
        if *nu != 0.0 {
            for (xi, h) in x.iter_mut().zip(hb) {
                *xi -= nu * h;
            }
        }
    }
    for xi in x.iter_mut() {
        *xi /= dual.lambda;
    }
    ensure_finite(&x, "primal step")?;
    Ok(x)
}

/// What the update ended up doing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepMode {
    Optimize,
    Recover,
    Reject,
}

impl StepMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StepMode::Optimize => "optimize",
            StepMode::Recover => "recover",
            StepMode::Reject => "reject",
        }
    }
}

/// A proposed direction and what the line search accepted from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustRegionStep {
    pub direction: Vec<f64>,
    /// Accepted parameter change (zero when rejected).
    pub step: Vec<f64>,
    /// Backtracking exponent j of the accepted step.
    pub exponent: Option<usize>,
    pub mode: StepMode,
}

/// Sampled quantities at a candidate step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub improvement: f64,
    pub kl: f64,
    /// Whether every sampled constraint estimate is within its bound.
    pub constraints_ok: bool,
    /// When false the candidate is accepted without objective improvement
    /// (used while the current policy is infeasible).
    pub require_improvement: bool,
}

/// Backtracking schedule: candidate j scales the direction by `initial_scale · ratio^j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearchConfig {
    pub max_backtracks: usize,
    pub ratio: f64,
    pub initial_scale: f64,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            max_backtracks: 10,
            ratio: 0.5,
            initial_scale: 0.27,
        }
    }
}

impl LineSearchConfig {
    pub fn scale(&self, j: usize) -> f64 {
        self.initial_scale * self.ratio.powi(j as i32)
    }
}

/// Tries `direction · scale(j)` for j = 0..=L and accepts the first candidate
/// that improves the objective, stays within the KL radius and satisfies the
/// sampled constraints.
pub fn backtracking_line_search<F>(direction: &[f64], delta: f64, config: &LineSearchConfig, mut evaluate: F) -> Result<TrustRegionStep>
where
    F: FnMut(&[f64]) -> Result<Probe>,
{
    for j in 0..=config.max_backtracks {
        let scale = config.scale(j);
        let step: Vec<f64> = direction.iter().map(|x| x * scale).collect();
        let probe = evaluate(&step)?;
        if (probe.improvement > 0.0 || !probe.require_improvement) && probe.kl <= delta && probe.constraints_ok {
            return Ok(TrustRegionStep {
                direction: direction.to_vec(),
                step,
                exponent: Some(j),
                mode: StepMode::Optimize,
            });
        }
    }
    Ok(TrustRegionStep {
        direction: direction.to_vec(),
        step: vec![0.0; direction.len()],
        exponent: None,
        mode: StepMode::Reject,
    })
}

/// Natural-gradient descent direction on the cost surrogate with squared
/// H-norm 2δ: `−√(2δ / bᵀH⁻¹b) · H⁻¹b`.
pub fn recovery_direction(hinv_b: &[f64], s: f64, delta: f64) -> Result<Vec<f64>> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Degenerate(format!("bᵀH⁻¹b = {s} is not positive")));
    }
    let scale = (2.0 * delta / s).sqrt();
    Ok(hinv_b.iter().map(|x| -scale * x).collect())
}

/// Backtracks `α^j · direction` (α = `config.ratio`, starting at j = 0) until the
/// sampled cost decreases.
pub fn recovery_step<F>(hinv_b: &[f64], s: f64, delta: f64, config: &LineSearchConfig, mut cost_change: F) -> Result<TrustRegionStep>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let direction = recovery_direction(hinv_b, s, delta)?;
    for j in 0..=config.max_backtracks {
        let alpha = config.ratio.powi(j as i32);
        let step: Vec<f64> = direction.iter().map(|x| x * alpha).collect();
        if cost_change(&step)? < 0.0 {
            return Ok(TrustRegionStep {
                direction,
                step,
                exponent: Some(j),
                mode: StepMode::Recover,
            });
        }
    }
    Ok(TrustRegionStep {
        step: vec![0.0; direction.len()],
        direction,
        exponent: None,
        mode: StepMode::Reject,
    })
}

/// Solves a dense instance given an explicit symmetric matrix; used by the CLI
/// debugging command and by tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLqclp {
    #[serde(flatten)]
    pub problem: LqclpProblem,
    /// Row-major n×n, symmetric positive definite.
    pub h: Vec<f64>,
}

/// Outcome of a dense solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLqclpSolution {
    pub dual: Option<DualSolution>,
    pub x: Vec<f64>,
    pub objective: f64,
    pub kl_quadratic: f64,
    pub constraint_values: Vec<f64>,
    pub mode: StepMode,
}

impl DenseLqclp {
    pub fn hvp(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.problem.g.len();
        ensure_len(v.len(), n, "dense hvp")?;
        Ok((0..n).map(|i| dot(&self.h[i * n..(i + 1) * n], v)).collect())
    }

    pub fn solve(&self, config: &SolverConfig) -> Result<DenseLqclpSolution> {
        let n = self.problem.g.len();
        ensure_len(self.h.len(), n * n, "dense hessian")?;
        let pre = Preconditioned::compute(&self.problem, |v| self.hvp(v), config)?;
        let (dual, x, mode) = match solve_dual(&self.problem, &pre, config) {
            Ok(d) => {
                let x = primal_step(&d, &pre)?;
                (Some(d), x, StepMode::Optimize)
            }
            Err(Error::RecoveryRequired) => {
                let m = self.problem.b.len();
                let worst = (0..m)
                    .max_by(|&a, &b| self.problem.d[a].total_cmp(&self.problem.d[b]))
                    .ok_or(Error::RecoveryRequired)?;
                let x = recovery_direction(&pre.hinv_b[worst], pre.s[worst * m + worst], self.problem.delta)?;
                (None, x, StepMode::Recover)
            }
            Err(e) => return Err(e),
        };
        let hx = self.hvp(&x)?;
        Ok(DenseLqclpSolution {
            objective: dot(&self.problem.g, &x),
            kl_quadratic: 0.5 * dot(&x, &hx),
            constraint_values: self.problem.b.iter().zip(&self.problem.d).map(|(b, d)| dot(b, &x) + d).collect(),
            dual,
            x,
            mode,
        })
    }
}
