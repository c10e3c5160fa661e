use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use safe_marl::rng::seeded_rng;
use safe_marl::solver::*;
use safe_marl::Error;

fn random_spd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1
}

fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn hvp(h: &DMatrix<f64>) -> impl FnMut(&[f64]) -> safe_marl::Result<Vec<f64>> + '_ {
    move |v| Ok((h * DVector::from_column_slice(v)).as_slice().to_vec())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximises gᵀx subject to b_jᵀx + d_j ≤ 0 and ½xᵀHx ≤ δ by enumerating active
/// sets in whitened coordinates y = Lᵀx: the optimum of a linear objective lies on
/// the sphere |y|² = 2δ, restricted to the affine set where the active planes hold.
fn primal_oracle(h: &DMatrix<f64>, g: &[f64], b: &[Vec<f64>], d: &[f64], delta: f64) -> Option<Vec<f64>> {
    let n = g.len();
    let chol = h.clone().cholesky().unwrap();
    let l = chol.l();
    let whiten = |v: &[f64]| l.solve_lower_triangular(&DVector::from_column_slice(v)).unwrap();
    let gt = whiten(g);
    let bt: Vec<DVector<f64>> = b.iter().map(|v| whiten(v)).collect();
    let radius2 = 2.0 * delta;
    let m = b.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0..(1usize << m) {
        let active: Vec<usize> = (0..m).filter(|j| mask >> j & 1 == 1).collect();
        let k = active.len();
        let (p0, proj_g) = if k == 0 {
            (DVector::zeros(n), gt.clone())
        } else {
            let a = DMatrix::from_fn(n, k, |r, c| bt[active[c]][r]);
            let gram = a.transpose() * &a;
            let Some(inv) = gram.clone().try_inverse() else { continue };
            let rhs = DVector::from_iterator(k, active.iter().map(|&j| -d[j]));
            let p0 = &a * (&inv * rhs);
            let proj_g = &gt - &a * (&inv * (a.transpose() * &gt));
            (p0, proj_g)
        };
        let rest = radius2 - p0.norm_squared();
        if rest < 0.0 || proj_g.norm() < 1e-14 {
            continue;
        }
        let y = &p0 + proj_g.normalize() * rest.sqrt();
        let feasible = (0..m).all(|j| bt[j].dot(&y) + d[j] <= 1e-10);
        if !feasible {
            continue;
        }
        let value = gt.dot(&y);
        if best.as_ref().is_none_or(|(v, _)| value > *v) {
            best = Some((value, y));
        }
    }
    let (_, y) = best?;
    let x = l.transpose().solve_upper_triangular(&y).unwrap();
    Some(x.as_slice().to_vec())
}

struct Instance {
    h: DMatrix<f64>,
    problem: LqclpProblem,
}

fn random_instance(seed: u64, m: usize) -> Instance {
    let mut rng = seeded_rng(seed);
    let n = rng.random_range(3..=10);
    let h = random_spd(&mut rng, n);
    let g = random_vec(&mut rng, n);
    let b: Vec<Vec<f64>> = (0..m).map(|_| random_vec(&mut rng, n)).collect();
    let delta = 10f64.powf(rng.random_range(-2.0..0.0));
    let hinv = h.clone().try_inverse().unwrap();
    let d = b
        .iter()
        .map(|bj| {
            let bv = DVector::from_column_slice(bj);
            let s = bv.dot(&(&hinv * &bv));
            // offsets from well inside to just short of the strictly feasible limit
            rng.random_range(-2.0..0.9) * (2.0 * delta * s).sqrt()
        })
        .collect();
    Instance {
        h,
        problem: LqclpProblem { g, b, d, delta },
    }
}

fn dense(instance: &Instance) -> DenseLqclp {
    DenseLqclp {
        problem: instance.problem.clone(),
        h: instance.h.transpose().as_slice().to_vec(),
    }
}

fn exact_config() -> SolverConfig {
    SolverConfig {
        cg_iters: 200,
        cg_tol: 1e-14,
        multi_constraint: true,
        ..SolverConfig::default()
    }
}

#[test]
fn cg_solves_identity_in_one_iteration() {
    let rhs = vec![1.0, -2.0, 3.0];
    let sol = conjugate_gradient(|v| Ok(v.to_vec()), &rhs, 10, 1e-12).unwrap();
    assert_eq!(sol.iterations, 1);
    assert_eq!(sol.x, rhs);
}

#[test]
fn cg_diagonal_solve() {
    let sol = conjugate_gradient(|v| Ok(vec![2.0 * v[0], 4.0 * v[1]]), &[2.0, 4.0], 10, 1e-14).unwrap();
    assert!((sol.x[0] - 1.0).abs() < 1e-14 && (sol.x[1] - 1.0).abs() < 1e-14);
}

#[test]
fn cg_matches_dense_lu_on_spd_systems() {
    let mut rng = seeded_rng(1);
    for _ in 0..10 {
        let h = random_spd(&mut rng, 50);
        let rhs = random_vec(&mut rng, 50);
        let sol = conjugate_gradient(hvp(&h), &rhs, 500, 1e-14).unwrap();
        let lu = h.clone().lu().solve(&DVector::from_column_slice(&rhs)).unwrap();
        let x = DVector::from_column_slice(&sol.x);
        let residual = (&h * &x - DVector::from_column_slice(&rhs)).norm();
        assert!(residual < 1e-8, "residual {residual}");
        assert!((x - lu).norm() < 1e-8);
    }
}

#[test]
fn cg_flags_exhausted_iterations_and_poisoned_input() {
    let mut rng = seeded_rng(2);
    let h = random_spd(&mut rng, 20);
    let rhs = random_vec(&mut rng, 20);
    let sol = conjugate_gradient(hvp(&h), &rhs, 2, 1e-14).unwrap();
    assert!(!sol.converged);
    assert!(conjugate_gradient(|v| Ok(v.to_vec()), &[f64::NAN], 5, 1e-12).is_err());
    assert!(conjugate_gradient(|v| Ok(vec![v[0] * f64::NAN]), &[1.0], 5, 1e-12).is_err());
}

#[test]
fn inactive_constraint_gives_pure_trust_region() {
    let (dual, case) = solve_lqclp_single(2.0, 0.3, 1.0, -10.0, 0.5).unwrap();
    assert_eq!(case, DualCase::TrustRegionOnly);
    assert_eq!(dual.nu, vec![0.0]);
    assert!((dual.lambda - (2.0f64 / 0.5).sqrt()).abs() < 1e-15);
}

#[test]
fn boundary_case_matches_dual_grid_search() {
    let (q, r, s, c, delta) = (1.0, 0.0, 1.0, 0.0, 0.5);
    let (dual, _) = solve_lqclp_single(q, r, s, c, delta).unwrap();
    // concave dual L(λ, ν) = −(q + 2νr + ν²s)/(2λ) + νc − λδ/2 on a dense grid
    let lagrangian = |l: f64, n: f64| -(q + 2.0 * n * r + n * n * s) / (2.0 * l) + n * c - l * delta / 2.0;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for a in 1..=4000 {
        let l = a as f64 * 1e-3;
        for b in 0..=400 {
            let n = b as f64 * 1e-3;
            let v = lagrangian(l, n);
            if v > best.0 {
                best = (v, l, n);
            }
        }
    }
    assert!((dual.lambda - best.1).abs() < 1e-3);
    assert!((dual.nu[0] - best.2).abs() < 1e-3);
    assert!((dual.dual_value - best.0).abs() < 1e-4);
}

#[test]
fn infeasible_instance_requires_recovery() {
    assert_eq!(solve_lqclp_single(1.0, 0.2, 1.0, 2.0, 0.5).unwrap_err(), Error::RecoveryRequired);
    // borderline tangency counts as feasible
    assert!(solve_lqclp_single(1.0, 0.2, 1.0, 0.5f64.sqrt(), 0.5).is_ok());
}

#[test]
fn analytic_solution_matches_primal_oracle() {
    for seed in 0..200 {
        let inst = random_instance(seed, 1);
        let sol = dense(&inst).solve(&exact_config()).unwrap();
        let p = &inst.problem;
        let oracle = primal_oracle(&inst.h, &p.g, &p.b, &p.d, p.delta).unwrap();
        let obj_oracle = dot(&p.g, &oracle);
        assert!((sol.objective - obj_oracle).abs() < 1e-4, "seed {seed}: {} vs {obj_oracle}", sol.objective);
        let diff: f64 = sol.x.iter().zip(&oracle).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(diff < 1e-3, "seed {seed}: step differs by {diff}");
        let dual = sol.dual.unwrap();
        // the maximisation dual is an upper bound on the primal value
        assert!(sol.objective - dual.dual_value <= 1e-6);
        assert!((sol.objective - dual.dual_value).abs() < 1e-4);
        assert!(dual.q * dual.s[0] - dual.r[0] * dual.r[0] >= -1e-10);
        assert!(sol.kl_quadratic <= p.delta * (1.0 + 1e-6));
        if dual.nu[0] > 0.0 {
            assert!(sol.constraint_values[0].abs() < 1e-6);
        } else {
            assert!(sol.constraint_values[0] <= 1e-9);
        }
    }
}

#[test]
fn natural_gradient_step_when_unconstrained() {
    let mut rng = seeded_rng(3);
    let h = random_spd(&mut rng, 5);
    let g = random_vec(&mut rng, 5);
    let problem = LqclpProblem {
        g: g.clone(),
        b: vec![],
        d: vec![],
        delta: 0.01,
    };
    let pre = Preconditioned::compute(&problem, hvp(&h), &exact_config()).unwrap();
    let dual = solve_dual(&problem, &pre, &exact_config()).unwrap();
    let x = primal_step(&dual, &pre).unwrap();
    let hinv_g = h.clone().lu().solve(&DVector::from_column_slice(&g)).unwrap();
    for (a, b) in x.iter().zip(hinv_g.iter()) {
        assert!((a - b / dual.lambda).abs() < 1e-12);
    }
    let hx = h * DVector::from_column_slice(&x);
    assert!((0.5 * dot(&x, hx.as_slice()) - 0.01).abs() < 1e-12);
}

#[test]
fn infinite_bound_matches_unconstrained_step_exactly() {
    let inst = random_instance(4, 1);
    let mut vacuous = inst.problem.clone();
    vacuous.d = vec![f64::NEG_INFINITY];
    let mut none = inst.problem.clone();
    none.b.clear();
    none.d.clear();
    let a = DenseLqclp { problem: vacuous, h: dense(&inst).h }.solve(&exact_config()).unwrap();
    let b = DenseLqclp { problem: none, h: dense(&inst).h }.solve(&exact_config()).unwrap();
    assert_eq!(a.x, b.x);
}

#[test]
fn zero_constraint_gradient_is_dropped_when_satisfied() {
    let mut inst = random_instance(5, 1);
    let n = inst.problem.g.len();
    inst.problem.b = vec![vec![0.0; n]];
    inst.problem.d = vec![-1.0];
    let sol = dense(&inst).solve(&exact_config()).unwrap();
    assert_eq!(sol.mode, StepMode::Optimize);
    inst.problem.d = vec![1.0];
    assert_eq!(dense(&inst).solve(&exact_config()).unwrap_err(), Error::Degenerate("bᵀH⁻¹b = 0 is not positive".into()));
}

#[test]
fn duplicate_constraints_give_the_single_step() {
    for seed in 10..30 {
        let inst = random_instance(seed, 1);
        let single = dense(&inst).solve(&exact_config()).unwrap();
        let mut twice = dense(&inst);
        twice.problem.b.push(twice.problem.b[0].clone());
        twice.problem.d.push(twice.problem.d[0]);
        let double = twice.solve(&exact_config()).unwrap();
        let diff: f64 = single.x.iter().zip(&double.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-4, "seed {seed}: {diff}");
    }
}

#[test]
fn vacuous_second_constraint_matches_single() {
    for seed in 30..50 {
        let inst = random_instance(seed, 1);
        let single = dense(&inst).solve(&exact_config()).unwrap();
        let mut two = dense(&inst);
        let n = two.problem.g.len();
        two.problem.b.push(vec![1.0; n]);
        two.problem.d.push(-1e6);
        let both = two.solve(&exact_config()).unwrap();
        let diff: f64 = single.x.iter().zip(&both.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-4, "seed {seed}: {diff}");
    }
}

#[test]
fn two_constraint_steps_match_primal_oracle() {
    let mut checked = 0;
    for seed in 100..160 {
        let inst = random_instance(seed, 2);
        let p = &inst.problem;
        let Some(oracle) = primal_oracle(&inst.h, &p.g, &p.b, &p.d, p.delta) else { continue };
        let sol = match dense(&inst).solve(&exact_config()) {
            Ok(s) => s,
            Err(e) => panic!("seed {seed}: {e}"),
        };
        if sol.mode != StepMode::Optimize {
            continue;
        }
        checked += 1;
        let diff: f64 = sol.x.iter().zip(&oracle).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(diff < 1e-3, "seed {seed}: step differs by {diff}");
        assert!(sol.kl_quadratic <= p.delta * (1.0 + 1e-6));
    }
    assert!(checked >= 40, "only {checked} feasible instances");
}

#[test]
fn multi_constraint_needs_the_flag() {
    let mut inst = dense(&random_instance(7, 2));
    inst.problem.d = vec![-0.001, -0.001];
    assert!(matches!(inst.solve(&SolverConfig::default()), Err(Error::Config(_))));
}

#[test]
fn degenerate_multiplier_is_rejected() {
    let dual = DualSolution {
        lambda: 0.0,
        nu: vec![],
        q: 0.0,
        r: vec![],
        s: vec![],
        offsets: vec![],
        dual_value: 0.0,
        converged: true,
    };
    let pre = Preconditioned {
        hinv_g: vec![0.0],
        hinv_b: vec![],
        q: 0.0,
        r: vec![],
        s: vec![],
        cg_converged: true,
    };
    assert!(matches!(primal_step(&dual, &pre), Err(Error::DegenerateDual(_))));
}

#[test]
fn line_search_accepts_full_step_when_satisfied() {
    let cfg = LineSearchConfig {
        max_backtracks: 5,
        ratio: 0.5,
        initial_scale: 1.0,
    };
    let step = backtracking_line_search(&[1.0, 2.0], 0.1, &cfg, |_| {
        Ok(Probe {
            improvement: 1.0,
            kl: 0.0,
            constraints_ok: true,
            require_improvement: true,
        })
    })
    .unwrap();
    assert_eq!(step.exponent, Some(0));
    assert_eq!(step.step, vec![1.0, 2.0]);
    assert_eq!(step.mode, StepMode::Optimize);
}

#[test]
fn line_search_rejects_when_never_satisfied() {
    let cfg = LineSearchConfig::default();
    let mut calls = 0;
    let step = backtracking_line_search(&[1.0], 0.1, &cfg, |_| {
        calls += 1;
        Ok(Probe {
            improvement: -1.0,
            kl: 0.0,
            constraints_ok: true,
            require_improvement: true,
        })
    })
    .unwrap();
    assert_eq!(step.mode, StepMode::Reject);
    assert_eq!(step.step, vec![0.0]);
    assert_eq!(calls, cfg.max_backtracks + 1);
}

#[test]
fn line_search_scales_by_ratio_power() {
    let cfg = LineSearchConfig {
        max_backtracks: 5,
        ratio: 0.5,
        initial_scale: 1.0,
    };
    let mut j = 0;
    let step = backtracking_line_search(&[4.0], 1.0, &cfg, |_| {
        j += 1;
        Ok(Probe {
            improvement: 1.0,
            kl: if j >= 3 { 0.5 } else { 2.0 },
            constraints_ok: true,
            require_improvement: true,
        })
    })
    .unwrap();
    assert_eq!(step.exponent, Some(2));
    assert_eq!(step.step, vec![1.0]);
    // the default schedule starts at the initial scaling
    assert_eq!(LineSearchConfig::default().scale(0), 0.27);
}

#[test]
fn recovery_step_has_plug_in_magnitude() {
    let x = recovery_direction(&[1.0, 0.0], 1.0, 0.5).unwrap();
    assert_eq!(x, vec![-1.0, 0.0]);
    let mut rng = seeded_rng(8);
    for _ in 0..20 {
        let h = random_spd(&mut rng, 6);
        let b = random_vec(&mut rng, 6);
        let hinv_b = h.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
        let s = dot(&b, hinv_b.as_slice());
        let delta = 0.02;
        let cfg = LineSearchConfig::default();
        let mut tries = 0;
        let step = recovery_step(hinv_b.as_slice(), s, delta, &cfg, |_| {
            tries += 1;
            Ok(if tries >= 2 { -1.0 } else { 1.0 })
        })
        .unwrap();
        assert_eq!(step.mode, StepMode::Recover);
        let alpha: f64 = cfg.ratio.powi(step.exponent.unwrap() as i32);
        let hx = &h * DVector::from_column_slice(&step.step);
        let quad = 0.5 * dot(&step.step, hx.as_slice());
        assert!((quad - alpha * alpha * delta).abs() < 1e-12);
        // the step decreases the linearised cost
        assert!(dot(&b, &step.step) < 0.0);
    }
    assert!(recovery_direction(&[1.0], 0.0, 0.5).is_err());
}
