use rand::Rng;
use safe_marl::cmg::{random_tabular_cmg, JointPolicy, TabularCmg, TabularPolicy};
use safe_marl::oracle::{max_kl, surrogate_cost, PolicyEvaluation};
use safe_marl::rng::seeded_rng;
use safe_marl::safe_iteration::*;

fn game_with_slack(seed: u64, n: usize, slack: f64) -> (TabularCmg, JointPolicy) {
    let mut rng = seeded_rng(seed);
    let acts: Vec<usize> = (0..n).map(|_| rng.random_range(2..=3)).collect();
    let g = random_tabular_cmg(rng.random_range(2..=5), n, &acts, 2, rng.random()).unwrap();
    let pi = JointPolicy::random(&g, 1.0, &mut rng);
    let ev = PolicyEvaluation::new(&g, &pi).unwrap();
    let bounds = ev
        .expected_costs
        .iter()
        .map(|row| row.iter().map(|j| j + slack).collect())
        .collect();
    (g.with_bounds(bounds).unwrap(), pi)
}

#[test]
fn coefficients_match_brute_force_scan() {
    let (g, pi) = game_with_slack(1, 2, 0.1);
    let ev = PolicyEvaluation::new(&g, &pi).unwrap();
    let coef = penalty_coefficients(&g, &ev);
    let factor = 4.0 * g.discount() / (1.0 - g.discount()).powi(2);
    let mut max_adv: f64 = 0.0;
    for s in 0..g.n_states() {
        for joint in 0..g.n_joint_actions() {
            max_adv = max_adv.max((ev.values.q(s, joint) - ev.values.v[s]).abs());
        }
    }
    assert!((coef.reward - factor * max_adv).abs() < 1e-12 * coef.reward.max(1.0));
    for i in 0..2 {
        for j in 0..2 {
            let mut m: f64 = 0.0;
            for s in 0..g.n_states() {
                for a in 0..g.action_count(i) {
                    m = m.max(ev.values.cost_advantage(&g, i, j, s, a).abs());
                }
            }
            assert!((coef.cost[i][j] - factor * m).abs() < 1e-12 * coef.cost[i][j].max(1.0));
        }
    }
}

#[test]
fn first_radius_is_slack_over_nu() {
    let slack = 0.25;
    let (g, pi) = game_with_slack(2, 3, slack);
    let ev = PolicyEvaluation::new(&g, &pi).unwrap();
    let coef = penalty_coefficients(&g, &ev);
    let order = vec![1, 0, 2];
    let sweep = Sweep::new(&g, &pi, &ev, &coef, order.clone()).unwrap();
    let expected = order[1..]
        .iter()
        .flat_map(|&l| coef.cost[l].iter().map(|nu| slack / nu))
        .fold(f64::INFINITY, f64::min);
    let got = sweep.radius();
    assert!(got >= 0.0);
    assert!((got - expected).abs() <= 1e-9 * expected.abs(), "{got} vs {expected}");
}

#[test]
fn tightening_a_bound_never_grows_the_radius() {
    let (g, pi) = game_with_slack(3, 2, 0.3);
    let ev = PolicyEvaluation::new(&g, &pi).unwrap();
    let coef = penalty_coefficients(&g, &ev);
    let mut previous = f64::INFINITY;
    for shrink in [0.0, 0.05, 0.1, 0.2, 0.29] {
        let mut bounds = g.bounds().to_vec();
        bounds[1][0] -= shrink;
        let tight = g.clone().with_bounds(bounds).unwrap();
        let sweep = Sweep::new(&tight, &pi, &ev, &coef, vec![0, 1]).unwrap();
        let r = sweep.radius();
        assert!(r <= previous);
        previous = r;
    }
}

#[test]
fn incumbent_is_member_and_far_candidates_are_not() {
    let (g, pi) = game_with_slack(4, 2, 0.2);
    let ev = PolicyEvaluation::new(&g, &pi).unwrap();
    let coef = penalty_coefficients(&g, &ev);
    let sweep = Sweep::new(&g, &pi, &ev, &coef, vec![0, 1]).unwrap();
    let problem = sweep.problem().unwrap();
    assert!(problem.is_member(pi.agent(0)).unwrap());
    // a deterministic-ish policy far from the incumbent exceeds the radius
    let far = TabularPolicy::from_weights(g.n_states(), g.action_count(0), {
        let mut w = vec![0.0; g.n_states() * g.action_count(0)];
        for s in 0..g.n_states() {
            w[s * g.action_count(0)] = 1.0;
        }
        w
    })
    .unwrap();
    if max_kl(pi.agent(0), &far).unwrap() > problem.radius {
        assert!(!problem.is_member(&far).unwrap());
    }
}

#[test]
fn membership_matches_independent_reevaluation() {
    let mut rng = seeded_rng(5);
    for seed in 0..20 {
        let (g, pi) = game_with_slack(100 + seed, 2, 0.05);
        let ev = PolicyEvaluation::new(&g, &pi).unwrap();
        let coef = penalty_coefficients(&g, &ev);
        let sweep = Sweep::new(&g, &pi, &ev, &coef, vec![1, 0]).unwrap();
        let problem = sweep.problem().unwrap();
        for _ in 0..20 {
            let scale = 10f64.powf(rng.random_range(-4.0..0.0));
            let cand = pi.agent(1).perturbed(scale, &mut rng);
            let kl = max_kl(pi.agent(1), &cand).unwrap();
            let mut member = kl <= problem.radius;
            for j in 0..g.n_costs(1) {
                let l = surrogate_cost(&g, &ev.values, &ev.occupancy, 1, j, &cand).unwrap();
                member &= ev.expected_costs[1][j] + l + coef.cost[1][j] * kl <= g.bound(1, j);
            }
            assert_eq!(problem.is_member(&cand).unwrap(), member);
        }
    }
}

#[test]
fn inner_maximize_beats_incumbent_and_stays_feasible() {
    let config = SafeIterationConfig::default();
    for seed in 0..50 {
        let (g, pi) = game_with_slack(200 + seed, 2, 0.1);
        let ev = PolicyEvaluation::new(&g, &pi).unwrap();
        let coef = penalty_coefficients(&g, &ev);
        let sweep = Sweep::new(&g, &pi, &ev, &coef, vec![0, 1]).unwrap();
        let problem = sweep.problem().unwrap();
        let out = inner_maximize(&problem, &config).unwrap();
        let incumbent = problem.objective(pi.agent(0)).unwrap();
        assert!(problem.objective(&out.policy).unwrap() >= incumbent);
        assert!(problem.is_member(&out.policy).unwrap());
    }
}

#[test]
fn optimal_incumbent_on_degenerate_game_is_kept() {
    // one action per agent: every advantage is zero
    let g = random_tabular_cmg(3, 2, &[1, 1], 1, 9).unwrap();
    let pi = JointPolicy::uniform(&g);
    let ev = PolicyEvaluation::new(&g, &pi).unwrap();
    let coef = penalty_coefficients(&g, &ev);
    let sweep = Sweep::new(&g, &pi, &ev, &coef, vec![0, 1]).unwrap();
    let out = inner_maximize(&sweep.problem().unwrap(), &SafeIterationConfig::default()).unwrap();
    assert!(!out.moved);
    assert_eq!(out.objective - out.incumbent_objective, 0.0);
}

#[test]
fn feasible_starts_improve_monotonically_and_stay_safe() {
    let mut rng = seeded_rng(6);
    for seed in 0..8 {
        let (g, pi) = game_with_slack(300 + seed, 1 + seed as usize % 3, 0.2);
        let run = safe_iteration(&g, &pi, 10, &SafeIterationConfig::default(), &mut rng).unwrap();
        let check = check_guarantees(&g, &run.certificates);
        assert_eq!(check.first_feasible, Some(0));
        assert!(check.holds(1e-9), "{check:?}");
        for cert in &run.certificates {
            assert!(cert.objective_gains.iter().all(|g| *g >= 0.0));
            assert!(cert.bound_excess.iter().flatten().all(|e| *e <= 1e-12));
        }
    }
}

#[test]
fn vacuous_bounds_reduce_to_unconstrained_iteration() {
    let mut rng = seeded_rng(7);
    let (g, pi) = game_with_slack(400, 2, 0.0);
    let g = g.unconstrained();
    let run = safe_iteration(&g, &pi, 10, &SafeIterationConfig::default(), &mut rng).unwrap();
    for c in &run.certificates {
        assert!(c.return_after >= c.expected_return - 1e-9);
        assert!(c.radii.iter().all(|r| r.is_infinite()));
    }
    assert!(run.certificates.last().unwrap().return_after > run.certificates[0].expected_return);
}

#[test]
fn infeasible_start_recovers() {
    let mut rng = seeded_rng(8);
    let (g, pi) = game_with_slack(500, 2, -0.05);
    let run = safe_iteration(&g, &pi, 30, &SafeIterationConfig::default(), &mut rng).unwrap();
    assert!(run.certificates[0].recovery);
    let check = check_guarantees(&g, &run.certificates);
    let first = check.first_feasible.expect("recovery reaches the feasible set");
    assert!(first > 0);
    assert!(check.holds(1e-9), "{check:?}");
}

#[test]
fn runs_are_reproducible_from_the_seed() {
    let (g, pi) = game_with_slack(600, 3, 0.2);
    let a = safe_iteration(&g, &pi, 5, &SafeIterationConfig::default(), &mut seeded_rng(1)).unwrap();
    let b = safe_iteration(&g, &pi, 5, &SafeIterationConfig::default(), &mut seeded_rng(1)).unwrap();
    assert_eq!(a.certificates, b.certificates);
    assert_eq!(a.policy, b.policy);
}
