use nalgebra::DMatrix;
use safe_marl::cmg::{JointPolicy, TabularCmg};
use safe_marl::oracle::PolicyEvaluation;
use safe_marl::verify::*;

fn light() -> VerifyConfig {
    VerifyConfig {
        seed: 3,
        decomposition_games: 20,
        cost_bound_triples: 40,
        improvement_games: 2,
        improvement_iterations: 3,
        lqclp_instances: 30,
        cg_systems: 5,
        gradient_nets: 4,
        score_samples: 20_000,
        gae_episodes: 30,
        fault: None,
    }
}

#[test]
fn exact_suites_pass() {
    let report = verify(
        &[Suite::Decomposition, Suite::Lqclp, Suite::ConjugateGradient, Suite::Gradients, Suite::Gae],
        &light(),
    )
    .unwrap();
    for suite in &report.suites {
        assert!(suite.passed(), "{}: {:?}", suite.suite, suite.checks);
        assert!(suite.counterexample.is_none());
        assert!(suite.instances > 0);
    }
    assert!(report.passed());
    assert_eq!(report.max_cost_bound_slack, None);
}

#[test]
fn perturbed_decomposition_is_caught_and_serialized() {
    let config = VerifyConfig {
        fault: Some(Fault::PerturbedDecomposition),
        ..light()
    };
    let report = verify(&[Suite::Decomposition], &config).unwrap();
    assert!(!report.passed());
    let suite = &report.suites[0];
    assert_eq!(suite.failed_instances, suite.instances);
    let worst = suite.check("residual").unwrap().worst;
    assert!((worst - 1e-6).abs() < 1e-9);
    let witness = suite.counterexample.as_ref().unwrap();
    let game: TabularCmg = serde_json::from_value(witness["game"].clone()).unwrap();
    let policy: JointPolicy = serde_json::from_value(witness["policy"].clone()).unwrap();
    policy.validate_for(&game).unwrap();
    assert!(witness["residuals"][0].as_f64().unwrap() > 1e-10);
}

#[test]
fn cost_bound_counterexample_replays() {
    let report = verify(&[Suite::CostBound], &light()).unwrap();
    let suite = &report.suites[0];
    assert_eq!(report.max_cost_bound_slack, Some(suite.check("bound_excess").unwrap().worst));
    let Some(witness) = &suite.counterexample else {
        assert!(suite.passed());
        return;
    };
    let game: TabularCmg = serde_json::from_value(witness["game"].clone()).unwrap();
    let pibar: JointPolicy = serde_json::from_value(witness["pibar"].clone()).unwrap();
    let i = witness["agent"].as_u64().unwrap() as usize;
    let j = witness["constraint"].as_u64().unwrap() as usize;
    let after = PolicyEvaluation::new(&game, &pibar).unwrap();
    assert!((after.expected_costs[i][j] - witness["cost_after"].as_f64().unwrap()).abs() < 1e-12);
    assert!(witness["cost_after"].as_f64().unwrap() > witness["bound"].as_f64().unwrap() + 1e-8);
}

#[test]
fn report_round_trips_through_json() {
    let report = verify(&[Suite::Gae, Suite::ConjugateGradient], &light()).unwrap();
    let text = serde_json::to_string(&report).unwrap();
    let back: VerifyReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back.suites.len(), 2);
    assert_eq!(back.passed_suites, report.passed_suites);
    assert_eq!(back.suites[0].checks, report.suites[0].checks);
}

#[test]
fn same_seed_same_residuals() {
    let a = run_suite(Suite::Lqclp, &light()).unwrap();
    let b = run_suite(Suite::Lqclp, &light()).unwrap();
    assert_eq!(a.checks, b.checks);
    let c = run_suite(Suite::Lqclp, &VerifyConfig { seed: 4, ..light() }).unwrap();
    assert_ne!(a.checks, c.checks);
}

#[test]
fn suite_names_parse() {
    for suite in Suite::ALL {
        assert_eq!(suite.as_str().parse::<Suite>().unwrap(), suite);
    }
    assert_eq!("cost-bound".parse::<Suite>().unwrap(), Suite::CostBound);
    assert!("bogus".parse::<Suite>().is_err());
    assert_eq!("perturbed-decomposition".parse::<Fault>().unwrap(), Fault::PerturbedDecomposition);
}

#[test]
fn angle_scan_on_a_known_instance() {
    // H = I, g = e1, b = e1, d = -0.5, delta = 0.5: the trust region has radius 1
    // and the plane x1 = 0.5 caps the objective at 0.5.
    let h = DMatrix::identity(2, 2);
    let x = angle_scan_oracle(&h, &[1.0, 0.0], &[1.0, 0.0], -0.5, 0.5).unwrap();
    assert!((x[0] - 0.5).abs() < 1e-9, "{x:?}");
    assert!((x[0] * x[0] + x[1] * x[1] - 1.0).abs() < 1e-9);
    // inactive plane: the natural-gradient step of length sqrt(2 delta)
    let x = angle_scan_oracle(&h, &[0.0, 2.0], &[1.0, 0.0], -5.0, 2.0).unwrap();
    assert!(x[0].abs() < 1e-9 && (x[1] - 2.0).abs() < 1e-9, "{x:?}");
}

#[test]
fn gae_oracle_single_step() {
    use safe_marl::estimation::Boundary;
    let a = brute_force_gae(&[1.0], &[2.0], &[0.5], &[Boundary::Truncated], 0.9, 0.3);
    assert!((a[0] - (0.5 + 0.9 * 2.0 - 1.0)).abs() < 1e-15);
    let a = brute_force_gae(&[1.0], &[2.0], &[0.5], &[Boundary::Terminal], 0.9, 0.3);
    assert!((a[0] - (0.5 - 1.0)).abs() < 1e-15);
}
