use rand::Rng;
use safe_marl::nn::*;
use safe_marl::rng::seeded_rng;

fn random_gaussian(seed: u64) -> (PolicyNet, Vec<f64>) {
    let mut rng = seeded_rng(seed);
    let obs_dim = rng.random_range(2..6);
    let act_dim = rng.random_range(1..4);
    let mut p = PolicyNet::gaussian(obs_dim, act_dim, 16, 1.0, 1.0, 0.5, &mut rng).unwrap();
    // move the std parameters and output layer off their initial values
    let params: Vec<f64> = p.params().iter().map(|x| x + 0.3 * rng.random_range(-1.0..1.0)).collect();
    p.set_params(&params).unwrap();
    let obs: Vec<f64> = (0..obs_dim * 12).map(|_| rng.random_range(-2.0..2.0)).collect();
    (p, obs)
}

fn random_categorical(seed: u64) -> (PolicyNet, Vec<f64>) {
    let mut rng = seeded_rng(seed);
    let obs_dim = rng.random_range(2..6);
    let n = rng.random_range(2..6);
    let p = PolicyNet::categorical(obs_dim, n, 16, 1.0, &mut rng);
    let obs: Vec<f64> = (0..obs_dim * 12).map(|_| rng.random_range(-2.0..2.0)).collect();
    (p, obs)
}

/// True when some hidden pre-activation changes sign between `theta - h v` and
/// `theta + h v`: the central-difference stencil then straddles a ReLU kink and
/// is not a valid oracle for the derivative at `theta`.
fn stencil_crosses_kink(p: &PolicyNet, obs: &[f64], v: &[f64], h: f64) -> bool {
    let plus = p.stepped(v, h).unwrap();
    let minus = p.stepped(v, -h).unwrap();
    obs.chunks(p.obs_dim()).any(|o| {
        let a = plus.mlp().forward_cache(o).pre;
        let b = minus.mlp().forward_cache(o).pre;
        let c = p.mlp().forward_cache(o).pre;
        a.iter().zip(&b).zip(&c).any(|((x, y), z)| x.signum() != z.signum() || y.signum() != z.signum())
    })
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    diff / scale.max(1e-12)
}

fn fd_grad_log_prob(p: &PolicyNet, obs: &[f64], action: &[f64], h: f64) -> Vec<f64> {
    let base = p.params();
    (0..base.len())
        .map(|k| {
            let mut plus = p.clone();
            let mut minus = p.clone();
            let mut v = base.clone();
            v[k] += h;
            plus.set_params(&v).unwrap();
            v[k] -= 2.0 * h;
            minus.set_params(&v).unwrap();
            (plus.log_prob(obs, action).unwrap() - minus.log_prob(obs, action).unwrap()) / (2.0 * h)
        })
        .collect()
}

#[test]
fn score_gradients_match_finite_differences() {
    for seed in 0..20 {
        let (p, obs) = if seed % 2 == 0 { random_gaussian(seed) } else { random_categorical(seed) };
        let mut rng = seeded_rng(100 + seed);
        let o = &obs[..p.obs_dim()];
        let action = p.sample(o, &mut rng).unwrap();
        let analytic = p.grad_log_prob(o, &action).unwrap();
        let numeric = fd_grad_log_prob(&p, o, &action, 1e-5);
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn kl_hvp_matches_two_gradient_finite_difference() {
    for seed in 0..20 {
        let (p, mut obs) = if seed % 2 == 0 { random_gaussian(seed) } else { random_categorical(seed) };
        let mut rng = seeded_rng(200 + seed);
        let v: Vec<f64> = (0..p.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = 1e-4;
        while stencil_crosses_kink(&p, &obs, &v, h) {
            obs.iter_mut().for_each(|x| *x = rng.random_range(-2.0..2.0));
        }
        let analytic = p.kl_hessian_vector_product(&obs, &v, 0.0).unwrap();
        let plus = p.stepped(&v, h).unwrap();
        let minus = p.stepped(&v, -h).unwrap();
        let gp = PolicyNet::mean_kl_grad(&p, &plus, &obs).unwrap();
        let gm = PolicyNet::mean_kl_grad(&p, &minus, &obs).unwrap();
        let numeric: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-3, "seed {seed}: relative error {err}");
    }
}

#[test]
fn kl_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let (p, obs) = if seed % 2 == 0 { random_gaussian(seed) } else { random_categorical(seed) };
        let mut rng = seeded_rng(300 + seed);
        let dir: Vec<f64> = (0..p.n_params()).map(|_| rng.random_range(-0.2..0.2)).collect();
        let new = p.stepped(&dir, 1.0).unwrap();
        let analytic = PolicyNet::mean_kl_grad(&p, &new, &obs).unwrap();
        let base = new.params();
        let h = 1e-6;
        let numeric: Vec<f64> = (0..base.len())
            .map(|k| {
                let mut e = vec![0.0; base.len()];
                e[k] = h;
                let a = PolicyNet::mean_kl(&p, &new.stepped(&e, 1.0).unwrap(), &obs).unwrap();
                let b = PolicyNet::mean_kl(&p, &new.stepped(&e, -1.0).unwrap(), &obs).unwrap();
                (a - b) / (2.0 * h)
            })
            .collect();
        assert!(relative_error(&analytic, &numeric) < 1e-4);
    }
}

#[test]
fn fisher_is_positive_semidefinite() {
    let (p, obs) = random_gaussian(7);
    let (c, cobs) = random_categorical(8);
    let mut rng = seeded_rng(9);
    for _ in 0..100 {
        for (net, o) in [(&p, &obs), (&c, &cobs)] {
            let v: Vec<f64> = (0..net.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let hv = net.kl_hessian_vector_product(o, &v, 0.0).unwrap();
            let quad: f64 = v.iter().zip(&hv).map(|(a, b)| a * b).sum();
            assert!(quad >= -1e-12);
        }
    }
    let zero = vec![0.0; p.n_params()];
    assert!(p.kl_hessian_vector_product(&obs, &zero, 1e-2).unwrap().iter().all(|x| *x == 0.0));
    assert!(p.kl_hessian_vector_product(&obs, &zero[1..], 1e-2).is_err());
}

#[test]
fn expected_score_is_zero() {
    let (p, obs) = random_gaussian(11);
    let o = &obs[..p.obs_dim()];
    let mut rng = seeded_rng(12);
    let n = 100_000;
    let dim = p.n_params();
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for _ in 0..n {
        let a = p.sample(o, &mut rng).unwrap();
        let g = p.grad_log_prob(o, &a).unwrap();
        for k in 0..dim {
            sum[k] += g[k];
            sq[k] += g[k] * g[k];
        }
    }
    for k in 0..dim {
        let mean = sum[k] / n as f64;
        let var = sq[k] / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        // components with no dependence on the sample have zero variance and zero mean
        assert!(mean.abs() <= 3.0 * se + 1e-12, "component {k}: mean {mean}, se {se}");
    }
}

#[test]
fn gaussian_density_integrates_to_one() {
    let d = ActionDistribution::Gaussian {
        mean: vec![0.3],
        std: vec![0.4],
    };
    let (lo, hi, steps) = (-6.0, 6.0, 20_000);
    let h = (hi - lo) / steps as f64;
    let total: f64 = (0..steps)
        .map(|k| d.log_prob(&[lo + (k as f64 + 0.5) * h]).unwrap().exp() * h)
        .sum();
    assert!((total - 1.0).abs() < 1e-3);
}

#[test]
fn analytic_kl_matches_monte_carlo() {
    let (p, obs) = random_gaussian(13);
    let o = &obs[..p.obs_dim()];
    let q = p.stepped(&vec![0.05; p.n_params()], 1.0).unwrap();
    let dp = p.distribution(o).unwrap();
    let dq = q.distribution(o).unwrap();
    let exact = dp.kl(&dq).unwrap();
    let mut rng = seeded_rng(14);
    let n = 1_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let a = dp.sample(&mut rng);
        let x = dp.log_prob(&a).unwrap() - dq.log_prob(&a).unwrap();
        s += x;
        s2 += x * x;
    }
    let mean = s / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
}

#[test]
fn identical_policies_have_zero_kl() {
    let (p, obs) = random_categorical(15);
    assert_eq!(PolicyNet::mean_kl(&p, &p, &obs).unwrap(), 0.0);
    let (g, gobs) = random_gaussian(16);
    assert_eq!(PolicyNet::mean_kl(&g, &g, &gobs).unwrap(), 0.0);
}

#[test]
fn parameters_round_trip() {
    let (p, _) = random_gaussian(17);
    let mut q = p.clone();
    q.set_params(&p.params()).unwrap();
    assert_eq!(p, q);
    let text = serde_json::to_string(&p).unwrap();
    let back: PolicyNet = serde_json::from_str(&text).unwrap();
    assert_eq!(back, p);
}

#[test]
fn sampling_is_seed_deterministic() {
    let (p, obs) = random_gaussian(18);
    let o = &obs[..p.obs_dim()];
    let a = p.sample(o, &mut seeded_rng(5)).unwrap();
    let b = p.sample(o, &mut seeded_rng(5)).unwrap();
    assert_eq!(a, b);
}
