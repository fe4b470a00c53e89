use proptest::prelude::*;
use tefield::montecarlo::{
    generate_dgp, parameter_recovery_campaign, run_campaign, CampaignConfig, DgpId, DgpSpec, MCSummary, Method,
    NoiseKind, RecoveryConfig,
};

fn small_config(methods: Vec<Method>, n_reps: usize, n_obs: usize, base_seed: u64) -> CampaignConfig {
    CampaignConfig {
        n_reps,
        n_obs,
        methods,
        base_seed,
        n_boot: 50,
        ..CampaignConfig::default()
    }
}

fn check_summary(s: &MCSummary) {
    if let (Some(b), Some(r), Some(v)) = (s.bias, s.rmse, s.variance) {
        assert!(r + 1e-12 >= b.abs());
        assert!((r * r - (b * b + v)).abs() <= 1e-9 * (r * r).max(1e-300), "{s:?}");
    }
    for rate in [s.coverage, s.false_positive_rate, s.correct_rejection_rate].into_iter().flatten() {
        assert!((0.0..=1.0).contains(&rate));
    }
    if let (Some(fp), Some(cr)) = (s.false_positive_rate, s.correct_rejection_rate) {
        assert!((fp + cr - 1.0).abs() < 1e-12);
    }
}

#[test]
fn noiseless_dgp_values() {
    let noiseless = |id| DgpSpec::standard(id).with_noise(0.0, NoiseKind::Additive);
    for (d, y) in generate_dgp(&noiseless(DgpId::StrongDecay), 500, 1).unwrap() {
        assert!((y - 0.8 * (-0.05 * d).exp()).abs() < 1e-15);
        assert!(d > 0.0 && d <= 100.0);
    }
    assert!(generate_dgp(&noiseless(DgpId::Flat), 500, 2).unwrap().iter().all(|p| p.1 == 0.5));
    let hump = noiseless(DgpId::Hump);
    assert!((hump.mean(20.0) - 0.7).abs() < 1e-15);
    for (d, _) in generate_dgp(&DgpSpec::standard(DgpId::WeakDecay), 1000, 3).unwrap() {
        assert!(d > 0.0 && d <= 600.0);
    }
}

#[test]
fn dgp_seed_determinism() {
    let spec = DgpSpec::standard(DgpId::Hump);
    assert_eq!(generate_dgp(&spec, 1000, 42).unwrap(), generate_dgp(&spec, 1000, 42).unwrap());
    assert_ne!(generate_dgp(&spec, 1000, 42).unwrap(), generate_dgp(&spec, 1000, 43).unwrap());
}

#[test]
fn campaign_is_bitwise_deterministic() {
    let specs: Vec<DgpSpec> = DgpId::ALL.iter().map(|&id| DgpSpec::standard(id)).collect();
    let cfg = small_config(vec![Method::Parametric, Method::Nonparametric], 10, 1000, 7);
    let a = run_campaign(&specs, &cfg).unwrap();
    let b = run_campaign(&specs, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.summaries.len(), 8);
    assert_eq!(a.replications.len(), 80);
    for s in &a.summaries {
        check_summary(s);
        assert_eq!(s.n_reps, 10);
    }
    for r in &a.replications {
        assert_eq!(r.seed, 7 + r.replication as u64);
    }
}

#[test]
fn campaign_rejects_too_few_reps() {
    let cfg = small_config(vec![Method::Parametric], 9, 100, 0);
    assert!(run_campaign(&[DgpSpec::standard(DgpId::Flat)], &cfg).is_err());
}

#[test]
fn flat_kappa_centered() {
    let cfg = small_config(vec![Method::Parametric], 400, 1000, 100);
    let res = run_campaign(&[DgpSpec::standard(DgpId::Flat)], &cfg).unwrap();
    let s = &res.summaries[0];
    let (m, se) = (s.mean_kappa.unwrap(), s.se_mean_kappa.unwrap());
    assert!(m.abs() < 3.0 * se, "mean {m} se {se}");
}

#[test]
fn parametric_coverage_approaches_nominal() {
    let spec = DgpSpec::standard(DgpId::StrongDecay).with_noise(0.1, NoiseKind::LogNormal);
    let reps = 400;
    let cov = |n| {
        let cfg = small_config(vec![Method::Parametric], reps, n, 9000);
        run_campaign(&[spec.clone()], &cfg).unwrap().summaries[0].coverage.unwrap()
    };
    let (c1, c5) = (cov(1000), cov(5000));
    let mc_se = (0.95f64 * 0.05 / reps as f64).sqrt();
    assert!((c5 - 0.95).abs() <= (c1 - 0.95).abs() + 2.0 * mc_se, "n=1000 {c1}, n=5000 {c5}");
    assert!((c5 - 0.95).abs() <= 3.0 * mc_se, "{c5}");
}

#[test]
fn recovery_noiseless_is_exact() {
    let cfg = RecoveryConfig { n_reps: 10, noise_sd: 0.0, ..RecoveryConfig::default() };
    let s = parameter_recovery_campaign(&cfg).unwrap();
    assert_eq!(s.n_failures, 0);
    assert!(s.nu.bias.abs() < 1e-8 && s.nu.rmse < 1e-8);
    assert!(s.q.bias.abs() < 1e-8 && s.q.rmse < 1e-8);
}

#[test]
fn recovery_noisy_centered() {
    let s = parameter_recovery_campaign(&RecoveryConfig::default()).unwrap();
    assert_eq!(s.n_failures, 0);
    assert!(s.nu.rmse <= 0.006, "{:?}", s.nu);
    assert!(s.q.rmse <= 0.03, "{:?}", s.q);
    assert!(s.nu.bias.abs() <= 2.0 * s.nu.se_of_mean, "{:?}", s.nu);
    assert!(s.q.qq_correlation.unwrap() > 0.98);
    assert_eq!(s.q.quantiles.len(), 19);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn summary_identities(seed in 0u64..10_000, id_ix in 0usize..4, n_obs in 200usize..800) {
        let spec = DgpSpec::standard(DgpId::ALL[id_ix]);
        let cfg = small_config(vec![Method::Parametric], 10, n_obs, seed);
        let res = run_campaign(&[spec], &cfg).unwrap();
        for s in &res.summaries {
            check_summary(s);
        }
    }
}
