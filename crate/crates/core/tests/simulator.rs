use faer::Mat;
use fgdd::anova::SubsetIndex;
use fgdd::moments::Activation;
use fgdd::simulator::{
    estimate_decomposition, predict, run_replicate, simulate_banks, DataDraw, Experiment, FeatureMode, ParamDraw,
    SimConfig, SimEstimates,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat<f64> {
    Mat::from_fn(rows, cols, |_, _| normal(rng))
}

fn draws(c: &SimConfig, seed: u64) -> (ParamDraw, DataDraw, Mat<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w1 = gaussian(&mut rng, c.n1, c.n0);
    let w2 = (0..c.n1).map(|_| c.sigma_w2 * normal(&mut rng)).collect();
    let x = gaussian(&mut rng, c.n0, c.m);
    let eps = (0..c.m).map(|_| c.sigma_eps * normal(&mut rng)).collect();
    let query = gaussian(&mut rng, c.n0, 64);
    (ParamDraw { w1, w2 }, DataDraw { x, eps }, query)
}

fn teacher(exp: &Experiment, x: &Mat<f64>) -> Vec<f64> {
    let n0 = exp.config.n0;
    (0..x.ncols())
        .map(|j| (0..n0).map(|i| exp.beta[i] * x[(i, j)]).sum::<f64>() / (n0 as f64).sqrt())
        .collect()
}

fn small(activation: Activation) -> SimConfig {
    SimConfig {
        n_test: 128,
        n_replicates: 16,
        sigma_eps: 0.3,
        ..SimConfig::rf(32, 96, 64, activation)
    }
}

#[test]
fn overparameterized_fit_interpolates() {
    let c = SimConfig {
        gamma: 1e-9,
        sigma_eps: 0.5,
        ..SimConfig::rf(32, 64, 512, Activation::Tanh)
    };
    let exp = Experiment::new(c.clone()).unwrap();
    let (p, d, _) = draws(&c, 1);
    let (_, loss) = predict(&exp, &p, &d, None, &d.x).unwrap();
    assert!(loss < 1e-6, "train loss {loss}");
}

#[test]
fn identity_features_recover_linear_teacher() {
    let c = SimConfig {
        gamma: 1e-8,
        ..SimConfig::rf(64, 1024, 128, Activation::Identity)
    };
    let exp = Experiment::new(c.clone()).unwrap();
    let (p, d, q) = draws(&c, 2);
    let (pred, _) = predict(&exp, &p, &d, None, &q).unwrap();
    let truth = teacher(&exp, &q);
    let err = pred.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64;
    assert!(err < 1e-3, "mse {err}");
}

#[test]
fn replicate_masks_select_base_and_copy() {
    let exp = Experiment::new(small(Activation::Tanh)).unwrap();
    let banks = simulate_banks(&exp, 1, 1).unwrap();
    for r in [0u32, 5] {
        let out = run_replicate(&exp, r).unwrap();
        let bank = &banks[r as usize];
        assert_eq!(out.predictions[7], bank.learner(0, false, 0, false, false));
        assert_eq!(out.predictions[0], bank.learner(0, true, 0, true, true));
        assert_eq!(out.predictions[0b001], bank.learner(0, false, 0, true, true));
        assert_eq!(out.predictions[0b110], bank.learner(0, true, 0, false, false));
        assert_eq!(out.train_loss, bank.train_loss);
    }
}

#[test]
fn replicates_are_independent_of_each_other() {
    let exp = Experiment::new(small(Activation::Tanh)).unwrap();
    let a = run_replicate(&exp, 3).unwrap();
    let b = run_replicate(&exp, 3).unwrap();
    let c = run_replicate(&exp, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.predictions[7], c.predictions[7]);
    // base and copy draws differ within a replicate
    assert_ne!(a.predictions[7], a.predictions[0]);
}

#[test]
fn noiseless_labels_make_noise_masks_redundant() {
    let c = SimConfig {
        sigma_eps: 0.0,
        ..small(Activation::Tanh)
    };
    let est = estimate_decomposition(&Experiment::new(c).unwrap()).unwrap();
    for s in 0..4u32 {
        assert_eq!(est.h.get(SubsetIndex(s)).unwrap(), est.h.get(SubsetIndex(s | 4)).unwrap());
    }
    for s in [0b100, 0b101, 0b110, 0b111] {
        assert_eq!(est.v.get(SubsetIndex(s)), 0.0);
    }
}

#[test]
fn terms_are_consistent() {
    let est = estimate_decomposition(&Experiment::new(small(Activation::Tanh)).unwrap()).unwrap();
    let explained = est.v.explained();
    assert!((explained - est.total_variance.value).abs() < 1e-12);
    // the pure noise term and the parameter-noise term vanish in expectation
    for s in [0b100, 0b101] {
        assert!(est.variance(SubsetIndex(s)).within(0.0, 4.0));
    }
    let total = est.bias.value + est.total_variance.value;
    let se = (est.bias.std_error.powi(2) + est.total_variance.std_error.powi(2) + est.e_test.std_error.powi(2)).sqrt();
    assert!((total - est.e_test.value).abs() < 4.0 * se);
}

#[test]
fn ntk_without_second_layer_matches_rf() {
    let rf = small(Activation::Tanh);
    let ntk = SimConfig::ntk(rf.n0, rf.m, rf.n1, Activation::Tanh, 0.0);
    let ntk = SimConfig {
        sigma_eps: rf.sigma_eps,
        n_test: rf.n_test,
        n_replicates: rf.n_replicates,
        ..ntk
    };
    let a = run_replicate(&Experiment::new(rf).unwrap(), 2).unwrap();
    let b = run_replicate(&Experiment::new(ntk).unwrap(), 2).unwrap();
    for (x, y) in a.predictions.iter().flatten().zip(b.predictions.iter().flatten()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn identity_activation_is_unbiased() {
    let c = SimConfig {
        sigma_eps: 0.3,
        n_replicates: 16,
        n_test: 128,
        ..SimConfig::rf(16, 128, 64, Activation::Identity)
    };
    let est = estimate_decomposition(&Experiment::new(c).unwrap()).unwrap();
    assert!(est.bias.within(0.0, 4.0), "bias {:?}", est.bias);
    assert!(est.bias.value.abs() < 1e-3);
}

#[test]
fn gaussian_equivalent_features_match_exact() {
    let base = SimConfig {
        n_replicates: 32,
        ..SimConfig::rf(64, 128, 96, Activation::Tanh)
    };
    let gauss = SimConfig {
        feature_mode: FeatureMode::GaussianEquivalent,
        ..base.clone()
    };
    let a = estimate_decomposition(&Experiment::new(base).unwrap()).unwrap();
    let b = estimate_decomposition(&Experiment::new(gauss).unwrap()).unwrap();
    let close = |x: fgdd::stats::Estimate, y: fgdd::stats::Estimate| {
        (x.value - y.value).abs() < 3.0 * (x.std_error.powi(2) + y.std_error.powi(2)).sqrt()
    };
    assert!(close(a.e_test, b.e_test), "{:?} vs {:?}", a.e_test, b.e_test);
    assert!(close(a.bias, b.bias), "{:?} vs {:?}", a.bias, b.bias);
}

#[test]
fn parameter_ensembles_halve_parameter_terms() {
    let exp = Experiment::new(small(Activation::Tanh)).unwrap();
    let banks = simulate_banks(&exp, 2, 1).unwrap();
    let one = SimEstimates::from_banks(&banks, &exp.test_labels, 1, 1).unwrap();
    let two = SimEstimates::from_banks(&banks, &exp.test_labels, 2, 1).unwrap();
    for s in [0b001u32, 0b011, 0b111] {
        let (a, b) = (one.variance(SubsetIndex(s)), two.variance(SubsetIndex(s)));
        let se = (0.25 * a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!((b.value - 0.5 * a.value).abs() < 4.0 * se, "mask {s:03b}: {a:?} {b:?}");
    }
    let (a, b) = (one.variance(SubsetIndex(0b010)), two.variance(SubsetIndex(0b010)));
    assert!((a.value - b.value).abs() < 4.0 * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = small(Activation::Tanh);
    c.m = 0;
    assert!(Experiment::new(c).is_err());
    let c = SimConfig {
        gamma: -1.0,
        ..small(Activation::Tanh)
    };
    assert!(Experiment::new(c).is_err());
    let c = SimConfig {
        n_replicates: 4,
        ..small(Activation::Tanh)
    };
    assert!(estimate_decomposition(&Experiment::new(c).unwrap()).is_err());
}
