//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.
//!
//! The Monte Carlo criteria run at full scale and take several minutes in
//! release mode.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use fgdd::anova::{mobius_variance, HTable, SubsetIndex};
use fgdd::decomposition::{
    decompose_ntk, decompose_rf, recombine, threshold_diagnostics, training_loss_for, Decomposition, TERM_NAMES,
};
use fgdd::ensemble::{budget_derivative, fixed_budget, optimal_ratio, scale_decomposition, EnsembleSpec};
use fgdd::moments::{compute_moments, sigma_eps_for_snr, stein_check, Activation, GaussianMoments};
use fgdd::simulator::{simulate_banks, Experiment, PredictionBank, SimConfig, SimEstimates};
use fgdd::stats::{mean_estimate, Estimate};
use fgdd::tau::{ridgeless_ttau2, solve_tau_ntk, ModelShape, TauSolution, RESIDUAL_TOL};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const Z_LIMIT: f64 = 4.0;

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    // written to the handle directly so the line shows without --nocapture
    let _ = writeln!(std::io::stderr().lock(), "criterion {n:>2} {verdict} {name}: {detail}");
}

fn moments(a: &Activation) -> GaussianMoments {
    static CACHE: OnceLock<[GaussianMoments; 3]> = OnceLock::new();
    let [tanh, identity, relu] = CACHE.get_or_init(|| {
        [Activation::Tanh, Activation::Identity, Activation::Relu].map(|a| compute_moments(&a, 128).unwrap())
    });
    match a {
        Activation::Tanh => *tanh,
        Activation::Identity => *identity,
        Activation::Relu => *relu,
        Activation::Custom { .. } => compute_moments(a, 128).unwrap(),
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// The 20 × 20 grid over `(φ, ψ) ∈ [1/32, 4]²` for every activation, model and ridge.
fn theory_grid(gammas: &[f64]) -> Vec<(Activation, ModelShape)> {
    let axis = log_grid(1.0 / 32.0, 4.0, 20);
    let mut out = Vec::new();
    for act in [Activation::Tanh, Activation::Identity] {
        for &sigma_w2 in &[0.0, 1.0] {
            for &gamma in gammas {
                for &phi in &axis {
                    for &psi in &axis {
                        out.push((act.clone(), ModelShape::ntk(phi, psi, gamma, sigma_w2)));
                    }
                }
            }
        }
    }
    out
}

#[test]
fn criterion_01_moments() {
    let t = Instant::now();
    let relu = compute_moments(&Activation::Relu, 128).unwrap();
    let err = (relu.eta - 0.5).abs().max((relu.zeta - 0.25).abs()).max((relu.eta_prime - 0.5).abs());
    let stein = [Activation::Identity, Activation::Relu, Activation::Tanh]
        .iter()
        .map(|a| stein_check(a, 128))
        .fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    let pass = err < 1e-12 && stein < 1e-8 && secs < 1.0;
    report(
        1,
        "moments",
        pass,
        &format!("relu error {err:.1e}, max stein gap {stein:.1e}, {secs:.3} s"),
    );
    assert!(pass);
}

#[test]
fn criterion_02_solver_residuals() {
    let t = Instant::now();
    let (mut accepted, mut worst) = (0usize, 0.0f64);
    for (act, shape) in theory_grid(&[0.0, 1e-3, 1e-1, 1.0]) {
        if let Ok(sol) = solve_tau_ntk(&shape, &moments(&act)) {
            accepted += 1;
            worst = worst.max(sol.residual_max);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst < RESIDUAL_TOL && secs < 30.0 && accepted > 0;
    report(
        2,
        "solver residuals",
        pass,
        &format!("{accepted} solutions, worst scaled residual {worst:.1e}, {secs:.1} s"),
    );
    assert!(pass);
}

fn solve_at(shape: &ModelShape, gamma: f64, m: &GaussianMoments) -> Option<TauSolution> {
    solve_tau_ntk(&shape.with_gamma(gamma), m).ok()
}

#[test]
fn criterion_03_derivative_oracle() {
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut where_worst = String::new();
    for (act, shape) in theory_grid(&[1e-3, 1e-1, 1.0]) {
        let m = moments(&act);
        let Some(sol) = solve_at(&shape, shape.gamma, &m) else { continue };
        let h = 1e-3 * shape.gamma;
        let pts: Option<Vec<TauSolution>> =
            [-2.0, -1.0, 1.0, 2.0].iter().map(|k| solve_at(&shape, shape.gamma + k * h, &m)).collect();
        let Some(p) = pts else { continue };
        // fourth-order central difference
        let fd = |f: fn(&TauSolution) -> f64| (8.0 * (f(&p[2]) - f(&p[1])) - (f(&p[3]) - f(&p[0]))) / (12.0 * h);
        let fd1 = fd(|s| s.tau1);
        let fd2 = fd(|s| s.tau2);
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
        let e = rel(sol.dtau1, fd1).max(rel(sol.dtau2, fd2));
        checked += 1;
        if e > worst {
            worst = e;
            where_worst = format!("{} {:?}", act.name(), shape);
        }
    }
    let pass = worst < 1e-6 && checked > 0;
    report(
        3,
        "derivative oracle",
        pass,
        &format!("{checked} points, worst relative gap {worst:.1e} at {where_worst}"),
    );
    assert!(pass);
}

#[test]
fn criterion_04_ridgeless_closed_form() {
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut where_worst = String::new();
    let mut raw_diagonal = 0.0f64;
    for (act, shape) in theory_grid(&[1e-9]) {
        if !shape.is_rf() {
            continue;
        }
        let m = moments(&act);
        let (Ok(sol), Ok(root)) = (solve_tau_ntk(&shape, &m), ridgeless_ttau2(shape.phi, shape.psi, &m)) else {
            continue;
        };
        let mut ratio = sol.tau2 / sol.tau1;
        if shape.at_threshold() {
            // τ₂/τ₁ approaches its limit like √γ on the threshold; one
            // Richardson step in √γ removes the leading term.
            raw_diagonal = raw_diagonal.max((ratio - (1.0 + root)).abs());
            let Ok(wide) = solve_tau_ntk(&shape.with_gamma(4.0 * shape.gamma), &m) else { continue };
            ratio = 2.0 * ratio - wide.tau2 / wide.tau1;
        }
        let e = (ratio - (1.0 + root)).abs();
        checked += 1;
        if e > worst {
            worst = e;
            where_worst = format!("{} phi {:.4} psi {:.4}", act.name(), shape.phi, shape.psi);
        }
    }
    let pass = worst < 1e-5 && checked > 0;
    report(
        4,
        "ridgeless closed form",
        pass,
        &format!(
            "{checked} points, worst gap {worst:.1e} at {where_worst} (threshold points before extrapolation {raw_diagonal:.1e})"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_threshold_properties() {
    let t = Instant::now();
    let m = moments(&Activation::Tanh);
    let phi = 1.0 / 16.0;
    let base = ModelShape::rf(phi, phi, 0.0).with_noise(sigma_eps_for_snr(100.0));
    let mut psis = log_grid(phi / 16.0, phi * 16.0, 52);
    for k in 3..=6 {
        let d = 10f64.powi(-k);
        psis.extend([phi * (1.0 - d), phi * (1.0 + d)]);
    }
    psis.sort_by(f64::total_cmp);
    let sweep: Vec<(f64, Decomposition)> = psis
        .iter()
        .map(|&psi| (psi, decompose_rf(&ModelShape { psi, ..base }, &m).unwrap()))
        .collect();
    let result = threshold_diagnostics(&m, phi, &sweep);
    let secs = t.elapsed().as_secs_f64();
    let pass = result.is_ok() && psis.len() == 60 && secs < 10.0;
    let detail = match &result {
        Ok(r) => format!(
            "max B increase {:.1e}, peak V_PX {:.1e}, peak V_PXeps {:.1e}, scaled spread {:.3?}, bounded ratios {:.2?}, {secs:.2} s",
            r.max_bias_increase, r.near_peak_v_px, r.near_peak_v_pxeps, r.scaled_spread, r.bounded_ratio
        ),
        Err(e) => e.to_string(),
    };
    report(5, "threshold properties", pass, &detail);
    assert!(pass);
}

/// Shared criterion 6/8 simulation at one width, with banks large enough for
/// the 2 × 2 ensemble.
struct Width {
    n1: usize,
    theory: Decomposition,
    banks: Vec<PredictionBank>,
    labels: Vec<f64>,
    secs: f64,
}

impl Width {
    fn estimates(&self, k_p: usize, k_d: usize) -> SimEstimates {
        SimEstimates::from_banks(&self.banks, &self.labels, k_p, k_d).unwrap()
    }
}

const WIDTHS: [usize; 5] = [256, 512, 1024, 2048, 4096];
const ENSEMBLE_WIDTH: usize = 1024;

fn scaled_config(n1: usize) -> SimConfig {
    let mut c = SimConfig::rf(512, 1024, n1, Activation::Tanh);
    c.gamma = 1e-6;
    c.sigma_eps = sigma_eps_for_snr(5.0);
    c.n_replicates = 64;
    c.n_test = 2048;
    c
}

fn width(n1: usize) -> &'static Width {
    static CELLS: [OnceLock<Width>; 5] = [const { OnceLock::new() }; 5];
    let i = WIDTHS.iter().position(|&w| w == n1).unwrap();
    CELLS[i].get_or_init(|| {
        let t = Instant::now();
        let c = scaled_config(n1);
        let exp = Experiment::new(c.clone()).unwrap();
        let k = if n1 == ENSEMBLE_WIDTH { 2 } else { 1 };
        let banks = simulate_banks(&exp, k, k).unwrap();
        Width {
            n1,
            theory: decompose_rf(&c.shape(), &exp.moments).unwrap(),
            banks,
            labels: exp.test_labels.clone(),
            secs: t.elapsed().as_secs_f64(),
        }
    })
}

/// Largest |z| over the nonzero terms and the test error.
fn worst_z(est: &SimEstimates, theory: &Decomposition) -> (f64, String) {
    let mut worst = (0.0, String::new());
    let t = theory.terms();
    for (i, e) in est.terms().iter().enumerate() {
        if t[i] == 0.0 {
            continue;
        }
        let z = e.z_score(t[i]);
        if z.abs() > worst.0 {
            worst = (z.abs(), TERM_NAMES[i].to_string());
        }
    }
    let z = est.e_test.z_score(theory.e_test);
    if z.abs() > worst.0 {
        worst = (z.abs(), "E_test".into());
    }
    worst
}

#[test]
fn criterion_06_theory_vs_monte_carlo() {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut secs = 0.0;
    for n1 in WIDTHS {
        let w = width(n1);
        secs += w.secs;
        let est = w.estimates(1, 1);
        let (z, term) = worst_z(&est, &w.theory);
        pass &= z <= Z_LIMIT;
        parts.push(format!("n1={} max|z| {z:.2} ({term})", w.n1));
    }

    // Without label noise the ε bit must not change any coupling.
    let mut c = scaled_config(256);
    c.sigma_eps = 0.0;
    c.n_replicates = 8;
    let exp = Experiment::new(c).unwrap();
    let banks = simulate_banks(&exp, 1, 1).unwrap();
    let est = SimEstimates::from_banks(&banks, &exp.test_labels, 1, 1).unwrap();
    let eps_free = (0..4u32).all(|s| est.h.get(SubsetIndex(s)).unwrap() == est.h.get(SubsetIndex(s | 4)).unwrap());
    pass &= eps_free;
    parts.push(format!("eps-bit invariance at sigma_eps = 0: {eps_free}"));
    parts.push(format!("{secs:.0} s"));
    report(6, "theory vs Monte Carlo", pass, &parts.join(", "));
    assert!(pass);
}

#[test]
fn criterion_07_anova_oracle() {
    // Y = X₁ + 2X₂ + X₁X₂ with a third, unused input.
    let y = |x: [f64; 3]| x[0] + 2.0 * x[1] + x[0] * x[1];
    let exact = HTable::from_values(3, &[0.0, 1.0, 4.0, 6.0, 0.0, 1.0, 4.0, 6.0], None).unwrap();
    let v = mobius_variance(&exact).unwrap();
    let order = [1u32, 2, 4, 3, 5, 6, 7];
    let expected = [1.0, 4.0, 0.0, 1.0, 0.0, 0.0, 0.0];
    let got: Vec<f64> = order.iter().map(|&s| v.get(SubsetIndex(s))).collect();
    let exact_ok = got == expected;

    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut draw = || -> [f64; 3] { std::array::from_fn(|_| StandardNormal.sample(&mut rng)) };
    let mut contrasts = std::array::from_fn::<Vec<f64>, 8, _>(|_| Vec::with_capacity(n));
    let mut hs = std::array::from_fn::<Vec<f64>, 8, _>(|_| Vec::with_capacity(n));
    for _ in 0..n {
        let (x, x2) = (draw(), draw());
        let base = y(x);
        let h: [f64; 8] = std::array::from_fn(|s| {
            let copy: [f64; 3] = std::array::from_fn(|j| if s >> j & 1 == 1 { x[j] } else { x2[j] });
            base * y(copy)
        });
        for s in 0..8usize {
            hs[s].push(h[s]);
            let c: f64 = (0..8usize)
                .filter(|t| t & !s == 0)
                .map(|t| if (s ^ t).count_ones() % 2 == 0 { h[t] } else { -h[t] })
                .sum();
            contrasts[s].push(c);
        }
    }
    let means: Vec<f64> = hs.iter().map(|h| mean_estimate(h).value).collect();
    let mc = mobius_variance(&HTable::from_values(3, &means, None).unwrap()).unwrap();
    let mut worst = 0.0f64;
    for (&s, &want) in order.iter().zip(&expected) {
        // terms that vanish identically come out as pure roundoff
        let se = mean_estimate(&contrasts[s as usize]).std_error.max(1e-12);
        worst = worst.max(Estimate::new(mc.get(SubsetIndex(s)), se).z_score(want).abs());
    }
    let pass = exact_ok && worst <= Z_LIMIT;
    report(
        7,
        "ANOVA oracle",
        pass,
        &format!("exact {got:?}, Monte Carlo max|z| {worst:.2} over {n} samples"),
    );
    assert!(pass);
}

#[test]
fn criterion_08_ensemble_algebra() {
    let w = width(ENSEMBLE_WIDTH);
    let mut pass = true;
    let mut parts = Vec::new();
    for (k_p, k_d) in [(1, 1), (2, 1), (1, 2), (2, 2)] {
        let predicted = scale_decomposition(&w.theory, EnsembleSpec::new(k_p, k_d).unwrap());
        let (z, term) = worst_z(&w.estimates(k_p, k_d), &predicted);
        pass &= z <= Z_LIMIT;
        parts.push(format!("({k_p},{k_d}) max|z| {z:.2} ({term})"));
    }
    let single = w.estimates(1, 1).e_test;
    let double = w.estimates(2, 2).e_test;
    let gap = single.value - double.value;
    // The two share draws, so this bound on the combined error is conservative.
    let se = single.std_error + double.std_error;
    pass &= gap > Z_LIMIT * se;
    parts.push(format!(
        "peak E_test (1,1) {:.3} vs (2,2) {:.3}, gap {:.1} combined SE",
        single.value,
        double.value,
        gap / se
    ));
    report(8, "ensemble algebra", pass, &parts.join(", "));
    assert!(pass);
}

#[test]
fn criterion_09_optimal_ratio() {
    let m = moments(&Activation::Tanh);
    let base = ModelShape::rf(0.5, 0.5, 1e-6).with_noise(sigma_eps_for_snr(5.0));
    let mut worst_derivative = 0.0f64;
    let mut ratios = Vec::new();
    for width in log_grid(1.0 / 16.0, 16.0, 33) {
        let d = decompose_rf(&ModelShape { psi: base.phi / width, ..base }, &m).unwrap();
        let r = optimal_ratio(&d).unwrap();
        ratios.push((width, r));
        for budget in [4usize, 16, 64] {
            let split = fixed_budget(&d, budget).unwrap();
            worst_derivative = worst_derivative.max(budget_derivative(&d, budget as f64, split.continuous_k_p).abs());
        }
    }
    let small = ratios.first().unwrap().1;
    let large = ratios.last().unwrap().1;
    let crossing = ratios.windows(2).find(|w| (w[0].1 - 1.0) * (w[1].1 - 1.0) <= 0.0).map(|w| w[0].0);
    let pass = worst_derivative < 1e-8 && small < 1.0 && large > 1.0 && crossing.is_some();
    report(
        9,
        "optimal ratio",
        pass,
        &format!(
            "max |dE/dk_p| {worst_derivative:.1e}, ratio {small:.3} at n1/m=1/16, {large:.3} at 16, crosses 1 near n1/m={:.3}",
            crossing.unwrap_or(f64::NAN)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_training_loss() {
    let mut pass = true;
    let mut parts = Vec::new();
    for gamma in [0.05, 0.2] {
        let mut c = SimConfig::rf(256, 512, 1024, Activation::Tanh);
        c.gamma = gamma;
        c.sigma_eps = 0.2f64.sqrt();
        c.n_replicates = 64;
        c.n_test = 256;
        let exp = Experiment::new(c.clone()).unwrap();
        let banks = simulate_banks(&exp, 1, 1).unwrap();
        let est = SimEstimates::from_banks(&banks, &exp.test_labels, 1, 1).unwrap();
        let theory = training_loss_for(&c.shape(), &exp.moments).unwrap().e_train;
        let z = est.e_train.z_score(theory);
        pass &= z.abs() <= 3.0;
        parts.push(format!("gamma {gamma}: theory {theory:.5}, simulated {}, z {z:.2}", est.e_train));
    }
    report(10, "training loss", pass, &parts.join(", "));
    assert!(pass);
}

#[test]
fn criterion_11_recombination_identities() {
    let mut worst = 0.0f64;
    let mut worst_vsc = 0.0f64;
    let mut checked = 0usize;
    for (act, shape) in theory_grid(&[0.0, 1e-3, 1e-1, 1.0]) {
        let m = moments(&act);
        for noise in [0.0, 0.5] {
            for centering in [false, true] {
                let shape = shape.with_noise(noise).with_centering(centering);
                let Ok(d) = decompose_ntk(&shape, &m) else { continue };
                if d.diverged || !d.e_test.is_finite() {
                    continue;
                }
                let v = recombine(&d);
                let scale = d.e_test.abs().max(1.0);
                for total in [
                    v.semi_classical_total(),
                    v.data_split_total(d.b),
                    v.parameter_split_total(d.b),
                    v.bivariate_total(d.b),
                    v.dascoli_total(),
                ] {
                    worst = worst.max((total - d.e_test).abs() / scale);
                }
                if noise == 0.0 {
                    worst_vsc = worst_vsc.max(v.v_sc.abs());
                }
                checked += 1;
            }
        }
    }
    let pass = worst < 1e-12 && worst_vsc == 0.0 && checked > 0;
    report(
        11,
        "recombination identities",
        pass,
        &format!("{checked} decompositions, worst relative gap {worst:.1e}, max |V_sc| at sigma_eps = 0: {worst_vsc:.1e}"),
    );
    assert!(pass);
}
