//! Closed-form fine-grained bias–variance decomposition.
//!
//! The test error of the kernel predictor splits into a bias `B` and seven
//! variance terms indexed by the nonempty subsets of the three sources of
//! randomness: parameters `P`, training inputs `X` and label noise `ε`.
//! All of them are rational functions of the four trace ratios
//!
//! ```text
//! r = τ₂/τ₁   dr = τ₂′/τ₁′   a = τ₁′/τ₁²   b = τ₂′/τ₁²
//! ```
//!
//! which stay finite in the ridgeless limit even where `τ₁` itself diverges.
//! For the NTK without centering two more terms enter, built from the training
//! loss contribution `T₂` of the initial network output.

use crate::error::{DecompositionError, TauError};
use crate::moments::GaussianMoments;
use crate::tau::{
    ridgeless_ttau2, solve_near_ridgeless, solve_tau_ntk, ModelShape, TauSolution,
};

/// Ratios of the normalized traces that the decomposition depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRatios {
    /// `τ₂/τ₁`
    pub r: f64,
    /// `τ₂′/τ₁′`
    pub dr: f64,
    /// `τ₁′/τ₁²`
    pub a: f64,
    /// `τ₂′/τ₁²`
    pub b: f64,
    /// `T₂/(γ²τ₁′)`, with the `γ²` cancelled.
    pub t2_over_gamma_sq_dtau1: f64,
    /// `T₂/(γτ₁)²`, in the form with the `γ²` cancelled.
    pub t2_over_gamma_tau1_sq: f64,
}

impl TraceRatios {
    pub fn from_solution(sol: &TauSolution, shape: &ModelShape, m: &GaussianMoments) -> Self {
        let s = shape.s();
        let g = sol.gamma;
        let t1sq = sol.tau1 * sol.tau1;
        let c = s * (m.eta_prime - m.zeta) + g;
        let a = sol.dtau1 / t1sq;
        let b = sol.dtau2 / t1sq;
        let inner = sol.tau1 + c * sol.dtau1 + s * m.zeta * sol.dtau2;
        Self {
            r: sol.tau2 / sol.tau1,
            dr: sol.dtau2 / sol.dtau1,
            a,
            b,
            t2_over_gamma_sq_dtau1: s * inner / sol.dtau1,
            t2_over_gamma_tau1_sq: s * (1.0 / sol.tau1 + c * a + s * m.zeta * b),
        }
    }

    /// Ridgeless random-feature ratios from the explicit root of the quartic.
    /// Returns `None` where the closed forms degenerate to `0/0`.
    fn ridgeless_rf(phi: f64, psi: f64, m: &GaussianMoments) -> Result<Option<Self>, TauError> {
        let (z, eta) = (m.zeta, m.eta);
        let x = ridgeless_ttau2(phi, psi, m)?;
        let lin = z * x + eta;
        if (x + 1.0).abs() < 1e-10 || lin.abs() < 1e-12 * eta || x == 0.0 {
            return Ok(None);
        }
        let r = 1.0 + x;
        let (dr, a, b) = if phi < psi {
            let den = (phi - psi) * x * lin;
            (r, -z * r / den, -z * r * r / den)
        } else {
            let d = phi - psi;
            let num = z * z * x * (x * x * (1.0 + d) + 3.0 * x + 2.0)
                + z * eta * (-x * x * x * d + x * x * d + x + 1.0)
                - eta * eta * x * x * d;
            let den = z * (z * x * (x * x * d + x + 2.0) + eta * x * x * d + eta);
            let q = z * x * (x + 2.0) + eta;
            let base = x * (-d) * lin;
            let a = -(z * r / base - z * x * r / q);
            let b = -(z * r * r / base + x * r * (eta - z) / q);
            (num / den, a, b)
        };
        let out = Self {
            r,
            dr,
            a,
            b,
            t2_over_gamma_sq_dtau1: 0.0,
            t2_over_gamma_tau1_sq: 0.0,
        };
        let finite = [out.dr, out.a, out.b].iter().all(|v| v.is_finite());
        Ok(finite.then_some(out))
    }
}

/// Evaluates the trace ratios for a shape, including `γ = 0`. The flag is set
/// at the random-feature interpolation threshold, where only `r` and `dr` are
/// meaningful.
pub fn trace_ratios(shape: &ModelShape, m: &GaussianMoments) -> Result<(TraceRatios, bool), DecompositionError> {
    shape.validate()?;
    if shape.gamma > 0.0 {
        let sol = solve_tau_ntk(shape, m)?;
        return Ok((TraceRatios::from_solution(&sol, shape, m), false));
    }
    if shape.is_rf() {
        if shape.at_threshold() {
            let x = ridgeless_ttau2(shape.phi, shape.psi, m)?;
            let ratios = TraceRatios {
                r: 1.0 + x,
                dr: 1.0 + x,
                a: f64::NAN,
                b: f64::NAN,
                t2_over_gamma_sq_dtau1: 0.0,
                t2_over_gamma_tau1_sq: 0.0,
            };
            return Ok((ratios, true));
        }
        if let Some(r) = TraceRatios::ridgeless_rf(shape.phi, shape.psi, m)? {
            return Ok((r, false));
        }
    } else {
        match solve_tau_ntk(shape, m) {
            Ok(sol) => return Ok((TraceRatios::from_solution(&sol, shape, m), false)),
            Err(TauError::Divergent) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let sol = solve_near_ridgeless(shape, m)?;
    Ok((TraceRatios::from_solution(&sol, shape, m), false))
}

/// The eight terms of the decomposition of the test error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub b: f64,
    pub v_p: f64,
    pub v_x: f64,
    pub v_eps: f64,
    pub v_px: f64,
    pub v_peps: f64,
    pub v_xeps: f64,
    pub v_pxeps: f64,
    pub total_variance: f64,
    pub e_test: f64,
    /// Set at the ridgeless interpolation threshold. `v_px`, `v_pxeps` and the
    /// totals are NaN there.
    pub diverged: bool,
}

pub const TERM_NAMES: [&str; 8] = ["B", "V_P", "V_X", "V_eps", "V_PX", "V_Peps", "V_Xeps", "V_PXeps"];

impl Decomposition {
    /// Builds a decomposition from its eight terms, filling in the totals.
    pub fn from_terms(terms: [f64; 8], diverged: bool) -> Self {
        let [b, v_p, v_x, v_eps, v_px, v_peps, v_xeps, v_pxeps] = terms;
        let total_variance = v_p + v_x + v_eps + v_px + v_peps + v_xeps + v_pxeps;
        Self {
            b,
            v_p,
            v_x,
            v_eps,
            v_px,
            v_peps,
            v_xeps,
            v_pxeps,
            total_variance,
            e_test: b + total_variance,
            diverged,
        }
    }

    /// `[B, V_P, V_X, V_ε, V_PX, V_Pε, V_Xε, V_PXε]`
    pub fn terms(&self) -> [f64; 8] {
        [
            self.b,
            self.v_p,
            self.v_x,
            self.v_eps,
            self.v_px,
            self.v_peps,
            self.v_xeps,
            self.v_pxeps,
        ]
    }

    /// The variance terms keyed by `(P, X, ε)` membership, in the order of
    /// [`TERM_NAMES`] without the bias.
    pub fn variance_by_subset(&self) -> [((bool, bool, bool), f64); 7] {
        [
            ((true, false, false), self.v_p),
            ((false, true, false), self.v_x),
            ((false, false, true), self.v_eps),
            ((true, true, false), self.v_px),
            ((true, false, true), self.v_peps),
            ((false, true, true), self.v_xeps),
            ((true, true, true), self.v_pxeps),
        ]
    }

    pub fn from_ratios(r: &TraceRatios, shape: &ModelShape, diverged: bool) -> Self {
        let nu = shape.nu();
        let phi = shape.phi;
        let se2 = shape.sigma_eps * shape.sigma_eps;
        let bias = r.r * r.r;
        let q = (1.0 - r.r).powi(2);
        let v_p = r.dr - bias - nu * r.t2_over_gamma_sq_dtau1;
        let v_x = phi * bias * q / (1.0 - phi * q);
        // V_X/B written without B, so exact linear recovery is not singular
        let v_xeps = se2 * phi * q / (1.0 - phi * q);
        let (v_px, v_pxeps) = if diverged {
            (f64::NAN, f64::NAN)
        } else {
            (
                -r.b - bias - v_p - v_x + nu * r.t2_over_gamma_tau1_sq,
                se2 * (-r.a - 1.0) - v_xeps,
            )
        };
        Self::from_terms([bias, v_p, v_x, 0.0, v_px, 0.0, v_xeps, v_pxeps], diverged)
    }
}

/// Decomposition for the random-feature model.
pub fn decompose_rf(shape: &ModelShape, m: &GaussianMoments) -> Result<Decomposition, DecompositionError> {
    if !shape.is_rf() {
        return Err(TauError::InvalidShape(format!(
            "random-feature decomposition needs sigma_w2 = 0, got {}",
            shape.sigma_w2
        ))
        .into());
    }
    decompose_ntk(shape, m)
}

/// Decomposition for the NTK with any `σ_{W₂} ≥ 0`.
///
/// ```
/// use fgdd::decomposition::decompose_ntk;
/// use fgdd::moments::{compute_moments, Activation};
/// use fgdd::tau::ModelShape;
///
/// let m = compute_moments(&Activation::Tanh, 128).unwrap();
/// let shape = ModelShape::ntk(0.5, 0.25, 0.1, 1.0).with_noise(0.3);
/// let d = decompose_ntk(&shape, &m).unwrap();
/// let sum: f64 = d.terms().iter().sum();
/// assert!((sum - d.e_test).abs() < 1e-12);
/// ```
pub fn decompose_ntk(shape: &ModelShape, m: &GaussianMoments) -> Result<Decomposition, DecompositionError> {
    let (ratios, diverged) = trace_ratios(shape, m)?;
    Ok(Decomposition::from_ratios(&ratios, shape, diverged))
}

/// Alternative groupings of the same eight terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecombinedViews {
    pub b_sc: f64,
    pub v_sc: f64,
    pub v_d_cond: f64,
    pub v_d_comp: f64,
    pub v_p_cond: f64,
    pub v_p_comp: f64,
    pub v_p_bi: f64,
    pub v_d_bi: f64,
    pub v_pd: f64,
    pub dascoli_bias: f64,
    pub dascoli_init: f64,
    pub dascoli_samp: f64,
    pub dascoli_noise: f64,
}

impl RecombinedViews {
    pub fn semi_classical_total(&self) -> f64 {
        self.b_sc + self.v_sc
    }

    pub fn data_split_total(&self, bias: f64) -> f64 {
        bias + self.v_d_cond + self.v_d_comp
    }

    pub fn parameter_split_total(&self, bias: f64) -> f64 {
        bias + self.v_p_cond + self.v_p_comp
    }

    pub fn bivariate_total(&self, bias: f64) -> f64 {
        bias + self.v_p_bi + self.v_d_bi + self.v_pd
    }

    pub fn dascoli_total(&self) -> f64 {
        self.dascoli_bias + self.dascoli_init + self.dascoli_samp + self.dascoli_noise
    }
}

/// Regroups a decomposition. The semi-classical bias absorbs every term that
/// does not involve label noise; the two law-of-total-variance splits
/// condition on the data `(X, ε)` and on the parameters `P` respectively.
pub fn recombine(d: &Decomposition) -> RecombinedViews {
    let v_d_bi = d.v_x + d.v_eps + d.v_xeps;
    RecombinedViews {
        b_sc: d.b + d.v_p + d.v_x + d.v_px,
        v_sc: d.v_eps + d.v_peps + d.v_xeps + d.v_pxeps,
        v_d_cond: d.v_x + d.v_eps + d.v_xeps,
        v_d_comp: d.v_p + d.v_px + d.v_peps + d.v_pxeps,
        v_p_cond: d.v_p,
        v_p_comp: d.v_x + d.v_eps + d.v_px + d.v_peps + d.v_xeps + d.v_pxeps,
        v_p_bi: d.v_p,
        v_d_bi,
        v_pd: d.total_variance - d.v_p - v_d_bi,
        dascoli_bias: d.b,
        dascoli_init: d.v_p + d.v_px,
        dascoli_samp: d.v_x,
        dascoli_noise: d.v_pxeps + d.v_xeps + d.v_peps + d.v_eps,
    }
}

/// Asymptotic training loss `E_train = T₁ + ν T₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingLoss {
    pub t1: f64,
    pub t2: f64,
    pub e_train: f64,
}

/// Training loss at the solution's ridge.
pub fn training_loss(shape: &ModelShape, m: &GaussianMoments, tau: &TauSolution) -> TrainingLoss {
    let g = tau.gamma;
    let s = shape.s();
    let se2 = shape.sigma_eps * shape.sigma_eps;
    let t1 = -g * g * (se2 * tau.dtau1 + tau.dtau2);
    let t2 = s * g * g * (tau.tau1 + (s * (m.eta_prime - m.zeta) + g) * tau.dtau1 + s * m.zeta * tau.dtau2);
    TrainingLoss {
        t1,
        t2,
        e_train: t1 + shape.nu() * t2,
    }
}

/// Training loss for a shape, including the ridgeless limit. Above the
/// interpolation threshold the ridgeless loss vanishes; below it the kernel is
/// singular and the limit is finite and positive.
pub fn training_loss_for(shape: &ModelShape, m: &GaussianMoments) -> Result<TrainingLoss, DecompositionError> {
    shape.validate()?;
    if shape.gamma > 0.0 {
        return Ok(training_loss(shape, m, &solve_tau_ntk(shape, m)?));
    }
    match solve_tau_ntk(shape, m) {
        Ok(_) => Ok(TrainingLoss {
            t1: 0.0,
            t2: 0.0,
            e_train: 0.0,
        }),
        Err(TauError::Divergent) => {
            let sol = solve_near_ridgeless(shape, m)?;
            Ok(training_loss(shape, m, &sol))
        }
        Err(e) => Err(e.into()),
    }
}

/// Summary of the threshold checks on a ridgeless sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdReport {
    /// Largest increase of `B` between neighbouring widths.
    pub max_bias_increase: f64,
    /// Largest `V_PX` and `V_PXε` within `|1 − ψ/φ| < 10⁻³`.
    pub near_peak_v_px: f64,
    pub near_peak_v_pxeps: f64,
    /// max/min of `|φ − ψ| V_PX` for `10⁻⁶ ≤ |1 − ψ/φ| ≤ 10⁻³`, per side
    /// (below, above the threshold). NaN when a side has fewer than two points.
    pub scaled_spread: [f64; 2],
    /// Largest value within `|1 − ψ/φ| < 10⁻³` divided by the median over
    /// the sweep, for `B, V_P, V_X, V_Xε`.
    pub bounded_ratio: [f64; 4],
    /// False for linear activations, whose kernel never interpolates at `n₁ = m`.
    pub divergence_expected: bool,
}

/// Checks, on a ridgeless random-feature sweep over `ψ` at fixed `φ`, that the
/// bias does not increase with width, that only the `PX` and `PXε` terms blow
/// up at the threshold and that they do so like `1/|φ − ψ|`.
pub fn threshold_diagnostics(
    m: &GaussianMoments,
    phi: f64,
    sweep: &[(f64, Decomposition)],
) -> Result<ThresholdReport, DecompositionError> {
    let mut pts: Vec<&(f64, Decomposition)> = sweep.iter().filter(|(_, d)| !d.diverged).collect();
    // increasing width n₁/m = φ/ψ
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let fail = |check: &'static str, term: &'static str, psi: f64, detail: String| {
        Err(DecompositionError::ThresholdCheck {
            check,
            term,
            ratio: phi / psi,
            detail,
        })
    };

    let mut max_bias_increase = f64::NEG_INFINITY;
    for w in pts.windows(2) {
        let inc = w[1].1.b - w[0].1.b;
        max_bias_increase = max_bias_increase.max(inc);
        if inc > 1e-10 {
            return fail("monotone bias", "B", w[1].0, format!("B increased by {inc:.3e}"));
        }
    }

    let divergence_expected = m.eta - m.zeta > 1e-12 * m.eta;
    let near = |psi: f64, lo: f64, hi: f64| {
        let t = (1.0 - psi / phi).abs();
        t >= lo && t < hi
    };
    let mut near_peak_v_px = f64::NAN;
    let mut near_peak_v_pxeps = f64::NAN;
    for (psi, d) in pts.iter().filter(|(psi, _)| near(*psi, 0.0, 1e-3)) {
        let _ = psi;
        near_peak_v_px = near_peak_v_px.max(d.v_px);
        near_peak_v_pxeps = near_peak_v_pxeps.max(d.v_pxeps);
    }
    let mut scaled_spread = [f64::NAN; 2];
    if divergence_expected {
        if near_peak_v_px.is_nan() {
            return fail("divergence", "V_PX", phi, "no sweep point within 1e-3 of the threshold".into());
        }
        if near_peak_v_px <= 1e3 {
            return fail("divergence", "V_PX", phi, format!("peak {near_peak_v_px:.3e} <= 1e3"));
        }
        let noisy = pts.iter().any(|(_, d)| d.v_xeps > 0.0);
        if noisy && near_peak_v_pxeps <= 1e3 {
            return fail("divergence", "V_PXeps", phi, format!("peak {near_peak_v_pxeps:.3e} <= 1e3"));
        }
        for (side, below) in [(0, true), (1, false)] {
            let vals: Vec<f64> = pts
                .iter()
                .filter(|(psi, _)| (*psi > phi) == below && near(*psi, 0.5e-6, 2e-3))
                .map(|(psi, d)| (phi - psi).abs() * d.v_px)
                .collect();
            if vals.len() >= 2 {
                let hi = vals.iter().cloned().fold(f64::MIN, f64::max);
                let lo = vals.iter().cloned().fold(f64::MAX, f64::min);
                scaled_spread[side] = hi / lo;
                if !(hi / lo < 2.0) {
                    return fail(
                        "bounded scaled divergence",
                        "V_PX",
                        phi,
                        format!("|phi - psi| V_PX varies by {:.3}x", hi / lo),
                    );
                }
            }
        }
    }

    let mut bounded_ratio = [0.0; 4];
    let getters: [(&'static str, fn(&Decomposition) -> f64); 4] = [
        ("B", |d| d.b),
        ("V_P", |d| d.v_p),
        ("V_X", |d| d.v_x),
        ("V_Xeps", |d| d.v_xeps),
    ];
    for (i, (name, get)) in getters.iter().enumerate() {
        let mut vals: Vec<f64> = pts.iter().map(|(_, d)| get(d)).collect();
        if vals.is_empty() {
            continue;
        }
        vals.sort_by(f64::total_cmp);
        let median = vals[vals.len() / 2];
        let (at, max) = pts
            .iter()
            .filter(|(psi, _)| near(*psi, 0.0, 1e-3))
            .map(|(psi, d)| (*psi, get(d)))
            .fold((phi, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        let ratio = if max <= 1e-12 { 0.0 } else { max / median.max(1e-12) };
        bounded_ratio[i] = ratio;
        if ratio > 10.0 {
            return fail("bounded", name, at, format!("max/median = {ratio:.3e}"));
        }
    }

    Ok(ThresholdReport {
        max_bias_increase,
        near_peak_v_px,
        near_peak_v_pxeps,
        scaled_spread,
        bounded_ratio,
        divergence_expected,
    })
}
