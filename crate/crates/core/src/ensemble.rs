//! Ensembles over independent parameter draws (`k_p`) and independent
//! datasets (`k_d`).
//!
//! Averaging `k_p · k_d` learners leaves the bias alone and divides each
//! variance term by the number of independent copies of its sources:
//! `V_P/k_p`, `V_X/k_d`, `V_ε/k_d`, `V_Xε/k_d` and the interactions with `P`
//! by `k_p k_d`.

use std::fmt;

use crate::decomposition::Decomposition;
use crate::error::EnsembleError;
use crate::simulator::{simulate_banks, Experiment, SimEstimates};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EnsembleSpec {
    pub k_p: usize,
    pub k_d: usize,
}

impl EnsembleSpec {
    pub fn new(k_p: usize, k_d: usize) -> Result<Self, EnsembleError> {
        if k_p == 0 || k_d == 0 {
            return Err(EnsembleError::BadSize);
        }
        Ok(Self { k_p, k_d })
    }

    pub fn single() -> Self {
        Self { k_p: 1, k_d: 1 }
    }

    pub fn learners(&self) -> usize {
        self.k_p * self.k_d
    }
}

impl fmt::Display for EnsembleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.k_p, self.k_d)
    }
}

fn weight(k: f64) -> f64 {
    if k.is_infinite() {
        0.0
    } else {
        1.0 / k
    }
}

fn scaled(v: f64, w: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        v * w
    }
}

/// Scaling with real ensemble sizes; `f64::INFINITY` gives the limit, in
/// which the terms that vanish do so even where they diverge.
pub fn scale_continuous(d: &Decomposition, k_p: f64, k_d: f64) -> Decomposition {
    let wp = weight(k_p);
    let wd = weight(k_d);
    let wpd = wp * wd;
    let terms = [
        d.b,
        scaled(d.v_p, wp),
        scaled(d.v_x, wd),
        scaled(d.v_eps, wd),
        scaled(d.v_px, wpd),
        scaled(d.v_peps, wpd),
        scaled(d.v_xeps, wd),
        scaled(d.v_pxeps, wpd),
    ];
    Decomposition::from_terms(terms, d.diverged && wpd != 0.0)
}

/// ```
/// use fgdd::decomposition::Decomposition;
/// use fgdd::ensemble::{scale_decomposition, EnsembleSpec};
///
/// let d = Decomposition::from_terms([0.1, 1.0, 1.0, 0.0, 4.0, 0.0, 0.5, 2.0], false);
/// let s = scale_decomposition(&d, EnsembleSpec::new(2, 2).unwrap());
/// assert_eq!(s.v_px, 1.0);
/// assert_eq!(s.b, d.b);
/// ```
pub fn scale_decomposition(d: &Decomposition, spec: EnsembleSpec) -> Decomposition {
    scale_continuous(d, spec.k_p as f64, spec.k_d as f64)
}

/// Infinitely many parameter draws: every term involving `P` vanishes.
pub fn parameter_limit(d: &Decomposition) -> Decomposition {
    scale_continuous(d, f64::INFINITY, 1.0)
}

/// Infinitely many datasets: only the bias and `V_P` survive.
pub fn data_limit(d: &Decomposition) -> Decomposition {
    scale_continuous(d, 1.0, f64::INFINITY)
}

pub fn ensemble_test_error(d: &Decomposition, spec: EnsembleSpec) -> f64 {
    ensemble_test_error_continuous(d, spec.k_p as f64, spec.k_d as f64)
}

/// `B + V_P/k_p + (V_X + V_ε + V_Xε)/k_d + (V_PX + V_Pε + V_PXε)/(k_p k_d)`
pub fn ensemble_test_error_continuous(d: &Decomposition, k_p: f64, k_d: f64) -> f64 {
    scale_continuous(d, k_p, k_d).e_test
}

/// Best `k_d/k_p` under a fixed budget `k_p k_d`:
/// `(V_X + V_ε + V_Xε)/V_P`.
pub fn optimal_ratio(d: &Decomposition) -> Result<f64, EnsembleError> {
    let data = d.v_x + d.v_eps + d.v_xeps;
    if !(d.v_p > 1e-14 * (data.abs() + d.v_p.abs()).max(1e-300)) {
        return Err(EnsembleError::NonPositiveParameterVariance(d.v_p));
    }
    Ok(data / d.v_p)
}

/// Allocation of a budget of `k_p k_d` learners.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetSplit {
    pub budget: usize,
    /// Optimal `k_d/k_p` of the continuous relaxation.
    pub continuous_ratio: f64,
    /// `k_p` at the continuous optimum.
    pub continuous_k_p: f64,
    pub continuous_error: f64,
    /// Best divisor pair.
    pub best: EnsembleSpec,
    pub best_error: f64,
    /// Every divisor pair with its error, in increasing `k_p`.
    pub pairs: Vec<(EnsembleSpec, f64)>,
}

/// Enumerates the divisor pairs of `budget` and compares them with the
/// continuous optimum.
pub fn fixed_budget(d: &Decomposition, budget: usize) -> Result<BudgetSplit, EnsembleError> {
    if budget == 0 {
        return Err(EnsembleError::BadSize);
    }
    let ratio = optimal_ratio(d)?;
    let k = budget as f64;
    let continuous_k_p = (k / ratio).sqrt();
    let pairs: Vec<(EnsembleSpec, f64)> = (1..=budget)
        .filter(|p| budget.is_multiple_of(*p))
        .map(|p| {
            let spec = EnsembleSpec { k_p: p, k_d: budget / p };
            (spec, ensemble_test_error(d, spec))
        })
        .collect();
    let (best, best_error) = pairs
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("budget has divisors");
    Ok(BudgetSplit {
        budget,
        continuous_ratio: ratio,
        continuous_k_p,
        continuous_error: ensemble_test_error_continuous(d, continuous_k_p, k / continuous_k_p),
        best,
        best_error,
        pairs,
    })
}

/// `dE/dk_p` along `k_d = budget/k_p`, by central differences.
pub fn budget_derivative(d: &Decomposition, budget: f64, k_p: f64) -> f64 {
    let h = 1e-5 * k_p;
    let e = |kp: f64| ensemble_test_error_continuous(d, kp, budget / kp);
    (e(k_p + h) - e(k_p - h)) / (2.0 * h)
}

/// Simulated decomposition of a `k_p × k_d` ensemble.
pub fn simulate_ensemble(exp: &Experiment, spec: EnsembleSpec) -> Result<SimEstimates, EnsembleError> {
    Ok(simulate_ensembles(exp, &[spec])?.remove(0))
}

/// Several ensemble sizes from one set of draws: smaller ensembles use the
/// first members of the largest one.
pub fn simulate_ensembles(exp: &Experiment, specs: &[EnsembleSpec]) -> Result<Vec<SimEstimates>, EnsembleError> {
    if specs.is_empty() {
        return Ok(Vec::new());
    }
    let k_p = specs.iter().map(|s| s.k_p).max().unwrap_or(1);
    let k_d = specs.iter().map(|s| s.k_d).max().unwrap_or(1);
    let banks = simulate_banks(exp, k_p, k_d)?;
    specs
        .iter()
        .map(|s| SimEstimates::from_banks(&banks, &exp.test_labels, s.k_p, s.k_d).map_err(EnsembleError::from))
        .collect()
}
