//! Order-stable reductions and resampling error bars.

use std::fmt;

/// Pairwise (cascade) summation. The result depends only on the slice
/// contents, so reductions are reproducible regardless of how the values were
/// produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Standard error from delete-one estimates `θ₍ᵢ₎`:
/// `sqrt((n−1)/n Σ (θ₍ᵢ₎ − θ̄)²)`.
pub fn jackknife_se(leave_one_out: &[f64]) -> f64 {
    let n = leave_one_out.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(leave_one_out);
    let dev: Vec<f64> = leave_one_out.iter().map(|t| (t - m).powi(2)).collect();
    ((n as f64 - 1.0) / n as f64 * pairwise_sum(&dev)).sqrt()
}

/// Mean of per-replicate values with its jackknife error. For a mean the
/// jackknife reproduces the usual `s/√n`.
pub fn mean_estimate(xs: &[f64]) -> Estimate {
    let n = xs.len();
    let total = pairwise_sum(xs);
    let loo: Vec<f64> = xs.iter().map(|x| (total - x) / (n as f64 - 1.0)).collect();
    Estimate::new(total / n as f64, jackknife_se(&loo))
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn new(value: f64, std_error: f64) -> Self {
        Self { value, std_error }
    }

    /// `(value − reference)/std_error`. Zero when both the error and the
    /// discrepancy vanish.
    pub fn z_score(&self, reference: f64) -> f64 {
        let d = self.value - reference;
        if d == 0.0 {
            0.0
        } else {
            d / self.std_error
        }
    }

    pub fn within(&self, reference: f64, n_se: f64) -> bool {
        self.z_score(reference).abs() <= n_se
    }
}

impl fmt::Display for Estimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} ± {:.2e}", self.value, self.std_error)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499500.0);
    }

    #[test]
    fn jackknife_of_mean_is_classical_se() {
        let xs = [1.0, 4.0, 2.0, 8.0, 5.0, 7.0];
        let n = xs.len() as f64;
        let m = mean(&xs);
        let s2 = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        let e = mean_estimate(&xs);
        assert!((e.value - m).abs() < 1e-15);
        assert!((e.std_error - (s2 / n).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn exact_agreement_has_zero_z() {
        assert_eq!(Estimate::new(0.0, 0.0).z_score(0.0), 0.0);
        assert!(Estimate::new(1.0, 0.5).within(0.0, 2.0));
    }
}
