//! Gaussian moments of activation functions.
//!
//! Every asymptotic formula in this crate is parameterized by three numbers
//! computed from the student activation `σ` under a standard normal input `g`:
//!
//! | symbol | definition |
//! |--------|------------|
//! | `η`    | `E[σ(g)²]` |
//! | `ζ`    | `(E[σ′(g)])² = (E[g σ(g)])²` |
//! | `η′`   | `E[σ′(g)²]` |
//!
//! They are evaluated with Gauss–Hermite quadrature and a node-doubling
//! convergence check.

use std::fmt;
use std::sync::Arc;

use crate::error::MomentsError;
use crate::quadrature::GaussHermite;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Relative change under node doubling below which a moment counts as converged.
pub const CONVERGED_TOL: f64 = 1e-10;
/// Relative change under node doubling at or above which quadrature is rejected.
pub const REJECT_TOL: f64 = 1e-6;

/// An entrywise activation function.
#[derive(Clone)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    /// A user function, optionally with its analytic derivative. Without one,
    /// derivatives fall back to a central difference with step
    /// `1e-5 * max(1, |x|)`.
    Custom {
        name: String,
        f: ScalarFn,
        df: Option<ScalarFn>,
    },
}

impl fmt::Debug for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Activation({})", self.name())
    }
}

impl Activation {
    /// Looks up one of the built-in activations by name.
    pub fn from_name(name: &str) -> Result<Self, MomentsError> {
        match name.trim().to_ascii_lowercase().as_str() {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(MomentsError::UnknownActivation(name.to_string())),
        }
    }

    pub fn custom<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Activation::Custom {
            name: name.into(),
            f: Arc::new(f),
            df: None,
        }
    }

    pub fn custom_with_derivative<F, D>(name: impl Into<String>, f: F, df: D) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Activation::Custom {
            name: name.into(),
            f: Arc::new(f),
            df: Some(Arc::new(df)),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Custom { name, .. } => name,
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Custom { f, .. } => f(x),
        }
    }

    /// `σ′(x)`. The relu derivative at exactly zero is taken as ½.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    0.0
                } else {
                    0.5
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Custom { f, df, .. } => match df {
                Some(d) => d(x),
                None => {
                    let h = 1e-5 * x.abs().max(1.0);
                    (f(x + h) - f(x - h)) / (2.0 * h)
                }
            },
        }
    }

    pub fn has_analytic_derivative(&self) -> bool {
        !matches!(self, Activation::Custom { df: None, .. })
    }

    /// True when `σ` is affine in its argument, which makes `η = ζ`.
    pub fn is_linear(&self) -> bool {
        matches!(self, Activation::Identity)
    }
}

/// Gaussian moments of a student activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMoments {
    pub eta: f64,
    pub zeta: f64,
    pub eta_prime: f64,
    /// Number of nodes of the rule the values were taken from.
    pub quadrature_nodes: usize,
    pub converged: bool,
}

impl GaussianMoments {
    /// Moments of the identity activation.
    pub fn linear() -> Self {
        Self {
            eta: 1.0,
            zeta: 1.0,
            eta_prime: 1.0,
            quadrature_nodes: 0,
            converged: true,
        }
    }
}

/// Gaussian moments of a teacher activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherMoments {
    pub eta_t: f64,
    pub zeta_t: f64,
}

impl TeacherMoments {
    pub fn linear() -> Self {
        Self {
            eta_t: 1.0,
            zeta_t: 1.0,
        }
    }

    pub fn from_activation(activation: &Activation, nodes: usize) -> Result<Self, MomentsError> {
        let m = compute_moments(activation, nodes)?;
        Ok(Self {
            eta_t: m.eta,
            zeta_t: m.zeta,
        })
    }
}

struct Raw {
    eta: f64,
    zeta: f64,
    eta_prime: f64,
}

fn raw_moments(activation: &Activation, gh: &GaussHermite) -> Raw {
    let eta = gh.expect(|x| {
        let s = activation.eval(x);
        s * s
    });
    let zeta = if activation.has_analytic_derivative() {
        let m = gh.expect(|x| activation.derivative(x));
        m * m
    } else {
        let m = gh.expect(|x| x * activation.eval(x));
        m * m
    };
    let eta_prime = gh.expect(|x| {
        let d = activation.derivative(x);
        d * d
    });
    Raw {
        eta,
        zeta,
        eta_prime,
    }
}

fn rel_change(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Computes `η, ζ, η′` with an `nodes`-point rule and checks them against a
/// rule with twice as many nodes. The returned values come from the finer rule.
///
/// ```
/// use fgdd::moments::{compute_moments, Activation};
///
/// let m = compute_moments(&Activation::Relu, 128).unwrap();
/// assert!((m.eta - 0.5).abs() < 1e-12);
/// assert!((m.zeta - 0.25).abs() < 1e-12);
/// assert!(m.converged);
/// ```
pub fn compute_moments(activation: &Activation, nodes: usize) -> Result<GaussianMoments, MomentsError> {
    if nodes < 16 {
        return Err(MomentsError::TooFewNodes(nodes));
    }
    let coarse = raw_moments(activation, &GaussHermite::new(nodes));
    let fine = raw_moments(activation, &GaussHermite::new(2 * nodes));

    let mut converged = true;
    for (name, a, b) in [
        ("eta", coarse.eta, fine.eta),
        ("zeta", coarse.zeta, fine.zeta),
        ("eta_prime", coarse.eta_prime, fine.eta_prime),
    ] {
        if !b.is_finite() || !a.is_finite() {
            return Err(MomentsError::NonFinite { moment: name });
        }
        let change = rel_change(a, b);
        if change >= REJECT_TOL {
            return Err(MomentsError::NotConverged {
                moment: name,
                change,
                nodes,
                doubled: 2 * nodes,
            });
        }
        if change >= CONVERGED_TOL {
            converged = false;
        }
    }

    let m = GaussianMoments {
        eta: fine.eta,
        zeta: fine.zeta,
        eta_prime: fine.eta_prime,
        quadrature_nodes: 2 * nodes,
        converged,
    };
    check_ordering(&m)?;
    Ok(m)
}

fn check_ordering(m: &GaussianMoments) -> Result<(), MomentsError> {
    let slack = 1e-12 * m.eta.abs().max(m.eta_prime.abs()).max(1e-300);
    if m.zeta < 0.0 {
        return Err(MomentsError::Ordering(format!("zeta = {} < 0", m.zeta)));
    }
    if m.eta + slack < m.zeta {
        return Err(MomentsError::Ordering(format!(
            "eta = {} < zeta = {}",
            m.eta, m.zeta
        )));
    }
    if m.eta_prime + slack < m.zeta {
        return Err(MomentsError::Ordering(format!(
            "eta_prime = {} < zeta = {}",
            m.eta_prime, m.zeta
        )));
    }
    Ok(())
}

/// Relative gap between the two definitions of `ζ`, `(E[g σ(g)])²` and
/// `(E[σ′(g)])²`, which agree by Stein's lemma.
pub fn stein_check(activation: &Activation, nodes: usize) -> f64 {
    let gh = GaussHermite::new(nodes.max(1));
    let a = gh.expect(|x| x * activation.eval(x));
    let b = gh.expect(|x| activation.derivative(x));
    let zeta = (b * b).max(a * a);
    (a * a - b * b).abs() / zeta.max(1e-30)
}

/// Signal-to-noise ratio of the linear teacher equivalent to a nonlinear
/// teacher plus label noise: `ζ_T / (η_T − ζ_T + σ_ε²)`.
///
/// ```
/// use fgdd::moments::{effective_snr, TeacherMoments};
///
/// let snr = effective_snr(&TeacherMoments::linear(), 0.2_f64.sqrt()).unwrap();
/// assert!((snr - 5.0).abs() < 1e-12);
/// ```
pub fn effective_snr(teacher: &TeacherMoments, sigma_eps: f64) -> Result<f64, MomentsError> {
    let denom = teacher.eta_t - teacher.zeta_t + sigma_eps * sigma_eps;
    if denom <= 0.0 {
        return Err(MomentsError::InfiniteSnr);
    }
    Ok(teacher.zeta_t / denom)
}

/// Label-noise standard deviation that gives a linear teacher the requested SNR.
pub fn sigma_eps_for_snr(snr: f64) -> f64 {
    if snr.is_infinite() {
        0.0
    } else {
        (1.0 / snr).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_moments_are_one() {
        let m = compute_moments(&Activation::Identity, 64).unwrap();
        assert!((m.eta - 1.0).abs() < 1e-13);
        assert!((m.zeta - 1.0).abs() < 1e-13);
        assert!((m.eta_prime - 1.0).abs() < 1e-13);
        assert!(m.converged);
    }

    #[test]
    fn relu_moments_are_exact() {
        let m = compute_moments(&Activation::Relu, 128).unwrap();
        assert!((m.eta - 0.5).abs() < 1e-12);
        assert!((m.zeta - 0.25).abs() < 1e-12);
        assert!((m.eta_prime - 0.5).abs() < 1e-12);
    }

    #[test]
    fn too_few_nodes() {
        assert_eq!(
            compute_moments(&Activation::Tanh, 8),
            Err(MomentsError::TooFewNodes(8))
        );
    }

    #[test]
    fn rough_function_is_rejected() {
        // a step makes the quadrature converge only algebraically
        let step = Activation::custom("step", |x| if x > 0.3 { 1.0 } else { 0.0 });
        let err = compute_moments(&step, 16).unwrap_err();
        assert!(matches!(err, MomentsError::NotConverged { .. }), "{err:?}");
    }

    #[test]
    fn finite_difference_derivative() {
        let act = Activation::custom("softplus", |x: f64| (1.0 + x.exp()).ln());
        for x in [-3.0_f64, -0.2, 0.0, 1.5, 40.0] {
            let exact = 1.0 / (1.0 + (-x).exp());
            assert!((act.derivative(x) - exact).abs() < 1e-9, "x = {x}");
        }
    }

    #[test]
    fn names_round_trip() {
        for name in ["identity", "relu", "tanh"] {
            assert_eq!(Activation::from_name(name).unwrap().name(), name);
        }
        assert!(Activation::from_name("gelu").is_err());
    }

    #[test]
    fn snr_examples() {
        let t = TeacherMoments::linear();
        assert!((effective_snr(&t, 0.1).unwrap() - 100.0).abs() < 1e-9);
        let t = TeacherMoments {
            eta_t: 2.0,
            zeta_t: 1.0,
        };
        assert_eq!(effective_snr(&t, 0.0).unwrap(), 1.0);
        assert_eq!(
            effective_snr(&TeacherMoments::linear(), 0.0),
            Err(MomentsError::InfiniteSnr)
        );
    }
}
