//! Normalized traces `τ₁ = tr K⁻¹/m` and `τ₂ = tr((XᵀX/n₀) K⁻¹)/m` in the
//! proportional limit.
//!
//! Both are the positive root of a pair of cubic polynomial equations in
//! `(τ₁, τ₂)`. The root is tracked by predictor–corrector continuation in
//! `log γ`, starting from a large ridge where `τ₁ ≈ τ₂ ≈ 1/γ`, and polished by
//! Newton's method in log coordinates. Working with `(log τ₁, log τ₂)` keeps
//! both traces positive along the whole path.
//!
//! The random-feature model is the special case `σ_{W₂} = 0` of the NTK system.

use crate::error::TauError;
use crate::moments::GaussianMoments;

/// Accepted scaled residual of the polynomial system.
pub const RESIDUAL_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 50;
const STEP_RATIO: f64 = 0.9;
const MIN_LOG_STEP: f64 = 1e-6;
const MAX_CORRECTOR_JUMP: f64 = 0.05;

/// Shape of the model in the proportional limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelShape {
    /// `n₀/m`
    pub phi: f64,
    /// `n₀/n₁`
    pub psi: f64,
    /// Ridge parameter.
    pub gamma: f64,
    /// Standard deviation of the second-layer initialization. Zero selects the
    /// random-feature model.
    pub sigma_w2: f64,
    /// Label-noise standard deviation.
    pub sigma_eps: f64,
    /// Subtract the network's initial output from the predictor.
    pub centering: bool,
}

impl ModelShape {
    /// A random-feature shape with no label noise.
    pub fn rf(phi: f64, psi: f64, gamma: f64) -> Self {
        Self {
            phi,
            psi,
            gamma,
            sigma_w2: 0.0,
            sigma_eps: 0.0,
            centering: false,
        }
    }

    pub fn ntk(phi: f64, psi: f64, gamma: f64, sigma_w2: f64) -> Self {
        Self {
            sigma_w2,
            ..Self::rf(phi, psi, gamma)
        }
    }

    pub fn with_noise(mut self, sigma_eps: f64) -> Self {
        self.sigma_eps = sigma_eps;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_centering(mut self, centering: bool) -> Self {
        self.centering = centering;
        self
    }

    /// `ν`: 0 with centering, 1 without. Irrelevant (and reported as 0) for the
    /// random-feature model, where the initial output vanishes.
    pub fn nu(&self) -> f64 {
        if self.centering || self.sigma_w2 == 0.0 {
            0.0
        } else {
            1.0
        }
    }

    /// `σ_{W₂}²`
    pub fn s(&self) -> f64 {
        self.sigma_w2 * self.sigma_w2
    }

    pub fn is_rf(&self) -> bool {
        self.sigma_w2 == 0.0
    }

    /// `n₁/m`
    pub fn width_ratio(&self) -> f64 {
        self.phi / self.psi
    }

    pub fn validate(&self) -> Result<(), TauError> {
        let bad = |what: &str, v: f64| Err(TauError::InvalidShape(format!("{what} = {v}")));
        if !(self.phi.is_finite() && self.phi > 0.0) {
            return bad("phi", self.phi);
        }
        if !(self.psi.is_finite() && self.psi > 0.0) {
            return bad("psi", self.psi);
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad("gamma", self.gamma);
        }
        if !(self.sigma_w2.is_finite() && self.sigma_w2 >= 0.0) {
            return bad("sigma_w2", self.sigma_w2);
        }
        if !(self.sigma_eps.is_finite() && self.sigma_eps >= 0.0) {
            return bad("sigma_eps", self.sigma_eps);
        }
        Ok(())
    }

    /// True at the interpolation threshold `n₁ = m`.
    pub fn at_threshold(&self) -> bool {
        (self.phi - self.psi).abs() < 1e-8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Homotopy,
    RidgelessClosedForm,
}

/// A certified root of the trace equations together with its `γ`-derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauSolution {
    pub gamma: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub dtau1: f64,
    pub dtau2: f64,
    /// `σ_{W₂}² ζ τ₂ + φ τ̃₂`
    pub ttau1: f64,
    /// `τ₂/τ₁ − 1`
    pub ttau2: f64,
    /// Largest scaled residual of the two polynomial equations.
    pub residual_max: f64,
    pub method: SolveMethod,
}

/// The coefficients of the trace equations for one shape. Each equation is a
/// sum of monomials `c τ₁^a τ₂^b`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct System {
    pub phi: f64,
    pub psi: f64,
    pub gamma: f64,
    pub s: f64,
    pub eta: f64,
    pub zeta: f64,
    pub eta_prime: f64,
}

type Monomials<const N: usize> = [(f64, i32, i32); N];

impl System {
    pub fn new(shape: &ModelShape, m: &GaussianMoments) -> Self {
        Self {
            phi: shape.phi,
            psi: shape.psi,
            gamma: shape.gamma,
            s: shape.s(),
            eta: m.eta,
            zeta: m.zeta,
            eta_prime: m.eta_prime,
        }
    }

    fn at_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    // like powers are merged so that cancellations happen in the
    // coefficients, not between large monomials
    fn first(&self) -> Monomials<5> {
        let Self {
            phi,
            psi,
            gamma,
            s,
            zeta: z,
            eta_prime: ep,
            ..
        } = *self;
        [
            (z * (phi - psi + s * phi), 1, 1),
            (phi * phi, 0, 1),
            (-phi * phi, 1, 0),
            (z * psi * (gamma + s * (ep - z)), 2, 1),
            (s * z * z * psi, 1, 2),
        ]
    }

    fn second(&self) -> Monomials<4> {
        let Self {
            phi,
            gamma,
            s,
            eta,
            zeta: z,
            eta_prime: ep,
            ..
        } = *self;
        [
            (z * (gamma + s * (ep - eta)), 2, 1),
            (2.0 * phi * z - z - phi * eta, 1, 1),
            (-phi * z, 0, 2),
            (phi * (eta - z), 2, 0),
        ]
    }

    /// Value, magnitude scale and log-coordinate gradient of each equation.
    fn eval_log(&self, u: f64, v: f64) -> [(f64, f64, f64, f64); 2] {
        fn row<const N: usize>(terms: &Monomials<N>, u: f64, v: f64) -> (f64, f64, f64, f64) {
            let (mut val, mut scale, mut du, mut dv) = (0.0, 0.0, 0.0, 0.0);
            for &(c, a, b) in terms {
                if c == 0.0 {
                    continue;
                }
                let t = c * (a as f64 * u + b as f64 * v).exp();
                val += t;
                scale += t.abs();
                du += a as f64 * t;
                dv += b as f64 * t;
            }
            (val, scale, du, dv)
        }
        [row(&self.first(), u, v), row(&self.second(), u, v)]
    }

    /// Scaled residuals `|Σ terms| / Σ |terms|` of both equations.
    pub fn residuals(&self, tau1: f64, tau2: f64) -> [f64; 2] {
        fn one<const N: usize>(terms: &Monomials<N>, t1: f64, t2: f64) -> f64 {
            let (mut val, mut scale) = (0.0, 0.0);
            for &(c, a, b) in terms {
                let t = c * t1.powi(a) * t2.powi(b);
                val += t;
                scale += t.abs();
            }
            if scale == 0.0 {
                0.0
            } else {
                val.abs() / scale
            }
        }
        [one(&self.first(), tau1, tau2), one(&self.second(), tau1, tau2)]
    }

    /// Typical size of the kernel spectrum; sets where continuation starts.
    fn spectral_scale(&self) -> f64 {
        let feat = self.eta + self.s * (self.eta_prime + self.zeta / self.phi);
        (1.0 + 1.0 / self.phi) * (1.0 + self.psi / self.phi) * feat.max(1.0)
    }

    /// Newton's method in `(log τ₁, log τ₂)`. Returns the root and its scaled
    /// residual if the iteration settles.
    fn newton(&self, mut u: f64, mut v: f64) -> Option<(f64, f64, f64)> {
        for _ in 0..NEWTON_MAX_ITER {
            let [(f1, s1, a1, b1), (f2, s2, a2, b2)] = self.eval_log(u, v);
            if !(s1 > 0.0 && s2 > 0.0) || !s1.is_finite() || !s2.is_finite() {
                return None;
            }
            let (r1, r2) = (f1 / s1, f2 / s2);
            let (a1, b1, a2, b2) = (a1 / s1, b1 / s1, a2 / s2, b2 / s2);
            let det = a1 * b2 - a2 * b1;
            if det == 0.0 || !det.is_finite() {
                return None;
            }
            let mut du = -(r1 * b2 - r2 * b1) / det;
            let mut dv = -(a1 * r2 - a2 * r1) / det;
            let big = du.abs().max(dv.abs());
            if big > 0.5 {
                du *= 0.5 / big;
                dv *= 0.5 / big;
            }
            u += du;
            v += dv;
            if du.abs().max(dv.abs()) < 1e-15 {
                break;
            }
        }
        let res = self.residuals(u.exp(), v.exp());
        let res = res[0].max(res[1]);
        (res.is_finite() && res < RESIDUAL_TOL).then_some((u, v, res))
    }
}

/// Follows the positive root from a large ridge down to `target > 0`.
fn continuation(sys: &System, target: f64) -> Result<(f64, f64, f64), TauError> {
    let start = target.max(1e3 * sys.spectral_scale());
    let mut lg = start.ln();
    let (mut u, mut v, mut res) = sys
        .at_gamma(start)
        .newton(-lg, -lg)
        .ok_or(TauError::NotConverged {
            gamma: start,
            residual: f64::NAN,
        })?;
    let lt = target.ln();
    let max_step = -STEP_RATIO.ln();
    let mut step = max_step;
    // previous path point for the secant predictor
    let mut prev: Option<(f64, f64, f64)> = None;
    while lg > lt {
        let h = step.min(lg - lt);
        let next = if lg - h <= lt { lt } else { lg - h };
        let (pu, pv) = match prev {
            Some((plg, pu0, pv0)) => {
                let t = (next - lg) / (lg - plg);
                (u + (u - pu0) * t, v + (v - pv0) * t)
            }
            // τ ≈ 1/γ at large ridge
            None => (u - (next - lg), v - (next - lg)),
        };
        match sys.at_gamma(next.exp()).newton(pu, pv) {
            Some((nu, nv, r)) if (nu - pu).abs().max((nv - pv).abs()) < MAX_CORRECTOR_JUMP => {
                prev = Some((lg, u, v));
                u = nu;
                v = nv;
                res = r;
                lg = next;
                step = (step * 1.5).min(max_step);
            }
            _ => {
                step *= 0.5;
                if step < MIN_LOG_STEP {
                    let gamma = lg.exp();
                    let residual = sys.at_gamma(gamma).residuals(u.exp(), v.exp());
                    return Err(TauError::NotConverged {
                        gamma,
                        residual: residual[0].max(residual[1]),
                    });
                }
            }
        }
    }
    Ok((u.exp(), v.exp(), res))
}

/// Positive root of the factored ridgeless quartic,
/// `τ̃₂ = (−ζ − ηω + √((ζ+ηω)² − 4ζ²ω)) / (2ζω)` with `ω = max(φ, ψ)`.
///
/// ```
/// use fgdd::moments::GaussianMoments;
/// use fgdd::tau::ridgeless_ttau2;
///
/// let x = ridgeless_ttau2(2.0, 2.0, &GaussianMoments::linear()).unwrap();
/// assert!((x + 0.5).abs() < 1e-15);
/// ```
pub fn ridgeless_ttau2(phi: f64, psi: f64, m: &GaussianMoments) -> Result<f64, TauError> {
    let (eta, zeta) = (m.eta, m.zeta);
    let w = phi.max(psi);
    let b = zeta + eta * w;
    let disc = b * b - 4.0 * zeta * zeta * w;
    if disc < 0.0 {
        // roundoff only: (ζ+ηω)² − 4ζ²ω ≥ (ζ−ζω)² when η ≥ ζ
        if disc > -1e-14 * b * b {
            return Ok(-b / (2.0 * zeta * w));
        }
        return Err(TauError::NegativeDiscriminant(disc));
    }
    Ok((-b + disc.sqrt()) / (2.0 * zeta * w))
}

/// The random-feature quartic in `τ̃₂` obtained by eliminating `τ̃₁`:
/// `(τ̃₂(ζψτ̃₂+ζ+ηψ)+ζ)(τ̃₂(ζφτ̃₂+ζ+ηφ)+ζ) + γζφτ̃₂(τ̃₂+1)`.
pub fn ridgeless_quartic_residual(ttau2: f64, phi: f64, psi: f64, gamma: f64, m: &GaussianMoments) -> f64 {
    let (eta, z, x) = (m.eta, m.zeta, ttau2);
    let f1 = x * (z * psi * x + z + eta * psi) + z;
    let f2 = x * (z * phi * x + z + eta * phi) + z;
    f1 * f2 + gamma * z * phi * x * (x + 1.0)
}

/// Closed-form `(τ₁′, τ₂′)` in terms of the auxiliary variables.
pub fn tau_derivatives(
    tau1: f64,
    tau2: f64,
    shape: &ModelShape,
    m: &GaussianMoments,
) -> Result<(f64, f64), TauError> {
    let (phi, psi, z, eta) = (shape.phi, shape.psi, m.zeta, m.eta);
    let tt2 = tau2 / tau1 - 1.0;
    let tt1 = shape.s() * z * tau2 + phi * tt2;
    let p = psi * tt1 * tt1;
    let q = z * tt2 + eta;
    let r = z * tt2 * (2.0 * tt2 + 3.0) + eta;
    let a = z * z * (tt2 + 1.0).powi(2);
    let d = p * (a + phi * q * r) + a * phi * phi * (phi * tt2 * tt2 - 1.0);
    let scale = p.abs() * (a + phi * (q * r).abs()) + a * phi * phi * (phi * tt2 * tt2 + 1.0);
    if !(d.abs() > 1e-13 * scale) || !d.is_finite() {
        return Err(TauError::DegenerateDerivative {
            phi,
            psi,
            gamma: shape.gamma,
        });
    }
    let t22 = tau2 * tau2;
    let d1 = -z * z * t22 * (p - phi * phi) / d;
    let d2 = -z * t22 * (p * (z - eta) - z * phi * phi * (tt2 + 1.0).powi(2)) / d;
    Ok((d1, d2))
}

fn finish(
    shape: &ModelShape,
    m: &GaussianMoments,
    tau1: f64,
    tau2: f64,
    residual_max: f64,
    method: SolveMethod,
) -> Result<TauSolution, TauError> {
    let (dtau1, dtau2) = tau_derivatives(tau1, tau2, shape, m)?;
    let ttau2 = -1.0 + tau2 / tau1;
    Ok(TauSolution {
        gamma: shape.gamma,
        tau1,
        tau2,
        dtau1,
        dtau2,
        ttau1: shape.s() * m.zeta * tau2 + shape.phi * ttau2,
        ttau2,
        residual_max,
        method,
    })
}

fn is_linear(m: &GaussianMoments) -> bool {
    (m.eta - m.zeta).abs() <= 1e-12 * m.eta
}

/// Solves the random-feature trace equations (`σ_{W₂} = 0`).
pub fn solve_tau_rf(shape: &ModelShape, m: &GaussianMoments) -> Result<TauSolution, TauError> {
    if !shape.is_rf() {
        return Err(TauError::InvalidShape(format!(
            "random-feature solver needs sigma_w2 = 0, got {}",
            shape.sigma_w2
        )));
    }
    solve_tau_ntk(shape, m)
}

/// Solves the NTK trace equations for any `σ_{W₂} ≥ 0`.
///
/// ```
/// use fgdd::moments::{compute_moments, Activation};
/// use fgdd::tau::{solve_tau_ntk, ModelShape};
///
/// let m = compute_moments(&Activation::Tanh, 128).unwrap();
/// let sol = solve_tau_ntk(&ModelShape::ntk(0.5, 0.25, 0.1, 1.0), &m).unwrap();
/// assert!(sol.tau1 > 0.0 && sol.tau2 > 0.0 && sol.dtau1 < 0.0);
/// assert!(sol.residual_max < 1e-10);
/// ```
pub fn solve_tau_ntk(shape: &ModelShape, m: &GaussianMoments) -> Result<TauSolution, TauError> {
    shape.validate()?;
    let sys = System::new(shape, m);
    if shape.gamma > 0.0 {
        let (t1, t2, res) = continuation(&sys, shape.gamma)?;
        return finish(shape, m, t1, t2, res, SolveMethod::Homotopy);
    }

    if shape.at_threshold() && shape.is_rf() {
        return Err(if is_linear(m) {
            TauError::DegenerateThreshold
        } else {
            TauError::Divergent
        });
    }

    if shape.is_rf() {
        // the kernel has full rank only above the threshold
        if shape.psi >= shape.phi {
            return Err(TauError::Divergent);
        }
        let x = ridgeless_ttau2(shape.phi, shape.psi, m)?;
        let tau1 = shape.phi * shape.phi * x / (m.zeta * (1.0 + x) * (shape.psi - shape.phi));
        let tau2 = tau1 * (1.0 + x);
        if !(tau1.is_finite() && tau1 > 0.0 && tau2 > 0.0) || 1.0 + x < 1e-12 {
            return Err(TauError::Divergent);
        }
        let r = sys.residuals(tau1, tau2);
        let res = r[0].max(r[1]);
        if res < RESIDUAL_TOL {
            return finish(shape, m, tau1, tau2, res, SolveMethod::RidgelessClosedForm);
        }
    }

    // follow the path to a tiny ridge, then step onto γ = 0
    let tiny = 1e-12 * sys.spectral_scale();
    let (t1, t2, _) = continuation(&sys, tiny)?;
    if tiny * t1 > 1e-4 {
        return Err(TauError::Divergent);
    }
    match sys.at_gamma(0.0).newton(t1.ln(), t2.ln()) {
        Some((u, v, res)) => finish(shape, m, u.exp(), v.exp(), res, SolveMethod::Homotopy),
        None => Err(TauError::NotConverged {
            gamma: 0.0,
            residual: f64::NAN,
        }),
    }
}

/// Solves at a small positive ridge even when `shape.gamma = 0`. Used to read
/// off ridgeless limits of ratios whose numerator and denominator diverge.
pub(crate) fn solve_near_ridgeless(shape: &ModelShape, m: &GaussianMoments) -> Result<TauSolution, TauError> {
    let sys = System::new(shape, m);
    let g = 1e-11 * sys.spectral_scale();
    solve_tau_ntk(&shape.with_gamma(g), m)
}
