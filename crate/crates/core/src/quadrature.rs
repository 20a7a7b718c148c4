//! Gauss–Hermite rules normalized to the standard normal density.
//!
//! Nodes are the roots of the Hermite polynomials. Eigenvalues of the Jacobi
//! matrix give starting points, which Newton iteration on the orthonormal
//! three-term recurrence then polishes to full precision. The
//! physicists' rule for the weight `exp(-x²)` is then rescaled so that
//! `Σ wᵢ f(xᵢ) ≈ E[f(g)]` for `g ~ N(0, 1)`.

use std::f64::consts::{PI, SQRT_2};

use faer::{Mat, Side};

/// A quadrature rule against the standard normal density.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Builds an `n`-point rule. Nodes come out in decreasing order and are
    /// exactly antisymmetric (`x[n-1-i] == -x[i]`), which makes odd integrands
    /// vanish identically.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
        let pim4 = PI.powf(-0.25);
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let nf = n as f64;
        let half = n.div_ceil(2);
        let guesses = jacobi_eigenvalues(n);
        for i in 0..half {
            let mut z = guesses[n - 1 - i];
            for _ in 0..100 {
                let (p1, p2) = orthonormal_hermite(n, z, pim4);
                let pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            let (_, p2) = orthonormal_hermite(n, z, pim4);
            let pp = (2.0 * nf).sqrt() * p2;
            x[i] = z;
            x[n - 1 - i] = -z;
            let wi = 2.0 / (pp * pp);
            w[i] = wi;
            w[n - 1 - i] = wi;
        }
        if n % 2 == 1 {
            x[n / 2] = 0.0;
        }
        let norm = PI.sqrt();
        let nodes = x.iter().map(|v| v * SQRT_2).collect();
        let weights = w.iter().map(|v| v / norm).collect();
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(g)]` for a standard normal `g`. Symmetric node pairs are summed
    /// first so the reduction order never depends on the integrand.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let n = self.nodes.len();
        let mut acc = 0.0;
        for i in 0..n / 2 {
            let j = n - 1 - i;
            acc += self.weights[i] * (f(self.nodes[i]) + f(self.nodes[j]));
        }
        if n % 2 == 1 {
            acc += self.weights[n / 2] * f(0.0);
        }
        acc
    }
}

/// Eigenvalues of the symmetric tridiagonal Jacobi matrix of `exp(-x²)`, ascending.
fn jacobi_eigenvalues(n: usize) -> Vec<f64> {
    let j = Mat::from_fn(n, n, |r, c| {
        if r.abs_diff(c) == 1 {
            (r.max(c) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut ev = j
        .self_adjoint_eigenvalues(Side::Lower)
        .expect("tridiagonal eigenvalues converge");
    ev.sort_by(f64::total_cmp);
    ev
}

/// Returns (p_n(z), p_{n-1}(z)) for the orthonormal Hermite polynomials.
fn orthonormal_hermite(n: usize, z: f64, pim4: f64) -> (f64, f64) {
    let mut p1 = pim4;
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
    }
    (p1, p2)
}
