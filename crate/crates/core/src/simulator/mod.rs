//! Finite-size Monte Carlo for random-feature and NTK ridge regression.
//!
//! Each replicate draws the parameters `P`, the training inputs `X` and the
//! label noise `ε` twice, a base and an independent copy. Predictors that mix
//! base and copy variables estimate the coupling expectations `H_S`, and
//! Möbius inversion turns those into the variance terms.
//!
//! Variables are indexed `P = 0`, `X = 1`, `ε = 2`, so mask `0b011` is the
//! predictor sharing parameters and inputs with the base but not the noise.

mod estimate;
mod kernel;
pub(crate) mod rng;

use std::fmt;

use faer::Mat;

use crate::error::SimError;
use crate::moments::{compute_moments, Activation, GaussianMoments};
use crate::tau::ModelShape;

pub use estimate::{
    estimate_decomposition, run_replicate, simulate_banks, PredictionBank, ReplicateOutput, SimEstimates,
};
pub use kernel::{build_kernel, features, gaussian_equivalent_features, predict, DataDraw, Features, KernelSolver, ParamDraw};

/// Index of the parameter variable in subset masks.
pub const VAR_P: usize = 0;
pub const VAR_X: usize = 1;
pub const VAR_EPS: usize = 2;

const MOMENT_NODES: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Rf,
    Ntk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    Exact,
    /// Features replaced by their linearization plus independent Gaussian
    /// noise with matched second moments.
    GaussianEquivalent,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Rf => "rf",
            Model::Ntk => "ntk",
        })
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::Exact => "exact",
            FeatureMode::GaussianEquivalent => "gaussian-equivalent",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub m: usize,
    pub n0: usize,
    pub n1: usize,
    pub activation: Activation,
    pub gamma: f64,
    pub sigma_eps: f64,
    pub model: Model,
    /// Standard deviation of the second-layer weights. Ignored for RF.
    pub sigma_w2: f64,
    pub centering: bool,
    pub feature_mode: FeatureMode,
    pub n_test: usize,
    pub n_replicates: usize,
    pub base_seed: u64,
}

impl SimConfig {
    /// A random-feature config with the desk-scale defaults for everything
    /// but the widths.
    pub fn rf(n0: usize, m: usize, n1: usize, activation: Activation) -> Self {
        Self {
            m,
            n0,
            n1,
            activation,
            gamma: 1e-6,
            sigma_eps: 0.0,
            model: Model::Rf,
            sigma_w2: 0.0,
            centering: false,
            feature_mode: FeatureMode::Exact,
            n_test: 512,
            n_replicates: 64,
            base_seed: 0,
        }
    }

    pub fn ntk(n0: usize, m: usize, n1: usize, activation: Activation, sigma_w2: f64) -> Self {
        Self {
            model: Model::Ntk,
            sigma_w2,
            ..Self::rf(n0, m, n1, activation)
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |s: String| Err(SimError::InvalidConfig(s));
        for (name, v) in [
            ("m", self.m),
            ("n0", self.n0),
            ("n1", self.n1),
            ("n_test", self.n_test),
            ("n_replicates", self.n_replicates),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad(format!("gamma = {}", self.gamma));
        }
        if !(self.sigma_eps.is_finite() && self.sigma_eps >= 0.0) {
            return bad(format!("sigma_eps = {}", self.sigma_eps));
        }
        if !(self.sigma_w2.is_finite() && self.sigma_w2 >= 0.0) {
            return bad(format!("sigma_w2 = {}", self.sigma_w2));
        }
        Ok(())
    }

    /// `σ_{W₂}` actually used: zero for the random-feature model.
    pub fn effective_sigma_w2(&self) -> f64 {
        match self.model {
            Model::Rf => 0.0,
            Model::Ntk => self.sigma_w2,
        }
    }

    /// `ν`: whether the initial network output enters the predictor.
    pub fn nu(&self) -> f64 {
        if self.model == Model::Ntk && !self.centering && self.sigma_w2 > 0.0 {
            1.0
        } else {
            0.0
        }
    }

    /// The matching proportional-limit shape.
    pub fn shape(&self) -> ModelShape {
        ModelShape {
            phi: self.n0 as f64 / self.m as f64,
            psi: self.n0 as f64 / self.n1 as f64,
            gamma: self.gamma,
            sigma_w2: self.effective_sigma_w2(),
            sigma_eps: self.sigma_eps,
            centering: self.centering,
        }
    }
}

/// A config together with the draws fixed across replicates: the teacher
/// `β` and the test points with their noiseless labels. `β` has a uniformly
/// random direction and norm exactly `√n₀`, so the signal variance is 1.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: SimConfig,
    pub moments: GaussianMoments,
    pub beta: Vec<f64>,
    /// `n₀ × n_test`, one test point per column.
    pub test_points: Mat<f64>,
    pub test_labels: Vec<f64>,
}

impl Experiment {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let moments = if config.activation.is_linear() {
            GaussianMoments::linear()
        } else {
            compute_moments(&config.activation, MOMENT_NODES)?
        };
        let seed = config.base_seed;
        let mut beta = rng::normal_vec(&mut rng::stream(seed, None, rng::Role::Beta, 0), config.n0, 1.0);
        let norm = crate::stats::pairwise_sum(&beta.iter().map(|b| b * b).collect::<Vec<_>>()).sqrt();
        let scale = (config.n0 as f64).sqrt() / norm;
        beta.iter_mut().for_each(|b| *b *= scale);
        let test_points = rng::normal_mat(
            &mut rng::stream(seed, None, rng::Role::TestPoints, 0),
            config.n0,
            config.n_test,
        );
        let test_labels = teacher(&beta, &test_points);
        Ok(Self {
            config,
            moments,
            beta,
            test_points,
            test_labels,
        })
    }
}

/// `βᵀx/√n₀` for every column.
pub(crate) fn teacher(beta: &[f64], x: &Mat<f64>) -> Vec<f64> {
    let scale = 1.0 / (beta.len() as f64).sqrt();
    (0..x.ncols())
        .map(|j| {
            let col: Vec<f64> = (0..x.nrows()).map(|i| beta[i] * x[(i, j)]).collect();
            crate::stats::pairwise_sum(&col) * scale
        })
        .collect()
}

/// Worker count for replicate parallelism: `FGDD_THREADS` if set to a
/// positive integer, otherwise rayon's default.
pub fn worker_threads() -> usize {
    std::env::var("FGDD_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}
