use faer::linalg::matmul::triangular::{self, BlockStructure};
use faer::linalg::solvers::{Llt, Solve};
use faer::{Accum, Mat, MatRef, Par, Scale, Side};

use super::rng::{self, Role};
use super::{Experiment, FeatureMode, Model, SimConfig};
use crate::error::SimError;
use crate::moments::GaussianMoments;

/// Relative eigenvalue cutoff of the ridgeless pseudo-inverse.
const PINV_RCOND: f64 = 1e-10;

/// One draw of the network parameters.
#[derive(Debug, Clone)]
pub struct ParamDraw {
    /// `n₁ × n₀`
    pub w1: Mat<f64>,
    /// Second-layer weights, length `n₁`; all zero for the random-feature model.
    pub w2: Vec<f64>,
}

/// One draw of the training inputs and label noise.
#[derive(Debug, Clone)]
pub struct DataDraw {
    /// `n₀ × m`, one sample per column.
    pub x: Mat<f64>,
    pub eps: Vec<f64>,
}

/// Hidden-layer features of a batch of inputs.
#[derive(Debug, Clone)]
pub struct Features {
    /// `n₁ × batch`
    pub f: Mat<f64>,
    /// `σ′` of the preactivations; only kept for the exact NTK.
    pub df: Option<Mat<f64>>,
}

/// Features of the columns of `x`. In Gaussian-equivalent mode `theta` must
/// supply the `n₁ × batch` noise matrix.
pub fn features(
    config: &SimConfig,
    moments: &GaussianMoments,
    w1: MatRef<'_, f64>,
    x: MatRef<'_, f64>,
    theta: Option<MatRef<'_, f64>>,
) -> Features {
    match config.feature_mode {
        FeatureMode::Exact => {
            let z = (w1 * x) * Scale(1.0 / (config.n0 as f64).sqrt());
            let f = Mat::from_fn(z.nrows(), z.ncols(), |i, j| config.activation.eval(z[(i, j)]));
            let df = (config.model == Model::Ntk)
                .then(|| Mat::from_fn(z.nrows(), z.ncols(), |i, j| config.activation.derivative(z[(i, j)])));
            Features { f, df }
        }
        FeatureMode::GaussianEquivalent => {
            let theta = theta.expect("gaussian-equivalent features need a noise matrix");
            Features {
                f: linearized(w1, x, moments, theta),
                df: None,
            }
        }
    }
}

/// `√(ζ/n₀) W₁X + √(η − ζ) Θ` with `Θ` drawn from `noise_seed`.
///
/// ```
/// use faer::Mat;
/// use fgdd::moments::GaussianMoments;
/// use fgdd::simulator::gaussian_equivalent_features;
///
/// let w1 = Mat::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
/// let x = Mat::from_fn(2, 4, |i, j| i as f64 - j as f64);
/// let f = gaussian_equivalent_features(w1.as_ref(), x.as_ref(), &GaussianMoments::linear(), 9);
/// let exact = (&w1 * &x) * faer::Scale(1.0 / 2f64.sqrt());
/// assert!((&f - &exact).norm_max() < 1e-12);
/// ```
pub fn gaussian_equivalent_features(
    w1: MatRef<'_, f64>,
    x: MatRef<'_, f64>,
    moments: &GaussianMoments,
    noise_seed: u64,
) -> Mat<f64> {
    let theta = rng::normal_mat(&mut rng::stream(noise_seed, None, Role::ThetaF, 0), w1.nrows(), x.ncols());
    linearized(w1, x, moments, theta.as_ref())
}

fn linearized(w1: MatRef<'_, f64>, x: MatRef<'_, f64>, moments: &GaussianMoments, theta: MatRef<'_, f64>) -> Mat<f64> {
    assert!(moments.eta >= moments.zeta, "eta < zeta: invalid moments");
    let n0 = w1.ncols() as f64;
    let lin = (w1 * x) * Scale((moments.zeta / n0).sqrt());
    let c = (moments.eta - moments.zeta).sqrt();
    if c == 0.0 {
        return lin;
    }
    Mat::from_fn(lin.nrows(), lin.ncols(), |i, j| lin[(i, j)] + c * theta[(i, j)])
}

/// `scale · AᵀA`, lower triangle only.
fn gram_lower(a: MatRef<'_, f64>, scale: f64) -> Mat<f64> {
    let n = a.ncols();
    let mut k = Mat::zeros(n, n);
    triangular::matmul(
        k.as_mut(),
        BlockStructure::TriangularLower,
        Accum::Replace,
        a.transpose(),
        BlockStructure::Rectangular,
        a,
        BlockStructure::Rectangular,
        scale,
        Par::Seq,
    );
    k
}

/// `σ′` features with each row scaled by `|W₂ₖ|`.
fn scaled_derivative(df: &Mat<f64>, w2: &[f64]) -> Mat<f64> {
    Mat::from_fn(df.nrows(), df.ncols(), |i, j| w2[i].abs() * df[(i, j)])
}

/// Training kernel with the ridge on the diagonal, lower triangle only.
fn kernel_lower(
    config: &SimConfig,
    moments: &GaussianMoments,
    param: &ParamDraw,
    x: MatRef<'_, f64>,
    feats: &Features,
) -> Mat<f64> {
    let n1 = config.n1 as f64;
    let n0 = config.n0 as f64;
    let mut k = gram_lower(feats.f.as_ref(), 1.0 / n1);
    let m = k.nrows();
    if config.model == Model::Ntk {
        let s = config.sigma_w2 * config.sigma_w2;
        match &feats.df {
            Some(df) => {
                let g = gram_lower(scaled_derivative(df, &param.w2).as_ref(), 1.0 / n1);
                let xx = gram_lower(x, 1.0 / n0);
                for j in 0..m {
                    for i in j..m {
                        k[(i, j)] += xx[(i, j)] * g[(i, j)];
                    }
                }
            }
            None => {
                let xx = gram_lower(x, s * moments.zeta / n0);
                for j in 0..m {
                    for i in j..m {
                        k[(i, j)] += xx[(i, j)];
                    }
                    k[(j, j)] += s * (moments.eta_prime - moments.zeta);
                }
            }
        }
    }
    for i in 0..m {
        k[(i, i)] += config.gamma;
    }
    k
}

/// The `m × m` kernel plus ridge, `K = FᵀF/n₁ + γI` for random features and
/// with the first-layer NTK term added for the NTK.
///
/// ```
/// use faer::Mat;
/// use fgdd::moments::{Activation, GaussianMoments};
/// use fgdd::simulator::{build_kernel, features, ParamDraw, SimConfig};
///
/// let mut config = SimConfig::rf(2, 3, 4, Activation::Identity);
/// config.gamma = 0.5;
/// let w1 = Mat::from_fn(4, 2, |i, j| (i * 2 + j) as f64 - 3.0);
/// let x = Mat::from_fn(2, 3, |i, j| (i + j) as f64);
/// let p = ParamDraw { w1: w1.clone(), w2: vec![0.0; 4] };
/// let feats = features(&config, &GaussianMoments::linear(), w1.as_ref(), x.as_ref(), None);
/// let k = build_kernel(&config, &GaussianMoments::linear(), &p, x.as_ref(), &feats);
/// let direct = x.transpose() * w1.transpose() * &w1 * &x * faer::Scale(1.0 / 8.0);
/// for i in 0..3 {
///     for j in 0..3 {
///         let ridge = if i == j { 0.5 } else { 0.0 };
///         assert!((k[(i, j)] - direct[(i, j)] - ridge).abs() < 1e-12);
///     }
/// }
/// ```
pub fn build_kernel(
    config: &SimConfig,
    moments: &GaussianMoments,
    param: &ParamDraw,
    x: MatRef<'_, f64>,
    feats: &Features,
) -> Mat<f64> {
    let mut k = kernel_lower(config, moments, param, x, feats);
    mirror_lower(&mut k);
    k
}

fn mirror_lower(k: &mut Mat<f64>) {
    for j in 0..k.ncols() {
        for i in 0..j {
            k[(i, j)] = k[(j, i)];
        }
    }
}

/// A factorized kernel. Cholesky when the kernel is positive definite; at
/// `γ = 0` a singular kernel falls back to the eigendecomposition
/// pseudo-inverse, which gives the minimum-norm interpolant.
pub enum KernelSolver {
    Cholesky { llt: Llt<f64>, gamma: f64 },
    Pseudo { u: Mat<f64>, inv: Vec<f64> },
}

impl KernelSolver {
    /// Only the lower triangle of `k` is read.
    pub fn factor(k: &Mat<f64>, gamma: f64) -> Result<Self, SimError> {
        if let Ok(llt) = k.llt(Side::Lower) {
            return Ok(Self::Cholesky { llt, gamma });
        }
        if gamma > 0.0 {
            return Err(SimError::SingularKernel { gamma });
        }
        let evd = k.self_adjoint_eigen(Side::Lower).map_err(|_| SimError::SingularKernel { gamma })?;
        let s = evd.S().column_vector();
        let top = (0..s.nrows()).map(|i| s[i].abs()).fold(0.0, f64::max);
        let inv = (0..s.nrows())
            .map(|i| if s[i] > PINV_RCOND * top { 1.0 / s[i] } else { 0.0 })
            .collect();
        Ok(Self::Pseudo {
            u: evd.U().to_owned(),
            inv,
        })
    }

    pub fn solve(&self, rhs: &Mat<f64>) -> Mat<f64> {
        match self {
            Self::Cholesky { llt, .. } => llt.solve(rhs),
            Self::Pseudo { u, inv } => {
                let mut c = u.transpose() * rhs;
                for j in 0..c.ncols() {
                    for (i, w) in inv.iter().enumerate() {
                        c[(i, j)] *= w;
                    }
                }
                u * c
            }
        }
    }

    /// `‖r − (K − γI)α‖²` for the solution `α` of `Kα = r`: the training
    /// residual. Equal to `γ²‖α‖²` on the Cholesky path; on the pseudo-inverse
    /// path the component of `r` outside the range of `K`.
    fn residual_sq(&self, rhs: &Mat<f64>, alpha: &Mat<f64>, col: usize) -> f64 {
        match self {
            Self::Cholesky { gamma, .. } => {
                let a: Vec<f64> = (0..alpha.nrows()).map(|i| alpha[(i, col)].powi(2)).collect();
                gamma * gamma * crate::stats::pairwise_sum(&a)
            }
            Self::Pseudo { u, inv } => {
                let proj = u.transpose() * rhs.col(col);
                let parts: Vec<f64> = inv
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w == 0.0)
                    .map(|(i, _)| proj[i].powi(2))
                    .collect();
                crate::stats::pairwise_sum(&parts)
            }
        }
    }
}

/// Everything about the query points that depends only on the parameters.
pub(crate) struct QuerySide {
    pub x: Mat<f64>,
    pub feats: Features,
    /// `N₀` at the query points, or empty when `ν = 0`.
    pub n0: Vec<f64>,
}

impl QuerySide {
    pub fn new(
        config: &SimConfig,
        moments: &GaussianMoments,
        param: &ParamDraw,
        x: &Mat<f64>,
        theta: Option<MatRef<'_, f64>>,
    ) -> Self {
        let feats = features(config, moments, param.w1.as_ref(), x.as_ref(), theta);
        let n0 = initial_output(config, param, &feats.f);
        Self {
            x: x.clone(),
            feats,
            n0,
        }
    }
}

/// `N₀ = W₂ᵀF/√n₁` when it enters the predictor.
fn initial_output(config: &SimConfig, param: &ParamDraw, f: &Mat<f64>) -> Vec<f64> {
    if config.nu() == 0.0 {
        return Vec::new();
    }
    let scale = 1.0 / (config.n1 as f64).sqrt();
    (0..f.ncols())
        .map(|j| {
            let t: Vec<f64> = (0..f.nrows()).map(|i| param.w2[i] * f[(i, j)]).collect();
            crate::stats::pairwise_sum(&t) * scale
        })
        .collect()
}

/// Predictions of one fitted kernel for several label vectors.
pub(crate) struct Fit {
    /// One vector per label column.
    pub predictions: Vec<Vec<f64>>,
    pub train_loss: Vec<f64>,
}

/// Fits the kernel on `x` once and predicts at the query points for every
/// column of `labels` (`m × k`, noiseless part plus noise).
pub(crate) fn fit_and_predict(
    exp: &Experiment,
    param: &ParamDraw,
    query: &QuerySide,
    x: &Mat<f64>,
    theta_train: Option<MatRef<'_, f64>>,
    labels: &Mat<f64>,
) -> Result<Fit, SimError> {
    let config = &exp.config;
    let moments = &exp.moments;
    let n1 = config.n1 as f64;
    let m = config.m;
    let feats = features(config, moments, param.w1.as_ref(), x.as_ref(), theta_train);
    let k = kernel_lower(config, moments, param, x.as_ref(), &feats);
    let solver = KernelSolver::factor(&k, config.gamma)?;
    drop(k);

    let n0_train = initial_output(config, param, &feats.f);
    let mut rhs = labels.clone();
    if !n0_train.is_empty() {
        for j in 0..rhs.ncols() {
            for i in 0..m {
                rhs[(i, j)] -= n0_train[i];
            }
        }
    }
    let alpha = solver.solve(&rhs);

    let fa = (&feats.f * &alpha) * Scale(1.0 / n1);
    let mut pred = query.feats.f.transpose() * &fa;
    if config.model == Model::Ntk {
        let xq = x.transpose() * &query.x;
        let n0 = config.n0 as f64;
        let cross = match (&feats.df, &query.feats.df) {
            (Some(df), Some(dfq)) => {
                let g = scaled_derivative(df, &param.w2).transpose() * scaled_derivative(dfq, &param.w2);
                Mat::from_fn(xq.nrows(), xq.ncols(), |i, j| xq[(i, j)] * g[(i, j)] / (n0 * n1))
            }
            _ => {
                let s = config.sigma_w2 * config.sigma_w2;
                xq * Scale(s * moments.zeta / n0)
            }
        };
        pred += cross.transpose() * &alpha;
    }
    let nq = pred.nrows();
    let predictions = (0..alpha.ncols())
        .map(|j| {
            (0..nq)
                .map(|t| pred[(t, j)] + query.n0.get(t).copied().unwrap_or(0.0))
                .collect()
        })
        .collect();
    let train_loss = (0..alpha.ncols())
        .map(|j| solver.residual_sq(&rhs, &alpha, j) / m as f64)
        .collect();
    Ok(Fit {
        predictions,
        train_loss,
    })
}

/// Predictions at the columns of `query` of the predictor trained on `data`
/// with parameters `param`, and its training loss. Gaussian-equivalent mode
/// needs `noise = (Θ_train, Θ_query)`.
pub fn predict(
    exp: &Experiment,
    param: &ParamDraw,
    data: &DataDraw,
    noise: Option<(&Mat<f64>, &Mat<f64>)>,
    query: &Mat<f64>,
) -> Result<(Vec<f64>, f64), SimError> {
    let c = &exp.config;
    if param.w1.nrows() != c.n1 || param.w1.ncols() != c.n0 || param.w2.len() != c.n1 {
        return Err(SimError::InvalidConfig("parameter shapes do not match n1, n0".into()));
    }
    if data.x.nrows() != c.n0 || data.x.ncols() != c.m || data.eps.len() != c.m || query.nrows() != c.n0 {
        return Err(SimError::InvalidConfig("data shapes do not match n0, m".into()));
    }
    if c.feature_mode == FeatureMode::GaussianEquivalent && noise.is_none() {
        return Err(SimError::InvalidConfig("gaussian-equivalent mode needs feature noise".into()));
    }
    let q = QuerySide::new(c, &exp.moments, param, query, noise.map(|n| n.1.as_ref()));
    let clean = super::teacher(&exp.beta, &data.x);
    let labels = Mat::from_fn(c.m, 1, |i, _| clean[i] + data.eps[i]);
    let mut fit = fit_and_predict(exp, param, &q, &data.x, noise.map(|n| n.0.as_ref()), &labels)?;
    Ok((fit.predictions.swap_remove(0), fit.train_loss[0]))
}
