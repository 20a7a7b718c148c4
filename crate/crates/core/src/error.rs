use thiserror::Error;

/// Errors from the Gaussian moment computations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MomentsError {
    #[error("at least 16 quadrature nodes are required, got {0}")]
    TooFewNodes(usize),
    #[error("quadrature for {moment} did not converge: relative change {change:.3e} between {nodes} and {doubled} nodes")]
    NotConverged {
        moment: &'static str,
        change: f64,
        nodes: usize,
        doubled: usize,
    },
    #[error("moment {moment} is not finite")]
    NonFinite { moment: &'static str },
    #[error("moment ordering violated: {0}")]
    Ordering(String),
    #[error("unknown activation `{0}` (expected identity, relu or tanh)")]
    UnknownActivation(String),
    #[error("signal-to-noise ratio is infinite (linear teacher without label noise); pass sigma_eps directly")]
    InfiniteSnr,
}

/// Errors from the self-consistent trace solver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TauError {
    #[error("invalid model shape: {0}")]
    InvalidShape(String),
    #[error("continuation stalled at gamma = {gamma:.6e} (last scaled residual {residual:.3e})")]
    NotConverged { gamma: f64, residual: f64 },
    #[error("linear activation at the interpolation threshold with gamma = 0 is degenerate; add a small ridge (e.g. gamma = 1e-6)")]
    DegenerateThreshold,
    #[error("the normalized traces diverge as gamma -> 0+ for this shape (singular ridgeless kernel); use gamma > 0 or the ratio form")]
    Divergent,
    #[error("derivative closed form has a vanishing denominator at phi = {phi}, psi = {psi}, gamma = {gamma}")]
    DegenerateDerivative { phi: f64, psi: f64, gamma: f64 },
    #[error("ridgeless root has negative discriminant {0:.3e}")]
    NegativeDiscriminant(f64),
}

/// Errors from evaluating the closed-form decomposition.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecompositionError {
    #[error(transparent)]
    Tau(#[from] TauError),
    #[error("decomposition diverges at the interpolation threshold (phi = psi, gamma = 0)")]
    Diverged,
    #[error("threshold check `{check}` failed for {term} at n1/m = {ratio:.6e}: {detail}")]
    ThresholdCheck {
        check: &'static str,
        term: &'static str,
        ratio: f64,
        detail: String,
    },
}

/// Errors from the subset-indexed variance algebra.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnovaError {
    #[error("number of variables must be between 1 and 16, got {0}")]
    BadArity(usize),
    #[error("H table is missing the entry for mask {0}")]
    MissingEntry(String),
    #[error("tables have mismatched arity ({0} vs {1})")]
    ArityMismatch(usize, usize),
    #[error("invalid mask `{0}`")]
    BadMask(String),
}

/// Errors from the finite-size simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("kernel factorization failed (gamma = {gamma:.3e}); the kernel is numerically singular, try gamma = 1e-6")]
    SingularKernel { gamma: f64 },
    #[error("at least {min} replicates are needed for jackknife errors, got {got}")]
    TooFewReplicates { min: usize, got: usize },
    #[error(transparent)]
    Moments(#[from] MomentsError),
}

/// Errors from the ensemble algebra.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("optimal ratio undefined: V_P = {0:.3e} is not positive (all budget should go to bagging)")]
    NonPositiveParameterVariance(f64),
    #[error("ensemble sizes must be at least 1")]
    BadSize,
    #[error(transparent)]
    Sim(#[from] SimError),
}
