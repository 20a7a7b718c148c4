//! Fine-grained bias-variance decomposition of random-feature and neural
//! tangent kernel ridge regression.
//!
//! The test error splits into a bias and seven variance terms, one for each
//! nonempty subset of the random parameters `P`, the training inputs `X` and
//! the label noise `ε`. [`decomposition`] evaluates the asymptotic closed
//! forms, [`simulator`] estimates the same terms at finite size and
//! [`ensemble`] rescales them for averaged predictors.
//!
//! ```
//! use fgdd::decomposition::decompose_rf;
//! use fgdd::moments::{compute_moments, Activation};
//! use fgdd::tau::ModelShape;
//!
//! let m = compute_moments(&Activation::Tanh, 64).unwrap();
//! let d = decompose_rf(&ModelShape::rf(0.5, 0.25, 0.0).with_noise(0.3), &m).unwrap();
//! assert!(d.v_px > 0.0);
//! assert!((d.b + d.total_variance - d.e_test).abs() < 1e-12);
//! ```

pub mod anova;
pub mod cli;
pub mod decomposition;
pub mod ensemble;
pub mod error;
pub mod moments;
pub mod quadrature;
pub mod simulator;
pub mod stats;
pub mod tau;

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $file:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            pub struct $name;
        };
    }
    chapter!(Intro, "intro.md");
    chapter!(Moments, "moments.md");
    chapter!(Traces, "traces.md");
    chapter!(Decomposition, "decomposition.md");
    chapter!(Anova, "anova.md");
    chapter!(Simulator, "simulator.md");
    chapter!(Ensembles, "ensembles.md");
    chapter!(Cli, "cli.md");
}
