//! Crate-wide error type.
//!
//! Absence of a result is not always an error here: operations such as
//! `linear_equivalence` return `Option`, and classifications like
//! `Inconclusive` orbit verdicts are ordinary enum variants. This type is
//! reserved for violated preconditions and genuine numerical failures.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("polynomial not divisible by the given linear form (max remainder coefficient {remainder:.3e} > tol {tol:.3e})")]
    NotDivisible { remainder: f64, tol: f64 },

    #[error("body failed the sampled convexity check (midpoint violation {violation:.3e})")]
    NotConvex { violation: f64 },

    #[error("invalid body specification: {0}")]
    BadBodySpec(String),

    #[error("embedding basis is rank deficient (smallest singular value {sigma_min:.3e})")]
    RankDeficient { sigma_min: f64 },

    #[error("bivector is numerically zero")]
    DegenerateBivector,

    #[error("body is not symmetric (max |Psi(x)-Psi(-x)| = {asymmetry:.3e})")]
    AsymmetricBody { asymmetry: f64 },

    #[error("section area is not differentiable at this subspace (second difference {second_difference:.3e} > {tol:.3e})")]
    NotDifferentiable { second_difference: f64, tol: f64 },

    #[error("area gradient is numerically zero (norm {norm:.3e})")]
    NullGradient { norm: f64 },

    #[error("Loewner ellipsoid iteration did not converge within {max_iters} iterations (gap {gap:.3e})")]
    LoewnerNoConvergence { max_iters: usize, gap: f64 },

    #[error("cross-sections are not linearly equivalent at covector {lambda:?} (best residual {residual:.3e} > tol {tol:.3e})")]
    EquivalenceFailed {
        lambda: [f64; 3],
        residual: f64,
        tol: f64,
    },

    #[error("fitted transversality constant C = {c:.3e} is degenerate")]
    CDegenerate { c: f64 },

    #[error("linear system is inconsistent: {context} (residual {residual:.3e})")]
    Inconsistent { context: String, residual: f64 },

    #[error("fitted quadratic form is not positive definite")]
    IndefiniteFit,

    #[error("cross-plane consistency failure while assembling the quadratic form (residual {residual:.3e})")]
    IncompatibleSections { residual: f64 },

    #[error("degeneracy roles violated: {0}")]
    DegeneracyMismatch(String),

    #[error("trajectory blew up (|state| = {norm:.3e} at t = {t:.3})")]
    Blowup { t: f64, norm: f64 },

    #[error("vector field vanishes on the sampling circle (min |W| = {min_norm:.3e})")]
    ZeroOnCircle { min_norm: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
