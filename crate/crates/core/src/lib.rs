//! Numerical laboratory for convex bodies with linearly equivalent
//! hyperplane cross-sections.
//!
//! The crate builds, from an evaluable Minkowski norm, the machinery needed
//! to decide numerically whether a centrally symmetric convex body in `R^4`
//! is an ellipsoid: affine-invariant section areas and intersection bodies,
//! linear equivalence search between sections, the trace-free tensor that
//! measures first-order variation of cross-sections, its quadratic vector
//! fields and degeneracy strata, the induced flow on the space of 2-planes,
//! and the final certification pipeline with explicit residual gates.

pub mod algebra;
pub mod body;
pub mod error;
pub mod grid;
pub mod poly;
pub mod equivalence;
pub mod sections;

pub use algebra::{phi_iso, wedge, Bivector3, Covector3, QuadForm};
pub use body::{dir_deriv, forward_tangent, make_body, symmetry_check, tangent_space, BodySpec, ConvexBody};
pub use error::{Error, Result};
pub use poly::{HPoly, PolyVectorField};
