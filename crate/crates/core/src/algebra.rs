//! Exterior algebra in three and four dimensions.
//!
//! Bivectors on `R^3` are stored in the basis `(e2^e3, e3^e1, e1^e2)`, so the
//! wedge of two vectors has the cross-product coordinates and every nonzero
//! bivector is simple. Three-vectors on `R^4` are stored in the basis
//! `(e1^e2^e3, e1^e2^e4, e1^e3^e4, e2^e3^e4)`.

use nalgebra::{DMatrix, Matrix3, Matrix4x3, Vector3, Vector4};

pub type V3 = Vector3<f64>;
pub type V4 = Vector4<f64>;
pub type M3 = Matrix3<f64>;

/// A covector on `R^3` in the dual basis; pairs with vectors by the dot
/// product of coordinate arrays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covector3(pub V3);

impl Covector3 {
    pub fn apply(&self, v: &V3) -> f64 {
        self.0.dot(v)
    }
}

/// A bivector on `R^3` in the basis `(e2^e3, e3^e1, e1^e2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bivector3(pub V3);

impl Bivector3 {
    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// An ordered pair `(u, v)` with `u ^ v` equal to this bivector and the
    /// two representatives of comparable length. The pair is the scaled
    /// orthonormal frame of the plane, which keeps downstream quadrature
    /// well conditioned.
    pub fn balanced_representatives(&self) -> Option<(V3, V3)> {
        let n = self.0.norm();
        if n < 1e-300 {
            return None;
        }
        let axis = self.0 / n;
        // any unit vector orthogonal to the plane normal
        let seed = if axis.x.abs() <= axis.y.abs() && axis.x.abs() <= axis.z.abs() {
            V3::x()
        } else if axis.y.abs() <= axis.z.abs() {
            V3::y()
        } else {
            V3::z()
        };
        let u = (seed - axis * seed.dot(&axis)).normalize();
        let v = axis.cross(&u);
        let s = n.sqrt();
        Some((u * s, v * s))
    }
}

/// Wedge of two vectors; bilinear and antisymmetric, with cross-product
/// coordinates in the fixed bivector basis.
pub fn wedge(u: &V3, v: &V3) -> Bivector3 {
    Bivector3(u.cross(v))
}

/// The isomorphism `Lambda^2 R^3 -> (R^3)^*` induced by the determinant
/// volume form: `phi(u ^ v) = det(u, v, .)`. In our coordinates this is the
/// identity on component arrays, and `u, v` always lie in its kernel.
pub fn phi_iso(sigma: &Bivector3) -> Covector3 {
    Covector3(sigma.0)
}

/// Wedge of three vectors in `R^4`, i.e. the four 3x3 minors of the matrix
/// with columns `a, b, c`, in the three-vector basis order documented above.
pub fn wedge3(a: &V4, b: &V4, c: &V4) -> V4 {
    let m = Matrix4x3::from_columns(&[*a, *b, *c]);
    let minor = |r0: usize, r1: usize, r2: usize| {
        Matrix3::new(
            m[(r0, 0)],
            m[(r0, 1)],
            m[(r0, 2)],
            m[(r1, 0)],
            m[(r1, 1)],
            m[(r1, 2)],
            m[(r2, 0)],
            m[(r2, 1)],
            m[(r2, 2)],
        )
        .determinant()
    };
    V4::new(minor(0, 1, 2), minor(0, 1, 3), minor(0, 2, 3), minor(1, 2, 3))
}

/// The covector `x -> coefficient of tau ^ x` in `e1^e2^e3^e4`. Its kernel
/// is the hyperplane of the three-vector `tau`.
pub fn three_vector_covector(tau: &V4) -> V4 {
    // tau ^ e_i expands with alternating signs.
    V4::new(-tau[3], tau[2], -tau[1], tau[0])
}

/// A symmetric quadratic form of any small dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadForm {
    mat: DMatrix<f64>,
}

impl QuadForm {
    pub fn new(mat: DMatrix<f64>) -> Self {
        assert_eq!(mat.nrows(), mat.ncols());
        let sym = (&mat + mat.transpose()) * 0.5;
        QuadForm { mat: sym }
    }

    pub fn identity(dim: usize) -> Self {
        QuadForm {
            mat: DMatrix::identity(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        QuadForm {
            mat: DMatrix::from_fn(n, n, |r, c| if r == c { diag[r] } else { 0.0 }),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn apply(&self, x: &[f64]) -> f64 {
        let v = DMatrix::from_column_slice(x.len(), 1, x);
        (v.transpose() * &self.mat * &v)[(0, 0)]
    }

    pub fn pair(&self, x: &[f64], y: &[f64]) -> f64 {
        let vx = DMatrix::from_column_slice(x.len(), 1, x);
        let vy = DMatrix::from_column_slice(y.len(), 1, y);
        (vx.transpose() * &self.mat * &vy)[(0, 0)]
    }

    pub fn is_positive_definite(&self) -> bool {
        self.mat.clone().cholesky().is_some()
    }

    /// Factor `Q = A^T A` (Cholesky transpose). Panics if not positive definite.
    pub fn sqrt_factor(&self) -> DMatrix<f64> {
        self.mat
            .clone()
            .cholesky()
            .expect("form is not positive definite")
            .l()
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn wedge_basis_case() {
        assert_eq!(wedge(&V3::x(), &V3::y()).0, V3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn wedge_of_equal_vectors_vanishes() {
        let u = V3::new(0.3, -1.2, 2.0);
        assert_eq!(wedge(&u, &u).0, V3::zeros());
    }

    #[test]
    fn wedge_determinant_identity() {
        let got = wedge(&V3::new(1.0, 2.0, 0.0), &V3::new(0.0, 1.0, 0.0));
        assert_eq!(got.0, V3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn phi_kernel_property() {
        let u = V3::new(1.0, 2.0, 3.0);
        let v = V3::new(0.0, 1.0, 1.0);
        let f = phi_iso(&wedge(&u, &v));
        assert_abs_diff_eq!(f.apply(&u), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.apply(&v), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn phi_basis_case() {
        let f = phi_iso(&wedge(&V3::x(), &V3::y()));
        assert_eq!(f.0, V3::new(0.0, 0.0, 1.0));
        assert_eq!(phi_iso(&Bivector3(V3::zeros())).0, V3::zeros());
    }

    #[test]
    fn representatives_recover_bivector() {
        let sigma = Bivector3(V3::new(0.4, -1.1, 0.7));
        let (u, v) = sigma.balanced_representatives().unwrap();
        assert_abs_diff_eq!((wedge(&u, &v).0 - sigma.0).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn three_vector_covector_kernel() {
        let a = V4::new(1.0, 0.5, 0.0, -0.3);
        let b = V4::new(0.0, 1.0, 0.2, 0.1);
        let c = V4::new(0.3, 0.0, 1.0, 0.0);
        let tau = wedge3(&a, &b, &c);
        let ell = three_vector_covector(&tau);
        for w in [a, b, c] {
            assert_abs_diff_eq!(ell.dot(&w), 0.0, epsilon = 1e-12);
        }
    }
}
