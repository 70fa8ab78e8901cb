//! Convex bodies as evaluable Minkowski norms.
//!
//! A body is the unit ball of a positively 1-homogeneous, subadditive,
//! positive function `Psi`. The catalog covers ellipsoids, lp balls,
//! quartically perturbed bodies and even polynomial norms; custom closures
//! are accepted for test geometries (l1, sup-norm, asymmetric controls).
//! One-sided directional derivatives use the analytic gradient when the
//! body has one and a Richardson-extrapolated forward quotient otherwise.

use crate::algebra::QuadForm;
use crate::error::{Error, Result};
use crate::grid;
use crate::poly::HPoly;
use rand::Rng;
use std::fmt;
use std::sync::Arc;

/// Convexity is verified on sampled midpoints at construction.
pub const CONVEXITY_TOL: f64 = 1e-10;
/// Sample pairs for the midpoint scan.
pub const CONVEXITY_PAIRS: usize = 10_000;
/// |Psi(x) - 1| below this counts as "on the boundary".
pub const BOUNDARY_TOL: f64 = 1e-8;

/// Forward-difference steps for the one-sided quotient.
const FD_STEPS: [f64; 3] = [1e-3, 5e-4, 2.5e-4];

type NormFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Catalog description of a body, also the document format the CLI parses.
#[derive(Debug, Clone)]
pub enum BodySpec {
    /// Unit ball of `sqrt(x^T Q x)` for positive definite `Q`.
    Ellipsoid { q: QuadForm },
    /// `(sum |x_i/s_i|^p)^(1/p)`. The library accepts `p >= 1`; stricter
    /// front ends may narrow this.
    Lp { p: f64, scales: Vec<f64> },
    /// Base norm times `1 + eps * (u.x)^4 / |x|^4`.
    Perturbed {
        base: Box<BodySpec>,
        epsilon: f64,
        direction: Vec<f64>,
    },
    /// `P(x)^(1/deg)` for an even-degree homogeneous polynomial `P`.
    PolyNorm { poly: HPoly },
}

impl BodySpec {
    pub fn dim(&self) -> usize {
        match self {
            BodySpec::Ellipsoid { q } => q.dim(),
            BodySpec::Lp { scales, .. } => scales.len(),
            BodySpec::Perturbed { base, .. } => base.dim(),
            BodySpec::PolyNorm { poly } => poly.dim,
        }
    }
}

#[derive(Clone)]
enum NormKind {
    Ellipsoid(QuadForm),
    Lp { p: f64, scales: Vec<f64> },
    Perturbed { base: Box<ConvexBody>, epsilon: f64, direction: Vec<f64> },
    PolyNorm { poly: HPoly, partials: Vec<HPoly> },
    Custom { norm: NormFn, gradient: Option<GradFn> },
}

/// An evaluable Minkowski norm with metadata.
#[derive(Clone)]
pub struct ConvexBody {
    pub dim: usize,
    pub symmetric: bool,
    pub smooth: bool,
    kind: NormKind,
}

impl fmt::Debug for ConvexBody {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvexBody")
            .field("dim", &self.dim)
            .field("symmetric", &self.symmetric)
            .field("smooth", &self.smooth)
            .finish()
    }
}

impl ConvexBody {
    /// Evaluate the Minkowski norm.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            NormKind::Ellipsoid(q) => q.apply(x).max(0.0).sqrt(),
            NormKind::Lp { p, scales } => {
                if p.is_infinite() {
                    x.iter()
                        .zip(scales)
                        .fold(0.0f64, |a, (xi, si)| a.max((xi / si).abs()))
                } else {
                    x.iter()
                        .zip(scales)
                        .map(|(xi, si)| (xi / si).abs().powf(*p))
                        .sum::<f64>()
                        .powf(1.0 / p)
                }
            }
            NormKind::Perturbed { base, epsilon, direction } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                if r2 == 0.0 {
                    return 0.0;
                }
                let d: f64 = x.iter().zip(direction).map(|(a, b)| a * b).sum();
                base.eval(x) * (1.0 + epsilon * d.powi(4) / (r2 * r2))
            }
            NormKind::PolyNorm { poly, .. } => {
                poly.eval(x).max(0.0).powf(1.0 / poly.degree as f64)
            }
            NormKind::Custom { norm, .. } => norm(x),
        }
    }

    /// Analytic gradient of the norm, when the body has one. Undefined at 0.
    pub fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        match &self.kind {
            NormKind::Ellipsoid(q) => {
                let psi = self.eval(x);
                let m = q.matrix();
                Some(
                    (0..self.dim)
                        .map(|i| (0..self.dim).map(|j| m[(i, j)] * x[j]).sum::<f64>() / psi)
                        .collect(),
                )
            }
            NormKind::Lp { p, scales } => {
                if p.is_infinite() || *p < 2.0 {
                    return None;
                }
                let psi = self.eval(x);
                if psi == 0.0 {
                    return None;
                }
                Some(
                    x.iter()
                        .zip(scales)
                        .map(|(xi, si)| {
                            let t = (xi / si).abs().powf(p - 1.0) * xi.signum() / si;
                            t * psi.powf(1.0 - p)
                        })
                        .collect(),
                )
            }
            NormKind::Perturbed { base, epsilon, direction } => {
                let gb = base.gradient(x)?;
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let d: f64 = x.iter().zip(direction).map(|(a, b)| a * b).sum();
                let bump = 1.0 + epsilon * d.powi(4) / (r2 * r2);
                let psi_b = base.eval(x);
                Some(
                    (0..self.dim)
                        .map(|i| {
                            let dbump = epsilon
                                * (4.0 * d.powi(3) * direction[i] / (r2 * r2)
                                    - 4.0 * d.powi(4) * x[i] / (r2 * r2 * r2));
                            gb[i] * bump + psi_b * dbump
                        })
                        .collect(),
                )
            }
            NormKind::PolyNorm { poly, partials } => {
                let p = poly.eval(x);
                if p <= 0.0 {
                    return None;
                }
                let m = poly.degree as f64;
                let factor = p.powf(1.0 / m - 1.0) / m;
                Some(partials.iter().map(|d| d.eval(x) * factor).collect())
            }
            NormKind::Custom { gradient, .. } => gradient.as_ref().map(|g| g(x)),
        }
    }

    /// Scale `x` radially onto the boundary.
    pub fn boundary_point(&self, x: &[f64]) -> Vec<f64> {
        let psi = self.eval(x);
        assert!(psi > 0.0, "cannot project 0 to the boundary");
        x.iter().map(|v| v / psi).collect()
    }

    pub fn is_on_boundary(&self, x: &[f64]) -> bool {
        (self.eval(x) - 1.0).abs() < BOUNDARY_TOL
    }

    /// Custom norm; the caller vouches for convexity unless `validate` is run.
    pub fn custom(
        dim: usize,
        norm: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: Option<GradFn>,
        symmetric: bool,
        smooth: bool,
    ) -> Self {
        ConvexBody {
            dim,
            symmetric,
            smooth,
            kind: NormKind::Custom {
                norm: Arc::new(norm),
                gradient,
            },
        }
    }

    /// Sampled midpoint-convexity check; the largest violation found.
    pub fn convexity_violation(&self, pairs: usize, seed: u64) -> f64 {
        let mut rng = grid::rng(seed);
        let mut worst = 0.0f64;
        for _ in 0..pairs {
            let mut x = vec![0.0; self.dim];
            let mut y = vec![0.0; self.dim];
            for i in 0..self.dim {
                x[i] = grid::standard_normal(&mut rng) * rng.gen_range(0.2..2.0);
                y[i] = grid::standard_normal(&mut rng) * rng.gen_range(0.2..2.0);
            }
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
            let v = self.eval(&mid) - 0.5 * (self.eval(&x) + self.eval(&y));
            worst = worst.max(v);
        }
        worst
    }
}

/// Build a catalog body, verifying positivity, homogeneity and sampled
/// midpoint convexity.
pub fn make_body(spec: &BodySpec) -> Result<ConvexBody> {
    let body = realize(spec)?;
    spot_check_homogeneity(&body)?;
    let violation = body.convexity_violation(CONVEXITY_PAIRS, 0x600d_5eed);
    if violation > CONVEXITY_TOL {
        return Err(Error::NotConvex { violation });
    }
    Ok(body)
}

fn realize(spec: &BodySpec) -> Result<ConvexBody> {
    match spec {
        BodySpec::Ellipsoid { q } => {
            if !q.is_positive_definite() {
                return Err(Error::BadBodySpec("ellipsoid form is not positive definite".into()));
            }
            Ok(ConvexBody {
                dim: q.dim(),
                symmetric: true,
                smooth: true,
                kind: NormKind::Ellipsoid(q.clone()),
            })
        }
        BodySpec::Lp { p, scales } => {
            if !(*p >= 1.0) {
                return Err(Error::BadBodySpec(format!("lp exponent p = {p} must be >= 1")));
            }
            if scales.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::BadBodySpec("lp scales must be positive".into()));
            }
            let smooth = p.is_finite() && *p >= 2.0;
            Ok(ConvexBody {
                dim: scales.len(),
                symmetric: true,
                smooth,
                kind: NormKind::Lp { p: *p, scales: scales.clone() },
            })
        }
        BodySpec::Perturbed { base, epsilon, direction } => {
            let base_body = realize(base)?;
            if direction.len() != base_body.dim {
                return Err(Error::BadBodySpec("perturbation direction has wrong dimension".into()));
            }
            Ok(ConvexBody {
                dim: base_body.dim,
                symmetric: base_body.symmetric,
                smooth: base_body.smooth,
                kind: NormKind::Perturbed {
                    base: Box::new(base_body),
                    epsilon: *epsilon,
                    direction: direction.clone(),
                },
            })
        }
        BodySpec::PolyNorm { poly } => {
            if poly.degree == 0 || poly.degree % 2 != 0 {
                return Err(Error::BadBodySpec(format!(
                    "polynomial norm degree {} must be even and positive",
                    poly.degree
                )));
            }
            let partials = (0..poly.dim).map(|i| poly.partial(i)).collect();
            Ok(ConvexBody {
                dim: poly.dim,
                symmetric: true,
                smooth: true,
                kind: NormKind::PolyNorm { poly: poly.clone(), partials },
            })
        }
    }
}

fn spot_check_homogeneity(body: &ConvexBody) -> Result<()> {
    let dirs = grid::unit_grid(body.dim, 64, 11);
    let mut rng = grid::rng(12);
    for d in dirs {
        let psi = body.eval(&d);
        if !(psi > 0.0) || !psi.is_finite() {
            return Err(Error::BadBodySpec(format!("norm is not positive at {d:?}")));
        }
        let t: f64 = rng.gen_range(0.01..10.0);
        let scaled: Vec<f64> = d.iter().map(|v| v * t).collect();
        if (body.eval(&scaled) - t * psi).abs() > 1e-10 * t.max(1.0) * psi {
            return Err(Error::BadBodySpec("norm is not positively homogeneous".into()));
        }
    }
    Ok(())
}

/// One-sided directional derivative of the norm at `x` along `v`.
pub fn dir_deriv(body: &ConvexBody, x: &[f64], v: &[f64]) -> f64 {
    assert!(x.iter().any(|c| *c != 0.0), "derivative base point must be nonzero");
    if let Some(g) = body.gradient(x) {
        return g.iter().zip(v).map(|(a, b)| a * b).sum();
    }
    let psi0 = body.eval(x);
    let q: Vec<f64> = FD_STEPS
        .iter()
        .map(|s| {
            let y: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + s * b).collect();
            (body.eval(&y) - psi0) / s
        })
        .collect();
    // Two Richardson levels for the expansion q(s) = D + c1 s + c2 s^2 + ...
    let r1 = 2.0 * q[1] - q[0];
    let r2 = 2.0 * q[2] - q[1];
    (4.0 * r2 - r1) / 3.0
}

/// Is `v` forward tangent to the boundary at `x`? `x` must lie on the
/// boundary (project radially first).
pub fn forward_tangent(body: &ConvexBody, x: &[f64], v: &[f64], tol: f64) -> bool {
    debug_assert!(body.is_on_boundary(x));
    let vnorm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    dir_deriv(body, x, v).abs() <= tol * (1.0 + vnorm)
}

/// Two-sided tangency defect: `|d+ Psi(v)| + |d+ Psi(-v)|`.
fn tangency_defect(body: &ConvexBody, x: &[f64], v: &[f64]) -> f64 {
    let neg: Vec<f64> = v.iter().map(|c| -c).collect();
    dir_deriv(body, x, v).abs() + dir_deriv(body, x, &neg).abs()
}

/// Basis of the subspace of directions tangent to the boundary at `x`
/// (tangent both forwards and backwards).
pub fn tangent_space(body: &ConvexBody, x: &[f64], tol: f64) -> Vec<Vec<f64>> {
    debug_assert!(body.is_on_boundary(x));
    if let Some(g) = body.gradient(x) {
        let basis = orthogonal_complement(&g);
        if basis
            .iter()
            .all(|b| tangency_defect(body, x, b) <= tol.max(1e-9) * 2.0)
        {
            return basis;
        }
        // Gradient disagrees with the quotient test; fall through.
    }
    sampled_tangent_space(body, x, tol)
}

fn sampled_tangent_space(body: &ConvexBody, x: &[f64], tol: f64) -> Vec<Vec<f64>> {
    let dim = body.dim;
    let scan = grid::unit_grid(dim, 256 * dim, 17);
    let coarse = tol.max(1e-3);
    let mut candidates: Vec<(f64, Vec<f64>)> = scan
        .into_iter()
        .map(|v| (tangency_defect(body, x, &v), v))
        .filter(|(d, _)| *d < coarse)
        .collect();
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // Refine a spread subset: greedy pick by angular separation.
    let mut picked: Vec<Vec<f64>> = Vec::new();
    for (_, v) in &candidates {
        if picked.len() >= 4 * dim {
            break;
        }
        let close = picked.iter().any(|p| {
            let dot: f64 = p.iter().zip(v).map(|(a, b)| a * b).sum();
            dot.abs() > 0.995
        });
        if !close {
            picked.push(v.clone());
        }
    }

    let mut accepted: Vec<Vec<f64>> = Vec::new();
    for v in picked {
        let refined = refine_tangent_direction(body, x, &v);
        if tangency_defect(body, x, &refined) < tol {
            accepted.push(refined);
        }
    }
    if accepted.is_empty() {
        return Vec::new();
    }

    let mut basis = span_basis(&accepted, 1e-6);
    // Close under the subspace property: random combinations must stay tangent.
    let mut rng = grid::rng(23);
    while !basis.is_empty() {
        let ok = (0..16).all(|_| {
            let mut w = vec![0.0; dim];
            for b in &basis {
                let c = grid::standard_normal(&mut rng);
                for j in 0..dim {
                    w[j] += c * b[j];
                }
            }
            let n: f64 = w.iter().map(|c| c * c).sum::<f64>().sqrt();
            if n < 1e-12 {
                return true;
            }
            let w: Vec<f64> = w.iter().map(|c| c / n).collect();
            tangency_defect(body, x, &w) < 10.0 * tol
        });
        if ok {
            break;
        }
        basis.pop();
    }
    basis
}

/// Local minimization of the tangency defect over the unit sphere,
/// by coordinate descent in a tangent chart at `v`.
fn refine_tangent_direction(body: &ConvexBody, x: &[f64], v: &[f64]) -> Vec<f64> {
    let chart = orthogonal_complement(v);
    let mut best = v.to_vec();
    let mut best_val = tangency_defect(body, x, &best);
    let mut step = 0.05;
    for _ in 0..60 {
        let mut improved = false;
        for t in &chart {
            for sgn in [1.0, -1.0] {
                let cand: Vec<f64> = best
                    .iter()
                    .zip(t)
                    .map(|(b, ti)| b + sgn * step * ti)
                    .collect();
                let n: f64 = cand.iter().map(|c| c * c).sum::<f64>().sqrt();
                let cand: Vec<f64> = cand.iter().map(|c| c / n).collect();
                let val = tangency_defect(body, x, &cand);
                if val < best_val {
                    best_val = val;
                    best = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-10 {
                break;
            }
        }
    }
    best
}

/// Orthonormal basis of the hyperplane orthogonal to `g`.
fn orthogonal_complement(g: &[f64]) -> Vec<Vec<f64>> {
    let dim = g.len();
    let gn: f64 = g.iter().map(|c| c * c).sum::<f64>().sqrt();
    assert!(gn > 0.0);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for k in 0..dim {
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        let dot: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        for j in 0..dim {
            v[j] -= dot * g[j] / (gn * gn);
        }
        for b in &basis {
            let dot: f64 = b.iter().zip(&v).map(|(a, b2)| a * b2).sum();
            for j in 0..dim {
                v[j] -= dot * b[j];
            }
        }
        let n: f64 = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 1e-8 {
            basis.push(v.iter().map(|c| c / n).collect());
        }
        if basis.len() == dim - 1 {
            break;
        }
    }
    basis
}

/// Orthonormal basis of the span of the given vectors, numerical rank at
/// `rel_tol` relative to the largest singular value.
fn span_basis(vectors: &[Vec<f64>], rel_tol: f64) -> Vec<Vec<f64>> {
    use nalgebra::DMatrix;
    let dim = vectors[0].len();
    let m = DMatrix::from_fn(dim, vectors.len(), |r, c| vectors[c][r]);
    let svd = m.svd(true, false);
    let smax = svd.singular_values.max();
    let u = svd.u.unwrap();
    let mut out = Vec::new();
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > rel_tol * smax {
            out.push((0..dim).map(|r| u[(r, i)]).collect());
        }
    }
    out
}

/// Max over the grid of `|Psi(x) - Psi(-x)|`.
pub fn symmetry_check(body: &ConvexBody, grid: &[Vec<f64>]) -> f64 {
    grid.iter().fold(0.0f64, |acc, x| {
        let neg: Vec<f64> = x.iter().map(|c| -c).collect();
        acc.max((body.eval(x) - body.eval(&neg)).abs())
    })
}

/// The unit ball of the given dimension.
pub fn unit_ball(dim: usize) -> ConvexBody {
    make_body(&BodySpec::Ellipsoid { q: QuadForm::identity(dim) }).unwrap()
}

/// l1 ball, built as a custom body (no gradient; genuinely non-smooth).
pub fn l1_ball(dim: usize) -> ConvexBody {
    ConvexBody::custom(
        dim,
        |x| x.iter().map(|c| c.abs()).sum(),
        None,
        true,
        false,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn catalog_trivia() {
        let ball = unit_ball(3);
        assert_abs_diff_eq!(ball.eval(&[1.0, 0.0, 0.0]), 1.0);
        let l4 = make_body(&BodySpec::Lp { p: 4.0, scales: vec![1.0, 1.0] }).unwrap();
        assert_abs_diff_eq!(l4.eval(&[1.0, 1.0]), 2.0f64.powf(0.25), epsilon = 1e-14);
    }

    #[test]
    fn large_perturbation_is_rejected() {
        let spec = BodySpec::Perturbed {
            base: Box::new(BodySpec::Ellipsoid { q: QuadForm::identity(3) }),
            epsilon: 0.5,
            direction: vec![1.0, 0.0, 0.0],
        };
        assert!(matches!(make_body(&spec), Err(Error::NotConvex { .. })));
    }

    #[test]
    fn small_perturbation_is_accepted() {
        let spec = BodySpec::Perturbed {
            base: Box::new(BodySpec::Ellipsoid { q: QuadForm::identity(3) }),
            epsilon: 0.02,
            direction: vec![1.0, 0.0, 0.0],
        };
        assert!(make_body(&spec).is_ok());
    }

    #[test]
    fn dir_deriv_on_ball() {
        let ball = unit_ball(3);
        assert_abs_diff_eq!(dir_deriv(&ball, &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]), 0.0);
        assert_abs_diff_eq!(dir_deriv(&ball, &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]), 1.0);
    }

    #[test]
    fn dir_deriv_on_l1_quotient() {
        let l1 = l1_ball(2);
        // one-sided quotient along e2 at e1: (|1| + s - 1)/s = 1
        assert_abs_diff_eq!(
            dir_deriv(&l1, &[1.0, 0.0], &[0.0, 1.0]),
            1.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn forward_tangent_on_l1_edge_direction() {
        let l1 = l1_ball(2);
        assert!(forward_tangent(&l1, &[1.0, 0.0], &[-1.0, 1.0], 1e-8));
        assert!(!forward_tangent(&l1, &[1.0, 0.0], &[0.0, 1.0], 1e-8));
        assert!(forward_tangent(&l1, &[1.0, 0.0], &[0.0, 0.0], 1e-8));
    }

    #[test]
    fn tangent_space_of_ellipsoid() {
        let q = QuadForm::from_diagonal(&[1.0, 4.0, 9.0]);
        let body = make_body(&BodySpec::Ellipsoid { q: q.clone() }).unwrap();
        let x = body.boundary_point(&[0.3, 0.5, -0.2]);
        let basis = tangent_space(&body, &x, 1e-8);
        assert_eq!(basis.len(), 2);
        for b in basis {
            assert_abs_diff_eq!(q.pair(&x, &b), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn tangent_space_of_l1_vertex_and_edge() {
        let l1 = l1_ball(2);
        assert!(tangent_space(&l1, &[1.0, 0.0], 1e-7).is_empty());
        let basis = tangent_space(&l1, &[0.5, 0.5], 1e-7);
        assert_eq!(basis.len(), 1);
        let b = &basis[0];
        assert_abs_diff_eq!((b[0] + b[1]).abs(), 0.0, epsilon = 1e-5);
    }

    #[test]
    fn symmetry_defect_of_shifted_norm() {
        let b = ConvexBody::custom(
            2,
            |x| (x[0] * x[0] + x[1] * x[1]).sqrt() + 0.1 * x[0],
            None,
            false,
            false,
        );
        let grid = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_abs_diff_eq!(symmetry_check(&b, &grid), 0.2, epsilon = 1e-14);
    }

    #[test]
    fn catalog_bodies_are_symmetric() {
        let e = make_body(&BodySpec::Ellipsoid { q: QuadForm::from_diagonal(&[1.0, 0.5, 2.0]) })
            .unwrap();
        let grid = grid::unit_grid(3, 128, 3);
        assert!(symmetry_check(&e, &grid) < 1e-14);
        let l4 = make_body(&BodySpec::Lp { p: 4.0, scales: vec![1.0, 2.0, 0.5] }).unwrap();
        assert!(symmetry_check(&l4, &grid) < 1e-14);
    }
}
