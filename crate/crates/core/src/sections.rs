//! Cross-sections, the affine-invariant section area, the transverse
//! direction `nu`, and the intersection body.
//!
//! The area attached to a bivector (or three-vector) `sigma` is the inverse
//! of the section volume measured in the Haar measure normalized so the
//! parallelotope spanned by any representatives of `sigma` has measure one.
//! It is computed by the radial integral over the unit sphere of the
//! parametrizing coordinates, which converges spectrally for smooth norms.

use crate::algebra::{three_vector_covector, wedge3, Bivector3, V4};
use crate::body::{symmetry_check, ConvexBody};
use crate::error::{Error, Result};
use crate::grid;
use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;

/// Default angular quadrature nodes for planar sections.
pub const DEFAULT_ANGLE_NODES: usize = 512;
/// Default spherical quadrature / scan nodes.
pub const DEFAULT_SPHERE_NODES: usize = 2048;

/// A linear slice of a parent body, carrying the embedding and the induced
/// norm as a body in its own right.
#[derive(Debug, Clone)]
pub struct SectionBody {
    pub parent_dim: usize,
    /// Columns are the subspace basis in parent coordinates.
    pub embedding: DMatrix<f64>,
    pub body: ConvexBody,
}

impl SectionBody {
    pub fn dim(&self) -> usize {
        self.embedding.ncols()
    }

    /// Push subspace coordinates to parent coordinates.
    pub fn to_parent(&self, x: &[f64]) -> Vec<f64> {
        let v = &self.embedding * DVector::from_column_slice(x);
        v.iter().copied().collect()
    }
}

/// Graph embedding of a hyperplane over `X`: `x -> X x + lambda(x) nu`.
/// With `lambda = 0` this is the inclusion of `X`.
pub fn hyperplane_graph(
    x_basis: &DMatrix<f64>,
    lambda: &[f64],
    nu: &[f64],
) -> DMatrix<f64> {
    let d = x_basis.nrows();
    let k = x_basis.ncols();
    assert_eq!(lambda.len(), k);
    assert_eq!(nu.len(), d);
    DMatrix::from_fn(d, k, |r, c| x_basis[(r, c)] + lambda[c] * nu[r])
}

/// Intersect a body with the span of the given basis vectors (columns).
pub fn cross_section(body: &ConvexBody, basis: &DMatrix<f64>) -> Result<SectionBody> {
    assert_eq!(basis.nrows(), body.dim);
    let svd = basis.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-10 * smax.max(1.0) {
        return Err(Error::RankDeficient { sigma_min: smin });
    }
    let parent = body.clone();
    let parent_grad = body.clone();
    let emb = basis.clone();
    let emb_grad = basis.clone();
    let k = basis.ncols();
    let has_grad = body.smooth;
    let norm = move |x: &[f64]| {
        let v = &emb * DVector::from_column_slice(x);
        parent.eval(v.as_slice())
    };
    let gradient: Option<std::sync::Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>> = if has_grad {
        Some(std::sync::Arc::new(move |x: &[f64]| {
            let v = &emb_grad * DVector::from_column_slice(x);
            let g = parent_grad
                .gradient(v.as_slice())
                .expect("smooth parent must expose a gradient");
            let gv = DVector::from_column_slice(&g);
            let pulled = emb_grad.transpose() * gv;
            pulled.iter().copied().collect()
        }))
    } else {
        None
    };
    let induced = ConvexBody::custom(k, norm, gradient, body.symmetric, body.smooth);
    Ok(SectionBody {
        parent_dim: body.dim,
        embedding: basis.clone(),
        body: induced,
    })
}

/// Affine-invariant area attached to a bivector for a 3-dimensional body:
/// the reciprocal of the section area of `K` with the plane of `sigma`, in
/// the measure normalized by `sigma` itself. Positively 1-homogeneous.
pub fn area_a(body3: &ConvexBody, sigma: &Bivector3, angle_nodes: usize) -> Result<f64> {
    assert_eq!(body3.dim, 3);
    let (u, v) = sigma
        .balanced_representatives()
        .ok_or(Error::DegenerateBivector)?;
    Ok(area_from_representatives(body3, &u, &v, angle_nodes))
}

/// Planar section area in the coordinates `(s, t) -> s u + t v`, inverted.
pub fn area_from_representatives(
    body: &ConvexBody,
    u: &Vector3<f64>,
    v: &Vector3<f64>,
    angle_nodes: usize,
) -> f64 {
    let w = std::f64::consts::TAU / angle_nodes as f64;
    let mut acc = 0.0;
    for theta in grid::circle_angles(angle_nodes) {
        let p = u * theta.cos() + v * theta.sin();
        let psi = body.eval(p.as_slice());
        acc += psi.powi(-2);
    }
    let section_area = 0.5 * acc * w;
    1.0 / section_area
}

/// The 4-dimensional analogue: area attached to a three-vector `tau` for a
/// body in `R^4`, via the radial integral over the unit 2-sphere of the
/// hyperplane coordinates.
pub fn area_a3(body4: &ConvexBody, tau: &V4, sphere_nodes: usize) -> Result<f64> {
    assert_eq!(body4.dim, 4);
    let reps = three_vector_representatives(tau).ok_or(Error::DegenerateBivector)?;
    let w = 4.0 * std::f64::consts::PI / sphere_nodes as f64;
    let mut acc = 0.0;
    for s in grid::fibonacci_sphere(sphere_nodes) {
        let p = reps[0] * s.x + reps[1] * s.y + reps[2] * s.z;
        let psi = body4.eval(p.as_slice());
        acc += psi.powi(-3);
    }
    let volume = acc * w / 3.0;
    Ok(1.0 / volume)
}

/// Balanced representatives `(a, b, c)` with `a ^ b ^ c = tau`: the
/// orthonormal frame of the hyperplane, scaled uniformly.
fn three_vector_representatives(tau: &V4) -> Option<[V4; 3]> {
    let n = tau.norm();
    if n < 1e-300 {
        return None;
    }
    let ell = three_vector_covector(tau);
    // Orthonormal basis of the kernel of the covector, by Gram-Schmidt on
    // the coordinate directions.
    let elln = ell.normalize();
    let mut frame: Vec<V4> = Vec::new();
    for k in 0..4 {
        let mut v = V4::zeros();
        v[k] = 1.0;
        v -= elln * elln.dot(&v);
        for b in &frame {
            v -= b * b.dot(&v);
        }
        if v.norm() > 1e-8 {
            frame.push(v.normalize());
        }
        if frame.len() == 3 {
            break;
        }
    }
    assert_eq!(frame.len(), 3);
    let wedge = wedge3(&frame[0], &frame[1], &frame[2]);
    let c = wedge.dot(tau) / tau.norm_squared();
    if c.abs() < 1e-300 {
        return None;
    }
    // Distribute the correction (1/c) evenly across the three factors.
    let s = (1.0 / c).cbrt();
    Some([frame[0] * s, frame[1] * s, frame[2] * s])
}

/// Result of selecting the transverse direction over a hyperplane `X`.
#[derive(Debug, Clone)]
pub struct NuSelection {
    pub nu: V4,
    /// Components of the area differential over the three-vector basis.
    pub gradient: V4,
    /// `|dA(sigma) - A(sigma)| / A(sigma)`, a homogeneity cross-check.
    pub euler_defect: f64,
    /// Max kernel residual `|dA(nu ^ beta)|` over a spanning set of beta.
    pub kernel_residual: f64,
}

/// Choose the direction `nu` transverse to `X` along which first-order
/// section area change vanishes: the kernel of `beta -> dA(nu ^ beta)`.
///
/// Differentiability of the area at `X` is checked through the un-divided
/// second central difference of `A` along each coordinate three-vector
/// (a kink makes that quantity `O(h)`, differentiable bodies give `O(h^2)`).
pub fn choose_nu(
    body4: &ConvexBody,
    x_basis: &DMatrix<f64>,
    h: f64,
    sphere_nodes: usize,
) -> Result<NuSelection> {
    assert_eq!(body4.dim, 4);
    assert_eq!((x_basis.nrows(), x_basis.ncols()), (4, 3));
    let cols: Vec<V4> = (0..3)
        .map(|c| V4::new(x_basis[(0, c)], x_basis[(1, c)], x_basis[(2, c)], x_basis[(3, c)]))
        .collect();
    let sigma0 = wedge3(&cols[0], &cols[1], &cols[2]);
    let a0 = area_a3(body4, &sigma0, sphere_nodes)?;

    let basis3 = [
        V4::new(1.0, 0.0, 0.0, 0.0),
        V4::new(0.0, 1.0, 0.0, 0.0),
        V4::new(0.0, 0.0, 1.0, 0.0),
        V4::new(0.0, 0.0, 0.0, 1.0),
    ];
    let mut gradient = V4::zeros();
    let step = h * sigma0.norm().max(1.0);
    for (m, e) in basis3.iter().enumerate() {
        let ap = area_a3(body4, &(sigma0 + e * step), sphere_nodes)?;
        let am = area_a3(body4, &(sigma0 - e * step), sphere_nodes)?;
        let second = (ap - 2.0 * a0 + am).abs();
        let tol = 10.0 * h * h * a0.max(1.0);
        if second > tol {
            return Err(Error::NotDifferentiable {
                second_difference: second,
                tol,
            });
        }
        gradient[m] = (ap - am) / (2.0 * step);
    }
    let gnorm = gradient.norm();
    if gnorm < 1e-12 {
        return Err(Error::NullGradient { norm: gnorm });
    }

    let euler = gradient.dot(&sigma0);
    let euler_defect = (euler - a0).abs() / a0;
    assert!(
        euler_defect < 0.05,
        "area differential fails the homogeneity identity: dA(sigma) = {euler:.6e} vs A = {a0:.6e}"
    );

    // dA(x ^ e_j ^ e_k) assembles a 6x4 system whose kernel is nu.
    let mut rows: Vec<[f64; 4]> = Vec::new();
    for j in 0..4 {
        for k in (j + 1)..4 {
            let mut row = [0.0; 4];
            for i in 0..4 {
                if i == j || i == k {
                    continue;
                }
                let tau = wedge3(&basis3[i], &basis3[j], &basis3[k]);
                row[i] = gradient.dot(&tau);
            }
            rows.push(row);
        }
    }
    let m = DMatrix::from_fn(6, 4, |r, c| rows[r][c]);
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.unwrap();
    let mut nu = V4::new(vt[(3, 0)], vt[(3, 1)], vt[(3, 2)], vt[(3, 3)]);
    // Deterministic sign: positive dot with the Euclidean complement of X.
    let complement = euclidean_complement(x_basis);
    if nu.dot(&complement) < 0.0 {
        nu = -nu;
    }

    let kernel_residual = (&m * DVector::from_column_slice(nu.as_slice()))
        .iter()
        .fold(0.0f64, |a, r| a.max(r.abs()))
        / a0;

    Ok(NuSelection {
        nu,
        gradient,
        euler_defect,
        kernel_residual,
    })
}

/// Euclidean unit normal of the column span (used only to fix signs).
fn euclidean_complement(x_basis: &DMatrix<f64>) -> V4 {
    let svd = x_basis.clone().svd(true, false);
    let u = svd.u.unwrap();
    // x_basis is 4x3 of full rank; nalgebra's thin SVD keeps 3 left vectors,
    // so complete the frame by Gram-Schmidt.
    let mut n = V4::zeros();
    'outer: for k in 0..4 {
        let mut v = V4::zeros();
        v[k] = 1.0;
        for c in 0..3 {
            let col = V4::new(u[(0, c)], u[(1, c)], u[(2, c)], u[(3, c)]);
            v -= col * col.dot(&v);
        }
        if v.norm() > 1e-6 {
            n = v.normalize();
            break 'outer;
        }
    }
    n
}

/// Sampled boundary of the intersection body of a symmetric 3-dimensional
/// body: radii `1/A` over a spherical grid of bivector directions.
#[derive(Debug, Clone)]
pub struct IntersectionBodySample {
    pub directions: Vec<Vector3<f64>>,
    pub radii: Vec<f64>,
    /// Largest sampled violation of midpoint convexity of the support.
    pub convexity_violation: f64,
}

pub fn intersection_body_boundary(
    body3: &ConvexBody,
    sphere_nodes: usize,
    angle_nodes: usize,
) -> Result<IntersectionBodySample> {
    let sym_grid = grid::unit_grid(3, 256, 5);
    let asym = symmetry_check(body3, &sym_grid);
    if asym >= 1e-8 {
        return Err(Error::AsymmetricBody { asymmetry: asym });
    }
    let directions = grid::fibonacci_sphere(sphere_nodes);
    let radii = directions
        .iter()
        .map(|d| Ok(1.0 / area_a(body3, &Bivector3(*d), angle_nodes)?))
        .collect::<Result<Vec<f64>>>()?;

    // Midpoint convexity of the sampled boundary: midpoints of boundary
    // points must stay inside (area at the midpoint at most 1).
    let mut rng = grid::rng(41);
    let mut violation = 0.0f64;
    for _ in 0..2048 {
        let i = rng.gen_range(0..sphere_nodes);
        let j = rng.gen_range(0..sphere_nodes);
        if i == j {
            continue;
        }
        let p = directions[i] * radii[i];
        let q = directions[j] * radii[j];
        let mid = (p + q) * 0.5;
        if mid.norm() < 1e-9 {
            continue;
        }
        let a = area_a(body3, &Bivector3(mid), angle_nodes)?;
        violation = violation.max(a - 1.0);
    }
    Ok(IntersectionBodySample {
        directions,
        radii,
        convexity_violation: violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{wedge, QuadForm, V3};
    use crate::body::{make_body, unit_ball, BodySpec};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn ellipsoid_axes(axes: &[f64]) -> ConvexBody {
        let diag: Vec<f64> = axes.iter().map(|a| 1.0 / (a * a)).collect();
        make_body(&BodySpec::Ellipsoid { q: QuadForm::from_diagonal(&diag) }).unwrap()
    }

    #[test]
    fn hyperplane_graph_formulas() {
        let x = DMatrix::from_fn(4, 3, |r, c| if r == c { 1.0 } else { 0.0 });
        let id = hyperplane_graph(&x, &[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(id, x);
        let g = hyperplane_graph(&x, &[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(g.column(0).as_slice(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(g.column(1).as_slice(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn cross_section_of_ball_is_disk() {
        let ball = unit_ball(3);
        let basis = DMatrix::from_fn(3, 2, |r, c| if r == c { 1.0 } else { 0.0 });
        let s = cross_section(&ball, &basis).unwrap();
        assert_abs_diff_eq!(s.body.eval(&[0.6, 0.8]), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn cross_section_of_ellipsoid_restricts_the_form() {
        let e = ellipsoid_axes(&[1.0, 2.0, 3.0]);
        let basis = DMatrix::from_fn(3, 2, |r, c| if r == c { 1.0 } else { 0.0 });
        let s = cross_section(&e, &basis).unwrap();
        assert_abs_diff_eq!(s.body.eval(&[1.0, 0.0]), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.body.eval(&[0.0, 2.0]), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn rank_deficient_basis_is_rejected() {
        let ball = unit_ball(3);
        let basis = DMatrix::from_fn(3, 2, |r, _| if r == 0 { 1.0 } else { 0.0 });
        assert!(matches!(
            cross_section(&ball, &basis),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn area_of_unit_disk_section() {
        let ball = unit_ball(3);
        let sigma = wedge(&V3::x(), &V3::y());
        let a = area_a(&ball, &sigma, 512).unwrap();
        assert_abs_diff_eq!(a, 1.0 / PI, epsilon = 1e-6);
    }

    #[test]
    fn area_of_ellipsoid_section() {
        let e = ellipsoid_axes(&[1.0, 2.0, 3.0]);
        let sigma = wedge(&V3::x(), &V3::y());
        let a = area_a(&e, &sigma, 512).unwrap();
        assert_abs_diff_eq!(a, 1.0 / (2.0 * PI), epsilon = 1e-6);
    }

    #[test]
    fn area_is_homogeneous() {
        let e = ellipsoid_axes(&[1.0, 2.0, 3.0]);
        let sigma = Bivector3(V3::new(0.3, -0.4, 0.8));
        let a1 = area_a(&e, &sigma, 512).unwrap();
        let a2 = area_a(&e, &Bivector3(sigma.0 * 2.0), 512).unwrap();
        assert_abs_diff_eq!(a2, 2.0 * a1, epsilon = 1e-12 * a1.abs().max(1.0));
    }

    #[test]
    fn area_is_representative_independent() {
        let e = ellipsoid_axes(&[1.0, 2.0, 3.0]);
        let sigma = Bivector3(V3::new(0.3, -0.4, 0.8));
        let a1 = area_a(&e, &sigma, 512).unwrap();
        // Sheared representatives of the same bivector.
        let (u, v) = sigma.balanced_representatives().unwrap();
        let u2 = u * 2.0 + v * 0.7;
        let v2 = v * 0.5;
        assert_abs_diff_eq!((wedge(&u2, &v2).0 - sigma.0).norm(), 0.0, epsilon = 1e-12);
        let a2 = area_from_representatives(&e, &u2, &v2, 512);
        assert_abs_diff_eq!(a1, a2, epsilon = 1e-10);
    }

    #[test]
    fn nu_for_round_ball_is_e4() {
        let ball4 = unit_ball(4);
        let x = DMatrix::from_fn(4, 3, |r, c| if r == c { 1.0 } else { 0.0 });
        let sel = choose_nu(&ball4, &x, 1e-3, 2048).unwrap();
        assert!(sel.nu[3].abs() > 1.0 - 1e-5, "nu = {:?}", sel.nu);
        assert!(sel.kernel_residual < 1e-5);
    }

    #[test]
    fn nu_for_coordinate_ellipsoid_is_e4() {
        let e4 = make_body(&BodySpec::Ellipsoid {
            q: QuadForm::from_diagonal(&[1.0, 0.5, 1.0 / 3.0, 0.25]),
        })
        .unwrap();
        let x = DMatrix::from_fn(4, 3, |r, c| if r == c { 1.0 } else { 0.0 });
        let sel = choose_nu(&e4, &x, 1e-3, 2048).unwrap();
        assert!(sel.nu[3].abs() > 1.0 - 1e-5, "nu = {:?}", sel.nu);
        assert!(sel.kernel_residual < 1e-5);
    }

    #[test]
    fn intersection_body_of_ball_is_round() {
        let ball = unit_ball(3);
        let s = intersection_body_boundary(&ball, 256, 512).unwrap();
        for r in &s.radii {
            assert_abs_diff_eq!(*r, PI, epsilon = 1e-6);
        }
        assert!(s.convexity_violation < 1e-6);
    }

    #[test]
    fn intersection_body_convexity_for_ellipsoid() {
        let e = ellipsoid_axes(&[1.0, 2.0, 3.0]);
        let s = intersection_body_boundary(&e, 256, 512).unwrap();
        assert!(s.convexity_violation < 1e-6, "violation {}", s.convexity_violation);
    }

    #[test]
    fn asymmetric_bodies_are_gated() {
        let b = ConvexBody::custom(
            3,
            |x| (x.iter().map(|c| c * c).sum::<f64>()).sqrt() + 0.1 * x[0],
            None,
            false,
            false,
        );
        assert!(matches!(
            intersection_body_boundary(&b, 64, 64),
            Err(Error::AsymmetricBody { .. })
        ));
    }
}
