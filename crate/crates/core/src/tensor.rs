//! The trace-free tensor measuring first-order variation of hyperplane
//! cross-sections, built by two independent routes.
//!
//! Working over a fixed hyperplane `X` of a 4-dimensional body with a
//! transverse direction `nu`, nearby hyperplanes are graphs of covectors
//! `lambda` on `X`. The smooth route differentiates the nearest-to-identity
//! equivalence between the central section and the tilted sections through
//! `+-h lambda`. The orbit route normalizes the difference between that
//! equivalence and the inclusion, extrapolates the tilt to zero, reads the
//! transversality constant off the `nu`-component, and projects back to `X`.
//! Both routes finish with the trace adjustment that moves the trace of the
//! tensor into a correction of `nu`, which also cancels any in-plane error
//! of the transverse direction to first order.

use crate::algebra::{Covector3, M3, V3, V4};
use crate::body::{dir_deriv, ConvexBody};
use crate::equivalence::{
    analyze_symmetries, equivalence_residual, linear_equivalence_report, nearest_to_identity,
    EquivConfig, SymmetryInfo,
};
use crate::error::{Error, Result};
use crate::grid;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Linear map from covectors on `X` to operators on `X`: `comps[i]` is the
/// operator attached to the i-th dual basis covector.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionTensor {
    pub comps: [M3; 3],
}

impl SectionTensor {
    pub fn zero() -> Self {
        SectionTensor {
            comps: [M3::zeros(); 3],
        }
    }

    pub fn new(comps: [M3; 3]) -> Self {
        SectionTensor { comps }
    }

    /// The operator attached to a covector, by linearity.
    pub fn apply(&self, lambda: &Covector3) -> M3 {
        self.comps[0] * lambda.0[0] + self.comps[1] * lambda.0[1] + self.comps[2] * lambda.0[2]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.comps.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn max_abs_trace(&self) -> f64 {
        self.comps
            .iter()
            .fold(0.0f64, |a, m| a.max(m.trace().abs()))
    }

    pub fn add(&self, other: &Self) -> Self {
        SectionTensor::new([
            self.comps[0] + other.comps[0],
            self.comps[1] + other.comps[1],
            self.comps[2] + other.comps[2],
        ])
    }

    pub fn sub(&self, other: &Self) -> Self {
        SectionTensor::new([
            self.comps[0] - other.comps[0],
            self.comps[1] - other.comps[1],
            self.comps[2] - other.comps[2],
        ])
    }

    pub fn scale(&self, s: f64) -> Self {
        SectionTensor::new([self.comps[0] * s, self.comps[1] * s, self.comps[2] * s])
    }

    /// Transport under the change of variables `x' = A x`: operators are
    /// conjugated, covectors pulled back.
    pub fn conjugate(&self, a: &M3) -> Self {
        let a_inv = a.try_inverse().expect("conjugating map must be invertible");
        let mut comps = [M3::zeros(); 3];
        for (i, out) in comps.iter_mut().enumerate() {
            // new i-th covector pulls back to the i-th row of A
            let mut combo = M3::zeros();
            for j in 0..3 {
                combo += self.comps[j] * a[(i, j)];
            }
            *out = a * combo * a_inv;
        }
        SectionTensor::new(comps)
    }

    /// `R_lambda(x) = l x x` with `l` the coordinate vector of `lambda`.
    /// Tangent to every centered sphere; nondegenerate everywhere.
    pub fn cross_product() -> Self {
        SectionTensor::new([
            cross_matrix(&V3::x()),
            cross_matrix(&V3::y()),
            cross_matrix(&V3::z()),
        ])
    }

    /// `R_lambda = lambda_axis * J_axis`: rotation about one axis, keyed to
    /// the same dual coordinate. Degenerate at every point.
    pub fn axis_rotation(axis: usize) -> Self {
        let mut comps = [M3::zeros(); 3];
        let mut e = V3::zeros();
        e[axis] = 1.0;
        comps[axis] = cross_matrix(&e);
        SectionTensor::new(comps)
    }

    /// `R = lambda_1 J_1 + lambda_2 J_2`: degenerate on a proper cone.
    pub fn two_axis_rotation() -> Self {
        SectionTensor::new([cross_matrix(&V3::x()), cross_matrix(&V3::y()), M3::zeros()])
    }

    /// Seeded random tensor with trace-free components.
    pub fn random_trace_free(rng: &mut impl rand::Rng) -> Self {
        let mut comps = [M3::zeros(); 3];
        for m in comps.iter_mut() {
            let mut a = M3::zeros();
            for r in 0..3 {
                for c in 0..3 {
                    a[(r, c)] = grid::standard_normal(rng);
                }
            }
            let t = a.trace() / 3.0;
            for d in 0..3 {
                a[(d, d)] -= t;
            }
            *m = a;
        }
        SectionTensor::new(comps)
    }
}

pub fn cross_matrix(l: &V3) -> M3 {
    M3::new(0.0, -l.z, l.y, l.z, 0.0, -l.x, -l.y, l.x, 0.0)
}

/// Configuration of the tensor build.
#[derive(Debug, Clone)]
pub struct TensorBuildConfig {
    /// Tilt used by the smooth route's central difference.
    pub h: f64,
    /// Acceptance gate for every equivalence search.
    pub equiv_tol: f64,
    /// Macroscopic tilt magnitudes probed before building anything.
    pub probe_tilts: Vec<f64>,
    /// Decreasing tilt sequence for the orbit route.
    pub t_seq: Vec<f64>,
    /// Boundary grid size for residuals and fits.
    pub grid_n: usize,
    pub equiv: EquivConfig,
}

impl Default for TensorBuildConfig {
    fn default() -> Self {
        TensorBuildConfig {
            h: 1e-3,
            equiv_tol: 1e-4,
            probe_tilts: vec![0.25, 0.5],
            t_seq: vec![1e-2, 5e-3, 2.5e-3],
            grid_n: 512,
            equiv: EquivConfig::default(),
        }
    }
}

/// Diagnostics shared by both construction routes.
#[derive(Debug, Clone)]
pub struct TensorBuild {
    pub tensor: SectionTensor,
    /// Transverse direction after the trace adjustment.
    pub nu: V4,
    /// Largest best-match residual seen across the macroscopic probes.
    pub probe_residual: f64,
    /// Largest equivalence residual among the small-tilt searches.
    pub equiv_residual: f64,
    /// Transversality constants fitted by the orbit route (empty for the
    /// smooth route).
    pub c_constants: Vec<f64>,
}

/// The central section as a body in hyperplane coordinates, together with
/// the graph sections of nearby covectors.
pub fn graph_section(body4: &ConvexBody, x_basis: &DMatrix<f64>, nu: &V4, lambda: &V3) -> ConvexBody {
    assert_eq!(body4.dim, 4);
    let emb = DMatrix::from_fn(4, 3, |r, c| x_basis[(r, c)] + lambda[c] * nu[r]);
    let parent = body4.clone();
    let parent_grad = body4.clone();
    let emb_grad = emb.clone();
    let smooth = body4.smooth;
    let norm = move |x: &[f64]| {
        let v = &emb * DVector::from_column_slice(x);
        parent.eval(v.as_slice())
    };
    let gradient: Option<std::sync::Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>> = if smooth {
        Some(std::sync::Arc::new(move |x: &[f64]| {
            let v = &emb_grad * DVector::from_column_slice(x);
            let g = parent_grad.gradient(v.as_slice()).expect("smooth parent");
            let pulled = emb_grad.transpose() * DVector::from_column_slice(&g);
            pulled.iter().copied().collect()
        }))
    } else {
        None
    };
    ConvexBody::custom(3, norm, gradient, body4.symmetric, smooth)
}

/// Equivalence from the central section onto the graph section of
/// `lambda`, selected nearest to the identity. For small tilts a direct
/// Gauss-Newton from the identity is tried first.
fn nearest_equivalence(
    k: &ConvexBody,
    k_lambda: &ConvexBody,
    info: &SymmetryInfo,
    lambda: &V3,
    cfg: &TensorBuildConfig,
    near_identity: bool,
) -> Result<(DMatrix<f64>, f64)> {
    let grid_pts: Vec<Vec<f64>> = grid::unit_grid(3, cfg.grid_n, cfg.equiv.seed ^ 0xb0d1)
        .into_iter()
        .map(|d| k.boundary_point(&d))
        .collect();
    let mut found: Option<DMatrix<f64>> = None;
    if near_identity && k.smooth && k_lambda.smooth {
        let f = crate::equivalence::polish_in_gl(
            k,
            k_lambda,
            &DMatrix::identity(3, 3),
            &grid_pts,
            cfg.equiv.descent_tol,
        );
        if equivalence_residual(k_lambda, &f, &grid_pts) < cfg.equiv_tol {
            found = Some(f);
        }
    }
    let f = match found {
        Some(f) => f,
        None => {
            let rep = linear_equivalence_report(k, k_lambda, &cfg.equiv)?;
            if rep.residual >= cfg.equiv_tol {
                return Err(Error::EquivalenceFailed {
                    lambda: [lambda.x, lambda.y, lambda.z],
                    residual: rep.residual,
                    tol: cfg.equiv_tol,
                });
            }
            rep.map
        }
    };
    let f = nearest_to_identity(&f, k, info, &cfg.equiv);
    let residual = equivalence_residual(k_lambda, &f, &grid_pts);
    if residual >= 2.0 * cfg.equiv_tol {
        return Err(Error::EquivalenceFailed {
            lambda: [lambda.x, lambda.y, lambda.z],
            residual,
            tol: 2.0 * cfg.equiv_tol,
        });
    }
    Ok((f, residual))
}

/// Tilt directions used by the monochromaticity probe: the dual basis and
/// its diagonal mixes.
fn probe_directions() -> Vec<V3> {
    let s2 = 1.0 / 2.0f64.sqrt();
    let s3 = 1.0 / 3.0f64.sqrt();
    vec![
        V3::new(1.0, 0.0, 0.0),
        V3::new(0.0, 1.0, 0.0),
        V3::new(0.0, 0.0, 1.0),
        V3::new(s2, s2, 0.0),
        V3::new(s2, 0.0, s2),
        V3::new(0.0, s2, s2),
        V3::new(s3, s3, s3),
    ]
}

/// Check that sections at macroscopic tilts are linearly equivalent to the
/// central one; the failure carries the offending covector and residual.
/// Returns the largest best-match residual across probes.
pub fn monochromaticity_probe(
    body4: &ConvexBody,
    x_basis: &DMatrix<f64>,
    nu: &V4,
    cfg: &TensorBuildConfig,
) -> Result<f64> {
    let k = graph_section(body4, x_basis, nu, &V3::zeros());
    let jobs: Vec<V3> = cfg
        .probe_tilts
        .iter()
        .flat_map(|alpha| probe_directions().into_iter().map(move |d| d * *alpha))
        .collect();
    let results: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|lambda| {
            let k_lambda = graph_section(body4, x_basis, nu, lambda);
            let rep = linear_equivalence_report(&k, &k_lambda, &cfg.equiv)?;
            if rep.residual >= cfg.equiv_tol {
                Err(Error::EquivalenceFailed {
                    lambda: [lambda.x, lambda.y, lambda.z],
                    residual: rep.residual,
                    tol: cfg.equiv_tol,
                })
            } else {
                Ok(rep.residual)
            }
        })
        .collect();
    let mut worst = 0.0f64;
    for r in results {
        worst = worst.max(r?);
    }
    Ok(worst)
}

/// Move the trace of the tensor into the transverse direction: solve
/// `f_i(w) = tr R_{f_i}` off the dual basis, subtract `lambda(x) w`, and
/// shift `nu` by `w`. Pointwise the combined field is unchanged.
pub fn trace_adjust(
    r: &SectionTensor,
    nu: &V4,
    x_basis: &DMatrix<f64>,
) -> (SectionTensor, V4, V3) {
    let w = V3::new(
        r.comps[0].trace(),
        r.comps[1].trace(),
        r.comps[2].trace(),
    );
    let mut comps = [M3::zeros(); 3];
    for i in 0..3 {
        let mut m = r.comps[i];
        // subtract w * e_i^T
        for row in 0..3 {
            m[(row, i)] -= w[row];
        }
        comps[i] = m;
    }
    let w_ambient = x_basis * DVector::from_column_slice(w.as_slice());
    let nu_adj = V4::new(
        nu[0] + w_ambient[0],
        nu[1] + w_ambient[1],
        nu[2] + w_ambient[2],
        nu[3] + w_ambient[3],
    );
    (SectionTensor::new(comps), nu_adj, w)
}

/// Smooth route: central differences of the nearest-to-identity
/// equivalences at `+-h` along each dual basis covector.
pub fn build_r_smooth(
    body4: &ConvexBody,
    x_basis: &DMatrix<f64>,
    nu: &V4,
    cfg: &TensorBuildConfig,
) -> Result<TensorBuild> {
    let probe_residual = monochromaticity_probe(body4, x_basis, nu, cfg)?;
    let k = graph_section(body4, x_basis, nu, &V3::zeros());
    let info = analyze_symmetries(&k, &cfg.equiv)?;

    let jobs: Vec<(usize, f64)> = (0..3)
        .flat_map(|i| [(i, cfg.h), (i, -cfg.h)])
        .collect();
    let results: Vec<Result<(usize, f64, DMatrix<f64>, f64)>> = jobs
        .par_iter()
        .map(|(i, t)| {
            let mut lambda = V3::zeros();
            lambda[*i] = *t;
            let k_lambda = graph_section(body4, x_basis, nu, &lambda);
            let (g, res) = nearest_equivalence(&k, &k_lambda, &info, &lambda, cfg, true)?;
            Ok((*i, *t, g, res))
        })
        .collect();

    let mut plus = [M3::zeros(); 3];
    let mut minus = [M3::zeros(); 3];
    let mut equiv_residual = 0.0f64;
    for r in results {
        let (i, t, g, res) = r?;
        equiv_residual = equiv_residual.max(res);
        let m = M3::from_fn(|a, b| g[(a, b)]);
        if t > 0.0 {
            plus[i] = m;
        } else {
            minus[i] = m;
        }
    }
    let raw = SectionTensor::new([
        (plus[0] - minus[0]) / (2.0 * cfg.h),
        (plus[1] - minus[1]) / (2.0 * cfg.h),
        (plus[2] - minus[2]) / (2.0 * cfg.h),
    ]);
    let (tensor, nu_adj, _) = trace_adjust(&raw, nu, x_basis);
    Ok(TensorBuild {
        tensor,
        nu: nu_adj,
        probe_residual,
        equiv_residual,
        c_constants: Vec::new(),
    })
}

/// Orbit route: normalized differences from the inclusion at a decreasing
/// tilt sequence, Richardson extrapolated; the transversality constant is
/// fitted from the `nu`-component and divides the projected block.
pub fn build_r_orbit(
    body4: &ConvexBody,
    x_basis: &DMatrix<f64>,
    nu: &V4,
    cfg: &TensorBuildConfig,
) -> Result<TensorBuild> {
    assert!(cfg.t_seq.len() >= 2, "orbit route needs at least two tilts");
    let probe_residual = monochromaticity_probe(body4, x_basis, nu, cfg)?;
    let k = graph_section(body4, x_basis, nu, &V3::zeros());
    let info = analyze_symmetries(&k, &cfg.equiv)?;
    let metric = info.metric.matrix().clone();
    let metric_inv = metric.clone().try_inverse().expect("metric invertible");

    // Norm on maps X -> X x R nu from the invariant product, nu unit and
    // orthogonal to X.
    let hom_norm = |f: &DMatrix<f64>| -> f64 {
        // f is 4x3: top 3x3 block into X, bottom row the nu-coefficient.
        let top = f.view((0, 0), (3, 3)).into_owned();
        let bottom = f.view((3, 0), (1, 3)).into_owned();
        let x_part = (&top * &metric_inv * top.transpose() * &metric).trace();
        let nu_part = (&bottom * &metric_inv * bottom.transpose())[(0, 0)];
        (x_part + nu_part).sqrt()
    };

    let grid_pts: Vec<V3> = grid::unit_grid(3, cfg.grid_n, cfg.equiv.seed ^ 0x9e0)
        .into_iter()
        .map(|d| {
            let b = k.boundary_point(&d);
            V3::new(b[0], b[1], b[2])
        })
        .collect();

    let jobs: Vec<(usize, f64)> = (0..3)
        .flat_map(|i| cfg.t_seq.iter().map(move |t| (i, *t)))
        .collect();
    let results: Vec<Result<(usize, f64, DMatrix<f64>, f64)>> = jobs
        .par_iter()
        .map(|(i, t)| {
            let mut lambda = V3::zeros();
            lambda[*i] = *t;
            let k_lambda = graph_section(body4, x_basis, nu, &lambda);
            let (g, res) = nearest_equivalence(&k, &k_lambda, &info, &lambda, cfg, true)?;
            // Lift to the graph: F(x) = G(x) + lambda(G x) nu.
            let mut f = DMatrix::zeros(4, 3);
            for a in 0..3 {
                for b in 0..3 {
                    f[(a, b)] = g[(a, b)];
                }
            }
            for b in 0..3 {
                f[(3, b)] = t * g(((*i), b));
            }
            Ok((*i, *t, f, res))
        })
        .collect();

    let mut per_lambda: Vec<Vec<(f64, DMatrix<f64>)>> = vec![Vec::new(); 3];
    let mut equiv_residual = 0.0f64;
    for r in results {
        let (i, t, f, res) = r?;
        equiv_residual = equiv_residual.max(res);
        per_lambda[i].push((t, f));
    }

    let i0 = {
        let mut m = DMatrix::zeros(4, 3);
        for a in 0..3 {
            m[(a, a)] = 1.0;
        }
        m
    };

    let mut comps = [M3::zeros(); 3];
    let mut c_constants = Vec::new();
    for i in 0..3 {
        per_lambda[i].sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let dirs: Vec<(f64, DMatrix<f64>)> = per_lambda[i]
            .iter()
            .map(|(t, f)| {
                let d = f - &i0;
                let n = hom_norm(&d);
                (*t, d / n)
            })
            .collect();
        let w = richardson(&dirs);
        // Fit the transversality constant from the nu row against the
        // covector, over the boundary grid.
        let mut num = 0.0;
        let mut den = 0.0;
        for p in &grid_pts {
            let wnu = w[(3, 0)] * p.x + w[(3, 1)] * p.y + w[(3, 2)] * p.z;
            let lam = p[i];
            num += wnu * lam;
            den += lam * lam;
        }
        let c = num / den;
        if c < 1e-8 {
            return Err(Error::CDegenerate { c });
        }
        c_constants.push(c);
        comps[i] = M3::from_fn(|a, b| w[(a, b)] / c);
    }
    let raw = SectionTensor::new(comps);
    let (tensor, nu_adj, _) = trace_adjust(&raw, nu, x_basis);
    Ok(TensorBuild {
        tensor,
        nu: nu_adj,
        probe_residual,
        equiv_residual,
        c_constants,
    })
}

/// Richardson extrapolation to zero tilt, first order in `t`, using the
/// actual ratios of the (decreasing) sequence.
fn richardson(values: &[(f64, DMatrix<f64>)]) -> DMatrix<f64> {
    let mut table: Vec<(f64, DMatrix<f64>)> = values.to_vec();
    let mut order = 1.0;
    while table.len() > 1 {
        let mut next = Vec::with_capacity(table.len() - 1);
        for w in table.windows(2) {
            let (t0, ref m0) = w[0];
            let (t1, ref m1) = w[1];
            let r = (t0 / t1).powf(order);
            next.push((t1, (m1 * r - m0) / (r - 1.0)));
        }
        table = next;
        order += 1.0;
    }
    table.pop().unwrap().1
}

/// Residuals of the defining properties of a built tensor.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RVerificationReport {
    pub trace_residual: f64,
    pub tangency_residual: f64,
    pub orthogonality_residual: f64,
}

/// Check trace-freeness, boundary tangency of `R_lambda(x) + lambda(x) nu`
/// over the covector basis, and orthogonality to the self-equivalence
/// algebra in the invariant metric.
pub fn verify_r(
    body4: &ConvexBody,
    x_basis: &DMatrix<f64>,
    nu: &V4,
    r: &SectionTensor,
    grid_n: usize,
    equiv: &EquivConfig,
) -> Result<RVerificationReport> {
    let k = graph_section(body4, x_basis, nu, &V3::zeros());
    let trace_residual = r.max_abs_trace();

    let mut tangency = 0.0f64;
    for dir in grid::unit_grid(3, grid_n, equiv.seed ^ 0x7a) {
        let xk = k.boundary_point(&dir);
        let x3 = V3::new(xk[0], xk[1], xk[2]);
        let x_amb = x_basis * DVector::from_column_slice(&xk);
        for i in 0..3 {
            for sgn in [1.0, -1.0] {
                let mut lambda = V3::zeros();
                lambda[i] = sgn;
                let rx = r.apply(&Covector3(lambda)) * x3;
                let lam_x = lambda.dot(&x3);
                let v_amb = x_basis * DVector::from_column_slice(rx.as_slice())
                    + DVector::from_column_slice(&[
                        lam_x * nu[0],
                        lam_x * nu[1],
                        lam_x * nu[2],
                        lam_x * nu[3],
                    ]);
                let vnorm = v_amb.norm();
                let d = dir_deriv(body4, x_amb.as_slice(), v_amb.as_slice());
                tangency = tangency.max(d.abs() / (1.0 + vnorm));
            }
        }
    }

    let info = analyze_symmetries(&k, equiv)?;
    let metric = info.metric.matrix().clone();
    let metric_inv = metric.clone().try_inverse().expect("metric invertible");
    let pair = |a: &M3, b: &DMatrix<f64>| -> f64 {
        let ad = DMatrix::from_fn(3, 3, |r0, c0| a[(r0, c0)]);
        (&ad * &metric_inv * b.transpose() * &metric).trace()
    };
    let self_norm = |a: &M3| -> f64 {
        let ad = DMatrix::from_fn(3, 3, |r0, c0| a[(r0, c0)]);
        (&ad * &metric_inv * ad.transpose() * &metric).trace().sqrt()
    };
    let mut ortho = 0.0f64;
    for l in &info.algebra.basis {
        let ln = (l * &metric_inv * l.transpose() * &metric).trace().sqrt();
        for comp in &r.comps {
            let rn = self_norm(comp);
            if rn > 1e-14 {
                ortho = ortho.max(pair(comp, l).abs() / (rn * ln));
            }
        }
    }

    Ok(RVerificationReport {
        trace_residual,
        tangency_residual: tangency,
        orthogonality_residual: ortho,
    })
}

/// One-sided derivative at zero of the section volume along the linear
/// deformation `F_t(x) = x + t (L x + lambda(x) nu)`.
pub fn section_area_derivative(
    body4: &ConvexBody,
    x_basis: &DMatrix<f64>,
    lambda: &V3,
    l_field: &M3,
    nu: &V4,
    h: f64,
    sphere_nodes: usize,
) -> f64 {
    let volume = |t: f64| -> f64 {
        let w = 4.0 * std::f64::consts::PI / sphere_nodes as f64;
        let mut acc = 0.0;
        for s in grid::fibonacci_sphere(sphere_nodes) {
            let x = V3::new(s.x, s.y, s.z);
            let moved = x + (l_field * x + V3::zeros()) * t;
            let lam = lambda.dot(&x) * t;
            let amb = x_basis * DVector::from_column_slice(moved.as_slice())
                + DVector::from_column_slice(&[lam * nu[0], lam * nu[1], lam * nu[2], lam * nu[3]]);
            let psi = body4.eval(amb.as_slice());
            acc += psi.powi(-3);
        }
        acc * w / 3.0
    };
    (volume(h) - volume(0.0)) / h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::QuadForm;
    use crate::body::{make_body, unit_ball, BodySpec};
    use crate::sections::choose_nu;
    use approx::assert_abs_diff_eq;

    fn coord_x() -> DMatrix<f64> {
        DMatrix::from_fn(4, 3, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    #[test]
    fn cross_matrix_is_cross_product() {
        let l = V3::new(0.3, -1.0, 2.0);
        let x = V3::new(1.0, 0.5, -0.7);
        assert_abs_diff_eq!((cross_matrix(&l) * x - l.cross(&x)).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn trace_adjust_dual_basis_solve() {
        // traces (1, 0, 0) move w = e1 into nu
        let mut comps = [M3::zeros(); 3];
        comps[0][(0, 0)] = 1.0;
        let r = SectionTensor::new(comps);
        let (r2, nu2, w) = trace_adjust(&r, &V4::new(0.0, 0.0, 0.0, 1.0), &coord_x());
        assert_abs_diff_eq!(w.x, 1.0);
        assert_abs_diff_eq!(r2.max_abs_trace(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(nu2[0], 1.0);
    }

    #[test]
    fn trace_adjust_is_idempotent_on_trace_free() {
        let mut rng = grid::rng(5);
        let r = SectionTensor::random_trace_free(&mut rng);
        let nu = V4::new(0.0, 0.0, 0.0, 1.0);
        let (r2, nu2, w) = trace_adjust(&r, &nu, &coord_x());
        assert_abs_diff_eq!(w.norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r2.sub(&r).frobenius_norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!((nu2 - nu).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn trace_adjust_preserves_the_combined_field() {
        let mut rng = grid::rng(7);
        // random, deliberately not trace-free
        let mut comps = [M3::zeros(); 3];
        for m in comps.iter_mut() {
            for a in 0..3 {
                for b in 0..3 {
                    m[(a, b)] = grid::standard_normal(&mut rng);
                }
            }
        }
        let r = SectionTensor::new(comps);
        let nu = V4::new(0.1, -0.2, 0.3, 1.0);
        let (r2, nu2, _) = trace_adjust(&r, &nu, &coord_x());
        for _ in 0..32 {
            let x = V3::new(
                grid::standard_normal(&mut rng),
                grid::standard_normal(&mut rng),
                grid::standard_normal(&mut rng),
            );
            let lam = Covector3(V3::new(
                grid::standard_normal(&mut rng),
                grid::standard_normal(&mut rng),
                grid::standard_normal(&mut rng),
            ));
            let lx = lam.apply(&x);
            let before = coord_x() * DVector::from_column_slice((r.apply(&lam) * x).as_slice())
                + DVector::from_column_slice(&[lx * nu[0], lx * nu[1], lx * nu[2], lx * nu[3]]);
            let after = coord_x() * DVector::from_column_slice((r2.apply(&lam) * x).as_slice())
                + DVector::from_column_slice(&[lx * nu2[0], lx * nu2[1], lx * nu2[2], lx * nu2[3]]);
            assert_abs_diff_eq!((before - after).norm(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn section_area_derivative_scaling_control() {
        let ball = unit_ball(4);
        let nu = V4::new(0.0, 0.0, 0.0, 1.0);
        let a0 = {
            // volume of the unit 3-ball
            4.0 * std::f64::consts::PI / 3.0
        };
        let d = section_area_derivative(
            &ball,
            &coord_x(),
            &V3::zeros(),
            &M3::identity(),
            &nu,
            1e-4,
            2048,
        );
        assert_abs_diff_eq!(d, -3.0 * a0, epsilon = 1e-2);
    }

    #[test]
    fn section_area_derivative_vanishes_for_tangent_pairs() {
        let ball = unit_ball(4);
        let nu = V4::new(0.0, 0.0, 0.0, 1.0);
        let skew = cross_matrix(&V3::new(0.2, -0.5, 1.0));
        let d = section_area_derivative(
            &ball,
            &coord_x(),
            &V3::new(0.4, 0.1, -0.3),
            &skew,
            &nu,
            1e-4,
            2048,
        );
        assert!(d.abs() < 1e-4, "derivative {d}");
        let d0 = section_area_derivative(
            &ball,
            &coord_x(),
            &V3::new(1.0, -2.0, 0.5),
            &M3::zeros(),
            &nu,
            1e-4,
            2048,
        );
        assert!(d0.abs() < 1e-4, "derivative {d0}");
    }

    #[test]
    fn smooth_route_vanishes_on_the_ball() {
        let ball = unit_ball(4);
        let x = coord_x();
        let sel = choose_nu(&ball, &x, 1e-3, 2048).unwrap();
        let cfg = TensorBuildConfig::default();
        let build = build_r_smooth(&ball, &x, &sel.nu, &cfg).unwrap();
        assert!(
            build.tensor.frobenius_norm() < 1e-6,
            "R norm {}",
            build.tensor.frobenius_norm()
        );
    }

    #[test]
    fn orbit_route_matches_on_the_ellipsoid() {
        let e4 = make_body(&BodySpec::Ellipsoid {
            q: QuadForm::from_diagonal(&[1.0, 1.0 / 4.0, 1.0 / 9.0, 1.0 / 16.0]),
        })
        .unwrap();
        let x = coord_x();
        let sel = choose_nu(&e4, &x, 1e-3, 2048).unwrap();
        let cfg = TensorBuildConfig::default();
        let smooth = build_r_smooth(&e4, &x, &sel.nu, &cfg).unwrap();
        let orbit = build_r_orbit(&e4, &x, &sel.nu, &cfg).unwrap();
        assert!(smooth.tensor.frobenius_norm() < 1e-5);
        assert!(orbit.tensor.frobenius_norm() < 1e-5);
        assert!(orbit.c_constants.iter().all(|c| *c > 0.0));
        assert!(
            smooth.tensor.sub(&orbit.tensor).frobenius_norm() < 1e-4,
            "route disagreement {}",
            smooth.tensor.sub(&orbit.tensor).frobenius_norm()
        );
    }

    #[test]
    fn l4_ball_fails_the_probe() {
        let l4 = make_body(&BodySpec::Lp { p: 4.0, scales: vec![1.0; 4] }).unwrap();
        let x = coord_x();
        let sel = choose_nu(&l4, &x, 1e-3, 2048).unwrap();
        let cfg = TensorBuildConfig::default();
        let err = build_r_smooth(&l4, &x, &sel.nu, &cfg);
        match err {
            Err(Error::EquivalenceFailed { residual, .. }) => {
                assert!(residual > 1e-2, "residual {residual}");
            }
            other => panic!("expected EquivalenceFailed, got {other:?}"),
        }
    }

    #[test]
    fn verify_r_zero_tensor_on_ball() {
        let ball = unit_ball(4);
        let x = coord_x();
        let nu = V4::new(0.0, 0.0, 0.0, 1.0);
        let rep = verify_r(&ball, &x, &nu, &SectionTensor::zero(), 256, &EquivConfig::default())
            .unwrap();
        assert!(rep.trace_residual < 1e-8);
        assert!(rep.tangency_residual < 1e-8);
        assert!(rep.orthogonality_residual < 1e-8);
    }

    #[test]
    fn verify_r_flags_skew_and_random_tensors() {
        let ball = unit_ball(4);
        let x = coord_x();
        let nu = V4::new(0.0, 0.0, 0.0, 1.0);
        // skew-valued tensor: tangent but inside the symmetry algebra
        let skew = SectionTensor::cross_product();
        let rep = verify_r(&ball, &x, &nu, &skew, 256, &EquivConfig::default()).unwrap();
        assert!(rep.tangency_residual < 1e-8, "tangency {}", rep.tangency_residual);
        assert!(rep.orthogonality_residual > 0.1, "ortho {}", rep.orthogonality_residual);
        // generic tensor: not tangent
        let mut rng = grid::rng(9);
        let rand = SectionTensor::random_trace_free(&mut rng);
        let rep2 = verify_r(&ball, &x, &nu, &rand, 256, &EquivConfig::default()).unwrap();
        assert!(rep2.tangency_residual > 1e-2, "tangency {}", rep2.tangency_residual);
    }
}
