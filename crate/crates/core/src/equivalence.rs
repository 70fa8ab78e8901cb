//! Linear equivalence between convex bodies and the self-equivalence group.
//!
//! The search for an equivalence `F` with `F(K1) = K2` is normalized first:
//! both bodies are mapped so their Loewner ellipsoids become unit balls,
//! which reduces the search from `GL(k)` to the orthogonal group. A
//! Gauss-Newton polish over the full linear group follows, so the final
//! residual is not floored by the sampling accuracy of the normalization.
//!
//! Self-equivalences are found on two levels: the connected part as the
//! near-null space of the linearized tangency operator on trace-free
//! matrices, and a finite part from signed permutations conjugated into the
//! body's normalized frame. Averaging squares of sampled group elements and
//! projecting onto the exact invariance equations yields an invariant inner
//! product, which in turn fixes the nearest-to-identity selection used by
//! the tensor construction.

use crate::algebra::QuadForm;
use crate::body::{dir_deriv, ConvexBody};
use crate::error::{Error, Result};
use crate::grid;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct EquivConfig {
    /// Directions in the residual grid.
    pub grid_n: usize,
    /// Multi-start count for the orthogonal search.
    pub starts: usize,
    /// Step tolerance for the descent.
    pub descent_tol: f64,
    /// Boundary samples feeding the Loewner normalization.
    pub loewner_samples: usize,
    pub loewner_tol: f64,
    pub loewner_max_iters: usize,
    pub seed: u64,
}

impl Default for EquivConfig {
    fn default() -> Self {
        EquivConfig {
            grid_n: 512,
            starts: 32,
            descent_tol: 1e-10,
            loewner_samples: 1024,
            loewner_tol: 1e-9,
            loewner_max_iters: 10_000,
            seed: 0x5151,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EquivalenceResult {
    /// `map` sends the first body onto the second.
    pub map: DMatrix<f64>,
    /// Sup over the boundary grid of the boundary-mapping defect.
    pub residual: f64,
}

/// Minimum-volume centered enclosing ellipsoid of the sampled points,
/// as the form `Q` with `x^T Q x <= 1` for all samples.
///
/// Multiplicative reweighting (u <- u * kappa / d) with Wolfe-Atwood
/// away steps when they dominate; both updates keep the weights on the
/// simplex and increase the design determinant.
pub fn loewner_ellipsoid(points: &[Vec<f64>], tol: f64, max_iters: usize) -> Result<QuadForm> {
    let n = points.len();
    assert!(n > 0);
    let d = points[0].len();
    let xs: Vec<DVector<f64>> = points
        .iter()
        .map(|p| DVector::from_column_slice(p))
        .collect();
    let mut u = vec![1.0 / n as f64; n];
    let design = |u: &[f64]| -> DMatrix<f64> {
        let mut m = DMatrix::zeros(d, d);
        for (w, x) in u.iter().zip(&xs) {
            if *w > 0.0 {
                m += x * x.transpose() * *w;
            }
        }
        m
    };
    let mut gap = f64::INFINITY;
    for _ in 0..max_iters {
        let m = design(&u);
        let minv = m.clone().try_inverse().ok_or(Error::LoewnerNoConvergence {
            max_iters,
            gap,
        })?;
        let kappa: Vec<f64> = xs.iter().map(|x| (x.transpose() * &minv * x)[(0, 0)]).collect();
        let (imax, kmax) = kappa
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, k)| if *k > acc.1 { (i, *k) } else { acc });
        let kmin_support = kappa
            .iter()
            .zip(&u)
            .filter(|(_, w)| **w > 1e-12)
            .map(|(k, _)| *k)
            .fold(f64::MAX, f64::min);
        gap = (kmax / d as f64 - 1.0).max(1.0 - kmin_support / d as f64);
        if gap < tol {
            let q = minv / d as f64;
            return Ok(QuadForm::new(q));
        }
        let plus_excess = kmax - d as f64;
        let away_excess = d as f64 - kmin_support;
        if plus_excess >= away_excess * 8.0 {
            // Single-point step toward the worst offender.
            let beta = plus_excess / (d as f64 * (kmax - 1.0));
            for w in u.iter_mut() {
                *w *= 1.0 - beta;
            }
            u[imax] += beta;
        } else {
            // Multiplicative sweep.
            let mut total = 0.0;
            for (w, k) in u.iter_mut().zip(&kappa) {
                *w *= k / d as f64;
                total += *w;
            }
            for w in u.iter_mut() {
                *w /= total;
            }
        }
    }
    Err(Error::LoewnerNoConvergence { max_iters, gap })
}

/// Sample the boundary (both signs) and enclose it.
pub fn loewner_of_body(body: &ConvexBody, samples: usize, cfg: &EquivConfig) -> Result<QuadForm> {
    let dirs = grid::unit_grid(body.dim, samples, cfg.seed ^ 0x10e);
    let mut pts = Vec::with_capacity(2 * samples);
    for dir in dirs {
        let b = body.boundary_point(&dir);
        pts.push(b.iter().map(|c| -c).collect());
        pts.push(b);
    }
    loewner_ellipsoid(&pts, cfg.loewner_tol, cfg.loewner_max_iters)
}

fn boundary_grid(body: &ConvexBody, n: usize, seed: u64) -> Vec<Vec<f64>> {
    grid::unit_grid(body.dim, n, seed)
        .into_iter()
        .map(|d| body.boundary_point(&d))
        .collect()
}

/// Boundary-mapping defect of a candidate map: sup over the grid of
/// `|Psi2(F x) - 1|` for `x` on the boundary of the first body.
pub fn equivalence_residual(k2: &ConvexBody, map: &DMatrix<f64>, grid_pts: &[Vec<f64>]) -> f64 {
    grid_pts.iter().fold(0.0f64, |acc, x| {
        let y = map * DVector::from_column_slice(x);
        acc.max((k2.eval(y.as_slice()) - 1.0).abs())
    })
}

/// Search for a linear bijection mapping `k1` onto `k2`. Returns `None`
/// when no candidate reaches the tolerance; the best residual is then
/// available through [`linear_equivalence_report`].
pub fn linear_equivalence(
    k1: &ConvexBody,
    k2: &ConvexBody,
    tol: f64,
    cfg: &EquivConfig,
) -> Option<EquivalenceResult> {
    match linear_equivalence_report(k1, k2, cfg) {
        Ok(res) if res.residual < tol => Some(res),
        _ => None,
    }
}

/// Same search, always reporting the best map found.
pub fn linear_equivalence_report(
    k1: &ConvexBody,
    k2: &ConvexBody,
    cfg: &EquivConfig,
) -> Result<EquivalenceResult> {
    let k = k1.dim;
    assert_eq!(k, k2.dim, "bodies must share a dimension");
    assert!((2..=3).contains(&k));

    let q1 = loewner_of_body(k1, cfg.loewner_samples, cfg)?;
    let q2 = loewner_of_body(k2, cfg.loewner_samples, cfg)?;
    let a1 = q1.sqrt_factor();
    let a2 = q2.sqrt_factor();
    let a1_inv = a1.clone().try_inverse().expect("loewner factor invertible");
    let a2_inv = a2.clone().try_inverse().expect("loewner factor invertible");

    // Normalized norms: Psi_i'(y) = Psi_i(A_i^-1 y).
    let n1 = {
        let (body, ai) = (k1.clone(), a1_inv.clone());
        move |y: &DVector<f64>| body.eval((&ai * y).as_slice())
    };
    let n2 = {
        let (body, ai) = (k2.clone(), a2_inv.clone());
        move |y: &DVector<f64>| body.eval((&ai * y).as_slice())
    };

    let dirs: Vec<DVector<f64>> = grid::unit_grid(k, cfg.grid_n, cfg.seed ^ 0x9f1d)
        .into_iter()
        .map(|d| DVector::from_column_slice(&d))
        .collect();
    let targets: Vec<f64> = dirs.iter().map(&n1).collect();

    let cost = |o: &DMatrix<f64>| -> f64 {
        dirs.iter()
            .zip(&targets)
            .fold(0.0f64, |acc, (x, t)| acc.max((n2(&(o * x)) - t).abs()))
    };

    // Multi-start orthogonal descent on the normalized pair.
    let starts = orthogonal_starts(k, cfg.starts, cfg.seed ^ 0x57a7);
    let polished: Vec<(f64, DMatrix<f64>)> = starts
        .par_iter()
        .map(|o0| {
            let o = orthogonal_gauss_newton(&n1, &n2, &dirs, o0, cfg.descent_tol);
            (cost(&o), o)
        })
        .collect();
    let (_, best_o) = polished
        .into_iter()
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
        .unwrap();

    // Compose back to the original coordinates and polish in GL(k).
    let mut map = &a2_inv * &best_o * &a1;
    let grid_pts = boundary_grid(k1, cfg.grid_n, cfg.seed ^ 0xb0d1);
    if k1.smooth && k2.smooth {
        map = gl_polish(k1, k2, &map, &grid_pts, cfg.descent_tol);
    }
    let residual = equivalence_residual(k2, &map, &grid_pts);
    Ok(EquivalenceResult { map, residual })
}

fn orthogonal_starts(k: usize, n: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let mut rng = grid::rng(seed);
    let mut out = vec![DMatrix::identity(k, k)];
    let reflect = |m: &DMatrix<f64>| {
        let mut r = m.clone();
        for row in 0..k {
            r[(row, k - 1)] = -r[(row, k - 1)];
        }
        r
    };
    out.push(reflect(&DMatrix::identity(k, k)));
    while out.len() < n.max(2) {
        let o = if k == 2 {
            let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()])
        } else {
            random_rotation3(&mut rng)
        };
        if out.len() % 2 == 0 {
            out.push(o);
        } else {
            out.push(reflect(&o));
        }
    }
    out
}

fn random_rotation3<R: Rng>(rng: &mut R) -> DMatrix<f64> {
    // Uniform quaternion.
    let q: Vec<f64> = (0..4).map(|_| grid::standard_normal(rng)).collect();
    let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    DMatrix::from_row_slice(
        3,
        3,
        &[
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    )
}

/// Skew matrix with the given chart coordinates (1 parameter in 2D,
/// 3 in 3D).
fn skew_from(params: &[f64], k: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(k, k);
    if k == 2 {
        s[(0, 1)] = -params[0];
        s[(1, 0)] = params[0];
    } else {
        s[(0, 1)] = -params[2];
        s[(1, 0)] = params[2];
        s[(0, 2)] = params[1];
        s[(2, 0)] = -params[1];
        s[(1, 2)] = -params[0];
        s[(2, 1)] = params[0];
    }
    s
}

/// Damped Gauss-Newton over `O = O0 exp(skew)`, least squares of the
/// normalized support mismatch.
fn orthogonal_gauss_newton<F1, F2>(
    n1: &F1,
    n2: &F2,
    dirs: &[DVector<f64>],
    o0: &DMatrix<f64>,
    step_tol: f64,
) -> DMatrix<f64>
where
    F1: Fn(&DVector<f64>) -> f64,
    F2: Fn(&DVector<f64>) -> f64,
{
    let k = o0.nrows();
    let p = if k == 2 { 1 } else { 3 };
    let mut o = o0.clone();
    let targets: Vec<f64> = dirs.iter().map(n1).collect();
    let res = |o: &DMatrix<f64>| -> DVector<f64> {
        DVector::from_iterator(
            dirs.len(),
            dirs.iter().zip(&targets).map(|(x, t)| n2(&(o * x)) - t),
        )
    };
    let mut mu = 1e-8;
    let mut r = res(&o);
    let mut cost = r.norm_squared();
    for _ in 0..60 {
        // Numerical Jacobian in the chart at the current iterate.
        let eps = 1e-6;
        let mut jac = DMatrix::zeros(dirs.len(), p);
        for j in 0..p {
            let mut dp = vec![0.0; p];
            dp[j] = eps;
            let op = &o * skew_from(&dp, k).exp();
            dp[j] = -eps;
            let om = &o * skew_from(&dp, k).exp();
            let rp = res(&op);
            let rm = res(&om);
            for i in 0..dirs.len() {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * eps);
            }
        }
        let jt = jac.transpose();
        let mut step = None;
        for _ in 0..8 {
            let lhs = &jt * &jac + DMatrix::identity(p, p) * mu;
            let rhs = -(&jt * &r);
            if let Some(delta) = lhs.lu().solve(&rhs) {
                let cand = &o * skew_from(delta.as_slice(), k).exp();
                let rc = res(&cand);
                let cc = rc.norm_squared();
                if cc < cost {
                    step = Some((cand, rc, cc, delta.norm()));
                    break;
                }
            }
            mu *= 10.0;
        }
        match step {
            Some((cand, rc, cc, dn)) => {
                o = cand;
                r = rc;
                cost = cc;
                mu = (mu * 0.3).max(1e-12);
                if dn < step_tol {
                    break;
                }
            }
            None => break,
        }
    }
    o
}

/// Gauss-Newton over the full linear group; boundary points of `k1` must
/// land on the boundary of `k2`. Requires analytic gradients.
fn gl_polish(
    k1: &ConvexBody,
    k2: &ConvexBody,
    f0: &DMatrix<f64>,
    grid_pts: &[Vec<f64>],
    step_tol: f64,
) -> DMatrix<f64> {
    let k = k1.dim;
    let m = grid_pts.len();
    let mut f = f0.clone();
    let res = |f: &DMatrix<f64>| -> DVector<f64> {
        DVector::from_iterator(
            m,
            grid_pts.iter().map(|x| {
                let y = f * DVector::from_column_slice(x);
                k2.eval(y.as_slice()) - 1.0
            }),
        )
    };
    let mut r = res(&f);
    let mut cost = r.norm_squared();
    let mut mu = 1e-10;
    for _ in 0..40 {
        let mut jac = DMatrix::zeros(m, k * k);
        for (i, x) in grid_pts.iter().enumerate() {
            let y = &f * DVector::from_column_slice(x);
            let g = match k2.gradient(y.as_slice()) {
                Some(g) => g,
                None => return f,
            };
            for a in 0..k {
                for b in 0..k {
                    jac[(i, a * k + b)] = g[a] * x[b];
                }
            }
        }
        let jt = jac.transpose();
        let mut improved = false;
        for _ in 0..8 {
            let lhs = &jt * &jac + DMatrix::identity(k * k, k * k) * mu;
            let rhs = -(&jt * &r);
            if let Some(delta) = lhs.lu().solve(&rhs) {
                let mut cand = f.clone();
                for a in 0..k {
                    for b in 0..k {
                        cand[(a, b)] += delta[a * k + b];
                    }
                }
                let rc = res(&cand);
                if rc.norm_squared() < cost {
                    let dn = delta.norm();
                    f = cand;
                    r = rc;
                    cost = r.norm_squared();
                    mu = (mu * 0.3).max(1e-14);
                    improved = dn >= step_tol;
                    break;
                }
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    f
}

/// Basis of trace-free linear fields tangent to the boundary.
#[derive(Debug, Clone)]
pub struct SymmetryAlgebra {
    pub basis: Vec<DMatrix<f64>>,
}

impl SymmetryAlgebra {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }
}

fn sl_basis(k: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::new();
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            let mut m = DMatrix::zeros(k, k);
            m[(a, b)] = 1.0;
            out.push(m);
        }
    }
    for a in 0..k - 1 {
        let mut m = DMatrix::zeros(k, k);
        m[(a, a)] = 1.0;
        m[(k - 1, k - 1)] = -1.0;
        out.push(m);
    }
    out
}

/// Near-null space of the tangency evaluation operator on trace-free
/// matrices: each returned generator satisfies
/// `max_x |d+ Psi(+- L x)| < tol` on the boundary grid.
pub fn self_equivalence_algebra(body: &ConvexBody, tol: f64, cfg: &EquivConfig) -> SymmetryAlgebra {
    let k = body.dim;
    let basis = sl_basis(k);
    let pts = boundary_grid(body, cfg.grid_n.min(512), cfg.seed ^ 0xa16);
    let mut eval = DMatrix::zeros(pts.len(), basis.len());
    for (i, x) in pts.iter().enumerate() {
        for (j, b) in basis.iter().enumerate() {
            let v = b * DVector::from_column_slice(x);
            eval[(i, j)] = dir_deriv(body, x, v.as_slice());
        }
    }
    let svd = eval.clone().svd(false, true);
    let vt = svd.v_t.unwrap();
    let smax = svd.singular_values.max().max(1.0);
    let mut found = Vec::new();
    for (idx, s) in svd.singular_values.iter().enumerate() {
        if *s > 1e-4 * smax {
            continue;
        }
        let mut cand = DMatrix::zeros(k, k);
        for (j, b) in basis.iter().enumerate() {
            cand += b * vt[(idx, j)];
        }
        let worst = pts.iter().fold(0.0f64, |acc, x| {
            let v = cand.clone() * DVector::from_column_slice(x);
            let neg = -v.clone();
            acc.max(dir_deriv(body, x, v.as_slice()).abs())
                .max(dir_deriv(body, x, neg.as_slice()).abs())
        });
        if worst < tol {
            found.push(cand);
        }
    }
    SymmetryAlgebra { basis: found }
}

/// Signed permutations conjugated into the normalized frame that map the
/// body onto itself. Always contains the identity.
pub fn detect_finite_symmetries(
    body: &ConvexBody,
    loewner_factor: &DMatrix<f64>,
    tol: f64,
    cfg: &EquivConfig,
) -> Vec<DMatrix<f64>> {
    let k = body.dim;
    let a_inv = loewner_factor
        .clone()
        .try_inverse()
        .expect("loewner factor invertible");
    let pts = boundary_grid(body, 128, cfg.seed ^ 0xf1);
    let defect = |s: &DMatrix<f64>| {
        pts.iter().fold(0.0f64, |acc, x| {
            let y = s * DVector::from_column_slice(x);
            acc.max((body.eval(y.as_slice()) - 1.0).abs())
        })
    };
    let mut out: Vec<DMatrix<f64>> = Vec::new();
    for p in signed_permutations(k) {
        // The plain candidate handles coordinate-aligned bodies exactly;
        // the conjugated one covers bodies symmetric in their normalized
        // frame only. Keep whichever verifies, without duplicates.
        let conj = &a_inv * &p * loewner_factor;
        for s in [p, conj] {
            if defect(&s) < tol && out.iter().all(|t| (t - &s).norm() > 1e-6) {
                out.push(s);
            }
        }
    }
    if out.is_empty() {
        out.push(DMatrix::identity(k, k));
    }
    out
}

fn signed_permutations(k: usize) -> Vec<DMatrix<f64>> {
    let mut perms: Vec<Vec<usize>> = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    permute(&mut idx, 0, &mut perms);
    let mut out = Vec::new();
    for p in &perms {
        for signs in 0..(1 << k) {
            let mut m = DMatrix::zeros(k, k);
            for (col, &row) in p.iter().enumerate() {
                let sgn = if (signs >> col) & 1 == 1 { -1.0 } else { 1.0 };
                m[(row, col)] = sgn;
            }
            out.push(m);
        }
    }
    out
}

fn permute(idx: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == idx.len() {
        out.push(idx.clone());
        return;
    }
    for i in k..idx.len() {
        idx.swap(k, i);
        permute(idx, k + 1, out);
        idx.swap(k, i);
    }
}

/// Everything the nearest-to-identity selection needs about one body.
#[derive(Debug, Clone)]
pub struct SymmetryInfo {
    pub algebra: SymmetryAlgebra,
    pub finite: Vec<DMatrix<f64>>,
    /// Invariant inner product, determinant-normalized.
    pub metric: QuadForm,
    pub loewner: QuadForm,
}

pub fn analyze_symmetries(body: &ConvexBody, cfg: &EquivConfig) -> Result<SymmetryInfo> {
    let loewner = loewner_of_body(body, cfg.loewner_samples, cfg)?;
    let factor = loewner.sqrt_factor();
    let algebra = self_equivalence_algebra(body, 1e-6, cfg);
    let finite = detect_finite_symmetries(body, &factor, 1e-6, cfg);
    let metric = invariant_inner_product_from_parts(body.dim, &algebra, &finite, 128, cfg.seed);
    Ok(SymmetryInfo {
        algebra,
        finite,
        metric,
        loewner,
    })
}

/// Invariant inner product: average of `S^T S` over sampled group elements,
/// then projected onto the exact solution space of the invariance equations
/// and determinant-normalized.
pub fn invariant_inner_product(body: &ConvexBody, samples: usize, cfg: &EquivConfig) -> Result<QuadForm> {
    let info = analyze_symmetries_with_samples(body, samples, cfg)?;
    Ok(info.metric)
}

fn analyze_symmetries_with_samples(
    body: &ConvexBody,
    samples: usize,
    cfg: &EquivConfig,
) -> Result<SymmetryInfo> {
    let loewner = loewner_of_body(body, cfg.loewner_samples, cfg)?;
    let factor = loewner.sqrt_factor();
    let algebra = self_equivalence_algebra(body, 1e-6, cfg);
    let finite = detect_finite_symmetries(body, &factor, 1e-6, cfg);
    let metric = invariant_inner_product_from_parts(body.dim, &algebra, &finite, samples, cfg.seed);
    Ok(SymmetryInfo {
        algebra,
        finite,
        metric,
        loewner,
    })
}

fn invariant_inner_product_from_parts(
    k: usize,
    algebra: &SymmetryAlgebra,
    finite: &[DMatrix<f64>],
    samples: usize,
    seed: u64,
) -> QuadForm {
    let mut rng = grid::rng(seed ^ 0x1a7e);
    let mut avg = DMatrix::<f64>::zeros(k, k);
    let mut count = 0usize;
    for g in finite {
        if algebra.dim() == 0 {
            avg += g.transpose() * g;
            count += 1;
            continue;
        }
        for _ in 0..samples.max(1) / finite.len().max(1) + 1 {
            let mut exponent = DMatrix::<f64>::zeros(k, k);
            for l in &algebra.basis {
                exponent += l * (grid::standard_normal(&mut rng) * std::f64::consts::PI);
            }
            let s = g * exponent.exp();
            avg += s.transpose() * &s;
            count += 1;
        }
    }
    avg /= count as f64;

    // Project onto the solution space of the exact invariance equations.
    let sym_dim = k * (k + 1) / 2;
    let sym_pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|a| (a..k).map(move |b| (a, b)))
        .collect();
    let to_mat = |v: &DVector<f64>| -> DMatrix<f64> {
        let mut m = DMatrix::zeros(k, k);
        for (idx, (a, b)) in sym_pairs.iter().enumerate() {
            m[(*a, *b)] = v[idx];
            m[(*b, *a)] = v[idx];
        }
        m
    };
    let to_vec = |m: &DMatrix<f64>| -> DVector<f64> {
        DVector::from_iterator(sym_dim, sym_pairs.iter().map(|(a, b)| m[(*a, *b)]))
    };
    // Constraint operator: column idx stacks the images of the idx-th
    // symmetric basis matrix under M -> L^T M + M L and M -> g^T M g - M.
    let n_sources = algebra.basis.len() + finite.len();
    let mut constraint = DMatrix::<f64>::zeros(n_sources * sym_dim, sym_dim);
    for idx in 0..sym_dim {
        let mut basis_vec = DVector::zeros(sym_dim);
        basis_vec[idx] = 1.0;
        let e = to_mat(&basis_vec);
        let mut offset = 0;
        for l in &algebra.basis {
            let img = to_vec(&(l.transpose() * &e + &e * l));
            for c in 0..sym_dim {
                constraint[(offset + c, idx)] = img[c];
            }
            offset += sym_dim;
        }
        for g in finite {
            let img = to_vec(&(g.transpose() * &e * g - &e));
            for c in 0..sym_dim {
                constraint[(offset + c, idx)] = img[c];
            }
            offset += sym_dim;
        }
    }
    let avg_vec = to_vec(&avg);
    let projected: DVector<f64> = {
        let svd = constraint.clone().svd(false, true);
        let vt = svd.v_t.unwrap();
        let smax = svd.singular_values.max().max(1.0);
        let mut proj = DVector::zeros(sym_dim);
        for (i, s) in svd.singular_values.iter().enumerate() {
            if *s < 1e-8 * smax {
                let dir = DVector::from_iterator(sym_dim, (0..sym_dim).map(|c| vt[(i, c)]));
                proj += &dir * dir.dot(&avg_vec);
            }
        }
        if proj.norm() < 1e-10 {
            avg_vec
        } else {
            proj
        }
    };
    let mut m = to_mat(&projected);
    // Determinant normalization fixes the scale.
    let det = m.determinant();
    if det > 1e-300 {
        m /= det.powf(1.0 / k as f64);
    }
    QuadForm::new(m)
}

/// Nearest member of the equivalence class `{G S : S in I(K)}` to the
/// identity, in the sense of the invariant trace pairing: maximize
/// `tr(G S)` over the detected symmetries. Exact over the finite part;
/// over a one-parameter connected part by sampled-and-refined angle; over
/// a full rotation group by the orthogonal Procrustes solution conjugated
/// with the metric factor.
pub fn nearest_to_identity(
    g0: &DMatrix<f64>,
    body: &ConvexBody,
    info: &SymmetryInfo,
    cfg: &EquivConfig,
) -> DMatrix<f64> {
    let k = g0.nrows();
    let pts = boundary_grid(body, 128, cfg.seed ^ 0x1d);
    let preserves = |s: &DMatrix<f64>| -> bool {
        pts.iter().all(|x| {
            let y = s * DVector::from_column_slice(x);
            (body.eval(y.as_slice()) - 1.0).abs() < 1e-5
        })
    };
    let mut best = g0.clone();
    let mut best_score = g0.trace();
    let mut consider = |s: DMatrix<f64>| {
        let cand = g0 * &s;
        let score = cand.trace();
        if score > best_score + 1e-14 && preserves(&s) {
            best_score = score;
            best = cand;
        }
    };

    for g in &info.finite {
        match info.algebra.dim() {
            0 => consider(g.clone()),
            1 => {
                let l = &info.algebra.basis[0];
                let omega = rotation_speed(l);
                let period = if omega > 1e-9 {
                    std::f64::consts::TAU / omega
                } else {
                    std::f64::consts::TAU
                };
                // Coarse scan plus golden-section refinement of tr(G g e^{tL}).
                let score_at = |t: f64| (g0 * g * (l.clone() * t).exp()).trace();
                let mut t_best = 0.0;
                let mut v_best = f64::MIN;
                let nscan = 64;
                for i in 0..nscan {
                    let t = period * i as f64 / nscan as f64;
                    let v = score_at(t);
                    if v > v_best {
                        v_best = v;
                        t_best = t;
                    }
                }
                let (mut lo, mut hi) = (t_best - period / nscan as f64, t_best + period / nscan as f64);
                for _ in 0..80 {
                    let m1 = lo + (hi - lo) * 0.381966;
                    let m2 = hi - (hi - lo) * 0.381966;
                    if score_at(m1) < score_at(m2) {
                        lo = m1;
                    } else {
                        hi = m2;
                    }
                }
                let t_opt = 0.5 * (lo + hi);
                consider(g * (l.clone() * t_opt).exp());
            }
            _ => {
                // Full rotation group in the metric frame: Procrustes.
                let a = info.metric.sqrt_factor();
                let a_inv = a.clone().try_inverse().unwrap();
                let c = &a * g0 * &a_inv;
                let svd = c.clone().svd(true, true);
                let u = svd.u.unwrap();
                let vt = svd.v_t.unwrap();
                let o_full = vt.transpose() * u.transpose();
                consider(&a_inv * &o_full * &a);
                // Determinant-one fallback when reflections are not symmetries.
                let mut d = DMatrix::identity(k, k);
                d[(k - 1, k - 1)] = o_full.determinant().signum();
                let o_rot = vt.transpose() * d * u.transpose();
                consider(&a_inv * &o_rot * &a);
            }
        }
    }
    best
}

/// Imaginary part of the leading eigenvalue pair of a rotation-like
/// generator; zero for nilpotent directions.
fn rotation_speed(l: &DMatrix<f64>) -> f64 {
    l.complex_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, e| acc.max(e.im.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{l1_ball, make_body, unit_ball, BodySpec};
    use approx::assert_abs_diff_eq;

    fn disk() -> ConvexBody {
        unit_ball(2)
    }

    fn square() -> ConvexBody {
        ConvexBody::custom(2, |x| x[0].abs().max(x[1].abs()), None, true, false)
    }

    fn ellipse_axes(a: f64, b: f64) -> ConvexBody {
        make_body(&BodySpec::Ellipsoid {
            q: QuadForm::from_diagonal(&[1.0 / (a * a), 1.0 / (b * b)]),
        })
        .unwrap()
    }

    #[test]
    fn loewner_of_disk_is_identity() {
        let cfg = EquivConfig::default();
        let q = loewner_of_body(&disk(), 512, &cfg).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(q.matrix()[(a, b)], want, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn loewner_of_ellipse_recovers_the_form() {
        let cfg = EquivConfig { loewner_samples: 4096, ..Default::default() };
        let q = loewner_of_body(&ellipse_axes(2.0, 1.0), 4096, &cfg).unwrap();
        assert_abs_diff_eq!(q.matrix()[(0, 0)], 0.25, epsilon = 1e-6);
        assert_abs_diff_eq!(q.matrix()[(1, 1)], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(q.matrix()[(0, 1)], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn loewner_of_square_is_scaled_identity() {
        let q = loewner_ellipsoid(
            &[
                vec![1.0, 1.0],
                vec![1.0, -1.0],
                vec![-1.0, 1.0],
                vec![-1.0, -1.0],
                vec![1.0, 0.0],
                vec![0.0, 1.0],
            ],
            1e-9,
            10_000,
        )
        .unwrap();
        assert_abs_diff_eq!(q.matrix()[(0, 0)], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(q.matrix()[(1, 1)], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(q.matrix()[(0, 1)], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn equivalence_disk_to_stretched_disk() {
        let cfg = EquivConfig::default();
        let k2 = ellipse_axes(2.0, 1.0);
        let res = linear_equivalence(&disk(), &k2, 1e-6, &cfg).expect("equivalent");
        assert!(res.residual < 1e-6, "residual {}", res.residual);
        // The map must carry the unit circle onto the ellipse.
        let m = &res.map;
        let sv = m.clone().svd(false, false).singular_values;
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_abs_diff_eq!(s[0], 2.0, epsilon = 1e-5);
        assert_abs_diff_eq!(s[1], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn disk_and_square_are_not_equivalent() {
        let cfg = EquivConfig { starts: 16, ..Default::default() };
        assert!(linear_equivalence(&disk(), &square(), 1e-3, &cfg).is_none());
    }

    #[test]
    fn self_equivalence_is_near_identity_class() {
        let cfg = EquivConfig::default();
        let e = ellipse_axes(1.5, 0.7);
        let res = linear_equivalence(&e, &e, 1e-10, &cfg).expect("reflexive");
        assert!(res.residual < 1e-10, "residual {}", res.residual);
    }

    #[test]
    fn algebra_dims_on_catalog() {
        let cfg = EquivConfig::default();
        assert_eq!(self_equivalence_algebra(&disk(), 1e-6, &cfg).dim(), 1);
        assert_eq!(self_equivalence_algebra(&unit_ball(3), 1e-6, &cfg).dim(), 3);
        let l4 = make_body(&BodySpec::Lp { p: 4.0, scales: vec![1.0, 1.0] }).unwrap();
        assert_eq!(self_equivalence_algebra(&l4, 1e-6, &cfg).dim(), 0);
    }

    #[test]
    fn invariant_product_of_ball_is_identity() {
        let cfg = EquivConfig::default();
        let m = invariant_inner_product(&unit_ball(3), 64, &cfg).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(m.matrix()[(a, b)], want, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn invariant_product_of_ellipse_is_multiple_of_form() {
        let cfg = EquivConfig::default();
        let e = ellipse_axes(2.0, 1.0);
        let m = invariant_inner_product(&e, 64, &cfg).unwrap();
        // multiple of diag(1/4, 1): ratio of diagonal entries is 1/4.
        let ratio = m.matrix()[(0, 0)] / m.matrix()[(1, 1)];
        assert_abs_diff_eq!(ratio, 0.25, epsilon = 1e-6);
        assert_abs_diff_eq!(m.matrix()[(0, 1)], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn invariant_product_of_square_is_multiple_of_identity() {
        let cfg = EquivConfig::default();
        let m = invariant_inner_product(&square(), 64, &cfg).unwrap();
        assert_abs_diff_eq!(m.matrix()[(0, 0)], m.matrix()[(1, 1)], epsilon = 1e-8);
        assert_abs_diff_eq!(m.matrix()[(0, 1)], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn l1_ball_projector_friendly_symmetries() {
        let cfg = EquivConfig::default();
        let l1 = l1_ball(3);
        let info = analyze_symmetries(&l1, &cfg).unwrap();
        assert_eq!(info.algebra.dim(), 0);
        assert_eq!(info.finite.len(), 48);
    }

    #[test]
    fn nearest_to_identity_straightens_a_rotation() {
        let cfg = EquivConfig::default();
        let ball = unit_ball(3);
        let info = analyze_symmetries(&ball, &cfg).unwrap();
        // G = some rotation; the class contains the identity.
        let mut rng = grid::rng(3);
        let g = random_rotation3(&mut rng);
        let nearest = nearest_to_identity(&g, &ball, &info, &cfg);
        assert_abs_diff_eq!(
            (&nearest - DMatrix::identity(3, 3)).norm(),
            0.0,
            epsilon = 1e-8
        );
    }
}
