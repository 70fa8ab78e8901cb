//! Dense homogeneous polynomials and polynomial vector fields.
//!
//! Everything here is homogeneous of a fixed degree in `dim <= 4` variables,
//! stored densely over the graded-lexicographic monomial list (at most 35
//! coefficients per component up to degree 4), so exact coefficient-level
//! operations stay simple: no sparsity bookkeeping, no symbolic dependency.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Exponent tuples of total degree `degree` in `dim` variables,
/// lexicographically descending in (x1, x2, ...).
pub fn monomials(dim: usize, degree: usize) -> Vec<[usize; 4]> {
    assert!((1..=4).contains(&dim));
    let mut out = Vec::new();
    let mut cur = [0usize; 4];
    fill(dim, degree, 0, &mut cur, &mut out);
    out
}

fn fill(dim: usize, left: usize, pos: usize, cur: &mut [usize; 4], out: &mut Vec<[usize; 4]>) {
    if pos == dim - 1 {
        cur[pos] = left;
        out.push(*cur);
        return;
    }
    for e in (0..=left).rev() {
        cur[pos] = e;
        fill(dim, left - e, pos + 1, cur, out);
    }
}

pub fn monomial_count(dim: usize, degree: usize) -> usize {
    // C(degree + dim - 1, dim - 1)
    let mut num = 1usize;
    let mut den = 1usize;
    for i in 0..dim - 1 {
        num *= degree + dim - 1 - i;
        den *= i + 1;
    }
    num / den
}

fn monomial_index(dim: usize, degree: usize, exp: &[usize; 4]) -> usize {
    // Degrees are tiny; a scan beats maintaining an index map.
    monomials(dim, degree)
        .iter()
        .position(|m| m == exp)
        .unwrap_or_else(|| panic!("exponent {exp:?} not of degree {degree} in dim {dim}"))
}

/// A homogeneous scalar polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct HPoly {
    pub dim: usize,
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

impl HPoly {
    pub fn zero(dim: usize, degree: usize) -> Self {
        HPoly {
            dim,
            degree,
            coeffs: vec![0.0; monomial_count(dim, degree)],
        }
    }

    /// The linear form with the given coefficient vector.
    pub fn linear(coeffs: &[f64]) -> Self {
        let dim = coeffs.len();
        let mut p = HPoly::zero(dim, 1);
        // degree-1 monomials come out in variable order
        for (i, m) in monomials(dim, 1).iter().enumerate() {
            let var = (0..dim).find(|&j| m[j] == 1).unwrap();
            p.coeffs[i] = coeffs[var];
        }
        p
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        HPoly {
            dim,
            degree: 0,
            coeffs: vec![value],
        }
    }

    pub fn set(&mut self, exp: [usize; 4], value: f64) {
        let idx = monomial_index(self.dim, self.degree, &exp);
        self.coeffs[idx] = value;
    }

    pub fn get(&self, exp: [usize; 4]) -> f64 {
        self.coeffs[monomial_index(self.dim, self.degree, &exp)]
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let mut acc = 0.0;
        for (c, m) in self.coeffs.iter().zip(monomials(self.dim, self.degree)) {
            if *c == 0.0 {
                continue;
            }
            let mut t = *c;
            for j in 0..self.dim {
                for _ in 0..m[j] {
                    t *= x[j];
                }
            }
            acc += t;
        }
        acc
    }

    pub fn scale(&self, s: f64) -> Self {
        HPoly {
            dim: self.dim,
            degree: self.degree,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.dim, self.degree), (other.dim, other.degree));
        HPoly {
            dim: self.dim,
            degree: self.degree,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut out = HPoly::zero(self.dim, self.degree + other.degree);
        let ma = monomials(self.dim, self.degree);
        let mb = monomials(self.dim, other.degree);
        let mc = monomials(self.dim, out.degree);
        for (ia, ea) in ma.iter().enumerate() {
            if self.coeffs[ia] == 0.0 {
                continue;
            }
            for (ib, eb) in mb.iter().enumerate() {
                if other.coeffs[ib] == 0.0 {
                    continue;
                }
                let mut e = [0usize; 4];
                for j in 0..4 {
                    e[j] = ea[j] + eb[j];
                }
                let ic = mc.iter().position(|m| *m == e).unwrap();
                out.coeffs[ic] += self.coeffs[ia] * other.coeffs[ib];
            }
        }
        out
    }

    /// Substitute `x = M y`, i.e. return `p(M y)` as a polynomial in `y`.
    /// `M` is `dim x dim`, rows indexed by the old variables.
    pub fn compose_linear(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), self.dim);
        assert_eq!(m.ncols(), self.dim);
        let mut out = HPoly::zero(self.dim, self.degree);
        for (idx, exp) in monomials(self.dim, self.degree).iter().enumerate() {
            let c = self.coeffs[idx];
            if c == 0.0 {
                continue;
            }
            let mut term = HPoly::constant(self.dim, c);
            for j in 0..self.dim {
                let row: Vec<f64> = (0..self.dim).map(|k| m[(j, k)]).collect();
                let form = HPoly::linear(&row);
                for _ in 0..exp[j] {
                    term = term.mul(&form);
                }
            }
            out = out.add(&term);
        }
        out
    }

    pub fn partial(&self, var: usize) -> Self {
        assert!(self.degree >= 1);
        let mut out = HPoly::zero(self.dim, self.degree - 1);
        let src = monomials(self.dim, self.degree);
        let dst = monomials(self.dim, self.degree - 1);
        for (i, e) in src.iter().enumerate() {
            if e[var] == 0 || self.coeffs[i] == 0.0 {
                continue;
            }
            let mut de = *e;
            de[var] -= 1;
            let j = dst.iter().position(|m| *m == de).unwrap();
            out.coeffs[j] += self.coeffs[i] * e[var] as f64;
        }
        out
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |a, c| a.max(c.abs()))
    }

    pub fn coeff_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Exact division by a nonzero linear form. Change basis so the form
    /// becomes the first coordinate, shift exponents, change back.
    pub fn divide_by_linear_form(&self, form: &[f64], tol: f64) -> Result<Self> {
        assert_eq!(form.len(), self.dim);
        assert!(self.degree >= 1);
        let dim = self.dim;
        let norm2: f64 = form.iter().map(|c| c * c).sum();
        assert!(norm2 > 0.0, "division by the zero form");

        // Columns: t1 with form(t1) = 1, then a kernel basis.
        let t = basis_adapted_to_form(form);
        let t_inv = t.clone().try_inverse().expect("adapted basis is invertible");

        // q(y) = p(T y) satisfies form(T y) = y1.
        let q = self.compose_linear(&t);
        let src = monomials(dim, self.degree);
        let dst = monomials(dim, self.degree - 1);
        let mut h = HPoly::zero(dim, self.degree - 1);
        let mut remainder = 0.0f64;
        for (i, e) in src.iter().enumerate() {
            let c = q.coeffs[i];
            if e[0] == 0 {
                remainder = remainder.max(c.abs());
                continue;
            }
            let mut de = *e;
            de[0] -= 1;
            let j = dst.iter().position(|m| *m == de).unwrap();
            h.coeffs[j] = c;
        }
        let scale = self.max_abs_coeff().max(1.0);
        if remainder > tol * scale {
            return Err(Error::NotDivisible {
                remainder,
                tol: tol * scale,
            });
        }
        // p(x) = form(x) * h(T^-1 x)
        Ok(h.compose_linear(&t_inv))
    }
}

/// Invertible matrix whose first column satisfies `form(t1) = 1` and whose
/// remaining columns span `ker form`.
fn basis_adapted_to_form(form: &[f64]) -> DMatrix<f64> {
    let dim = form.len();
    let norm2: f64 = form.iter().map(|c| c * c).sum();
    let mut cols: Vec<Vec<f64>> = vec![form.iter().map(|c| c / norm2).collect()];
    // Kernel by projecting out the form from the coordinate directions,
    // keeping the best-conditioned picks.
    let mut candidates: Vec<(f64, Vec<f64>)> = Vec::new();
    for k in 0..dim {
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        let dot: f64 = form.iter().zip(&v).map(|(a, b)| a * b).sum();
        for j in 0..dim {
            v[j] -= dot * form[j] / norm2;
        }
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        candidates.push((n, v));
    }
    candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for (n, v) in candidates {
        if cols.len() == dim {
            break;
        }
        if n < 1e-12 {
            continue;
        }
        // Gram-Schmidt against the kernel columns already kept.
        let mut w = v;
        for col in cols.iter().skip(1) {
            let dot: f64 = col.iter().zip(&w).map(|(a, b)| a * b).sum();
            let cn: f64 = col.iter().map(|x| x * x).sum();
            for j in 0..dim {
                w[j] -= dot * col[j] / cn;
            }
        }
        let wn: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if wn > 1e-10 {
            cols.push(w);
        }
    }
    assert_eq!(cols.len(), dim, "could not complete kernel basis");
    DMatrix::from_fn(dim, dim, |r, c| cols[c][r])
}

/// A homogeneous polynomial vector field: one `HPoly` per output component.
/// The number of components need not match the domain dimension (planar
/// restrictions keep three output components over two variables).
#[derive(Debug, Clone, PartialEq)]
pub struct PolyVectorField {
    pub dim: usize,
    pub degree: usize,
    pub comps: Vec<HPoly>,
}

impl PolyVectorField {
    pub fn zero(dim: usize, degree: usize, n_comps: usize) -> Self {
        PolyVectorField {
            dim,
            degree,
            comps: vec![HPoly::zero(dim, degree); n_comps],
        }
    }

    pub fn from_comps(comps: Vec<HPoly>) -> Self {
        assert!(!comps.is_empty());
        let dim = comps[0].dim;
        let degree = comps[0].degree;
        assert!(comps.iter().all(|c| c.dim == dim && c.degree == degree));
        PolyVectorField { dim, degree, comps }
    }

    /// The linear field `x -> A x`.
    pub fn from_matrix(a: &DMatrix<f64>) -> Self {
        let dim = a.ncols();
        let comps = (0..a.nrows())
            .map(|r| {
                let row: Vec<f64> = (0..dim).map(|c| a[(r, c)]).collect();
                HPoly::linear(&row)
            })
            .collect();
        PolyVectorField::from_comps(comps)
    }

    pub fn n_comps(&self) -> usize {
        self.comps.len()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.comps.iter().map(|c| c.eval(x)).collect()
    }

    pub fn add(&self, other: &Self) -> Self {
        PolyVectorField::from_comps(
            self.comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.add(b))
                .collect(),
        )
    }

    pub fn sub(&self, other: &Self) -> Self {
        PolyVectorField::from_comps(
            self.comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.sub(b))
                .collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Self {
        PolyVectorField::from_comps(self.comps.iter().map(|c| c.scale(s)).collect())
    }

    /// Multiply every component by a linear form; degree rises by one.
    pub fn mul_linear_form(&self, form: &[f64]) -> Self {
        let f = HPoly::linear(form);
        PolyVectorField::from_comps(self.comps.iter().map(|c| c.mul(&f)).collect())
    }

    pub fn divide_by_linear_form(&self, form: &[f64], tol: f64) -> Result<Self> {
        let comps = self
            .comps
            .iter()
            .map(|c| c.divide_by_linear_form(form, tol))
            .collect::<Result<Vec<_>>>()?;
        Ok(PolyVectorField::from_comps(comps))
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.comps.iter().fold(0.0, |a, c| a.max(c.max_abs_coeff()))
    }

    pub fn coeff_norm(&self) -> f64 {
        self.comps
            .iter()
            .map(|c| c.coeff_norm().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(3, 2).len(), 6);
        assert_eq!(monomials(4, 3).len(), 20);
        assert_eq!(monomial_count(4, 3), 20);
    }

    #[test]
    fn eval_simple_quadratic() {
        // x1*x2 + 2 x3^2
        let mut p = HPoly::zero(3, 2);
        p.set([1, 1, 0, 0], 1.0);
        p.set([0, 0, 2, 0], 2.0);
        assert_abs_diff_eq!(p.eval(&[2.0, 3.0, -1.0]), 8.0);
    }

    #[test]
    fn divide_monomial_by_coordinate() {
        // (x1 x2, -x1^2, 0) / x1 = (x2, -x1, 0)
        let mut c0 = HPoly::zero(3, 2);
        c0.set([1, 1, 0, 0], 1.0);
        let mut c1 = HPoly::zero(3, 2);
        c1.set([2, 0, 0, 0], -1.0);
        let field = PolyVectorField::from_comps(vec![c0, c1, HPoly::zero(3, 2)]);
        let q = field.divide_by_linear_form(&[1.0, 0.0, 0.0], 1e-12).unwrap();
        assert_eq!(q.degree, 1);
        assert_abs_diff_eq!(q.comps[0].eval(&[5.0, 7.0, 1.0]), 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.comps[1].eval(&[5.0, 7.0, 1.0]), -5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.comps[2].max_abs_coeff(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn remainder_is_detected() {
        let mut c0 = HPoly::zero(3, 2);
        c0.set([0, 2, 0, 0], 1.0); // x2^2
        let field = PolyVectorField::from_comps(vec![c0, HPoly::zero(3, 2), HPoly::zero(3, 2)]);
        let err = field.divide_by_linear_form(&[1.0, 0.0, 0.0], 1e-12);
        assert!(matches!(err, Err(Error::NotDivisible { .. })));
    }

    #[test]
    fn partial_derivative() {
        // d/dx1 (x1^2 x2) = 2 x1 x2
        let mut p = HPoly::zero(3, 3);
        p.set([2, 1, 0, 0], 1.0);
        let d = p.partial(0);
        assert_abs_diff_eq!(d.eval(&[3.0, 5.0, 0.0]), 30.0);
    }
}
