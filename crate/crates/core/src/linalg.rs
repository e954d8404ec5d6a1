//! Small complex linear-algebra helpers shared by the precoder code.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CVec = DVector<Complex64>;

/// `a^H b`.
#[inline]
pub fn inner(a: &CVec, b: &CVec) -> Complex64 {
    a.dotc(b)
}

/// `|a^H b|^2`.
#[inline]
pub fn gain(a: &CVec, b: &CVec) -> f64 {
    inner(a, b).norm_sqr()
}

pub fn norm_sqr(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

pub fn zeros(m: usize) -> CVec {
    CVec::from_element(m, Complex64::new(0.0, 0.0))
}

pub fn normalized(v: &CVec) -> Result<CVec> {
    let n = v.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Config("cannot normalize a zero vector".into()));
    }
    Ok(v / Complex64::new(n, 0.0))
}

/// Leading left singular vector of the `M x n` matrix whose columns are
/// `cols`. Ties between equal singular values go to the first index.
pub fn leading_left_singular_vector(cols: &[&CVec]) -> Result<CVec> {
    let first = cols
        .first()
        .ok_or_else(|| Error::Config("empty column set".into()))?;
    let m = first.len();
    if cols.len() == 1 {
        return normalized(first);
    }
    let mat = DMatrix::from_fn(m, cols.len(), |r, c| cols[c][r]);
    let svd = mat.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::Solver("SVD did not return left vectors".into()))?;
    let mut best = 0;
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > svd.singular_values[best] {
            best = i;
        }
    }
    if svd.singular_values[best] == 0.0 {
        return Err(Error::Config("zero channel matrix".into()));
    }
    Ok(u.column(best).into_owned())
}

/// Orthonormal basis of `span(vectors)` by modified Gram-Schmidt.
/// Directions whose residual norm falls below `rel_tol` times their original
/// norm are treated as linearly dependent and dropped.
pub fn orthonormal_basis(vectors: &[&CVec], rel_tol: f64) -> Vec<CVec> {
    let mut basis: Vec<CVec> = Vec::new();
    for v in vectors {
        let scale = v.norm();
        if scale == 0.0 {
            continue;
        }
        let mut w = (*v).clone();
        // Two passes keep the basis orthogonal to machine precision.
        for _ in 0..2 {
            for q in &basis {
                let c = inner(q, &w);
                w -= q * c;
            }
        }
        let n = w.norm();
        if n > rel_tol * scale {
            basis.push(w / Complex64::new(n, 0.0));
        }
    }
    basis
}

/// Projection of `v` onto the orthogonal complement of `span(basis)`.
pub fn project_out(v: &CVec, basis: &[CVec]) -> CVec {
    let mut w = v.clone();
    for _ in 0..2 {
        for q in basis {
            let c = inner(q, &w);
            w -= q * c;
        }
    }
    w
}

/// Real `2M x 2M` representation of the Hermitian form `p^H (h h^H) p`
/// acting on `x = [Re p; Im p]`, scaled by `weight`, accumulated into `out`.
pub fn accumulate_outer_real(out: &mut DMatrix<f64>, h: &CVec, weight: f64) {
    let m = h.len();
    // Rows of the real map x -> (Re h^H p, Im h^H p).
    // Re: [h_r, h_i], Im: [-h_i, h_r].
    for r in 0..2 * m {
        let (e1r, e2r) = real_rows(h, r, m);
        for c in 0..2 * m {
            let (e1c, e2c) = real_rows(h, c, m);
            out[(r, c)] += weight * (e1r * e1c + e2r * e2c);
        }
    }
}

#[inline]
fn real_rows(h: &CVec, idx: usize, m: usize) -> (f64, f64) {
    if idx < m {
        (h[idx].re, -h[idx].im)
    } else {
        (h[idx - m].im, h[idx - m].re)
    }
}

/// `[Re v; Im v]`.
pub fn to_real(v: &CVec) -> DVector<f64> {
    let m = v.len();
    DVector::from_fn(2 * m, |i, _| if i < m { v[i].re } else { v[i - m].im })
}

pub fn from_real(x: &[f64]) -> CVec {
    let m = x.len() / 2;
    CVec::from_fn(m, |i, _| Complex64::new(x[i], x[i + m]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn real_form_matches_complex_quadratic() {
        let h = CVec::from_vec(vec![c(0.3, -1.2), c(0.7, 0.4), c(-0.5, 0.9)]);
        let p = CVec::from_vec(vec![c(1.1, 0.2), c(-0.4, 0.8), c(0.05, -0.6)]);
        let mut q = DMatrix::zeros(6, 6);
        accumulate_outer_real(&mut q, &h, 1.0);
        let x = to_real(&p);
        let quad = (x.transpose() * &q * &x)[(0, 0)];
        assert!((quad - gain(&h, &p)).abs() < 1e-12);
        assert_eq!(from_real(x.as_slice()), p);
    }

    #[test]
    fn projection_is_orthogonal_to_basis() {
        let a = CVec::from_vec(vec![c(1.0, 0.0), c(1.0, 1.0), c(0.0, 2.0)]);
        let b = CVec::from_vec(vec![c(0.0, 1.0), c(2.0, 0.0), c(1.0, 0.0)]);
        let v = CVec::from_vec(vec![c(0.5, 0.5), c(-1.0, 0.0), c(0.3, 0.1)]);
        let basis = orthonormal_basis(&[&a, &b], 1e-12);
        assert_eq!(basis.len(), 2);
        let w = project_out(&v, &basis);
        assert!(inner(&a, &w).norm() < 1e-12);
        assert!(inner(&b, &w).norm() < 1e-12);
    }

    #[test]
    fn dependent_vectors_are_dropped() {
        let a = CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0)]);
        let b = &a * c(0.0, 2.0);
        assert_eq!(orthonormal_basis(&[&a, &b], 1e-10).len(), 1);
    }

    #[test]
    fn singular_vector_of_rank_one_stack_is_the_column_direction() {
        let a = CVec::from_vec(vec![c(3.0, 0.0), c(0.0, 4.0)]);
        let u = leading_left_singular_vector(&[&a, &a]).unwrap();
        let overlap = inner(&u, &a).norm() / a.norm();
        assert!((overlap - 1.0).abs() < 1e-12);
    }
}
