//! One-sided (Hestenes) Jacobi SVD.
//!
//! Tall inputs are first reduced with a Householder QR so the Jacobi sweeps
//! run on the small `n×n` triangular factor; wide inputs are handled through
//! the transpose. Column pairs are rotated until every pair is orthogonal to
//! a relative tolerance of `1e-12`, capped at 100 sweeps.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{dot, Scalar};

const MAX_SWEEPS: usize = 100;
const ORTHO_TOL: f64 = 1e-12;

/// Thin SVD `A = U · diag(sigma) · Vᵀ` with `r = min(m, n)` components.
#[derive(Debug, Clone)]
pub struct SvdResult<T> {
    pub u: Matrix<T>,
    pub sigma: Vec<T>,
    pub v: Matrix<T>,
}

impl<T: Scalar> SvdResult<T> {
    /// Rebuilds `U · diag(sigma) · Vᵀ`.
    pub fn reconstruct(&self) -> Matrix<T> {
        let (m, r) = self.u.shape();
        let n = self.v.rows();
        Matrix::from_fn(m, n, |i, j| {
            (0..r).fold(T::zero(), |acc, k| acc + self.u[(i, k)] * self.sigma[k] * self.v[(j, k)])
        })
    }
}

/// Singular value decomposition of a dense matrix.
///
/// `sigma` is sorted descending (ties keep their original column order) and
/// every entry is non-negative. Deterministic for a fixed input.
pub fn svd<T: Scalar>(a: &Matrix<T>) -> Result<SvdResult<T>> {
    if let Some(pos) = a.as_slice().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("svd input entry {pos}")));
    }
    if a.rows() >= a.cols() {
        svd_tall(a)
    } else {
        let t = svd_tall(&a.transpose())?;
        Ok(SvdResult { u: t.v, sigma: t.sigma, v: t.u })
    }
}

// Columns of a matrix as separate contiguous vectors; rotations touch two
// columns at a time, so this layout keeps the inner loops unit-stride.
type Columns<T> = Vec<Vec<T>>;

fn to_columns<T: Scalar>(a: &Matrix<T>) -> Columns<T> {
    (0..a.cols()).map(|j| a.column(j)).collect()
}

fn from_columns<T: Scalar>(rows: usize, cols: &Columns<T>) -> Matrix<T> {
    Matrix::from_fn(rows, cols.len(), |i, j| cols[j][i])
}

fn svd_tall<T: Scalar>(a: &Matrix<T>) -> Result<SvdResult<T>> {
    let (m, n) = a.shape();
    if m == n {
        let (u, sigma, v) = jacobi(to_columns(a), m)?;
        return Ok(SvdResult { u: from_columns(m, &u), sigma, v: from_columns(n, &v) });
    }

    let (q, r) = householder_qr(a);
    let (ur, sigma, v) = jacobi(to_columns(&r), n)?;
    // U = Q · U_R
    let u: Columns<T> = ur
        .iter()
        .map(|ur_col| {
            let mut col = vec![T::zero(); m];
            for (qk, &w) in q.iter().zip(ur_col) {
                if w == T::zero() {
                    continue;
                }
                for (c, &x) in col.iter_mut().zip(qk) {
                    *c += w * x;
                }
            }
            col
        })
        .collect();
    Ok(SvdResult { u: from_columns(m, &u), sigma, v: from_columns(n, &v) })
}

/// Thin Householder QR of a tall matrix: returns the `n` columns of `Q`
/// (each of length `m`) and the `n×n` upper-triangular `R`.
fn householder_qr<T: Scalar>(a: &Matrix<T>) -> (Columns<T>, Matrix<T>) {
    let (m, n) = a.shape();
    let two = T::lit(2.0);
    let mut cols = to_columns(a);
    let mut reflectors: Vec<Vec<T>> = Vec::with_capacity(n);

    for k in 0..n {
        let x = &cols[k][k..];
        let norm = x.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
        let mut v = x.to_vec();
        if norm == T::zero() {
            reflectors.push(Vec::new());
            continue;
        }
        let alpha = if v[0] >= T::zero() { -norm } else { norm };
        v[0] -= alpha;
        let vnorm = v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
        if vnorm == T::zero() {
            reflectors.push(Vec::new());
            continue;
        }
        v.iter_mut().for_each(|x| *x /= vnorm);
        for col in cols.iter_mut().skip(k) {
            let tail = &mut col[k..];
            let proj = two * dot(&v, tail);
            for (t, &vi) in tail.iter_mut().zip(&v) {
                *t -= proj * vi;
            }
        }
        reflectors.push(v);
    }

    let r = Matrix::from_fn(n, n, |i, j| if i <= j { cols[j][i] } else { T::zero() });

    let mut q: Columns<T> = (0..n)
        .map(|j| {
            let mut e = vec![T::zero(); m];
            e[j] = T::one();
            e
        })
        .collect();
    for col in q.iter_mut() {
        for (k, v) in reflectors.iter().enumerate().rev() {
            if v.is_empty() {
                continue;
            }
            let tail = &mut col[k..];
            let proj = two * dot(v, tail);
            for (t, &vi) in tail.iter_mut().zip(v) {
                *t -= proj * vi;
            }
        }
    }
    (q, r)
}

/// Jacobi sweeps over the columns of an `m×n` matrix with `m ≥ n`.
/// Returns sorted `(U columns, sigma, V columns)`.
fn jacobi<T: Scalar>(mut cols: Columns<T>, m: usize) -> Result<(Columns<T>, Vec<T>, Columns<T>)> {
    let n = cols.len();
    let frob = cols.iter().flatten().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
    let tol = T::lit(ORTHO_TOL).max(T::epsilon() * T::lit((m as f64).sqrt()));
    // Columns at or below this norm are numerically zero and are not rotated.
    let zero_cut = T::epsilon() * T::lit(n.max(1) as f64) * frob;
    let zero_cut_sq = zero_cut * zero_cut;

    let mut v: Columns<T> = (0..n)
        .map(|j| {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            e
        })
        .collect();

    let mut converged = frob == T::zero();
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                if alpha <= zero_cut_sq || beta <= zero_cut_sq {
                    continue;
                }
                let gamma = dot(&cols[p], &cols[q]);
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (gamma + gamma);
                let sign = if zeta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::Convergence { sweeps: MAX_SWEEPS });
    }

    let norms: Vec<T> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // sort_by is stable: equal sigmas keep column order
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("finite norms"));

    let mut sigma = Vec::with_capacity(n);
    let mut u_cols: Columns<T> = Vec::with_capacity(n);
    let mut v_cols: Columns<T> = Vec::with_capacity(n);
    let mut pending = Vec::new();
    for &j in &order {
        let s = norms[j].max(T::zero());
        sigma.push(s);
        v_cols.push(v[j].clone());
        if s > zero_cut {
            u_cols.push(cols[j].iter().map(|&x| x / s).collect());
        } else {
            pending.push(u_cols.len());
            u_cols.push(Vec::new());
        }
    }
    complete_orthonormal(&mut u_cols, &pending, m);
    Ok((u_cols, sigma, v_cols))
}

fn rotate<T: Scalar>(cols: &mut Columns<T>, p: usize, q: usize, c: T, s: T) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Fills the empty slots listed in `pending` with unit vectors orthogonal to
/// every other column. Each slot takes the standard basis vector with the
/// largest component outside the current span, which is at least
/// `√(free dimensions / m)`, after two passes of Gram–Schmidt.
fn complete_orthonormal<T: Scalar>(cols: &mut Columns<T>, pending: &[usize], m: usize) {
    for &slot in pending {
        let mut best: Option<(T, Vec<T>)> = None;
        for candidate in 0..m {
            let mut e = vec![T::zero(); m];
            e[candidate] = T::one();
            for _ in 0..2 {
                for (k, col) in cols.iter().enumerate() {
                    if k == slot || col.is_empty() {
                        continue;
                    }
                    let proj = dot(col, &e);
                    for (x, &c) in e.iter_mut().zip(col) {
                        *x -= proj * c;
                    }
                }
            }
            let norm = dot(&e, &e).sqrt();
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, e));
            }
        }
        let (norm, e) = best.expect("m >= 1");
        cols[slot] = e.into_iter().map(|x| x / norm).collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthonormality_defect(q: &Matrix<f64>) -> f64 {
        let qtq = crate::linalg::matmul(&q.transpose(), q).unwrap();
        qtq.sub(&Matrix::identity(q.cols())).unwrap().max_abs()
    }

    #[test]
    fn completion_when_most_directions_are_taken() {
        // rank 11 of 13 with both zero directions away from the axes
        let n = 13;
        let mut d = vec![1.0; n];
        d[3] = 0.0;
        d[7] = 0.0;
        let c = (0.3f64).cos();
        let s = (0.3f64).sin();
        let mut g = Matrix::identity(n);
        for (i, j) in [(3, 4), (7, 8), (3, 8)] {
            let mut r = Matrix::<f64>::identity(n);
            r[(i, i)] = c;
            r[(j, j)] = c;
            r[(i, j)] = -s;
            r[(j, i)] = s;
            g = crate::linalg::matmul(&g, &r).unwrap();
        }
        let a = crate::linalg::matmul(&crate::linalg::matmul(&g, &Matrix::diag(&d)).unwrap(), &g.transpose())
            .unwrap()
            .scale(0.1);
        let r = svd(&a).unwrap();
        assert!(orthonormality_defect(&r.u) < 1e-12);
        assert!(r.reconstruct().sub(&a).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn diagonal_matrix_singular_values() {
        let r = svd(&Matrix::diag(&[3.0, 1.0])).unwrap();
        assert_eq!(r.sigma, vec![3.0, 1.0]);
    }

    #[test]
    fn diagonal_out_of_order_is_sorted() {
        let r = svd(&Matrix::diag(&[1.0, 5.0, 2.0])).unwrap();
        assert_eq!(r.sigma, vec![5.0, 2.0, 1.0]);
        assert!(r.reconstruct().sub(&Matrix::diag(&[1.0, 5.0, 2.0])).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn zero_matrix_has_zero_spectrum_and_orthonormal_factors() {
        for (m, n) in [(3, 3), (5, 2), (2, 4)] {
            let r = svd(&Matrix::<f64>::zeros(m, n)).unwrap();
            assert!(r.sigma.iter().all(|&s| s == 0.0));
            assert!(orthonormality_defect(&r.u) < 1e-15);
            assert!(orthonormality_defect(&r.v) < 1e-15);
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut a = Matrix::<f64>::zeros(2, 2);
        a.as_mut_slice()[3] = f64::INFINITY;
        assert!(matches!(svd(&a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn rank_one_tall_and_wide() {
        let u: [f64; 4] = [1.0, -2.0, 0.5, 3.0];
        let v: [f64; 2] = [2.0, 1.0];
        let a = Matrix::from_fn(4, 2, |i, j| u[i] * v[j]);
        for m in [a.clone(), a.transpose()] {
            let r = svd(&m).unwrap();
            let expect = crate::scalar::norm2(&u) * crate::scalar::norm2(&v);
            assert!((r.sigma[0] - expect).abs() < 1e-12);
            assert!(r.sigma[1].abs() < 1e-12);
            assert!(r.reconstruct().sub(&m).unwrap().max_abs() < 1e-12);
            assert!(orthonormality_defect(&r.u) < 1e-12);
            assert!(orthonormality_defect(&r.v) < 1e-12);
        }
    }

    #[test]
    fn repeated_singular_values_keep_column_order() {
        let r = svd(&Matrix::diag(&[2.0, 2.0, 2.0])).unwrap();
        assert_eq!(r.sigma, vec![2.0; 3]);
        assert_eq!(r.v, Matrix::identity(3));
    }

    #[test]
    fn single_precision_converges() {
        let a = Matrix::<f32>::from_fn(6, 4, |i, j| ((i * 7 + j * 3) % 5) as f32 - 2.0 + 0.1 * j as f32);
        let r = svd(&a).unwrap();
        assert!(r.reconstruct().sub(&a).unwrap().max_abs() < 1e-4);
    }
}
