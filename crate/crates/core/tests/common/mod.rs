#![allow(dead_code)]

use collapse_lab::linalg::Matrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Eigenvalues of a symmetric matrix by the classical cyclic Jacobi method,
/// sorted descending. Independent of the crate's SVD.
#[allow(clippy::needless_range_loop)]
pub fn symmetric_eigenvalues(a: &Matrix<f64>) -> Vec<f64> {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let diag: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum();
        if off <= 1e-26 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ev
}

/// Aᵀ A computed entry by entry.
pub fn gram(a: &Matrix<f64>) -> Matrix<f64> {
    let n = a.cols();
    Matrix::from_fn(n, n, |i, j| (0..a.rows()).map(|r| a[(r, i)] * a[(r, j)]).sum())
}

/// Random orthogonal matrix from Gram–Schmidt on a Gaussian draw.
pub fn random_orthogonal(rng: &mut impl Rng, n: usize) -> Matrix<f64> {
    let g = gaussian(rng, n, n);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut v = g.column(j);
        for _ in 0..2 {
            for q in &cols {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(x, y)| *x -= d * y);
            }
        }
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= nrm);
        cols.push(v);
    }
    Matrix::from_fn(n, n, |i, j| cols[j][i])
}

/// max |QᵀQ − I| over the columns of `q`.
pub fn orthogonality_defect(q: &Matrix<f64>) -> f64 {
    let g = gram(q);
    let mut worst = 0.0f64;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}
