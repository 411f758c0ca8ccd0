//! Ordinary least squares onto 0/1 targets, thresholded at 0.5.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::Matrix;

/// Relative pivot below which the normal equations count as singular.
const PIVOT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl LinearModel {
    pub fn decision(&self, row: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(row).map(|(c, x)| c * x).sum::<f64>()
    }
}

/// Normal equations of `[1 | x]` against `y`: upper triangle of the Gram
/// matrix (row-major, `k = cols + 1`) and the right-hand side.
///
/// Entry `(i, j)` only depends on columns `i` and `j`, summed in row order,
/// so the Gram of a column subset equals the matching block of the full Gram
/// bit for bit.
pub fn augmented_gram(x: &Matrix, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = x.cols() + 1;
    let mut gram = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    let mut a = vec![0.0; k];
    a[0] = 1.0;
    for (row, &target) in x.iter_rows().zip(y) {
        a[1..].copy_from_slice(row);
        for i in 0..k {
            let ai = a[i];
            for j in i..k {
                gram[i * k + j] += ai * a[j];
            }
            rhs[i] += ai * target;
        }
    }
    (gram, rhs)
}

/// Minimum-norm least-squares solution of `G b = r` for the upper-triangular
/// symmetric `gram` of size `k`. Cholesky when well posed, eigen
/// pseudo-inverse otherwise.
pub fn solve_normal_equations(gram: &[f64], rhs: &[f64], k: usize) -> Vec<f64> {
    cholesky_solve(gram, rhs, k).unwrap_or_else(|| pseudo_inverse_solve(gram, rhs, k))
}

fn cholesky_solve(gram: &[f64], rhs: &[f64], k: usize) -> Option<Vec<f64>> {
    let max_diag = (0..k).map(|i| gram[i * k + i]).fold(0.0, f64::max);
    if max_diag <= 0.0 {
        return None;
    }
    let mut l = vec![0.0; k * k];
    for j in 0..k {
        let mut d = gram[j * k + j];
        for m in 0..j {
            d -= l[j * k + m] * l[j * k + m];
        }
        if d <= PIVOT_TOLERANCE * max_diag {
            return None;
        }
        let d = d.sqrt();
        l[j * k + j] = d;
        for i in j + 1..k {
            let mut s = gram[j * k + i];
            for m in 0..j {
                s -= l[i * k + m] * l[j * k + m];
            }
            l[i * k + j] = s / d;
        }
    }
    let mut z = vec![0.0; k];
    for i in 0..k {
        let mut s = rhs[i];
        for m in 0..i {
            s -= l[i * k + m] * z[m];
        }
        z[i] = s / l[i * k + i];
    }
    let mut beta = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = z[i];
        for m in i + 1..k {
            s -= l[m * k + i] * beta[m];
        }
        beta[i] = s / l[i * k + i];
    }
    Some(beta)
}

fn pseudo_inverse_solve(gram: &[f64], rhs: &[f64], k: usize) -> Vec<f64> {
    let full = DMatrix::from_fn(k, k, |i, j| if i <= j { gram[i * k + j] } else { gram[j * k + i] });
    let eigen = SymmetricEigen::new(full);
    let largest = eigen.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = largest * k as f64 * f64::EPSILON * 1e3;
    let mut beta = vec![0.0; k];
    for (idx, &lambda) in eigen.eigenvalues.iter().enumerate() {
        if lambda <= cutoff {
            continue;
        }
        let v = eigen.eigenvectors.column(idx);
        let proj: f64 = v.iter().zip(rhs).map(|(a, b)| a * b).sum::<f64>() / lambda;
        for (b, vi) in beta.iter_mut().zip(v.iter()) {
            *b += proj * vi;
        }
    }
    beta
}

pub fn fit_linear(x: &Matrix, y: &[f64]) -> LinearModel {
    let (gram, rhs) = augmented_gram(x, y);
    let beta = solve_normal_equations(&gram, &rhs, x.cols() + 1);
    LinearModel {
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
    }
}
