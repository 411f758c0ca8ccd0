use serde::{Deserialize, Serialize};

use super::Matrix;

/// Per-column mean and standard deviation from training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics. Constant columns get `std = 1`.
    pub fn fit(train: &Matrix) -> Self {
        assert!(train.rows() > 0, "cannot standardise an empty matrix");
        let n = train.rows() as f64;
        let mut mean = Vec::with_capacity(train.cols());
        let mut std = Vec::with_capacity(train.cols());
        for j in 0..train.cols() {
            let (lo, hi) = train
                .column(j)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let m = train.column(j).sum::<f64>() / n;
            let s = if lo == hi {
                1.0
            } else {
                (train.column(j).map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
            };
            mean.push(m);
            std.push(s);
        }
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..out.rows() {
            self.apply_row_in_place(out.row_mut(i));
        }
        out
    }

    pub fn apply_row_in_place(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn select(&self, indices: &[usize]) -> Standardizer {
        Standardizer {
            mean: indices.iter().map(|&j| self.mean[j]).collect(),
            std: indices.iter().map(|&j| self.std[j]).collect(),
        }
    }
}
