//! Logistic regression fitted with limited-memory BFGS.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogisticParams {
    pub max_iterations: usize,
    /// Stop once the gradient max-norm falls below this.
    pub gradient_tolerance: f64,
    /// L2 penalty on the coefficients (intercept unpenalised). 0 is plain
    /// maximum likelihood.
    pub l2: f64,
    pub history: usize,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            l2: 0.0,
            history: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
}

impl LogisticModel {
    pub fn probability(&self, row: &[f64]) -> f64 {
        sigmoid(self.intercept + self.coefficients.iter().zip(row).map(|(c, x)| c * x).sum::<f64>())
    }
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(s))` without overflow.
fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

/// Mean negative log-likelihood (plus penalty) and its gradient at
/// `params = [intercept, coefficients...]`.
pub fn loss_and_gradient(x: &Matrix, y: &[f64], params: &[f64], l2: f64) -> (f64, Vec<f64>) {
    let n = x.rows() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (row, &target) in x.iter_rows().zip(y) {
        let s = params[0] + params[1..].iter().zip(row).map(|(w, v)| w * v).sum::<f64>();
        loss += softplus(s) - target * s;
        let r = sigmoid(s) - target;
        grad[0] += r;
        for (g, v) in grad[1..].iter_mut().zip(row) {
            *g += r * v;
        }
    }
    loss /= n;
    for g in &mut grad {
        *g /= n;
    }
    for (g, w) in grad[1..].iter_mut().zip(&params[1..]) {
        *g += l2 * w;
    }
    loss += 0.5 * l2 * params[1..].iter().map(|w| w * w).sum::<f64>();
    (loss, grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimise a smooth convex objective with L-BFGS and Armijo backtracking.
/// Returns `(argmin, iterations, converged, final gradient max-norm)`.
pub fn lbfgs<F>(mut objective: F, start: Vec<f64>, params: &LogisticParams) -> (Vec<f64>, usize, bool, f64)
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = start;
    let (mut f, mut g) = objective(&x);
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(params.history);
    let mut iterations = 0;
    while iterations < params.max_iterations {
        if max_norm(&g) < params.gradient_tolerance {
            return (x, iterations, true, max_norm(&g));
        }
        iterations += 1;

        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, yv, rho) in memory.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(yv) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, yv, _)) = memory.back() {
            let gamma = dot(s, yv) / dot(yv, yv);
            for qi in &mut q {
                *qi *= gamma;
            }
        }
        for ((s, yv, rho), a) in memory.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(yv, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut direction: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &direction);
        if slope >= 0.0 {
            memory.clear();
            direction = g.iter().map(|v| -v).collect();
            slope = dot(&g, &direction);
        }

        let mut step = if memory.is_empty() {
            (1.0 / max_norm(&g)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..60 {
            let candidate: Vec<f64> = x.iter().zip(&direction).map(|(xi, d)| xi + step * d).collect();
            let (fc, gc) = objective(&candidate);
            if fc.is_finite() && fc <= f + 1e-4 * step * slope {
                accepted = Some((candidate, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&yv, &yv).max(f64::MIN_POSITIVE) {
            if memory.len() == params.history {
                memory.pop_front();
            }
            memory.push_back((s, yv, 1.0 / sy));
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }
    let norm = max_norm(&g);
    (x, iterations, norm < params.gradient_tolerance, norm)
}

/// `y` holds 0/1 targets; both classes must be present (checked by caller).
pub fn fit_logistic(x: &Matrix, y: &[f64], params: &LogisticParams) -> LogisticModel {
    let start = vec![0.0; x.cols() + 1];
    let (beta, iterations, converged, gradient_norm) =
        lbfgs(|p| loss_and_gradient(x, y, p, params.l2), start, params);
    LogisticModel {
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
        iterations,
        converged,
        gradient_norm,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn overlapping_data() -> (Matrix, Vec<f64>) {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![((i * 37) % 17) as f64 / 4.0 - 2.0, ((i * 11) % 7) as f64 - 3.0])
            .collect();
        let y: Vec<f64> = (0..40).map(|i| ((i * 37 % 17 + i % 3) % 2) as f64).collect();
        (Matrix::from_rows(&rows), y)
    }

    #[test]
    fn converges_on_overlapping_classes() {
        let (x, y) = overlapping_data();
        let m = fit_logistic(&x, &y, &LogisticParams::default());
        assert!(m.converged, "gradient {}", m.gradient_norm);
        let (_, g) = loss_and_gradient(&x, &y, &[m.intercept, m.coefficients[0], m.coefficients[1]], 0.0);
        assert!(max_norm(&g) < 1e-6);
    }

    #[test]
    fn symmetric_data_has_zero_intercept() {
        let rows: Vec<Vec<f64>> = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0].iter().map(|&v| vec![v]).collect();
        // mirrored labels with overlap so the optimum is finite
        let y = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let m = fit_logistic(&Matrix::from_rows(&rows), &y, &LogisticParams::default());
        assert!(m.converged);
        assert!(m.intercept.abs() < 1e-3);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-9);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
