//! Linear soft-margin SVM with per-class penalties, solved in the dual by
//! sequential minimal optimisation with second-order working-set selection.
//!
//! Primal: `min 1/2 |w|^2 + sum_i C_i max(0, 1 - y_i (w.x_i + b))`.
//! Dual:   `min 1/2 a'Qa - e'a`, `0 <= a_i <= C_i`, `y'a = 0`,
//! with `Q_ij = y_i y_j x_i.x_j`.

use serde::{Deserialize, Serialize};

use super::Matrix;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmParams {
    pub c: f64,
    pub balanced: bool,
    /// Stopping tolerance on the maximal KKT violation.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            balanced: true,
            tolerance: 1e-6,
            max_iterations: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl SvmModel {
    pub fn decision(&self, row: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(row).map(|(c, x)| c * x).sum::<f64>()
    }
}

/// Solver by-products used to check optimality.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmSolution {
    pub model: SvmModel,
    pub alpha: Vec<f64>,
    /// Per-sample box bound `C_i`.
    pub bounds: Vec<f64>,
    pub iterations: usize,
    /// Dual objective after every iteration (index 0 is the start, 0),
    /// accumulated from the exact change of each two-variable step.
    pub dual_objective_trace: Vec<f64>,
}

/// `(C_pos, C_neg)`: `C * n / (2 * n_k)` when balanced, else `C` for both.
pub fn class_penalties(y: &[f64], params: &SvmParams) -> (f64, f64) {
    if !params.balanced {
        return (params.c, params.c);
    }
    let n = y.len() as f64;
    let pos = y.iter().filter(|&&v| v > 0.5).count() as f64;
    let neg = n - pos;
    (params.c * n / (2.0 * pos), params.c * n / (2.0 * neg))
}

/// Primal objective of `(w, b)` under the given per-sample penalties.
pub fn primal_objective(x: &Matrix, y: &[f64], bounds: &[f64], model: &SvmModel) -> f64 {
    let reg = 0.5 * model.coefficients.iter().map(|w| w * w).sum::<f64>();
    let hinge: f64 = x
        .iter_rows()
        .zip(y)
        .zip(bounds)
        .map(|((row, &t), c)| {
            let sign = if t > 0.5 { 1.0 } else { -1.0 };
            c * (1.0 - sign * model.decision(row)).max(0.0)
        })
        .sum();
    reg + hinge
}

/// `y` holds 0/1 targets with both classes present.
pub fn solve_svm(x: &Matrix, y: &[f64], params: &SvmParams) -> SvmSolution {
    let n = x.rows();
    let sign: Vec<f64> = y.iter().map(|&t| if t > 0.5 { 1.0 } else { -1.0 }).collect();
    let (c_pos, c_neg) = class_penalties(y, params);
    let bounds: Vec<f64> = sign.iter().map(|&s| if s > 0.0 { c_pos } else { c_neg }).collect();

    let kernel: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum())
        .collect();
    let k = |i: usize, j: usize| kernel[i * n + j];
    let q = |i: usize, j: usize| sign[i] * sign[j] * kernel[i * n + j];

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut trace = vec![0.0];
    let upper = |a: &[f64], t: usize| a[t] >= bounds[t];
    let lower = |a: &[f64], t: usize| a[t] <= 0.0;

    let mut iterations = 0;
    while iterations < params.max_iterations {
        // i: maximal violator in I_up
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            let in_up = if sign[t] > 0.0 { !upper(&alpha, t) } else { !lower(&alpha, t) };
            if in_up && -sign[t] * grad[t] >= g_max {
                g_max = -sign[t] * grad[t];
                i_sel = Some(t);
            }
        }
        let Some(i) = i_sel else { break };
        // j: best second-order decrease in I_low
        let mut g_max2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let in_low = if sign[t] > 0.0 { !lower(&alpha, t) } else { !upper(&alpha, t) };
            if !in_low {
                continue;
            }
            let yg = sign[t] * grad[t];
            g_max2 = g_max2.max(yg);
            let diff = g_max + yg;
            if diff > 0.0 {
                let quad = k(i, i) + k(t, t) - 2.0 * k(i, t);
                let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                if obj <= best {
                    best = obj;
                    j_sel = Some(t);
                }
            }
        }
        if g_max + g_max2 < params.tolerance {
            break;
        }
        let Some(j) = j_sel else { break };
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (ci, cj) = (bounds[i], bounds[j]);
        if sign[i] != sign[j] {
            let quad = (q(i, i) + q(j, j) + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let quad = (q(i, i) + q(j, j) - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        let change = grad[i] * di
            + grad[j] * dj
            + 0.5 * (q(i, i) * di * di + 2.0 * q(i, j) * di * dj + q(j, j) * dj * dj);
        if !(change <= 0.0) {
            // rounding noise at the optimum; no further descent is possible
            alpha[i] = old_i;
            alpha[j] = old_j;
            iterations -= 1;
            break;
        }
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
        let last = *trace.last().expect("trace starts at 0");
        trace.push(last + change);
    }

    // bias from free vectors, or the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut free_sum) = (0usize, 0.0);
    for t in 0..n {
        let yg = sign[t] * grad[t];
        if upper(&alpha, t) {
            if sign[t] < 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else if lower(&alpha, t) {
            if sign[t] > 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 { free_sum / free as f64 } else { (ub + lb) / 2.0 };

    let mut coefficients = vec![0.0; x.cols()];
    for (t, row) in x.iter_rows().enumerate() {
        let weight = alpha[t] * sign[t];
        if weight != 0.0 {
            for (c, v) in coefficients.iter_mut().zip(row) {
                *c += weight * v;
            }
        }
    }
    SvmSolution {
        model: SvmModel { intercept: -rho, coefficients },
        alpha,
        bounds,
        iterations,
        dual_objective_trace: trace,
    }
}

pub fn fit_svm(x: &Matrix, y: &[f64], params: &SvmParams) -> SvmModel {
    solve_svm(x, y, params).model
}
