//! Weighted binary and multinomial logit maximum likelihood by Newton's method
//! with step halving. Designs are row-major `n x l` slices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::spd_solve;

/// Ridge (relative to the largest diagonal entry) added when a Hessian is not positive definite.
pub const HESSIAN_RIDGE: f64 = 1e-8;

/// Newton stops once the predicted remaining objective gain falls below this.
const DECREMENT_TOL: f64 = 1e-11;

/// `ln Λ(z)` without overflow.
pub fn log_logistic(z: f64) -> f64 {
    if z > 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogitFit {
    pub coef: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Number of Newton steps that needed a ridge.
    pub ridge_steps: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Objective at `coef`, with the gradient and the upper triangle of the information
/// matrix (row-major `l x l`) written into `grad` and `info`.
fn binary_pass(x: &[f64], l: usize, y: &[f64], w: &[f64], coef: &[f64], grad: &mut [f64], info: &mut [f64]) -> f64 {
    let mut f = 0.0;
    grad.fill(0.0);
    info.fill(0.0);
    for (i, (&yi, &wi)) in y.iter().zip(w).enumerate() {
        if wi == 0.0 {
            continue;
        }
        let row = &x[i * l..(i + 1) * l];
        let z = dot(row, coef);
        // one exponential serves both ln Λ(±z) and Λ(z)
        let e = (-z.abs()).exp();
        let log1pe = e.ln_1p();
        let (log_p, log_q, p) = if z > 0.0 {
            (-log1pe, -z - log1pe, 1.0 / (1.0 + e))
        } else {
            (z - log1pe, -log1pe, e / (1.0 + e))
        };
        f += wi * if yi > 0.5 { log_p } else { log_q };
        let g = wi * (yi - p);
        let h = wi * p * (1.0 - p);
        for a in 0..l {
            grad[a] += g * row[a];
            let ha = h * row[a];
            for (o, &rb) in info[a * l + a..(a + 1) * l].iter_mut().zip(&row[a..]) {
                *o += ha * rb;
            }
        }
    }
    f
}

/// Maximize `sum_i w_i [y_i ln Λ(x_i'b) + (1 - y_i) ln(1 - Λ(x_i'b))]` from `start`.
///
/// Every accepted step weakly increases the objective, which keeps EM monotone
/// even when the iteration limit stops Newton early.
pub fn weighted_logit(x: &[f64], l: usize, y: &[f64], w: &[f64], start: &[f64], max_iter: usize) -> Result<LogitFit> {
    let n = y.len();
    if x.len() != n * l || w.len() != n || start.len() != l {
        return Err(Error::dim("weighted logit design", n * l, x.len()));
    }
    let mut coef = start.to_vec();
    let mut grad = vec![0.0; l];
    let mut info = vec![0.0; l * l];
    let mut trial_grad = vec![0.0; l];
    let mut trial_info = vec![0.0; l * l];
    let mut obj = binary_pass(x, l, y, w, &coef, &mut grad, &mut info);
    let mut ridge_steps = 0;
    for it in 0..max_iter {
        let h = DMatrix::from_fn(l, l, |a, b| if a <= b { info[a * l + b] } else { info[b * l + a] });
        let (step, ridged) = spd_solve(&h, &DVector::from_column_slice(&grad), HESSIAN_RIDGE)?;
        if ridged {
            ridge_steps += 1;
        }
        // half the Newton decrement approximates the gain still available
        let small = 0.5 * dot(&grad, step.as_slice()) < DECREMENT_TOL;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = coef.iter().zip(step.iter()).map(|(c, s)| c + t * s).collect();
            let f = binary_pass(x, l, y, w, &trial, &mut trial_grad, &mut trial_info);
            if f.is_finite() && f >= obj - 1e-12 * (1.0 + obj.abs()) {
                let moved = step.iter().fold(0.0_f64, |m, s| m.max((t * s).abs()));
                coef = trial;
                obj = f.max(obj);
                std::mem::swap(&mut grad, &mut trial_grad);
                std::mem::swap(&mut info, &mut trial_info);
                accepted = true;
                if small || moved < 1e-10 {
                    return Ok(LogitFit { coef, objective: obj, iterations: it + 1, converged: true, ridge_steps });
                }
                break;
            }
            if small {
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no ascent direction left at machine precision
            return Ok(LogitFit { coef, objective: obj, iterations: it + 1, converged: true, ridge_steps });
        }
    }
    Ok(LogitFit { coef, objective: obj, iterations: max_iter, converged: false, ridge_steps })
}

fn multinomial_objective(x: &[f64], l: usize, w: &DMatrix<f64>, coef: &[Vec<f64>]) -> f64 {
    let k = coef.len();
    let mut z = vec![0.0; k];
    let mut f = 0.0;
    for i in 0..w.nrows() {
        let row = &x[i * l..(i + 1) * l];
        for (kk, zk) in z.iter_mut().enumerate() {
            *zk = dot(&coef[kk], row);
        }
        let lse = super::log_sum_exp(&z);
        for kk in 0..k {
            f += w[(i, kk)] * (z[kk] - lse);
        }
    }
    f
}

/// Maximize `sum_i sum_k w_ik ln softmax_k(x_i' b)` with `b_0 = 0` fixed. `w` rows need
/// not be degenerate; posterior weights are the intended input.
pub fn weighted_multinomial_logit(
    x: &[f64],
    l: usize,
    w: &DMatrix<f64>,
    start: &[Vec<f64>],
    max_iter: usize,
) -> Result<LogitFit> {
    let n = w.nrows();
    let k = w.ncols();
    if k < 2 {
        return Ok(LogitFit { coef: vec![0.0; l], objective: 0.0, iterations: 0, converged: true, ridge_steps: 0 });
    }
    let dim = (k - 1) * l;
    let mut coef: Vec<Vec<f64>> = start.to_vec();
    let mut obj = multinomial_objective(x, l, w, &coef);
    let mut ridge_steps = 0;
    let mut pi = vec![0.0; k];
    for it in 0..max_iter {
        let mut info = DMatrix::<f64>::zeros(dim, dim);
        let mut grad = DVector::<f64>::zeros(dim);
        for i in 0..n {
            let row = &x[i * l..(i + 1) * l];
            for (kk, p) in pi.iter_mut().enumerate() {
                *p = dot(&coef[kk], row);
            }
            super::softmax_in_place(&mut pi);
            let wsum: f64 = w.row(i).sum();
            for a in 1..k {
                let g = w[(i, a)] - wsum * pi[a];
                for c in 0..l {
                    grad[(a - 1) * l + c] += g * row[c];
                }
                for b in 1..k {
                    let h = wsum * pi[a] * (if a == b { 1.0 } else { 0.0 } - pi[b]);
                    for c in 0..l {
                        for d in 0..l {
                            info[((a - 1) * l + c, (b - 1) * l + d)] += h * row[c] * row[d];
                        }
                    }
                }
            }
        }
        let (step, ridged) = spd_solve(&info, &grad, HESSIAN_RIDGE)?;
        if ridged {
            ridge_steps += 1;
        }
        let small = 0.5 * grad.dot(&step) < DECREMENT_TOL;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = coef.clone();
            for a in 1..k {
                for c in 0..l {
                    trial[a][c] += t * step[(a - 1) * l + c];
                }
            }
            let f = multinomial_objective(x, l, w, &trial);
            if f.is_finite() && f >= obj - 1e-12 * (1.0 + obj.abs()) {
                let moved = step.iter().fold(0.0_f64, |m, s| m.max((t * s).abs()));
                coef = trial;
                obj = f.max(obj);
                accepted = true;
                if small || moved < 1e-10 {
                    return Ok(LogitFit { coef: coef.concat(), objective: obj, iterations: it + 1, converged: true, ridge_steps });
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Ok(LogitFit { coef: coef.concat(), objective: obj, iterations: it + 1, converged: true, ridge_steps });
        }
    }
    Ok(LogitFit { coef: coef.concat(), objective: obj, iterations: max_iter, converged: false, ridge_steps })
}
