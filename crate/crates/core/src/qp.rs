//! Strictly convex quadratic programs with box constraints.
//!
//! Solves `min ½ xᵀHx + gᵀx  s.t.  l ≤ x ≤ u` for symmetric positive definite
//! `H` with a primal active-set method: each iteration solves the equality
//! problem over the free variables by Cholesky, steps to the first blocking
//! bound, and releases the bound with the most negative multiplier once the
//! free subproblem is stationary. Finite termination follows from strict
//! convexity; the iteration cap only guards against a non-PD `H`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum QpError {
    #[error("dimension mismatch in QP data")]
    DimensionMismatch,
    #[error("bounds are inconsistent at index {0} (lower > upper)")]
    InfeasibleBounds(usize),
    #[error("Hessian is not positive definite on the free subspace")]
    NotPositiveDefinite,
    #[error("active-set iteration limit reached")]
    IterationLimit,
    #[error("QP data contains non-finite values")]
    NonFinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bound {
    Lower,
    Upper,
    /// `l == u`; never released.
    Fixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxQpSolution {
    pub x: DVector<f64>,
    /// Indices held at a bound in the final working set, ascending.
    pub active: Vec<usize>,
    pub iterations: usize,
    /// `‖x − clamp(x − ∇f(x), l, u)‖∞`, the projected-gradient stationarity measure.
    pub kkt_residual: f64,
    /// `½ xᵀHx + gᵀx` at the solution.
    pub value: f64,
}

/// Solve the box QP. Infinite bounds are allowed.
pub fn solve_box_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Result<BoxQpSolution, QpError> {
    let n = g.len();
    if h.nrows() != n || h.ncols() != n || lower.len() != n || upper.len() != n {
        return Err(QpError::DimensionMismatch);
    }
    if h.iter().chain(g.iter()).any(|v| !v.is_finite())
        || lower.iter().chain(upper.iter()).any(|v| v.is_nan())
    {
        return Err(QpError::NonFinite);
    }
    if let Some(i) = (0..n).find(|&i| lower[i] > upper[i]) {
        return Err(QpError::InfeasibleBounds(i));
    }

    let mut x = DVector::zeros(n);
    let mut working: Vec<Option<Bound>> = vec![None; n];
    for i in 0..n {
        if lower[i] == upper[i] {
            x[i] = lower[i];
            working[i] = Some(Bound::Fixed);
        } else if lower[i] > 0.0 {
            x[i] = lower[i];
            working[i] = Some(Bound::Lower);
        } else if upper[i] < 0.0 {
            x[i] = upper[i];
            working[i] = Some(Bound::Upper);
        }
    }

    let max_iter = 20 * n + 50;
    // An unblocked full step lands on the free-subspace minimizer; re-solving
    // there only yields rounding noise, so go straight to the multipliers.
    let mut at_face_minimum = false;
    for iter in 1..=max_iter {
        let grad = h * &x + g;
        let free: Vec<usize> = (0..n).filter(|&i| working[i].is_none()).collect();

        let step = if free.is_empty() || at_face_minimum {
            None
        } else {
            let hff = h.select_rows(free.iter()).select_columns(free.iter());
            let rhs = -DVector::from_iterator(free.len(), free.iter().map(|&i| grad[i]));
            let chol = hff.cholesky().ok_or(QpError::NotPositiveDefinite)?;
            let p = chol.solve(&rhs);
            let scale = 1.0 + x.amax();
            if p.amax() <= 1e-14 * scale {
                None
            } else {
                Some(p)
            }
        };

        match step {
            Some(p) => {
                // Longest feasible fraction of the step, and which bound blocks it.
                let mut alpha = 1.0;
                let mut blocking = None;
                for (k, &i) in free.iter().enumerate() {
                    let (limit, side) = if p[k] > 0.0 {
                        (upper[i], Bound::Upper)
                    } else if p[k] < 0.0 {
                        (lower[i], Bound::Lower)
                    } else {
                        continue;
                    };
                    if !limit.is_finite() {
                        continue;
                    }
                    let a = (limit - x[i]) / p[k];
                    if a < alpha {
                        alpha = a.max(0.0);
                        blocking = Some((i, side));
                    }
                }
                for (k, &i) in free.iter().enumerate() {
                    x[i] += alpha * p[k];
                }
                match blocking {
                    Some((i, side)) => {
                        x[i] = if side == Bound::Upper { upper[i] } else { lower[i] };
                        working[i] = Some(side);
                    }
                    None => at_face_minimum = true,
                }
            }
            None => {
                // Stationary on the working face: check multiplier signs.
                let mut worst: Option<(usize, f64)> = None;
                for i in 0..n {
                    let violation = match working[i] {
                        Some(Bound::Lower) => -grad[i],
                        Some(Bound::Upper) => grad[i],
                        _ => continue,
                    };
                    if violation > 0.0 && worst.is_none_or(|(_, w)| violation > w) {
                        worst = Some((i, violation));
                    }
                }
                let tol = 1e-12 * (1.0 + grad.amax());
                match worst {
                    Some((i, v)) if v > tol => {
                        working[i] = None;
                        at_face_minimum = false;
                    }
                    _ => return Ok(finish(h, g, lower, upper, x, &working, iter)),
                }
            }
        }
    }
    Err(QpError::IterationLimit)
}

fn finish(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    mut x: DVector<f64>,
    working: &[Option<Bound>],
    iterations: usize,
) -> BoxQpSolution {
    for i in 0..x.len() {
        x[i] = x[i].max(lower[i]).min(upper[i]);
    }
    let grad = h * &x + g;
    let kkt_residual = (0..x.len())
        .map(|i| (x[i] - (x[i] - grad[i]).max(lower[i]).min(upper[i])).abs())
        .fold(0.0, f64::max);
    let value = 0.5 * x.dot(&(h * &x)) + g.dot(&x);
    BoxQpSolution {
        active: (0..x.len()).filter(|&i| working[i].is_some()).collect(),
        x,
        iterations,
        kkt_residual,
        value,
    }
}
