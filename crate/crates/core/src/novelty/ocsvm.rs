//! One-class SVM novelty scores via the RBF-kernel dual problem.
//!
//! Solves `min 1/2 a'Qa` subject to `0 <= a_i <= 1/(nu*n)`, `sum a = 1`,
//! with `Q_ij = exp(-gamma * |x_i - x_j|^2)`, using maximal-violating-pair
//! SMO updates. The decision function is `f(x) = sum_j a_j K(x_j, x) - rho`;
//! the novelty score is `-f`, so higher means more novel.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{check_matrix, sq_dist};

const MAX_ITERATIONS: usize = 200_000;
const KKT_TOL: f64 = 1e-8;

/// Dual solution plus derived quantities, exposed for verification.
#[derive(Debug, Clone)]
pub struct OcsvmSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    /// `1/2 a'Qa` at the returned iterate.
    pub objective: f64,
    /// Final maximal KKT violation.
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Solves the dual and reports the full solution. `scores[i] = rho - (Qa)_i`.
pub fn ocsvm_solve<S: Scalar>(x: &[Vec<S>], nu: f64, gamma: f64) -> Result<OcsvmSolution> {
    check_matrix(x)?;
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientPoints {
            what: "ocsvm_scores",
            required: 2,
            actual: n,
        });
    }
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::invalid("nu", format!("must be in (0, 1], got {nu}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::invalid(
            "gamma",
            format!("must be > 0, got {gamma}"),
        ));
    }

    let q: Vec<f64> = {
        let mut q = vec![0.0; n * n];
        for i in 0..n {
            q[i * n + i] = 1.0;
            for j in i + 1..n {
                let k = (-gamma * sq_dist(&x[i], &x[j]).f64()).exp();
                q[i * n + j] = k;
                q[j * n + i] = k;
            }
        }
        q
    };

    let c = 1.0 / (nu * n as f64);
    // feasible start: the first floor(nu*n) coordinates at the box bound,
    // the remainder fraction on the next one
    let mut alpha = vec![0.0f64; n];
    let full = (nu * n as f64).floor() as usize;
    for a in alpha.iter_mut().take(full.min(n)) {
        *a = c;
    }
    if full < n {
        alpha[full] = (1.0 - full as f64 * c).clamp(0.0, c);
    }

    // gradient of the objective: g = Q a
    let mut grad: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| q[i * n + j] * alpha[j])
                .sum()
        })
        .collect();

    let violation = |alpha: &[f64], grad: &[f64]| -> (f64, usize, usize) {
        // i maximizes -g over coordinates free to grow, j minimizes -g over
        // coordinates free to shrink
        let mut best_up = f64::NEG_INFINITY;
        let mut up = usize::MAX;
        let mut best_low = f64::INFINITY;
        let mut low = usize::MAX;
        for t in 0..n {
            if alpha[t] < c - 1e-15 && -grad[t] > best_up {
                best_up = -grad[t];
                up = t;
            }
            if alpha[t] > 1e-15 && -grad[t] < best_low {
                best_low = -grad[t];
                low = t;
            }
        }
        (best_up - best_low, up, low)
    };

    let mut iterations = 0;
    let mut residual;
    loop {
        let (v, i, j) = violation(&alpha, &grad);
        residual = v;
        if v <= KKT_TOL || i == usize::MAX || j == usize::MAX {
            break;
        }
        if iterations >= MAX_ITERATIONS {
            return Err(Error::NonConvergence {
                iterations,
                residual,
            });
        }
        // move delta from alpha[j] to alpha[i], minimizing the quadratic
        let denom = (q[i * n + i] + q[j * n + j] - 2.0 * q[i * n + j]).max(1e-12);
        let mut delta = (grad[j] - grad[i]) / denom;
        delta = delta.min(c - alpha[i]).min(alpha[j]);
        alpha[i] += delta;
        alpha[j] -= delta;
        for t in 0..n {
            grad[t] += delta * (q[i * n + t] - q[j * n + t]);
        }
        iterations += 1;
    }

    // rho from the free support vectors, midpoint of the feasible band otherwise
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let mut upper = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;
    for t in 0..n {
        if alpha[t] > 1e-12 && alpha[t] < c - 1e-12 {
            free_sum += grad[t];
            free_count += 1;
        } else if alpha[t] <= 1e-12 {
            upper = upper.min(grad[t]);
        } else {
            lower = lower.max(grad[t]);
        }
    }
    let rho = if free_count > 0 {
        free_sum / free_count as f64
    } else {
        match (lower.is_finite(), upper.is_finite()) {
            (true, true) => 0.5 * (lower + upper),
            (true, false) => lower,
            (false, true) => upper,
            (false, false) => 0.0,
        }
    };

    let objective = 0.5
        * (0..n)
            .map(|i| alpha[i] * grad[i])
            .sum::<f64>();
    Ok(OcsvmSolution {
        alpha,
        rho,
        objective,
        kkt_residual: residual.max(0.0),
        iterations,
    })
}

/// Novelty scores `-f(x_i)` from the dual solution.
pub fn ocsvm_scores<S: Scalar>(x: &[Vec<S>], nu: f64, gamma: f64) -> Result<Vec<S>> {
    let n = x.len();
    let sol = ocsvm_solve(x, nu, gamma)?;
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let f: f64 = (0..n)
            .map(|j| sol.alpha[j] * (-gamma * sq_dist(&x[i], &x[j]).f64()).exp())
            .sum::<f64>()
            - sol.rho;
        scores.push(S::cast(-f));
    }
    Ok(scores)
}
