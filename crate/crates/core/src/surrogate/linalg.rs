//! Dense symmetric linear algebra for the GP: Cholesky factorization and
//! triangular solves. Matrices are row-major `n x n` vectors.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<S> {
    n: usize,
    l: Vec<S>,
}

impl<S: Scalar> Cholesky<S> {
    /// Factorizes `a` (row-major, symmetric). Fails when a pivot is not
    /// strictly positive.
    pub fn factor(a: &[S], n: usize) -> Option<Self> {
        debug_assert_eq!(a.len(), n * n);
        let mut l = vec![S::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a[i * n + j];
                for k in 0..j {
                    sum = sum - l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if sum <= S::zero() || !sum.is_finite() {
                        return None;
                    }
                    l[i * n + j] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Some(Self { n, l })
    }

    /// Factorizes `a + jitter*I`, escalating the jitter by 10x twice before
    /// giving up.
    pub fn factor_with_jitter(a: &[S], n: usize, jitter: f64) -> Result<(Self, f64)> {
        if let Some(c) = Self::factor(a, n) {
            return Ok((c, 0.0));
        }
        let mut jit = jitter;
        for _ in 0..3 {
            let mut aj = a.to_vec();
            for i in 0..n {
                aj[i * n + i] = aj[i * n + i] + S::cast(jit);
            }
            if let Some(c) = Self::factor(&aj, n) {
                return Ok((c, jit));
            }
            jit *= 10.0;
        }
        Err(Error::CholeskyFailure { jitter: jit / 10.0 })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> &[S] {
        &self.l
    }

    /// `sum log L_ii`, i.e. half the log-determinant of the factored matrix.
    pub fn half_log_det(&self) -> S {
        let mut acc = S::zero();
        for i in 0..self.n {
            acc = acc + self.l[i * self.n + i].ln();
        }
        acc
    }

    /// Solves `L w = b` (forward substitution).
    pub fn solve_lower(&self, b: &[S]) -> Vec<S> {
        let n = self.n;
        let mut w = b.to_vec();
        for i in 0..n {
            let mut sum = w[i];
            for k in 0..i {
                sum = sum - self.l[i * n + k] * w[k];
            }
            w[i] = sum / self.l[i * n + i];
        }
        w
    }

    /// Solves `L' v = b` (backward substitution).
    pub fn solve_lower_transpose(&self, b: &[S]) -> Vec<S> {
        let n = self.n;
        let mut v = b.to_vec();
        for i in (0..n).rev() {
            let mut sum = v[i];
            for k in i + 1..n {
                sum = sum - self.l[k * n + i] * v[k];
            }
            v[i] = sum / self.l[i * n + i];
        }
        v
    }

    /// Solves `A x = b` for the factored `A = L L'`.
    pub fn solve(&self, b: &[S]) -> Vec<S> {
        self.solve_lower_transpose(&self.solve_lower(b))
    }

    /// Dense inverse of the factored matrix, column by column.
    pub fn inverse(&self) -> Vec<S> {
        let n = self.n;
        let mut inv = vec![S::zero(); n * n];
        for col in 0..n {
            let mut e = vec![S::zero(); n];
            e[col] = S::one();
            let x = self.solve(&e);
            for row in 0..n {
                inv[row * n + col] = x[row];
            }
        }
        inv
    }
}
