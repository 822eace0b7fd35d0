//! Restarted GMRES with right preconditioning.
//!
//! With `A P⁻¹ w = b, x = P⁻¹ w` the Arnoldi residual is the residual of the
//! original system, and every restart recomputes it explicitly from `b - A x`.

use crate::scalar::Scalar;
use crate::sparse::{axpy, dot, norm2, CsrMatrix};

use super::ilu::Ilu;

pub(crate) struct GmresOutcome<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    /// `‖b - A x‖₂ / ‖b‖₂`.
    pub relative_residual: T,
    pub converged: bool,
}

/// Stopping parameters for one GMRES run.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GmresParams<T> {
    pub rel_tol: T,
    pub restart: usize,
    pub max_iters: usize,
    /// Give up after a full cycle whose residual ratio exceeds this.
    pub stall_ratio: Option<T>,
}

fn residual<T: Scalar>(a: &CsrMatrix<T>, x: &[T], b: &[T], r: &mut [T]) -> T {
    a.matvec_into(x, r);
    for (ri, &bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    norm2(r)
}

fn givens<T: Scalar>(a: T, b: T) -> (T, T) {
    if b == T::zero() {
        (T::one(), T::zero())
    } else {
        let h = a.hypot(b);
        (a / h, b / h)
    }
}

pub(crate) fn gmres<T: Scalar>(
    a: &CsrMatrix<T>,
    b: &[T],
    precond: &Ilu<T>,
    x0: Option<Vec<T>>,
    params: &GmresParams<T>,
) -> GmresOutcome<T> {
    let GmresParams {
        rel_tol,
        restart,
        max_iters,
        stall_ratio,
    } = *params;
    let n = a.n;
    let bnorm = norm2(b);
    let mut x = x0.unwrap_or_else(|| vec![T::zero(); n]);
    assert_eq!(x.len(), n, "initial guess length");
    if bnorm == T::zero() {
        return GmresOutcome {
            x: vec![T::zero(); n],
            iterations: 0,
            relative_residual: T::zero(),
            converged: true,
        };
    }
    let target = rel_tol * bnorm;
    let m = restart.max(1).min(n);
    let mut r = vec![T::zero(); n];
    let mut rnorm = residual(a, &x, b, &mut r);
    let mut iterations = 0;

    let mut basis: Vec<Vec<T>> = Vec::with_capacity(m + 1);
    let mut h = vec![vec![T::zero(); m + 1]; m];
    let mut cs = vec![T::zero(); m];
    let mut sn = vec![T::zero(); m];
    let mut g = vec![T::zero(); m + 1];
    let mut z = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];

    while rnorm > target && iterations < max_iters {
        basis.clear();
        let inv = T::one() / rnorm;
        basis.push(r.iter().map(|&v| v * inv).collect());
        g.iter_mut().for_each(|v| *v = T::zero());
        g[0] = rnorm;

        let mut used = 0;
        for j in 0..m {
            iterations += 1;
            z.copy_from_slice(&basis[j]);
            precond.solve_in_place(&mut z);
            a.matvec_into(&z, &mut w);
            // modified Gram-Schmidt
            for (q, vq) in basis.iter().enumerate() {
                let hq = dot(&w, vq);
                h[j][q] = hq;
                axpy(-hq, vq, &mut w);
            }
            let hn = norm2(&w);
            h[j][j + 1] = hn;
            for q in 0..j {
                let t = cs[q] * h[j][q] + sn[q] * h[j][q + 1];
                h[j][q + 1] = -sn[q] * h[j][q] + cs[q] * h[j][q + 1];
                h[j][q] = t;
            }
            let (c, s) = givens(h[j][j], h[j][j + 1]);
            cs[j] = c;
            sn[j] = s;
            h[j][j] = c * h[j][j] + s * h[j][j + 1];
            h[j][j + 1] = T::zero();
            g[j + 1] = -s * g[j];
            g[j] = c * g[j];
            used = j + 1;

            if g[j + 1].abs() <= target || hn == T::zero() || iterations >= max_iters {
                break;
            }
            let inv = T::one() / hn;
            basis.push(w.iter().map(|&v| v * inv).collect());
        }

        // back substitution for the least-squares coefficients
        let mut y = vec![T::zero(); used];
        for q in (0..used).rev() {
            let mut s = g[q];
            for p in q + 1..used {
                s -= h[p][q] * y[p];
            }
            y[q] = s / h[q][q];
        }
        z.iter_mut().for_each(|v| *v = T::zero());
        for (q, &yq) in y.iter().enumerate() {
            axpy(yq, &basis[q], &mut z);
        }
        precond.solve_in_place(&mut z);
        for (xi, &zi) in x.iter_mut().zip(&z) {
            *xi += zi;
        }
        let prev = rnorm;
        rnorm = residual(a, &x, b, &mut r);
        log::debug!(
            "gmres: {iterations} iterations, relative residual {:e}",
            (rnorm / bnorm).as_f64()
        );
        if !(rnorm < prev) && used < m && rnorm > target {
            // breakdown without progress
            break;
        }
        if let Some(ratio) = stall_ratio {
            if rnorm > target && !(rnorm <= ratio * prev) {
                break;
            }
        }
    }
    GmresOutcome {
        converged: rnorm <= target,
        relative_residual: rnorm / bnorm,
        iterations,
        x,
    }
}
