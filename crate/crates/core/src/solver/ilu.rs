//! Threshold incomplete LU factorization, ILUT(p, τ).
//!
//! Rows are eliminated in natural order with a sparse work row. Work-row
//! entries below `τ·‖a_i‖₂` are dropped (L entries before division by the
//! pivot), then at most `fill` of the largest
//! entries are kept in each of the L and U parts of the row. With `τ = 0`
//! and unbounded fill the factorization is an exact LU without pivoting.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone)]
pub struct Ilu<T> {
    n: usize,
    /// Strictly lower part, unit diagonal implied.
    l_ptr: Vec<usize>,
    l_idx: Vec<u32>,
    l_val: Vec<T>,
    /// Strictly upper part.
    u_ptr: Vec<usize>,
    u_idx: Vec<u32>,
    u_val: Vec<T>,
    /// Reciprocal of the U diagonal.
    inv_diag: Vec<T>,
}

impl<T: Scalar> Ilu<T> {
    /// Factorizes `a + shift·diag(sign(a_ii))`.
    pub fn factor(a: &CsrMatrix<T>, drop_tol: T, fill: usize, shift: T) -> Result<Self> {
        let n = a.n;
        let mut l_ptr = Vec::with_capacity(n + 1);
        let mut u_ptr = Vec::with_capacity(n + 1);
        l_ptr.push(0);
        u_ptr.push(0);
        let mut l_idx = Vec::new();
        let mut l_val = Vec::new();
        let mut u_idx: Vec<u32> = Vec::new();
        let mut u_val: Vec<T> = Vec::new();
        let mut inv_diag = vec![T::zero(); n];

        let mut w = vec![T::zero(); n];
        let mut present = vec![false; n];
        let mut touched: Vec<usize> = Vec::with_capacity(64);
        let mut heap: BinaryHeap<Reverse<usize>> = BinaryHeap::new();
        let mut lower: Vec<(usize, T)> = Vec::new();
        let mut upper: Vec<(usize, T)> = Vec::new();

        for i in 0..n {
            let (cols, vals) = a.row(i);
            let norm = vals.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
            let tau = drop_tol * norm;
            for (&c, &v) in cols.iter().zip(vals) {
                let c = c as usize;
                w[c] = v;
                present[c] = true;
                touched.push(c);
                if c < i {
                    heap.push(Reverse(c));
                }
            }
            if !present[i] {
                w[i] = T::zero();
                present[i] = true;
                touched.push(i);
            }
            if shift != T::zero() {
                let s = if w[i] < T::zero() { -shift } else { shift };
                w[i] += s * norm.max(T::one());
            }

            lower.clear();
            while let Some(Reverse(k)) = heap.pop() {
                let wk = w[k];
                w[k] = T::zero();
                // compared before division by the pivot so the test is scale-free
                if wk.abs() <= tau || wk == T::zero() {
                    continue;
                }
                let mult = wk * inv_diag[k];
                lower.push((k, mult));
                let (ua, ub) = (u_ptr[k], u_ptr[k + 1]);
                for q in ua..ub {
                    let c = u_idx[q] as usize;
                    if !present[c] {
                        present[c] = true;
                        touched.push(c);
                        w[c] = T::zero();
                        if c < i {
                            heap.push(Reverse(c));
                        }
                    }
                    w[c] -= mult * u_val[q];
                }
            }

            let d = w[i];
            upper.clear();
            for &c in &touched {
                if c > i && w[c].abs() > tau {
                    upper.push((c, w[c]));
                }
            }
            for &c in &touched {
                w[c] = T::zero();
                present[c] = false;
            }
            touched.clear();

            keep_largest(&mut lower, fill);
            keep_largest(&mut upper, fill);
            if !(d.abs() > T::epsilon() * norm) || !d.is_finite() {
                return Err(Error::PreconditionerBreakdown { row: i + 1 });
            }
            inv_diag[i] = T::one() / d;
            for &(c, v) in lower.iter() {
                l_idx.push(c as u32);
                l_val.push(v);
            }
            l_ptr.push(l_idx.len());
            for &(c, v) in upper.iter() {
                u_idx.push(c as u32);
                u_val.push(v);
            }
            u_ptr.push(u_idx.len());
        }
        Ok(Self {
            n,
            l_ptr,
            l_idx,
            l_val,
            u_ptr,
            u_idx,
            u_val,
            inv_diag,
        })
    }

    pub fn nnz(&self) -> usize {
        self.l_val.len() + self.u_val.len() + self.n
    }

    /// Solves `L U x = b` in place.
    pub fn solve_in_place(&self, x: &mut [T]) {
        for i in 0..self.n {
            let mut s = x[i];
            for q in self.l_ptr[i]..self.l_ptr[i + 1] {
                s -= self.l_val[q] * x[self.l_idx[q] as usize];
            }
            x[i] = s;
        }
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for q in self.u_ptr[i]..self.u_ptr[i + 1] {
                s -= self.u_val[q] * x[self.u_idx[q] as usize];
            }
            x[i] = s * self.inv_diag[i];
        }
    }
}

/// Keeps the `fill` entries of largest magnitude, sorted by column.
fn keep_largest<T: Scalar>(entries: &mut Vec<(usize, T)>, fill: usize) {
    if entries.len() > fill {
        entries.sort_by(|a, b| {
            b.1.abs()
                .partial_cmp(&a.1.abs())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        entries.truncate(fill);
    }
    entries.sort_by_key(|e| e.0);
}
