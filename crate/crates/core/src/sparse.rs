//! Triplet accumulation and compressed-row storage.

use std::io::Write;

use rayon::prelude::*;

use crate::scalar::Scalar;

/// Chunk length for parallel vector kernels. Partial sums are combined in
/// chunk order, so results do not depend on the worker count.
pub(crate) const CHUNK: usize = 8192;

/// Unordered `(row, col, value)` entries; duplicates are summed on compression.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder<T> {
    n: usize,
    entries: Vec<(u32, u32, T)>,
}

impl<T: Scalar> TripletBuilder<T> {
    pub fn new(n: usize) -> Self {
        assert!(n <= u32::MAX as usize, "dimension exceeds u32 index range");
        Self {
            n,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        let mut t = Self::new(n);
        t.entries.reserve(cap);
        t
    }

    /// Adds a 0-based entry.
    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: T) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push((row as u32, col as u32, value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorts by `(row, col)`, sums duplicates and drops off-diagonal zeros.
    pub fn into_csr(mut self) -> CsrMatrix<T> {
        self.entries.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<T> = Vec::with_capacity(self.entries.len());
        let mut it = self.entries.into_iter().peekable();
        while let Some((r, c, mut v)) = it.next() {
            while let Some(&(r2, c2, v2)) = it.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    it.next();
                } else {
                    break;
                }
            }
            if v != T::zero() || r == c {
                col_idx.push(c);
                values.push(v);
                row_ptr[r as usize + 1] += 1;
            }
        }
        for r in 0..self.n {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix {
            n: self.n,
            row_ptr,
            col_idx,
            values,
        }
    }
}

/// Square sparse matrix in compressed-row form with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Builds from per-row entry lists given in row order; each list may
    /// contain duplicate columns in any order.
    pub fn from_rows<I>(n: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = Vec<(u32, T)>>,
    {
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|e| e.0);
            let mut last: Option<u32> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            // drop off-diagonal zeros produced by vanishing speeds
            let start = *row_ptr.last().unwrap();
            let mut w = start;
            for q in start..col_idx.len() {
                if values[q] != T::zero() || col_idx[q] as usize == r {
                    col_idx[w] = col_idx[q];
                    values[w] = values[q];
                    w += 1;
                }
            }
            col_idx.truncate(w);
            values.truncate(w);
            row_ptr.push(w);
        }
        assert_eq!(row_ptr.len(), n + 1, "row count mismatch");
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[u32], &[T]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&(c as u32)) {
            Ok(p) => vals[p],
            Err(_) => T::zero(),
        }
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n).map(|r| self.get(r, r)).collect()
    }

    /// `out = A x`, row-parallel.
    pub fn matvec_into(&self, x: &[T], out: &mut [T]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(out.len(), self.n);
        out.par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| {
                let base = c * CHUNK;
                for (q, o) in chunk.iter_mut().enumerate() {
                    let (cols, vals) = self.row(base + q);
                    let mut s = T::zero();
                    for (&cc, &v) in cols.iter().zip(vals) {
                        s += v * x[cc as usize];
                    }
                    *o = s;
                }
            });
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n];
        self.matvec_into(x, &mut out);
        out
    }

    /// Iterates `(row, col, value)`, 0-based, in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.n).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter()
                .zip(vals)
                .map(move |(&c, &v)| (r, c as usize, v))
        })
    }

    /// Coordinate text export: one `row col value` line per entry, 1-based.
    pub fn write_coo<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (r, c, v) in self.iter() {
            writeln!(w, "{} {} {:.17e}", r + 1, c + 1, v.as_f64())?;
        }
        Ok(())
    }

    /// `P A Pᵀ` for the permutation `p` (row `r` of the result is row `p[r]`
    /// mapped through `p`), where `p` is an involution.
    pub fn permuted_symmetric(&self, p: &[usize]) -> Self {
        let rows = (0..self.n).map(|r| {
            let (cols, vals) = self.row(p[r]);
            cols.iter()
                .zip(vals)
                .map(|(&c, &v)| (p[c as usize] as u32, v))
                .collect::<Vec<_>>()
        });
        Self::from_rows(self.n, rows)
    }
}

/// Parallel dot product with a fixed reduction order.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let partials: Vec<T> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).fold(T::zero(), |s, (&u, &v)| s + u * v))
        .collect();
    partials.into_iter().fold(T::zero(), |s, v| s + v)
}

pub(crate) fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    y.par_chunks_mut(CHUNK)
        .zip(x.par_chunks(CHUNK))
        .for_each(|(yc, xc)| {
            for (u, &v) in yc.iter_mut().zip(xc) {
                *u += alpha * v;
            }
        });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_sum_and_zeros_drop() {
        let mut t = TripletBuilder::<f64>::new(3);
        t.push(0, 0, 1.0);
        t.push(0, 0, 2.0);
        t.push(0, 2, 1.0);
        t.push(0, 2, -1.0);
        t.push(1, 1, 0.0);
        t.push(2, 0, 4.0);
        let m = t.into_csr();
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(0, 2), 0.0);
        assert_eq!(m.row(0).0, &[0]);
        assert_eq!(m.row(1).0, &[1]);
        assert_eq!(m.get(2, 0), 4.0);
        assert_eq!(m.nnz(), 3);
    }

    #[test]
    fn from_rows_matches_triplets() {
        let rows = vec![
            vec![(2, 1.0), (0, 2.0), (2, 0.5)],
            vec![(1, 3.0), (0, 0.0)],
            vec![(2, -1.0)],
        ];
        let a = CsrMatrix::from_rows(3, rows.clone());
        let mut t = TripletBuilder::new(3);
        for (r, row) in rows.into_iter().enumerate() {
            for (c, v) in row {
                t.push(r, c as usize, v);
            }
        }
        assert_eq!(a, t.into_csr());
        assert_eq!(a.matvec(&[1.0, 1.0, 1.0]), vec![3.5, 3.0, -1.0]);
    }

    #[test]
    fn coo_export_is_one_based_sorted() {
        let a = CsrMatrix::from_rows(2, vec![vec![(1, 2.0), (0, 1.0)], vec![(1, 3.0)]]);
        let mut buf = Vec::new();
        a.write_coo(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("1 1 "));
        assert!(lines[1].starts_with("1 2 "));
        assert!(lines[2].starts_with("2 2 "));
    }
}
