//! Reference assembly by operator application.
//!
//! [`apply_operator`] evaluates `(M v)` at every node directly from the
//! difference-operator definitions (∂ᶠ, ∂ᵇ, ∂², ∂ᶠᶠ, ∂ᵇᵇ and their upwind
//! composition). [`oracle_assemble`] recovers the matrix column by column by
//! applying it to unit basis vectors, which costs O(n²) and is meant for
//! grids of at most a few thousand nodes.

use crate::error::Result;
use crate::grid::{Grid, NodeClass};
use crate::model::ModelParams;
use crate::scalar::Scalar;
use crate::sparse::{CsrMatrix, TripletBuilder};

use super::StencilContext;

/// Values of a field along one grid line through a node.
struct Line<'a, T> {
    v: &'a [T],
    grid: &'a Grid<T>,
    axis: usize,
    i: usize,
    j: usize,
    k: usize,
    delta: T,
}

impl<T: Scalar> Line<'_, T> {
    /// Field value `s` nodes away along the axis.
    fn at(&self, s: isize) -> T {
        let mut n = [self.i, self.j, self.k];
        n[self.axis] = (n[self.axis] as isize + s) as usize;
        self.v[self.grid.offset(n[0], n[1], n[2])]
    }

    fn forward(&self) -> T {
        (self.at(1) - self.at(0)) / self.delta
    }

    fn backward(&self) -> T {
        (self.at(0) - self.at(-1)) / self.delta
    }

    fn centered2(&self) -> T {
        (self.at(1) - T::lit(2.0) * self.at(0) + self.at(-1)) / (self.delta * self.delta)
    }

    fn forward2(&self) -> T {
        (-T::lit(3.0) * self.at(0) + T::lit(4.0) * self.at(1) - self.at(2))
            / (T::lit(2.0) * self.delta)
    }

    fn backward2(&self) -> T {
        (T::lit(3.0) * self.at(0) - T::lit(4.0) * self.at(-1) + self.at(-2))
            / (T::lit(2.0) * self.delta)
    }

    /// `c ∂̃ v`: second-order upwind where both upstream nodes exist and
    /// `2 < n < N-1`, first-order upwind on boundary-adjacent nodes.
    fn upwind(&self, c: T, n: usize, count: usize) -> T {
        let (p, m) = (c.max(T::zero()), c.min(T::zero()));
        if n > 2 && n + 1 < count {
            p * self.forward2() + m * self.backward2()
        } else {
            p * self.forward() + m * self.backward()
        }
    }

    /// Inward-only stencil on a face: `max(0,c)∂ᶠᶠ` at the first node,
    /// `min(0,c)∂ᵇᵇ` at the last.
    fn inward(&self, c: T, n: usize) -> T {
        if n == 1 {
            c.max(T::zero()) * self.forward2()
        } else {
            c.min(T::zero()) * self.backward2()
        }
    }
}

/// `(M v)` evaluated node by node from the operator definitions.
pub fn apply_operator<T: Scalar>(ctx: &StencilContext<'_, T>, v: &[T]) -> Vec<T> {
    let grid = ctx.grid;
    assert_eq!(v.len(), grid.len());
    let (ni, nj, nk) = grid.dims();
    let [dx, dy, dz] = grid.spacing;
    let mut out = vec![T::zero(); grid.len()];
    for (o, i, j, k) in grid.nodes() {
        let line = |axis, delta| Line {
            v,
            grid,
            axis,
            i,
            j,
            k,
            delta,
        };
        let ly = line(1, dy);
        if grid.class_at(o) == NodeClass::NeumannY {
            out[o] = if j == 1 { ly.forward() } else { ly.backward() };
            continue;
        }
        let c = ctx.speed_xz(j);
        let beta = ctx.speed_y(i, j, k);
        let l_y = ctx.lambda_sigma2() / T::lit(2.0) * ly.centered2() + ly.upwind(beta, j, nj);
        let lx = line(0, dx);
        let s_x = if i == 1 || i == ni {
            lx.inward(c, i)
        } else {
            lx.upwind(c, i, ni)
        };
        let lz = line(2, dz);
        let s_z = if k == 1 || k == nk {
            lz.inward(c, k)
        } else {
            lz.upwind(c, k, nk)
        };
        out[o] = v[o] - (l_y + s_x + s_z);
    }
    out
}

/// Builds `M_λ` by applying the operator to each unit basis vector.
pub fn oracle_assemble<T: Scalar>(
    grid: &Grid<T>,
    params: &ModelParams<T>,
    lambda: T,
) -> Result<CsrMatrix<T>> {
    let ctx = StencilContext::new(grid, params, lambda)?;
    let n = grid.len();
    let mut t = TripletBuilder::with_capacity(n, 13 * n);
    let mut e = vec![T::zero(); n];
    for col in 0..n {
        e[col] = T::one();
        for (row, val) in apply_operator(&ctx, &e).into_iter().enumerate() {
            if val != T::zero() {
                t.push(row, col, val);
            }
        }
        e[col] = T::zero();
    }
    Ok(t.into_csr())
}
