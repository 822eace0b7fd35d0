//! Assembly of the scaled resolvent system `M_λ v = g̃`.
//!
//! Equation rows discretise `v - (λσ²/2)∂²_ỹ v - β̃ ∂_ỹ v - (ỹ/λ)∂_x̃ v - (ỹ/λ)∂_z̃ v = g̃`
//! with second-order upwinding of every advection term. Nodes adjacent to a
//! boundary fall back to first-order upwinding, nodes on the x̃ and z̃ faces
//! keep only the inward one-sided stencil, and the two ỹ faces carry
//! zero-flux Neumann rows.

mod oracle;

pub use oracle::{apply_operator, oracle_assemble};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid, NodeClass};
use crate::model::{drift_beta, ModelParams};
use crate::observables::Observable;
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

/// `M_λ` and the right-hand side `g̃`.
#[derive(Debug, Clone)]
pub struct SparseSystem<T> {
    pub matrix: CsrMatrix<T>,
    pub rhs: Vec<T>,
    /// First-order counterpart of `matrix`, when assembled.
    pub low_order: Option<CsrMatrix<T>>,
}

impl<T: Scalar> SparseSystem<T> {
    pub fn n(&self) -> usize {
        self.matrix.n
    }
}

/// Per-node coefficients of the scaled operator.
#[derive(Debug, Clone, Copy)]
pub struct StencilContext<'a, T> {
    pub grid: &'a Grid<T>,
    pub params: &'a ModelParams<T>,
    pub lambda: T,
    /// First-order upwinding everywhere, including the face rows.
    pub low_order: bool,
}

impl<'a, T: Scalar> StencilContext<'a, T> {
    pub fn new(grid: &'a Grid<T>, params: &'a ModelParams<T>, lambda: T) -> Result<Self> {
        if lambda != grid.lambda() {
            return Err(Error::InvalidSpec(format!(
                "lambda {} does not match the grid's {}",
                lambda,
                grid.lambda()
            )));
        }
        if (params.b - grid.spec.b).abs() > T::epsilon() * params.b {
            return Err(Error::InvalidSpec(format!(
                "grid bound b = {} does not match the model's {}",
                grid.spec.b, params.b
            )));
        }
        params.validate()?;
        Ok(Self {
            grid,
            params,
            lambda,
            low_order: false,
        })
    }

    /// Advection speed `ỹ_j/λ` of the x̃ and z̃ terms.
    #[inline(always)]
    pub fn speed_xz(&self, j: usize) -> T {
        self.grid.y(j) / self.lambda
    }

    /// Advection speed `β̃` of the ỹ term, the drift at the unscaled node.
    #[inline(always)]
    pub fn speed_y(&self, i: usize, j: usize, k: usize) -> T {
        let (x, y, z) = self.grid.unscaled(i, j, k);
        drift_beta(x, y, z, self.params)
    }

    /// `λσ²`, twice the diffusion coefficient.
    #[inline(always)]
    pub fn lambda_sigma2(&self) -> T {
        self.lambda * self.params.sigma * self.params.sigma
    }
}

#[inline(always)]
fn pos<T: Scalar>(c: T) -> T {
    c.max(T::zero())
}

#[inline(always)]
fn neg<T: Scalar>(c: T) -> T {
    c.min(T::zero())
}

/// Indicator `𝟏{2 < n < N-1}` selecting the two-node upwind stencil.
#[inline(always)]
fn second_order(n: usize, count: usize) -> bool {
    n > 2 && n + 1 < count
}

/// How an advection term along one axis is discretised at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AxisStencil {
    /// Second-order upwind with first-order fallback next to the boundary.
    Upwind,
    /// First node: inward forward stencil `max(0, c)∂ᶠᶠ` only.
    Lower,
    /// Last node: inward backward stencil `min(0, c)∂ᵇᵇ` only.
    Upper,
}

/// Off-diagonal entries of one advection term, plus its diagonal
/// contribution. Offsets are relative node shifts along the axis.
#[inline]
fn advection<T: Scalar>(
    low_order: bool,
    mode: AxisStencil,
    n: usize,
    count: usize,
    c: T,
    delta: T,
    mut emit: impl FnMut(isize, T),
) -> T {
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    if low_order {
        let (lo, hi) = match mode {
            AxisStencil::Upwind => (neg(c), pos(c)),
            AxisStencil::Lower => (T::zero(), pos(c)),
            AxisStencil::Upper => (neg(c), T::zero()),
        };
        if mode != AxisStencil::Lower {
            emit(-1, lo / delta);
        }
        if mode != AxisStencil::Upper {
            emit(1, -hi / delta);
        }
        return (hi - lo) / delta;
    }
    match mode {
        AxisStencil::Upwind => {
            let ind = if second_order(n, count) {
                T::one()
            } else {
                T::zero()
            };
            if second_order(n, count) {
                emit(-2, -neg(c) / (two * delta));
                emit(2, pos(c) / (two * delta));
            }
            emit(-1, (T::one() + ind) * neg(c) / delta);
            emit(1, -(T::one() + ind) * pos(c) / delta);
            (two + ind) * c.abs() / (two * delta)
        }
        AxisStencil::Lower => {
            emit(1, -two * pos(c) / delta);
            emit(2, pos(c) / (two * delta));
            three * pos(c) / (two * delta)
        }
        AxisStencil::Upper => {
            emit(-1, two * neg(c) / delta);
            emit(-2, -neg(c) / (two * delta));
            -three * neg(c) / (two * delta)
        }
    }
}

/// Stencil choice along x̃ and z̃ for each equation class.
fn class_stencils(class: NodeClass, k: usize, nk: usize) -> (AxisStencil, AxisStencil) {
    use AxisStencil::*;
    let z_face = if k == 1 { Lower } else { Upper };
    match class {
        NodeClass::Interior => (Upwind, Upwind),
        NodeClass::FaceZMinus => (Upwind, Lower),
        NodeClass::FaceZPlus => (Upwind, Upper),
        NodeClass::FaceXMinus => (Lower, Upwind),
        NodeClass::FaceXPlus => (Upper, Upwind),
        NodeClass::EdgeXMinus => {
            debug_assert!(k == 1 || k == nk);
            (Lower, z_face)
        }
        NodeClass::EdgeXPlus => {
            debug_assert!(k == 1 || k == nk);
            (Upper, z_face)
        }
        NodeClass::NeumannY => unreachable!("Neumann rows have no advection stencil"),
    }
}

/// Entries `(column offset, value)` of the row of node `(i, j, k)`.
pub(crate) fn row_entries<T: Scalar>(ctx: &StencilContext<'_, T>, offset: usize) -> Vec<(u32, T)> {
    let grid = ctx.grid;
    let (i, j, k) = grid.node_at(offset);
    let (ni, nj, nk) = grid.dims();
    let [dx, dy, dz] = grid.spacing;
    let class = grid.class_at(offset);
    let col = |ii: usize, jj: usize, kk: usize| grid.offset(ii, jj, kk) as u32;
    let mut row: Vec<(u32, T)> = Vec::with_capacity(13);

    if class == NodeClass::NeumannY {
        let inv = T::one() / dy;
        if j == 1 {
            row.push((col(i, 1, k), -inv));
            row.push((col(i, 2, k), inv));
        } else {
            row.push((col(i, nj - 1, k), -inv));
            row.push((col(i, nj, k), inv));
        }
        return row;
    }

    let two = T::lit(2.0);
    let lam_sig2 = ctx.lambda_sigma2();
    let beta = ctx.speed_y(i, j, k);
    let c = ctx.speed_xz(j);
    let (x_mode, z_mode) = class_stencils(class, k, nk);

    // ỹ: centred diffusion plus upwinded drift
    let diff_off = lam_sig2 / (two * dy * dy);
    row.push((col(i, j - 1, k), -diff_off));
    row.push((col(i, j + 1, k), -diff_off));
    let diag_y = advection(
        ctx.low_order,
        AxisStencil::Upwind,
        j,
        nj,
        beta,
        dy,
        |s, v| row.push((col(i, (j as isize + s) as usize, k), v)),
    );
    let diag_x = advection(ctx.low_order, x_mode, i, ni, c, dx, |s, v| {
        row.push((col((i as isize + s) as usize, j, k), v))
    });
    let diag_z = advection(ctx.low_order, z_mode, k, nk, c, dz, |s, v| {
        row.push((col(i, j, (k as isize + s) as usize), v))
    });
    let diag = T::one() + lam_sig2 / (dy * dy) + diag_y + diag_x + diag_z;
    row.push((col(i, j, k), diag));
    row
}

/// Builds `M_λ` from the closed-form entries of each node class.
pub fn assemble_matrix<T: Scalar>(
    grid: &Grid<T>,
    params: &ModelParams<T>,
    lambda: T,
) -> Result<CsrMatrix<T>> {
    let ctx = StencilContext::new(grid, params, lambda)?;
    matrix_from_rows(&ctx)
}

/// First-order upwind counterpart of `M_λ`: an M-matrix with the same
/// pattern-subset, used only to build a stable preconditioner.
pub fn assemble_low_order_matrix<T: Scalar>(
    grid: &Grid<T>,
    params: &ModelParams<T>,
    lambda: T,
) -> Result<CsrMatrix<T>> {
    let mut ctx = StencilContext::new(grid, params, lambda)?;
    ctx.low_order = true;
    matrix_from_rows(&ctx)
}

fn matrix_from_rows<T: Scalar>(ctx: &StencilContext<'_, T>) -> Result<CsrMatrix<T>> {
    let n = ctx.grid.len();
    if n > u32::MAX as usize {
        return Err(Error::InvalidSpec(format!(
            "{n} nodes exceed the index range"
        )));
    }
    const ROWS: usize = 4096;
    let blocks: Vec<CsrMatrix<T>> = (0..n.div_ceil(ROWS))
        .into_par_iter()
        .map(|b| {
            let lo = b * ROWS;
            let hi = (lo + ROWS).min(n);
            CsrMatrix::from_rows(hi - lo, (lo..hi).map(|o| row_entries(ctx, o)))
        })
        .collect();
    let nnz = blocks.iter().map(|b| b.nnz()).sum();
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    for blk in blocks {
        let base = col_idx.len();
        row_ptr.extend(blk.row_ptr[1..].iter().map(|p| p + base));
        col_idx.extend(blk.col_idx);
        values.extend(blk.values);
    }
    Ok(CsrMatrix {
        n,
        row_ptr,
        col_idx,
        values,
    })
}

/// `g̃` at every node: `g` at the unscaled coordinates on equation rows,
/// zero on the Neumann rows.
pub fn assemble_rhs<T: Scalar>(grid: &Grid<T>, g: &Observable<T>) -> Result<Vec<T>> {
    if let Observable::Custom(values) = g {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "tabulated observable has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
    }
    let n = grid.len();
    let mut rhs = vec![T::zero(); n];
    rhs.par_iter_mut().enumerate().for_each(|(o, r)| {
        if !grid.class_at(o).is_equation() {
            return;
        }
        *r = match g {
            Observable::Custom(values) => values[o],
            _ => {
                let (i, j, k) = grid.node_at(o);
                let (x, y, z) = grid.unscaled(i, j, k);
                g.value_at(x, y, z).expect("analytic observable")
            }
        };
    });
    Ok(rhs)
}

/// Matrix, its first-order counterpart and the right-hand side.
pub fn assemble<T: Scalar>(
    grid: &Grid<T>,
    params: &ModelParams<T>,
    g: &Observable<T>,
) -> Result<SparseSystem<T>> {
    Ok(SparseSystem {
        matrix: assemble_matrix(grid, params, grid.lambda())?,
        rhs: assemble_rhs(grid, g)?,
        low_order: Some(assemble_low_order_matrix(grid, params, grid.lambda())?),
    })
}

/// Index-reflection permutation `(i, j, k) → (I+1-i, J+1-j, K+1-k)`.
pub fn reflection_permutation<T: Scalar>(grid: &Grid<T>) -> Vec<usize> {
    (0..grid.len()).map(|o| grid.reflect(o)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridSpec};
    use crate::observables::{mollified_crossing_speed, plastic_band};
    use crate::scalar::ulps_apart;

    fn standard_grid(n: usize, lambda: f64) -> Grid<f64> {
        build_grid(GridSpec::cube(3.5, 3.5, 1.0, lambda, n)).unwrap()
    }

    fn row_scale(m: &CsrMatrix<f64>, r: usize) -> f64 {
        m.row(r).1.iter().map(|v| v.abs()).sum()
    }

    #[test]
    fn constants_are_annihilated() {
        let p = ModelParams::default();
        for (n, lambda) in [(3, 1.0), (5, 0.1), (7, 1e-3), (11, 1e-2)] {
            let g = standard_grid(n, lambda);
            let m = assemble_matrix(&g, &p, lambda).unwrap();
            let ones = vec![1.0; g.len()];
            let y = m.matvec(&ones);
            for (o, &v) in y.iter().enumerate() {
                let expect = if g.class_at(o).is_equation() {
                    1.0
                } else {
                    0.0
                };
                assert!(
                    ulps_apart(v, expect, row_scale(&m, o)) <= 8.0,
                    "row {o}: {v}"
                );
            }
        }
    }

    #[test]
    fn neumann_rows() {
        let g = standard_grid(5, 0.1);
        let m = assemble_matrix(&g, &ModelParams::default(), 0.1).unwrap();
        let dy = g.spacing[1];
        for i in 1..=5 {
            for k in 1..=5 {
                let r = g.offset(i, 1, k);
                let (cols, vals) = m.row(r);
                assert_eq!(cols, &[r as u32, g.offset(i, 2, k) as u32]);
                assert_eq!(vals, &[-1.0 / dy, 1.0 / dy]);
                let r = g.offset(i, 5, k);
                let (cols, vals) = m.row(r);
                assert_eq!(cols, &[g.offset(i, 4, k) as u32, r as u32]);
                assert_eq!(vals, &[-1.0 / dy, 1.0 / dy]);
            }
        }
    }

    #[test]
    fn interior_second_order_and_fallback() {
        let lambda = 0.1;
        let g = standard_grid(9, lambda);
        let m = assemble_matrix(&g, &ModelParams::default(), lambda).unwrap();
        let dx = g.spacing[0];
        // j = 7: positive speed
        let (j, k) = (7, 5);
        let c = g.y(j) / lambda;
        assert!(c > 0.0);
        let r = g.offset(4, j, k);
        assert_eq!(m.get(r, g.offset(6, j, k)), c / (2.0 * dx));
        assert_eq!(m.get(r, g.offset(5, j, k)), -2.0 * c / dx);
        assert_eq!(m.get(r, g.offset(2, j, k)), 0.0);
        // i = 2 reverts to first order: no i+2 entry, single-weight i+1 entry
        let r = g.offset(2, j, k);
        assert_eq!(m.get(r, g.offset(4, j, k)), 0.0);
        assert_eq!(m.get(r, g.offset(3, j, k)), -c / dx);
        // zero speed row: no x̃ or z̃ neighbours at all
        let r = g.offset(4, 5, k);
        assert_eq!(m.get(r, g.offset(5, 5, k)), 0.0);
        assert_eq!(m.get(r, g.offset(4, 5, k + 1)), 0.0);
    }

    #[test]
    fn row_pattern_within_envelope() {
        let g = standard_grid(9, 1e-2);
        let m = assemble_matrix(&g, &ModelParams::default(), 1e-2).unwrap();
        for r in 0..g.len() {
            let (cols, vals) = m.row(r);
            assert!(cols.len() <= 13);
            let (i, j, k) = g.node_at(r);
            for &c in cols {
                let (ci, cj, ck) = g.node_at(c as usize);
                let moved = [ci != i, cj != j, ck != k].iter().filter(|b| **b).count();
                assert!(moved <= 1);
                assert!(ci.abs_diff(i) <= 2 && cj.abs_diff(j) <= 2 && ck.abs_diff(k) <= 2);
            }
            let d = m.get(r, r);
            assert!(d != 0.0);
            if g.class_at(r).is_equation() {
                assert!(d >= 1.0);
            }
            assert!(vals.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn reflection_invariance() {
        let p = ModelParams::default();
        for (n, lambda) in [(5, 1.0), (7, 1e-3), (9, 0.1)] {
            let g = standard_grid(n, lambda);
            let m = assemble_matrix(&g, &p, lambda).unwrap();
            let perm = reflection_permutation(&g);
            let r = m.permuted_symmetric(&perm);
            assert_eq!(r.row_ptr, m.row_ptr);
            assert_eq!(r.col_idx, m.col_idx);
            // the one-sided Neumann rows swap orientation, so they flip sign
            for row in 0..m.n {
                let sign = if g.class_at(row).is_equation() {
                    1.0
                } else {
                    -1.0
                };
                for (a, b) in r.row(row).1.iter().zip(m.row(row).1) {
                    assert_eq!(*a, sign * *b);
                }
            }
        }
    }

    #[test]
    fn rhs_patterns() {
        let g = standard_grid(7, 1e-2);
        let rhs = assemble_rhs(&g, &Observable::Constant(1.0)).unwrap();
        for (o, v) in rhs.iter().enumerate() {
            let expect = if g.class_at(o).is_equation() {
                1.0
            } else {
                0.0
            };
            assert_eq!(*v, expect);
        }
        let rhs = assemble_rhs(&g, &plastic_band(0.3).unwrap()).unwrap();
        for i in 1..=7 {
            for k in 1..=7 {
                assert_eq!(rhs[g.offset(i, 1, k)], 0.0);
                assert_eq!(rhs[g.offset(i, 7, k)], 0.0);
            }
        }
        let rhs = assemble_rhs(&g, &mollified_crossing_speed(0.0, 0.8).unwrap()).unwrap();
        for o in 0..g.len() {
            assert_eq!(rhs[o], rhs[g.reflect(o)]);
        }
        assert!(assemble_rhs(&g, &Observable::Custom(vec![1.0; 3])).is_err());
    }

    #[test]
    fn mismatched_lambda_is_rejected() {
        let g = standard_grid(5, 0.1);
        assert!(matches!(
            assemble_matrix(&g, &ModelParams::default(), 0.2),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn low_order_matrix_is_an_m_matrix() {
        let p = ModelParams::default();
        for (n, lambda) in [(5, 0.1), (9, 1e-2), (11, 1e-3)] {
            let g = standard_grid(n, lambda);
            let m = assemble_low_order_matrix(&g, &p, lambda).unwrap();
            let y = m.matvec(&vec![1.0; g.len()]);
            // Neumann rows are plain differences and carry no sign structure
            for o in (0..g.len()).filter(|&o| g.class_at(o).is_equation()) {
                let (cols, vals) = m.row(o);
                let mut diag = 0.0;
                let mut off = 0.0;
                for (&c, &v) in cols.iter().zip(vals) {
                    if c as usize == o {
                        diag = v;
                    } else {
                        assert!(v <= 0.0, "positive off-diagonal in row {o}");
                        off += v.abs();
                    }
                }
                assert!(diag >= off, "row {o} not diagonally dominant");
                assert!(ulps_apart(y[o], 1.0, row_scale(&m, o)) <= 8.0);
            }
        }
    }

    #[test]
    fn single_precision_assembles() {
        let g = build_grid(GridSpec::cube(3.5f32, 3.5, 1.0, 0.1, 7)).unwrap();
        let m = assemble_matrix(&g, &ModelParams::default(), 0.1).unwrap();
        let y = m.matvec(&vec![1.0f32; g.len()]);
        for (o, &v) in y.iter().enumerate() {
            let expect = if g.class_at(o).is_equation() {
                1.0
            } else {
                0.0
            };
            let scale: f32 = m.row(o).1.iter().map(|v| v.abs()).sum();
            assert!(ulps_apart(v, expect, scale) <= 8.0);
        }
    }
}
