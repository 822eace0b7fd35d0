//! Solution of `M_λ v = g̃` and extraction of the invariant-measure statistic.
//!
//! `v = λu_λ` at the nodes, and `λu_λ(x) → ∫ g dμ` as `λ → 0` for every
//! starting point, so the statistic is read at the origin node and the
//! spread of `v` over the central half of the box measures how far the
//! solution still is from constant.

mod gmres;
mod ilu;

pub use ilu::Ilu;

use serde::{Deserialize, Serialize};

use crate::assembly::SparseSystem;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Target for `‖M v - g̃‖₂ / ‖g̃‖₂`.
    pub rel_tol: f64,
    /// Total GMRES iteration budget across restarts.
    pub max_iters: usize,
    /// Krylov dimension per restart cycle.
    pub restart: usize,
    /// ILUT drop tolerance, relative to each row's 2-norm.
    pub drop_tol: f64,
    /// Maximum entries kept in each of the L and U parts of a factor row.
    pub fill: usize,
    /// Matrix the incomplete factorization is built from.
    pub preconditioner: PreconditionerSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerSource {
    /// The operator's own factors first; if GMRES stalls with them, the
    /// first-order factors, continuing from the current iterate.
    #[default]
    Auto,
    /// The first-order upwind matrix. It is an M-matrix, so its incomplete
    /// factors stay stable on strongly anisotropic grids where those of the
    /// second-order operator blow up.
    LowOrder,
    /// The operator itself.
    Operator,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iters: 4000,
            restart: 60,
            drop_tol: 1e-3,
            fill: 10,
            preconditioner: PreconditionerSource::default(),
        }
    }
}

impl SolverConfig {
    /// Complete factorization: GMRES converges in a step or two. Small grids only.
    pub fn direct() -> Self {
        Self {
            drop_tol: 0.0,
            fill: usize::MAX,
            preconditioner: PreconditionerSource::Operator,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::Validation(format!(
                "solver.rel_tol must lie in (0, 1), got {}",
                self.rel_tol
            )));
        }
        if self.restart < 1 {
            return Err(Error::Validation("solver.restart must be >= 1".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::Validation("solver.max_iters must be >= 1".into()));
        }
        if !(self.drop_tol >= 0.0) {
            return Err(Error::Validation("solver.drop_tol must be >= 0".into()));
        }
        if self.fill < 1 {
            return Err(Error::Validation("solver.fill must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport<T> {
    /// Scaled field `v = λu` at every node, storage order.
    #[serde(skip)]
    pub v: Vec<T>,
    /// Achieved `‖M v - g̃‖₂ / ‖g̃‖₂`.
    pub residual: T,
    pub iterations: usize,
    /// `v` at the origin node.
    pub statistic: T,
    /// `max - min` of `v` over the central half-box.
    pub spread: T,
}

/// Residual ratio per restart cycle above which the automatic mode gives up
/// on the operator's own factors.
const STALL_RATIO: f64 = 0.5;

/// Factorizes with the configured ILUT; on a zero pivot retries once with a
/// small diagonal shift.
fn precondition<T: Scalar>(source: &CsrMatrix<T>, cfg: &SolverConfig) -> Result<Ilu<T>> {
    let tol = T::lit(cfg.drop_tol);
    let ilu = match Ilu::factor(source, tol, cfg.fill, T::zero()) {
        Ok(f) => Ok(f),
        Err(Error::PreconditionerBreakdown { row }) => {
            log::warn!("zero pivot at row {row}; retrying with a diagonal shift");
            Ilu::factor(source, tol, cfg.fill, T::lit(1e-8))
        }
        Err(e) => Err(e),
    }?;
    log::debug!(
        "ILUT: {} nonzeros for {} matrix nonzeros",
        ilu.nnz(),
        source.nnz()
    );
    Ok(ilu)
}

fn low_order_or_operator<T: Scalar>(sys: &SparseSystem<T>) -> &CsrMatrix<T> {
    sys.low_order.as_ref().unwrap_or_else(|| {
        log::debug!("no first-order matrix assembled; factorizing the operator");
        &sys.matrix
    })
}

/// Solves the system to the requested residual without reading a statistic.
pub fn solve_system<T: Scalar>(
    sys: &SparseSystem<T>,
    cfg: &SolverConfig,
) -> Result<(Vec<T>, T, usize)> {
    cfg.validate()?;
    if sys.rhs.len() != sys.n() {
        return Err(Error::ShapeMismatch(format!(
            "rhs has {} entries, matrix has {} rows",
            sys.rhs.len(),
            sys.n()
        )));
    }
    let params = |max_iters, stall_ratio| gmres::GmresParams {
        rel_tol: T::lit(cfg.rel_tol),
        restart: cfg.restart,
        max_iters,
        stall_ratio,
    };
    let out = match cfg.preconditioner {
        PreconditionerSource::Operator | PreconditionerSource::LowOrder => {
            let source = match cfg.preconditioner {
                PreconditionerSource::Operator => &sys.matrix,
                _ => low_order_or_operator(sys),
            };
            let ilu = precondition(source, cfg)?;
            gmres::gmres(
                &sys.matrix,
                &sys.rhs,
                &ilu,
                None,
                &params(cfg.max_iters, None),
            )
        }
        PreconditionerSource::Auto => {
            let first = precondition(&sys.matrix, cfg).map(|ilu| {
                gmres::gmres(
                    &sys.matrix,
                    &sys.rhs,
                    &ilu,
                    None,
                    &params(cfg.max_iters, Some(T::lit(STALL_RATIO))),
                )
            });
            match first {
                Ok(out)
                    if out.converged
                        || sys.low_order.is_none()
                        || out.iterations >= cfg.max_iters =>
                {
                    out
                }
                first => {
                    let (x0, used) = match first {
                        // keep the iterate only if it is an improvement on zero
                        Ok(out) if out.relative_residual < T::one() => {
                            (Some(out.x), out.iterations)
                        }
                        Ok(out) => (None, out.iterations),
                        Err(_) => (None, 0),
                    };
                    log::info!(
                        "GMRES stalled with the operator's factors after {used} iterations; \
                         switching to first-order factors"
                    );
                    let ilu = precondition(low_order_or_operator(sys), cfg)?;
                    let budget = cfg.max_iters - used;
                    let mut out =
                        gmres::gmres(&sys.matrix, &sys.rhs, &ilu, x0, &params(budget, None));
                    out.iterations += used;
                    out
                }
            }
        }
    };
    if !out.converged {
        return Err(Error::NoConvergence {
            iterations: out.iterations,
            residual: out.relative_residual.as_f64(),
        });
    }
    Ok((out.x, out.relative_residual, out.iterations))
}

/// Solves `M_λ v = g̃` and reads the statistic off the solution.
pub fn solve_resolvent<T: Scalar>(
    sys: &SparseSystem<T>,
    grid: &Grid<T>,
    cfg: &SolverConfig,
) -> Result<SolveReport<T>> {
    if grid.len() != sys.n() {
        return Err(Error::ShapeMismatch(format!(
            "grid has {} nodes, system has {} rows",
            grid.len(),
            sys.n()
        )));
    }
    let (v, residual, iterations) = solve_system(sys, cfg)?;
    let (statistic, spread) = evaluate_statistic(&v, grid)?;
    Ok(SolveReport {
        v,
        residual,
        iterations,
        statistic,
        spread,
    })
}

/// Whether node `n` (1-based) of an axis with `count` nodes lies in the
/// central half, `|coordinate| ≤ half-width / 2`.
#[inline]
fn in_central_half(n: usize, count: usize) -> bool {
    let mid = count.div_ceil(2);
    n.abs_diff(mid) <= (count - 1) / 4
}

/// Value at the origin node and `max - min` over nodes with
/// `|x̃| ≤ λx̄/2`, `|ỹ| ≤ λȳ/2` (all z̃).
pub fn evaluate_statistic<T: Scalar>(v: &[T], grid: &Grid<T>) -> Result<(T, T)> {
    if v.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "field has {} values, grid has {} nodes",
            v.len(),
            grid.len()
        )));
    }
    let (ni, nj, _) = grid.dims();
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for (o, i, j, _) in grid.nodes() {
        if in_central_half(i, ni) && in_central_half(j, nj) {
            lo = lo.min(v[o]);
            hi = hi.max(v[o]);
        }
    }
    Ok((v[grid.center()], hi - lo))
}

/// Largest `|v|` against the largest `|g̃|` over equation nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundednessReport {
    pub max_v: f64,
    pub max_g: f64,
    pub ratio: f64,
    /// Nodes `(i, j, k, v)` where `|v|` exceeds the bound, at most 20.
    pub violations: Vec<(usize, usize, usize, f64)>,
    pub violation_count: usize,
}

/// Checks `‖v‖∞ ≤ (1 + slack)·max |g̃|` and logs the offending nodes.
pub fn check_boundedness<T: Scalar>(
    v: &[T],
    rhs: &[T],
    grid: &Grid<T>,
    slack: f64,
) -> BoundednessReport {
    let max_g = grid
        .nodes()
        .filter(|(o, ..)| grid.class_at(*o).is_equation())
        .fold(0.0f64, |m, (o, ..)| m.max(rhs[o].abs().as_f64()));
    let max_v = v.iter().fold(0.0f64, |m, x| m.max(x.abs().as_f64()));
    let bound = (1.0 + slack) * max_g;
    let mut violations = Vec::new();
    let mut count = 0;
    for (o, i, j, k) in grid.nodes() {
        let a = v[o].abs().as_f64();
        if a > bound {
            count += 1;
            if violations.len() < 20 {
                violations.push((i, j, k, v[o].as_f64()));
            }
        }
    }
    if count > 0 {
        log::warn!(
            "boundedness: {count} nodes exceed {bound:e} (max |v| = {max_v:e}); first: {:?}",
            violations.first()
        );
    }
    BoundednessReport {
        max_v,
        max_g,
        ratio: if max_g > 0.0 { max_v / max_g } else { 0.0 },
        violations,
        violation_count: count,
    }
}
