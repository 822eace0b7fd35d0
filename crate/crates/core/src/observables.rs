//! Scalar fields `g(x, y, z)` whose invariant-measure averages are computed
//! by both the resolvent solve and the Monte Carlo estimators.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum Observable<T> {
    /// `|y|` times a Gaussian of width `eps0` centred at `x = a1`; its
    /// average is the mean rate of crossings of the level `a1`.
    CrossingSpeed {
        a1: T,
        eps0: T,
    },
    /// Indicator of the closed band `|x - z| ≤ a2`.
    PlasticBand {
        a2: T,
    },
    Constant(T),
    /// Values tabulated at the grid nodes, in storage order.
    Custom(Vec<T>),
}

pub fn mollified_crossing_speed<T: Scalar>(a1: T, eps0: T) -> Result<Observable<T>> {
    if !(eps0 > T::zero()) || !eps0.is_finite() {
        return Err(Error::InvalidWidth(eps0.as_f64()));
    }
    Ok(Observable::CrossingSpeed { a1, eps0 })
}

pub fn plastic_band<T: Scalar>(a2: T) -> Result<Observable<T>> {
    if a2 < T::zero() || a2.is_nan() {
        return Err(Error::NegativeBand(a2.as_f64()));
    }
    Ok(Observable::PlasticBand { a2 })
}

#[inline(always)]
fn gaussian<T: Scalar>(d: T, eps0: T) -> T {
    let two = T::lit(2.0);
    (-(d * d) / (two * eps0 * eps0)).exp() / ((two * T::PI()).sqrt() * eps0)
}

impl<T: Scalar> Observable<T> {
    /// Point value at unscaled coordinates; `None` for tabulated fields.
    #[inline]
    pub fn value_at(&self, x: T, y: T, z: T) -> Option<T> {
        match *self {
            Observable::CrossingSpeed { a1, eps0 } => Some(y.abs() * gaussian(x - a1, eps0)),
            Observable::PlasticBand { a2 } => Some(if (x - z).abs() <= a2 {
                T::one()
            } else {
                T::zero()
            }),
            Observable::Constant(c) => Some(c),
            Observable::Custom(_) => None,
        }
    }

    /// Supremum of `|g|` over the truncated box of `grid`, `None` for
    /// tabulated fields.
    pub fn sup_norm(&self, grid: &Grid<T>) -> Option<T> {
        match *self {
            Observable::CrossingSpeed { eps0, .. } => {
                Some(grid.spec.y_bar * gaussian(T::zero(), eps0))
            }
            Observable::PlasticBand { .. } => Some(T::one()),
            Observable::Constant(c) => Some(c.abs()),
            Observable::Custom(_) => None,
        }
    }

    /// Largest `|g|` over the grid nodes.
    pub fn node_sup(&self, grid: &Grid<T>) -> T {
        if let Observable::Custom(v) = self {
            return v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        }
        let mut m = T::zero();
        for (_, i, j, k) in grid.nodes() {
            let (x, y, z) = grid.unscaled(i, j, k);
            m = m.max(self.value_at(x, y, z).unwrap().abs());
        }
        m
    }

    /// Warns when a crossing mollifier is narrower than two grid cells or
    /// its centre lies outside the truncated box. Returns whether a warning
    /// fired.
    pub fn check_resolution(&self, grid: &Grid<T>) -> bool {
        let mut warned = false;
        match *self {
            Observable::CrossingSpeed { a1, eps0 } => {
                let cell = grid.spacing[0] / grid.lambda();
                if eps0 < T::lit(2.0) * cell {
                    log::warn!(
                        "mollifier width {eps0:e} is below two grid cells ({:e}); the Gaussian is under-resolved",
                        T::lit(2.0) * cell
                    );
                    warned = true;
                }
                if a1.abs() > grid.spec.x_bar {
                    log::warn!(
                        "level {a1} lies outside the truncated box |x| <= {}; the statistic will be near zero",
                        grid.spec.x_bar
                    );
                    warned = true;
                }
            }
            Observable::Custom(_) => {
                log::warn!("tabulated observable: sup-norm diagnostics are skipped");
                warned = true;
            }
            _ => {}
        }
        warned
    }

    pub fn label(&self) -> String {
        match self {
            Observable::CrossingSpeed { a1, eps0 } => format!("crossing(a1={a1}, eps0={eps0:e})"),
            Observable::PlasticBand { a2 } => format!("band(a2={a2})"),
            Observable::Constant(c) => format!("constant({c})"),
            Observable::Custom(v) => format!("custom({} nodes)", v.len()),
        }
    }
}
