//! Empirical order of convergence on nested grids.
//!
//! One axis is refined at a time by `n → 2n - 1`, which keeps every coarse
//! node as every second fine node with bit-identical coordinates, so
//! solutions are compared on common nodes without interpolation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::assembly::assemble;
use crate::error::{Error, Result};
use crate::grid::{build_grid, GridSpec, NodeClass};
use crate::model::ModelParams;
use crate::observables::Observable;
use crate::scalar::Scalar;
use crate::solver::{solve_resolvent, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn label(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }

    fn count<T>(self, spec: &GridSpec<T>) -> usize {
        match self {
            Axis::X => spec.ni,
            Axis::Y => spec.nj,
            Axis::Z => spec.nk,
        }
    }

    fn count_mut<T>(self, spec: &mut GridSpec<T>) -> &mut usize {
        match self {
            Axis::X => &mut spec.ni,
            Axis::Y => &mut spec.nj,
            Axis::Z => &mut spec.nk,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Same box and λ with `2n - 1` nodes along `axis`.
pub fn refine_nested<T: Scalar>(spec: &GridSpec<T>, axis: Axis) -> Result<GridSpec<T>> {
    spec.validate()?;
    let mut fine = *spec;
    let n = axis.count(spec);
    *axis.count_mut(&mut fine) = n
        .checked_mul(2)
        .map(|m| m - 1)
        .ok_or_else(|| Error::InvalidSpec(format!("cannot refine {n} nodes")))?;
    fine.validate()?;
    Ok(fine)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementLadder<T> {
    pub axis: Axis,
    /// Base grid first, each next one a nested refinement along `axis`.
    pub levels: Vec<GridSpec<T>>,
}

impl<T: Scalar> RefinementLadder<T> {
    /// `base` plus `refinements` nested refinements.
    pub fn new(base: GridSpec<T>, axis: Axis, refinements: usize) -> Result<Self> {
        let mut levels = vec![base];
        for _ in 0..refinements {
            let next = refine_nested(levels.last().unwrap(), axis)?;
            levels.push(next);
        }
        Ok(Self { axis, levels })
    }

    /// Unscaled spacing along the refined axis at `level`.
    pub fn h(&self, level: usize) -> T {
        let s = &self.levels[level];
        s.spacings()[self.axis.index()] / s.lambda
    }
}

/// Which refined axis separates `coarse` from `fine`.
fn refined_axis<T: Scalar>(coarse: &GridSpec<T>, fine: &GridSpec<T>) -> Result<Axis> {
    let same_box = coarse.x_bar == fine.x_bar
        && coarse.y_bar == fine.y_bar
        && coarse.b == fine.b
        && coarse.lambda == fine.lambda;
    let matches: Vec<Axis> = Axis::ALL
        .into_iter()
        .filter(|&a| {
            Axis::ALL.iter().all(|&o| {
                let (c, f) = (o.count(coarse), o.count(fine));
                if o == a {
                    f == 2 * c - 1
                } else {
                    f == c
                }
            })
        })
        .collect();
    match (same_box, matches.as_slice()) {
        (true, [a]) => Ok(*a),
        _ => Err(Error::ShapeMismatch(format!(
            "grids {}x{}x{} and {}x{}x{} are not one nested refinement apart",
            coarse.ni, coarse.nj, coarse.nk, fine.ni, fine.nj, fine.nk
        ))),
    }
}

/// `max |v_coarse - v_fine|` over the coarse nodes, each compared with the
/// fine node at the same coordinates. With `interior_only` the maximum is
/// restricted to coarse interior nodes.
pub fn sup_diff_on_common<T: Scalar>(
    v_coarse: &[T],
    v_fine: &[T],
    coarse: &GridSpec<T>,
    fine: &GridSpec<T>,
    interior_only: bool,
) -> Result<T> {
    let axis = refined_axis(coarse, fine)?;
    if v_coarse.len() != coarse.len() || v_fine.len() != fine.len() {
        return Err(Error::ShapeMismatch(format!(
            "fields of length {} and {} for grids of {} and {} nodes",
            v_coarse.len(),
            v_fine.len(),
            coarse.len(),
            fine.len()
        )));
    }
    let (ni, nj, nk) = (coarse.ni, coarse.nj, coarse.nk);
    let (fj, fk) = (fine.nj, fine.nk);
    let mut sup = T::zero();
    for i in 0..ni {
        for j in 0..nj {
            for k in 0..nk {
                if interior_only
                    && crate::grid::classify_node(i + 1, j + 1, k + 1, ni, nj, nk)?
                        != NodeClass::Interior
                {
                    continue;
                }
                let mut f = [i, j, k];
                f[axis.index()] *= 2;
                let c = v_coarse[(i * nj + j) * nk + k];
                let v = v_fine[(f[0] * fj + f[1]) * fk + f[2]];
                sup = sup.max((c - v).abs());
            }
        }
    }
    Ok(sup)
}

/// `log₂(d1 / d2)`.
pub fn empirical_order(d1: f64, d2: f64) -> Result<f64> {
    if !(d2 > 0.0) || !d1.is_finite() || !d2.is_finite() || d1 < 0.0 {
        return Err(Error::DegenerateDifference(format!(
            "cannot form log2({d1:e} / {d2:e})"
        )));
    }
    Ok((d1 / d2).log2())
}

/// One row of a convergence table: the difference between `level` and
/// `level + 1`, and the order from this difference and the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderRow {
    pub axis: Axis,
    pub level: usize,
    /// Unscaled spacing of the coarser grid of the pair.
    pub h: f64,
    pub diff: f64,
    /// `log₂(diff_{level-1} / diff_level)`, absent on the first row.
    pub order: Option<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Solves on every level of the ladder and tabulates the differences and
/// orders.
pub fn run_ladder<T: Scalar>(
    ladder: &RefinementLadder<T>,
    params: &ModelParams<T>,
    g: &Observable<T>,
    solver: &SolverConfig,
    interior_only: bool,
) -> Result<Vec<OrderRow>> {
    let mut prev: Option<(Vec<T>, GridSpec<T>)> = None;
    let mut rows: Vec<OrderRow> = Vec::new();
    for (level, spec) in ladder.levels.iter().enumerate() {
        let grid = build_grid(*spec)?;
        g.check_resolution(&grid);
        let sys = assemble(&grid, params, g)?;
        let rep = solve_resolvent(&sys, &grid, solver)?;
        log::info!(
            "{} axis level {level} ({}x{}x{}): {} iterations, residual {:e}",
            ladder.axis.label(),
            spec.ni,
            spec.nj,
            spec.nk,
            rep.iterations,
            rep.residual.as_f64()
        );
        if let Some((v_prev, s_prev)) = prev.take() {
            let diff = sup_diff_on_common(&v_prev, &rep.v, &s_prev, spec, interior_only)?.as_f64();
            let order = match rows.last() {
                Some(r) => Some(empirical_order(r.diff, diff)?),
                None => None,
            };
            rows.push(OrderRow {
                axis: ladder.axis,
                level: level - 1,
                h: ladder.h(level - 1).as_f64(),
                diff,
                order,
                residual: rep.residual.as_f64(),
                iterations: rep.iterations,
            });
        }
        prev = Some((rep.v, *spec));
    }
    Ok(rows)
}

/// Writes `axis,level,h,diff,order`.
pub fn write_order_csv<W: Write>(rows: &[OrderRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "axis,level,h,diff,order")?;
    for r in rows {
        let order = r.order.map(|p| format!("{p:.6}")).unwrap_or_default();
        writeln!(
            w,
            "{},{},{:.9e},{:.9e},{}",
            r.axis.label(),
            r.level,
            r.h,
            r.diff,
            order
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use proptest::prelude::*;

    fn spec(n: usize) -> GridSpec<f64> {
        GridSpec::cube(3.5, 3.5, 1.0, 1e-2, n)
    }

    #[test]
    fn refinement_doubles_intervals() {
        let s = spec(5);
        let f = refine_nested(&s, Axis::X).unwrap();
        assert_eq!((f.ni, f.nj, f.nk), (9, 5, 5));
        assert_eq!(f.spacings()[0], s.spacings()[0] / 2.0);
        let (gc, gf) = (build_grid(s).unwrap(), build_grid(f).unwrap());
        assert_eq!(gc.x(3), gf.x(5));
        for i in 1..=5 {
            assert_eq!(gc.x(i).to_bits(), gf.x(2 * i - 1).to_bits());
        }
        assert!(refine_nested(&GridSpec { ni: 4, ..s }, Axis::X).is_err());
    }

    #[test]
    fn ladder_nodes_nest_bit_exactly() {
        for axis in Axis::ALL {
            let ladder = RefinementLadder::new(spec(5), axis, 2).unwrap();
            assert_eq!(ladder.levels.len(), 3);
            for w in ladder.levels.windows(2) {
                let (c, f) = (build_grid(w[0]).unwrap(), build_grid(w[1]).unwrap());
                let (cs, fs) = match axis {
                    Axis::X => (c.xs(), f.xs()),
                    Axis::Y => (c.ys(), f.ys()),
                    Axis::Z => (c.zs(), f.zs()),
                };
                for (n, v) in cs.iter().enumerate() {
                    assert_eq!(v.to_bits(), fs[2 * n].to_bits());
                }
            }
            assert_eq!(ladder.h(1), ladder.h(0) / 2.0);
        }
    }

    #[test]
    fn common_node_differences() {
        let c = spec(5);
        let f = refine_nested(&c, Axis::Y).unwrap();
        let vc = vec![0.3; c.len()];
        let mut vf = vec![0.3; f.len()];
        assert_eq!(sup_diff_on_common(&vc, &vf, &c, &f, false).unwrap(), 0.0);
        // fine-only node: odd j index
        vf[(2 * 9 + 3) * 5 + 1] += 0.5;
        assert_eq!(sup_diff_on_common(&vc, &vf, &c, &f, false).unwrap(), 0.0);
        // common node (i, j, k) = (2, 3, 4) 0-based maps to fine j = 6
        vf[(2 * 9 + 6) * 5 + 4] += 0.01;
        let d = sup_diff_on_common(&vc, &vf, &c, &f, false).unwrap();
        assert!((d - 0.01).abs() < 1e-15);
        assert_eq!(sup_diff_on_common(&vc, &vf, &c, &f, true).unwrap(), 0.0);
        assert!(matches!(
            sup_diff_on_common(&vc, &vf[1..], &c, &f, false),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            sup_diff_on_common(&vc, &vc, &c, &c, false),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn order_examples() {
        assert_eq!(empirical_order(4e-3, 1e-3).unwrap(), 2.0);
        assert_eq!(empirical_order(2e-3, 1e-3).unwrap(), 1.0);
        assert!((empirical_order(0.0160, 0.0048).unwrap() - 1.7517).abs() < 0.02);
        assert!(matches!(
            empirical_order(1.0, 0.0),
            Err(Error::DegenerateDifference(_))
        ));
        assert!(matches!(
            empirical_order(f64::NAN, 1.0),
            Err(Error::DegenerateDifference(_))
        ));
    }

    #[test]
    fn csv_layout() {
        let rows = [
            OrderRow {
                axis: Axis::X,
                level: 0,
                h: 0.25,
                diff: 4e-3,
                order: None,
                residual: 1e-11,
                iterations: 3,
            },
            OrderRow {
                axis: Axis::X,
                level: 1,
                h: 0.125,
                diff: 1e-3,
                order: Some(2.0),
                residual: 1e-11,
                iterations: 3,
            },
        ];
        let mut out = Vec::new();
        write_order_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "axis,level,h,diff,order");
        assert_eq!(lines[1], "x,0,2.500000000e-1,4.000000000e-3,");
        assert_eq!(lines[2], "x,1,1.250000000e-1,1.000000000e-3,2.000000");
    }

    proptest! {
        #[test]
        fn order_is_scale_invariant(d1 in 1e-8f64..1.0, d2 in 1e-8f64..1.0, c in 1e-3f64..1e3) {
            let p = empirical_order(d1, d2).unwrap();
            prop_assert!((empirical_order(c * d1, c * d2).unwrap() - p).abs() < 1e-9);
        }

        #[test]
        fn sup_diff_triangular_and_deterministic(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s0 = spec(3);
            let s1 = refine_nested(&s0, Axis::Z).unwrap();
            let s2 = refine_nested(&s1, Axis::Z).unwrap();
            let mut field = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random::<f64>()).collect() };
            let (v0, v1, v2) = (field(s0.len()), field(s1.len()), field(s2.len()));
            // v0 against v2 directly: every coarse node is every fourth fine node
            let v2_on_1: Vec<f64> = {
                let g = build_grid(s1).unwrap();
                g.nodes().map(|(_, i, j, k)| v2[((i - 1) * s2.nj + (j - 1)) * s2.nk + 2 * (k - 1)]).collect()
            };
            let d01 = sup_diff_on_common(&v0, &v1, &s0, &s1, false).unwrap();
            let d12 = sup_diff_on_common(&v1, &v2, &s1, &s2, false).unwrap();
            let d02 = sup_diff_on_common(&v0, &v2_on_1, &s0, &s1, false).unwrap();
            prop_assert!(d02 <= d01 + d12 + 1e-15);
            let back = sup_diff_on_common(&v1, &v2, &s1, &s2, false).unwrap();
            prop_assert_eq!(back, d12);
            let zero = sup_diff_on_common(&v0, &{
                let g = build_grid(s1).unwrap();
                g.nodes().map(|(_, i, j, k)| if (k - 1) % 2 == 0 {
                    v0[((i - 1) * s0.nj + (j - 1)) * s0.nk + (k - 1) / 2]
                } else { 9.0 }).collect::<Vec<_>>()
            }, &s0, &s1, false).unwrap();
            prop_assert_eq!(zero, 0.0);
        }
    }
}
