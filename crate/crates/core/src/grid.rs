//! Scaled, truncated finite-difference grid.
//!
//! The unbounded state space is truncated to `[-x̄, x̄] × [-ȳ, ȳ] × [-b, b]`
//! and every coordinate is multiplied by the resolvent parameter λ, so the
//! grid lives on `[-λx̄, λx̄] × [-λȳ, λȳ] × [-λb, λb]`. Node indices are
//! 1-based everywhere in the public API, matching the linear index
//! `l(i, j, k) = k + (j-1)K + (i-1)JK`; storage offsets are hidden.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec<T> {
    /// Displacement half-width of the truncated box (unscaled).
    pub x_bar: T,
    /// Velocity half-width of the truncated box (unscaled).
    pub y_bar: T,
    /// Elasto-plastic bound.
    pub b: T,
    /// Resolvent parameter.
    pub lambda: T,
    /// Node count along x.
    pub ni: usize,
    /// Node count along y.
    pub nj: usize,
    /// Node count along z.
    pub nk: usize,
}

impl<T: Scalar> GridSpec<T> {
    pub fn cube(x_bar: T, y_bar: T, b: T, lambda: T, n: usize) -> Self {
        Self {
            x_bar,
            y_bar,
            b,
            lambda,
            ni: n,
            nj: n,
            nk: n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("I", self.ni), ("J", self.nj), ("K", self.nk)] {
            if n < 3 || n % 2 == 0 {
                return Err(Error::InvalidSpec(format!(
                    "{name} = {n} must be an odd integer greater than 1"
                )));
            }
        }
        if !(self.lambda > T::zero()) || !self.lambda.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        for (name, v) in [("x_bar", self.x_bar), ("y_bar", self.y_bar), ("b", self.b)] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::InvalidSpec(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        let [dx, dy, dz] = self.spacings();
        if !(dx > T::zero() && dy > T::zero() && dz > T::zero()) {
            return Err(Error::InvalidSpec("grid spacing underflows to zero".into()));
        }
        Ok(())
    }

    /// Scaled spacings `2λx̄/(I-1)`, `2λȳ/(J-1)`, `2λb/(K-1)`.
    pub fn spacings(&self) -> [T; 3] {
        let two = T::lit(2.0);
        [
            two * self.lambda * self.x_bar / T::from_count(self.ni - 1),
            two * self.lambda * self.y_bar / T::from_count(self.nj - 1),
            two * self.lambda * self.b / T::from_count(self.nk - 1),
        ]
    }

    pub fn len(&self) -> usize {
        self.ni * self.nj * self.nk
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Label subsets partitioning the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum NodeClass {
    /// 2 ≤ i ≤ I-1, 2 ≤ j ≤ J-1, 2 ≤ k ≤ K-1.
    Interior,
    /// z̃ = -λb face with i, j inside.
    FaceZMinus,
    /// z̃ = +λb face with i, j inside.
    FaceZPlus,
    /// x̃ = -λx̄ face with j, k inside.
    FaceXMinus,
    /// x̃ = +λx̄ face with j, k inside.
    FaceXPlus,
    /// x̃ = -λx̄ with k ∈ {1, K}.
    EdgeXMinus,
    /// x̃ = +λx̄ with k ∈ {1, K}.
    EdgeXPlus,
    /// Neumann rows, j ∈ {1, J}.
    NeumannY,
}

impl NodeClass {
    pub const ALL: [NodeClass; 8] = [
        NodeClass::Interior,
        NodeClass::FaceZMinus,
        NodeClass::FaceZPlus,
        NodeClass::FaceXMinus,
        NodeClass::FaceXPlus,
        NodeClass::EdgeXMinus,
        NodeClass::EdgeXPlus,
        NodeClass::NeumannY,
    ];

    pub fn is_equation(self) -> bool {
        self != NodeClass::NeumannY
    }
}

fn check_range(i: usize, j: usize, k: usize, ni: usize, nj: usize, nk: usize) -> Result<()> {
    if i == 0 || j == 0 || k == 0 || i > ni || j > nj || k > nk {
        return Err(Error::OutOfRange {
            i,
            j,
            k,
            ni,
            nj,
            nk,
        });
    }
    Ok(())
}

/// 1-based linear index `k + (j-1)K + (i-1)JK`.
pub fn index_of(i: usize, j: usize, k: usize, ni: usize, nj: usize, nk: usize) -> Result<usize> {
    check_range(i, j, k, ni, nj, nk)?;
    Ok(k + (j - 1) * nk + (i - 1) * nj * nk)
}

pub fn classify_node(
    i: usize,
    j: usize,
    k: usize,
    ni: usize,
    nj: usize,
    nk: usize,
) -> Result<NodeClass> {
    check_range(i, j, k, ni, nj, nk)?;
    Ok(classify_unchecked(i, j, k, ni, nj, nk))
}

#[inline]
fn classify_unchecked(i: usize, j: usize, k: usize, ni: usize, nj: usize, nk: usize) -> NodeClass {
    if j == 1 || j == nj {
        return NodeClass::NeumannY;
    }
    let k_face = k == 1 || k == nk;
    match (i == 1, i == ni) {
        (true, _) if k_face => NodeClass::EdgeXMinus,
        (_, true) if k_face => NodeClass::EdgeXPlus,
        (true, _) => NodeClass::FaceXMinus,
        (_, true) => NodeClass::FaceXPlus,
        _ if k == 1 => NodeClass::FaceZMinus,
        _ if k == nk => NodeClass::FaceZPlus,
        _ => NodeClass::Interior,
    }
}

/// A built grid: validated spec, spacings and scaled node coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub spec: GridSpec<T>,
    /// Scaled spacings `[δx̃, δỹ, δz̃]`.
    pub spacing: [T; 3],
    xs: Vec<T>,
    ys: Vec<T>,
    zs: Vec<T>,
}

/// Coordinates `(n - 1 - m)·δ` with `m = (count-1)/2`: the centre node is
/// exactly zero and reflected nodes negate exactly.
fn axis<T: Scalar>(count: usize, delta: T) -> Vec<T> {
    let mid = (count - 1) / 2;
    (0..count)
        .map(|n| {
            let offset = n as i64 - mid as i64;
            T::from_i64(offset).unwrap() * delta
        })
        .collect()
}

pub fn build_grid<T: Scalar>(spec: GridSpec<T>) -> Result<Grid<T>> {
    spec.validate()?;
    let spacing = spec.spacings();
    Ok(Grid {
        xs: axis(spec.ni, spacing[0]),
        ys: axis(spec.nj, spacing[1]),
        zs: axis(spec.nk, spacing[2]),
        spacing,
        spec,
    })
}

impl<T: Scalar> Grid<T> {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.spec.ni, self.spec.nj, self.spec.nk)
    }

    pub fn len(&self) -> usize {
        self.spec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lambda(&self) -> T {
        self.spec.lambda
    }

    /// Scaled coordinate x̃ of node `i` (1-based).
    #[inline(always)]
    pub fn x(&self, i: usize) -> T {
        self.xs[i - 1]
    }

    #[inline(always)]
    pub fn y(&self, j: usize) -> T {
        self.ys[j - 1]
    }

    #[inline(always)]
    pub fn z(&self, k: usize) -> T {
        self.zs[k - 1]
    }

    pub fn xs(&self) -> &[T] {
        &self.xs
    }

    pub fn ys(&self) -> &[T] {
        &self.ys
    }

    pub fn zs(&self) -> &[T] {
        &self.zs
    }

    /// Unscaled coordinates `(x̃/λ, ỹ/λ, z̃/λ)` of a node.
    #[inline]
    pub fn unscaled(&self, i: usize, j: usize, k: usize) -> (T, T, T) {
        let l = self.spec.lambda;
        (self.x(i) / l, self.y(j) / l, self.z(k) / l)
    }

    pub fn index_of(&self, i: usize, j: usize, k: usize) -> Result<usize> {
        let (ni, nj, nk) = self.dims();
        index_of(i, j, k, ni, nj, nk)
    }

    /// 0-based storage offset of a node; callers guarantee the range.
    #[inline(always)]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (k - 1) + (j - 1) * self.spec.nk + (i - 1) * self.spec.nj * self.spec.nk
    }

    /// Inverse of [`Grid::index_of`].
    pub fn node_of(&self, index: usize) -> Result<(usize, usize, usize)> {
        let (ni, nj, nk) = self.dims();
        if index == 0 || index > self.len() {
            return Err(Error::OutOfRange {
                i: index,
                j: 0,
                k: 0,
                ni,
                nj,
                nk,
            });
        }
        Ok(self.node_at(index - 1))
    }

    /// Node of a 0-based storage offset.
    #[inline]
    pub fn node_at(&self, offset: usize) -> (usize, usize, usize) {
        let nk = self.spec.nk;
        let nj = self.spec.nj;
        let k = offset % nk + 1;
        let j = (offset / nk) % nj + 1;
        let i = offset / (nj * nk) + 1;
        (i, j, k)
    }

    pub fn classify(&self, i: usize, j: usize, k: usize) -> Result<NodeClass> {
        let (ni, nj, nk) = self.dims();
        classify_node(i, j, k, ni, nj, nk)
    }

    #[inline]
    pub fn class_at(&self, offset: usize) -> NodeClass {
        let (i, j, k) = self.node_at(offset);
        let (ni, nj, nk) = self.dims();
        classify_unchecked(i, j, k, ni, nj, nk)
    }

    /// Offset of the reflected node `(I+1-i, J+1-j, K+1-k)`.
    #[inline]
    pub fn reflect(&self, offset: usize) -> usize {
        let (i, j, k) = self.node_at(offset);
        let (ni, nj, nk) = self.dims();
        self.offset(ni + 1 - i, nj + 1 - j, nk + 1 - k)
    }

    /// Offset of the centre node, which sits at the origin.
    pub fn center(&self) -> usize {
        let (ni, nj, nk) = self.dims();
        self.offset(ni.div_ceil(2), nj.div_ceil(2), nk.div_ceil(2))
    }

    /// Iterates `(offset, i, j, k)` in storage order.
    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        (0..self.len()).map(move |o| {
            let (i, j, k) = self.node_at(o);
            (o, i, j, k)
        })
    }
}
