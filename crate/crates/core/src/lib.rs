//! Invariant-measure statistics of a white-noise-driven bilinear
//! elasto-plastic oscillator, computed two ways: by solving the discretised
//! resolvent equation `λu - Au = g` on a truncated box, and by long-run
//! Monte Carlo simulation of the oscillator.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision for the common types.

// `!(x > 0)` deliberately rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod config;
pub mod convergence;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod model;
pub mod observables;
pub mod scalar;
pub mod sde_sim;
pub mod solver;
pub mod sparse;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ModelParams64 = model::ModelParams<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type GridSpec64 = grid::GridSpec<f64>;
pub type GridSpec32 = grid::GridSpec<f32>;
pub type Grid64 = grid::Grid<f64>;
pub type Grid32 = grid::Grid<f32>;
pub type Observable64 = observables::Observable<f64>;
pub type Observable32 = observables::Observable<f32>;
pub type SparseSystem64 = assembly::SparseSystem<f64>;
pub type SparseSystem32 = assembly::SparseSystem<f32>;
pub type SolveReport64 = solver::SolveReport<f64>;
pub type SolveReport32 = solver::SolveReport<f32>;
pub type SimConfig64 = sde_sim::SimConfig<f64>;
pub type SimConfig32 = sde_sim::SimConfig<f32>;
pub type OscState64 = sde_sim::OscState<f64>;
pub type OscState32 = sde_sim::OscState<f32>;
