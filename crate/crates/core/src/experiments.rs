//! Experiment drivers behind the command line: each reads a resolved
//! [`RunConfig`], writes its CSV/JSON outputs into a directory and returns a
//! JSON summary that goes into the run manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::assembly::{assemble_low_order_matrix, assemble_matrix, assemble_rhs, SparseSystem};
use crate::config::{Experiment, RunConfig};
use crate::convergence::{run_ladder, write_order_csv, OrderRow, RefinementLadder};
use crate::error::{Error, Result};
use crate::grid::{build_grid, Grid, GridSpec};
use crate::model::{lyapunov_constants, ModelParams};
use crate::observables::{mollified_crossing_speed, plastic_band, Observable};
use crate::sde_sim::{
    lyapunov_check_mc, simulate_paths, simulate_trajectory, BandTally, BoundReport, CrossingTally,
    Estimate, ObservableAverage, SimConfig, TrajectoryCsv,
};
use crate::solver::{
    check_boundedness, solve_resolvent, BoundednessReport, SolveReport, SolverConfig,
};

/// Slack of the boundedness diagnostic, `‖v‖∞ ≤ 1.05·max|g|`.
pub const BOUNDEDNESS_SLACK: f64 = 0.05;

/// Everything needed to reproduce a run, written as `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: Experiment,
    pub config: RunConfig,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

/// Runs `cfg.experiment` into `out` and writes the manifest next to its
/// outputs, along with `resolved_config.toml`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let clock = Instant::now();
    let mut files = Vec::new();
    let summary = match cfg.experiment {
        Experiment::Solve => run_solve(cfg, out, &mut files)?,
        Experiment::Simulate => run_simulate(cfg, out, &mut files)?,
        Experiment::CrossingSweep => run_crossing_sweep(cfg, out, &mut files)?,
        Experiment::ServiceabilitySweep => run_serviceability_sweep(cfg, out, &mut files)?,
        Experiment::Convergence => run_convergence(cfg, out, &mut files)?,
        Experiment::CrossValidate => run_cross_validate(cfg, out, &mut files)?,
    };
    let resolved = out.join("resolved_config.toml");
    fs::write(&resolved, cfg.to_toml()?)?;
    files.push(resolved);
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        experiment: cfg.experiment,
        config: cfg.clone(),
        started_unix,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
        files,
        summary,
    };
    let f = BufWriter::new(File::create(out.join("manifest.json"))?);
    serde_json::to_writer_pretty(f, &manifest)?;
    Ok(manifest)
}

fn create(out: &Path, name: &str, files: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    let path = out.join(name);
    let f = File::create(&path)?;
    files.push(path);
    Ok(BufWriter::new(f))
}

/// Statistic of one resolvent solve together with its diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct PdeStatistic {
    pub statistic: f64,
    pub spread: f64,
    pub residual: f64,
    pub iterations: usize,
    pub boundedness: BoundednessReport,
}

impl PdeStatistic {
    fn new(rep: &SolveReport<f64>, rhs: &[f64], grid: &Grid<f64>) -> Self {
        Self {
            statistic: rep.statistic,
            spread: rep.spread,
            residual: rep.residual,
            iterations: rep.iterations,
            boundedness: check_boundedness(&rep.v, rhs, grid, BOUNDEDNESS_SLACK),
        }
    }
}

/// Assembles and solves for one observable, returning the full field.
pub fn solve_observable(
    spec: GridSpec<f64>,
    params: &ModelParams<f64>,
    g: &Observable<f64>,
    solver: &SolverConfig,
) -> Result<(Grid<f64>, SolveReport<f64>, PdeStatistic)> {
    let grid = build_grid(spec)?;
    g.check_resolution(&grid);
    let sys = crate::assembly::assemble(&grid, params, g)?;
    let rep = solve_resolvent(&sys, &grid, solver)?;
    let stat = PdeStatistic::new(&rep, &sys.rhs, &grid);
    Ok((grid, rep, stat))
}

/// Solves for every observable on one grid. The matrix is assembled once;
/// the solves run in parallel and come back in input order.
pub fn solve_many(
    spec: GridSpec<f64>,
    params: &ModelParams<f64>,
    observables: &[Observable<f64>],
    solver: &SolverConfig,
) -> Result<Vec<PdeStatistic>> {
    let grid = build_grid(spec)?;
    let matrix = assemble_matrix(&grid, params, spec.lambda)?;
    let low_order = assemble_low_order_matrix(&grid, params, spec.lambda)?;
    observables
        .par_iter()
        .map(|g| {
            g.check_resolution(&grid);
            let sys = SparseSystem {
                matrix: matrix.clone(),
                rhs: assemble_rhs(&grid, g)?,
                low_order: Some(low_order.clone()),
            };
            let rep = solve_resolvent(&sys, &grid, solver)?;
            log::info!(
                "{}: statistic {:.6}, {} iterations",
                g.label(),
                rep.statistic,
                rep.iterations
            );
            Ok(PdeStatistic::new(&rep, &sys.rhs, &grid))
        })
        .collect()
}

/// Long-run crossing rates of every level, pooled over the paths.
pub fn mc_crossing(
    sim: &SimConfig<f64>,
    params: &ModelParams<f64>,
    levels: &[f64],
    batches: usize,
) -> Result<Vec<Estimate>> {
    let total = sim.samples_per_path();
    let runs = simulate_paths(sim, params, |_| {
        CrossingTally::new(levels, sim.dt, total, batches)
    })?;
    pool_per_level(runs.iter().map(|(t, _)| t.finish()), levels.len())
}

/// Long-run band probabilities of every radius, pooled over the paths. All
/// radii are read off the same samples, so the estimates are nondecreasing
/// in the radius.
pub fn mc_serviceability(
    sim: &SimConfig<f64>,
    params: &ModelParams<f64>,
    radii: &[f64],
    batches: usize,
) -> Result<Vec<Estimate>> {
    let total = sim.samples_per_path();
    let proto = BandTally::new(radii, total, batches)?;
    let runs = simulate_paths(sim, params, |_| proto.clone())?;
    pool_per_level(runs.iter().map(|(t, _)| t.finish()), radii.len())
}

fn pool_per_level(
    per_path: impl Iterator<Item = Result<Vec<Estimate>>>,
    levels: usize,
) -> Result<Vec<Estimate>> {
    let per_path: Vec<Vec<Estimate>> = per_path.collect::<Result<_>>()?;
    (0..levels)
        .map(|l| {
            let parts: Vec<Estimate> = per_path.iter().map(|p| p[l]).collect();
            Estimate::pooled(&parts)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub level: f64,
    pub pde: PdeStatistic,
    pub mc: Option<Estimate>,
}

/// PDE statistic (and optionally the MC estimate) of the crossing rate at
/// every level `a1`.
pub fn crossing_sweep(
    spec: GridSpec<f64>,
    params: &ModelParams<f64>,
    eps0: f64,
    levels: &[f64],
    solver: &SolverConfig,
    mc: Option<(&SimConfig<f64>, usize)>,
) -> Result<Vec<SweepRow>> {
    let gs: Vec<Observable<f64>> = levels
        .iter()
        .map(|&a1| mollified_crossing_speed(a1, eps0))
        .collect::<Result<_>>()?;
    let pde = solve_many(spec, params, &gs, solver)?;
    let mc = match mc {
        Some((sim, batches)) => Some(mc_crossing(sim, params, levels, batches)?),
        None => None,
    };
    Ok(zip_rows(levels, pde, mc))
}

/// PDE statistic (and optionally the MC estimate) of the serviceability
/// probability at every radius `a2`.
pub fn serviceability_sweep(
    spec: GridSpec<f64>,
    params: &ModelParams<f64>,
    radii: &[f64],
    solver: &SolverConfig,
    mc: Option<(&SimConfig<f64>, usize)>,
) -> Result<Vec<SweepRow>> {
    let gs: Vec<Observable<f64>> = radii
        .iter()
        .map(|&a2| plastic_band(a2))
        .collect::<Result<_>>()?;
    let pde = solve_many(spec, params, &gs, solver)?;
    let mc = match mc {
        Some((sim, batches)) => Some(mc_serviceability(sim, params, radii, batches)?),
        None => None,
    };
    Ok(zip_rows(radii, pde, mc))
}

fn zip_rows(levels: &[f64], pde: Vec<PdeStatistic>, mc: Option<Vec<Estimate>>) -> Vec<SweepRow> {
    levels
        .iter()
        .zip(pde)
        .enumerate()
        .map(|(n, (&level, pde))| SweepRow {
            level,
            pde,
            mc: mc.as_ref().map(|m| m[n]),
        })
        .collect()
}

/// Writes `{level},{stat}_pde,{stat}_mc,{stat}_mc_se,spread,residual`; the
/// MC columns are empty when no simulation ran.
pub fn write_sweep_csv<W: Write>(
    rows: &[SweepRow],
    level: &str,
    stat: &str,
    mut w: W,
) -> std::io::Result<()> {
    writeln!(
        w,
        "{level},{stat}_pde,{stat}_mc,{stat}_mc_se,spread,residual"
    )?;
    for r in rows {
        let (mc, se) = match r.mc {
            Some(e) => (format!("{:.9e}", e.mean), format!("{:.9e}", e.se)),
            None => (String::new(), String::new()),
        };
        writeln!(
            w,
            "{:.9e},{:.9e},{},{},{:.9e},{:.9e}",
            r.level, r.pde.statistic, mc, se, r.pde.spread, r.pde.residual
        )?;
    }
    w.flush()
}

/// Writes `i,j,k,x,y,z,v` with unscaled coordinates.
pub fn write_solution_csv<W: Write>(grid: &Grid<f64>, v: &[f64], mut w: W) -> std::io::Result<()> {
    writeln!(w, "i,j,k,x,y,z,v")?;
    for (o, i, j, k) in grid.nodes() {
        let (x, y, z) = grid.unscaled(i, j, k);
        writeln!(w, "{i},{j},{k},{x:.9e},{y:.9e},{z:.9e},{:.12e}", v[o])?;
    }
    w.flush()
}

fn run_solve(cfg: &RunConfig, out: &Path, files: &mut Vec<PathBuf>) -> Result<Value> {
    let g = cfg.observable()?;
    let (grid, rep, stat) =
        solve_observable(cfg.grid_spec()?, &cfg.model_params()?, &g, &cfg.solver)?;
    write_solution_csv(&grid, &rep.v, create(out, "solution.csv", files)?)?;
    let summary = json!({
        "observable": g.label(),
        "statistic": stat.statistic,
        "spread": stat.spread,
        "residual": stat.residual,
        "iterations": stat.iterations,
        "boundedness": stat.boundedness,
    });
    let f = create(out, "summary.json", files)?;
    serde_json::to_writer_pretty(f, &summary)?;
    Ok(summary)
}

fn run_simulate(cfg: &RunConfig, out: &Path, files: &mut Vec<PathBuf>) -> Result<Value> {
    let params = cfg.model_params()?;
    let sim = cfg.sim_config()?;
    let g = cfg.observable()?;

    let mut csv = TrajectoryCsv::new(
        create(out, "trajectory.csv", files)?,
        cfg.sim.trajectory_stride,
    )?;
    let first = SimConfig { n_paths: 1, ..sim };
    simulate_trajectory(&first, &params, &mut csv)?;
    csv.finish()?;

    let total = sim.samples_per_path();
    let runs = simulate_paths(&sim, &params, |_| {
        ObservableAverage::new(g.clone(), total, cfg.sim.batches).expect("analytic observable")
    })?;
    let parts: Vec<Estimate> = runs
        .iter()
        .map(|(a, _)| a.finish())
        .collect::<Result<_>>()?;
    let estimate = Estimate::pooled(&parts)?;
    let stats: Vec<_> = runs.iter().map(|(_, s)| *s).collect();

    let lyapunov: Option<BoundReport> = if cfg.lyapunov.checkpoints.is_empty() {
        None
    } else {
        let r = lyapunov_constants(&params)?;
        let lsim = SimConfig {
            n_paths: cfg.lyapunov.n_paths,
            ..sim
        };
        let report = lyapunov_check_mc(&lsim, &params, &r, &cfg.lyapunov.checkpoints)?;
        let f = create(out, "lyapunov.csv", files)?;
        write_lyapunov_csv(&report, f)?;
        Some(report)
    };

    let summary = json!({
        "observable": g.label(),
        "estimate": estimate,
        "paths": stats,
        "lyapunov": lyapunov,
    });
    let f = create(out, "summary.json", files)?;
    serde_json::to_writer_pretty(f, &summary)?;
    Ok(summary)
}

/// Writes `t,mean_v,se,bound,violated`.
pub fn write_lyapunov_csv<W: Write>(r: &BoundReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,mean_v,se,bound,violated")?;
    for c in &r.checkpoints {
        writeln!(
            w,
            "{:.9e},{:.9e},{:.9e},{:.9e},{}",
            c.time, c.mean, c.se, r.bound, c.violated
        )?;
    }
    w.flush()
}

fn sweep_mc(cfg: &RunConfig, enabled: bool) -> Result<Option<SimConfig<f64>>> {
    if enabled {
        Ok(Some(cfg.sim_config()?))
    } else {
        Ok(None)
    }
}

fn run_crossing_sweep(cfg: &RunConfig, out: &Path, files: &mut Vec<PathBuf>) -> Result<Value> {
    let sim = sweep_mc(cfg, cfg.sweep.mc)?;
    let rows = crossing_sweep(
        cfg.grid_spec()?,
        &cfg.model_params()?,
        cfg.eps0(),
        &cfg.sweep.levels,
        &cfg.solver,
        sim.as_ref().map(|s| (s, cfg.sim.batches)),
    )?;
    write_sweep_csv(&rows, "a1", "nu", create(out, "crossing_sweep.csv", files)?)?;
    Ok(json!({ "eps0": cfg.eps0(), "rows": rows }))
}

fn run_serviceability_sweep(
    cfg: &RunConfig,
    out: &Path,
    files: &mut Vec<PathBuf>,
) -> Result<Value> {
    let sim = sweep_mc(cfg, cfg.sweep.mc)?;
    let rows = serviceability_sweep(
        cfg.grid_spec()?,
        &cfg.model_params()?,
        &cfg.sweep.levels,
        &cfg.solver,
        sim.as_ref().map(|s| (s, cfg.sim.batches)),
    )?;
    write_sweep_csv(
        &rows,
        "a2",
        "P",
        create(out, "serviceability_sweep.csv", files)?,
    )?;
    Ok(json!({ "rows": rows }))
}

fn run_convergence(cfg: &RunConfig, out: &Path, files: &mut Vec<PathBuf>) -> Result<Value> {
    let params = cfg.model_params()?;
    let g = cfg.observable()?;
    let base = cfg.grid_spec()?;
    let mut rows: Vec<OrderRow> = Vec::new();
    for &axis in &cfg.convergence.axes {
        let ladder = RefinementLadder::new(base, axis, cfg.convergence.refinements)?;
        rows.extend(run_ladder(
            &ladder,
            &params,
            &g,
            &cfg.solver,
            cfg.convergence.interior_only,
        )?);
    }
    write_order_csv(&rows, create(out, "convergence.csv", files)?)?;
    Ok(json!({ "observable": g.label(), "rows": rows }))
}

/// Whether PDE and MC agree within `max(rel·mc, 3·se)` (crossing rates) or
/// `max(abs, 3·se)` (probabilities).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Agreement {
    pub level: f64,
    pub difference: f64,
    pub tolerance: f64,
    pub agree: bool,
}

pub fn crossing_agreement(row: &SweepRow) -> Option<Agreement> {
    let mc = row.mc?;
    let tolerance = (0.1 * mc.mean).max(3.0 * mc.se);
    let difference = (row.pde.statistic - mc.mean).abs();
    Some(Agreement {
        level: row.level,
        difference,
        tolerance,
        agree: difference <= tolerance,
    })
}

pub fn serviceability_agreement(row: &SweepRow) -> Option<Agreement> {
    let mc = row.mc?;
    let tolerance = 0.05f64.max(3.0 * mc.se);
    let difference = (row.pde.statistic - mc.mean).abs();
    Some(Agreement {
        level: row.level,
        difference,
        tolerance,
        agree: difference <= tolerance,
    })
}

fn run_cross_validate(cfg: &RunConfig, out: &Path, files: &mut Vec<PathBuf>) -> Result<Value> {
    let spec = cfg.grid_spec()?;
    let params = cfg.model_params()?;
    let sim = cfg.sim_config()?;
    let mc = Some((&sim, cfg.sim.batches));
    let cv = &cfg.cross_validate;
    let mut summary = serde_json::Map::new();
    if !cv.a1.is_empty() {
        let rows = crossing_sweep(spec, &params, cfg.eps0(), &cv.a1, &cfg.solver, mc)?;
        write_sweep_csv(
            &rows,
            "a1",
            "nu",
            create(out, "cross_validate_crossing.csv", files)?,
        )?;
        let agreement: Vec<_> = rows.iter().filter_map(crossing_agreement).collect();
        summary.insert(
            "crossing".into(),
            json!({ "rows": rows, "agreement": agreement }),
        );
    }
    if !cv.a2.is_empty() {
        let rows = serviceability_sweep(spec, &params, &cv.a2, &cfg.solver, mc)?;
        write_sweep_csv(
            &rows,
            "a2",
            "P",
            create(out, "cross_validate_serviceability.csv", files)?,
        )?;
        let agreement: Vec<_> = rows.iter().filter_map(serviceability_agreement).collect();
        summary.insert(
            "serviceability".into(),
            json!({ "rows": rows, "agreement": agreement }),
        );
    }
    if summary.is_empty() {
        return Err(Error::Validation("nothing to cross-validate".into()));
    }
    Ok(Value::Object(summary))
}
