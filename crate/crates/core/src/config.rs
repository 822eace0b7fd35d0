//! Run configuration: one TOML document with dotted sections.
//!
//! Every section and key is optional; missing values take the defaults of
//! the standard example (k = 1, α = 0.5, b = 1, σ = 1, f = -y, x̄ = ȳ = 3.5,
//! λ = 1e-3). Unknown keys are rejected. [`RunConfig::resolve`] materialises
//! every derived default so the serialized form reproduces the run.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::convergence::Axis;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::model::{ForceSpec, ModelParams};
use crate::observables::{mollified_crossing_speed, plastic_band, Observable};
use crate::sde_sim::{OscState, SimConfig, DEFAULT_BATCHES};
use crate::solver::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    #[default]
    Solve,
    Simulate,
    CrossingSweep,
    ServiceabilitySweep,
    Convergence,
    CrossValidate,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Solve,
        Experiment::Simulate,
        Experiment::CrossingSweep,
        Experiment::ServiceabilitySweep,
        Experiment::Convergence,
        Experiment::CrossValidate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Solve => "solve",
            Experiment::Simulate => "simulate",
            Experiment::CrossingSweep => "crossing-sweep",
            Experiment::ServiceabilitySweep => "serviceability-sweep",
            Experiment::Convergence => "convergence",
            Experiment::CrossValidate => "cross-validate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForceSection {
    pub c0: f64,
    pub c1: f64,
    pub c_const: f64,
}

impl Default for ForceSection {
    fn default() -> Self {
        Self {
            c0: 1.0,
            c1: 0.0,
            c_const: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub k: f64,
    pub alpha: f64,
    pub b: f64,
    pub sigma: f64,
    pub force: ForceSection,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            k: 1.0,
            alpha: 0.5,
            b: 1.0,
            sigma: 1.0,
            force: ForceSection::default(),
        }
    }
}

/// The elasto-plastic bound `b` of the grid is taken from the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub x_bar: f64,
    pub y_bar: f64,
    pub lambda: f64,
    pub ni: usize,
    pub nj: usize,
    pub nk: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            x_bar: 3.5,
            y_bar: 3.5,
            lambda: 1e-3,
            ni: 129,
            nj: 129,
            nk: 129,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitSection {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    /// Simulated time per path; the step count is `round(t_end / dt)`.
    pub t_end: f64,
    /// Discarded initial time; 1% of `t_end` when absent.
    pub burn_in: Option<f64>,
    pub seed: u64,
    pub n_paths: usize,
    pub batches: usize,
    pub init: InitSection,
    /// Every `stride`-th state of path 0 goes to the trajectory file of the
    /// `simulate` experiment.
    pub trajectory_stride: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 1e6,
            burn_in: None,
            seed: 0,
            n_paths: 1,
            batches: DEFAULT_BATCHES,
            init: InitSection::default(),
            trajectory_stride: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservableKind {
    #[default]
    Crossing,
    Band,
    Constant,
}

/// The observable of `solve`, `simulate` and `convergence`. Sweeps vary
/// `a1` or `a2` and keep the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservableSection {
    pub kind: ObservableKind,
    pub a1: f64,
    /// Unscaled mollifier width; `x_bar / 64` when absent.
    pub eps0: Option<f64>,
    pub a2: f64,
    pub value: f64,
}

impl Default for ObservableSection {
    fn default() -> Self {
        Self {
            kind: ObservableKind::Crossing,
            a1: 0.0,
            eps0: None,
            a2: 0.375,
            value: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// `a1` values for the crossing sweep, `a2` values for the
    /// serviceability sweep.
    pub levels: Vec<f64>,
    /// Also estimate every level by simulation.
    pub mc: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            levels: Vec::new(),
            mc: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceSection {
    pub axes: Vec<Axis>,
    /// Nested refinements beyond the base grid; at least 2 for one order.
    pub refinements: usize,
    /// Restrict the sup-norm to coarse interior nodes.
    pub interior_only: bool,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        Self {
            axes: Axis::ALL.to_vec(),
            refinements: 2,
            interior_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossValidateSection {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
}

impl Default for CrossValidateSection {
    fn default() -> Self {
        Self {
            a1: vec![-1.0, 0.0, 1.0],
            a2: vec![0.5, 1.5, 2.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovSection {
    /// Check times; empty disables the check in `simulate`.
    pub checkpoints: Vec<f64>,
    pub n_paths: usize,
}

impl Default for LyapunovSection {
    fn default() -> Self {
        Self {
            checkpoints: Vec::new(),
            n_paths: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub output_dir: PathBuf,
    pub model: ModelSection,
    pub grid: GridSection,
    pub solver: SolverConfig,
    pub sim: SimSection,
    pub observable: ObservableSection,
    pub sweep: SweepSection,
    pub convergence: ConvergenceSection,
    pub cross_validate: CrossValidateSection,
    pub lyapunov: LyapunovSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::default(),
            output_dir: PathBuf::from("out"),
            model: ModelSection::default(),
            grid: GridSection::default(),
            solver: SolverConfig::default(),
            sim: SimSection::default(),
            observable: ObservableSection::default(),
            sweep: SweepSection::default(),
            convergence: ConvergenceSection::default(),
            cross_validate: CrossValidateSection::default(),
            lyapunov: LyapunovSection::default(),
        }
    }
}

/// Parses, resolves and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Fills the derived defaults.
    pub fn resolve(&mut self) {
        if self.observable.eps0.is_none() {
            self.observable.eps0 = Some(self.grid.x_bar / 64.0);
        }
        if self.sim.burn_in.is_none() {
            self.sim.burn_in = Some(self.sim.t_end / 100.0);
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn model_params(&self) -> Result<ModelParams<f64>> {
        let m = &self.model;
        ModelParams::new(
            m.k,
            m.alpha,
            m.b,
            m.sigma,
            ForceSpec {
                c0: m.force.c0,
                c1: m.force.c1,
                c_const: m.force.c_const,
            },
        )
        .map_err(|e| Error::Validation(format!("model: {e}")))
    }

    pub fn grid_spec(&self) -> Result<GridSpec<f64>> {
        let g = &self.grid;
        let spec = GridSpec {
            x_bar: g.x_bar,
            y_bar: g.y_bar,
            b: self.model.b,
            lambda: g.lambda,
            ni: g.ni,
            nj: g.nj,
            nk: g.nk,
        };
        spec.validate()
            .map_err(|e| Error::Validation(format!("grid: {e}")))?;
        Ok(spec)
    }

    pub fn eps0(&self) -> f64 {
        self.observable.eps0.unwrap_or(self.grid.x_bar / 64.0)
    }

    /// The configured observable.
    pub fn observable(&self) -> Result<Observable<f64>> {
        let o = &self.observable;
        let g = match o.kind {
            ObservableKind::Crossing => mollified_crossing_speed(o.a1, self.eps0()),
            ObservableKind::Band => plastic_band(o.a2),
            ObservableKind::Constant => Ok(Observable::Constant(o.value)),
        };
        g.map_err(|e| Error::Validation(format!("observable: {e}")))
    }

    pub fn sim_config(&self) -> Result<SimConfig<f64>> {
        let s = &self.sim;
        let p = self.model_params()?;
        let steps = |t: f64| (t / s.dt).round() as u64;
        let init = OscState::new(s.init.x, s.init.y, s.init.z, p.b)
            .map_err(|e| Error::Validation(format!("sim.init: {e}")))?;
        let cfg = SimConfig {
            dt: s.dt,
            n_steps: steps(s.t_end),
            burn_in: steps(s.burn_in.unwrap_or(s.t_end / 100.0)),
            seed: s.seed,
            n_paths: s.n_paths,
            init,
        };
        cfg.validate(&p)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_params()?;
        self.grid_spec()?;
        self.solver
            .validate()
            .map_err(|e| Error::Validation(format!("solver: {e}")))?;
        let s = &self.sim;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(Error::Validation(format!(
                "sim.dt must be > 0, got {}",
                s.dt
            )));
        }
        if !(s.t_end >= s.dt && s.t_end.is_finite()) {
            return Err(Error::Validation(format!(
                "sim.t_end must be at least one step, got {}",
                s.t_end
            )));
        }
        if let Some(b) = s.burn_in {
            if !(b >= 0.0 && b < s.t_end) {
                return Err(Error::Validation(format!(
                    "sim.burn_in must lie in [0, t_end), got {b}"
                )));
            }
        }
        if s.batches < 2 {
            return Err(Error::Validation("sim.batches must be >= 2".into()));
        }
        self.sim_config()?;
        self.observable()?;
        match self.experiment {
            Experiment::CrossingSweep | Experiment::ServiceabilitySweep => {
                if self.sweep.levels.is_empty() {
                    return Err(Error::Validation(format!(
                        "sweep.levels must be nonempty for {}",
                        self.experiment.name()
                    )));
                }
                if self.experiment == Experiment::ServiceabilitySweep {
                    if let Some(a2) = self.sweep.levels.iter().find(|&&a| !(a >= 0.0)) {
                        return Err(Error::Validation(format!(
                            "sweep.levels must be >= 0 for the serviceability sweep, got {a2}"
                        )));
                    }
                }
            }
            Experiment::Convergence => {
                if self.convergence.axes.is_empty() {
                    return Err(Error::Validation(
                        "convergence.axes must be nonempty".into(),
                    ));
                }
                if self.convergence.refinements < 2 {
                    return Err(Error::Validation(
                        "convergence.refinements must be >= 2 to form an order".into(),
                    ));
                }
            }
            Experiment::CrossValidate => {
                if self.cross_validate.a1.is_empty() && self.cross_validate.a2.is_empty() {
                    return Err(Error::Validation(
                        "cross_validate needs at least one a1 or a2 level".into(),
                    ));
                }
            }
            Experiment::Solve | Experiment::Simulate => {}
        }
        if !self.lyapunov.checkpoints.is_empty() && self.lyapunov.n_paths < 1 {
            return Err(Error::Validation("lyapunov.n_paths must be >= 1".into()));
        }
        Ok(())
    }
}
