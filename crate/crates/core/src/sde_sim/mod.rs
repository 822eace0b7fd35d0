//! Monte Carlo integration of the oscillator's variational inequality.
//!
//! The elastic deformation is projected onto `[-b, b]` after every explicit
//! Euler-Maruyama step, which is the discrete form of
//! `(dZ - Y dt)(ξ - Z) ≥ 0 for all |ξ| ≤ b`. Trajectories are streamed to
//! [`Observer`]s so that long runs never store their samples.

mod estimators;
mod trajectory_csv;

pub use estimators::{
    crossing_frequency_mc, ergodic_average_mc, lyapunov_check_mc, serviceability_mc, BandTally,
    BatchMeans, BoundReport, CheckpointStat, CrossingTally, Estimate, ObservableAverage,
    DEFAULT_BATCHES,
};
pub use trajectory_csv::TrajectoryCsv;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{drift_beta, ModelParams};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Elastic,
    /// `z = b`.
    PlasticPlus,
    /// `z = -b`.
    PlasticMinus,
}

impl Phase {
    #[inline(always)]
    pub fn of<T: Scalar>(z: T, b: T) -> Self {
        if z >= b {
            Phase::PlasticPlus
        } else if z <= -b {
            Phase::PlasticMinus
        } else {
            Phase::Elastic
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Phase::Elastic => "elastic",
            Phase::PlasticPlus => "plastic+",
            Phase::PlasticMinus => "plastic-",
        }
    }
}

/// One sample of the state. The plastic deformation is `x - z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct OscState<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub phase: Phase,
}

impl<T: Scalar> OscState<T> {
    /// State with the phase derived from `z`; `z` must already lie in `[-b, b]`.
    pub fn new(x: T, y: T, z: T, b: T) -> Result<Self> {
        if !(z.abs() <= b) {
            return Err(Error::InvalidParams(format!(
                "initial z = {z} lies outside [-{b}, {b}]"
            )));
        }
        Ok(Self {
            x,
            y,
            z,
            phase: Phase::of(z, b),
        })
    }

    pub fn origin() -> Self {
        Self {
            x: T::zero(),
            y: T::zero(),
            z: T::zero(),
            phase: Phase::Elastic,
        }
    }

    pub fn plastic_deformation(&self) -> T {
        self.x - self.z
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    deny_unknown_fields,
    bound(deserialize = "T: Scalar + Deserialize<'de>")
)]
pub struct SimConfig<T> {
    pub dt: T,
    pub n_steps: u64,
    /// Steps discarded before observers see any state.
    pub burn_in: u64,
    pub seed: u64,
    pub n_paths: usize,
    pub init: OscState<T>,
}

impl<T: Scalar> SimConfig<T> {
    /// One path from the origin with a burn-in of 1% of the steps.
    pub fn new(dt: T, n_steps: u64, seed: u64) -> Self {
        Self {
            dt,
            n_steps,
            burn_in: n_steps / 100,
            seed,
            n_paths: 1,
            init: OscState::origin(),
        }
    }

    pub fn validate(&self, p: &ModelParams<T>) -> Result<()> {
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return Err(Error::Validation(format!(
                "sim.dt must be > 0, got {}",
                self.dt
            )));
        }
        if self.burn_in >= self.n_steps {
            return Err(Error::Validation(format!(
                "sim.burn_in ({}) must be < sim.n_steps ({})",
                self.burn_in, self.n_steps
            )));
        }
        if self.n_paths < 1 {
            return Err(Error::Validation("sim.n_paths must be >= 1".into()));
        }
        if !(self.init.z.abs() <= p.b) || !self.init.is_finite() {
            return Err(Error::Validation(format!(
                "sim.init must be finite with |z| <= b, got ({}, {}, {})",
                self.init.x, self.init.y, self.init.z
            )));
        }
        if self.init.phase != Phase::of(self.init.z, p.b) {
            return Err(Error::Validation(format!(
                "sim.init.phase {:?} is inconsistent with z = {}",
                self.init.phase, self.init.z
            )));
        }
        Ok(())
    }

    /// Number of states handed to observers per path.
    pub fn samples_per_path(&self) -> u64 {
        self.n_steps - self.burn_in + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    PlasticEntry,
    PlasticExit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseEvent<T> {
    pub kind: EventKind,
    pub time: T,
    pub side: Side,
}

/// Consumer of the states of one trajectory.
pub trait Observer<T> {
    fn observe(&mut self, t: T, s: &OscState<T>);

    /// Phase transitions, reported whether or not burn-in has ended.
    fn event(&mut self, _e: &PhaseEvent<T>) {}
}

impl<T, O: Observer<T> + ?Sized> Observer<T> for &mut O {
    fn observe(&mut self, t: T, s: &OscState<T>) {
        (**self).observe(t, s)
    }

    fn event(&mut self, e: &PhaseEvent<T>) {
        (**self).event(e)
    }
}

impl<T: Copy, O: Observer<T>> Observer<T> for Vec<O> {
    fn observe(&mut self, t: T, s: &OscState<T>) {
        for o in self.iter_mut() {
            o.observe(t, s);
        }
    }

    fn event(&mut self, e: &PhaseEvent<T>) {
        for o in self.iter_mut() {
            o.event(e);
        }
    }
}

impl<T: Copy, A: Observer<T>, B: Observer<T>> Observer<T> for (A, B) {
    fn observe(&mut self, t: T, s: &OscState<T>) {
        self.0.observe(t, s);
        self.1.observe(t, s);
    }

    fn event(&mut self, e: &PhaseEvent<T>) {
        self.0.event(e);
        self.1.event(e);
    }
}

impl<T: Copy, A: Observer<T>, B: Observer<T>, C: Observer<T>> Observer<T> for (A, B, C) {
    fn observe(&mut self, t: T, s: &OscState<T>) {
        self.0.observe(t, s);
        self.1.observe(t, s);
        self.2.observe(t, s);
    }

    fn event(&mut self, e: &PhaseEvent<T>) {
        self.0.event(e);
        self.1.event(e);
        self.2.event(e);
    }
}

/// Records every phase event.
#[derive(Debug, Clone, Default)]
pub struct EventLog<T> {
    pub events: Vec<PhaseEvent<T>>,
}

impl<T: Copy> Observer<T> for EventLog<T> {
    fn observe(&mut self, _t: T, _s: &OscState<T>) {}

    fn event(&mut self, e: &PhaseEvent<T>) {
        self.events.push(*e);
    }
}

/// Collects every observed state.
#[derive(Debug, Clone, Default)]
pub struct Recorder<T> {
    pub states: Vec<OscState<T>>,
}

impl<T: Copy> Observer<T> for Recorder<T> {
    fn observe(&mut self, _t: T, s: &OscState<T>) {
        self.states.push(*s);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryStats<T> {
    pub steps: u64,
    pub samples: u64,
    pub final_state: OscState<T>,
    pub plastic_entries: u64,
    pub plastic_exits: u64,
    /// Fraction of observed samples in a plastic phase.
    pub plastic_fraction: f64,
}

/// One explicit step: drift evaluated at the old state, `z` projected onto
/// `[-b, b]`.
#[inline(always)]
pub fn step_euler<T: Scalar>(s: &OscState<T>, dt: T, dw: T, p: &ModelParams<T>) -> OscState<T> {
    let beta = drift_beta(s.x, s.y, s.z, p);
    let z = (s.z + s.y * dt).max(-p.b).min(p.b);
    OscState {
        x: s.x + s.y * dt,
        y: s.y + beta * dt + p.sigma * dw,
        z,
        phase: Phase::of(z, p.b),
    }
}

/// Random stream of path `path`: ChaCha8 keyed by the seed, with the path
/// index as the stream id, so results do not depend on scheduling.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Brownian increments `√dt·N(0, 1)` for one path.
pub struct Increments {
    rng: ChaCha8Rng,
    sqrt_dt: f64,
}

impl Increments {
    pub fn new(seed: u64, path: u64, dt: f64) -> Self {
        Self {
            rng: path_rng(seed, path),
            sqrt_dt: dt.sqrt(),
        }
    }

    #[inline(always)]
    pub fn draw<T: Scalar>(&mut self) -> T {
        let n: f64 = StandardNormal.sample(&mut self.rng);
        T::lit(n * self.sqrt_dt)
    }
}

fn transition_events<T: Scalar>(
    from: Phase,
    to: Phase,
    time: T,
    out: &mut impl FnMut(PhaseEvent<T>),
) {
    let side_of = |p| match p {
        Phase::PlasticPlus => Some(Side::Plus),
        Phase::PlasticMinus => Some(Side::Minus),
        Phase::Elastic => None,
    };
    if let Some(side) = side_of(from) {
        out(PhaseEvent {
            kind: EventKind::PlasticExit,
            time,
            side,
        });
    }
    if let Some(side) = side_of(to) {
        out(PhaseEvent {
            kind: EventKind::PlasticEntry,
            time,
            side,
        });
    }
}

/// Integrates one path with increments drawn from `noise` (already scaled
/// by `√dt`). `n_steps` steps are taken; states from step `burn_in` onward
/// are passed to the observer.
pub fn simulate_with_noise<T, O, N>(
    cfg: &SimConfig<T>,
    p: &ModelParams<T>,
    mut noise: N,
    observer: &mut O,
) -> Result<TrajectoryStats<T>>
where
    T: Scalar,
    O: Observer<T> + ?Sized,
    N: FnMut() -> T,
{
    cfg.validate(p)?;
    let mut s = cfg.init;
    let mut entries = 0u64;
    let mut exits = 0u64;
    let mut plastic = 0u64;
    let mut samples = 0u64;
    if cfg.burn_in == 0 {
        observer.observe(T::zero(), &s);
        samples += 1;
        plastic += u64::from(s.phase != Phase::Elastic);
    }
    for n in 1..=cfg.n_steps {
        let next = step_euler(&s, cfg.dt, noise(), p);
        if !next.is_finite() {
            return Err(Error::NonFiniteState { step: n });
        }
        let t = T::from_u64(n).unwrap() * cfg.dt;
        if next.phase != s.phase {
            transition_events(s.phase, next.phase, t, &mut |e| {
                match e.kind {
                    EventKind::PlasticEntry => entries += 1,
                    EventKind::PlasticExit => exits += 1,
                }
                observer.event(&e);
            });
        }
        s = next;
        if n >= cfg.burn_in {
            observer.observe(t, &s);
            samples += 1;
            plastic += u64::from(s.phase != Phase::Elastic);
        }
    }
    Ok(TrajectoryStats {
        steps: cfg.n_steps,
        samples,
        final_state: s,
        plastic_entries: entries,
        plastic_exits: exits,
        plastic_fraction: plastic as f64 / samples as f64,
    })
}

/// Simulates path `path` of the configuration's seed.
pub fn simulate_path<T: Scalar, O: Observer<T> + ?Sized>(
    cfg: &SimConfig<T>,
    p: &ModelParams<T>,
    path: u64,
    observer: &mut O,
) -> Result<TrajectoryStats<T>> {
    let mut inc = Increments::new(cfg.seed, path, cfg.dt.as_f64());
    simulate_with_noise(cfg, p, || inc.draw(), observer)
}

/// Simulates path 0. Identical seeds give bit-identical trajectories.
pub fn simulate_trajectory<T: Scalar, O: Observer<T> + ?Sized>(
    cfg: &SimConfig<T>,
    p: &ModelParams<T>,
    observer: &mut O,
) -> Result<TrajectoryStats<T>> {
    simulate_path(cfg, p, 0, observer)
}

/// Runs all `n_paths` paths in parallel, one observer per path from
/// `make`, and returns them in path order.
pub fn simulate_paths<T, O, F>(
    cfg: &SimConfig<T>,
    p: &ModelParams<T>,
    make: F,
) -> Result<Vec<(O, TrajectoryStats<T>)>>
where
    T: Scalar,
    O: Observer<T> + Send,
    F: Fn(u64) -> O + Sync,
{
    use rayon::prelude::*;
    cfg.validate(p)?;
    (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut o = make(path);
            let stats = simulate_path(cfg, p, path, &mut o)?;
            Ok((o, stats))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn standard() -> ModelParams<f64> {
        ModelParams::default()
    }

    #[test]
    fn origin_is_fixed_without_noise() {
        let s = step_euler(&OscState::origin(), 0.37, 0.0, &standard());
        assert_eq!(s, OscState::origin());
    }

    #[test]
    fn clamped_step_by_hand() {
        let s = OscState {
            x: 0.0,
            y: 1.0,
            z: 0.9995,
            phase: Phase::Elastic,
        };
        let n = step_euler(&s, 1e-3, 0.0, &standard());
        assert_eq!(n.z, 1.0);
        assert_eq!(n.phase, Phase::PlasticPlus);
        assert_eq!(n.x, 0.001);
        assert!((n.y - 0.99850025).abs() < 1e-15);
    }

    #[test]
    fn deterministic_origin_path() {
        let mut cfg = SimConfig::new(1e-3, 2000, 1);
        cfg.burn_in = 0;
        let p = standard().with_sigma(0.0);
        let mut rec = Recorder::default();
        let st = simulate_trajectory(&cfg, &p, &mut rec).unwrap();
        assert_eq!(st.samples, 2001);
        assert!(rec.states.iter().all(|s| *s == OscState::origin()));
    }

    #[test]
    fn elastic_path_matches_damped_linear_ode() {
        // while |z| < b the projection is inactive and z moves with x
        let p = standard().with_sigma(0.0);
        let mut cfg = SimConfig::new(1e-3, 30_000, 0);
        cfg.burn_in = 0;
        cfg.init = OscState::new(0.5, 0.0, 0.5, 1.0).unwrap();
        let mut rec = Recorder::default();
        simulate_trajectory(&cfg, &p, &mut rec).unwrap();
        // reference: the same explicit scheme on the unconstrained linear system
        let (mut x, mut y, mut z) = (0.5f64, 0.0f64, 0.5f64);
        for (n, s) in rec.states.iter().enumerate().skip(1) {
            let beta = -y - 0.5 * z - 0.5 * x;
            let (nx, ny, nz) = (x + y * 1e-3, y + beta * 1e-3, z + y * 1e-3);
            x = nx;
            y = ny;
            z = nz;
            assert!(z.abs() < 1.0);
            assert_eq!((s.x, s.y, s.z), (x, y, z), "step {n}");
        }
        // energy over windows much longer than a period decays
        let window = 10_000;
        let energy: Vec<f64> = rec
            .states
            .chunks(window)
            .map(|c| c.iter().map(|s| s.x * s.x + s.y * s.y).fold(0.0, f64::max))
            .collect();
        assert!(energy.windows(2).all(|w| w[1] < w[0]), "{energy:?}");
    }

    #[test]
    fn same_seed_same_path() {
        let cfg = SimConfig::new(1e-3, 5000, 42);
        let (mut a, mut b) = (Recorder::default(), Recorder::default());
        simulate_trajectory(&cfg, &standard(), &mut a).unwrap();
        simulate_trajectory(&cfg, &standard(), &mut b).unwrap();
        assert_eq!(a.states, b.states);
        let mut c = Recorder::default();
        simulate_trajectory(&SimConfig { seed: 43, ..cfg }, &standard(), &mut c).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn paths_independent_of_worker_count() {
        let mut cfg = SimConfig::new(1e-3, 2000, 9);
        cfg.n_paths = 6;
        let runs = simulate_paths(&cfg, &standard(), |_| Recorder::default()).unwrap();
        for (path, (rec, _)) in runs.iter().enumerate() {
            let mut alone = Recorder::default();
            simulate_path(&cfg, &standard(), path as u64, &mut alone).unwrap();
            assert_eq!(alone.states, rec.states);
        }
        assert_ne!(runs[0].0.states, runs[1].0.states);
    }

    #[test]
    fn blow_up_is_reported() {
        let cfg = SimConfig {
            burn_in: 0,
            ..SimConfig::new(1e3, 200, 0)
        };
        let p = ModelParams {
            sigma: 1.0,
            ..standard()
        };
        let err = simulate_trajectory(&cfg, &p, &mut Recorder::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { .. }));
    }

    #[test]
    fn burn_in_must_leave_samples() {
        let mut cfg = SimConfig::new(1e-3, 10, 0);
        cfg.burn_in = 10;
        assert!(matches!(
            cfg.validate(&standard()),
            Err(Error::Validation(_))
        ));
        cfg.burn_in = 9;
        assert_eq!(cfg.samples_per_path(), 2);
    }

    #[test]
    fn events_alternate_and_match_phases() {
        let mut cfg = SimConfig::new(1e-3, 200_000, 5);
        cfg.burn_in = 0;
        let p = standard();
        let mut obs = (EventLog::default(), Recorder::default());
        let st = simulate_trajectory(&cfg, &p, &mut obs).unwrap();
        let (log, rec) = obs;
        assert!(st.plastic_entries > 10);
        for s in &rec.states {
            assert!(s.z.abs() <= p.b);
            assert_eq!(s.phase, Phase::of(s.z, p.b));
        }
        let mut open: Option<Side> = None;
        for e in &log.events {
            match e.kind {
                EventKind::PlasticEntry => {
                    assert!(open.is_none(), "two entries without an exit");
                    open = Some(e.side);
                }
                EventKind::PlasticExit => {
                    assert_eq!(open, Some(e.side));
                    open = None;
                }
            }
        }
        let entries = log
            .events
            .iter()
            .filter(|e| e.kind == EventKind::PlasticEntry)
            .count();
        assert_eq!(entries as u64, st.plastic_entries);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn negated_noise_negates_path(seed in any::<u64>()) {
            let mut cfg = SimConfig::new(1e-3, 3000, seed);
            cfg.burn_in = 0;
            let p = standard();
            let (mut a, mut b) = (Recorder::default(), Recorder::default());
            let mut inc = Increments::new(seed, 0, 1e-3);
            simulate_with_noise(&cfg, &p, || inc.draw(), &mut a).unwrap();
            let mut neg = Increments::new(seed, 0, 1e-3);
            simulate_with_noise(&cfg, &p, || -neg.draw::<f64>(), &mut b).unwrap();
            for (u, v) in a.states.iter().zip(&b.states) {
                prop_assert_eq!((u.x, u.y, u.z), (-v.x, -v.y, -v.z));
            }
            let xa: Vec<f64> = a.states.iter().map(|s| s.x).collect();
            let xb: Vec<f64> = b.states.iter().map(|s| s.x).collect();
            prop_assert_eq!(
                crossing_frequency_mc(&xa, 1e-3, 0.01).unwrap(),
                crossing_frequency_mc(&xb, 1e-3, -0.01).unwrap()
            );
        }

        #[test]
        fn states_respect_the_bound(seed in any::<u64>(), b in 0.05f64..2.0) {
            let p = ModelParams { b, ..standard() };
            let mut cfg = SimConfig::new(1e-3, 2000, seed);
            cfg.burn_in = 0;
            let mut rec = Recorder::default();
            simulate_trajectory(&cfg, &p, &mut rec).unwrap();
            for s in &rec.states {
                prop_assert!(s.z.abs() <= b);
                prop_assert_eq!(s.phase, Phase::of(s.z, b));
            }
        }
    }
}
