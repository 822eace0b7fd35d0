//! Ergodic estimators over simulated samples.
//!
//! Every estimator exists in a slice form and a streaming form (an
//! [`Observer`]) that is used for long runs. Sums are accumulated in `f64`
//! whatever the state precision, and standard errors come from batch means.

use serde::Serialize;

use super::{simulate_paths, Observer, OscState, SimConfig};
use crate::error::{Error, Result};
use crate::model::{lyapunov_value, LyapunovReport, ModelParams};
use crate::observables::Observable;
use crate::scalar::Scalar;

pub const DEFAULT_BATCHES: usize = 50;

/// Mean with a standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: u64,
}

impl Estimate {
    /// Average of independent estimates from equally long paths; the
    /// standard errors add in quadrature.
    pub fn pooled(parts: &[Estimate]) -> Result<Estimate> {
        if parts.is_empty() {
            return Err(Error::DegenerateInput("no estimates to pool".into()));
        }
        let m = parts.len() as f64;
        Ok(Estimate {
            mean: parts.iter().map(|e| e.mean).sum::<f64>() / m,
            se: parts.iter().map(|e| e.se * e.se).sum::<f64>().sqrt() / m,
            n: parts.iter().map(|e| e.n).sum(),
        })
    }
}

/// Assigns sample `j` of `total` to one of `batches` contiguous batches.
#[derive(Debug, Clone, Copy)]
struct Batching {
    total: u64,
    batches: usize,
}

impl Batching {
    fn new(total: u64, batches: usize) -> Self {
        let batches = batches.max(1).min(total.max(1) as usize);
        Self { total, batches }
    }

    #[inline(always)]
    fn of(&self, j: u64) -> usize {
        let j = j.min(self.total.saturating_sub(1));
        ((j as u128 * self.batches as u128) / self.total.max(1) as u128) as usize
    }
}

/// Standard error of the mean of `means`, zero for fewer than two values.
fn batch_se(means: &[f64]) -> f64 {
    let nb = means.len();
    if nb < 2 {
        return 0.0;
    }
    let m = means.iter().sum::<f64>() / nb as f64;
    if means.iter().all(|&v| v == means[0]) {
        return 0.0;
    }
    let var = means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (nb - 1) as f64;
    (var / nb as f64).sqrt()
}

/// Streaming batch-means accumulator for `total` values.
#[derive(Debug, Clone)]
pub struct BatchMeans {
    batching: Batching,
    sums: Vec<f64>,
    counts: Vec<u64>,
    seen: u64,
    /// Value of every sample so far, if they are all equal.
    constant: Option<f64>,
}

impl BatchMeans {
    pub fn new(total: u64, batches: usize) -> Self {
        let batching = Batching::new(total, batches);
        Self {
            sums: vec![0.0; batching.batches],
            counts: vec![0; batching.batches],
            batching,
            seen: 0,
            constant: None,
        }
    }

    #[inline(always)]
    pub fn push(&mut self, v: f64) {
        if self.seen == 0 {
            self.constant = Some(v);
        } else if self.constant.is_some_and(|c| c != v) {
            self.constant = None;
        }
        let b = self.batching.of(self.seen);
        self.sums[b] += v;
        self.counts[b] += 1;
        self.seen += 1;
    }

    pub fn finish(&self) -> Result<Estimate> {
        if self.seen == 0 {
            return Err(Error::DegenerateInput("no samples".into()));
        }
        if let Some(c) = self.constant {
            // exact, free of summation rounding
            return Ok(Estimate {
                mean: c,
                se: 0.0,
                n: self.seen,
            });
        }
        let mean = self.sums.iter().sum::<f64>() / self.seen as f64;
        let means: Vec<f64> = self
            .sums
            .iter()
            .zip(&self.counts)
            .filter(|(_, &c)| c > 0)
            .map(|(s, &c)| s / c as f64)
            .collect();
        Ok(Estimate {
            mean,
            se: batch_se(&means),
            n: self.seen,
        })
    }
}

/// Sign-change counter for several levels at once. A sample equal to the
/// level takes the sign of the previous nonzero deviation, so touching the
/// level without crossing it counts nothing.
#[derive(Debug, Clone)]
pub struct CrossingTally {
    levels: Vec<f64>,
    dt: f64,
    batching: Batching,
    last_sign: Vec<i8>,
    counts: Vec<u64>,
    batch_counts: Vec<Vec<u64>>,
    batch_intervals: Vec<u64>,
    seen: u64,
}

impl CrossingTally {
    pub fn new(levels: &[f64], dt: f64, total: u64, batches: usize) -> Self {
        let batching = Batching::new(total, batches);
        Self {
            levels: levels.to_vec(),
            dt,
            last_sign: vec![0; levels.len()],
            counts: vec![0; levels.len()],
            batch_counts: vec![vec![0; batching.batches]; levels.len()],
            batch_intervals: vec![0; batching.batches],
            batching,
            seen: 0,
        }
    }

    #[inline(always)]
    pub fn push(&mut self, x: f64) {
        let b = self.batching.of(self.seen);
        if self.seen > 0 {
            self.batch_intervals[b] += 1;
        }
        for (l, &a) in self.levels.iter().enumerate() {
            let d = x - a;
            let s = if d > 0.0 {
                1
            } else if d < 0.0 {
                -1
            } else {
                0
            };
            if s != 0 {
                let prev = self.last_sign[l];
                if prev != 0 && prev != s {
                    self.counts[l] += 1;
                    self.batch_counts[l][b] += 1;
                }
                self.last_sign[l] = s;
            }
        }
        self.seen += 1;
    }

    /// Crossings per unit time at each level, `count / ((N - 1) dt)`.
    pub fn finish(&self) -> Result<Vec<Estimate>> {
        if self.seen < 2 {
            return Err(Error::DegenerateInput(format!(
                "crossing frequency needs at least 2 samples, got {}",
                self.seen
            )));
        }
        let span = (self.seen - 1) as f64 * self.dt;
        Ok((0..self.levels.len())
            .map(|l| {
                let rates: Vec<f64> = self.batch_counts[l]
                    .iter()
                    .zip(&self.batch_intervals)
                    .filter(|(_, &n)| n > 0)
                    .map(|(&c, &n)| c as f64 / (n as f64 * self.dt))
                    .collect();
                Estimate {
                    mean: self.counts[l] as f64 / span,
                    se: batch_se(&rates),
                    n: self.seen,
                }
            })
            .collect())
    }
}

impl<T: Scalar> Observer<T> for CrossingTally {
    #[inline(always)]
    fn observe(&mut self, _t: T, s: &OscState<T>) {
        self.push(s.x.as_f64());
    }
}

/// Fractions of samples with `|x - z| ≤ a2` for several radii, computed on
/// the same samples so they are exactly nondecreasing in `a2`.
#[derive(Debug, Clone)]
pub struct BandTally {
    radii: Vec<f64>,
    means: Vec<BatchMeans>,
}

impl BandTally {
    pub fn new(radii: &[f64], total: u64, batches: usize) -> Result<Self> {
        if let Some(&a) = radii.iter().find(|a| !(**a >= 0.0)) {
            return Err(Error::NegativeBand(a));
        }
        Ok(Self {
            radii: radii.to_vec(),
            means: vec![BatchMeans::new(total, batches); radii.len()],
        })
    }

    #[inline(always)]
    pub fn push(&mut self, plastic: f64) {
        let d = plastic.abs();
        for (a, m) in self.radii.iter().zip(self.means.iter_mut()) {
            m.push(if d <= *a { 1.0 } else { 0.0 });
        }
    }

    pub fn finish(&self) -> Result<Vec<Estimate>> {
        self.means.iter().map(BatchMeans::finish).collect()
    }
}

impl<T: Scalar> Observer<T> for BandTally {
    #[inline(always)]
    fn observe(&mut self, _t: T, s: &OscState<T>) {
        self.push(s.plastic_deformation().as_f64());
    }
}

/// Time average of an observable along a path.
#[derive(Debug, Clone)]
pub struct ObservableAverage<T> {
    g: Observable<T>,
    means: BatchMeans,
}

impl<T: Scalar> ObservableAverage<T> {
    pub fn new(g: Observable<T>, total: u64, batches: usize) -> Result<Self> {
        if matches!(g, Observable::Custom(_)) {
            return Err(Error::UnsupportedObservable(
                "tabulated observables have no point values off the grid".into(),
            ));
        }
        Ok(Self {
            g,
            means: BatchMeans::new(total, batches),
        })
    }

    pub fn finish(&self) -> Result<Estimate> {
        self.means.finish()
    }
}

impl<T: Scalar> Observer<T> for ObservableAverage<T> {
    #[inline(always)]
    fn observe(&mut self, _t: T, s: &OscState<T>) {
        let v = self.g.value_at(s.x, s.y, s.z).unwrap_or_else(T::nan);
        self.means.push(v.as_f64());
    }
}

/// Sign changes of `x_j - a1` per unit time over `(N - 1) dt`.
pub fn crossing_frequency_mc<T: Scalar>(xs: &[T], dt: T, a1: T) -> Result<T> {
    let mut tally = CrossingTally::new(&[a1.as_f64()], dt.as_f64(), xs.len() as u64, 1);
    for &x in xs {
        tally.push(x.as_f64());
    }
    Ok(T::lit(tally.finish()?[0].mean))
}

/// Fraction of samples in the closed band `|x - z| ≤ a2`.
pub fn serviceability_mc<T: Scalar>(samples: &[OscState<T>], a2: T) -> Result<T> {
    if !(a2 >= T::zero()) {
        return Err(Error::NegativeBand(a2.as_f64()));
    }
    if samples.is_empty() {
        return Err(Error::DegenerateInput("no samples".into()));
    }
    let inside = samples
        .iter()
        .filter(|s| s.plastic_deformation().abs() <= a2)
        .count();
    Ok(T::from_count(inside) / T::from_count(samples.len()))
}

/// `(1/N) Σ g(x_j, y_j, z_j)` with a batch-means standard error.
pub fn ergodic_average_mc<T: Scalar>(
    g: &Observable<T>,
    samples: &[OscState<T>],
    batches: usize,
) -> Result<Estimate> {
    if samples.is_empty() {
        return Err(Error::DegenerateInput("no samples".into()));
    }
    let mut acc = ObservableAverage::new(g.clone(), samples.len() as u64, batches)?;
    for s in samples {
        acc.observe(T::zero(), s);
    }
    acc.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckpointStat {
    pub time: f64,
    /// Cross-path mean of `V(X(t), Y(t))`.
    pub mean: f64,
    pub se: f64,
    /// `mean - 3·se` exceeds the bound.
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub v_init: f64,
    /// `V(init) + C / C1`.
    pub bound: f64,
    pub n_paths: usize,
    pub checkpoints: Vec<CheckpointStat>,
}

impl BoundReport {
    pub fn violated(&self) -> bool {
        self.checkpoints.iter().any(|c| c.violated)
    }
}

/// Records `V` at fixed step indices.
struct LyapunovProbe<'a, T> {
    report: &'a LyapunovReport<T>,
    steps: &'a [u64],
    values: Vec<f64>,
    step: u64,
}

impl<T: Scalar> Observer<T> for LyapunovProbe<'_, T> {
    #[inline(always)]
    fn observe(&mut self, _t: T, s: &OscState<T>) {
        while self.values.len() < self.steps.len() && self.steps[self.values.len()] == self.step {
            self.values
                .push(lyapunov_value(s.x, s.y, self.report).as_f64());
        }
        self.step += 1;
    }
}

/// Cross-path mean of `V` at each checkpoint time, compared with
/// `V(init) + C/C1`. Paths run in parallel; the reduction is in path order.
/// The run length is set by the last checkpoint, `cfg.n_steps` and
/// `cfg.burn_in` are ignored.
pub fn lyapunov_check_mc<T: Scalar>(
    cfg: &SimConfig<T>,
    p: &ModelParams<T>,
    r: &LyapunovReport<T>,
    checkpoints: &[T],
) -> Result<BoundReport> {
    if checkpoints.is_empty() {
        return Err(Error::DegenerateInput("no checkpoint times".into()));
    }
    let dt = cfg.dt.as_f64();
    let mut order: Vec<usize> = (0..checkpoints.len()).collect();
    order.sort_by(|&a, &b| checkpoints[a].partial_cmp(&checkpoints[b]).unwrap());
    let mut steps = Vec::with_capacity(checkpoints.len());
    for &c in &order {
        let t = checkpoints[c].as_f64();
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Validation(format!(
                "checkpoint time {t} must be >= 0"
            )));
        }
        steps.push((t / dt).round() as u64);
    }
    let run = SimConfig {
        n_steps: steps.last().copied().unwrap().max(1),
        burn_in: 0,
        ..*cfg
    };
    if cfg.n_paths < 100 {
        log::warn!("Lyapunov check with only {} paths", cfg.n_paths);
    }
    let runs = simulate_paths(&run, p, |_| LyapunovProbe {
        report: r,
        steps: &steps,
        values: Vec::with_capacity(steps.len()),
        step: 0,
    })?;

    let v_init = lyapunov_value(cfg.init.x, cfg.init.y, r).as_f64();
    let bound = v_init + r.bound.as_f64();
    let n = runs.len() as f64;
    let mut stats = Vec::with_capacity(steps.len());
    for (q, &c) in order.iter().enumerate() {
        let mean = runs.iter().map(|(o, _)| o.values[q]).sum::<f64>() / n;
        let var = if runs.len() > 1 {
            runs.iter()
                .map(|(o, _)| (o.values[q] - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0)
        } else {
            0.0
        };
        let se = (var / n).sqrt();
        stats.push((
            c,
            CheckpointStat {
                time: checkpoints[c].as_f64(),
                mean,
                se,
                violated: mean - 3.0 * se > bound,
            },
        ));
    }
    stats.sort_by_key(|(c, _)| *c);
    let checkpoints = stats.into_iter().map(|(_, s)| s).collect();
    Ok(BoundReport {
        v_init,
        bound,
        n_paths: runs.len(),
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::lyapunov_constants;
    use crate::observables::plastic_band;
    use crate::sde_sim::{simulate_trajectory, Recorder};
    use proptest::prelude::*;

    #[test]
    fn pooling() {
        let e = |mean, se| Estimate { mean, se, n: 10 };
        let p = Estimate::pooled(&[e(1.0, 0.3), e(3.0, 0.4)]).unwrap();
        assert_eq!(p.mean, 2.0);
        assert!((p.se - 0.25).abs() < 1e-15);
        assert_eq!(p.n, 20);
        assert_eq!(Estimate::pooled(&[e(0.5, 0.1)]).unwrap(), e(0.5, 0.1));
        assert!(Estimate::pooled(&[]).is_err());
    }

    fn st(x: f64, z: f64) -> OscState<f64> {
        OscState {
            x,
            y: 0.0,
            z,
            phase: super::super::Phase::Elastic,
        }
    }

    #[test]
    fn crossing_examples() {
        assert_eq!(crossing_frequency_mc(&[0.5; 100], 1e-3, 1.0).unwrap(), 0.0);
        assert_eq!(
            crossing_frequency_mc(&[-1.0, 1.0, -1.0], 1.0, 0.0).unwrap(),
            1.0
        );
        assert!(matches!(
            crossing_frequency_mc(&[1.0], 1.0, 0.0),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn touching_the_level_is_not_a_crossing() {
        let xs = [-1.0, 0.0, -1.0, 0.0, 1.0];
        assert_eq!(crossing_frequency_mc(&xs, 1.0, 0.0).unwrap(), 0.25);
    }

    #[test]
    fn sinusoid_has_two_interior_zeros_per_period() {
        // phase-shifted so that no sample sits on a zero
        let xs: Vec<f64> = (0..=1000)
            .map(|j| (2.0 * std::f64::consts::PI * j as f64 * 1e-3 + 0.25).sin())
            .collect();
        assert_eq!(crossing_frequency_mc(&xs, 1e-3, 0.0).unwrap(), 2.0);
    }

    #[test]
    fn serviceability_examples() {
        let same: Vec<_> = (0..10).map(|j| st(j as f64, j as f64)).collect();
        assert_eq!(serviceability_mc(&same, 0.0).unwrap(), 1.0);
        let three = [st(0.1, 0.0), st(0.5, 0.0), st(1.0, 0.0)];
        assert_eq!(serviceability_mc(&three, 0.5).unwrap(), 2.0 / 3.0);
        assert_eq!(serviceability_mc(&three, 1.0).unwrap(), 1.0);
        assert!(matches!(
            serviceability_mc(&three, -0.1),
            Err(Error::NegativeBand(_))
        ));
        assert!(matches!(
            serviceability_mc::<f64>(&[], 0.1),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn ergodic_average_examples() {
        let samples: Vec<_> = (0..1000).map(|j| st((j as f64).sin(), 0.0)).collect();
        let one =
            ergodic_average_mc(&Observable::Constant(1.0), &samples, DEFAULT_BATCHES).unwrap();
        assert_eq!((one.mean, one.se), (1.0, 0.0));
        let band =
            ergodic_average_mc(&plastic_band(0.5).unwrap(), &samples, DEFAULT_BATCHES).unwrap();
        assert_eq!(band.mean, serviceability_mc(&samples, 0.5).unwrap());
        let doubled = ergodic_average_mc(&Observable::Constant(2.0), &samples, 7).unwrap();
        assert_eq!(doubled.mean, 2.0 * one.mean);
        assert!(matches!(
            ergodic_average_mc(&Observable::Custom(vec![1.0]), &samples, 5),
            Err(Error::UnsupportedObservable(_))
        ));
    }

    #[test]
    fn batch_means_of_iid_noise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 100_000u64;
        let mut bm = BatchMeans::new(n, DEFAULT_BATCHES);
        for _ in 0..n {
            bm.push(rng.random::<f64>());
        }
        let e = bm.finish().unwrap();
        // uniform variance 1/12, standard error of the mean sqrt(1/12/n)
        let expect = (1.0 / 12.0 / n as f64).sqrt();
        assert!((e.se / expect - 1.0).abs() < 0.35, "{} vs {expect}", e.se);
        assert!((e.mean - 0.5).abs() < 5.0 * expect);
    }

    #[test]
    fn tally_matches_slice_estimators() {
        let mut cfg = SimConfig::new(1e-3, 20_000, 11);
        cfg.burn_in = 100;
        let p = ModelParams::default();
        let n = cfg.samples_per_path();
        let mut obs = (
            Recorder::default(),
            CrossingTally::new(&[-0.5, 0.0, 0.5], 1e-3, n, 10),
            BandTally::new(&[0.0, 0.1, 0.2], n, 10).unwrap(),
        );
        simulate_trajectory(&cfg, &p, &mut obs).unwrap();
        let (rec, cross, band) = obs;
        let xs: Vec<f64> = rec.states.iter().map(|s| s.x).collect();
        for (e, a) in cross.finish().unwrap().iter().zip([-0.5, 0.0, 0.5]) {
            assert_eq!(e.mean, crossing_frequency_mc(&xs, 1e-3, a).unwrap());
        }
        for (e, a) in band.finish().unwrap().iter().zip([0.0, 0.1, 0.2]) {
            assert_eq!(e.mean, serviceability_mc(&rec.states, a).unwrap());
        }
    }

    #[test]
    fn lyapunov_without_noise_stays_at_zero() {
        let p = ModelParams::default().with_sigma(0.0);
        let r = lyapunov_constants(&ModelParams::default()).unwrap();
        let mut cfg = SimConfig::new(1e-3, 10, 0);
        cfg.n_paths = 4;
        let rep = lyapunov_check_mc(&cfg, &p, &r, &[1.0, 0.5]).unwrap();
        assert_eq!(rep.bound, 10.5);
        assert!(rep.checkpoints.iter().all(|c| c.mean == 0.0 && !c.violated));
        assert_eq!(rep.checkpoints[0].time, 1.0);
    }

    #[test]
    fn lyapunov_bound_from_displaced_start() {
        let p = ModelParams::default();
        let r = lyapunov_constants(&p).unwrap();
        let mut cfg = SimConfig::new(1e-3, 10, 0);
        cfg.n_paths = 8;
        cfg.init = OscState::new(2.0, 2.0, 0.0, 1.0).unwrap();
        let rep = lyapunov_check_mc(&cfg, &p, &r, &[0.0, 0.1]).unwrap();
        assert_eq!(rep.bound, 22.5);
        assert_eq!(rep.checkpoints[0].mean, 12.0);
    }

    proptest! {
        #[test]
        fn serviceability_is_monotone(
            d in proptest::collection::vec(-3.0f64..3.0, 1..200),
            a in 0.0f64..3.0,
            b in 0.0f64..3.0,
        ) {
            let samples: Vec<_> = d.iter().map(|&v| st(v, 0.0)).collect();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let p_lo = serviceability_mc(&samples, lo).unwrap();
            let p_hi = serviceability_mc(&samples, hi).unwrap();
            prop_assert!(p_lo <= p_hi);
            prop_assert!((0.0..=1.0).contains(&p_lo));
            prop_assert_eq!(serviceability_mc(&samples, 10.0).unwrap(), 1.0);
        }

        #[test]
        fn constant_average_has_zero_error(c in -5.0f64..5.0, n in 1usize..500) {
            let samples: Vec<_> = (0..n).map(|j| st(j as f64, 0.0)).collect();
            let e = ergodic_average_mc(&Observable::Constant(c), &samples, DEFAULT_BATCHES).unwrap();
            prop_assert_eq!(e.se, 0.0);
            prop_assert_eq!(e.mean, c);
        }
    }
}
