//! Oscillator parameters, the drift of the velocity equation and the
//! quadratic Lyapunov function that bounds the second moments.
//!
//! The restoring force is `k(1-α)z + kαx` and the remaining deterministic
//! forces come from an affine [`ForceSpec`], so the drift reads
//!
//! ```text
//! β(x, y, z) = f(x, y) - k(1-α) z - kα x,    f(x, y) = -c0·y + c1·x + c_const
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Affine non-elasto-plastic force `f(x, y) = -c0·y + c1·x + c_const`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    deny_unknown_fields,
    bound(deserialize = "T: Scalar + Deserialize<'de>")
)]
pub struct ForceSpec<T> {
    /// Viscous damping coefficient (the force is `-c0·y`).
    pub c0: T,
    /// Linear displacement coefficient.
    #[serde(default = "zero")]
    pub c1: T,
    /// Constant force.
    #[serde(default = "zero")]
    pub c_const: T,
}

fn zero<T: Scalar>() -> T {
    T::zero()
}

impl<T: Scalar> ForceSpec<T> {
    /// Pure viscous damping `f = -c0·y`.
    pub fn damping(c0: T) -> Self {
        Self {
            c0,
            c1: T::zero(),
            c_const: T::zero(),
        }
    }

    #[inline(always)]
    pub fn eval(&self, x: T, y: T) -> T {
        -self.c0 * y + self.c1 * x + self.c_const
    }

    /// True when `f(-x, -y) = -f(x, y)`.
    pub fn is_odd(&self) -> bool {
        self.c_const == T::zero()
    }
}

impl<T: Scalar> Default for ForceSpec<T> {
    fn default() -> Self {
        Self::damping(T::one())
    }
}

/// Physical constants of the oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    deny_unknown_fields,
    bound(deserialize = "T: Scalar + Deserialize<'de>")
)]
pub struct ModelParams<T> {
    /// Stiffness, `k > 0`.
    pub k: T,
    /// Bilinearity ratio in `[0, 1]`; `alpha = 0` is the elasto-perfectly-plastic case.
    pub alpha: T,
    /// Elasto-plastic bound on the elastic deformation, `b > 0`.
    pub b: T,
    /// Noise intensity, `sigma > 0`.
    pub sigma: T,
    #[serde(default)]
    pub force: ForceSpec<T>,
}

impl<T: Scalar> Default for ModelParams<T> {
    fn default() -> Self {
        Self {
            k: T::one(),
            alpha: T::lit(0.5),
            b: T::one(),
            sigma: T::one(),
            force: ForceSpec::default(),
        }
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(k: T, alpha: T, b: T, sigma: T, force: ForceSpec<T>) -> Result<Self> {
        let p = Self {
            k,
            alpha,
            b,
            sigma,
            force,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.k,
            self.alpha,
            self.b,
            self.sigma,
            self.force.c0,
            self.force.c1,
            self.force.c_const,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParams("non-finite model parameter".into()));
        }
        if !(self.k > T::zero()) {
            return Err(Error::InvalidParams(format!(
                "k must be > 0, got {}",
                self.k
            )));
        }
        if !(self.b > T::zero()) {
            return Err(Error::InvalidParams(format!(
                "b must be > 0, got {}",
                self.b
            )));
        }
        if !(self.sigma > T::zero()) {
            return Err(Error::InvalidParams(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if self.alpha < T::zero() || self.alpha > T::one() {
            return Err(Error::InvalidParams(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Same parameters with a different noise intensity. Zero is accepted so
    /// that deterministic trajectories can be simulated.
    pub fn with_sigma(mut self, sigma: T) -> Self {
        self.sigma = sigma;
        self
    }

    /// Restoring force `k(1-α)z + kαx`.
    #[inline(always)]
    pub fn restoring_force(&self, x: T, z: T) -> T {
        self.k * (T::one() - self.alpha) * z + self.k * self.alpha * x
    }
}

/// Drift of the velocity equation, `f(x, y) - k(1-α)z - kαx`.
///
/// `z` is not clamped to `[-b, b]`.
#[inline(always)]
pub fn drift_beta<T: Scalar>(x: T, y: T, z: T, p: &ModelParams<T>) -> T {
    p.force.eval(x, y) - p.k * (T::one() - p.alpha) * z - p.k * p.alpha * x
}

/// Constants of the one-sided bounds
/// `y·f ≤ -c0·y² + c1·xy + c2` and `x·f ≤ -d0·xy + d1·x² + d2`
/// derived from an affine force.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ForceBounds<T> {
    pub c0: T,
    pub c1: T,
    pub c2: T,
    pub d0: T,
    pub d1: T,
    pub d2: T,
}

impl<T: Scalar> ForceBounds<T> {
    /// Tightest bounds for `f = -c0·y + c1·x + c_const`. A nonzero constant is
    /// absorbed by completing squares: half of the damping in the first bound,
    /// half of the gap `kα - c1` in the second.
    pub fn derive(p: &ModelParams<T>) -> Result<Self> {
        let f = &p.force;
        let ka = p.k * p.alpha;
        let two = T::lit(2.0);
        let four = T::lit(4.0);
        if !(f.c0 > T::zero()) {
            return Err(Error::AssumptionViolation(format!(
                "damping coefficient c0 must be > 0, got {}",
                f.c0
            )));
        }
        if f.c1 > ka {
            return Err(Error::AssumptionViolation(format!(
                "c1 = {} exceeds k*alpha = {}",
                f.c1, ka
            )));
        }
        if !(f.c1 < ka) {
            return Err(Error::AssumptionViolation(format!(
                "d1 = {} must be < k*alpha = {}",
                f.c1, ka
            )));
        }
        if f.c_const == T::zero() {
            return Ok(Self {
                c0: f.c0,
                c1: f.c1,
                c2: T::zero(),
                d0: f.c0,
                d1: f.c1,
                d2: T::zero(),
            });
        }
        let eps_y = f.c0 / two;
        let eps_x = (ka - f.c1) / two;
        let cc = f.c_const * f.c_const;
        Ok(Self {
            c0: f.c0 - eps_y,
            c1: f.c1,
            c2: cc / (four * eps_y),
            d0: f.c0,
            d1: f.c1 + eps_x,
            d2: cc / (four * eps_x),
        })
    }
}

/// Lyapunov function `V(x, y) = a·x² + y² + c0·xy` together with the
/// constants of the bound `E[V(X(t), Y(t))] ≤ V(X(0), Y(0)) + C/C1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovReport<T> {
    /// Coefficient of `x²`: `kα + c0·d0/2 - c1`.
    pub coeff_xx: T,
    /// Coefficient of `y²` (always 1).
    pub coeff_yy: T,
    /// Coefficient of `xy`: `c0`.
    pub coeff_xy: T,
    /// Energy constant `C`.
    pub c: T,
    /// Decay rate `C1`.
    pub c1: T,
    /// `C / C1`.
    pub bound: T,
    pub constants: ForceBounds<T>,
}

impl<T: Scalar> LyapunovReport<T> {
    /// True when the quadratic form is positive definite.
    pub fn is_positive_definite(&self) -> bool {
        self.coeff_xx * self.coeff_yy * T::lit(4.0) > self.coeff_xy * self.coeff_xy
            && self.coeff_yy > T::zero()
    }
}

pub fn lyapunov_value<T: Scalar>(x: T, y: T, r: &LyapunovReport<T>) -> T {
    r.coeff_xx * x * x + r.coeff_yy * y * y + r.coeff_xy * x * y
}

/// Computes `C`, `C1` and the quadratic form for the parameters.
pub fn lyapunov_constants<T: Scalar>(p: &ModelParams<T>) -> Result<LyapunovReport<T>> {
    let fb = ForceBounds::derive(p)?;
    let one = T::one();
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let ka = p.k * p.alpha;
    let gap = ka - fb.d1;

    let plastic = p.k * p.b * (one - p.alpha);
    let c = p.sigma * p.sigma
        + two * fb.c2
        + fb.c0 * fb.d2
        + plastic * plastic * (two / fb.c0 + fb.c0 / (two * gap));
    let c1 =
        (fb.c0 / three).min(fb.c0 * gap / (two * ka + fb.c0 * fb.d0 + fb.c0 * fb.c0 - two * fb.c1));

    let report = LyapunovReport {
        coeff_xx: ka + fb.c0 * fb.d0 / two - fb.c1,
        coeff_yy: one,
        coeff_xy: fb.c0,
        c,
        c1,
        bound: c / c1,
        constants: fb,
    };
    if !(report.c > T::zero() && report.c1 > T::zero()) {
        return Err(Error::AssumptionViolation(format!(
            "non-positive constants C = {}, C1 = {}",
            report.c, report.c1
        )));
    }
    if !report.is_positive_definite() {
        return Err(Error::AssumptionViolation(
            "Lyapunov quadratic form is not positive definite".into(),
        ));
    }
    Ok(report)
}
