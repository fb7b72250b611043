//! Fixed-step RK4 integration, cubic Hermite dense output and bisection
//! localization of guard crossings within a step.

use thiserror::Error;

use crate::detect::Direction;
use crate::model::{Mode, ModeId, StateVec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("invalid step configuration: {0}")]
    InvalidConfig(String),
    #[error("step from t = {t} produced a non-finite state")]
    NonFiniteResult { t: f64 },
    #[error("t = {t} lies outside the segment [{t0}, {t1}]")]
    OutOfSegment { t: f64, t0: f64, t1: f64 },
    #[error("crossing not localized within {iterations} bisections")]
    NoConvergence { iterations: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    /// Nominal step size (s).
    pub dt: f64,
    /// Width of the final bisection bracket (s).
    pub t_tol: f64,
    pub max_bisections: u32,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self { dt: 1e-3, t_tol: 1e-9, max_bisections: 64 }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<(), IntegrateError> {
        let bad = |msg: String| Err(IntegrateError::InvalidConfig(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_tol > 0.0) {
            return bad(format!("t_tol must be positive, got {}", self.t_tol));
        }
        if self.t_tol >= self.dt {
            return bad(format!("t_tol ({}) must be smaller than dt ({})", self.t_tol, self.dt));
        }
        let needed = (self.dt / self.t_tol).log2().ceil();
        if f64::from(self.max_bisections) < needed {
            return bad(format!("max_bisections ({}) below the {needed} needed for dt/t_tol", self.max_bisections));
        }
        Ok(())
    }
}

/// One classical fourth-order Runge-Kutta step.
pub fn step<F>(dynamics: F, t: f64, x: &[f64], dt: f64) -> Result<StateVec, IntegrateError>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let half = 0.5 * dt;

    dynamics(t, x, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + half * k1[i];
    }
    dynamics(t + half, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + half * k2[i];
    }
    dynamics(t + half, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    dynamics(t + dt, &tmp, &mut k4);

    let out: Vec<f64> = (0..n).map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect();
    let out = StateVec::new(out);
    if !out.is_finite() {
        return Err(IntegrateError::NonFiniteResult { t });
    }
    Ok(out)
}

/// An accepted step, with endpoint derivatives cached for dense output.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSegment {
    pub t0: f64,
    pub t1: f64,
    pub x0: StateVec,
    pub x1: StateVec,
    pub mode: ModeId,
    d0: Vec<f64>,
    d1: Vec<f64>,
}

impl StepSegment {
    pub fn new(mode: &Mode, mode_id: ModeId, t0: f64, x0: StateVec, t1: f64, x1: StateVec) -> Self {
        let d0 = mode.derivative(t0, &x0);
        let d1 = mode.derivative(t1, &x1);
        Self { t0, t1, x0, x1, mode: mode_id, d0, d1 }
    }

    /// Integrates one step of `mode` from `(t0, x0)` and wraps the result.
    /// `t1` is taken as given so the final step lands exactly on `t_end`.
    pub fn advance(mode: &Mode, mode_id: ModeId, t0: f64, x0: &StateVec, t1: f64) -> Result<Self, IntegrateError> {
        let x1 = step(|t, x, dx| mode.derivative_into(t, x, dx), t0, x0, t1 - t0)?;
        Ok(Self::new(mode, mode_id, t0, x0.clone(), t1, x1))
    }

    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }
}

/// Cubic Hermite interpolant over the segment. Endpoints are returned
/// verbatim.
pub fn interpolate(seg: &StepSegment, t: f64) -> Result<StateVec, IntegrateError> {
    if !(seg.t0 <= t && t <= seg.t1) {
        return Err(IntegrateError::OutOfSegment { t, t0: seg.t0, t1: seg.t1 });
    }
    if t == seg.t0 {
        return Ok(seg.x0.clone());
    }
    if t == seg.t1 {
        return Ok(seg.x1.clone());
    }
    let h = seg.duration();
    let s = (t - seg.t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let x = (0..seg.x0.len())
        .map(|i| h00 * seg.x0[i] + h10 * h * seg.d0[i] + h01 * seg.x1[i] + h11 * h * seg.d1[i])
        .collect();
    Ok(StateVec::new(x))
}

/// Final bisection bracket around a crossing: the guard is on the
/// pre-crossing side at `lo` and on the post-crossing side at `hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
}

impl Bracket {
    /// The localized crossing time: the first bracketed instant on the
    /// post-crossing side.
    pub fn time(&self) -> f64 {
        self.hi
    }
}

/// Locates a directional crossing of `guard` through zero within `seg`.
///
/// Falling: pre-side `g > 0`, post-side `g <= 0`. Rising: pre-side `g < 0`,
/// post-side `g >= 0`. Returns `None` without an endpoint sign change, so a
/// crossing that enters and leaves within one step is not seen.
pub fn localize<G>(
    guard: G,
    seg: &StepSegment,
    cfg: &StepConfig,
    direction: Direction,
) -> Result<Option<Bracket>, IntegrateError>
where
    G: Fn(f64, &[f64]) -> f64,
{
    match direction {
        Direction::Falling => bisect(guard, seg, cfg, |g| g <= 0.0),
        Direction::Rising => bisect(guard, seg, cfg, |g| g >= 0.0),
    }
}

/// Bisection on the Hermite interpolant for the first switch of
/// `post_side` from false at `t0` to true at `t1`.
pub fn bisect<G, P>(
    guard: G,
    seg: &StepSegment,
    cfg: &StepConfig,
    post_side: P,
) -> Result<Option<Bracket>, IntegrateError>
where
    G: Fn(f64, &[f64]) -> f64,
    P: Fn(f64) -> bool,
{
    if post_side(guard(seg.t0, &seg.x0)) || !post_side(guard(seg.t1, &seg.x1)) {
        return Ok(None);
    }
    let (mut lo, mut hi) = (seg.t0, seg.t1);
    let mut iterations = 0;
    while hi - lo > cfg.t_tol {
        if iterations >= cfg.max_bisections {
            return Err(IntegrateError::NoConvergence { iterations });
        }
        iterations += 1;
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        let x = interpolate(seg, mid)?;
        if post_side(guard(mid, &x)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(Bracket { lo, hi }))
}
