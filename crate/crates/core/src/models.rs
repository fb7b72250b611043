//! Canonical models: the bouncing ball and three colliding balls, plus the
//! one-dimensional elastic collision formula.

use thiserror::Error;

use crate::detect::{DetectorConfig, Direction, DEFAULT_ARM_THRESHOLD, DEFAULT_LIMBO_OFFSET, DEFAULT_UNSAFE_OFFSET};
use crate::engine::Safety;
use crate::model::{Assignment, EventAction, HybridModel, Mode, ModelError, Target};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelsError {
    #[error("masses must be positive, got {m1} and {m2}")]
    NonPositiveMass { m1: f64, m2: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Post-collision velocities of a one-dimensional perfectly elastic
/// collision. Momentum and kinetic energy are conserved.
pub fn elastic_velocities(m1: f64, v1: f64, m2: f64, v2: f64) -> Result<(f64, f64), ModelsError> {
    if !(m1 > 0.0 && m2 > 0.0) {
        return Err(ModelsError::NonPositiveMass { m1, m2 });
    }
    // exact in these two cases; the general formula rounds
    if m1 == m2 {
        return Ok((v2, v1));
    }
    if v1 == v2 {
        return Ok((v1, v2));
    }
    let m = m1 + m2;
    let v1p = ((m1 - m2) * v1 + 2.0 * m2 * v2) / m;
    let v2p = ((m2 - m1) * v2 + 2.0 * m1 * v1) / m;
    Ok((v1p, v2p))
}

/// Levels shared by the detectors a builder creates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorTuning {
    pub arm_threshold: f64,
    pub limbo_offset: f64,
    pub unsafe_offset: f64,
}

impl Default for DetectorTuning {
    fn default() -> Self {
        Self {
            arm_threshold: DEFAULT_ARM_THRESHOLD,
            limbo_offset: DEFAULT_LIMBO_OFFSET,
            unsafe_offset: DEFAULT_UNSAFE_OFFSET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BouncingBallParams {
    /// Initial height (m).
    pub h0: f64,
    /// Fraction of the velocity kept at each bounce.
    pub c: f64,
    /// Gravitational acceleration (m/s²).
    pub g: f64,
}

impl Default for BouncingBallParams {
    fn default() -> Self {
        Self { h0: 3.0, c: 0.7, g: 9.81 }
    }
}

impl BouncingBallParams {
    pub fn validate(&self) -> Result<(), ModelsError> {
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(ModelsError::InvalidParams(format!("c must lie in (0, 1), got {}", self.c)));
        }
        if !(self.g > 0.0 && self.g.is_finite()) {
            return Err(ModelsError::InvalidParams(format!("g must be positive, got {}", self.g)));
        }
        if !(self.h0 > 0.0 && self.h0.is_finite()) {
            return Err(ModelsError::InvalidParams(format!("h0 must be positive, got {}", self.h0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BouncingBallVariant {
    /// Single-level detector with re-arm hysteresis; tunnels silently.
    UnsafeNaive,
    /// Three-level detector; the limbo handler puts the ball to rest.
    Safe,
    /// Three-level detector without a limbo handler; traps at the unsafe level.
    SafeNoLimboHandler,
}

impl BouncingBallVariant {
    pub fn safety(self) -> Safety {
        match self {
            BouncingBallVariant::UnsafeNaive => Safety::UnsafeMode,
            BouncingBallVariant::Safe | BouncingBallVariant::SafeNoLimboHandler => Safety::SafeMode,
        }
    }
}

pub const BALL_H: usize = 0;
pub const BALL_V: usize = 1;

/// Bouncing ball: state `(h, v)`, modes `falling` and `rest`, one ground
/// detector on `h` falling through 0 whose action is `v := -c * pre(v)`.
pub fn bouncing_ball(
    p: &BouncingBallParams,
    variant: BouncingBallVariant,
    tuning: &DetectorTuning,
) -> Result<HybridModel, ModelsError> {
    p.validate()?;
    let (g, c) = (p.g, p.c);
    let mut b = HybridModel::builder("bouncing-ball", &["h", "v"]).initial_state(vec![p.h0, 0.0]);
    b.mode(Mode::new("falling", move |_, x, dx| {
        dx[BALL_H] = x[BALL_V];
        dx[BALL_V] = -g;
    }));
    let rest = b.mode(Mode::new("rest", |_, _, dx| {
        dx[BALL_H] = 0.0;
        dx[BALL_V] = 0.0;
    }));

    let config = match variant {
        BouncingBallVariant::UnsafeNaive => {
            DetectorConfig::naive("ground", 0.0, Direction::Falling, tuning.arm_threshold)
        }
        _ => DetectorConfig::safe("ground", 0.0, Direction::Falling, tuning.limbo_offset, tuning.unsafe_offset),
    };
    let v = Target::State(BALL_V);
    let bounce = EventAction::new("bounce", [v], [v], move |_, x| vec![Assignment::State(BALL_V, -c * x[BALL_V])]);
    let ground = b.detector(config, |_, x| x[BALL_H], bounce);

    if variant == BouncingBallVariant::Safe {
        let to_rest = EventAction::new("rest", [], [v, Target::Mode], move |_, _| {
            vec![Assignment::State(BALL_V, 0.0), Assignment::Mode(rest)]
        });
        b.limbo_handler(ground, to_rest);
    }
    Ok(b.build()?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallParams {
    /// Initial center position (m).
    pub x0: f64,
    /// Initial velocity (m/s).
    pub v0: f64,
    /// Mass (kg).
    pub m: f64,
    /// Radius (m).
    pub r: f64,
}

impl BallParams {
    pub fn validate(&self, label: &str) -> Result<(), ModelsError> {
        if !(self.m > 0.0 && self.m.is_finite()) {
            return Err(ModelsError::InvalidParams(format!("{label}.m must be positive, got {}", self.m)));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(ModelsError::InvalidParams(format!("{label}.r must be positive, got {}", self.r)));
        }
        if !(self.x0.is_finite() && self.v0.is_finite()) {
            return Err(ModelsError::InvalidParams(format!("{label} position and velocity must be finite")));
        }
        Ok(())
    }
}

/// Ball 1, ball 2 and ball 3 of the symmetric three-ball configuration.
pub fn three_ball_defaults() -> [BallParams; 3] {
    [
        BallParams { x0: -5.0, v0: 1.0, m: 1.0, r: 0.5 },
        BallParams { x0: 0.0, v0: 0.0, m: 2.0, r: 1.0 },
        BallParams { x0: 5.0, v0: -1.0, m: 1.0, r: 0.5 },
    ]
}

/// Declaration order of the two collision detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollisionOrder {
    /// Ball 1–2 first, then ball 2–3.
    Declared,
    Swapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThreeBallsVariant {
    /// Simultaneous collisions applied one after another in declaration order.
    UnsafeOrdered(CollisionOrder),
    /// Simultaneous conflicting collisions trap.
    Safe,
    /// A combined handler resolves the symmetric simultaneous collision.
    SafeWithCombinedHandler,
}

impl ThreeBallsVariant {
    pub fn safety(self) -> Safety {
        match self {
            ThreeBallsVariant::UnsafeOrdered(_) => Safety::UnsafeMode,
            ThreeBallsVariant::Safe | ThreeBallsVariant::SafeWithCombinedHandler => Safety::SafeMode,
        }
    }
}

/// State index of ball `k`'s position (`k` in 0..3).
pub fn ball_x(k: usize) -> usize {
    2 * k
}

/// State index of ball `k`'s velocity.
pub fn ball_v(k: usize) -> usize {
    2 * k + 1
}

type Guard = Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

fn collision(balls: &[BallParams; 3], left: usize, right: usize) -> (String, Guard, EventAction) {
    let (ml, mr) = (balls[left].m, balls[right].m);
    let reach = balls[left].r + balls[right].r;
    let (vl, vr) = (ball_v(left), ball_v(right));
    let (xl, xr) = (ball_x(left), ball_x(right));
    let name = format!("b{}-b{}", left + 1, right + 1);
    let action = EventAction::new(
        format!("collide {name}"),
        [Target::State(vl), Target::State(vr)],
        [Target::State(vl), Target::State(vr)],
        move |_, x| {
            let (a, b) = elastic_velocities(ml, x[vl], mr, x[vr]).expect("masses validated at build");
            vec![Assignment::State(vl, a), Assignment::State(vr, b)]
        },
    );
    let guard = move |_: f64, x: &[f64]| (x[xr] - x[xl]) - reach;
    (name, Box::new(guard), action)
}

/// Three balls on a frictionless line: state `(x, v)` per ball, constant
/// velocities, and one gap detector per neighbouring pair whose action is
/// the elastic collision.
pub fn three_balls(
    balls: &[BallParams; 3],
    variant: ThreeBallsVariant,
    tuning: &DetectorTuning,
) -> Result<HybridModel, ModelsError> {
    for (k, ball) in balls.iter().enumerate() {
        ball.validate(&format!("b{}", k + 1))?;
    }
    for k in 0..2 {
        let gap = balls[k + 1].x0 - balls[k].x0 - (balls[k].r + balls[k + 1].r);
        if !(gap > 0.0) {
            return Err(ModelsError::InvalidParams(format!(
                "balls {} and {} must start ordered and apart (gap {gap})",
                k + 1,
                k + 2
            )));
        }
    }

    let x0: Vec<f64> = balls.iter().flat_map(|b| [b.x0, b.v0]).collect();
    let mut b =
        HybridModel::builder("three-balls", &["b1.x", "b1.v", "b2.x", "b2.v", "b3.x", "b3.v"]).initial_state(x0);
    b.mode(Mode::new("rolling", |_, x, dx| {
        for k in 0..3 {
            dx[ball_x(k)] = x[ball_v(k)];
            dx[ball_v(k)] = 0.0;
        }
    }));

    let mut pairs = vec![collision(balls, 0, 1), collision(balls, 1, 2)];
    if variant == ThreeBallsVariant::UnsafeOrdered(CollisionOrder::Swapped) {
        pairs.reverse();
    }
    let mut ids = Vec::new();
    for (name, guard, action) in pairs {
        let cfg = DetectorConfig::safe(name, 0.0, Direction::Falling, tuning.limbo_offset, tuning.unsafe_offset);
        ids.push(b.detector(cfg, move |t, x| guard(t, x), action));
    }

    if variant == ThreeBallsVariant::SafeWithCombinedHandler {
        // specialized to the symmetric configuration: the outer balls bounce
        // back, the middle ball keeps its velocity
        let all: Vec<Target> = (0..3).map(|k| Target::State(ball_v(k))).collect();
        let handler = EventAction::new("symmetric impact", all.clone(), all, |_, x| {
            vec![
                Assignment::State(ball_v(0), -x[ball_v(0)]),
                Assignment::State(ball_v(1), x[ball_v(1)]),
                Assignment::State(ball_v(2), -x[ball_v(2)]),
            ]
        });
        b.combined_handler(ids, handler);
    }
    Ok(b.build()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + b.abs())
    }

    #[test]
    fn elastic_examples() {
        assert_eq!(elastic_velocities(1.0, 1.0, 1.0, 0.0).unwrap(), (0.0, 1.0));
        let (a, b) = elastic_velocities(1.0, 1.0, 2.0, 0.0).unwrap();
        assert!(close(a, -1.0 / 3.0) && close(b, 2.0 / 3.0));
        let (a, b) = elastic_velocities(2.0, 2.0 / 3.0, 1.0, -1.0).unwrap();
        assert!(close(a, -4.0 / 9.0) && close(b, 11.0 / 9.0));
        assert_eq!(elastic_velocities(3.0, 0.25, 3.0, 0.25).unwrap(), (0.25, 0.25));
        assert_eq!(elastic_velocities(3.0, -0.5, 7.0, -0.5).unwrap(), (-0.5, -0.5));
    }

    #[test]
    fn zero_mass_rejected() {
        assert!(matches!(elastic_velocities(0.0, 1.0, 1.0, 0.0), Err(ModelsError::NonPositiveMass { .. })));
        assert!(matches!(elastic_velocities(1.0, 1.0, -2.0, 0.0), Err(ModelsError::NonPositiveMass { .. })));
    }

    #[test]
    fn builder_validation() {
        let bad = BouncingBallParams { c: 1.0, ..Default::default() };
        assert!(bouncing_ball(&bad, BouncingBallVariant::Safe, &DetectorTuning::default()).is_err());
        let mut balls = three_ball_defaults();
        balls[0].x0 = -1.0;
        assert!(three_balls(&balls, ThreeBallsVariant::Safe, &DetectorTuning::default()).is_err());
        balls = three_ball_defaults();
        balls[1].m = 0.0;
        assert!(three_balls(&balls, ThreeBallsVariant::Safe, &DetectorTuning::default()).is_err());
    }

    #[test]
    fn swapped_declaration_order() {
        let t = DetectorTuning::default();
        let m =
            three_balls(&three_ball_defaults(), ThreeBallsVariant::UnsafeOrdered(CollisionOrder::Swapped), &t).unwrap();
        let names: Vec<&str> = m.detectors().iter().map(|d| d.name()).collect();
        assert_eq!(names, ["b2-b3", "b1-b2"]);
    }

    proptest! {
        #[test]
        fn equal_mass_exchange_is_an_involution(m in 0.1f64..10.0, v1 in -10.0f64..10.0, v2 in -10.0f64..10.0) {
            let (a, b) = elastic_velocities(m, v1, m, v2).unwrap();
            prop_assert_eq!(elastic_velocities(m, a, m, b).unwrap(), (v1, v2));
        }

        #[test]
        fn conserves_momentum_and_energy(m1 in 0.1f64..10.0, v1 in -10.0f64..10.0, m2 in 0.1f64..10.0, v2 in -10.0f64..10.0) {
            let (a, b) = elastic_velocities(m1, v1, m2, v2).unwrap();
            let p_scale = (m1 * v1).abs() + (m2 * v2).abs();
            prop_assert!((m1 * v1 + m2 * v2 - (m1 * a + m2 * b)).abs() <= 1e-12 * p_scale);
            let e0 = 0.5 * m1 * v1 * v1 + 0.5 * m2 * v2 * v2;
            let e1 = 0.5 * m1 * a * a + 0.5 * m2 * b * b;
            prop_assert!((e0 - e1).abs() <= 1e-12 * e0);
        }
    }
}
