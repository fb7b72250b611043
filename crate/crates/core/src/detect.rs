//! Directional level-crossing detectors.
//!
//! A safe detector watches three thresholds along its crossing direction:
//! the zero level `L0`, the limbo level `L0 ∓ limbo_offset` and the unsafe
//! level `L0 ∓ (limbo_offset + unsafe_offset)`. A naive detector only sees
//! `L0` and must be re-armed by the guard recovering past
//! `L0 ± arm_threshold` before it can fire again.
//!
//! Both are expressed through the signed *depth* of a guard value: how far
//! it lies past `L0` in the crossing direction. A threshold at offset `o`
//! counts as crossed once `depth >= o`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Triggers when the guard decreases through the level.
    Falling,
    /// Triggers when the guard increases through the level.
    Rising,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DetectorKind {
    Naive { arm_threshold: f64 },
    Safe { limbo_offset: f64, unsafe_offset: f64 },
}

pub const DEFAULT_LIMBO_OFFSET: f64 = 1e-4;
pub const DEFAULT_UNSAFE_OFFSET: f64 = 1e-2;
pub const DEFAULT_ARM_THRESHOLD: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("level must be finite")]
    NonFiniteLevel,
    #[error("arm_threshold must be positive, got {0}")]
    ArmThreshold(f64),
    #[error("limbo_offset and unsafe_offset must be positive, got {limbo} and {unsafe_}")]
    Offsets { limbo: f64, unsafe_: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub name: String,
    pub level: f64,
    pub direction: Direction,
    pub kind: DetectorKind,
}

impl DetectorConfig {
    pub fn safe(
        name: impl Into<String>,
        level: f64,
        direction: Direction,
        limbo_offset: f64,
        unsafe_offset: f64,
    ) -> Self {
        Self { name: name.into(), level, direction, kind: DetectorKind::Safe { limbo_offset, unsafe_offset } }
    }

    pub fn naive(name: impl Into<String>, level: f64, direction: Direction, arm_threshold: f64) -> Self {
        Self { name: name.into(), level, direction, kind: DetectorKind::Naive { arm_threshold } }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.level.is_finite() {
            return Err(ConfigError::NonFiniteLevel);
        }
        match self.kind {
            DetectorKind::Naive { arm_threshold } if !(arm_threshold > 0.0 && arm_threshold.is_finite()) => {
                Err(ConfigError::ArmThreshold(arm_threshold))
            }
            DetectorKind::Safe { limbo_offset, unsafe_offset }
                if !(limbo_offset > 0.0 && unsafe_offset > 0.0 && (limbo_offset + unsafe_offset).is_finite()) =>
            {
                Err(ConfigError::Offsets { limbo: limbo_offset, unsafe_: unsafe_offset })
            }
            _ => Ok(()),
        }
    }

    pub fn safe_levels(&self) -> Option<SafeLevels> {
        match self.kind {
            DetectorKind::Safe { limbo_offset, unsafe_offset } => {
                Some(SafeLevels { level: self.level, direction: self.direction, limbo_offset, unsafe_offset })
            }
            DetectorKind::Naive { .. } => None,
        }
    }

    pub fn naive_levels(&self) -> Option<NaiveLevels> {
        match self.kind {
            DetectorKind::Naive { arm_threshold } => {
                Some(NaiveLevels { level: self.level, direction: self.direction, arm_threshold })
            }
            DetectorKind::Safe { .. } => None,
        }
    }
}

fn depth(level: f64, direction: Direction, value: f64) -> f64 {
    match direction {
        Direction::Falling => level - value,
        Direction::Rising => value - level,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Safe,
    Limbo,
    Unsafe,
}

/// One of the three thresholds of a safe detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Threshold {
    Zero,
    Limbo,
    Unsafe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DetectorEvent {
    ZeroCrossed,
    LimboEntered,
    UnsafeEntered,
    LimboExited,
}

/// The thresholds of a safe detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafeLevels {
    pub level: f64,
    pub direction: Direction,
    pub limbo_offset: f64,
    pub unsafe_offset: f64,
}

impl SafeLevels {
    pub fn depth(&self, value: f64) -> f64 {
        depth(self.level, self.direction, value)
    }

    /// Depth offset of a threshold past `L0`.
    pub fn offset(&self, threshold: Threshold) -> f64 {
        match threshold {
            Threshold::Zero => 0.0,
            Threshold::Limbo => self.limbo_offset,
            Threshold::Unsafe => self.limbo_offset + self.unsafe_offset,
        }
    }

    /// Absolute guard value of a threshold.
    pub fn threshold_value(&self, threshold: Threshold) -> f64 {
        match self.direction {
            Direction::Falling => self.level - self.offset(threshold),
            Direction::Rising => self.level + self.offset(threshold),
        }
    }

    pub fn crossed(&self, threshold: Threshold, value: f64) -> bool {
        self.depth(value) >= self.offset(threshold)
    }
}

/// Region of a guard value. For a falling detector at `L0 = 0` with offsets
/// `a`, `b`: `v > -a` is safe, `-a >= v > -(a+b)` is limbo and
/// `v <= -(a+b)` is unsafe.
pub fn classify_region(value: f64, levels: &SafeLevels) -> Region {
    if levels.crossed(Threshold::Unsafe, value) {
        Region::Unsafe
    } else if levels.crossed(Threshold::Limbo, value) {
        Region::Limbo
    } else {
        Region::Safe
    }
}

/// Events for a guard moving from `pre` to `post`: one per threshold
/// crossed in the detector's direction, in threshold order, then
/// `LimboExited` if the value came back out of limbo into the safe region.
pub fn check_safe(levels: &SafeLevels, pre: f64, post: f64) -> Vec<DetectorEvent> {
    let mut events = Vec::new();
    for (threshold, event) in [
        (Threshold::Zero, DetectorEvent::ZeroCrossed),
        (Threshold::Limbo, DetectorEvent::LimboEntered),
        (Threshold::Unsafe, DetectorEvent::UnsafeEntered),
    ] {
        if !levels.crossed(threshold, pre) && levels.crossed(threshold, post) {
            events.push(event);
        }
    }
    if levels.crossed(Threshold::Limbo, pre) && !levels.crossed(Threshold::Limbo, post) {
        events.push(DetectorEvent::LimboExited);
    }
    events
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveLevels {
    pub level: f64,
    pub direction: Direction,
    pub arm_threshold: f64,
}

impl NaiveLevels {
    pub fn depth(&self, value: f64) -> f64 {
        depth(self.level, self.direction, value)
    }

    /// Initial arming: armed iff the guard starts beyond the re-arm level.
    pub fn initial_state(&self, value: f64) -> NaiveState {
        NaiveState { armed: self.depth(value) < -self.arm_threshold }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NaiveState {
    pub armed: bool,
}

/// Single-level detector with re-arm hysteresis. Fires iff armed and the
/// guard moves from the pre side of `L0` to the post side; firing disarms,
/// and only a recovery beyond `L0 ± arm_threshold` re-arms. A bounce that
/// never reaches the re-arm level is silently missed.
pub fn check_naive(levels: &NaiveLevels, state: NaiveState, pre: f64, post: f64) -> (bool, NaiveState) {
    let (dp, dq) = (levels.depth(pre), levels.depth(post));
    let fired = state.armed && dp < 0.0 && dq >= 0.0;
    let mut armed = state.armed && !fired;
    if !armed && !fired && dq < -levels.arm_threshold {
        armed = true;
    }
    (fired, NaiveState { armed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: f64 = 1e-4;
    const B: f64 = 1e-2;

    fn falling() -> SafeLevels {
        SafeLevels { level: 0.0, direction: Direction::Falling, limbo_offset: A, unsafe_offset: B }
    }

    fn naive() -> NaiveLevels {
        NaiveLevels { level: 0.0, direction: Direction::Falling, arm_threshold: 1e-7 }
    }

    #[test]
    fn regions() {
        let l = falling();
        assert_eq!(classify_region(0.5, &l), Region::Safe);
        assert_eq!(classify_region(-5e-5, &l), Region::Safe);
        assert_eq!(classify_region(-2e-4, &l), Region::Limbo);
        assert_eq!(classify_region(-0.02, &l), Region::Unsafe);
        assert_eq!(classify_region(-A, &l), Region::Limbo);
        assert_eq!(classify_region(-(A + B), &l), Region::Unsafe);
    }

    #[test]
    fn rising_mirrors_falling() {
        let l = SafeLevels { direction: Direction::Rising, level: 1.0, ..falling() };
        assert_eq!(classify_region(0.5, &l), Region::Safe);
        assert_eq!(classify_region(1.0 + 2e-4, &l), Region::Limbo);
        assert_eq!(classify_region(1.02, &l), Region::Unsafe);
        assert_eq!(l.threshold_value(Threshold::Limbo), 1.0 + A);
    }

    #[test]
    fn safe_events() {
        let l = falling();
        assert_eq!(check_safe(&l, 0.1, -5e-5), vec![DetectorEvent::ZeroCrossed]);
        assert_eq!(check_safe(&l, -5e-5, -2e-4), vec![DetectorEvent::LimboEntered]);
        assert_eq!(
            check_safe(&l, 0.1, -0.02),
            vec![DetectorEvent::ZeroCrossed, DetectorEvent::LimboEntered, DetectorEvent::UnsafeEntered]
        );
        assert_eq!(check_safe(&l, -2e-4, 0.1), vec![DetectorEvent::LimboExited]);
        assert!(check_safe(&l, -0.5e-5, 0.3).is_empty());
    }

    #[test]
    fn naive_fires_once_then_needs_rearm() {
        let l = naive();
        let (fired, s) = check_naive(&l, NaiveState { armed: true }, 0.1, -1e-6);
        assert!(fired);
        assert!(!s.armed);

        // last bounce below the re-arm level
        let (fired, s) = check_naive(&l, s, -1e-6, 1e-9);
        assert!(!fired && !s.armed);
        let (fired, s) = check_naive(&l, s, 1e-9, -1e-9);
        assert!(!fired && !s.armed);

        let (fired, s) = check_naive(&l, s, -1e-9, 1e-3);
        assert!(!fired && s.armed);
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::safe("d", 0.0, Direction::Falling, A, B).validate().is_ok());
        assert!(DetectorConfig::safe("d", 0.0, Direction::Falling, 0.0, B).validate().is_err());
        assert!(DetectorConfig::naive("d", 0.0, Direction::Falling, -1.0).validate().is_err());
        assert!(DetectorConfig::naive("d", f64::NAN, Direction::Falling, 1.0).validate().is_err());
    }

    /// Geometric bounce decay always ends below any re-arm threshold, after
    /// which the naive detector never fires again.
    #[test]
    fn naive_tunneling_is_inevitable() {
        let c: f64 = 0.7;
        let h0 = 3.0;
        for eps in [1e-3, 1e-7, 1e-12] {
            let levels = NaiveLevels { arm_threshold: eps, ..naive() };
            let mut state = NaiveState { armed: true };
            let mut last_fired = None;
            for k in 0..200 {
                let apex = c.powi(2 * k) * h0;
                let (_, s) = check_naive(&levels, state, -1e-15, apex);
                let (fired, s) = check_naive(&levels, s, apex, -1e-15);
                state = s;
                if fired {
                    last_fired = Some(k);
                }
            }
            let k = last_fired.expect("fires while the bounces are large");
            assert!(c.powi(2 * (k + 1)) * h0 < eps);
            assert!(k < 199);
        }
    }

    fn value_on_grid() -> impl Strategy<Value = f64> {
        prop_oneof![-0.05f64..0.05, -2e-4f64..2e-4, -0.0102f64..-0.0100]
    }

    proptest! {
        #[test]
        fn no_region_skips(pre in value_on_grid(), post in value_on_grid()) {
            let l = falling();
            let ev = check_safe(&l, pre, post);
            if ev.contains(&DetectorEvent::UnsafeEntered) && classify_region(pre, &l) == Region::Safe {
                prop_assert!(ev.contains(&DetectorEvent::LimboEntered));
            }
        }

        #[test]
        fn refinement_concatenates(pre in value_on_grid(), post in value_on_grid(), frac in 0.0f64..=1.0) {
            let l = falling();
            let mid = pre + frac * (post - pre);
            let (lo, hi) = if pre <= post { (pre, post) } else { (post, pre) };
            prop_assume!(lo <= mid && mid <= hi);
            let mut split = check_safe(&l, pre, mid);
            split.extend(check_safe(&l, mid, post));
            prop_assert_eq!(split, check_safe(&l, pre, post));
        }
    }
}
