//! Simulator status machine and trapped errors.
//!
//! ```text
//!        a                 d
//!   +--------+     b    +-------+    +--------+
//!   |  Safe  | -------> | Limbo | -> | Unsafe |
//!   +--------+ <------- +-------+    +--------+
//!                  c
//! ```
//!
//! `Unsafe` is terminal and is only reachable through `Limbo`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Target;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrapKind {
    UnsafeLevelCrossed,
    UnhandledSimultaneity,
    UnhandledLimbo,
    NonFiniteState,
}

impl TrapKind {
    pub const ALL: [TrapKind; 4] = [
        TrapKind::UnsafeLevelCrossed,
        TrapKind::UnhandledSimultaneity,
        TrapKind::UnhandledLimbo,
        TrapKind::NonFiniteState,
    ];

    /// Process exit code reported by the CLI. 1 and 2 are reserved for I/O
    /// and usage errors.
    pub fn exit_code(self) -> u8 {
        match self {
            TrapKind::UnsafeLevelCrossed => 3,
            TrapKind::UnhandledSimultaneity => 4,
            TrapKind::UnhandledLimbo => 5,
            TrapKind::NonFiniteState => 6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrapKind::UnsafeLevelCrossed => "UnsafeLevelCrossed",
            TrapKind::UnhandledSimultaneity => "UnhandledSimultaneity",
            TrapKind::UnhandledLimbo => "UnhandledLimbo",
            TrapKind::NonFiniteState => "NonFiniteState",
        }
    }
}

impl fmt::Display for TrapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrapDetail {
    Detector { detector: String },
    Conflict { detectors: Vec<String>, contested: Vec<Target>, contested_names: Vec<String> },
    NonFinite { variable: Option<String> },
    EventCascade { rounds: usize },
}

impl fmt::Display for TrapDetail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrapDetail::Detector { detector } => write!(f, "detector {detector}"),
            TrapDetail::Conflict { detectors, contested_names, .. } => {
                write!(f, "events [{}] contest [{}]", detectors.join(", "), contested_names.join(", "))
            }
            TrapDetail::NonFinite { variable: Some(v) } => write!(f, "variable {v}"),
            TrapDetail::NonFinite { variable: None } => f.write_str("non-finite step"),
            TrapDetail::EventCascade { rounds } => write!(f, "event cascade exceeded {rounds} rounds"),
        }
    }
}

/// A trapped simulation error. `time` is the localized time of the offending
/// condition, not the end of the step that revealed it.
#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("{kind} at t = {time} ({detail})")]
pub struct TrapError {
    pub kind: TrapKind,
    pub time: f64,
    pub detail: TrapDetail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StatusTag {
    Safe,
    Limbo,
    Unsafe,
}

impl StatusTag {
    pub fn as_str(self) -> &'static str {
        match self {
            StatusTag::Safe => "safe",
            StatusTag::Limbo => "limbo",
            StatusTag::Unsafe => "unsafe",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "safe" => Some(StatusTag::Safe),
            "limbo" => Some(StatusTag::Limbo),
            "unsafe" => Some(StatusTag::Unsafe),
            _ => None,
        }
    }
}

impl fmt::Display for StatusTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimulatorStatus {
    Safe,
    Limbo { since: f64 },
    Unsafe(TrapError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum StatusEvent {
    /// Edge a: a zero level was crossed and handled.
    ZeroHandled,
    /// Edge b.
    LimboEntered { time: f64 },
    /// Edge c.
    RecoveredSafe,
    /// Edge d.
    UnsafeEntered(TrapError),
}

impl StatusEvent {
    pub fn name(&self) -> &'static str {
        match self {
            StatusEvent::ZeroHandled => "ZeroHandled",
            StatusEvent::LimboEntered { .. } => "LimboEntered",
            StatusEvent::RecoveredSafe => "RecoveredSafe",
            StatusEvent::UnsafeEntered(_) => "UnsafeEntered",
        }
    }
}

/// Raised for a (status, event) pair that is not an edge of the machine.
/// This is always an engine defect, never a model error.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("illegal status transition: {event} while {from}")]
pub struct IllegalTransition {
    pub from: StatusTag,
    pub event: &'static str,
}

impl SimulatorStatus {
    pub fn tag(&self) -> StatusTag {
        match self {
            SimulatorStatus::Safe => StatusTag::Safe,
            SimulatorStatus::Limbo { .. } => StatusTag::Limbo,
            SimulatorStatus::Unsafe(_) => StatusTag::Unsafe,
        }
    }

    pub fn limbo_since(&self) -> Option<f64> {
        match self {
            SimulatorStatus::Limbo { since } => Some(*since),
            _ => None,
        }
    }

    pub fn trap(&self) -> Option<&TrapError> {
        match self {
            SimulatorStatus::Unsafe(e) => Some(e),
            _ => None,
        }
    }

    pub fn transition(&self, event: StatusEvent) -> Result<SimulatorStatus, IllegalTransition> {
        match (self, event) {
            (SimulatorStatus::Safe, StatusEvent::ZeroHandled) => Ok(SimulatorStatus::Safe),
            (SimulatorStatus::Safe, StatusEvent::LimboEntered { time }) => Ok(SimulatorStatus::Limbo { since: time }),
            (SimulatorStatus::Limbo { .. }, StatusEvent::RecoveredSafe) => Ok(SimulatorStatus::Safe),
            (SimulatorStatus::Limbo { .. }, StatusEvent::UnsafeEntered(trap)) => Ok(SimulatorStatus::Unsafe(trap)),
            (status, event) => Err(IllegalTransition { from: status.tag(), event: event.name() }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trap(time: f64) -> TrapError {
        TrapError { kind: TrapKind::UnsafeLevelCrossed, time, detail: TrapDetail::Detector { detector: "d".into() } }
    }

    #[test]
    fn machine_edges() {
        let safe = SimulatorStatus::Safe;
        assert_eq!(safe.transition(StatusEvent::ZeroHandled).unwrap(), SimulatorStatus::Safe);
        let limbo = safe.transition(StatusEvent::LimboEntered { time: 1.5 }).unwrap();
        assert_eq!(limbo, SimulatorStatus::Limbo { since: 1.5 });
        assert_eq!(limbo.limbo_since(), Some(1.5));
        assert_eq!(limbo.transition(StatusEvent::RecoveredSafe).unwrap(), SimulatorStatus::Safe);
        let unsafe_ = limbo.transition(StatusEvent::UnsafeEntered(trap(2.0))).unwrap();
        assert_eq!(unsafe_.trap(), Some(&trap(2.0)));
    }

    #[test]
    fn rejects_off_edge_pairs() {
        let err = SimulatorStatus::Safe.transition(StatusEvent::RecoveredSafe).unwrap_err();
        assert_eq!(err, IllegalTransition { from: StatusTag::Safe, event: "RecoveredSafe" });
        assert!(SimulatorStatus::Safe.transition(StatusEvent::UnsafeEntered(trap(0.0))).is_err());
        let limbo = SimulatorStatus::Limbo { since: 0.0 };
        assert!(limbo.transition(StatusEvent::ZeroHandled).is_err());
        assert!(limbo.transition(StatusEvent::LimboEntered { time: 1.0 }).is_err());
    }

    #[test]
    fn exit_codes_are_distinct_and_nonzero() {
        let mut codes: Vec<u8> = TrapKind::ALL.iter().map(|k| k.exit_code()).collect();
        codes.sort_unstable();
        codes.dedup();
        assert_eq!(codes.len(), TrapKind::ALL.len());
        assert!(codes.iter().all(|&c| c > 2));
    }
}
