//! Hybrid (continuous + discrete-event) simulation with a simulator-level
//! safety state machine.
//!
//! The simulator is always in one of three states: `Safe`, `Limbo` or
//! `Unsafe`. Level-crossing detectors with separate zero, limbo and unsafe
//! levels turn zero-crossing tunneling into a trapped error, and events that
//! fire within a simultaneity tolerance are checked for write conflicts so a
//! declaration order never silently decides the outcome of an ambiguous
//! instant.
//!
//! Module map:
//!
//! - [`model`]: state vectors, modes, detectors, event actions.
//! - [`status`]: the `Safe`/`Limbo`/`Unsafe` machine and trap errors.
//! - [`trace`]: sample and event recording.
//! - [`integrate`]: RK4 stepping, Hermite dense output, crossing bisection.
//! - [`detect`]: naive and three-level detectors.
//! - [`engine`]: the main loop, event batching and conflict analysis.
//! - [`models`]: bouncing ball and three colliding balls.
//! - [`cli`]: run specs, trace files and the order-permutation comparator.

pub mod cli;
pub mod detect;
pub mod engine;
pub mod integrate;
pub mod model;
pub mod models;
pub mod status;
pub mod trace;

pub use detect::{DetectorConfig, DetectorKind, Direction};
pub use engine::{simulate, EngineConfig, EventBatch, Safety, SimOutcome, Terminal, Verdict};
pub use integrate::StepConfig;
pub use model::{Assignment, DetectorId, EventAction, HybridModel, ModeId, StateVec, Target};
pub use status::{SimulatorStatus, StatusEvent, StatusTag, TrapDetail, TrapError, TrapKind};
pub use trace::Trace;
