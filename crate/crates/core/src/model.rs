//! Hybrid model description: continuous state, modes, detectors with their
//! guard functions, and the event actions fired on crossings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{ConfigError, DetectorConfig};

/// Continuous state of a model. The length is fixed for a whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVec(Vec<f64>);

impl StateVec {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the first NaN or infinite entry.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.0.iter().position(|v| !v.is_finite())
    }

    pub fn is_finite(&self) -> bool {
        self.first_non_finite().is_none()
    }
}

impl Deref for StateVec {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for StateVec {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DetectorId(pub usize);

/// Something an event action can read or write. The active mode counts as a
/// writable pseudo-variable so mode switches share the conflict analysis of
/// ordinary reinits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Target {
    State(usize),
    Mode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Assignment {
    State(usize, f64),
    Mode(ModeId),
}

impl Assignment {
    pub fn target(&self) -> Target {
        match self {
            Assignment::State(i, _) => Target::State(*i),
            Assignment::Mode(_) => Target::Mode,
        }
    }
}

pub type DynamicsFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
pub type GuardFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;
pub type ApplyFn = dyn Fn(f64, &[f64]) -> Vec<Assignment> + Send + Sync;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model declares no modes")]
    NoModes,
    #[error("initial state has {got} entries, model declares {expected} variables")]
    StateLength { expected: usize, got: usize },
    #[error("initial state is not finite")]
    NonFiniteInitialState,
    #[error("{owner} references state index {index}, model has {n} variables")]
    TargetOutOfRange { owner: String, index: usize, n: usize },
    #[error("unknown mode {0:?}")]
    UnknownMode(ModeId),
    #[error("unknown detector {0:?}")]
    UnknownDetector(DetectorId),
    #[error("duplicate detector name `{0}`")]
    DuplicateDetector(String),
    #[error("combined handler must cover at least two detectors")]
    CombinedHandlerTooSmall,
    #[error("detector `{name}`: {source}")]
    InvalidDetector { name: String, source: ConfigError },
    #[error("action `{action}` assigned {target:?} outside its declared write set")]
    UndeclaredWrite { action: String, target: Target },
}

/// A discrete reassignment of state (Modelica `reinit`) or mode. `apply`
/// receives the pre-event state, i.e. the left limit of every variable.
#[derive(Clone)]
pub struct EventAction {
    name: String,
    reads: BTreeSet<Target>,
    writes: BTreeSet<Target>,
    apply: Arc<ApplyFn>,
}

impl EventAction {
    pub fn new<F>(
        name: impl Into<String>,
        reads: impl IntoIterator<Item = Target>,
        writes: impl IntoIterator<Item = Target>,
        apply: F,
    ) -> Self
    where
        F: Fn(f64, &[f64]) -> Vec<Assignment> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            reads: reads.into_iter().collect(),
            writes: writes.into_iter().collect(),
            apply: Arc::new(apply),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn reads(&self) -> &BTreeSet<Target> {
        &self.reads
    }

    pub fn writes(&self) -> &BTreeSet<Target> {
        &self.writes
    }

    /// Runs the action against `pre` and checks every assignment against
    /// the declared write set.
    pub fn evaluate(&self, t: f64, pre: &[f64]) -> Result<Vec<Assignment>, ModelError> {
        let assignments = (self.apply)(t, pre);
        for a in &assignments {
            if !self.writes.contains(&a.target()) {
                return Err(ModelError::UndeclaredWrite { action: self.name.clone(), target: a.target() });
            }
        }
        Ok(assignments)
    }
}

impl fmt::Debug for EventAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EventAction")
            .field("name", &self.name)
            .field("reads", &self.reads)
            .field("writes", &self.writes)
            .finish_non_exhaustive()
    }
}

/// Continuous dynamics `dx/dt = f(t, x)` active in one mode.
#[derive(Clone)]
pub struct Mode {
    name: String,
    dynamics: Arc<DynamicsFn>,
}

impl Mode {
    pub fn new<F>(name: impl Into<String>, dynamics: F) -> Self
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self { name: name.into(), dynamics: Arc::new(dynamics) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn derivative_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.dynamics)(t, x, out)
    }

    pub fn derivative(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.derivative_into(t, x, &mut out);
        out
    }
}

impl fmt::Debug for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mode").field("name", &self.name).finish_non_exhaustive()
    }
}

#[derive(Clone)]
pub struct Detector {
    config: DetectorConfig,
    guard: Arc<GuardFn>,
    action: EventAction,
}

impl Detector {
    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn action(&self) -> &EventAction {
        &self.action
    }

    pub fn guard(&self, t: f64, x: &[f64]) -> f64 {
        (self.guard)(t, x)
    }
}

impl fmt::Debug for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Detector").field("config", &self.config).field("action", &self.action).finish_non_exhaustive()
    }
}

/// An immutable hybrid model. Build one with [`HybridModel::builder`].
#[derive(Debug, Clone)]
pub struct HybridModel {
    name: String,
    variables: Vec<String>,
    initial_state: StateVec,
    initial_mode: ModeId,
    modes: Vec<Mode>,
    detectors: Vec<Detector>,
    combined_handlers: BTreeMap<BTreeSet<DetectorId>, EventAction>,
    limbo_handlers: BTreeMap<DetectorId, EventAction>,
}

impl HybridModel {
    pub fn builder(name: impl Into<String>, variables: &[&str]) -> ModelBuilder {
        ModelBuilder {
            name: name.into(),
            variables: variables.iter().map(|s| s.to_string()).collect(),
            initial_state: None,
            initial_mode: ModeId(0),
            modes: Vec::new(),
            detectors: Vec::new(),
            combined_handlers: BTreeMap::new(),
            limbo_handlers: BTreeMap::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_states(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn target_name(&self, target: Target) -> String {
        match target {
            Target::State(i) => self.variables.get(i).cloned().unwrap_or_else(|| format!("x[{i}]")),
            Target::Mode => "mode".to_string(),
        }
    }

    pub fn initial_state(&self) -> &StateVec {
        &self.initial_state
    }

    pub fn initial_mode(&self) -> ModeId {
        self.initial_mode
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mode(&self, id: ModeId) -> Result<&Mode, ModelError> {
        self.modes.get(id.0).ok_or(ModelError::UnknownMode(id))
    }

    pub fn mode_id(&self, name: &str) -> Option<ModeId> {
        self.modes.iter().position(|m| m.name == name).map(ModeId)
    }

    pub fn detectors(&self) -> &[Detector] {
        &self.detectors
    }

    pub fn detector(&self, id: DetectorId) -> Result<&Detector, ModelError> {
        self.detectors.get(id.0).ok_or(ModelError::UnknownDetector(id))
    }

    pub fn detector_id(&self, name: &str) -> Option<DetectorId> {
        self.detectors.iter().position(|d| d.name() == name).map(DetectorId)
    }

    pub fn combined_handler(&self, members: &BTreeSet<DetectorId>) -> Option<&EventAction> {
        self.combined_handlers.get(members)
    }

    pub fn limbo_handler(&self, id: DetectorId) -> Option<&EventAction> {
        self.limbo_handlers.get(&id)
    }
}

pub struct ModelBuilder {
    name: String,
    variables: Vec<String>,
    initial_state: Option<StateVec>,
    initial_mode: ModeId,
    modes: Vec<Mode>,
    detectors: Vec<Detector>,
    combined_handlers: BTreeMap<BTreeSet<DetectorId>, EventAction>,
    limbo_handlers: BTreeMap<DetectorId, EventAction>,
}

impl ModelBuilder {
    pub fn initial_state(mut self, x0: Vec<f64>) -> Self {
        self.initial_state = Some(StateVec::new(x0));
        self
    }

    pub fn initial_mode(mut self, mode: ModeId) -> Self {
        self.initial_mode = mode;
        self
    }

    pub fn mode(&mut self, mode: Mode) -> ModeId {
        self.modes.push(mode);
        ModeId(self.modes.len() - 1)
    }

    pub fn detector<G>(&mut self, config: DetectorConfig, guard: G, action: EventAction) -> DetectorId
    where
        G: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.detectors.push(Detector { config, guard: Arc::new(guard), action });
        DetectorId(self.detectors.len() - 1)
    }

    pub fn combined_handler(&mut self, members: impl IntoIterator<Item = DetectorId>, action: EventAction) {
        self.combined_handlers.insert(members.into_iter().collect(), action);
    }

    pub fn limbo_handler(&mut self, detector: DetectorId, action: EventAction) {
        self.limbo_handlers.insert(detector, action);
    }

    pub fn build(self) -> Result<HybridModel, ModelError> {
        let n = self.variables.len();
        let initial_state = self.initial_state.unwrap_or_else(|| StateVec::zeros(n));
        if initial_state.len() != n {
            return Err(ModelError::StateLength { expected: n, got: initial_state.len() });
        }
        if !initial_state.is_finite() {
            return Err(ModelError::NonFiniteInitialState);
        }
        if self.modes.is_empty() {
            return Err(ModelError::NoModes);
        }
        if self.initial_mode.0 >= self.modes.len() {
            return Err(ModelError::UnknownMode(self.initial_mode));
        }

        let check_action = |action: &EventAction| -> Result<(), ModelError> {
            for t in action.reads.iter().chain(action.writes.iter()) {
                if let Target::State(index) = *t {
                    if index >= n {
                        return Err(ModelError::TargetOutOfRange { owner: action.name.clone(), index, n });
                    }
                }
            }
            Ok(())
        };

        let mut names = BTreeSet::new();
        for d in &self.detectors {
            d.config
                .validate()
                .map_err(|source| ModelError::InvalidDetector { name: d.config.name.clone(), source })?;
            if !names.insert(d.config.name.clone()) {
                return Err(ModelError::DuplicateDetector(d.config.name.clone()));
            }
            check_action(&d.action)?;
        }
        let known = |id: DetectorId| -> Result<(), ModelError> {
            if id.0 < self.detectors.len() {
                Ok(())
            } else {
                Err(ModelError::UnknownDetector(id))
            }
        };
        for (members, action) in &self.combined_handlers {
            if members.len() < 2 {
                return Err(ModelError::CombinedHandlerTooSmall);
            }
            for id in members {
                known(*id)?;
            }
            check_action(action)?;
        }
        for (id, action) in &self.limbo_handlers {
            known(*id)?;
            check_action(action)?;
        }

        Ok(HybridModel {
            name: self.name,
            variables: self.variables,
            initial_state,
            initial_mode: self.initial_mode,
            modes: self.modes,
            detectors: self.detectors,
            combined_handlers: self.combined_handlers,
            limbo_handlers: self.limbo_handlers,
        })
    }
}
