//! The simulation main loop.
//!
//! Each step is integrated, every detector threshold is scanned for an
//! endpoint sign change, and the step is cut at the earliest localized
//! crossing. Crossings within `simultaneity_tol` of that one are handled
//! together at the same instant: zero-level crossings form an
//! [`EventBatch`], which is checked for read/write conflicts before any
//! action runs. Limbo and unsafe levels drive the simulator status.
//!
//! Limbo is one simulator-wide status, but its causes are tracked per
//! detector (and per simultaneous batch); the status returns to `Safe` once
//! every open cause is closed.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{check_naive, check_safe, DetectorEvent, NaiveState, Threshold};
use crate::integrate::{self, Bracket, IntegrateError, StepConfig, StepSegment};
use crate::model::{Assignment, DetectorId, EventAction, HybridModel, ModeId, ModelError, StateVec, Target};
use crate::status::{IllegalTransition, SimulatorStatus, StatusEvent, StatusTag, TrapDetail, TrapError, TrapKind};
use crate::trace::{EventKind, EventRecord, Trace, TraceError, WriteRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Safety {
    SafeMode,
    /// Zero levels only, no batching analysis: simultaneous actions run in
    /// declaration order. Exists to reproduce unsafe baselines.
    UnsafeMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub step: StepConfig,
    pub t_end: f64,
    pub simultaneity_tol: f64,
    /// Priority order for sequential application in [`Safety::UnsafeMode`].
    /// Detectors not listed follow in declaration order. Empty means
    /// declaration order.
    pub event_order: Vec<DetectorId>,
    pub safety: Safety,
    /// Maximum event rounds at a single instant.
    pub cascade_limit: usize,
}

impl EngineConfig {
    pub fn new(t_end: f64) -> Self {
        let step = StepConfig::default();
        Self {
            step,
            t_end,
            simultaneity_tol: 2.0 * step.t_tol,
            event_order: Vec::new(),
            safety: Safety::SafeMode,
            cascade_limit: 100,
        }
    }

    pub fn with_safety(mut self, safety: Safety) -> Self {
        self.safety = safety;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.step.validate().map_err(|e| EngineError::InvalidConfig(e.to_string()))?;
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(EngineError::InvalidConfig(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !(self.simultaneity_tol >= 2.0 * self.step.t_tol) {
            return Err(EngineError::InvalidConfig(format!(
                "simultaneity_tol ({}) must be at least 2 * t_tol ({})",
                self.simultaneity_tol,
                2.0 * self.step.t_tol
            )));
        }
        if self.cascade_limit == 0 {
            return Err(EngineError::InvalidConfig("cascade_limit must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Transition(#[from] IllegalTransition),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error("event order names unknown detector {0:?}")]
    UnknownDetectorInOrder(DetectorId),
}

/// A localized zero-level crossing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub detector: DetectorId,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    Independent,
    CombinedHandled,
    /// Contested variables: written by one member and read or written by
    /// another.
    Conflict(Vec<Target>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventBatch {
    /// Earliest member crossing.
    pub t_batch: f64,
    pub members: Vec<Crossing>,
    pub verdict: Verdict,
}

impl EventBatch {
    pub fn detector_ids(&self) -> BTreeSet<DetectorId> {
        self.members.iter().map(|c| c.detector).collect()
    }

    pub fn is_simultaneous(&self) -> bool {
        self.members.len() > 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Terminal {
    ReachedTEnd,
    Trapped(TrapError),
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub trace: Trace,
    pub terminal: Terminal,
    pub status: SimulatorStatus,
    /// Every batch handled during the run, singletons included.
    pub batches: Vec<EventBatch>,
    pub final_state: StateVec,
    pub final_mode: ModeId,
}

impl SimOutcome {
    pub fn trap(&self) -> Option<&TrapError> {
        match &self.terminal {
            Terminal::Trapped(e) => Some(e),
            Terminal::ReachedTEnd => None,
        }
    }
}

/// Contested targets among a set of actions: every write of one action that
/// another action reads or writes.
pub fn contested_targets<'a>(actions: impl IntoIterator<Item = &'a EventAction>) -> Vec<Target> {
    let actions: Vec<&EventAction> = actions.into_iter().collect();
    let mut contested = BTreeSet::new();
    for (i, a) in actions.iter().enumerate() {
        for b in &actions[i + 1..] {
            contested.extend(a.writes().intersection(b.writes()).copied());
            contested.extend(a.writes().intersection(b.reads()).copied());
            contested.extend(b.writes().intersection(a.reads()).copied());
        }
    }
    contested.into_iter().collect()
}

/// Verdict for a set of simultaneously firing detectors.
pub fn analyze(members: &BTreeSet<DetectorId>, model: &HybridModel) -> Result<Verdict, ModelError> {
    let actions = members.iter().map(|id| model.detector(*id).map(|d| d.action())).collect::<Result<Vec<_>, _>>()?;
    let contested = contested_targets(actions);
    Ok(if contested.is_empty() {
        Verdict::Independent
    } else if model.combined_handler(members).is_some() {
        Verdict::CombinedHandled
    } else {
        Verdict::Conflict(contested)
    })
}

/// Greedy clustering of crossings sorted by time: a crossing joins the
/// current batch iff it lies within `tol` of the batch's earliest member.
pub fn batch_events(crossings: &[Crossing], tol: f64, model: &HybridModel) -> Result<Vec<EventBatch>, ModelError> {
    let mut groups: Vec<Vec<Crossing>> = Vec::new();
    for c in crossings {
        match groups.last_mut() {
            Some(g) if c.time - g[0].time <= tol => g.push(*c),
            _ => groups.push(vec![*c]),
        }
    }
    groups
        .into_iter()
        .map(|members| {
            let ids = members.iter().map(|c| c.detector).collect();
            Ok(EventBatch { t_batch: members[0].time, verdict: analyze(&ids, model)?, members })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Resolution {
    Assign(Vec<Assignment>),
    Trap(TrapError),
}

fn conflict_trap(batch: &EventBatch, model: &HybridModel, contested: &[Target]) -> TrapError {
    TrapError {
        kind: TrapKind::UnhandledSimultaneity,
        time: batch.t_batch,
        detail: TrapDetail::Conflict {
            detectors: batch
                .members
                .iter()
                .map(|c| model.detector(c.detector).map(|d| d.name().to_string()).unwrap_or_default())
                .collect(),
            contested: contested.to_vec(),
            contested_names: contested.iter().map(|t| model.target_name(*t)).collect(),
        },
    }
}

/// Safe-mode resolution of a batch. Every member action reads `pre_state`.
pub fn resolve_batch(
    batch: &EventBatch,
    model: &HybridModel,
    t: f64,
    pre_state: &[f64],
) -> Result<Resolution, ModelError> {
    match &batch.verdict {
        Verdict::Independent => {
            let mut all = Vec::new();
            for c in &batch.members {
                all.extend(model.detector(c.detector)?.action().evaluate(t, pre_state)?);
            }
            Ok(Resolution::Assign(all))
        }
        Verdict::CombinedHandled => {
            let handler = model
                .combined_handler(&batch.detector_ids())
                .expect("CombinedHandled verdict implies a registered handler");
            Ok(Resolution::Assign(handler.evaluate(t, pre_state)?))
        }
        Verdict::Conflict(contested) => Ok(Resolution::Trap(conflict_trap(batch, model, contested))),
    }
}

/// Batch members sorted by their position in `order`; unlisted detectors
/// follow in declaration order.
pub fn ordered_members(batch: &EventBatch, order: &[DetectorId]) -> Vec<DetectorId> {
    let mut ids: Vec<DetectorId> = batch.detector_ids().into_iter().collect();
    ids.sort_by_key(|id| (order.iter().position(|o| o == id).unwrap_or(usize::MAX), *id));
    ids
}

/// Sequential application in the given order: every action reads
/// `pre_state`, later writes overwrite earlier ones. Returns one assignment
/// per written target.
pub fn apply_unsafe_order(
    batch: &EventBatch,
    model: &HybridModel,
    t: f64,
    pre_state: &[f64],
    order: &[DetectorId],
) -> Result<Vec<Assignment>, ModelError> {
    let mut last: Vec<Assignment> = Vec::new();
    for id in ordered_members(batch, order) {
        for a in model.detector(id)?.action().evaluate(t, pre_state)? {
            last.retain(|b| b.target() != a.target());
            last.push(a);
        }
    }
    last.sort_by_key(|a| a.target());
    Ok(last)
}

/// Runs `model` from t = 0 to `cfg.t_end` or until a trap.
pub fn simulate(model: &HybridModel, cfg: &EngineConfig) -> Result<SimOutcome, EngineError> {
    cfg.validate()?;
    for id in &cfg.event_order {
        if id.0 >= model.detectors().len() {
            return Err(EngineError::UnknownDetectorInOrder(*id));
        }
    }
    Run::new(model, cfg).execute()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum LimboCause {
    Detector(DetectorId),
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Edge {
    Zero(Threshold),
    Exit,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    detector: DetectorId,
    edge: Edge,
    bracket: Bracket,
}

struct Run<'a> {
    model: &'a HybridModel,
    cfg: &'a EngineConfig,
    t: f64,
    x: StateVec,
    mode: ModeId,
    status: SimulatorStatus,
    open: BTreeSet<LimboCause>,
    naive: Vec<Option<NaiveState>>,
    trace: Trace,
    batches: Vec<EventBatch>,
}

enum Flow {
    Continue,
    Stop(TrapError),
}

impl<'a> Run<'a> {
    fn new(model: &'a HybridModel, cfg: &'a EngineConfig) -> Self {
        let x = model.initial_state().clone();
        let naive = model
            .detectors()
            .iter()
            .map(|d| d.config().naive_levels().map(|l| l.initial_state(d.guard(0.0, &x))))
            .collect();
        Self {
            model,
            cfg,
            t: 0.0,
            x,
            mode: model.initial_mode(),
            status: SimulatorStatus::Safe,
            open: BTreeSet::new(),
            naive,
            trace: Trace::new(),
            batches: Vec::new(),
        }
    }

    fn safe_mode(&self) -> bool {
        self.cfg.safety == Safety::SafeMode
    }

    fn detector_ids(&self) -> impl Iterator<Item = DetectorId> {
        (0..self.model.detectors().len()).map(DetectorId)
    }

    fn name(&self, id: DetectorId) -> String {
        self.model.detectors()[id.0].name().to_string()
    }

    fn execute(mut self) -> Result<SimOutcome, EngineError> {
        self.record()?;
        if let Flow::Stop(trap) = self.initial_regions()? {
            return self.finish(Some(trap));
        }

        let t_end = self.cfg.t_end;
        while self.t < t_end {
            let t1 = if t_end - self.t <= self.cfg.step.dt { t_end } else { self.t + self.cfg.step.dt };
            let mode = self.model.mode(self.mode)?;
            let seg = match StepSegment::advance(mode, self.mode, self.t, &self.x, t1) {
                Ok(seg) => seg,
                Err(IntegrateError::NonFiniteResult { .. }) => {
                    let trap = self.non_finite_trap(t1)?;
                    return self.finish(Some(trap));
                }
                Err(e) => return Err(e.into()),
            };

            let candidates = self.scan(&seg)?;
            if candidates.is_empty() {
                self.update_arming(&seg.x0, seg.t1, &seg.x1);
                self.t = seg.t1;
                self.x = seg.x1.clone();
                self.record()?;
                continue;
            }
            if let Flow::Stop(trap) = self.instant(&seg, &candidates)? {
                return self.finish(Some(trap));
            }
        }

        if let SimulatorStatus::Limbo { since } = self.status {
            let detector = self
                .open
                .iter()
                .find_map(|c| match c {
                    LimboCause::Detector(id) => Some(self.name(*id)),
                    LimboCause::Batch => None,
                })
                .unwrap_or_default();
            let trap =
                TrapError { kind: TrapKind::UnhandledLimbo, time: self.t, detail: TrapDetail::Detector { detector } };
            debug_assert!(since <= self.t);
            self.enter_unsafe(trap.clone())?;
            return self.finish(Some(trap));
        }
        self.finish(None)
    }

    fn finish(self, trap: Option<TrapError>) -> Result<SimOutcome, EngineError> {
        let terminal = match trap {
            Some(t) => Terminal::Trapped(t),
            None => Terminal::ReachedTEnd,
        };
        Ok(SimOutcome {
            trace: self.trace,
            terminal,
            status: self.status,
            batches: self.batches,
            final_state: self.x,
            final_mode: self.mode,
        })
    }

    fn record(&mut self) -> Result<(), TraceError> {
        self.trace.record(self.t, self.x.clone(), self.status.tag(), self.mode)
    }

    fn log(&mut self, time: f64, kind: EventKind, source: String, writes: Vec<WriteRecord>) -> Result<(), TraceError> {
        self.trace.log(EventRecord { time, kind, source, writes })
    }

    fn step_status(&mut self, event: StatusEvent) -> Result<(), IllegalTransition> {
        self.status = self.status.transition(event)?;
        Ok(())
    }

    fn open_limbo(&mut self, cause: LimboCause, time: f64) -> Result<(), IllegalTransition> {
        self.open.insert(cause);
        if self.status.tag() == StatusTag::Safe {
            self.step_status(StatusEvent::LimboEntered { time })?;
        }
        Ok(())
    }

    fn close_limbo(&mut self, cause: LimboCause, time: f64, source: String) -> Result<(), EngineError> {
        if self.open.remove(&cause) && self.open.is_empty() {
            self.step_status(StatusEvent::RecoveredSafe)?;
            self.log(time, EventKind::Recovered, source, Vec::new())?;
        }
        Ok(())
    }

    /// Edge d, passing through limbo first if the simulator is still safe.
    fn enter_unsafe(&mut self, trap: TrapError) -> Result<(), EngineError> {
        if self.status.tag() == StatusTag::Safe {
            self.step_status(StatusEvent::LimboEntered { time: trap.time })?;
        }
        let time = trap.time;
        let source = trap.detail.to_string();
        self.step_status(StatusEvent::UnsafeEntered(trap))?;
        self.log(time, EventKind::Trapped, source, Vec::new())?;
        Ok(())
    }

    /// Opens limbo (and possibly traps) for detectors that start inside the
    /// limbo or unsafe region.
    fn initial_regions(&mut self) -> Result<Flow, EngineError> {
        if !self.safe_mode() {
            return Ok(Flow::Continue);
        }
        let mut events: Vec<(DetectorId, Vec<DetectorEvent>)> = Vec::new();
        for id in self.detector_ids() {
            let d = &self.model.detectors()[id.0];
            if let Some(levels) = d.config().safe_levels() {
                let g = d.guard(0.0, &self.x);
                let mut ev = Vec::new();
                if levels.crossed(Threshold::Limbo, g) {
                    ev.push(DetectorEvent::LimboEntered);
                }
                if levels.crossed(Threshold::Unsafe, g) {
                    ev.push(DetectorEvent::UnsafeEntered);
                }
                if !ev.is_empty() {
                    events.push((id, ev));
                }
            }
        }
        if events.is_empty() {
            return Ok(Flow::Continue);
        }
        let pre = self.x.clone();
        let mut writes = Vec::new();
        let flow = self.handle_round(&events, &[], None, &pre, &mut writes)?;
        if !writes.is_empty() && matches!(flow, Flow::Continue) {
            self.record()?;
        }
        Ok(flow)
    }

    /// Crossing candidates in the segment, from endpoint guard values.
    fn scan(&self, seg: &StepSegment) -> Result<Vec<Candidate>, EngineError> {
        let mut out = Vec::new();
        let step = &self.cfg.step;
        for id in self.detector_ids() {
            let d = &self.model.detectors()[id.0];
            let guard = |t: f64, x: &[f64]| d.guard(t, x);
            if let Some(levels) = d.config().safe_levels() {
                let thresholds: &[Threshold] = if self.safe_mode() {
                    &[Threshold::Zero, Threshold::Limbo, Threshold::Unsafe]
                } else {
                    &[Threshold::Zero]
                };
                for &th in thresholds {
                    if let Some(bracket) = integrate::bisect(guard, seg, step, |g| levels.crossed(th, g))? {
                        out.push(Candidate { detector: id, edge: Edge::Zero(th), bracket });
                    }
                }
                if self.safe_mode() {
                    if let Some(bracket) =
                        integrate::bisect(guard, seg, step, |g| !levels.crossed(Threshold::Limbo, g))?
                    {
                        out.push(Candidate { detector: id, edge: Edge::Exit, bracket });
                    }
                }
            } else if let (Some(levels), Some(state)) = (d.config().naive_levels(), self.naive[id.0]) {
                if state.armed {
                    if let Some(bracket) = integrate::bisect(guard, seg, step, |g| levels.depth(g) >= 0.0)? {
                        out.push(Candidate { detector: id, edge: Edge::Zero(Threshold::Zero), bracket });
                    }
                }
            }
        }
        Ok(out)
    }

    fn update_arming(&mut self, x_pre: &[f64], t: f64, x_post: &[f64]) {
        let t_pre = self.t;
        for (i, d) in self.model.detectors().iter().enumerate() {
            if let (Some(levels), Some(state)) = (d.config().naive_levels(), self.naive[i]) {
                let (_, next) = check_naive(&levels, state, d.guard(t_pre, x_pre), d.guard(t, x_post));
                self.naive[i] = Some(next);
            }
        }
    }

    /// Detector events for a move from `pre` at `t_pre` to `post` at `t`.
    /// Naive detector states are advanced.
    fn detector_events(
        &mut self,
        t_pre: f64,
        pre: &[f64],
        t: f64,
        post: &[f64],
    ) -> Vec<(DetectorId, Vec<DetectorEvent>)> {
        let safe_mode = self.safe_mode();
        let mut out = Vec::new();
        for id in self.detector_ids() {
            let d = &self.model.detectors()[id.0];
            let (g0, g1) = (d.guard(t_pre, pre), d.guard(t, post));
            let events = if let Some(levels) = d.config().safe_levels() {
                let mut ev = check_safe(&levels, g0, g1);
                if !safe_mode {
                    ev.retain(|e| *e == DetectorEvent::ZeroCrossed);
                }
                ev
            } else if let (Some(levels), Some(state)) = (d.config().naive_levels(), self.naive[id.0]) {
                let (fired, next) = check_naive(&levels, state, g0, g1);
                self.naive[id.0] = Some(next);
                if fired {
                    vec![DetectorEvent::ZeroCrossed]
                } else {
                    Vec::new()
                }
            } else {
                Vec::new()
            };
            if !events.is_empty() {
                out.push((id, events));
            }
        }
        out
    }

    /// Handles every crossing within the simultaneity tolerance of the
    /// earliest candidate at one instant.
    fn instant(&mut self, seg: &StepSegment, candidates: &[Candidate]) -> Result<Flow, EngineError> {
        let t_min = candidates.iter().map(|c| c.bracket.hi).fold(f64::INFINITY, f64::min);
        let near: Vec<Candidate> =
            candidates.iter().copied().filter(|c| c.bracket.hi - t_min <= self.cfg.simultaneity_tol).collect();
        let t_cut = near.iter().map(|c| c.bracket.hi).fold(t_min, f64::max);
        let x_cut = integrate::interpolate(seg, t_cut)?;

        let events = self.detector_events(seg.t0, &seg.x0, t_cut, &x_cut);

        // nothing may be recorded past an unsafe-level crossing
        if self.safe_mode() {
            if let Some((id, _)) = events.iter().find(|(_, ev)| ev.contains(&DetectorEvent::UnsafeEntered)) {
                let id = *id;
                let bracket = candidates
                    .iter()
                    .find(|c| c.detector == id && c.edge == Edge::Zero(Threshold::Unsafe))
                    .map(|c| c.bracket)
                    .unwrap_or(Bracket { lo: t_cut, hi: t_cut });
                if bracket.lo > self.t {
                    self.t = bracket.lo;
                    self.x = integrate::interpolate(seg, bracket.lo)?;
                    self.record()?;
                }
                let name = self.name(id);
                let time = bracket.hi;
                if !self.open.contains(&LimboCause::Detector(id)) {
                    self.log(time, EventKind::LimboEntered, name.clone(), Vec::new())?;
                }
                self.log(time, EventKind::UnsafeEntered, name.clone(), Vec::new())?;
                let trap = TrapError {
                    kind: TrapKind::UnsafeLevelCrossed,
                    time,
                    detail: TrapDetail::Detector { detector: name },
                };
                self.enter_unsafe(trap.clone())?;
                return Ok(Flow::Stop(trap));
            }
        }

        self.t = t_cut;
        self.x = x_cut;
        self.record()?;
        if events.is_empty() {
            return Ok(Flow::Continue);
        }

        let crossing_time = |id: DetectorId| {
            near.iter()
                .find(|c| c.detector == id && c.edge == Edge::Zero(Threshold::Zero))
                .map(|c| c.bracket.hi)
                .unwrap_or(t_cut)
        };
        let times: Vec<(DetectorId, f64)> = events.iter().map(|(id, _)| (*id, crossing_time(*id))).collect();

        let mut writes = Vec::new();
        let mut round_events = events;
        let mut rounds = 0;
        loop {
            let pre = self.x.clone();
            if let Flow::Stop(trap) = self.handle_round(&round_events, &times, Some(rounds), &pre, &mut writes)? {
                return Ok(Flow::Stop(trap));
            }
            if let Some(i) = self.x.first_non_finite() {
                let trap = TrapError {
                    kind: TrapKind::NonFiniteState,
                    time: self.t,
                    detail: TrapDetail::NonFinite { variable: Some(self.model.target_name(Target::State(i))) },
                };
                self.enter_unsafe(trap.clone())?;
                return Ok(Flow::Stop(trap));
            }
            if self.x == pre {
                break;
            }
            let (t, post) = (self.t, self.x.clone());
            round_events = self.detector_events(t, &pre, t, &post);
            if round_events.is_empty() {
                break;
            }
            rounds += 1;
            if rounds >= self.cfg.cascade_limit {
                let trap = TrapError {
                    kind: TrapKind::NonFiniteState,
                    time: self.t,
                    detail: TrapDetail::EventCascade { rounds },
                };
                self.enter_unsafe(trap.clone())?;
                return Ok(Flow::Stop(trap));
            }
        }

        if !writes.is_empty() {
            self.record()?;
        }
        Ok(Flow::Continue)
    }

    /// One round of events at the current instant. Actions of the batch all
    /// read `pre`; limbo handlers run afterwards on the updated state.
    fn handle_round(
        &mut self,
        events: &[(DetectorId, Vec<DetectorEvent>)],
        times: &[(DetectorId, f64)],
        round: Option<usize>,
        pre: &StateVec,
        writes: &mut Vec<WriteRecord>,
    ) -> Result<Flow, EngineError> {
        let t = self.t;
        // cascaded rounds happen at the instant itself
        let time_of = |id: DetectorId| {
            if round == Some(0) {
                times.iter().find(|(d, _)| *d == id).map(|(_, t)| *t).unwrap_or(t)
            } else {
                t
            }
        };

        if self.safe_mode() {
            if let Some((id, _)) = events.iter().find(|(_, ev)| ev.contains(&DetectorEvent::UnsafeEntered)) {
                let name = self.name(*id);
                if !self.open.contains(&LimboCause::Detector(*id)) {
                    self.log(t, EventKind::LimboEntered, name.clone(), Vec::new())?;
                }
                self.log(t, EventKind::UnsafeEntered, name.clone(), Vec::new())?;
                let trap = TrapError {
                    kind: TrapKind::UnsafeLevelCrossed,
                    time: t,
                    detail: TrapDetail::Detector { detector: name },
                };
                self.enter_unsafe(trap.clone())?;
                return Ok(Flow::Stop(trap));
            }
        }

        let mut members: Vec<Crossing> = events
            .iter()
            .filter(|(_, ev)| ev.contains(&DetectorEvent::ZeroCrossed))
            .map(|(id, _)| Crossing { detector: *id, time: time_of(*id) })
            .collect();
        members.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.detector.cmp(&b.detector)));

        if !members.is_empty() {
            // all members are within tolerance of each other, so this is one batch
            let ids: BTreeSet<DetectorId> = members.iter().map(|c| c.detector).collect();
            let batch = EventBatch { t_batch: members[0].time, verdict: analyze(&ids, self.model)?, members };
            self.batches.push(batch.clone());
            if let Flow::Stop(trap) = self.apply_batch(&batch, pre, writes)? {
                return Ok(Flow::Stop(trap));
            }
        }

        if !self.safe_mode() {
            return Ok(Flow::Continue);
        }
        for (id, ev) in events {
            let name = self.name(*id);
            for e in ev {
                match e {
                    DetectorEvent::LimboEntered => {
                        self.log(t, EventKind::LimboEntered, name.clone(), Vec::new())?;
                        self.open_limbo(LimboCause::Detector(*id), t)?;
                        if let Some(handler) = self.model.limbo_handler(*id) {
                            let assignments = handler.evaluate(t, &self.x)?;
                            let w = self.apply(&assignments)?;
                            writes.extend(w.iter().cloned());
                            self.log(t, EventKind::LimboHandler, handler.name().to_string(), w)?;
                            self.close_limbo(LimboCause::Detector(*id), t, name.clone())?;
                        }
                    }
                    DetectorEvent::LimboExited => {
                        self.log(t, EventKind::LimboExited, name.clone(), Vec::new())?;
                        self.close_limbo(LimboCause::Detector(*id), t, name.clone())?;
                    }
                    DetectorEvent::ZeroCrossed | DetectorEvent::UnsafeEntered => {}
                }
            }
        }
        Ok(Flow::Continue)
    }

    fn apply_batch(
        &mut self,
        batch: &EventBatch,
        pre: &StateVec,
        writes: &mut Vec<WriteRecord>,
    ) -> Result<Flow, EngineError> {
        let t = self.t;
        let label = batch.members.iter().map(|c| self.name(c.detector)).collect::<Vec<_>>().join("+");

        if !self.safe_mode() {
            // declaration-order application, each member logged with its own writes
            for id in ordered_members(batch, &self.cfg.event_order) {
                let assignments = self.model.detector(id)?.action().evaluate(t, pre)?;
                let w = self.apply(&assignments)?;
                writes.extend(w.iter().cloned());
                self.log(t, EventKind::ZeroCrossing, self.name(id), w)?;
            }
            if self.status.tag() == StatusTag::Safe {
                self.step_status(StatusEvent::ZeroHandled)?;
            }
            return Ok(Flow::Continue);
        }

        match resolve_batch(batch, self.model, t, pre)? {
            Resolution::Trap(trap) => {
                self.log(t, EventKind::Simultaneity, label, Vec::new())?;
                self.open_limbo(LimboCause::Batch, batch.t_batch)?;
                self.enter_unsafe(trap.clone())?;
                Ok(Flow::Stop(trap))
            }
            Resolution::Assign(assignments) => {
                if batch.verdict == Verdict::CombinedHandled {
                    self.log(t, EventKind::Simultaneity, label.clone(), Vec::new())?;
                    self.open_limbo(LimboCause::Batch, batch.t_batch)?;
                    let w = self.apply(&assignments)?;
                    writes.extend(w.iter().cloned());
                    let handler = self.model.combined_handler(&batch.detector_ids()).map(|h| h.name().to_string());
                    self.log(t, EventKind::CombinedHandler, handler.unwrap_or(label.clone()), w)?;
                    self.close_limbo(LimboCause::Batch, t, label)?;
                } else {
                    // independent: per-member logging, assignments are disjoint
                    for c in &batch.members {
                        let own = self.model.detector(c.detector)?.action().evaluate(t, pre)?;
                        let w = self.apply(&own)?;
                        writes.extend(w.iter().cloned());
                        self.log(t, EventKind::ZeroCrossing, self.name(c.detector), w)?;
                    }
                    if self.status.tag() == StatusTag::Safe {
                        self.step_status(StatusEvent::ZeroHandled)?;
                    }
                }
                Ok(Flow::Continue)
            }
        }
    }

    fn apply(&mut self, assignments: &[Assignment]) -> Result<Vec<WriteRecord>, ModelError> {
        let mut out = Vec::with_capacity(assignments.len());
        for a in assignments {
            match *a {
                Assignment::State(i, v) => {
                    out.push(WriteRecord { target: Target::State(i), pre: self.x[i], post: v });
                    self.x.as_mut_slice()[i] = v;
                }
                Assignment::Mode(m) => {
                    self.model.mode(m)?;
                    out.push(WriteRecord { target: Target::Mode, pre: self.mode.0 as f64, post: m.0 as f64 });
                    self.mode = m;
                }
            }
        }
        Ok(out)
    }

    /// Localizes the first non-finite state by bisecting the step length.
    fn non_finite_trap(&mut self, t1: f64) -> Result<TrapError, EngineError> {
        let mode = self.model.mode(self.mode)?;
        let (t0, x0) = (self.t, self.x.clone());
        let finite = |h: f64| integrate::step(|t, x, dx| mode.derivative_into(t, x, dx), t0, &x0, h).is_ok();
        let (mut lo, mut hi) = (0.0, t1 - t0);
        while hi - lo > self.cfg.step.t_tol {
            let mid = lo + 0.5 * (hi - lo);
            if mid <= lo || mid >= hi {
                break;
            }
            if finite(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let trap = TrapError {
            kind: TrapKind::NonFiniteState,
            time: t0 + hi,
            detail: TrapDetail::NonFinite { variable: None },
        };
        self.enter_unsafe(trap.clone())?;
        Ok(trap)
    }
}
