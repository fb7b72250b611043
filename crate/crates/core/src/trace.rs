//! Time-ordered samples and event log of one simulation run.
//!
//! Sample times strictly increase, except at an event instant where exactly
//! one pre-event and one post-event sample share the same time. A second
//! sample at the same time is only accepted once an event has been logged
//! at that time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModeId, StateVec, Target};
use crate::status::StatusTag;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time: f64,
    pub state: StateVec,
    pub status: StatusTag,
    pub mode: ModeId,
}

impl Sample {
    /// Value of a read/write target in this sample. The mode is reported as
    /// its index.
    pub fn value(&self, target: Target) -> f64 {
        match target {
            Target::State(i) => self.state[i],
            Target::Mode => self.mode.0 as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// A detector's zero level fired and its action was applied.
    ZeroCrossing,
    /// Several detectors fired within the simultaneity tolerance.
    Simultaneity,
    CombinedHandler,
    LimboEntered,
    LimboHandler,
    LimboExited,
    UnsafeEntered,
    /// The simulator returned from limbo to safe.
    Recovered,
    Trapped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WriteRecord {
    pub target: Target,
    pub pre: f64,
    pub post: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    /// Detector or handler that produced the event.
    pub source: String,
    pub writes: Vec<WriteRecord>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("time regression: {time} is before the last sample at {last}")]
    TimeRegression { time: f64, last: f64 },
    #[error("second sample at t = {time} without an intervening event")]
    MissingEvent { time: f64 },
    #[error("more than one pre/post pair at t = {time}")]
    DuplicateInstant { time: f64 },
    #[error("event at t = {time} logged before the previous event at {last}")]
    EventRegression { time: f64, last: f64 },
    #[error("sample at t = {time} has {got} values, trace has {expected}")]
    Width { time: f64, expected: usize, got: usize },
    #[error("event at t = {time} writes {target:?} but the samples do not show it")]
    UnreflectedWrite { time: f64, target: Target },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    samples: Vec<Sample>,
    events: Vec<EventRecord>,
    /// Number of events logged when the last sample was recorded.
    #[serde(skip)]
    events_at_last_sample: usize,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a trace from recorded parts, replaying every append rule.
    pub fn from_parts(samples: Vec<Sample>, events: Vec<EventRecord>) -> Result<Self, TraceError> {
        let mut trace = Trace::new();
        let mut pending = events.into_iter().peekable();
        for s in samples {
            // events at an instant sit between its pre and post sample
            let is_post = trace.last_sample().is_some_and(|l| l.time == s.time);
            while let Some(e) = pending.next_if(|e| e.time < s.time || (is_post && e.time == s.time)) {
                trace.log(e)?;
            }
            trace.record(s.time, s.state, s.status, s.mode)?;
        }
        for e in pending {
            trace.log(e)?;
        }
        Ok(trace)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn last_sample(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn record(&mut self, time: f64, state: StateVec, status: StatusTag, mode: ModeId) -> Result<(), TraceError> {
        if let Some(first) = self.samples.first() {
            if state.len() != first.state.len() {
                return Err(TraceError::Width { time, expected: first.state.len(), got: state.len() });
            }
        }
        if let Some(last) = self.samples.last() {
            if time < last.time {
                return Err(TraceError::TimeRegression { time, last: last.time });
            }
            if time == last.time {
                let n = self.samples.len();
                if n >= 2 && self.samples[n - 2].time == time {
                    return Err(TraceError::DuplicateInstant { time });
                }
                if !self.events[self.events_at_last_sample..].iter().any(|e| e.time == time) {
                    return Err(TraceError::MissingEvent { time });
                }
            }
        }
        self.samples.push(Sample { time, state, status, mode });
        self.events_at_last_sample = self.events.len();
        Ok(())
    }

    pub fn log(&mut self, event: EventRecord) -> Result<(), TraceError> {
        if let Some(last) = self.events.last() {
            if event.time < last.time {
                return Err(TraceError::EventRegression { time: event.time, last: last.time });
            }
        }
        self.events.push(event);
        Ok(())
    }

    /// Whether the run ended in a trap.
    pub fn is_trapped(&self) -> bool {
        self.events.last().is_some_and(|e| e.kind == EventKind::Trapped)
    }

    /// Replays the trace invariants: time ordering, pre/post pairing and that
    /// every logged write shows up as a jump between the pre and post sample
    /// of its instant. The final instant of a trapped run may hold writes
    /// with no post sample, since nothing is recorded past a trap.
    pub fn validate(&self) -> Result<(), TraceError> {
        Trace::from_parts(self.samples.clone(), self.events.clone())?;

        let trap_time = if self.is_trapped() { self.events.last().map(|e| e.time) } else { None };
        let mut by_time: BTreeMap<u64, Vec<&EventRecord>> = BTreeMap::new();
        for e in self.events.iter().filter(|e| !e.writes.is_empty()) {
            by_time.entry(e.time.to_bits()).or_default().push(e);
        }
        for (bits, events) in by_time {
            let time = f64::from_bits(bits);
            let at: Vec<&Sample> = self.samples.iter().filter(|s| s.time == time).collect();
            if at.len() != 2 {
                if trap_time.is_some_and(|t| t <= time) {
                    continue;
                }
                let target = events[0].writes[0].target;
                return Err(TraceError::UnreflectedWrite { time, target });
            }
            let (pre, post) = (at[0], at[1]);
            let mut first: BTreeMap<Target, f64> = BTreeMap::new();
            let mut last: BTreeMap<Target, f64> = BTreeMap::new();
            for w in events.iter().flat_map(|e| e.writes.iter()) {
                first.entry(w.target).or_insert(w.pre);
                last.insert(w.target, w.post);
            }
            for (target, value) in first {
                if pre.value(target).to_bits() != value.to_bits() {
                    return Err(TraceError::UnreflectedWrite { time, target });
                }
            }
            for (target, value) in last {
                if post.value(target).to_bits() != value.to_bits() {
                    return Err(TraceError::UnreflectedWrite { time, target });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(v: f64) -> StateVec {
        StateVec::new(vec![v])
    }

    fn event(time: f64, pre: f64, post: f64) -> EventRecord {
        EventRecord {
            time,
            kind: EventKind::ZeroCrossing,
            source: "d".into(),
            writes: vec![WriteRecord { target: Target::State(0), pre, post }],
        }
    }

    #[test]
    fn first_sample() {
        let mut t = Trace::new();
        t.record(0.0, x(3.0), StatusTag::Safe, ModeId(0)).unwrap();
        assert_eq!(t.samples().len(), 1);
    }

    #[test]
    fn pre_post_pair_needs_event() {
        let mut t = Trace::new();
        t.record(0.0, x(1.0), StatusTag::Safe, ModeId(0)).unwrap();
        t.record(1.0, x(2.0), StatusTag::Safe, ModeId(0)).unwrap();
        assert_eq!(t.record(1.0, x(3.0), StatusTag::Safe, ModeId(0)), Err(TraceError::MissingEvent { time: 1.0 }));
        t.log(event(1.0, 2.0, 3.0)).unwrap();
        t.record(1.0, x(3.0), StatusTag::Safe, ModeId(0)).unwrap();
        t.validate().unwrap();
        t.log(event(1.0, 3.0, 4.0)).unwrap();
        assert_eq!(t.record(1.0, x(4.0), StatusTag::Safe, ModeId(0)), Err(TraceError::DuplicateInstant { time: 1.0 }));
    }

    #[test]
    fn time_regression() {
        let mut t = Trace::new();
        t.record(1.0, x(1.0), StatusTag::Safe, ModeId(0)).unwrap();
        assert_eq!(
            t.record(0.5, x(1.0), StatusTag::Safe, ModeId(0)),
            Err(TraceError::TimeRegression { time: 0.5, last: 1.0 })
        );
    }

    #[test]
    fn validate_catches_missing_jump() {
        let mut t = Trace::new();
        t.record(0.0, x(1.0), StatusTag::Safe, ModeId(0)).unwrap();
        t.log(event(0.0, 1.0, 5.0)).unwrap();
        t.record(0.0, x(1.0), StatusTag::Safe, ModeId(0)).unwrap();
        assert!(matches!(t.validate(), Err(TraceError::UnreflectedWrite { .. })));
    }
}
