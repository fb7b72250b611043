//! Trace CSV and event-log JSON.
//!
//! CSV columns are `time`, one column per state variable, `status` and
//! `mode`. Floats are written in their shortest round-trip form, so parsing
//! a file gives back the exact values that were simulated.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModeId, StateVec, Target};
use crate::status::StatusTag;
use crate::trace::{EventKind, EventRecord, Sample, Trace, TraceError, WriteRecord};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("unknown variable {0:?} in event log")]
    UnknownVariable(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_trace_csv<W: Write>(out: W, trace: &Trace, variables: &[String]) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend(variables.iter().cloned());
    header.push("status".into());
    header.push("mode".into());
    w.write_record(&header)?;
    for s in trace.samples() {
        let mut row = Vec::with_capacity(variables.len() + 3);
        row.push(num(s.time));
        row.extend(s.state.iter().map(|v| num(*v)));
        row.push(s.status.as_str().to_string());
        row.push(s.mode.0.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_csv_bytes(trace: &Trace, variables: &[String]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, trace, variables).expect("writing to memory cannot fail");
    buf
}

/// Samples parsed from a trace CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub variables: Vec<String>,
    pub samples: Vec<Sample>,
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<TraceTable, FormatError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let n = header.len();
    if n < 3 || &header[0] != "time" || &header[n - 2] != "status" || &header[n - 1] != "mode" {
        return Err(FormatError::Header(header.iter().collect::<Vec<_>>().join(",")));
    }
    let variables: Vec<String> = header.iter().skip(1).take(n - 3).map(str::to_string).collect();
    let mut samples = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let bad = |message: String| FormatError::Row { row, message };
        let float = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        let time = float(&rec[0])?;
        let state = (1..n - 2).map(|k| float(&rec[k])).collect::<Result<Vec<_>, _>>()?;
        let status = StatusTag::parse(&rec[n - 2]).ok_or_else(|| bad(format!("unknown status {:?}", &rec[n - 2])))?;
        let mode = rec[n - 1].parse::<usize>().map_err(|e| bad(format!("mode: {e}")))?;
        samples.push(Sample { time, state: StateVec::new(state), status, mode: ModeId(mode) });
    }
    Ok(TraceTable { variables, samples })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WriteRow {
    var: String,
    pre: f64,
    post: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EventRow {
    t: f64,
    kind: EventKind,
    detector: String,
    writes: Vec<WriteRow>,
}

fn target_name(target: Target, variables: &[String]) -> String {
    match target {
        Target::State(i) => variables[i].clone(),
        Target::Mode => "mode".into(),
    }
}

pub fn write_events_json<W: Write>(out: W, trace: &Trace, variables: &[String]) -> Result<(), FormatError> {
    let rows: Vec<EventRow> = trace
        .events()
        .iter()
        .map(|e| EventRow {
            t: e.time,
            kind: e.kind,
            detector: e.source.clone(),
            writes: e
                .writes
                .iter()
                .map(|w| WriteRow { var: target_name(w.target, variables), pre: w.pre, post: w.post })
                .collect(),
        })
        .collect();
    serde_json::to_writer_pretty(out, &rows)?;
    Ok(())
}

pub fn events_json_bytes(trace: &Trace, variables: &[String]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_events_json(&mut buf, trace, variables).expect("writing to memory cannot fail");
    buf
}

pub fn read_events_json<R: Read>(input: R, variables: &[String]) -> Result<Vec<EventRecord>, FormatError> {
    let rows: Vec<EventRow> = serde_json::from_reader(input)?;
    rows.into_iter()
        .map(|e| {
            let writes = e
                .writes
                .into_iter()
                .map(|w| {
                    let target = if w.var == "mode" {
                        Target::Mode
                    } else {
                        Target::State(
                            variables
                                .iter()
                                .position(|v| *v == w.var)
                                .ok_or_else(|| FormatError::UnknownVariable(w.var.clone()))?,
                        )
                    };
                    Ok(WriteRecord { target, pre: w.pre, post: w.post })
                })
                .collect::<Result<Vec<_>, FormatError>>()?;
            Ok(EventRecord { time: e.t, kind: e.kind, source: e.detector, writes })
        })
        .collect()
}

/// Rebuilds a trace from its CSV and event-log files.
pub fn read_trace<R1: Read, R2: Read>(csv: R1, events: R2) -> Result<(Vec<String>, Trace), FormatError> {
    let table = read_trace_csv(csv)?;
    let events = read_events_json(events, &table.variables)?;
    let trace = Trace::from_parts(table.samples, events)?;
    Ok((table.variables, trace))
}
