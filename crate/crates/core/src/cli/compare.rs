//! Runs one spec under several event orders and compares the traces.

use std::collections::BTreeMap;
use std::thread;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{io, resolve_order, CliError, RunSpec};
use crate::engine::{simulate, EngineError, Safety, SimOutcome, Verdict};
use crate::model::HybridModel;
use crate::trace::{Sample, Trace};

#[derive(Debug, Error)]
pub enum CompareError {
    #[error(transparent)]
    Cli(#[from] CliError),
    #[error("variant {0:?} applies simultaneous events through analysis, not in a fixed order")]
    NotOrdered(String),
    #[error("no permutations given")]
    NoPermutations,
    /// Two runs of the same order differed: the engine itself is
    /// nondeterministic.
    #[error("repeat run of order [{order}] did not reproduce the first run")]
    RepeatRunMismatch { order: String },
}

impl From<EngineError> for CompareError {
    fn from(e: EngineError) -> Self {
        CompareError::Cli(e.into())
    }
}

impl CompareError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CompareError::Cli(e) => e.exit_code(),
            CompareError::NotOrdered(_) | CompareError::NoPermutations => super::EXIT_USAGE,
            CompareError::RepeatRunMismatch { .. } => super::EXIT_REPEAT_MISMATCH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationRun {
    pub order: Vec<String>,
    /// SHA-256 of the trace CSV.
    pub digest: String,
    /// Trap kind, if the run trapped.
    pub trapped: Option<String>,
    pub final_time: f64,
    pub final_state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum OrderVerdict {
    OrderInvariant,
    OrderSensitive {
        /// Earliest sample time at which any permutation departs from the
        /// first one.
        time: f64,
        /// Columns in order of first divergence.
        variables: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeterminismReport {
    pub model: String,
    pub runs: Vec<PermutationRun>,
    pub verdict: OrderVerdict,
    /// Batches with a write conflict seen in any run.
    pub conflict_batches: usize,
    /// Identical outputs under every order although some batch had a
    /// conflict: the agreement may be an accident of this model.
    pub accidental_determinism_risk: bool,
    pub note: String,
}

impl DeterminismReport {
    pub fn run(&self, order: &[&str]) -> Option<&PermutationRun> {
        self.runs.iter().find(|r| r.order.iter().map(String::as_str).eq(order.iter().copied()))
    }
}

/// Every ordering of `names`.
pub fn all_permutations(names: &[String]) -> Vec<Vec<String>> {
    if names.len() <= 1 {
        return vec![names.to_vec()];
    }
    let mut out = Vec::new();
    for (i, first) in names.iter().enumerate() {
        let mut rest = names.to_vec();
        rest.remove(i);
        for mut tail in all_permutations(&rest) {
            tail.insert(0, first.clone());
            out.push(tail);
        }
    }
    out
}

fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn same_sample(a: &Sample, b: &Sample) -> bool {
    a.time.to_bits() == b.time.to_bits()
        && a.mode == b.mode
        && a.status == b.status
        && a.state.iter().zip(b.state.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn same_run(a: &Trace, b: &Trace) -> bool {
    a.samples().len() == b.samples().len()
        && a.samples().iter().zip(b.samples()).all(|(x, y)| same_sample(x, y))
        && a.events() == b.events()
}

/// First divergence of `other` from `base`: time and, per column, the
/// sample index where it first differs.
fn divergence(base: &Trace, other: &Trace, vars: &[String]) -> Option<(f64, BTreeMap<String, usize>)> {
    let (a, b) = (base.samples(), other.samples());
    let mut first_time = None;
    let mut columns: BTreeMap<String, usize> = BTreeMap::new();
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if same_sample(x, y) {
            continue;
        }
        first_time.get_or_insert(x.time.min(y.time));
        for (k, name) in vars.iter().enumerate() {
            if x.state[k].to_bits() != y.state[k].to_bits() {
                columns.entry(name.clone()).or_insert(i);
            }
        }
        if x.mode != y.mode {
            columns.entry("mode".into()).or_insert(i);
        }
        if x.status != y.status {
            columns.entry("status".into()).or_insert(i);
        }
        if x.time.to_bits() != y.time.to_bits() {
            columns.entry("time".into()).or_insert(i);
        }
    }
    if first_time.is_none() && a.len() != b.len() {
        let n = a.len().min(b.len());
        let t = a.get(n).or(b.get(n)).map(|s| s.time).unwrap_or(f64::NAN);
        first_time = Some(t);
        columns.insert("time".into(), n);
    }
    first_time.map(|t| (t, columns))
}

fn run_order(model: &HybridModel, spec: &RunSpec, order: &[String]) -> Result<SimOutcome, CompareError> {
    let mut spec = spec.clone();
    spec.order = order.to_vec();
    let cfg = spec.engine_config(model)?;
    Ok(simulate(model, &cfg)?)
}

/// Simulates `spec` once per permutation of the detectors (all of them if
/// `permutations` is `None`) and compares the traces sample by sample. The
/// first permutation is run twice; the two runs must match exactly.
pub fn compare_order(spec: &RunSpec, permutations: Option<&[Vec<String>]>) -> Result<DeterminismReport, CompareError> {
    let (model, cfg) = spec.prepare()?;
    if cfg.safety != Safety::UnsafeMode {
        return Err(CompareError::NotOrdered(spec.variant_name().to_string()));
    }
    let perms = match permutations {
        Some(p) => p.to_vec(),
        None => all_permutations(&model.detectors().iter().map(|d| d.name().to_string()).collect::<Vec<_>>()),
    };
    if perms.is_empty() {
        return Err(CompareError::NoPermutations);
    }
    for p in &perms {
        resolve_order(&model, p)?;
    }

    let (outcomes, repeat) = thread::scope(|s| {
        let handles: Vec<_> = perms.iter().map(|p| s.spawn(|| run_order(&model, spec, p))).collect();
        let repeat = s.spawn(|| run_order(&model, spec, &perms[0]));
        let outcomes: Vec<_> = handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect();
        (outcomes, repeat.join().expect("simulation thread panicked"))
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;
    let repeat = repeat?;
    if !same_run(&outcomes[0].trace, &repeat.trace) {
        return Err(CompareError::RepeatRunMismatch { order: perms[0].join(",") });
    }

    let vars = model.variables();
    let runs = perms
        .iter()
        .zip(&outcomes)
        .map(|(p, o)| PermutationRun {
            order: p.clone(),
            digest: digest(&io::trace_csv_bytes(&o.trace, vars)),
            trapped: o.trap().map(|e| e.kind.to_string()),
            final_time: o.trace.last_sample().map_or(0.0, |s| s.time),
            final_state: o.final_state.to_vec(),
        })
        .collect();

    let mut earliest: Option<f64> = None;
    let mut columns: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for other in &outcomes[1..] {
        if let Some((t, cols)) = divergence(&outcomes[0].trace, &other.trace, vars) {
            earliest = Some(earliest.map_or(t, |e| e.min(t)));
            for (name, i) in cols {
                let at = outcomes[0].trace.samples().get(i).map_or(f64::INFINITY, |s| s.time);
                let entry = columns.entry(name).or_insert((at, i));
                if (at, i) < *entry {
                    *entry = (at, i);
                }
            }
        }
    }
    let conflict_batches =
        outcomes.iter().flat_map(|o| o.batches.iter()).filter(|b| matches!(b.verdict, Verdict::Conflict(_))).count();

    let (verdict, risk, note) = match earliest {
        Some(time) => {
            let mut cols: Vec<(String, (f64, usize))> = columns.into_iter().collect();
            cols.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
            let variables = cols.into_iter().map(|(n, _)| n).collect();
            (
                OrderVerdict::OrderSensitive { time, variables },
                false,
                "the outcome depends on event order: the model is nondeterministic here, and a simulator \
                 that silently picks one order is accidentally deterministic"
                    .to_string(),
            )
        }
        None if conflict_batches > 0 => (
            OrderVerdict::OrderInvariant,
            true,
            "identical under every order despite conflicting simultaneous events: possible accidental \
             determinism"
                .to_string(),
        ),
        None => (
            OrderVerdict::OrderInvariant,
            false,
            "identical under every order with no conflicting simultaneous events: deterministic model, \
             deterministic simulator"
                .to_string(),
        ),
    };

    Ok(DeterminismReport {
        model: model.name().to_string(),
        runs,
        verdict,
        conflict_batches,
        accidental_determinism_risk: risk,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::ModelName;

    #[test]
    fn permutations_of_three() {
        let names: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let p = all_permutations(&names);
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], names);
        assert_eq!(p[5], ["c", "b", "a"]);
    }

    #[test]
    fn safe_variant_is_refused() {
        let spec = RunSpec::new(ModelName::ThreeBalls).variant("safe");
        assert!(matches!(compare_order(&spec, None), Err(CompareError::NotOrdered(_))));
    }

    #[test]
    fn single_detector_is_order_invariant() {
        let spec = RunSpec::new(ModelName::BouncingBall).variant("unsafe-naive").t_end(2.0);
        let report = compare_order(&spec, None).unwrap();
        assert_eq!(report.verdict, OrderVerdict::OrderInvariant);
        assert!(!report.accidental_determinism_risk);
        assert_eq!(report.runs.len(), 1);
    }
}
