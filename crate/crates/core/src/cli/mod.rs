//! Command-line front end: run specs, trace files and the event-order
//! comparator.

pub mod args;
pub mod compare;
pub mod io;

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use thiserror::Error;

use crate::engine::{simulate, EngineConfig, EngineError, SimOutcome};
use crate::model::{DetectorId, HybridModel};
use crate::models::{
    bouncing_ball, three_ball_defaults, three_balls, BouncingBallParams, BouncingBallVariant, CollisionOrder,
    DetectorTuning, ModelsError, ThreeBallsVariant,
};
use crate::status::TrapKind;

pub use compare::{compare_order, CompareError, DeterminismReport, OrderVerdict};

/// Exit code for I/O failures and engine defects.
pub const EXIT_FAILURE: u8 = 1;
/// Exit code for invalid flags, raised before any simulation.
pub const EXIT_USAGE: u8 = 2;
/// Exit code for a repeat run that did not reproduce its first run.
pub const EXIT_REPEAT_MISMATCH: u8 = 7;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Models(#[from] ModelsError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{path}: {source}")]
    Output { path: PathBuf, source: io::FormatError },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Models(_) => EXIT_USAGE,
            CliError::Engine(EngineError::InvalidConfig(_)) => EXIT_USAGE,
            CliError::Engine(_) | CliError::Output { .. } => EXIT_FAILURE,
        }
    }
}

/// Process exit code for a trapped run.
pub fn trap_exit_code(kind: TrapKind) -> u8 {
    kind.exit_code()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelName {
    BouncingBall,
    ThreeBalls,
}

impl ModelName {
    pub const ALL: [ModelName; 2] = [ModelName::BouncingBall, ModelName::ThreeBalls];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::BouncingBall => "bouncing-ball",
            ModelName::ThreeBalls => "three-balls",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown model {s:?} (try list-models)")))
    }

    /// Variant names; the first one is the default.
    pub fn variants(self) -> &'static [&'static str] {
        match self {
            ModelName::BouncingBall => &["safe", "unsafe-naive", "safe-no-limbo-handler"],
            ModelName::ThreeBalls => &["safe", "safe-combined", "unsafe-ordered"],
        }
    }

    pub fn params(self) -> Vec<String> {
        match self {
            ModelName::BouncingBall => ["h0", "c", "g", "arm_threshold"].map(String::from).to_vec(),
            ModelName::ThreeBalls => {
                (1..=3).flat_map(|k| ["x0", "v0", "m", "r"].map(|p| format!("b{k}.{p}"))).collect()
            }
        }
    }
}

/// Everything needed for one simulation run. Unset options take the engine
/// and model defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub model: ModelName,
    pub variant: Option<String>,
    /// Parameter overrides, applied in order.
    pub params: Vec<(String, f64)>,
    pub t_end: f64,
    pub dt: Option<f64>,
    pub t_tol: Option<f64>,
    pub simultaneity_tol: Option<f64>,
    pub limbo_offset: Option<f64>,
    pub unsafe_offset: Option<f64>,
    /// Detector names in priority order for sequential application.
    pub order: Vec<String>,
    pub out_trace: Option<PathBuf>,
    pub out_events: Option<PathBuf>,
}

impl RunSpec {
    pub fn new(model: ModelName) -> Self {
        Self {
            model,
            variant: None,
            params: Vec::new(),
            t_end: 10.0,
            dt: None,
            t_tol: None,
            simultaneity_tol: None,
            limbo_offset: None,
            unsafe_offset: None,
            order: Vec::new(),
            out_trace: None,
            out_events: None,
        }
    }

    pub fn variant(mut self, variant: &str) -> Self {
        self.variant = Some(variant.to_string());
        self
    }

    pub fn param(mut self, name: &str, value: f64) -> Self {
        self.params.push((name.to_string(), value));
        self
    }

    pub fn t_end(mut self, t_end: f64) -> Self {
        self.t_end = t_end;
        self
    }

    pub fn variant_name(&self) -> &str {
        self.variant.as_deref().unwrap_or(self.model.variants()[0])
    }

    fn tuning(&self) -> DetectorTuning {
        let mut t = DetectorTuning::default();
        if let Some(v) = self.limbo_offset {
            t.limbo_offset = v;
        }
        if let Some(v) = self.unsafe_offset {
            t.unsafe_offset = v;
        }
        t
    }

    /// Builds the model. Unknown variants and parameters are usage errors.
    pub fn build_model(&self) -> Result<HybridModel, CliError> {
        let variant = self.variant_name();
        if !self.model.variants().contains(&variant) {
            return Err(CliError::Usage(format!(
                "model {} has no variant {variant:?} (variants: {})",
                self.model.as_str(),
                self.model.variants().join(", ")
            )));
        }
        let known = self.model.params();
        if let Some((name, _)) = self.params.iter().find(|(n, _)| !known.contains(n)) {
            return Err(CliError::Usage(format!(
                "model {} has no parameter {name:?} (parameters: {})",
                self.model.as_str(),
                known.join(", ")
            )));
        }
        let mut tuning = self.tuning();
        let model = match self.model {
            ModelName::BouncingBall => {
                let mut p = BouncingBallParams::default();
                for (name, value) in &self.params {
                    match name.as_str() {
                        "h0" => p.h0 = *value,
                        "c" => p.c = *value,
                        "g" => p.g = *value,
                        _ => tuning.arm_threshold = *value,
                    }
                }
                let v = match variant {
                    "unsafe-naive" => BouncingBallVariant::UnsafeNaive,
                    "safe-no-limbo-handler" => BouncingBallVariant::SafeNoLimboHandler,
                    _ => BouncingBallVariant::Safe,
                };
                bouncing_ball(&p, v, &tuning)?
            }
            ModelName::ThreeBalls => {
                let mut balls = three_ball_defaults();
                for (name, value) in &self.params {
                    let (ball, field) = name.split_once('.').expect("validated against the parameter list");
                    let b = &mut balls[ball[1..].parse::<usize>().expect("validated") - 1];
                    match field {
                        "x0" => b.x0 = *value,
                        "v0" => b.v0 = *value,
                        "m" => b.m = *value,
                        _ => b.r = *value,
                    }
                }
                let v = match variant {
                    "safe-combined" => ThreeBallsVariant::SafeWithCombinedHandler,
                    "unsafe-ordered" => ThreeBallsVariant::UnsafeOrdered(CollisionOrder::Declared),
                    _ => ThreeBallsVariant::Safe,
                };
                three_balls(&balls, v, &tuning)?
            }
        };
        Ok(model)
    }

    /// Engine configuration for `model`, validated.
    pub fn engine_config(&self, model: &HybridModel) -> Result<EngineConfig, CliError> {
        let mut cfg = EngineConfig::new(self.t_end).with_safety(self.safety());
        if let Some(dt) = self.dt {
            cfg.step.dt = dt;
        }
        if let Some(t_tol) = self.t_tol {
            cfg.step.t_tol = t_tol;
            cfg.simultaneity_tol = 2.0 * t_tol;
        }
        if let Some(tol) = self.simultaneity_tol {
            cfg.simultaneity_tol = tol;
        }
        cfg.event_order = resolve_order(model, &self.order)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn safety(&self) -> crate::engine::Safety {
        match (self.model, self.variant_name()) {
            (ModelName::BouncingBall, "unsafe-naive") => BouncingBallVariant::UnsafeNaive.safety(),
            (ModelName::ThreeBalls, "unsafe-ordered") => {
                ThreeBallsVariant::UnsafeOrdered(CollisionOrder::Declared).safety()
            }
            _ => crate::engine::Safety::SafeMode,
        }
    }

    /// Model and engine configuration, or the reason the run is refused.
    pub fn prepare(&self) -> Result<(HybridModel, EngineConfig), CliError> {
        let model = self.build_model()?;
        let cfg = self.engine_config(&model)?;
        Ok((model, cfg))
    }
}

/// Maps detector names to ids. Every name must be known and listed once.
pub fn resolve_order(model: &HybridModel, names: &[String]) -> Result<Vec<DetectorId>, CliError> {
    let mut ids = Vec::with_capacity(names.len());
    for name in names {
        let id = model.detector_id(name).ok_or_else(|| {
            let known: Vec<&str> = model.detectors().iter().map(|d| d.name()).collect();
            CliError::Usage(format!("unknown detector {name:?} in order (detectors: {})", known.join(", ")))
        })?;
        if ids.contains(&id) {
            return Err(CliError::Usage(format!("detector {name:?} listed twice in order")));
        }
        ids.push(id);
    }
    Ok(ids)
}

/// Parses an order spec: `declared`, `reversed`, or comma-separated
/// detector names.
pub fn parse_order(model: &HybridModel, spec: &str) -> Result<Vec<String>, CliError> {
    let declared = || model.detectors().iter().map(|d| d.name().to_string());
    let names: Vec<String> = match spec.trim() {
        "declared" => declared().collect(),
        "reversed" => declared().rev().collect(),
        s => s.split(',').map(|n| n.trim().to_string()).filter(|n| !n.is_empty()).collect(),
    };
    resolve_order(model, &names)?;
    Ok(names)
}

/// Result of a run after its files have been written.
#[derive(Debug)]
pub struct RunReport {
    pub model: HybridModel,
    pub outcome: SimOutcome,
}

impl RunReport {
    pub fn exit_code(&self) -> u8 {
        self.outcome.trap().map_or(0, |e| trap_exit_code(e.kind))
    }
}

/// Runs the spec and writes the requested trace and event files. A trapped
/// run still writes everything recorded up to the trap.
pub fn run(spec: &RunSpec) -> Result<RunReport, CliError> {
    let (model, cfg) = spec.prepare()?;
    let outcome = simulate(&model, &cfg)?;
    let vars = model.variables();
    if let Some(path) = &spec.out_trace {
        write_file(path, |w| io::write_trace_csv(w, &outcome.trace, vars))?;
    }
    if let Some(path) = &spec.out_events {
        write_file(path, |w| io::write_events_json(w, &outcome.trace, vars))?;
    }
    Ok(RunReport { model, outcome })
}

fn write_file(
    path: &PathBuf,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<(), io::FormatError>,
) -> Result<(), CliError> {
    let wrap = |source| CliError::Output { path: path.clone(), source };
    let file = File::create(path).map_err(|e| wrap(e.into()))?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(wrap)?;
    std::io::Write::flush(&mut w).map_err(|e| wrap(e.into()))
}
