//! End-to-end engine scenarios on the canonical models.

mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use common::{default_balls, event_driven, Ball};
use limbosim::cli::{ModelName, RunSpec};
use limbosim::engine::{EngineConfig, Safety, Terminal, Verdict};
use limbosim::integrate::{interpolate, step, StepSegment};
use limbosim::model::{Assignment, EventAction, HybridModel, Mode, ModeId, Target};
use limbosim::models::{ball_v, ball_x, BALL_H, BALL_V};
use limbosim::trace::{EventKind, Trace};
use limbosim::{simulate, DetectorConfig, Direction, SimOutcome, StatusTag, TrapKind};

const G: f64 = 9.81;
const UNSAFE_DEPTH: f64 = 1e-4 + 1e-2;

fn outcome(spec: RunSpec) -> (HybridModel, SimOutcome) {
    let (model, cfg) = spec.prepare().unwrap();
    let out = simulate(&model, &cfg).unwrap();
    (model, out)
}

fn ball(variant: &str) -> RunSpec {
    RunSpec::new(ModelName::BouncingBall).variant(variant)
}

fn balls(variant: &str) -> RunSpec {
    RunSpec::new(ModelName::ThreeBalls).variant(variant)
}

fn all_scenarios() -> Vec<RunSpec> {
    vec![
        ball("unsafe-naive"),
        ball("safe"),
        ball("safe-no-limbo-handler"),
        balls("safe"),
        balls("safe-combined"),
        balls("unsafe-ordered"),
        balls("safe").param("b1.x0", -4.8),
        balls("unsafe-ordered").param("b1.x0", -4.8),
    ]
}

#[test]
fn every_scenario_trace_validates() {
    for spec in all_scenarios() {
        let (_, out) = outcome(spec.clone());
        out.trace.validate().unwrap_or_else(|e| panic!("{} {}: {e}", spec.model.as_str(), spec.variant_name()));
        assert_eq!(out.trace.is_trapped(), out.trap().is_some());
    }
}

#[test]
fn safe_ball_event_sequence() {
    let (model, out) = outcome(ball("safe"));
    let kinds: Vec<EventKind> = out.trace.events().iter().map(|e| e.kind).collect();
    let entered = kinds.iter().position(|k| *k == EventKind::LimboEntered).unwrap();
    assert_eq!(kinds.iter().filter(|k| **k == EventKind::LimboEntered).count(), 1);
    assert_eq!(&kinds[entered..entered + 2], &[EventKind::LimboEntered, EventKind::LimboHandler]);
    assert!(kinds[entered..].contains(&EventKind::Recovered));
    assert!(kinds[..entered].iter().all(|k| *k == EventKind::ZeroCrossing));
    let bounces = entered;
    assert!((15..40).contains(&bounces), "{bounces} bounces");

    // limbo samples only between entry and recovery
    let t_in = out.trace.events()[entered].time;
    let t_out = out.trace.events().iter().find(|e| e.kind == EventKind::Recovered).unwrap().time;
    for s in out.trace.samples() {
        if s.status == StatusTag::Limbo {
            assert!(t_in <= s.time && s.time <= t_out);
        }
    }
    assert_eq!(out.final_mode, model.mode_id("rest").unwrap());
    let h = out.final_state[BALL_H];
    assert!(h < 0.0 && h > -UNSAFE_DEPTH, "resting height {h}");
}

#[test]
fn missing_limbo_handler_traps_at_unsafe_level() {
    let (_, out) = outcome(ball("safe-no-limbo-handler"));
    let trap = out.trap().unwrap();
    assert_eq!(trap.kind, TrapKind::UnsafeLevelCrossed);
    let events = out.trace.events();
    assert_eq!(events.last().unwrap().kind, EventKind::Trapped);
    let entered = events.iter().find(|e| e.kind == EventKind::LimboEntered).unwrap().time;
    assert!(entered < trap.time);
    let last = out.trace.last_sample().unwrap();
    assert_eq!(last.status, StatusTag::Limbo);
    assert!(last.time <= trap.time && trap.time - last.time <= 1e-9);
    assert!(last.state[BALL_H] > -UNSAFE_DEPTH);
}

/// Apex of each flight from the trace: free-fall energy `h + v^2 / 2g` at
/// the highest sample.
fn apexes(trace: &Trace, until: f64) -> Vec<f64> {
    let mut bounds: Vec<f64> = vec![0.0];
    bounds.extend(trace.events().iter().filter(|e| e.kind == EventKind::ZeroCrossing).map(|e| e.time));
    bounds.retain(|t| *t < until);
    bounds
        .windows(2)
        .filter_map(|w| {
            trace
                .samples()
                .iter()
                .filter(|s| s.time > w[0] && s.time < w[1])
                .max_by(|a, b| a.state[BALL_H].total_cmp(&b.state[BALL_H]))
                .map(|s| s.state[BALL_H] + s.state[BALL_V] * s.state[BALL_V] / (2.0 * G))
        })
        .collect()
}

#[test]
fn bounce_apexes_decay_by_c_squared() {
    let (_, out) = outcome(ball("safe"));
    let limbo = out.trace.events().iter().find(|e| e.kind == EventKind::LimboEntered).unwrap().time;
    let a = apexes(&out.trace, limbo);
    assert!(a.len() > 10);
    assert!((a[0] - 3.0).abs() < 1e-9);
    for w in a.windows(2) {
        let ratio = w[1] / w[0];
        assert!((ratio - 0.49).abs() <= 1e-3, "apex ratio {ratio} ({} -> {})", w[0], w[1]);
    }
}

#[test]
fn three_ball_non_penetration() {
    let floor = -UNSAFE_DEPTH;
    let b = default_balls();
    let gaps_ok = |out: &SimOutcome| {
        out.trace
            .samples()
            .iter()
            .all(|s| (0..2).all(|k| (s.state[ball_x(k + 1)] - s.state[ball_x(k)]) - (b[k].r + b[k + 1].r) >= floor))
    };
    for spec in [balls("safe-combined"), balls("safe").param("b1.x0", -4.8)] {
        let (_, out) = outcome(spec);
        assert_eq!(out.terminal, Terminal::ReachedTEnd);
        assert!(gaps_ok(&out));
    }
    // the ordered run lets ball 1 and ball 2 pass through each other
    let (_, out) = outcome(balls("unsafe-ordered"));
    assert_eq!(out.terminal, Terminal::ReachedTEnd);
    assert!(!gaps_ok(&out));
}

#[test]
fn asymmetric_safe_run_matches_event_oracle() {
    let (_, out) = outcome(balls("safe").param("b1.x0", -4.8));
    let start = [Ball { x: -4.8, ..default_balls()[0] }, default_balls()[1], default_balls()[2]];
    let (oracle, hits) = event_driven(start, 10.0);
    assert_eq!(hits.len(), 3);
    let zero: Vec<f64> =
        out.trace.events().iter().filter(|e| e.kind == EventKind::ZeroCrossing).map(|e| e.time).collect();
    assert_eq!(zero.len(), hits.len());
    // earlier collisions land up to t_tol late; a slow closing speed turns
    // the resulting position offsets into a larger time offset
    for (t, (want, _)) in zero.iter().zip(&hits) {
        assert!((t - want).abs() <= 1e-7, "collision at {t}, oracle {want}");
    }
    assert!(out.batches.iter().all(|b| !b.is_simultaneous()));
    for k in 0..3 {
        assert!((out.final_state[ball_v(k)] - oracle[k].v).abs() <= 1e-12);
        assert!((out.final_state[ball_x(k)] - oracle[k].x).abs() <= 1e-6);
    }
}

/// Two clocks reaching a wall at the same time, each resetting only itself.
fn disjoint_pair() -> HybridModel {
    let mut b = HybridModel::builder("pair", &["p", "q"]).initial_state(vec![0.0, 0.0]);
    b.mode(Mode::new("run", |_, _, dx| {
        dx[0] = 1.0;
        dx[1] = 1.0;
    }));
    for (i, name) in ["p", "q"].into_iter().enumerate() {
        let reset = EventAction::new(format!("reset {name}"), [Target::State(i)], [Target::State(i)], move |_, _| {
            vec![Assignment::State(i, 0.0)]
        });
        let cfg = DetectorConfig::safe(name, 0.0, Direction::Falling, 1e-4, 1e-2);
        b.detector(cfg, move |_, x| 0.75 - x[i], reset);
    }
    b.build().unwrap()
}

#[test]
fn disjoint_writes_commute_under_any_order() {
    let model = disjoint_pair();
    let ids: Vec<_> = model.detectors().iter().map(|d| model.detector_id(d.name()).unwrap()).collect();
    let mut traces = Vec::new();
    for order in [ids.clone(), ids.iter().rev().copied().collect()] {
        let mut cfg = EngineConfig::new(2.0).with_safety(Safety::UnsafeMode);
        cfg.event_order = order;
        traces.push(simulate(&model, &cfg).unwrap().trace);
    }
    // the event log keeps application order; the samples must agree
    assert_eq!(traces[0].samples(), traces[1].samples());

    let safe = simulate(&model, &EngineConfig::new(2.0)).unwrap();
    assert_eq!(safe.terminal, Terminal::ReachedTEnd);
    let simultaneous: Vec<_> = safe.batches.iter().filter(|b| b.is_simultaneous()).collect();
    assert_eq!(simultaneous.len(), 2);
    assert!(simultaneous.iter().all(|b| b.verdict == Verdict::Independent));
    assert_eq!(safe.trace.samples(), traces[0].samples());
}

fn rk4_error(dt: f64) -> f64 {
    let (mut t, mut x) = (0.0, vec![1.0]);
    let n = (1.0 / dt).round() as usize;
    for _ in 0..n {
        x = step(|_, x, dx| dx[0] = -x[0], t, &x, dt).unwrap().into_inner();
        t += dt;
    }
    (x[0] - (-1.0f64).exp()).abs()
}

#[test]
fn rk4_is_fourth_order() {
    let ratio = rk4_error(0.02) / rk4_error(0.01);
    assert!((12.0..=20.0).contains(&ratio), "error ratio {ratio}");
}

#[test]
fn hermite_dense_output_is_fourth_order() {
    // exact endpoints isolate the interpolation error
    let osc = Mode::new("osc", |_, x, dx| {
        dx[0] = x[1];
        dx[1] = -x[0];
    });
    let err = |h: f64| {
        let t0 = 0.3;
        let exact = |t: f64| vec![t.sin(), t.cos()];
        let seg = StepSegment::new(&osc, ModeId(0), t0, exact(t0).into(), t0 + h, exact(t0 + h).into());
        let mid = t0 + 0.5 * h;
        let x = interpolate(&seg, mid).unwrap();
        (x[0] - mid.sin()).abs().max((x[1] - mid.cos()).abs())
    };
    let h = 0.1;
    assert!(err(h) <= h.powi(4) / 384.0 * 1.01, "midpoint error {}", err(h));
    let ratio = err(h) / err(h / 2.0);
    assert!((14.0..=18.0).contains(&ratio), "halving ratio {ratio}");
}

#[test]
fn conflict_contested_set_is_minimal() {
    let (_, out) = outcome(balls("safe"));
    let batch = out.batches.iter().find(|b| b.is_simultaneous()).unwrap();
    assert_eq!(batch.verdict, Verdict::Conflict(vec![Target::State(ball_v(1))]));
    let names: BTreeSet<_> = batch.members.iter().map(|c| c.detector).collect();
    assert_eq!(names.len(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn safe_ball_never_tunnels(h0 in 0.2f64..5.0, c in 0.3f64..0.9) {
        let (model, out) = outcome(ball("safe").param("h0", h0).param("c", c).t_end(8.0));
        prop_assert_eq!(&out.terminal, &Terminal::ReachedTEnd);
        prop_assert!(out.trace.samples().iter().all(|s| s.state[BALL_H] > -UNSAFE_DEPTH));
        prop_assert!(out.trace.samples().iter().all(|s| s.status != StatusTag::Unsafe));
        let t_zeno = (2.0 * h0 / G).sqrt() * (1.0 + c) / (1.0 - c);
        if t_zeno < 7.5 {
            prop_assert_eq!(out.final_mode, model.mode_id("rest").unwrap());
        }
        prop_assert!(out.trace.validate().is_ok());
    }

    #[test]
    fn repeat_runs_are_bit_identical(h0 in 0.2f64..5.0, x0 in -6.0f64..-3.0) {
        let a = outcome(ball("unsafe-naive").param("h0", h0).t_end(5.0)).1;
        let b = outcome(ball("unsafe-naive").param("h0", h0).t_end(5.0)).1;
        prop_assert_eq!(a.trace, b.trace);
        let a = outcome(balls("unsafe-ordered").param("b1.x0", x0)).1;
        let b = outcome(balls("unsafe-ordered").param("b1.x0", x0)).1;
        prop_assert_eq!(a.trace, b.trace);
    }
}
