mod common;

use common::{explicit, load, uniform};
use dpf_core::curve::{CurveBranch, Formulation, StopReason};
use dpf_core::network::{
    generator_reactive, mismatch, norm_inf, parse_case, BusKind, Schedule, State,
};
use dpf_core::reference::{newton_power_flow, NrConfig};
use dpf_core::tracer::{
    enforce_q_limits, reactive_violations, trace_curve, trace_window, FormulationMode, TraceConfig,
    TraceError, WindowDrive,
};

const THREE_BUS: &str = r#"{
    "baseMVA": 100,
    "bus": [
        {"id": 1, "type": "REF"},
        {"id": 2, "type": "PV"},
        {"id": 3, "type": "PQ", "pd": 30, "qd": 10}
    ],
    "gen": [{"bus": 1}, {"bus": 2, "pg": 0, "vg": 0.98, "qmax": 0, "qmin": -100}],
    "branch": [
        {"from": 1, "to": 2, "x": 0.1},
        {"from": 2, "to": 3, "x": 0.1},
        {"from": 1, "to": 3, "x": 0.2}
    ]
}"#;

fn base(net: &dpf_core::PowerNetwork, dir: &dpf_core::DirectionVector, lambda: f64) -> (Schedule, State) {
    let sched = Schedule::from_network(net);
    let guess = State::from_case(net, &sched);
    let s = newton_power_flow(net, &sched, dir, lambda, &guess, &NrConfig::default()).unwrap();
    (sched, s.state)
}

#[test]
fn first_window_from_base_case() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let (sched, s0) = base(&net, &dir, 0.0);
    let cfg = TraceConfig::default();
    let (table, end) = trace_window(&net, &sched, &dir, &s0, WindowDrive::Lambda { c1: 1.0 }, &cfg, 0.1).unwrap();
    assert!((end.lambda - 0.1).abs() < 1e-15);
    assert!(norm_inf(&mismatch(&net, &sched, &dir, &end)) < 1e-8);
    assert_eq!(table.order(), 6);
    assert_eq!(table.eval(0.0), s0);
}

#[test]
fn window_near_nose_is_rejected_then_accepted_at_half_step() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let (sched, s0) = base(&net, &dir, 1.45);
    let cfg = TraceConfig::default();
    let drive = WindowDrive::Lambda { c1: 1.0 };
    assert!(matches!(
        trace_window(&net, &sched, &dir, &s0, drive, &cfg, 0.1),
        Err(TraceError::WindowRejected { .. })
    ));
    let (_, end) = trace_window(&net, &sched, &dir, &s0, drive, &cfg, 0.05).unwrap();
    assert!((end.lambda - 1.5).abs() < 1e-12);
}

#[test]
fn nine_bus_curve_passes_the_nose() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let cfg = TraceConfig::default();
    let c = trace_curve(&net, &dir, &cfg).unwrap();
    assert!((c.lambda_max - 1.64).abs() < 0.01, "lambda_max {}", c.lambda_max);
    assert!(c.complete);
    assert!(c.nose_index > 0 && c.nose_index < c.points.len() - 1);
    // λ rises to the nose and falls after it
    let up = c.upper_branch();
    assert!(up.windows(2).all(|w| w[1].lambda >= w[0].lambda - 1e-12));
    let low = c.lower_branch();
    assert!(low.windows(2).all(|w| w[1].lambda <= w[0].lambda + 1e-12));
    assert!(c.points.last().unwrap().lambda < c.lambda_max - 0.5);
    assert!(c.segments.iter().any(|s| s.formulation == Formulation::VoltageDriven));
}

#[test]
fn every_window_costs_one_factorization_and_k_substitutions() {
    for name in ["case9.m", "case39.m"] {
        let net = load(name);
        let dir = uniform(&net);
        let cfg = TraceConfig::default();
        let c = trace_curve(&net, &dir, &cfg).unwrap();
        let windows: usize = c.segments.iter().map(|s| s.windows).sum();
        assert_eq!(windows, c.windows.len());
        for s in &c.segments {
            assert_eq!(s.linear_solves, s.windows, "{name} {s:?}");
            assert_eq!(s.substitutions, cfg.order_k * s.windows, "{name} {s:?}");
        }
        assert_eq!(c.linear_solves, windows);
        assert_eq!(c.substitutions, cfg.order_k * windows);
    }
}

#[test]
fn emitted_points_satisfy_the_power_flow() {
    for name in ["case9.m", "case39.m", "case57.m"] {
        let net = load(name);
        let dir = uniform(&net);
        let cfg = TraceConfig::default();
        let c = trace_curve(&net, &dir, &cfg).unwrap();
        let sched = Schedule::from_network(&net);
        for p in &c.points {
            let r = norm_inf(&mismatch(&net, &sched, &dir, &p.to_state()));
            assert!(r < cfg.residual_tol, "{name} λ={} residual {r:e}", p.lambda);
        }
        assert!(c.max_point_residual < cfg.residual_tol);
        assert!(c.max_order_residual < 1e-10, "{name} order residual {:e}", c.max_order_residual);
    }
}

#[test]
fn zero_windows_gives_the_base_point() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let cfg = TraceConfig {
        max_windows: 0,
        ..Default::default()
    };
    let c = trace_curve(&net, &dir, &cfg).unwrap();
    assert_eq!(c.points.len(), 1);
    assert_eq!(c.points[0].lambda, 0.0);
    assert_eq!(c.linear_solves, 0);
}

#[test]
fn both_formulations_trace_the_same_upper_branch() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let l = 9;
    let f1 = trace_curve(
        &net,
        &dir,
        &TraceConfig {
            formulation: FormulationMode::LambdaDriven,
            max_windows: 14,
            ..Default::default()
        },
    )
    .unwrap();
    let f2 = trace_curve(
        &net,
        &dir,
        &TraceConfig {
            formulation: FormulationMode::VoltageDriven,
            driven_bus: Some(l),
            stop_at_nose: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(f1.segments.iter().all(|s| s.formulation == Formulation::LambdaDriven));
    assert!(f2.segments.iter().all(|s| s.formulation == Formulation::VoltageDriven));
    let top = f1.lambda_max.min(f2.lambda_max);
    assert!(top > 1.2);
    let i = net.bus_index(l).unwrap();
    let mut checked = 0;
    for j in 0..=40 {
        let lam = top * j as f64 / 40.0;
        let a = f1.sample_at_lambda(lam, CurveBranch::Upper).unwrap();
        let b = f2.sample_at_lambda(lam, CurveBranch::Upper).unwrap();
        for (va, vb) in a.vmag.iter().zip(&b.vmag) {
            assert!((va - vb).abs() < 1e-4, "λ={lam}: {va} vs {vb}");
        }
        assert!((a.vmag[i] - b.vmag[i]).abs() < 1e-4);
        checked += 1;
    }
    assert_eq!(checked, 41);
}

#[test]
fn invalid_configurations_are_rejected() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let bad = [
        TraceConfig { c1: 0.0, ..Default::default() },
        TraceConfig { order_k: 1, ..Default::default() },
        TraceConfig { step_h: 0.0, ..Default::default() },
        TraceConfig {
            formulation: FormulationMode::VoltageDriven,
            c2: 0.0,
            ..Default::default()
        },
        TraceConfig { driven_bus: Some(1), ..Default::default() },
    ];
    for cfg in bad {
        assert!(matches!(trace_curve(&net, &dir, &cfg), Err(TraceError::Config(_))), "{cfg:?}");
    }
}

#[test]
fn infeasible_base_case_is_an_error() {
    let mut net = load("case9.m");
    let dir = uniform(&net);
    for b in net.buses.iter_mut().filter(|b| b.kind == BusKind::PQ) {
        b.p_sp *= 20.0;
        b.q_sp *= 20.0;
    }
    let res = trace_curve(&net, &dir, &TraceConfig::default());
    assert!(matches!(res, Err(TraceError::BaseCase(_))), "{res:?}");
}

#[test]
fn slack_limits_not_reached_leave_schedule_alone() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let (mut sched, s0) = base(&net, &dir, 0.0);
    assert!(reactive_violations(&net, &sched, &s0).is_empty());
    let before = sched.clone();
    assert!(enforce_q_limits(&net, &mut sched, &s0).is_empty());
    assert_eq!(sched, before);
}

#[test]
fn generator_at_zero_limit_switches_to_pq() {
    let net = parse_case(THREE_BUS).unwrap();
    let dir = uniform(&net);
    let cfg = TraceConfig {
        enforce_q_limits: true,
        stop_at_nose: true,
        ..Default::default()
    };
    let c = trace_curve(&net, &dir, &cfg).unwrap();
    assert_eq!(c.q_limit_events.len(), 1);
    let ev = &c.q_limit_events[0];
    assert_eq!(ev.bus, 2);
    assert_eq!(ev.q_mvar, 0.0);
    assert!(ev.lambda > 0.0);

    let i2 = net.bus_index(2).unwrap();
    let sched0 = Schedule::from_network(&net);
    let mut pinned = sched0.clone();
    pinned.pin_reactive(&net, i2, 0.0);
    assert_eq!(pinned.kind[i2], BusKind::PQ);

    let mut after = 0;
    for p in c.upper_branch() {
        let s = p.to_state();
        let q = generator_reactive(&net, &s)[i2];
        if p.lambda < ev.lambda - 1e-9 {
            // the generator holds its voltage and stays below the limit
            assert!(q < 1e-7, "λ={} q={q}", p.lambda);
            assert!((s.vmag()[i2] - 0.98).abs() < 1e-7);
        } else if p.lambda > ev.lambda + 1e-6 {
            assert!(norm_inf(&mismatch(&net, &pinned, &dir, &s)) < cfg.residual_tol);
            assert!(q.abs() < 1e-6);
            if p.lambda > 0.95 * c.lambda_max {
                // NR is ill-conditioned this close to the nose
                continue;
            }
            let nr = newton_power_flow(&net, &pinned, &dir, p.lambda, &s, &NrConfig::default()).unwrap();
            for b in 0..net.n_buses() {
                let d = (nr.state.e[b] - s.e[b]).abs().max((nr.state.f[b] - s.f[b]).abs());
                assert!(d < 1e-6, "λ={} bus {b} deviation {d:e}", p.lambda);
            }
            after += 1;
        }
    }
    assert!(after > 3);

    let free = trace_curve(&net, &dir, &TraceConfig { stop_at_nose: true, ..Default::default() }).unwrap();
    assert!(free.q_limit_events.is_empty());
    assert!(free.lambda_max > c.lambda_max);
}

#[test]
fn reactive_limits_lower_the_nine_bus_limit() {
    let net = load("case9.m");
    let dir = explicit(&net, "case9_bus3_bus7.json");
    let free = trace_curve(&net, &dir, &TraceConfig { stop_at_nose: true, ..Default::default() }).unwrap();
    let limited = trace_curve(
        &net,
        &dir,
        &TraceConfig {
            enforce_q_limits: true,
            stop_at_nose: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert!((free.lambda_max - 8.17).abs() < 0.1, "{}", free.lambda_max);
    assert!((limited.lambda_max - 7.79).abs() < 0.1, "{}", limited.lambda_max);
    assert_eq!(limited.stop_reason, StopReason::Nose);
    assert!(!limited.q_limit_events.is_empty());
}

#[test]
fn lower_branch_stops_at_lambda_floor() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let cfg = TraceConfig {
        stop_lambda_floor: 1.0,
        ..Default::default()
    };
    let c = trace_curve(&net, &dir, &cfg).unwrap();
    assert_eq!(c.stop_reason, StopReason::LambdaFloor);
    assert!(c.points.last().unwrap().lambda < 1.0);
    let below = c.lower_branch().iter().filter(|p| p.lambda < 1.0).count();
    assert!(below <= cfg.samples_per_window, "{below}");
}
