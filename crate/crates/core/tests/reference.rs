mod common;

use common::{explicit, load, uniform, TWO_BUS};
use dpf_core::network::{mismatch, norm_inf, parse_case, Schedule, State};
use dpf_core::reference::{cpf_trace, newton_power_flow, tangent, NrConfig, Parameterization, SolverError};
use dpf_core::CpfConfig;
use proptest::prelude::*;

fn nr(name: &str, lambda: f64) -> Result<dpf_core::reference::NrSolution, SolverError> {
    let net = load(name);
    let dir = uniform(&net);
    let sched = Schedule::from_network(&net);
    newton_power_flow(&net, &sched, &dir, lambda, &State::from_case(&net, &sched), &NrConfig::default())
}

#[test]
fn nine_bus_base_case_voltage() {
    let net = load("case9.m");
    let s = nr("case9.m", 0.0).unwrap();
    let v9 = s.state.vmag()[net.bus_index(9).unwrap()];
    assert!((v9 - 0.9956).abs() < 1e-3, "{v9}");
    assert_eq!(s.linear_solves, s.iterations);
}

#[test]
fn beyond_the_nose_does_not_converge() {
    assert!(matches!(
        nr("case9.m", 2.0),
        Err(SolverError::NotConverged { .. } | SolverError::Diverged | SolverError::Linalg(_))
    ));
}

#[test]
fn two_bus_matches_closed_form() {
    // V2 from the quadratic |V|^4 + (2(PR+QX) - 1)|V|^2 + (P^2+Q^2)|Z|^2 = 0 with R = 0
    let net = parse_case(TWO_BUS).unwrap();
    let dir = uniform(&net);
    let sched = Schedule::from_network(&net);
    let s = newton_power_flow(&net, &sched, &dir, 0.0, &State::flat(&sched), &NrConfig::default()).unwrap();
    let (p, q, x): (f64, f64, f64) = (0.5, 0.2, 0.1);
    let b = 2.0 * q * x - 1.0;
    let c = (p * p + q * q) * x * x;
    let v2 = ((-b + (b * b - 4.0 * c).sqrt()) / 2.0).sqrt();
    assert!((s.state.vmag()[1] - v2).abs() < 1e-9);
}

#[test]
fn base_tangent_increases_lambda_and_lowers_voltage() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let sched = Schedule::from_network(&net);
    let s = nr("case9.m", 0.0).unwrap().state;
    let t = tangent(&net, &sched, &dir, &s, None).unwrap();
    let n = net.n_buses();
    assert!(t[2 * n] > 0.0);
    assert!(((t.iter().map(|x| x * x).sum::<f64>()) - 1.0).abs() < 1e-12);
    let i = net.bus_index(9).unwrap();
    let dv = (s.e[i] * t[2 * i] + s.f[i] * t[2 * i + 1]) / s.vmag()[i];
    assert!(dv < 0.0);
}

#[test]
fn cpf_loading_limits() {
    for (name, expected) in [("case9.m", 1.64), ("case39.m", 1.13), ("case57.m", 0.89)] {
        let net = load(name);
        let c = cpf_trace(&net, &uniform(&net), &CpfConfig::default()).unwrap();
        assert!((c.lambda_max - expected).abs() < 0.02, "{name}: {}", c.lambda_max);
        assert!(c.complete, "{name}");
    }
}

#[test]
fn cpf_points_satisfy_the_power_flow() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let cfg = CpfConfig::default();
    let c = cpf_trace(&net, &dir, &cfg).unwrap();
    let sched = Schedule::from_network(&net);
    for p in &c.points {
        assert!(norm_inf(&mismatch(&net, &sched, &dir, &p.to_state())) < cfg.corrector.tol);
    }
    assert!(c.nose_index > 0 && c.nose_index + 1 < c.points.len());
    assert!(c.points.last().unwrap().lambda < 0.5 * c.lambda_max);
}

#[test]
fn local_parameterization_finds_the_same_nose() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let arc = cpf_trace(&net, &dir, &CpfConfig { stop_at_nose: true, ..Default::default() }).unwrap();
    let local = cpf_trace(
        &net,
        &dir,
        &CpfConfig {
            parameterization: Parameterization::Local,
            stop_at_nose: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert!((arc.lambda_max - local.lambda_max).abs() < 1e-3);
}

#[test]
fn cpf_reactive_limits_reduce_the_limit() {
    let net = load("case9.m");
    let dir = explicit(&net, "case9_bus3_bus7.json");
    let free = cpf_trace(&net, &dir, &CpfConfig { stop_at_nose: true, ..Default::default() }).unwrap();
    let limited = cpf_trace(
        &net,
        &dir,
        &CpfConfig {
            enforce_q_limits: true,
            stop_at_nose: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert!((free.lambda_max - 8.17).abs() < 0.1, "{}", free.lambda_max);
    assert!((limited.lambda_max - 7.79).abs() < 0.1, "{}", limited.lambda_max);
    assert!(!limited.q_limit_events.is_empty());
}

#[test]
fn invalid_cpf_configuration() {
    let net = load("case9.m");
    let cfg = CpfConfig { min_arc_step: 0.0, ..Default::default() };
    assert!(matches!(cpf_trace(&net, &uniform(&net), &cfg), Err(SolverError::Config(_))));
}

#[test]
fn oracle_shares_no_code_with_the_tracer() {
    let dir = format!("{}/src/reference", env!("CARGO_MANIFEST_DIR"));
    for entry in std::fs::read_dir(dir).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        for line in text.lines().filter(|l| l.trim_start().starts_with("use ")) {
            assert!(!line.contains("tracer") && !line.contains("dt::"), "{line}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nr_meets_the_configured_tolerance(lambda in 0.0f64..1.6, exp in 4.0f64..11.0) {
        let net = load("case9.m");
        let dir = uniform(&net);
        let sched = Schedule::from_network(&net);
        let cfg = NrConfig { tol: 10f64.powf(-exp), max_iter: 30, flat_start: true };
        let s = newton_power_flow(&net, &sched, &dir, lambda, &State::flat(&sched), &cfg).unwrap();
        prop_assert!(norm_inf(&mismatch(&net, &sched, &dir, &s.state)) < cfg.tol);
        prop_assert_eq!(s.state.lambda, lambda);
    }
}
