mod common;

use common::{load, uniform, TWO_BUS};
use dpf_core::dt::conv_slices;
use dpf_core::network::{mismatch, parse_case, BusKind, DirectionVector, PowerNetwork, Schedule, State};
use dpf_core::reference::{newton_power_flow, tangent, NrConfig};
use dpf_core::tracer::{
    assemble_a, assemble_b, jacobian, lambda_column, solve_window, SeriesTable, TraceError,
    WindowDrive, WindowOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn base_state(net: &PowerNetwork, dir: &DirectionVector) -> (Schedule, State) {
    let sched = Schedule::from_network(net);
    let guess = State::from_case(net, &sched);
    let sol = newton_power_flow(net, &sched, dir, 0.0, &guess, &NrConfig::default()).unwrap();
    (sched, sol.state)
}

fn random_state(rng: &mut ChaCha8Rng, sched: &Schedule) -> State {
    let mut s = State::flat(sched);
    for i in 0..sched.len() {
        if sched.kind[i] != BusKind::Ref {
            s.e[i] = rng.gen_range(0.7..1.1);
            s.f[i] = rng.gen_range(-0.4..0.4);
        }
    }
    s.lambda = rng.gen_range(0.0..1.5);
    s
}

#[test]
fn jacobian_matches_central_differences_on_random_states() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let sched = Schedule::from_network(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let s = random_state(&mut rng, &sched);
        let jac = jacobian(&net, &sched, &s).to_dense();
        let y = s.to_y();
        let scale = jac.iter().flatten().fold(1.0_f64, |m, v| m.max(v.abs()));
        for c in 0..y.len() {
            let (mut yp, mut ym) = (y.clone(), y.clone());
            yp[c] += h;
            ym[c] -= h;
            let gp = mismatch(&net, &sched, &dir, &State::from_y(&yp, s.lambda));
            let gm = mismatch(&net, &sched, &dir, &State::from_y(&ym, s.lambda));
            for r in 0..y.len() {
                let fd = (gp[r] - gm[r]) / (2.0 * h);
                worst = worst.max((fd - jac[r][c]).abs() / scale);
            }
        }
    }
    assert!(worst < 1e-5, "max relative deviation {worst:e}");
}

#[test]
fn two_bus_flat_start_rows() {
    let net = parse_case(TWO_BUS).unwrap();
    let sched = Schedule::from_network(&net);
    let jac = jacobian(&net, &sched, &State::flat(&sched)).to_dense();
    // at a flat start no current flows, so only the b_ij terms remain
    let expected = [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, -10.0, 0.0, 10.0],
        [-10.0, 0.0, 10.0, 0.0],
    ];
    for (row, want) in jac.iter().zip(&expected) {
        for (a, b) in row.iter().zip(want) {
            approx::assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }
}

#[test]
fn pv_voltage_row_is_two_e_two_f() {
    let text = TWO_BUS
        .replace(r#""type": "PQ""#, r#""type": "PV""#)
        .replace(r#""gen": [{"bus": 1}]"#, r#""gen": [{"bus": 1}, {"bus": 2, "pg": 10}]"#);
    let net = parse_case(&text).unwrap();
    let sched = Schedule::from_network(&net);
    assert_eq!(sched.kind[1], BusKind::PV);
    let jac = jacobian(&net, &sched, &State::flat(&sched)).to_dense();
    assert_eq!(jac[3], vec![0.0, 0.0, 2.0, 0.0]);
}

#[test]
fn lambda_column_skips_voltage_and_reference_rows() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let sched = Schedule::from_network(&net);
    let col = lambda_column(&sched, &dir);
    for i in 0..sched.len() {
        match sched.kind[i] {
            BusKind::Ref => assert_eq!((col[2 * i], col[2 * i + 1]), (0.0, 0.0)),
            BusKind::PV => {
                assert_eq!(col[2 * i], -dir.dp[i]);
                assert_eq!(col[2 * i + 1], 0.0);
            }
            BusKind::PQ => assert_eq!((col[2 * i], col[2 * i + 1]), (-dir.dp[i], -dir.dq[i])),
        }
    }
}

#[test]
fn order_one_forcing_is_zero() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let (sched, s0) = base_state(&net, &dir);
    let table = SeriesTable::new(&s0, 6);
    let (bg, bh) = assemble_b(&net, &sched, &table, 1).unwrap();
    assert!(bg.iter().all(|&b| b == 0.0));
    assert_eq!(bh, None);
}

#[test]
fn missing_orders_are_reported() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let (sched, s0) = base_state(&net, &dir);
    let table = SeriesTable::new(&s0, 6);
    for k in [0, 3, 7] {
        assert!(matches!(
            assemble_b(&net, &sched, &table, k),
            Err(TraceError::MissingOrders { .. })
        ));
    }
}

/// Order-`k` residual of the unsplit transformed equations, straight from
/// convolutions of the full coefficient lists.
fn full_residual(net: &PowerNetwork, sched: &Schedule, dir: &DirectionVector, t: &SeriesTable, k: usize) -> Vec<f64> {
    let n = net.n_buses();
    let mut r = vec![0.0; 2 * n];
    let lam = t.lambda.get(k);
    for i in 0..n {
        let (ei, fi) = (t.e[i].coeffs(), t.f[i].coeffs());
        if sched.kind[i] == BusKind::Ref {
            r[2 * i] = ei[k];
            r[2 * i + 1] = fi[k];
            continue;
        }
        let (mut p, mut q) = (0.0, 0.0);
        for (j, y) in net.ybus.row(i) {
            let (ej, fj) = (t.e[j].coeffs(), t.f[j].coeffs());
            // S_i = V_i conj(Y_ij V_j)
            let ir: Vec<f64> = ej.iter().zip(fj).map(|(a, b)| y.re * a - y.im * b).collect();
            let ii: Vec<f64> = ej.iter().zip(fj).map(|(a, b)| y.re * b + y.im * a).collect();
            p += conv_slices(ei, &ir, k) + conv_slices(fi, &ii, k);
            q += conv_slices(fi, &ir, k) - conv_slices(ei, &ii, k);
        }
        r[2 * i] = p - dir.dp[i] * lam;
        r[2 * i + 1] = match sched.kind[i] {
            BusKind::PQ => q - dir.dq[i] * lam,
            _ => conv_slices(ei, ei, k) + conv_slices(fi, fi, k),
        };
    }
    r
}

#[test]
fn order_two_split_matches_full_convolution() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let (sched, s0) = base_state(&net, &dir);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let mut table = SeriesTable::new(&s0, 6);
        let n2 = 2 * net.n_buses();
        let y1: Vec<f64> = (0..n2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        table.set_order(1, &y1, rng.gen_range(-1.0..1.0));
        let (bg, _) = assemble_b(&net, &sched, &table, 2).unwrap();
        let y2: Vec<f64> = (0..n2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let l2 = rng.gen_range(-1.0..1.0);
        table.set_order(2, &y2, l2);

        let ay = jacobian(&net, &sched, &s0).mul_vec(&y2);
        let al = lambda_column(&sched, &dir);
        let split: Vec<f64> = (0..n2).map(|r| ay[r] + al[r] * l2 + bg[r]).collect();
        let full = full_residual(&net, &sched, &dir, &table, 2);
        for r in 0..n2 {
            assert!((split[r] - full[r]).abs() < 1e-12, "row {r}: {} vs {}", split[r], full[r]);
        }
    }
}

#[test]
fn solved_orders_satisfy_full_equations() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let (sched, s0) = base_state(&net, &dir);
    let l = net.bus_index(9).unwrap();
    for drive in [WindowDrive::Lambda { c1: 1.0 }, WindowDrive::Voltage { c2: 1.0, bus: l }] {
        let ws = solve_window(&net, &sched, &dir, &s0, drive, WindowOptions::plain(6)).unwrap();
        for k in 1..=6 {
            let r = full_residual(&net, &sched, &dir, &ws.table, k);
            let worst = r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(worst < 1e-10, "{drive:?} order {k}: {worst:e}");
        }
        assert!(ws.max_order_residual < 1e-10);
        assert_eq!(ws.substitutions, 6);
    }
}

#[test]
fn driven_voltage_identity_holds_at_every_order() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let (sched, s0) = base_state(&net, &dir);
    let l = net.bus_index(5).unwrap();
    let ws = solve_window(&net, &sched, &dir, &s0, WindowDrive::Voltage { c2: 1.0, bus: l }, WindowOptions::plain(6))
        .unwrap();
    let t = &ws.table;
    let vl = t.vl.as_ref().unwrap().coeffs();
    let (el, fl) = (t.e[l].coeffs(), t.f[l].coeffs());
    for k in 0..=6 {
        let gap = conv_slices(vl, vl, k) - conv_slices(el, el, k) - conv_slices(fl, fl, k);
        assert!(gap.abs() < 1e-10, "order {k}: {gap:e}");
    }
    assert_eq!(vl[1], -1.0);
    assert!(vl[2..].iter().all(|&v| v == 0.0));
}

#[test]
fn zero_rates_give_fixed_points() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let (sched, s0) = base_state(&net, &dir);
    let l = net.bus_index(9).unwrap();
    for drive in [WindowDrive::Lambda { c1: 0.0 }, WindowDrive::Voltage { c2: 0.0, bus: l }] {
        let ws = solve_window(&net, &sched, &dir, &s0, drive, WindowOptions::plain(6)).unwrap();
        for k in 1..=6 {
            assert!(ws.table.y(k).iter().all(|v| v.abs() < 1e-14), "{drive:?} order {k}");
            assert!(ws.table.lambda.get(k).abs() < 1e-14);
        }
        let end = ws.table.eval(0.3);
        for i in 0..net.n_buses() {
            assert!((end.e[i] - s0.e[i]).abs() < 1e-14 && (end.f[i] - s0.f[i]).abs() < 1e-14);
        }
    }
}

#[test]
fn zero_length_window_returns_initial_state() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let (sched, s0) = base_state(&net, &dir);
    let ws = solve_window(&net, &sched, &dir, &s0, WindowDrive::Lambda { c1: 1.0 }, WindowOptions::plain(6)).unwrap();
    assert_eq!(ws.table.eval(0.0), s0);
}

#[test]
fn order_one_solution_is_the_continuation_tangent() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let (sched, s0) = base_state(&net, &dir);
    let ws = solve_window(&net, &sched, &dir, &s0, WindowDrive::Lambda { c1: 1.0 }, WindowOptions::plain(1)).unwrap();
    let mut z = ws.table.y(1);
    z.push(ws.table.lambda.get(1));
    assert_eq!(z[z.len() - 1], 1.0);
    let t = tangent(&net, &sched, &dir, &s0, None).unwrap();
    let dot: f64 = z.iter().zip(&t).map(|(a, b)| a * b).sum();
    let nz = z.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nt = t.iter().map(|a| a * a).sum::<f64>().sqrt();
    let cos = dot / (nz * nt);
    assert!(cos > 1.0 - 1e-8, "cosine {cos}");
}

#[test]
fn assemble_a_borders_only_for_the_driven_form() {
    let net = load("case9.m");
    let dir = uniform(&net);
    let (sched, s0) = base_state(&net, &dir);
    let plain = assemble_a(&net, &sched, &dir, &SeriesTable::new(&s0, 6)).unwrap();
    assert!(!plain.bordered());
    assert_eq!(plain.factorization.dim(), 18);
    let l = net.bus_index(9).unwrap();
    let b = assemble_a(&net, &sched, &dir, &SeriesTable::driven(&s0, 6, l)).unwrap();
    assert!(b.bordered());
    assert_eq!(b.factorization.dim(), 19);
    let (bus, ae, af) = b.a_hy.unwrap();
    assert_eq!((bus, ae, af), (l, 2.0 * s0.e[l], 2.0 * s0.f[l]));
    assert_eq!(b.a_hlambda, 0.0);
}
