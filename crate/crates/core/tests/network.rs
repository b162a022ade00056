mod common;

use common::load;
use dpf_core::network::{
    build_direction, BranchRecord, BusKind, BusRecord, CaseData, DirectionSpec, GenRecord,
};
use dpf_core::PowerNetwork;
use num_complex::Complex64;
use proptest::prelude::*;

// (from, to, r, x, b) of the 9-bus case
const CASE9_BRANCHES: [(usize, usize, f64, f64, f64); 9] = [
    (1, 4, 0.0, 0.0576, 0.0),
    (4, 5, 0.017, 0.092, 0.158),
    (5, 6, 0.039, 0.17, 0.358),
    (3, 6, 0.0, 0.0586, 0.0),
    (6, 7, 0.0119, 0.1008, 0.209),
    (7, 8, 0.0085, 0.072, 0.149),
    (8, 2, 0.0, 0.0625, 0.0),
    (8, 9, 0.032, 0.161, 0.306),
    (9, 4, 0.01, 0.085, 0.176),
];

#[test]
fn nine_bus_admittance_matches_hand_assembly() {
    let net = load("case9.m");
    let mut y = vec![vec![Complex64::new(0.0, 0.0); 9]; 9];
    for (f, t, r, x, b) in CASE9_BRANCHES {
        let ys = 1.0 / Complex64::new(r, x);
        let sh = Complex64::new(0.0, b / 2.0);
        let (i, j) = (f - 1, t - 1);
        y[i][i] += ys + sh;
        y[j][j] += ys + sh;
        y[i][j] -= ys;
        y[j][i] -= ys;
    }
    let dense = net.ybus.to_dense();
    for i in 0..9 {
        for j in 0..9 {
            let (ii, jj) = (net.bus_index(i + 1).unwrap(), net.bus_index(j + 1).unwrap());
            assert!((dense[ii][jj] - y[i][j]).norm() < 1e-12, "Y[{i}][{j}]");
        }
    }
    assert_eq!(net.ybus.nnz(), 9 + 2 * 9);
}

#[test]
fn shipped_cases_parse_with_expected_sizes() {
    for (name, buses, branches) in [
        ("case9.m", 9, 9),
        ("case39.m", 39, 46),
        ("case57.m", 57, 80),
    ] {
        let net = load(name);
        assert_eq!(net.n_buses(), buses, "{name}");
        assert_eq!(net.in_service_branches().count(), branches, "{name}");
        assert_eq!(
            net.buses.iter().filter(|b| b.kind == BusKind::Ref).count(),
            1,
            "{name}"
        );
    }
}

#[test]
fn uniform_direction_scales_net_injections() {
    let net = load("case9.m");
    let dir = build_direction(&net, &DirectionSpec::Uniform).unwrap();
    for (i, b) in net.buses.iter().enumerate() {
        let (dp, dq) = match b.kind {
            BusKind::Ref => (0.0, 0.0),
            BusKind::PV => (b.p_sp, 0.0),
            BusKind::PQ => (b.p_sp, b.q_sp),
        };
        assert_eq!((dir.dp[i], dir.dq[i]), (dp, dq), "bus {}", b.id);
    }
    let i9 = net.bus_index(9).unwrap();
    assert!((dir.dp[i9] + 1.25).abs() < 1e-15 && (dir.dq[i9] + 0.5).abs() < 1e-15);
}

#[test]
fn json_and_matpower_give_the_same_network() {
    let net = load("case9.m");
    let again = dpf_core::network::parse_case(&net.to_json()).unwrap();
    assert_eq!(net, again);
}

prop_compose! {
    // connected case: a random spanning tree plus extra chords
    fn random_case()(n in 2usize..12)
        (parents in proptest::collection::vec(any::<prop::sample::Index>(), n - 1),
         chords in proptest::collection::vec((any::<prop::sample::Index>(), any::<prop::sample::Index>()), 0..6),
         params in proptest::collection::vec((0.0f64..0.05, 0.02f64..0.3, 0.0f64..0.4, 0.9f64..1.1, -10.0f64..10.0), n + 6),
         loads in proptest::collection::vec((0.0f64..100.0, -20.0f64..50.0, -5.0f64..5.0, -10.0f64..30.0), n),
         pv in proptest::collection::vec(any::<bool>(), n),
         n in Just(n))
        -> CaseData
    {
        let mut pairs: Vec<(usize, usize)> = (1..n).map(|i| (parents[i - 1].index(i), i)).collect();
        for (a, b) in chords {
            let (a, b) = (a.index(n), b.index(n));
            if a != b {
                pairs.push((a, b));
            }
        }
        let bus = (0..n)
            .map(|i| BusRecord {
                id: 10 + 3 * i,
                kind: if i == 0 { BusKind::Ref } else if pv[i] { BusKind::PV } else { BusKind::PQ },
                pd: loads[i].0,
                qd: loads[i].1,
                gs: loads[i].2,
                bs: loads[i].3,
                vm: 1.0,
                va: 0.0,
            })
            .collect();
        let gen = (0..n)
            .filter(|&i| i == 0 || pv[i])
            .map(|i| GenRecord {
                bus: 10 + 3 * i,
                pg: 20.0,
                qg: 0.0,
                qmax: 100.0,
                qmin: -100.0,
                vg: 1.02,
                status: true,
            })
            .collect();
        let branch = pairs
            .iter()
            .zip(&params)
            .map(|(&(a, b), &(r, x, sh, tap, ang))| BranchRecord {
                from: 10 + 3 * a,
                to: 10 + 3 * b,
                r,
                x,
                b: sh,
                ratio: tap,
                angle: ang,
                status: true,
            })
            .collect();
        CaseData { base_mva: 100.0, bus, gen, branch }
    }
}

fn without_transformers(mut c: CaseData) -> CaseData {
    for br in &mut c.branch {
        br.ratio = 1.0;
        br.angle = 0.0;
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn case_json_round_trip(case in random_case()) {
        let net = PowerNetwork::from_case(&case).unwrap();
        let text = case.to_json();
        prop_assert_eq!(&CaseData::from_json(&text).unwrap(), &case);
        prop_assert_eq!(net.to_case(), case.clone());
        prop_assert_eq!(PowerNetwork::from_case(&net.to_case()).unwrap(), net);
    }

    #[test]
    fn ybus_symmetric_without_phase_shift(case in random_case()) {
        let net = PowerNetwork::from_case(&without_transformers(case)).unwrap();
        let y = net.ybus.to_dense();
        for i in 0..net.n_buses() {
            for j in 0..net.n_buses() {
                prop_assert!((y[i][j] - y[j][i]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn ybus_rows_sum_to_shunts(case in random_case()) {
        let net = PowerNetwork::from_case(&without_transformers(case)).unwrap();
        let y = net.ybus.to_dense();
        let mut shunt: Vec<Complex64> = net
            .buses
            .iter()
            .map(|b| Complex64::new(b.gs, b.bs) / net.base_mva)
            .collect();
        for br in &net.branches {
            shunt[br.from_idx] += Complex64::new(0.0, br.shunt_b / 2.0);
            shunt[br.to_idx] += Complex64::new(0.0, br.shunt_b / 2.0);
        }
        for i in 0..net.n_buses() {
            let sum: Complex64 = y[i].iter().sum();
            prop_assert!((sum - shunt[i]).norm() < 1e-9 * (1.0 + y[i][i].norm()));
        }
    }

    #[test]
    fn lossless_network_conserves_active_power(case in random_case(), angles in proptest::collection::vec(-0.5f64..0.5, 12)) {
        // with r = 0, no shunts and no transformers, injected active power sums to zero
        let mut c = without_transformers(case);
        for br in &mut c.branch {
            br.r = 0.0;
            br.b = 0.0;
        }
        for b in &mut c.bus {
            b.gs = 0.0;
        }
        let net = PowerNetwork::from_case(&c).unwrap();
        let n = net.n_buses();
        let e: Vec<f64> = (0..n).map(|i| angles[i].cos()).collect();
        let f: Vec<f64> = (0..n).map(|i| angles[i].sin()).collect();
        let (p, _) = dpf_core::network::injections(&net, &e, &f);
        prop_assert!(p.iter().sum::<f64>().abs() < 1e-9);
    }
}
