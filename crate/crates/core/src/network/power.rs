//! Rectangular-coordinate power-flow equations `0 = g(y, λ)`.
//!
//! Rows are interleaved per bus: bus `i` owns rows `2i` and `2i+1`, which
//! are `(P, Q)` for PQ buses, `(P, |V|²)` for PV buses and `(e, f)` for the
//! reference bus. Variables are interleaved the same way: `y = [e_1, f_1,
//! e_2, f_2, ...]`.

use super::{BusKind, DirectionVector, PowerNetwork};

/// Bus roles and specified values for one trace. Starts from the network's
/// base-case partition and changes only through Q-limit switching.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub kind: Vec<BusKind>,
    pub p_sp: Vec<f64>,
    pub q_sp: Vec<f64>,
    pub v_sp: Vec<f64>,
    pub e_sp: Vec<f64>,
    pub f_sp: Vec<f64>,
}

impl Schedule {
    pub fn from_network(net: &PowerNetwork) -> Self {
        let b = &net.buses;
        Self {
            kind: b.iter().map(|b| b.kind).collect(),
            p_sp: b.iter().map(|b| b.p_sp).collect(),
            q_sp: b.iter().map(|b| b.q_sp).collect(),
            v_sp: b.iter().map(|b| b.v_sp).collect(),
            e_sp: b.iter().map(|b| b.e_sp).collect(),
            f_sp: b.iter().map(|b| b.f_sp).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.kind.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kind.is_empty()
    }

    /// Re-types PV bus `i` as PQ with its generators' total reactive output
    /// pinned at `q_gen` (p.u.).
    pub fn pin_reactive(&mut self, net: &PowerNetwork, i: usize, q_gen: f64) {
        self.kind[i] = BusKind::PQ;
        self.q_sp[i] = q_gen - net.buses[i].qd / net.base_mva;
    }

    pub fn pq_buses(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.kind[i] == BusKind::PQ)
    }
}

/// Bus voltages in rectangular form plus the loading parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub e: Vec<f64>,
    pub f: Vec<f64>,
    pub lambda: f64,
}

impl State {
    /// Flat start: `e = v_sp` on PV/REF buses (reference keeps its angle),
    /// `e = 1` elsewhere, `f = 0`.
    pub fn flat(sched: &Schedule) -> Self {
        let n = sched.len();
        let mut e = vec![1.0; n];
        let mut f = vec![0.0; n];
        for i in 0..n {
            match sched.kind[i] {
                BusKind::PQ => {}
                BusKind::PV => e[i] = sched.v_sp[i],
                BusKind::Ref => {
                    e[i] = sched.e_sp[i];
                    f[i] = sched.f_sp[i];
                }
            }
        }
        Self { e, f, lambda: 0.0 }
    }

    /// Voltages stored in the case file, with setpoints enforced on PV/REF
    /// buses.
    pub fn from_case(net: &PowerNetwork, sched: &Schedule) -> Self {
        let n = sched.len();
        let mut e = vec![0.0; n];
        let mut f = vec![0.0; n];
        for (i, b) in net.buses.iter().enumerate() {
            let vm = match sched.kind[i] {
                BusKind::PQ if b.vm > 0.0 => b.vm,
                BusKind::PQ => 1.0,
                _ => sched.v_sp[i],
            };
            let th = b.va.to_radians();
            e[i] = vm * th.cos();
            f[i] = vm * th.sin();
        }
        let r = net.ref_index();
        e[r] = sched.e_sp[r];
        f[r] = sched.f_sp[r];
        Self { e, f, lambda: 0.0 }
    }

    pub fn n_buses(&self) -> usize {
        self.e.len()
    }

    pub fn vmag(&self) -> Vec<f64> {
        self.e.iter().zip(&self.f).map(|(e, f)| e.hypot(*f)).collect()
    }

    pub fn min_vmag(&self) -> f64 {
        self.vmag().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Interleaved `[e_1, f_1, ...]`.
    pub fn to_y(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(2 * self.e.len());
        for (e, f) in self.e.iter().zip(&self.f) {
            y.push(*e);
            y.push(*f);
        }
        y
    }

    pub fn from_y(y: &[f64], lambda: f64) -> Self {
        Self {
            e: y.iter().step_by(2).copied().collect(),
            f: y.iter().skip(1).step_by(2).copied().collect(),
            lambda,
        }
    }
}

/// Net injections `(P_i(y), Q_i(y))` computed by the network at voltages
/// `(e, f)`.
pub fn injections(net: &PowerNetwork, e: &[f64], f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = net.n_buses();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let (mut pi, mut qi) = (0.0, 0.0);
        for (j, y) in net.ybus.row(i) {
            let (g, b) = (y.re, y.im);
            let c = e[i] * e[j] + f[i] * f[j];
            let d = f[i] * e[j] - e[i] * f[j];
            pi += g * c + b * d;
            qi += -b * c + g * d;
        }
        p[i] = pi;
        q[i] = qi;
    }
    (p, q)
}

/// `g(y, λ)` in the interleaved row layout.
pub fn mismatch(
    net: &PowerNetwork,
    sched: &Schedule,
    dir: &DirectionVector,
    state: &State,
) -> Vec<f64> {
    let n = net.n_buses();
    let (p, q) = injections(net, &state.e, &state.f);
    let lam = state.lambda;
    let mut g = vec![0.0; 2 * n];
    for i in 0..n {
        let (e, f) = (state.e[i], state.f[i]);
        match sched.kind[i] {
            BusKind::PQ => {
                g[2 * i] = p[i] - lam * dir.dp[i] - sched.p_sp[i];
                g[2 * i + 1] = q[i] - lam * dir.dq[i] - sched.q_sp[i];
            }
            BusKind::PV => {
                g[2 * i] = p[i] - lam * dir.dp[i] - sched.p_sp[i];
                g[2 * i + 1] = e * e + f * f - sched.v_sp[i] * sched.v_sp[i];
            }
            BusKind::Ref => {
                g[2 * i] = e - sched.e_sp[i];
                g[2 * i + 1] = f - sched.f_sp[i];
            }
        }
    }
    g
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Total generator reactive output per bus in p.u.: the bus's net reactive
/// injection plus its reactive load.
pub fn generator_reactive(net: &PowerNetwork, state: &State) -> Vec<f64> {
    let (_, q) = injections(net, &state.e, &state.f);
    q.iter()
        .zip(&net.buses)
        .map(|(qi, b)| qi + b.qd / net.base_mva)
        .collect()
}
