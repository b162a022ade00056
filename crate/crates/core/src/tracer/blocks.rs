//! Formally linear order-k equations
//! `0 = A_gy·Y(k) + A_gλ·Λ(k) + B_g(k)` and, for the voltage-driven
//! formulation, the ancillary row `0 = a_l·Y(k) + ξ_l(k)`.

use crate::dt::{conv_slices, delta, middle_conv, DtSeries};
use crate::linalg::{LinalgError, LuFactor, SparseBuilder};
use crate::network::{BusKind, DirectionVector, PowerNetwork, Schedule, State};

use super::TraceError;

/// Per-window DT coefficients `E_i(k)`, `F_i(k)`, `Λ(k)` and, when a bus
/// is driven, `V_l(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    pub e: Vec<DtSeries>,
    pub f: Vec<DtSeries>,
    pub lambda: DtSeries,
    pub vl: Option<DtSeries>,
    /// Driven bus index for the voltage-driven formulation.
    pub driven: Option<usize>,
    /// Fictitious time per unit of the series variable: coefficients are
    /// those of `τ = t/scale`.
    pub scale: f64,
    filled: usize,
}

impl SeriesTable {
    /// Table of order `order` whose order-0 coefficients are `init`.
    pub fn new(init: &State, order: usize) -> Self {
        let lift = |v: &[f64]| v.iter().map(|x| DtSeries::constant(*x, order)).collect();
        Self {
            e: lift(&init.e),
            f: lift(&init.f),
            lambda: DtSeries::constant(init.lambda, order),
            vl: None,
            driven: None,
            scale: 1.0,
            filled: 0,
        }
    }

    /// Same, with bus `l` driven: `V_l(0) = |V_l|` at `init`.
    pub fn driven(init: &State, order: usize, l: usize) -> Self {
        let mut t = Self::new(init, order);
        t.vl = Some(DtSeries::constant(init.e[l].hypot(init.f[l]), order));
        t.driven = Some(l);
        t
    }

    pub fn order(&self) -> usize {
        self.lambda.order()
    }

    pub fn n_buses(&self) -> usize {
        self.e.len()
    }

    /// Highest order whose coefficients have been solved.
    pub fn filled(&self) -> usize {
        self.filled
    }

    pub fn y(&self, k: usize) -> Vec<f64> {
        let mut y = Vec::with_capacity(2 * self.e.len());
        for (e, f) in self.e.iter().zip(&self.f) {
            y.push(e.get(k));
            y.push(f.get(k));
        }
        y
    }

    /// Stores `Y(k)` and `Λ(k)` and marks order `k` as solved.
    pub fn set_order(&mut self, k: usize, y: &[f64], lambda: f64) {
        for i in 0..self.e.len() {
            self.e[i].set(k, y[2 * i]);
            self.f[i].set(k, y[2 * i + 1]);
        }
        self.lambda.set(k, lambda);
        self.filled = self.filled.max(k);
    }

    /// State at local fictitious time `t`.
    pub fn eval(&self, t: f64) -> State {
        let tau = t / self.scale;
        State {
            e: self.e.iter().map(|s| s.eval(tau)).collect(),
            f: self.f.iter().map(|s| s.eval(tau)).collect(),
            lambda: self.lambda.eval(tau),
        }
    }

    /// `λ` at local fictitious time `t`.
    pub fn lambda_at(&self, t: f64) -> f64 {
        self.lambda.eval(t / self.scale)
    }

    /// `dλ/dt` at local fictitious time `t`.
    pub fn lambda_rate(&self, t: f64) -> f64 {
        self.lambda.derivative().eval(t / self.scale) / self.scale
    }
}

/// Factorized order-k system of one window.
#[derive(Debug)]
pub struct LinearBlocks {
    pub a_gy: SparseBuilder,
    pub a_glambda: Vec<f64>,
    /// Driven bus and its `a_l` entries `(2E_l(0), 2F_l(0))`.
    pub a_hy: Option<(usize, f64, f64)>,
    pub a_hlambda: f64,
    /// LU of `A_gy`, or of the bordered matrix when `a_hy` is set.
    pub factorization: LuFactor,
}

impl LinearBlocks {
    pub fn bordered(&self) -> bool {
        self.a_hy.is_some()
    }
}

/// `A_gy` at the order-0 coefficients of `table`: the rectangular
/// power-flow Jacobian written through the `α_ij`, `β_ij` sums.
pub fn jacobian(net: &PowerNetwork, sched: &Schedule, y0: &State) -> SparseBuilder {
    let n = net.n_buses();
    let (e, f) = (&y0.e, &y0.f);
    let mut a = SparseBuilder::with_capacity(2 * n, 4 * net.ybus.nnz() + 2 * n);
    for i in 0..n {
        let (rp, rq) = (2 * i, 2 * i + 1);
        match sched.kind[i] {
            BusKind::Ref => {
                a.push(rp, 2 * i, 1.0);
                a.push(rq, 2 * i + 1, 1.0);
                continue;
            }
            BusKind::PV => {
                a.push(rq, 2 * i, 2.0 * e[i]);
                a.push(rq, 2 * i + 1, 2.0 * f[i]);
            }
            BusKind::PQ => {}
        }
        let pq = sched.kind[i] == BusKind::PQ;
        // Re/Im of the bus current enter the diagonal blocks.
        let (mut ire, mut iim) = (0.0, 0.0);
        for (j, y) in net.ybus.row(i) {
            let (g, b) = (y.re, y.im);
            ire += g * e[j] - b * f[j];
            iim += g * f[j] + b * e[j];
            let alpha = g * e[i] + b * f[i];
            let beta = g * f[i] - b * e[i];
            a.push(rp, 2 * j, alpha);
            a.push(rp, 2 * j + 1, beta);
            if pq {
                a.push(rq, 2 * j, beta);
                a.push(rq, 2 * j + 1, -alpha);
            }
        }
        a.push(rp, 2 * i, ire);
        a.push(rp, 2 * i + 1, iim);
        if pq {
            a.push(rq, 2 * i, -iim);
            a.push(rq, 2 * i + 1, ire);
        }
    }
    a
}

/// `A_gλ`: `-Δp_i` on P rows, `-Δq_i` on Q rows of PQ buses.
pub fn lambda_column(sched: &Schedule, dir: &DirectionVector) -> Vec<f64> {
    let n = sched.len();
    let mut col = vec![0.0; 2 * n];
    for i in 0..n {
        match sched.kind[i] {
            BusKind::PQ => {
                col[2 * i] = -dir.dp[i];
                col[2 * i + 1] = -dir.dq[i];
            }
            BusKind::PV => col[2 * i] = -dir.dp[i],
            BusKind::Ref => {}
        }
    }
    col
}

/// Builds and factorizes the window matrix. With `table.driven` set, the
/// factorized matrix is the bordered `[[A_gy, A_gλ], [a_l, 0]]`.
pub fn assemble_a(
    net: &PowerNetwork,
    sched: &Schedule,
    dir: &DirectionVector,
    table: &SeriesTable,
) -> Result<LinearBlocks, TraceError> {
    let y0 = table.eval(0.0);
    let a_gy = jacobian(net, sched, &y0);
    let a_glambda = lambda_column(sched, dir);
    let n2 = a_gy.dim();
    let (a_hy, factorization) = match table.driven {
        None => (None, a_gy.factorize()),
        Some(l) => {
            let mut big = SparseBuilder::with_capacity(n2 + 1, a_gy.nnz() + n2 + 2);
            big.extend_from(&a_gy);
            for (r, v) in a_glambda.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                big.push(r, n2, *v);
            }
            let (ae, af) = (2.0 * y0.e[l], 2.0 * y0.f[l]);
            big.push(n2, 2 * l, ae);
            big.push(n2, 2 * l + 1, af);
            (Some((l, ae, af)), big.factorize())
        }
    };
    let factorization = factorization.map_err(|e| match e {
        LinalgError::Singular { condition } => TraceError::Singular { condition },
        other => TraceError::Linalg(other),
    })?;
    Ok(LinearBlocks {
        a_gy,
        a_glambda,
        a_hy,
        a_hlambda: 0.0,
        factorization,
    })
}

/// Known part of the order-k equations: `B_g(k)` and, for a driven table,
/// `B_h(k) = ξ_l(k)`. Needs orders `0..k-1` (and `V_l(k)`).
pub fn assemble_b(
    net: &PowerNetwork,
    sched: &Schedule,
    table: &SeriesTable,
    k: usize,
) -> Result<(Vec<f64>, Option<f64>), TraceError> {
    if k == 0 || k > table.order() || table.filled() + 1 < k {
        return Err(TraceError::MissingOrders {
            k,
            filled: table.filled(),
        });
    }
    let n = net.n_buses();
    let dk = delta(k);
    let mut bg = vec![0.0; 2 * n];
    for i in 0..n {
        let (ei, fi) = (table.e[i].coeffs(), table.f[i].coeffs());
        match sched.kind[i] {
            BusKind::Ref => {
                bg[2 * i] = -sched.e_sp[i] * dk;
                bg[2 * i + 1] = -sched.f_sp[i] * dk;
                continue;
            }
            BusKind::PV => {
                let cii = middle_conv(ei, ei, k) + middle_conv(fi, fi, k);
                bg[2 * i + 1] = cii - sched.v_sp[i].powi(2) * dk;
            }
            BusKind::PQ => {}
        }
        let (mut eps, mut mu) = (0.0, 0.0);
        for (j, y) in net.ybus.row(i) {
            let (ej, fj) = (table.e[j].coeffs(), table.f[j].coeffs());
            let c = middle_conv(ei, ej, k) + middle_conv(fi, fj, k);
            let d = middle_conv(fi, ej, k) - middle_conv(ei, fj, k);
            eps += y.re * c + y.im * d;
            mu += -y.im * c + y.re * d;
        }
        bg[2 * i] = eps - sched.p_sp[i] * dk;
        if sched.kind[i] == BusKind::PQ {
            bg[2 * i + 1] = mu - sched.q_sp[i] * dk;
        }
    }
    let bh = table.driven.map(|l| {
        let (el, fl) = (table.e[l].coeffs(), table.f[l].coeffs());
        let vl = table.vl.as_ref().expect("driven table carries V_l").coeffs();
        middle_conv(el, el, k) + middle_conv(fl, fl, k) - conv_slices(vl, vl, k)
    });
    Ok((bg, bh))
}

/// Order-k step of the λ-driven formulation: `Λ(k) = c1·δ(k-1)`, then
/// `Y(k) = -A_gy⁻¹(A_gλ·Λ(k) + B_g)`.
pub fn solve_order_k_f1(
    blocks: &LinearBlocks,
    net: &PowerNetwork,
    sched: &Schedule,
    table: &mut SeriesTable,
    k: usize,
    c1: f64,
) -> Result<(), TraceError> {
    debug_assert!(!blocks.bordered());
    let lam = c1 * table.scale * delta(k - 1);
    let (bg, _) = assemble_b(net, sched, table, k)?;
    let mut rhs: Vec<f64> = bg
        .iter()
        .zip(&blocks.a_glambda)
        .map(|(b, a)| -(a * lam + b))
        .collect();
    blocks.factorization.solve(&mut rhs).map_err(TraceError::Linalg)?;
    table.set_order(k, &rhs, lam);
    Ok(())
}

/// Order-k step of the voltage-driven formulation:
/// `V_l(k) = -c2·δ(k-1)`, then one bordered solve for `(Y(k), Λ(k))`.
pub fn solve_order_k_f2(
    blocks: &LinearBlocks,
    net: &PowerNetwork,
    sched: &Schedule,
    table: &mut SeriesTable,
    k: usize,
    c2: f64,
) -> Result<(), TraceError> {
    debug_assert!(blocks.bordered());
    let vl = table.vl.as_mut().expect("driven table carries V_l");
    vl.set(k, -c2 * table.scale * delta(k - 1));
    let (bg, bh) = assemble_b(net, sched, table, k)?;
    let mut rhs: Vec<f64> = bg.iter().map(|b| -b).collect();
    rhs.push(-bh.expect("driven table yields B_h"));
    blocks.factorization.solve(&mut rhs).map_err(TraceError::Linalg)?;
    let lam = rhs.pop().unwrap();
    table.set_order(k, &rhs, lam);
    Ok(())
}

/// Largest absolute residual of the full (unsplit) transformed equations
/// at order `k`, built from plain convolutions of the table.
pub fn order_residual(
    net: &PowerNetwork,
    sched: &Schedule,
    dir: &DirectionVector,
    table: &SeriesTable,
    k: usize,
) -> f64 {
    let n = net.n_buses();
    let dk = delta(k);
    let lk = table.lambda.get(k);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let (ei, fi) = (table.e[i].coeffs(), table.f[i].coeffs());
        let (r1, r2) = match sched.kind[i] {
            BusKind::Ref => (ei[k] - sched.e_sp[i] * dk, fi[k] - sched.f_sp[i] * dk),
            kind => {
                let (mut p, mut q) = (0.0, 0.0);
                for (j, y) in net.ybus.row(i) {
                    let (ej, fj) = (table.e[j].coeffs(), table.f[j].coeffs());
                    let c = conv_slices(ei, ej, k) + conv_slices(fi, fj, k);
                    let d = conv_slices(fi, ej, k) - conv_slices(ei, fj, k);
                    p += y.re * c + y.im * d;
                    q += -y.im * c + y.re * d;
                }
                let rp = p - lk * dir.dp[i] - sched.p_sp[i] * dk;
                let rq = if kind == BusKind::PQ {
                    q - lk * dir.dq[i] - sched.q_sp[i] * dk
                } else {
                    conv_slices(ei, ei, k) + conv_slices(fi, fi, k) - sched.v_sp[i].powi(2) * dk
                };
                (rp, rq)
            }
        };
        worst = worst.max(r1.abs()).max(r2.abs());
    }
    if let (Some(l), Some(vl)) = (table.driven, table.vl.as_ref()) {
        let (el, fl, v) = (table.e[l].coeffs(), table.f[l].coeffs(), vl.coeffs());
        let r = conv_slices(v, v, k) - conv_slices(el, el, k) - conv_slices(fl, fl, k);
        worst = worst.max(r.abs());
    }
    worst
}
