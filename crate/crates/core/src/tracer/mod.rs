//! DPF curve tracer.
//!
//! Each window embeds the power flow into fictitious dynamics, either
//! `dλ/dt = c1` (λ-driven) or `dV_l/dt = -c2` (voltage-driven on load bus
//! `l`), and solves the trajectory as a truncated power series. One matrix
//! factorization per window is reused for all `K` orders. Windows are
//! chained end to end; the λ-driven form runs the upper branch and the
//! voltage-driven form carries the trace through the nose.

mod blocks;

use log::{debug, info};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{
    CurvePoint, Formulation, QLimit, QLimitEvent, Segment, SolutionCurve, StopReason,
    WindowRecord,
};
use crate::linalg::LinalgError;
use crate::network::norm_inf;
use crate::network::{
    generator_reactive, mismatch, BusKind, DirectionVector, PowerNetwork, Schedule, State,
};
use crate::reference::{newton_power_flow, NrConfig, SolverError};

pub use blocks::{
    assemble_a, assemble_b, jacobian, lambda_column, order_residual, solve_order_k_f1,
    solve_order_k_f2, LinearBlocks, SeriesTable,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("nose-point singularity (condition estimate {condition:e})")]
    Singular { condition: f64 },
    #[error(transparent)]
    Linalg(LinalgError),
    #[error("order {k} needs orders below it, table filled to {filled}")]
    MissingOrders { k: usize, filled: usize },
    #[error("window rejected: end-state residual {residual:e}")]
    WindowRejected { residual: f64 },
    #[error("base case infeasible: {0}")]
    BaseCase(SolverError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulationMode {
    LambdaDriven,
    VoltageDriven,
    /// λ-driven on the upper branch, voltage-driven around the nose, and
    /// λ-driven with reversed rate on the lower branch when it is steep
    /// enough in λ.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceConfig {
    pub formulation: FormulationMode,
    /// λ rate per unit fictitious time.
    pub c1: f64,
    /// Driven-voltage rate; positive values lower the driven voltage.
    pub c2: f64,
    pub order_k: usize,
    pub step_h: f64,
    pub residual_tol: f64,
    pub max_windows: usize,
    pub enforce_q_limits: bool,
    /// Bus id driven by the voltage-driven form; chosen automatically
    /// when absent.
    pub driven_bus: Option<usize>,
    /// Lower-branch stopping level for λ.
    pub stop_lambda_floor: f64,
    /// Stop as soon as the nose has been located.
    pub stop_at_nose: bool,
    pub min_vmag: f64,
    /// Step halvings tried on one series before the window fails.
    pub max_halvings: u32,
    /// A λ-driven window accepted only below `switch_ratio·step_h` hands
    /// over to the voltage-driven form; 1 switches at the first halving.
    pub switch_ratio: f64,
    /// Condition estimate of `A_gy` above which the λ-driven form hands
    /// over.
    pub condition_limit: f64,
    /// Curve points emitted per window (evenly spaced in local time).
    pub samples_per_window: usize,
    /// Evaluate the transformed residual at every solved order.
    pub check_orders: bool,
    pub base_case: NrConfig,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            formulation: FormulationMode::Auto,
            c1: 1.0,
            c2: 1.0,
            order_k: 6,
            step_h: 0.1,
            residual_tol: 1e-6,
            max_windows: 200,
            enforce_q_limits: false,
            driven_bus: None,
            stop_lambda_floor: 0.0,
            stop_at_nose: false,
            min_vmag: 0.1,
            max_halvings: 8,
            switch_ratio: 1.0,
            condition_limit: 1e12,
            samples_per_window: 5,
            check_orders: true,
            base_case: NrConfig::default(),
        }
    }
}

impl TraceConfig {
    pub fn window_options(&self, h: f64, condition: bool) -> WindowOptions {
        WindowOptions {
            order: self.order_k,
            condition,
            check_orders: self.check_orders,
            time_scale: h,
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: &str| Err(TraceError::Config(m.to_string()));
        let lam = matches!(self.formulation, FormulationMode::LambdaDriven | FormulationMode::Auto);
        let volt = matches!(self.formulation, FormulationMode::VoltageDriven | FormulationMode::Auto);
        if lam && !(self.c1 != 0.0 && self.c1.is_finite()) {
            return bad("c1 must be nonzero");
        }
        if volt && !(self.c2 != 0.0 && self.c2.is_finite()) {
            return bad("c2 must be nonzero");
        }
        if self.order_k < 2 {
            return bad("order_k must be at least 2");
        }
        if !(self.step_h > 0.0 && self.step_h.is_finite()) {
            return bad("step_h must be positive");
        }
        if !(self.residual_tol > 0.0) {
            return bad("residual_tol must be positive");
        }
        if self.samples_per_window == 0 {
            return bad("samples_per_window must be at least 1");
        }
        Ok(())
    }
}

/// How one window is driven.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowDrive {
    Lambda { c1: f64 },
    Voltage { c2: f64, bus: usize },
}

impl WindowDrive {
    fn formulation(&self) -> Formulation {
        match self {
            Self::Lambda { .. } => Formulation::LambdaDriven,
            Self::Voltage { .. } => Formulation::VoltageDriven,
        }
    }

    fn rate(&self) -> f64 {
        match *self {
            Self::Lambda { c1 } => c1,
            Self::Voltage { c2, .. } => c2,
        }
    }

    fn bus(&self) -> Option<usize> {
        match *self {
            Self::Lambda { .. } => None,
            Self::Voltage { bus, .. } => Some(bus),
        }
    }
}

/// Series of one window before any step is chosen.
#[derive(Debug, Clone)]
pub struct WindowSeries {
    pub table: SeriesTable,
    /// Condition estimate of `A_gy` (λ-driven windows).
    pub condition: Option<f64>,
    pub max_order_residual: f64,
    pub substitutions: usize,
}

/// Per-window solve options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowOptions {
    pub order: usize,
    /// Estimate the condition number of `A_gy` (λ-driven windows only).
    pub condition: bool,
    pub check_orders: bool,
    /// Fictitious time per unit of the series variable.
    pub time_scale: f64,
}

impl WindowOptions {
    pub fn plain(order: usize) -> Self {
        Self {
            order,
            condition: false,
            check_orders: true,
            time_scale: 1.0,
        }
    }
}

/// Factorizes once and runs orders `1..=order` from `init`.
pub fn solve_window(
    net: &PowerNetwork,
    sched: &Schedule,
    dir: &DirectionVector,
    init: &State,
    drive: WindowDrive,
    opts: WindowOptions,
) -> Result<WindowSeries, TraceError> {
    let order = opts.order;
    let mut table = match drive {
        WindowDrive::Lambda { .. } => SeriesTable::new(init, order),
        WindowDrive::Voltage { bus, .. } => SeriesTable::driven(init, order, bus),
    };
    table.scale = opts.time_scale;
    let blocks = assemble_a(net, sched, dir, &table)?;
    let condition = (opts.condition && !blocks.bordered())
        .then(|| blocks.factorization.condition_estimate());
    let mut worst: f64 = 0.0;
    for k in 1..=order {
        match drive {
            WindowDrive::Lambda { c1 } => solve_order_k_f1(&blocks, net, sched, &mut table, k, c1)?,
            WindowDrive::Voltage { c2, .. } => {
                solve_order_k_f2(&blocks, net, sched, &mut table, k, c2)?
            }
        }
        if opts.check_orders {
            worst = worst.max(order_residual(net, sched, dir, &table, k));
        }
    }
    Ok(WindowSeries {
        table,
        condition,
        max_order_residual: worst,
        substitutions: order,
    })
}

/// One window of length `h`: series plus the validated end state.
pub fn trace_window(
    net: &PowerNetwork,
    sched: &Schedule,
    dir: &DirectionVector,
    init: &State,
    drive: WindowDrive,
    cfg: &TraceConfig,
    h: f64,
) -> Result<(SeriesTable, State), TraceError> {
    let ws = solve_window(net, sched, dir, init, drive, cfg.window_options(h, false))?;
    let end = ws.table.eval(h);
    let residual = norm_inf(&mismatch(net, sched, dir, &end));
    if !(residual < cfg.residual_tol) {
        return Err(TraceError::WindowRejected { residual });
    }
    Ok((ws.table, end))
}

/// PV buses whose generators sit outside their reactive limits at `state`,
/// as `(bus index, limit side, limit in p.u.)`.
pub fn reactive_violations(
    net: &PowerNetwork,
    sched: &Schedule,
    state: &State,
) -> Vec<(usize, QLimit, f64)> {
    let qg = generator_reactive(net, state);
    let mut out = Vec::new();
    for i in 0..sched.len() {
        if sched.kind[i] != BusKind::PV {
            continue;
        }
        if let Some((lo, hi)) = net.q_limits(i) {
            if qg[i] > hi {
                out.push((i, QLimit::Max, hi));
            } else if qg[i] < lo {
                out.push((i, QLimit::Min, lo));
            }
        }
    }
    out
}

/// Re-types every violating PV bus at `state` as PQ with its reactive
/// output pinned at the limit. Returns the events; a non-empty result
/// means the window matrices must be rebuilt.
pub fn enforce_q_limits(
    net: &PowerNetwork,
    sched: &mut Schedule,
    state: &State,
) -> Vec<QLimitEvent> {
    reactive_violations(net, sched, state)
        .into_iter()
        .map(|(i, side, lim)| {
            sched.pin_reactive(net, i, lim);
            QLimitEvent {
                bus: net.buses[i].id,
                lambda: state.lambda,
                limit: side,
                q_mvar: lim * net.base_mva,
            }
        })
        .collect()
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if (fa < 0.0) == (fm < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Local time of the earliest reactive-limit crossing in `(0, t_end]` for
/// the buses violating at `t_end`, with the buses crossing there.
fn first_q_crossing(
    net: &PowerNetwork,
    table: &SeriesTable,
    t_end: f64,
    violating: &[(usize, QLimit, f64)],
) -> (f64, Vec<(usize, QLimit, f64)>) {
    let mut hits: Vec<(f64, (usize, QLimit, f64))> = violating
        .iter()
        .map(|&(i, side, lim)| {
            let over = |t: f64| {
                let q = generator_reactive(net, &table.eval(t))[i];
                match side {
                    QLimit::Max => q - lim,
                    QLimit::Min => lim - q,
                }
            };
            let t = if over(0.0) >= 0.0 { 0.0 } else { bisect(over, 0.0, t_end) };
            (t, (i, side, lim))
        })
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0));
    let t0 = hits[0].0;
    let tol = 1e-12 * t_end.max(1.0);
    let buses = hits.into_iter().filter(|h| h.0 <= t0 + tol).map(|h| h.1).collect();
    (t0, buses)
}

/// PQ bus with the largest voltage change between two states.
fn steepest_pq_bus(sched: &Schedule, a: &State, b: &State) -> Option<usize> {
    let (va, vb) = (a.vmag(), b.vmag());
    sched
        .pq_buses()
        .max_by(|&i, &j| (va[i] - vb[i]).abs().total_cmp(&(va[j] - vb[j]).abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Upper,
    Driven,
    Lower,
}

struct Tracker<'a> {
    net: &'a PowerNetwork,
    curve: SolutionCurve,
}

impl Tracker<'_> {
    fn segment(&mut self, drive: WindowDrive) -> &mut Segment {
        let driven_bus = drive.bus().map(|b| self.net.buses[b].id);
        let same = self.curve.segments.last().is_some_and(|s| {
            s.formulation == drive.formulation() && s.driven_bus == driven_bus && s.rate == drive.rate()
        });
        if !same {
            self.curve.segments.push(Segment {
                formulation: drive.formulation(),
                driven_bus,
                rate: drive.rate(),
                windows: 0,
                linear_solves: 0,
                substitutions: 0,
            });
        }
        self.curve.segments.last_mut().unwrap()
    }

    fn count_factorization(&mut self, drive: WindowDrive) {
        self.curve.linear_solves += 1;
        self.segment(drive).linear_solves += 1;
    }
}

/// Traces the P-V curve of `net` along `dir`.
pub fn trace_curve(
    net: &PowerNetwork,
    dir: &DirectionVector,
    cfg: &TraceConfig,
) -> Result<SolutionCurve, TraceError> {
    cfg.validate()?;
    let mut sched = Schedule::from_network(net);
    let mut curve = SolutionCurve::new(net.buses.iter().map(|b| b.id).collect());

    let mut state = base_case(net, &mut sched, dir, cfg, &mut curve)?;
    let r0 = norm_inf(&mismatch(net, &sched, dir, &state));
    curve.max_point_residual = r0;
    curve.push_point(CurvePoint::from_state(&state));

    let mut driven = match cfg.driven_bus {
        Some(id) => {
            let i = net
                .bus_index(id)
                .ok_or_else(|| TraceError::Config(format!("unknown driven bus {id}")))?;
            if sched.kind[i] != BusKind::PQ {
                return Err(TraceError::Config(format!("driven bus {id} is not a PQ bus")));
            }
            Some(i)
        }
        None => None,
    };

    let auto = cfg.formulation == FormulationMode::Auto;
    let mut phase = match cfg.formulation {
        FormulationMode::VoltageDriven => Phase::Driven,
        _ => Phase::Upper,
    };
    let mut allow_lower = auto;
    let mut past_nose = false;
    let mut prev: Option<State> = None;
    let mut tr = Tracker { net, curve };
    let mut stop = StopReason::MaxWindows;
    let mut complete = cfg.max_windows == 0;
    let mut accepted = 0usize;
    let h = cfg.step_h;

    while accepted < cfg.max_windows {
        let drive = match phase {
            Phase::Upper => WindowDrive::Lambda { c1: cfg.c1 },
            Phase::Lower => WindowDrive::Lambda { c1: -cfg.c1.abs() },
            Phase::Driven => {
                let bus = match driven.filter(|&b| sched.kind[b] == BusKind::PQ) {
                    Some(b) => b,
                    None => {
                        let b = match &prev {
                            Some(p) => steepest_pq_bus(&sched, p, &state),
                            None => {
                                tr.curve.base_case_solves += 1;
                                tangent_pq_bus(net, &sched, dir, &state)
                            }
                        }
                        .ok_or_else(|| TraceError::Config("no PQ bus to drive".into()))?;
                        info!("driving bus {} from lambda {:.6}", net.buses[b].id, state.lambda);
                        driven = Some(b);
                        b
                    }
                };
                WindowDrive::Voltage { c2: cfg.c2, bus }
            }
        };

        tr.count_factorization(drive);
        let opts = cfg.window_options(h, phase == Phase::Upper && auto);
        let ws = match solve_window(net, &sched, dir, &state, drive, opts) {
            Ok(ws) => ws,
            Err(TraceError::Singular { condition }) if phase != Phase::Driven && auto => {
                debug!("lambda-driven matrix singular (cond {condition:e}), switching");
                if phase == Phase::Lower {
                    allow_lower = false;
                }
                phase = Phase::Driven;
                continue;
            }
            Err(TraceError::Singular { .. }) if phase == Phase::Upper => {
                stop = StopReason::Stalled;
                complete = true;
                break;
            }
            Err(TraceError::Singular { .. }) => {
                stop = StopReason::StepFailure;
                break;
            }
            Err(e) => return Err(e),
        };
        if let (Some(c), true) = (ws.condition, auto) {
            if c > cfg.condition_limit {
                debug!("condition estimate {c:e} above limit, switching");
                phase = Phase::Driven;
                continue;
            }
        }
        tr.curve.substitutions += ws.substitutions;
        tr.segment(drive).substitutions += ws.substitutions;
        tr.curve.max_order_residual = tr.curve.max_order_residual.max(ws.max_order_residual);

        let samples = cfg.samples_per_window;
        let mut t = h;
        let mut ok = None;
        for _ in 0..=cfg.max_halvings {
            let worst = (1..=samples)
                .map(|j| {
                    let s = ws.table.eval(t * j as f64 / samples as f64);
                    norm_inf(&mismatch(net, &sched, dir, &s))
                })
                .fold(0.0, f64::max);
            if worst < cfg.residual_tol {
                ok = Some(worst);
                break;
            }
            tr.curve.rejected_steps += 1;
            t *= 0.5;
        }
        let Some(worst) = ok else {
            debug!("{:?} window failed at lambda {:.6}", phase, state.lambda);
            match phase {
                Phase::Upper if auto => phase = Phase::Driven,
                Phase::Upper => {
                    stop = StopReason::Stalled;
                    complete = true;
                    break;
                }
                Phase::Lower => {
                    allow_lower = false;
                    phase = Phase::Driven;
                }
                Phase::Driven => {
                    stop = StopReason::StepFailure;
                    break;
                }
            }
            continue;
        };
        tr.curve.max_point_residual = tr.curve.max_point_residual.max(worst);

        let mut pins = Vec::new();
        if cfg.enforce_q_limits {
            let end = ws.table.eval(t);
            let viol = reactive_violations(net, &sched, &end);
            if !viol.is_empty() {
                let (tq, buses) = first_q_crossing(net, &ws.table, t, &viol);
                t = tq;
                pins = buses;
            }
        }

        let table = ws.table;
        let widx = tr.curve.windows.len();
        let rate0 = table.lambda_rate(0.0);
        let rate1 = table.lambda_rate(t);
        let mut nose_t = None;
        if !past_nose && t > 0.0 {
            if rate0 <= 0.0 && phase == Phase::Driven {
                nose_t = Some(0.0);
            } else if rate0 > 0.0 && rate1 < 0.0 {
                nose_t = Some(bisect(|s| -table.lambda_rate(s), 0.0, t));
            }
        }

        let emit = |tr: &mut Tracker, s: f64| {
            let st = table.eval(s);
            let r = norm_inf(&mismatch(net, &sched, dir, &st));
            tr.curve.max_point_residual = tr.curve.max_point_residual.max(r);
            tr.curve.push_point(CurvePoint::from_state(&st));
        };
        if t > 0.0 {
            let mut prev_s = 0.0;
            for j in 1..=samples {
                let s = t * j as f64 / samples as f64;
                if let Some(tn) = nose_t {
                    if tn > prev_s && tn < s {
                        emit(&mut tr, tn);
                    }
                }
                emit(&mut tr, s);
                prev_s = s;
            }
        }
        if let Some(tn) = nose_t {
            past_nose = true;
            tr.curve.nose_at = Some((widx, tn));
            info!("nose at lambda {:.6}", table.lambda_at(tn));
        }

        let end = table.eval(t);
        debug!(
            "window {widx} {:?} t={t:.5} lambda {:.6} -> {:.6} residual {:.2e} orders {:.2e}",
            phase,
            state.lambda,
            end.lambda,
            norm_inf(&mismatch(net, &sched, dir, &end)),
            ws.max_order_residual
        );
        let start = std::mem::replace(&mut state, end);
        let dl = state.lambda - start.lambda;
        tr.curve.windows.push(WindowRecord {
            formulation: drive.formulation(),
            table,
            step: t,
        });
        tr.segment(drive).windows += 1;
        accepted += 1;

        for (i, side, lim) in pins {
            sched.pin_reactive(net, i, lim);
            info!("bus {} hits its {:?} reactive limit at lambda {:.6}", net.buses[i].id, side, state.lambda);
            tr.curve.q_limit_events.push(QLimitEvent {
                bus: net.buses[i].id,
                lambda: state.lambda,
                limit: side,
                q_mvar: lim * net.base_mva,
            });
        }
        prev = Some(start);

        if state.min_vmag() < cfg.min_vmag {
            stop = StopReason::MinVoltage;
            complete = true;
            break;
        }
        if past_nose && cfg.stop_at_nose {
            stop = StopReason::Nose;
            complete = true;
            break;
        }
        if past_nose && state.lambda < cfg.stop_lambda_floor {
            stop = StopReason::LambdaFloor;
            complete = true;
            break;
        }

        let short = t < cfg.switch_ratio * h;
        match phase {
            Phase::Upper if auto && short => phase = Phase::Driven,
            Phase::Driven if allow_lower && past_nose && -dl >= cfg.c1.abs() * t => {
                phase = Phase::Lower
            }
            Phase::Lower if short => {
                allow_lower = false;
                phase = Phase::Driven;
            }
            _ => {}
        }
    }

    let mut curve = tr.curve;
    if stop == StopReason::MaxWindows {
        complete = complete || past_nose;
    }
    curve.complete = complete;
    curve.stop_reason = stop;
    Ok(curve)
}

/// Base-case power flow at λ = 0, with reactive limits applied when
/// enabled.
fn base_case(
    net: &PowerNetwork,
    sched: &mut Schedule,
    dir: &DirectionVector,
    cfg: &TraceConfig,
    curve: &mut SolutionCurve,
) -> Result<State, TraceError> {
    let guess = State::from_case(net, sched);
    let mut sol = match newton_power_flow(net, sched, dir, 0.0, &guess, &cfg.base_case) {
        Ok(s) => s,
        Err(_) => newton_power_flow(net, sched, dir, 0.0, &State::flat(sched), &cfg.base_case)
            .map_err(TraceError::BaseCase)?,
    };
    curve.base_case_solves += sol.linear_solves;
    if cfg.enforce_q_limits {
        for _ in 0..net.n_buses() {
            let events = enforce_q_limits(net, sched, &sol.state);
            if events.is_empty() {
                break;
            }
            curve.q_limit_events.extend(events);
            sol = newton_power_flow(net, sched, dir, 0.0, &sol.state, &cfg.base_case)
                .map_err(TraceError::BaseCase)?;
            curve.base_case_solves += sol.linear_solves;
        }
    }
    Ok(sol.state)
}

/// PQ bus with the largest voltage sensitivity in the order-1 λ-driven
/// direction at `state`.
fn tangent_pq_bus(
    net: &PowerNetwork,
    sched: &Schedule,
    dir: &DirectionVector,
    state: &State,
) -> Option<usize> {
    let opts = WindowOptions {
        check_orders: false,
        ..WindowOptions::plain(1)
    };
    let ws = solve_window(net, sched, dir, state, WindowDrive::Lambda { c1: 1.0 }, opts).ok()?;
    let y1 = ws.table.y(1);
    sched.pq_buses().max_by(|&i, &j| {
        let dv = |b: usize| {
            ((state.e[b] * y1[2 * b] + state.f[b] * y1[2 * b + 1]) / state.e[b].hypot(state.f[b]))
                .abs()
        };
        dv(i).total_cmp(&dv(j))
    })
}
