use log::{debug, info};
use serde::{Deserialize, Serialize};

use super::{lambda_sensitivity, newton_power_flow, power_flow_jacobian, NrConfig, SolverError};
use crate::curve::{CurvePoint, Formulation, QLimit, QLimitEvent, Segment, SolutionCurve, StopReason};
use crate::linalg::SparseBuilder;
use crate::network::norm_inf;
use crate::network::{
    generator_reactive, mismatch, BusKind, DirectionVector, PowerNetwork, Schedule, State,
};

pub use crate::curve::compare_curves;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// Pseudo-arclength along the previous tangent.
    ArcLength,
    /// Natural parameter: the state component with the largest tangent
    /// entry is held at its predicted value.
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CpfConfig {
    pub initial_arc_step: f64,
    pub min_arc_step: f64,
    pub max_arc_step: f64,
    pub corrector: NrConfig,
    pub base_case: NrConfig,
    pub parameterization: Parameterization,
    pub adapt_step: bool,
    /// Predictor-corrector gap targeted by step adaptation.
    pub error_tol: f64,
    pub max_steps: usize,
    pub enforce_q_limits: bool,
    /// Reactive-limit crossing accuracy (p.u.).
    pub q_tol: f64,
    pub stop_at_nose: bool,
    pub stop_lambda_floor: f64,
    pub min_vmag: f64,
    /// Nose located once `|dλ/ds|` drops below this.
    pub nose_tol: f64,
}

impl Default for CpfConfig {
    fn default() -> Self {
        Self {
            initial_arc_step: 0.05,
            min_arc_step: 1e-4,
            max_arc_step: 0.2,
            corrector: NrConfig {
                tol: 1e-8,
                max_iter: 10,
                flat_start: false,
            },
            base_case: NrConfig::default(),
            parameterization: Parameterization::ArcLength,
            adapt_step: true,
            error_tol: 1e-3,
            max_steps: 2000,
            enforce_q_limits: false,
            q_tol: 1e-6,
            stop_at_nose: false,
            stop_lambda_floor: 0.0,
            min_vmag: 0.1,
            nose_tol: 1e-4,
        }
    }
}

impl CpfConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(0.0 < self.min_arc_step
            && self.min_arc_step <= self.initial_arc_step
            && self.initial_arc_step <= self.max_arc_step)
        {
            return Err(SolverError::Config("need 0 < min <= initial <= max arc step".into()));
        }
        self.corrector.validate()?;
        self.base_case.validate()
    }
}

/// Point on the continuation path: `x = [y; λ]`.
type Point = Vec<f64>;

fn to_state(x: &[f64]) -> State {
    let n2 = x.len() - 1;
    State::from_y(&x[..n2], x[n2])
}

fn to_point(s: &State) -> Point {
    let mut x = s.to_y();
    x.push(s.lambda);
    x
}

/// `[[J, g_λ], [row]]` with a dense last row.
fn bordered(
    jac: &SparseBuilder,
    glam: &[f64],
    row: &[f64],
) -> SparseBuilder {
    let n2 = jac.dim();
    let mut m = SparseBuilder::with_capacity(n2 + 1, jac.nnz() + 2 * n2 + 1);
    m.extend_from(jac);
    for (r, &v) in glam.iter().enumerate() {
        if v != 0.0 {
            m.push(r, n2, v);
        }
    }
    for (c, &v) in row.iter().enumerate() {
        if v != 0.0 {
            m.push(n2, c, v);
        }
    }
    m
}

/// Solves `[[J, g_λ], [row]]·z = rhs` in place, with `row` and `rhs` of
/// length `dim(J) + 1`. The border is eliminated against one LU of `J`
/// (two substitutions), which keeps the dense row out of the sparse
/// factorization. Falls back to factorizing the bordered matrix when `J`
/// itself is singular. Either way this is one factorization.
fn solve_bordered(
    net: &PowerNetwork,
    sched: &Schedule,
    dir: &DirectionVector,
    s: &State,
    row: &[f64],
    rhs: &mut [f64],
) -> Result<(), SolverError> {
    let jac = power_flow_jacobian(net, sched, s);
    let glam = lambda_sensitivity(sched, dir);
    let n2 = glam.len();
    if let Ok(lu) = jac.factorize() {
        let mut u = rhs[..n2].to_vec();
        let mut v = glam.clone();
        lu.solve(&mut u)?;
        lu.solve(&mut v)?;
        let dot = |w: &[f64]| row[..n2].iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        let den = row[n2] - dot(&v);
        let scale = row[..n2].iter().chain(&v).map(|x| x.abs()).fold(row[n2].abs(), f64::max);
        if den.abs() > 1e-13 * scale.max(1.0) {
            let mu = (rhs[n2] - dot(&u)) / den;
            for i in 0..n2 {
                rhs[i] = u[i] - mu * v[i];
            }
            rhs[n2] = mu;
            return Ok(());
        }
    }
    let lu = bordered(&jac, &glam, row).factorize()?;
    lu.solve(rhs)?;
    Ok(())
}

/// Unit tangent `[dy; dλ]` of the solution path at `s`, oriented along
/// `prev` (or with `dλ > 0` when there is no previous tangent).
pub fn tangent(
    net: &PowerNetwork,
    sched: &Schedule,
    dir: &DirectionVector,
    s: &State,
    prev: Option<&[f64]>,
) -> Result<Vec<f64>, SolverError> {
    let n2 = 2 * s.n_buses();
    let row = match prev {
        Some(p) => p.to_vec(),
        None => {
            let mut r = vec![0.0; n2 + 1];
            r[n2] = 1.0;
            r
        }
    };
    let mut z = vec![0.0; n2 + 1];
    z[n2] = 1.0;
    solve_bordered(net, sched, dir, s, &row, &mut z)?;
    let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(SolverError::Diverged);
    }
    z.iter_mut().for_each(|x| *x /= norm);
    Ok(z)
}

struct Corrected {
    x: Point,
    solves: usize,
}

/// Newton corrector on `[g(y, λ); ρ(x)] = 0`, where `ρ` is the
/// parameterization constraint around the predictor `xp`.
fn correct(
    net: &PowerNetwork,
    sched: &Schedule,
    dir: &DirectionVector,
    x0: &[f64],
    tau: &[f64],
    sigma: f64,
    cfg: &CpfConfig,
) -> Result<Corrected, (SolverError, usize)> {
    let xp: Point = x0.iter().zip(tau).map(|(a, t)| a + sigma * t).collect();
    let n = xp.len();
    let (row, rho): (Vec<f64>, Box<dyn Fn(&[f64]) -> f64>) = match cfg.parameterization {
        Parameterization::ArcLength => {
            let t = tau.to_vec();
            let x0 = x0.to_vec();
            (
                tau.to_vec(),
                Box::new(move |x: &[f64]| {
                    x.iter().zip(&x0).zip(&t).map(|((a, b), c)| (a - b) * c).sum::<f64>() - sigma
                }),
            )
        }
        Parameterization::Local => {
            let p = (0..n).max_by(|&a, &b| tau[a].abs().total_cmp(&tau[b].abs())).unwrap();
            let target = xp[p];
            let mut r = vec![0.0; n];
            r[p] = 1.0;
            (r, Box::new(move |x: &[f64]| x[p] - target))
        }
    };
    let mut x = xp;
    let mut solves = 0;
    for it in 0..=cfg.corrector.max_iter {
        let s = to_state(&x);
        let mut f = mismatch(net, sched, dir, &s);
        f.push(rho(&x));
        let r = norm_inf(&f);
        if !r.is_finite() {
            return Err((SolverError::Diverged, solves));
        }
        if r < cfg.corrector.tol {
            return Ok(Corrected { x, solves });
        }
        if it == cfg.corrector.max_iter {
            return Err((
                SolverError::NotConverged {
                    iterations: it,
                    residual: r,
                },
                solves,
            ));
        }
        f.iter_mut().for_each(|v| *v = -*v);
        solves += 1;
        solve_bordered(net, sched, dir, &s, &row, &mut f).map_err(|e| (e, solves))?;
        x.iter_mut().zip(&f).for_each(|(a, d)| *a += d);
        if to_state(&x).min_vmag() < 1e-3 {
            return Err((SolverError::Diverged, solves));
        }
    }
    unreachable!()
}

struct Run<'a> {
    net: &'a PowerNetwork,
    dir: &'a DirectionVector,
    cfg: &'a CpfConfig,
    curve: SolutionCurve,
}

impl Run<'_> {
    fn step(&mut self, sched: &Schedule, x: &[f64], tau: &[f64], sigma: f64) -> Option<Point> {
        match correct(self.net, sched, self.dir, x, tau, sigma, self.cfg) {
            Ok(c) => {
                self.add_solves(c.solves);
                Some(c.x)
            }
            Err((e, solves)) => {
                self.add_solves(solves);
                debug!("corrector failed at arc step {sigma:e}: {e}");
                None
            }
        }
    }

    fn tangent(&mut self, sched: &Schedule, x: &[f64], prev: Option<&[f64]>) -> Option<Vec<f64>> {
        self.add_solves(1);
        tangent(self.net, sched, self.dir, &to_state(x), prev).ok()
    }

    fn add_solves(&mut self, k: usize) {
        self.curve.linear_solves += k;
        self.curve.substitutions += k;
        if let Some(s) = self.curve.segments.last_mut() {
            s.linear_solves += k;
            s.substitutions += k;
        }
    }

    fn push(&mut self, sched: &Schedule, x: &[f64]) {
        let s = to_state(x);
        let r = norm_inf(&mismatch(self.net, sched, self.dir, &s));
        self.curve.max_point_residual = self.curve.max_point_residual.max(r);
        self.curve.push_point(CurvePoint::from_state(&s));
        if let Some(seg) = self.curve.segments.last_mut() {
            seg.windows += 1;
        }
    }
}

fn violations(net: &PowerNetwork, sched: &Schedule, s: &State) -> Vec<(usize, QLimit, f64)> {
    let qg = generator_reactive(net, s);
    (0..sched.len())
        .filter(|&i| sched.kind[i] == BusKind::PV)
        .filter_map(|i| {
            let (lo, hi) = net.q_limits(i)?;
            if qg[i] > hi {
                Some((i, QLimit::Max, hi))
            } else if qg[i] < lo {
                Some((i, QLimit::Min, lo))
            } else {
                None
            }
        })
        .collect()
}

/// Largest limit overshoot among `viol` at `s` (positive when beyond).
fn overshoot(net: &PowerNetwork, s: &State, viol: &[(usize, QLimit, f64)]) -> f64 {
    let qg = generator_reactive(net, s);
    viol.iter()
        .map(|&(i, side, lim)| match side {
            QLimit::Max => qg[i] - lim,
            QLimit::Min => lim - qg[i],
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn pin(net: &PowerNetwork, sched: &mut Schedule, curve: &mut SolutionCurve, s: &State, viol: &[(usize, QLimit, f64)]) {
    for &(i, side, lim) in viol {
        sched.pin_reactive(net, i, lim);
        info!("cpf: bus {} at {:?} reactive limit, lambda {:.6}", net.buses[i].id, side, s.lambda);
        curve.q_limit_events.push(QLimitEvent {
            bus: net.buses[i].id,
            lambda: s.lambda,
            limit: side,
            q_mvar: lim * net.base_mva,
        });
    }
}

/// Whether `tau` lowers `|V|` at buses pinned at `Max` and raises it at `Min`.
fn leaves_setpoint(x: &[f64], tau: &[f64], pinned: &[(usize, QLimit, f64)]) -> bool {
    let rate: f64 = pinned
        .iter()
        .map(|&(i, side, _)| {
            let dv = x[2 * i] * tau[2 * i] + x[2 * i + 1] * tau[2 * i + 1];
            match side {
                QLimit::Max => -dv,
                QLimit::Min => dv,
            }
        })
        .sum();
    rate >= 0.0
}

/// Traces the curve with a tangent predictor and Newton corrector.
pub fn cpf_trace(
    net: &PowerNetwork,
    dir: &DirectionVector,
    cfg: &CpfConfig,
) -> Result<SolutionCurve, SolverError> {
    cfg.validate()?;
    let mut sched = Schedule::from_network(net);
    let mut curve = SolutionCurve::new(net.buses.iter().map(|b| b.id).collect());
    let guess = State::from_case(net, &sched);
    let mut base = match newton_power_flow(net, &sched, dir, 0.0, &guess, &cfg.base_case) {
        Ok(s) => s,
        Err(_) => newton_power_flow(net, &sched, dir, 0.0, &State::flat(&sched), &cfg.base_case)?,
    };
    curve.base_case_solves += base.linear_solves;
    if cfg.enforce_q_limits {
        for _ in 0..net.n_buses() {
            let v = violations(net, &sched, &base.state);
            if v.is_empty() {
                break;
            }
            pin(net, &mut sched, &mut curve, &base.state, &v);
            base = newton_power_flow(net, &sched, dir, 0.0, &base.state, &cfg.base_case)?;
            curve.base_case_solves += base.linear_solves;
        }
    }
    curve.segments.push(Segment {
        formulation: Formulation::Continuation,
        driven_bus: None,
        rate: cfg.initial_arc_step,
        windows: 0,
        linear_solves: 0,
        substitutions: 0,
    });
    let mut run = Run { net, dir, cfg, curve };
    let mut x = to_point(&base.state);
    run.push(&sched, &x);
    run.curve.segments[0].windows = 0;

    let il = x.len() - 1;
    let Some(mut tau) = run.tangent(&sched, &x, None) else {
        run.curve.complete = false;
        run.curve.stop_reason = StopReason::StepFailure;
        return Ok(run.curve);
    };
    let mut sigma = cfg.initial_arc_step;
    let mut past_nose = false;
    let mut stop = StopReason::MaxWindows;
    let mut complete = false;

    for _ in 0..cfg.max_steps {
        let Some(mut xc) = run.step(&sched, &x, &tau, sigma) else {
            run.curve.rejected_steps += 1;
            sigma *= 0.5;
            if sigma < cfg.min_arc_step {
                stop = StopReason::StepFailure;
                break;
            }
            continue;
        };
        let xp: Point = x.iter().zip(&tau).map(|(a, t)| a + sigma * t).collect();
        let err = xc.iter().zip(&xp).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if cfg.adapt_step && err > cfg.error_tol && sigma > cfg.min_arc_step {
            run.curve.rejected_steps += 1;
            sigma = (sigma * (cfg.error_tol / err).sqrt()).max(cfg.min_arc_step);
            continue;
        }
        let mut used = sigma;

        let mut pinned: Vec<(usize, QLimit, f64)> = Vec::new();
        if cfg.enforce_q_limits {
            let viol = violations(net, &sched, &to_state(&xc));
            if !viol.is_empty() {
                // bisect the arc step down to the first limit crossing
                let (mut lo, mut hi) = (0.0, sigma);
                let mut best = xc.clone();
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    let Some(xm) = run.step(&sched, &x, &tau, mid) else {
                        hi = mid;
                        continue;
                    };
                    let o = overshoot(net, &to_state(&xm), &viol);
                    if o > 0.0 {
                        hi = mid;
                        best = xm;
                    } else {
                        lo = mid;
                        if o > -cfg.q_tol {
                            best = xm;
                            break;
                        }
                    }
                    if hi - lo < 1e-12 {
                        break;
                    }
                }
                xc = best;
                used = hi;
                let s = to_state(&xc);
                let hit: Vec<_> = viol
                    .iter()
                    .copied()
                    .filter(|&(i, side, lim)| {
                        let q = generator_reactive(net, &s)[i];
                        match side {
                            QLimit::Max => q > lim - cfg.q_tol,
                            QLimit::Min => q < lim + cfg.q_tol,
                        }
                    })
                    .collect();
                pinned = if hit.is_empty() { viol } else { hit };
                pin(net, &mut sched, &mut run.curve, &s, &pinned);
            }
        }

        let Some(mut tau_new) = run.tangent(&sched, &xc, Some(&tau)) else {
            stop = StopReason::StepFailure;
            break;
        };
        if !pinned.is_empty() && !leaves_setpoint(&xc, &tau_new, &pinned) {
            // a bus held at a limit may only move its voltage away from the setpoint
            tau_new.iter_mut().for_each(|t| *t = -*t);
        }

        if !past_nose && tau[il] > 0.0 && tau_new[il] < 0.0 && pinned.is_empty() {
            // nose bracketed: bisect the step on the sign of dλ/ds
            let (mut lo, mut hi) = (0.0, used);
            let mut nose = xc.clone();
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let Some(xm) = run.step(&sched, &x, &tau, mid) else {
                    break;
                };
                let Some(tm) = run.tangent(&sched, &xm, Some(&tau)) else {
                    break;
                };
                nose = xm;
                if tm[il].abs() < cfg.nose_tol {
                    break;
                }
                if tm[il] > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            past_nose = true;
            if nose[il] > x[il] {
                run.push(&sched, &nose);
            }
            info!("cpf: nose at lambda {:.6}", run.curve.lambda_max);
            if cfg.stop_at_nose {
                stop = StopReason::Nose;
                complete = true;
                break;
            }
        } else if !past_nose && !pinned.is_empty() && tau_new[il] < 0.0 {
            past_nose = true;
        }

        run.push(&sched, &xc);
        x = xc;
        tau = tau_new;
        let s = to_state(&x);
        if s.min_vmag() < cfg.min_vmag {
            stop = StopReason::MinVoltage;
            complete = true;
            break;
        }
        if past_nose && s.lambda < cfg.stop_lambda_floor {
            stop = StopReason::LambdaFloor;
            complete = true;
            break;
        }
        if cfg.adapt_step {
            let grow = if err > 0.0 { (cfg.error_tol / err).sqrt() } else { 2.0 };
            sigma = (sigma * grow.min(2.0)).clamp(cfg.min_arc_step, cfg.max_arc_step);
        }
    }
    let mut curve = run.curve;
    curve.complete = complete || (stop == StopReason::MaxWindows && past_nose);
    curve.stop_reason = stop;
    Ok(curve)
}
