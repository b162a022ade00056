//! Newton-Raphson power flow and predictor-corrector continuation power
//! flow. These share only the network model with the DPF tracer.

mod cpf;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, SparseBuilder};
use crate::network::norm_inf;
use crate::network::{mismatch, BusKind, DirectionVector, PowerNetwork, Schedule, State};

pub use cpf::{compare_curves, cpf_trace, tangent, CpfConfig, Parameterization};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("no convergence after {iterations} iterations (mismatch {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("iteration diverged")]
    Diverged,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NrConfig {
    /// `‖g‖∞` target in p.u.
    pub tol: f64,
    pub max_iter: usize,
    /// Ignore the supplied guess and start from the flat profile.
    pub flat_start: bool,
}

impl Default for NrConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 30,
            flat_start: false,
        }
    }
}

impl NrConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(SolverError::Config("tol must be positive and max_iter at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NrSolution {
    pub state: State,
    /// Newton updates taken.
    pub iterations: usize,
    /// Jacobian factorizations (one per update).
    pub linear_solves: usize,
    pub residual: f64,
}

/// `∂g/∂y` through complex derivatives of `S_i = V_i·conj(I_i)`:
/// `∂S_i/∂e_j = V_i·conj(Y_ij)`, `∂S_i/∂f_j = -j·V_i·conj(Y_ij)`, plus
/// `conj(I_i)` and `j·conj(I_i)` on the diagonal.
pub fn power_flow_jacobian(net: &PowerNetwork, sched: &Schedule, state: &State) -> SparseBuilder {
    let n = net.n_buses();
    let v: Vec<Complex64> = state
        .e
        .iter()
        .zip(&state.f)
        .map(|(e, f)| Complex64::new(*e, *f))
        .collect();
    let cur = net.ybus.mul_vec(&v);
    let jay = Complex64::new(0.0, 1.0);
    let mut jac = SparseBuilder::with_capacity(2 * n, 4 * net.ybus.nnz() + 4 * n);
    for i in 0..n {
        let (rp, rq) = (2 * i, 2 * i + 1);
        if sched.kind[i] == BusKind::Ref {
            jac.push(rp, rp, 1.0);
            jac.push(rq, rq, 1.0);
            continue;
        }
        let pq = sched.kind[i] == BusKind::PQ;
        for (j, y) in net.ybus.row(i) {
            let mut dse = v[i] * y.conj();
            let mut dsf = -jay * v[i] * y.conj();
            if i == j {
                dse += cur[i].conj();
                dsf += jay * cur[i].conj();
            }
            jac.push(rp, 2 * j, dse.re);
            jac.push(rp, 2 * j + 1, dsf.re);
            if pq {
                jac.push(rq, 2 * j, dse.im);
                jac.push(rq, 2 * j + 1, dsf.im);
            }
        }
        if !pq {
            jac.push(rq, 2 * i, 2.0 * state.e[i]);
            jac.push(rq, 2 * i + 1, 2.0 * state.f[i]);
        }
    }
    jac
}

/// `∂g/∂λ`: minus the direction on P rows and on Q rows of PQ buses.
pub fn lambda_sensitivity(sched: &Schedule, dir: &DirectionVector) -> Vec<f64> {
    let mut col = vec![0.0; 2 * sched.len()];
    for i in 0..sched.len() {
        if sched.kind[i] != BusKind::Ref {
            col[2 * i] = -dir.dp[i];
        }
        if sched.kind[i] == BusKind::PQ {
            col[2 * i + 1] = -dir.dq[i];
        }
    }
    col
}

/// Solves `g(y, λ) = 0` at fixed `lambda` from `guess` (or the flat
/// profile when configured).
pub fn newton_power_flow(
    net: &PowerNetwork,
    sched: &Schedule,
    dir: &DirectionVector,
    lambda: f64,
    guess: &State,
    cfg: &NrConfig,
) -> Result<NrSolution, SolverError> {
    cfg.validate()?;
    let mut state = if cfg.flat_start {
        State::flat(sched)
    } else {
        guess.clone()
    };
    state.lambda = lambda;
    let mut solves = 0;
    for it in 0..=cfg.max_iter {
        let g = mismatch(net, sched, dir, &state);
        let r = norm_inf(&g);
        if !r.is_finite() {
            return Err(SolverError::Diverged);
        }
        if r < cfg.tol {
            return Ok(NrSolution {
                state,
                iterations: it,
                linear_solves: solves,
                residual: r,
            });
        }
        if it == cfg.max_iter {
            return Err(SolverError::NotConverged {
                iterations: it,
                residual: r,
            });
        }
        let lu = power_flow_jacobian(net, sched, &state).factorize()?;
        solves += 1;
        let mut dx: Vec<f64> = g.iter().map(|x| -x).collect();
        lu.solve(&mut dx)?;
        for i in 0..state.e.len() {
            state.e[i] += dx[2 * i];
            state.f[i] += dx[2 * i + 1];
        }
        if state.min_vmag() < 1e-3 {
            return Err(SolverError::Diverged);
        }
    }
    unreachable!()
}
