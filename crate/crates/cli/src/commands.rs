use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use dpf_core::curve::{compare_curves, format_sig, CurveComparison, CurveSummary};
use dpf_core::network::{build_direction, NetworkError, PowerNetwork};
use dpf_core::reference::{cpf_trace, SolverError};
use dpf_core::tracer::{trace_curve, TraceError};
use dpf_core::{CpfConfig, DirectionVector, SolutionCurve, TraceConfig};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::{load_case, load_direction, read, Method, RunPlan};
use crate::verify::{verify_curve, VerifyReport};
use crate::{CliError, EXIT_INCOMPLETE, EXIT_OK};

// ignores a closed stdout pipe
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn dpf_error(e: TraceError) -> CliError {
    match e {
        TraceError::BaseCase(_) => CliError::infeasible(e.to_string()),
        TraceError::Config(_) => CliError::parse(e.to_string()),
        _ => CliError::incomplete(e.to_string()),
    }
}

fn cpf_error(e: SolverError) -> CliError {
    match e {
        SolverError::Config(_) => CliError::parse(e.to_string()),
        _ => CliError::infeasible(format!("base case: {e}")),
    }
}

pub fn run_dpf(net: &PowerNetwork, dir: &DirectionVector, cfg: &TraceConfig) -> Result<SolutionCurve, CliError> {
    trace_curve(net, dir, cfg).map_err(dpf_error)
}

pub fn run_cpf(net: &PowerNetwork, dir: &DirectionVector, cfg: &CpfConfig) -> Result<SolutionCurve, CliError> {
    cpf_trace(net, dir, cfg).map_err(cpf_error)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable report");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodReport {
    #[serde(flatten)]
    pub summary: CurveSummary,
    pub elapsed_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceReport {
    pub case: String,
    pub buses: usize,
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dpf: Option<MethodReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cpf: Option<MethodReport>,
    /// DPF measured against CPF when both ran.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<CurveComparison>,
}

/// Traces with the requested methods and writes curve, plot and summary
/// files into the plan's output directory. Returns the exit code.
pub fn cmd_trace(plan: &RunPlan) -> Result<i32, CliError> {
    fs::create_dir_all(&plan.out).map_err(|e| CliError::io(format!("{}: {e}", plan.out.display())))?;
    let mut report = TraceReport {
        case: plan.case_path.display().to_string(),
        buses: plan.net.n_buses(),
        method: plan.method,
        dpf: None,
        cpf: None,
        comparison: None,
    };
    let mut curves: Vec<(&str, SolutionCurve)> = Vec::new();
    if plan.method.dpf() {
        let t = Instant::now();
        let c = run_dpf(&plan.net, &plan.dir, &plan.dpf)?;
        curves.push(("dpf", c));
        report.dpf = Some(method_report(&curves.last().unwrap().1, t));
    }
    if plan.method.cpf() {
        let t = Instant::now();
        let c = run_cpf(&plan.net, &plan.dir, &plan.cpf)?;
        curves.push(("cpf", c));
        report.cpf = Some(method_report(&curves.last().unwrap().1, t));
    }

    for (k, (name, curve)) in curves.iter().enumerate() {
        let csv = curve.to_csv();
        write(&plan.out.join(format!("curve_{name}.csv")), &csv)?;
        for id in &plan.pv_buses {
            let i = plan.net.bus_index(*id).expect("pv bus checked at resolve");
            let file = if k == 0 { format!("pv_{id}.csv") } else { format!("pv_{id}_{name}.csv") };
            write(&plan.out.join(file), &curve.pv_csv(i))?;
        }
        if plan.verify {
            // re-read what was written so the check covers the stored digits
            let stored = SolutionCurve::from_csv(&csv).map_err(|e| CliError::parse(e.to_string()))?;
            let v = verify_curve(&plan.net, &plan.dir, &stored, plan.dpf.residual_tol, plan.dpf.enforce_q_limits);
            let slot = if *name == "dpf" { &mut report.dpf } else { &mut report.cpf };
            slot.as_mut().unwrap().verify = Some(v);
        }
        say!(
            "{name}: lambda_max {} solves {} points {} stop {:?}",
            format_sig(curve.lambda_max),
            curve.linear_solves,
            curve.points.len(),
            curve.stop_reason
        );
    }
    if let [(_, a), (_, b)] = curves.as_slice() {
        report.comparison = compare_curves(a, b).ok();
        if let Some(c) = &report.comparison {
            say!(
                "lambda_max diff {:.3e}, max upper-branch voltage dev {:.3e}, solve ratio {:.3}",
                c.lambda_max_diff,
                c.max_voltage_dev,
                c.solve_ratio.unwrap_or(f64::NAN)
            );
        }
    }
    write(&plan.out.join("summary.json"), &to_json(&report))?;

    let verify_failed = [&report.dpf, &report.cpf]
        .iter()
        .filter_map(|r| r.as_ref()?.verify.as_ref())
        .any(|v| !v.passed());
    if verify_failed {
        return Err(CliError::parse("curve verification failed; see summary.json".to_string()));
    }
    let incomplete = curves.iter().any(|(_, c)| !c.complete);
    Ok(if incomplete { EXIT_INCOMPLETE } else { EXIT_OK })
}

fn method_report(curve: &SolutionCurve, started: Instant) -> MethodReport {
    MethodReport {
        summary: curve.summary(),
        elapsed_s: started.elapsed().as_secs_f64(),
        verify: None,
    }
}

/// Ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ContingencyStatus {
    Ok,
    Incomplete,
    InfeasibleBase,
}

impl ContingencyStatus {
    fn as_str(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::InfeasibleBase => "infeasible_base",
            Self::Incomplete => "incomplete",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodOutcome {
    pub status: ContingencyStatus,
    pub lambda_max: Option<f64>,
    pub linear_solves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContingencyResult {
    /// One-based row of the branch in the case file.
    pub branch: usize,
    pub from: usize,
    pub to: usize,
    pub status: ContingencyStatus,
    pub dpf: Option<MethodOutcome>,
    pub cpf: Option<MethodOutcome>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NMinus1Report {
    pub contingencies: usize,
    pub ok: usize,
    pub infeasible_base: usize,
    pub incomplete: usize,
    pub dpf_wall_s: Option<f64>,
    pub cpf_wall_s: Option<f64>,
    /// Largest `|λ_max(dpf) − λ_max(cpf)|` over rows where both succeeded.
    pub max_lambda_diff: Option<f64>,
    #[serde(skip)]
    pub rows: Vec<ContingencyResult>,
}

fn outcome(res: Result<SolutionCurve, CliError>) -> MethodOutcome {
    match res {
        Ok(c) if c.complete && c.lambda_max.is_finite() => MethodOutcome {
            status: ContingencyStatus::Ok,
            lambda_max: Some(c.lambda_max),
            linear_solves: c.linear_solves,
        },
        Ok(c) => MethodOutcome {
            status: ContingencyStatus::Incomplete,
            lambda_max: None,
            linear_solves: c.linear_solves,
        },
        Err(e) => MethodOutcome {
            status: if e.code == crate::EXIT_INFEASIBLE {
                ContingencyStatus::InfeasibleBase
            } else {
                ContingencyStatus::Incomplete
            },
            lambda_max: None,
            linear_solves: 0,
        },
    }
}

/// Screens every single-branch outage of the plan's network. Both
/// tracers stop at the nose. Each method is swept separately so their
/// wall times can be compared.
pub fn screen(plan: &RunPlan) -> Result<NMinus1Report, CliError> {
    if plan.method == Method::Cpf {
        return Err(CliError::usage("nminus1 needs method dpf or both"));
    }
    let mut dpf_cfg = plan.dpf.clone();
    dpf_cfg.stop_at_nose = true;
    let mut cpf_cfg = plan.cpf.clone();
    cpf_cfg.stop_at_nose = true;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = plan.workers {
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| CliError::usage(e.to_string()))?;

    let cases: Vec<(usize, usize, usize, Result<(PowerNetwork, DirectionVector), NetworkError>)> = plan
        .net
        .in_service_branches()
        .map(|(k, b)| {
            let net = plan.net.without_branch(k).and_then(|n| {
                let d = build_direction(&n, &plan.direction)?;
                Ok((n, d))
            });
            (k + 1, b.from, b.to, net)
        })
        .collect();

    let sweep = |run: &(dyn Fn(&PowerNetwork, &DirectionVector) -> MethodOutcome + Sync)| {
        let t = Instant::now();
        let out: Vec<Option<MethodOutcome>> = pool.install(|| {
            cases
                .par_iter()
                .map(|(_, _, _, c)| c.as_ref().ok().map(|(n, d)| run(n, d)))
                .collect()
        });
        (out, t.elapsed().as_secs_f64())
    };

    let (dpf_rows, dpf_wall) = sweep(&|n, d| outcome(run_dpf(n, d, &dpf_cfg)));
    let (cpf_rows, cpf_wall) = if plan.method.cpf() {
        let (r, w) = sweep(&|n, d| outcome(run_cpf(n, d, &cpf_cfg)));
        (Some(r), Some(w))
    } else {
        (None, None)
    };

    let mut rows = Vec::with_capacity(cases.len());
    for (j, (branch, from, to, net)) in cases.iter().enumerate() {
        let dpf = dpf_rows[j].clone();
        let cpf = cpf_rows.as_ref().and_then(|r| r[j].clone());
        let status = match (net, &dpf, &cpf) {
            (Err(_), _, _) => ContingencyStatus::InfeasibleBase,
            _ => [&dpf, &cpf]
                .iter()
                .filter_map(|o| o.as_ref().map(|o| o.status))
                .max()
                .unwrap_or(ContingencyStatus::Ok),
        };
        if let Err(e) = net {
            info!("branch {branch} ({from}-{to}): {e}");
        }
        rows.push(ContingencyResult {
            branch: *branch,
            from: *from,
            to: *to,
            status,
            dpf,
            cpf,
        });
    }

    let count = |s| rows.iter().filter(|r| r.status == s).count();
    let max_lambda_diff = rows
        .iter()
        .filter(|r| r.status == ContingencyStatus::Ok)
        .filter_map(|r| Some((r.dpf.as_ref()?.lambda_max? - r.cpf.as_ref()?.lambda_max?).abs()))
        .reduce(f64::max);
    Ok(NMinus1Report {
        contingencies: rows.len(),
        ok: count(ContingencyStatus::Ok),
        infeasible_base: count(ContingencyStatus::InfeasibleBase),
        incomplete: count(ContingencyStatus::Incomplete),
        dpf_wall_s: Some(dpf_wall),
        cpf_wall_s: cpf_wall,
        max_lambda_diff,
        rows,
    })
}

pub fn nminus1_csv(rows: &[ContingencyResult]) -> String {
    let opt = |x: Option<f64>| x.map(format_sig).unwrap_or_default();
    let solves = |o: &Option<MethodOutcome>| o.as_ref().map(|o| o.linear_solves.to_string()).unwrap_or_default();
    let mut out = String::from("branch,from,to,status,lambda_max_dpf,lambda_max_cpf,solves_dpf,solves_cpf\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.branch,
            r.from,
            r.to,
            r.status.as_str(),
            opt(r.dpf.as_ref().and_then(|o| o.lambda_max)),
            opt(r.cpf.as_ref().and_then(|o| o.lambda_max)),
            solves(&r.dpf),
            solves(&r.cpf),
        ));
    }
    out
}

pub fn cmd_nminus1(plan: &RunPlan) -> Result<i32, CliError> {
    fs::create_dir_all(&plan.out).map_err(|e| CliError::io(format!("{}: {e}", plan.out.display())))?;
    let report = screen(plan)?;
    write(&plan.out.join("nminus1.csv"), &nminus1_csv(&report.rows))?;
    write(&plan.out.join("nminus1_summary.json"), &to_json(&report))?;
    say!(
        "{} contingencies: {} ok, {} infeasible_base, {} incomplete",
        report.contingencies, report.ok, report.infeasible_base, report.incomplete
    );
    if let Some(w) = report.dpf_wall_s {
        say!("dpf sweep {w:.3} s");
    }
    if let Some(w) = report.cpf_wall_s {
        say!("cpf sweep {w:.3} s");
    }
    if let Some(d) = report.max_lambda_diff {
        say!("max lambda_max diff {d:.3e}");
    }
    if report.ok == 0 && report.contingencies > 0 {
        warn!("no contingency produced a loading limit");
        return Ok(EXIT_INCOMPLETE);
    }
    Ok(EXIT_OK)
}

/// Compares two stored curves and prints the metrics as JSON.
pub fn cmd_compare(a: &Path, b: &Path, out: Option<&Path>) -> Result<i32, CliError> {
    let load = |p: &Path| {
        SolutionCurve::from_csv(&read(p)?).map_err(|e| CliError::parse(format!("{}: {e}", p.display())))
    };
    let cmp = compare_curves(&load(a)?, &load(b)?).map_err(|e| CliError::parse(e.to_string()))?;
    let json = to_json(&cmp);
    let _ = write!(std::io::stdout(), "{json}");
    if let Some(p) = out {
        write(p, &json)?;
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidateReport {
    pub buses: usize,
    pub branches: usize,
    pub in_service_branches: usize,
    pub generators: usize,
    pub ybus_nnz: usize,
    pub ybus_symmetric: bool,
}

/// Parses the case, checks its admittance matrix and optionally the
/// direction file.
pub fn cmd_validate(case: &Path, direction: Option<&str>) -> Result<i32, CliError> {
    let net = load_case(case)?;
    let n = net.n_buses();
    let phase_shifted = net.branches.iter().any(|b| b.status && b.phase_shift() != 0.0);
    let mut symmetric = true;
    for i in 0..n {
        for (j, y) in net.ybus.row(i) {
            if !(y.re.is_finite() && y.im.is_finite()) {
                return Err(CliError::parse(format!("non-finite admittance at ({i},{j})")));
            }
            if !phase_shifted && (y - net.ybus.get(j, i)).norm() > 1e-9 * (1.0 + y.norm()) {
                symmetric = false;
            }
        }
    }
    if let Some(d) = direction {
        build_direction(&net, &load_direction(d)?).map_err(|e| CliError::parse(e.to_string()))?;
    }
    let report = ValidateReport {
        buses: n,
        branches: net.branches.len(),
        in_service_branches: net.in_service_branches().count(),
        generators: net.generators.len(),
        ybus_nnz: net.ybus.nnz(),
        ybus_symmetric: symmetric,
    };
    let _ = write!(std::io::stdout(), "{}", to_json(&report));
    Ok(EXIT_OK)
}
