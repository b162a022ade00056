use dpf_core::network::{
    generator_reactive, mismatch, BusKind, DirectionVector, PowerNetwork, Schedule,
};
use dpf_core::SolutionCurve;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub rows: usize,
    pub max_residual: f64,
    /// Zero-based data rows whose residual exceeds the tolerance.
    pub failed_rows: Vec<usize>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failed_rows.is_empty()
    }
}

/// Re-evaluates the power-flow equations at every point of `curve`.
///
/// A generator bus passes its voltage row either by holding its setpoint
/// or, when `q_limits` is set, by sitting at one of its reactive limits.
pub fn verify_curve(
    net: &PowerNetwork,
    dir: &DirectionVector,
    curve: &SolutionCurve,
    tol: f64,
    q_limits: bool,
) -> VerifyReport {
    let sched = Schedule::from_network(net);
    let mut report = VerifyReport {
        rows: curve.points.len(),
        max_residual: 0.0,
        failed_rows: Vec::new(),
    };
    for (row, p) in curve.points.iter().enumerate() {
        let s = p.to_state();
        let g = mismatch(net, &sched, dir, &s);
        let qg = q_limits.then(|| generator_reactive(net, &s));
        let mut worst: f64 = 0.0;
        for i in 0..sched.len() {
            let mut rq = g[2 * i + 1].abs();
            if let (BusKind::PV, Some(qg)) = (sched.kind[i], &qg) {
                if let Some((lo, hi)) = net.q_limits(i) {
                    rq = rq.min((qg[i] - hi).abs()).min((qg[i] - lo).abs());
                }
            }
            worst = worst.max(g[2 * i].abs()).max(rq);
        }
        report.max_residual = report.max_residual.max(worst);
        if !(worst < tol) {
            report.failed_rows.push(row);
        }
    }
    report
}
