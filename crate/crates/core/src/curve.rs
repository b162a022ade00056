//! Solution curves `y(λ)` shared by the DPF tracer and the CPF oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::State;
use crate::tracer::SeriesTable;

/// Which quantity the fictitious dynamics drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// `dλ/dt = c1`.
    LambdaDriven,
    /// `dV_l/dt = -c2` on a driven load bus `l`.
    VoltageDriven,
    /// Predictor-corrector continuation (oracle curves only).
    Continuation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveBranch {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Stopped right after the nose point was located.
    Nose,
    /// λ fell below the configured floor on the lower branch.
    LambdaFloor,
    MinVoltage,
    MaxWindows,
    /// Step control failed before the trace could continue.
    StepFailure,
    /// A λ-driven-only trace could not advance any further.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub lambda: f64,
    pub e: Vec<f64>,
    pub f: Vec<f64>,
    pub vmag: Vec<f64>,
}

impl CurvePoint {
    pub fn from_state(s: &State) -> Self {
        Self {
            lambda: s.lambda,
            e: s.e.clone(),
            f: s.f.clone(),
            vmag: s.vmag(),
        }
    }

    pub fn to_state(&self) -> State {
        State {
            e: self.e.clone(),
            f: self.f.clone(),
            lambda: self.lambda,
        }
    }

    fn lerp(a: &Self, b: &Self, w: f64) -> Self {
        let mix = |x: &[f64], y: &[f64]| -> Vec<f64> {
            x.iter().zip(y).map(|(p, q)| p + w * (q - p)).collect()
        };
        Self {
            lambda: a.lambda + w * (b.lambda - a.lambda),
            e: mix(&a.e, &b.e),
            f: mix(&a.f, &b.f),
            vmag: mix(&a.vmag, &b.vmag),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub formulation: Formulation,
    /// Driven bus id for voltage-driven segments.
    pub driven_bus: Option<usize>,
    /// Rate constant (`c1` or `c2`) used on this segment.
    pub rate: f64,
    pub windows: usize,
    /// Matrix factorizations.
    pub linear_solves: usize,
    /// Back-substitutions against those factorizations.
    pub substitutions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QLimit {
    Max,
    Min,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QLimitEvent {
    pub bus: usize,
    pub lambda: f64,
    pub limit: QLimit,
    /// Pinned generator reactive output (MVAr).
    pub q_mvar: f64,
}

/// One accepted DPF window: its series and the fictitious time it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub formulation: Formulation,
    pub table: SeriesTable,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionCurve {
    pub bus_ids: Vec<usize>,
    pub points: Vec<CurvePoint>,
    pub segments: Vec<Segment>,
    pub lambda_max: f64,
    /// Index into `points` of the λ-maximizing point.
    pub nose_index: usize,
    /// Window index and local time of the nose, for curves with series.
    pub nose_at: Option<(usize, f64)>,
    pub q_limit_events: Vec<QLimitEvent>,
    pub windows: Vec<WindowRecord>,
    pub linear_solves: usize,
    pub substitutions: usize,
    /// Solves spent on the base-case power flow, not included above.
    pub base_case_solves: usize,
    pub rejected_steps: usize,
    pub complete: bool,
    pub stop_reason: StopReason,
    /// Largest transformed-equation residual over all solved orders.
    pub max_order_residual: f64,
    /// Largest `‖g‖∞` over the emitted points.
    pub max_point_residual: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("curve has no points")]
    Empty,
    #[error("curves cover different bus sets")]
    SchemaMismatch,
    #[error("upper branches share no λ range")]
    NonOverlapping,
    #[error("CSV error at line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

/// Serializable digest of a curve for `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub lambda_max: f64,
    pub linear_solves: usize,
    pub substitutions: usize,
    pub base_case_solves: usize,
    pub rejected_steps: usize,
    pub points: usize,
    pub complete: bool,
    pub stop_reason: StopReason,
    pub q_limit_events: Vec<QLimitEvent>,
    pub segments: Vec<Segment>,
    pub max_point_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_order_residual: Option<f64>,
}

/// Distances between two curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveComparison {
    pub lambda_max_a: f64,
    pub lambda_max_b: f64,
    pub lambda_max_diff: f64,
    /// Largest bus-voltage magnitude gap at matched λ on the upper branch.
    pub max_voltage_dev: f64,
    pub matched_samples: usize,
    /// `a.linear_solves / b.linear_solves`, absent when `b` has no count
    /// (curves read back from CSV).
    pub solve_ratio: Option<f64>,
}

impl SolutionCurve {
    pub fn new(bus_ids: Vec<usize>) -> Self {
        Self {
            bus_ids,
            points: Vec::new(),
            segments: Vec::new(),
            lambda_max: f64::NEG_INFINITY,
            nose_index: 0,
            nose_at: None,
            q_limit_events: Vec::new(),
            windows: Vec::new(),
            linear_solves: 0,
            substitutions: 0,
            base_case_solves: 0,
            rejected_steps: 0,
            complete: true,
            stop_reason: StopReason::MaxWindows,
            max_order_residual: 0.0,
            max_point_residual: 0.0,
        }
    }

    pub fn push_point(&mut self, p: CurvePoint) {
        if p.lambda > self.lambda_max {
            self.lambda_max = p.lambda;
            self.nose_index = self.points.len();
        }
        self.points.push(p);
    }

    pub fn upper_branch(&self) -> &[CurvePoint] {
        &self.points[..=self.nose_index.min(self.points.len().saturating_sub(1))]
    }

    pub fn lower_branch(&self) -> &[CurvePoint] {
        &self.points[self.nose_index.min(self.points.len())..]
    }

    pub fn summary(&self) -> CurveSummary {
        CurveSummary {
            lambda_max: self.lambda_max,
            linear_solves: self.linear_solves,
            substitutions: self.substitutions,
            base_case_solves: self.base_case_solves,
            rejected_steps: self.rejected_steps,
            points: self.points.len(),
            complete: self.complete,
            stop_reason: self.stop_reason,
            q_limit_events: self.q_limit_events.clone(),
            segments: self.segments.clone(),
            max_point_residual: self.max_point_residual,
            max_order_residual: (!self.windows.is_empty()).then_some(self.max_order_residual),
        }
    }

    /// Curve state at loading `target` on the requested branch.
    ///
    /// Curves that carry their window series are sampled exactly by solving
    /// `λ(t) = target` inside the window; plain point lists fall back to
    /// linear interpolation.
    pub fn sample_at_lambda(&self, target: f64, branch: CurveBranch) -> Option<CurvePoint> {
        if !self.windows.is_empty() {
            if let Some(p) = self.sample_windows(target, branch) {
                return Some(p);
            }
        }
        let (pts, offset) = match branch {
            CurveBranch::Upper => (self.upper_branch(), 0),
            CurveBranch::Lower => (self.lower_branch(), self.nose_index.min(self.points.len())),
        };
        if let Some(p) = pts.iter().find(|p| p.lambda == target) {
            return Some(p.clone());
        }
        let i = pts.windows(2).position(|w| {
            let (lo, hi) = (w[0].lambda.min(w[1].lambda), w[0].lambda.max(w[1].lambda));
            lo <= target && target <= hi && hi > lo
        })? + offset;
        Some(self.interpolate(i, target))
    }

    /// Point at `target` between points `i` and `i + 1`, from a quadratic
    /// through three neighbouring points in chord length.
    fn interpolate(&self, i: usize, target: f64) -> CurvePoint {
        let (a, b) = (&self.points[i], &self.points[i + 1]);
        let lerp = || CurvePoint::lerp(a, b, (target - a.lambda) / (b.lambda - a.lambda));
        let j = if i + 2 < self.points.len() {
            i
        } else if i >= 1 {
            i - 1
        } else {
            return lerp();
        };
        let p = [&self.points[j], &self.points[j + 1], &self.points[j + 2]];
        let chord = |x: &CurvePoint, y: &CurvePoint| {
            let dv: f64 = x.vmag.iter().zip(&y.vmag).map(|(u, v)| (u - v) * (u - v)).sum();
            ((x.lambda - y.lambda).powi(2) + dv).sqrt()
        };
        let s = [0.0, chord(p[0], p[1]), chord(p[0], p[1]) + chord(p[1], p[2])];
        if !(s[1] > 0.0 && s[2] > s[1]) {
            return lerp();
        }
        let basis = |t: f64| -> [f64; 3] {
            [
                (t - s[1]) * (t - s[2]) / ((s[0] - s[1]) * (s[0] - s[2])),
                (t - s[0]) * (t - s[2]) / ((s[1] - s[0]) * (s[1] - s[2])),
                (t - s[0]) * (t - s[1]) / ((s[2] - s[0]) * (s[2] - s[1])),
            ]
        };
        let lam = |t: f64| {
            let w = basis(t);
            w[0] * p[0].lambda + w[1] * p[1].lambda + w[2] * p[2].lambda - target
        };
        let (sa, sb) = (s[i - j], s[i - j + 1]);
        if lam(sa) * lam(sb) > 0.0 {
            return lerp();
        }
        let w = basis(bisect(lam, sa, sb));
        let mix = |f: fn(&CurvePoint) -> &Vec<f64>| -> Vec<f64> {
            (0..f(p[0]).len())
                .map(|k| w[0] * f(p[0])[k] + w[1] * f(p[1])[k] + w[2] * f(p[2])[k])
                .collect()
        };
        CurvePoint {
            lambda: target,
            e: mix(|q| &q.e),
            f: mix(|q| &q.f),
            vmag: mix(|q| &q.vmag),
        }
    }

    fn sample_windows(&self, target: f64, branch: CurveBranch) -> Option<CurvePoint> {
        const GRID: usize = 64;
        let nose = self
            .nose_at
            .unwrap_or((self.windows.len() - 1, self.windows.last()?.step));
        for (w, rec) in self.windows.iter().enumerate() {
            let lam = |t: f64| rec.table.lambda_at(t) - target;
            let mut ta = 0.0;
            let mut fa = lam(ta);
            for j in 1..=GRID {
                let tb = rec.step * j as f64 / GRID as f64;
                let fb = lam(tb);
                let root = if fa == 0.0 {
                    Some(ta)
                } else if fa * fb < 0.0 || fb == 0.0 {
                    Some(bisect(lam, ta, tb))
                } else {
                    None
                };
                if let Some(t) = root {
                    let upper = (w, t) <= nose;
                    if upper == (branch == CurveBranch::Upper) {
                        return Some(CurvePoint::from_state(&rec.table.eval(t)));
                    }
                }
                ta = tb;
                fa = fb;
            }
        }
        None
    }

    /// Curve as CSV: `lambda`, then `v_<id>`, `e_<id>` and `f_<id>` for
    /// every bus.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda");
        for prefix in ["v", "e", "f"] {
            for id in &self.bus_ids {
                out.push_str(&format!(",{prefix}_{id}"));
            }
        }
        out.push('\n');
        for p in &self.points {
            out.push_str(&format_sig(p.lambda));
            for col in [&p.vmag, &p.e, &p.f] {
                for x in col {
                    out.push(',');
                    out.push_str(&format_sig(*x));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Two-column `lambda,v` plot file for one bus.
    pub fn pv_csv(&self, bus_idx: usize) -> String {
        let mut out = format!("lambda,v_{}\n", self.bus_ids[bus_idx]);
        for p in &self.points {
            out.push_str(&format!("{},{}\n", format_sig(p.lambda), format_sig(p.vmag[bus_idx])));
        }
        out
    }

    /// Parses a file written by [`SolutionCurve::to_csv`]. Solve counts
    /// and series are not stored in CSV and come back empty.
    pub fn from_csv(text: &str) -> Result<Self, CurveError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(CurveError::Empty)?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let csv_err = |line: usize, msg: &str| CurveError::Csv {
            line: line + 1,
            msg: msg.to_string(),
        };
        if cols.first() != Some(&"lambda") || (cols.len() - 1) % 3 != 0 {
            return Err(csv_err(0, "expected lambda followed by v_/e_/f_ columns"));
        }
        let n = (cols.len() - 1) / 3;
        let mut bus_ids = Vec::with_capacity(n);
        for (j, prefix) in ["v_", "e_", "f_"].iter().enumerate() {
            for i in 0..n {
                let id = cols[1 + j * n + i]
                    .strip_prefix(prefix)
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| csv_err(0, &format!("bad column {}", cols[1 + j * n + i])))?;
                if j == 0 {
                    bus_ids.push(id);
                } else if bus_ids[i] != id {
                    return Err(csv_err(0, "column bus ids are inconsistent"));
                }
            }
        }
        let mut curve = Self::new(bus_ids);
        curve.complete = true;
        for (ln, line) in lines {
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| csv_err(ln, &e.to_string()))?;
            if vals.len() != cols.len() {
                return Err(csv_err(ln, "wrong number of fields"));
            }
            curve.push_point(CurvePoint {
                lambda: vals[0],
                vmag: vals[1..1 + n].to_vec(),
                e: vals[1 + n..1 + 2 * n].to_vec(),
                f: vals[1 + 2 * n..].to_vec(),
            });
        }
        if curve.points.is_empty() {
            return Err(CurveError::Empty);
        }
        Ok(curve)
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fa * fm < 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    0.5 * (a + b)
}

/// Upper-branch distances between `a` and `b`. Each curve's upper-branch
/// points are matched against the other curve at the same λ.
pub fn compare_curves(a: &SolutionCurve, b: &SolutionCurve) -> Result<CurveComparison, CurveError> {
    if a.points.is_empty() || b.points.is_empty() {
        return Err(CurveError::Empty);
    }
    if a.bus_ids != b.bus_ids {
        return Err(CurveError::SchemaMismatch);
    }
    let range = |c: &SolutionCurve| {
        let up = c.upper_branch();
        let lo = up.iter().map(|p| p.lambda).fold(f64::INFINITY, f64::min);
        (lo, c.lambda_max)
    };
    let (a_lo, a_hi) = range(a);
    let (b_lo, b_hi) = range(b);
    let (lo, hi) = (a_lo.max(b_lo), a_hi.min(b_hi));
    if hi < lo {
        return Err(CurveError::NonOverlapping);
    }
    let mut dev: f64 = 0.0;
    let mut matched = 0;
    for (x, y) in [(a, b), (b, a)] {
        for p in x.upper_branch().iter().filter(|p| p.lambda >= lo && p.lambda <= hi) {
            if let Some(q) = y.sample_at_lambda(p.lambda, CurveBranch::Upper) {
                matched += 1;
                for (u, v) in p.vmag.iter().zip(&q.vmag) {
                    dev = dev.max((u - v).abs());
                }
            }
        }
    }
    Ok(CurveComparison {
        lambda_max_a: a.lambda_max,
        lambda_max_b: b.lambda_max,
        lambda_max_diff: (a.lambda_max - b.lambda_max).abs(),
        max_voltage_dev: dev,
        matched_samples: matched,
        solve_ratio: (b.linear_solves > 0).then(|| a.linear_solves as f64 / b.linear_solves as f64),
    })
}

/// Shortest decimal rendering with at most 15 significant digits.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.14e}", x);
    let (mant, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-5..15).contains(&exp) {
        let decimals = (14 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let mant = if mant.contains('.') {
            mant.trim_end_matches('0').trim_end_matches('.')
        } else {
            mant
        };
        format!("{mant}e{exp}")
    }
}
