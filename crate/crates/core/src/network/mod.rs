//! Network model: buses, branches, generators, admittance matrix, bus-type
//! partition and loading directions.

mod case;
mod direction;
mod matpower;
mod power;
mod ybus;

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use case::{BranchRecord, BusRecord, CaseData, GenRecord};
pub use direction::{build_direction, DirectionEntry, DirectionSpec, DirectionVector};
pub use matpower::{eval_expr, parse_matpower};
pub use power::{generator_reactive, injections, mismatch, norm_inf, Schedule, State};
pub use ybus::{build_ybus, SparseComplex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid JSON case: {0}")]
    Json(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("bus {bus} is islanded from the reference bus")]
    Islanded { bus: usize },
    #[error("branch {branch} has zero series impedance")]
    ZeroImpedance { branch: usize },
    #[error("loading direction is identically zero")]
    EmptyDirection,
    #[error("unknown bus {0}")]
    UnknownBus(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BusKind {
    PQ,
    PV,
    #[serde(rename = "REF")]
    Ref,
}

/// A bus with its raw load/shunt data (MW, MVAr) and the specified
/// per-unit quantities derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// External bus number from the case file.
    pub id: usize,
    pub kind: BusKind,
    pub pd: f64,
    pub qd: f64,
    pub gs: f64,
    pub bs: f64,
    /// Voltage magnitude/angle (degrees) stored in the case, used as an
    /// initial guess.
    pub vm: f64,
    pub va: f64,
    /// Net active injection, generation minus load (p.u.).
    pub p_sp: f64,
    /// Net reactive injection, generation minus load (p.u.).
    pub q_sp: f64,
    /// Scheduled voltage magnitude for PV/REF buses (p.u.).
    pub v_sp: f64,
    /// Rectangular reference voltage (REF only, p.u.).
    pub e_sp: f64,
    pub f_sp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub from_idx: usize,
    pub to_idx: usize,
    pub series_r: f64,
    pub series_x: f64,
    pub shunt_b: f64,
    pub tap_ratio: f64,
    /// Phase shift in degrees as stored in the case.
    pub phase_shift_deg: f64,
    pub status: bool,
}

impl Branch {
    /// Phase shift in radians.
    pub fn phase_shift(&self) -> f64 {
        self.phase_shift_deg.to_radians()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    pub bus_idx: usize,
    pub p_gen: f64,
    pub q_gen: f64,
    pub q_max: f64,
    pub q_min: f64,
    pub v_set: f64,
    pub status: bool,
}

/// Validated, immutable network with its bus admittance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerNetwork {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub ybus: SparseComplex,
    index: HashMap<usize, usize>,
    ref_idx: usize,
}

/// Parses case text, auto-detecting the native JSON schema (leading `{`)
/// or the MATPOWER `.m` subset.
pub fn parse_case(text: &str) -> Result<PowerNetwork, NetworkError> {
    let data = if text.trim_start().starts_with('{') {
        CaseData::from_json(text).map_err(|e| NetworkError::Json(e.to_string()))?
    } else {
        parse_matpower(text)?
    };
    PowerNetwork::from_case(&data)
}

impl PowerNetwork {
    pub fn from_case(data: &CaseData) -> Result<Self, NetworkError> {
        let base = data.base_mva;
        if !(base > 0.0) {
            return Err(NetworkError::Validation(format!("baseMVA must be positive, got {base}")));
        }
        let mut index = HashMap::with_capacity(data.bus.len());
        for (i, b) in data.bus.iter().enumerate() {
            if index.insert(b.id, i).is_some() {
                return Err(NetworkError::Validation(format!("duplicate bus {}", b.id)));
            }
        }
        let lookup = |id: usize| index.get(&id).copied().ok_or(NetworkError::UnknownBus(id));

        let mut generators = Vec::with_capacity(data.gen.len());
        for g in &data.gen {
            if g.status && g.qmin > g.qmax {
                return Err(NetworkError::Validation(format!(
                    "generator at bus {} has qmin {} > qmax {}",
                    g.bus, g.qmin, g.qmax
                )));
            }
            generators.push(Generator {
                bus: g.bus,
                bus_idx: lookup(g.bus)?,
                p_gen: g.pg,
                q_gen: g.qg,
                q_max: g.qmax,
                q_min: g.qmin,
                v_set: g.vg,
                status: g.status,
            });
        }

        let mut branches = Vec::with_capacity(data.branch.len());
        for br in &data.branch {
            let tap = if br.ratio == 0.0 { 1.0 } else { br.ratio };
            if br.r < 0.0 {
                return Err(NetworkError::Validation(format!(
                    "branch {}-{} has negative resistance",
                    br.from, br.to
                )));
            }
            if !(tap > 0.0) {
                return Err(NetworkError::Validation(format!(
                    "branch {}-{} has non-positive tap ratio",
                    br.from, br.to
                )));
            }
            branches.push(Branch {
                from: br.from,
                to: br.to,
                from_idx: lookup(br.from)?,
                to_idx: lookup(br.to)?,
                series_r: br.r,
                series_x: br.x,
                shunt_b: br.b,
                tap_ratio: tap,
                phase_shift_deg: br.angle,
                status: br.status,
            });
        }

        let mut buses = Vec::with_capacity(data.bus.len());
        for (i, b) in data.bus.iter().enumerate() {
            let online: Vec<&Generator> = generators
                .iter()
                .filter(|g| g.bus_idx == i && g.status)
                .collect();
            let pg: f64 = online.iter().map(|g| g.p_gen).sum();
            let qg: f64 = online.iter().map(|g| g.q_gen).sum();
            let kind = match (b.kind, online.is_empty()) {
                (BusKind::PV, true) => BusKind::PQ,
                (BusKind::Ref, true) => {
                    return Err(NetworkError::Validation(format!(
                        "reference bus {} has no in-service generator",
                        b.id
                    )))
                }
                (k, _) => k,
            };
            let v_sp = match kind {
                BusKind::PQ => b.vm,
                _ => online[0].v_set,
            };
            if kind != BusKind::PQ && !(v_sp > 0.0) {
                return Err(NetworkError::Validation(format!(
                    "bus {} has non-positive voltage setpoint",
                    b.id
                )));
            }
            let theta = b.va.to_radians();
            let (e_sp, f_sp) = if kind == BusKind::Ref {
                (v_sp * theta.cos(), v_sp * theta.sin())
            } else {
                (0.0, 0.0)
            };
            buses.push(Bus {
                id: b.id,
                kind,
                pd: b.pd,
                qd: b.qd,
                gs: b.gs,
                bs: b.bs,
                vm: b.vm,
                va: b.va,
                p_sp: (pg - b.pd) / base,
                q_sp: (qg - b.qd) / base,
                v_sp,
                e_sp,
                f_sp,
            });
        }

        let refs: Vec<usize> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Ref)
            .map(|(i, _)| i)
            .collect();
        let ref_idx = match refs.as_slice() {
            [r] => *r,
            [] => return Err(NetworkError::Validation("no reference bus".into())),
            _ => {
                return Err(NetworkError::Validation(format!(
                    "{} reference buses, expected exactly one",
                    refs.len()
                )))
            }
        };

        let ybus = build_ybus(&buses, &branches, base)?;
        let net = Self {
            base_mva: base,
            buses,
            branches,
            generators,
            ybus,
            index,
            ref_idx,
        };
        net.check_connectivity()?;
        Ok(net)
    }

    fn check_connectivity(&self) -> Result<(), NetworkError> {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in self.branches.iter().filter(|b| b.status) {
            adj[br.from_idx].push(br.to_idx);
            adj[br.to_idx].push(br.from_idx);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([self.ref_idx]);
        seen[self.ref_idx] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(NetworkError::Islanded {
                bus: self.buses[i].id,
            }),
            None => Ok(()),
        }
    }

    /// Back to raw case records; `from_case(to_case(net)) == net`.
    pub fn to_case(&self) -> CaseData {
        CaseData {
            base_mva: self.base_mva,
            bus: self
                .buses
                .iter()
                .map(|b| BusRecord {
                    id: b.id,
                    kind: b.kind,
                    pd: b.pd,
                    qd: b.qd,
                    gs: b.gs,
                    bs: b.bs,
                    vm: b.vm,
                    va: b.va,
                })
                .collect(),
            gen: self
                .generators
                .iter()
                .map(|g| GenRecord {
                    bus: g.bus,
                    pg: g.p_gen,
                    qg: g.q_gen,
                    qmax: g.q_max,
                    qmin: g.q_min,
                    vg: g.v_set,
                    status: g.status,
                })
                .collect(),
            branch: self
                .branches
                .iter()
                .map(|br| BranchRecord {
                    from: br.from,
                    to: br.to,
                    r: br.series_r,
                    x: br.series_x,
                    b: br.shunt_b,
                    ratio: br.tap_ratio,
                    angle: br.phase_shift_deg,
                    status: br.status,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        self.to_case().to_json()
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn ref_index(&self) -> usize {
        self.ref_idx
    }

    /// Internal index of an external bus number.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn in_service_branches(&self) -> impl Iterator<Item = (usize, &Branch)> {
        self.branches.iter().enumerate().filter(|(_, b)| b.status)
    }

    /// Copy of the network with branch `k` taken out of service.
    /// Fails with [`NetworkError::Islanded`] if that disconnects a bus.
    pub fn without_branch(&self, k: usize) -> Result<PowerNetwork, NetworkError> {
        let mut data = self.to_case();
        let br = data
            .branch
            .get_mut(k)
            .ok_or_else(|| NetworkError::Validation(format!("no branch {k}")))?;
        br.status = false;
        PowerNetwork::from_case(&data)
    }

    /// Aggregate reactive limits `(q_min, q_max)` in p.u. of the in-service
    /// generators at bus `i`, if any.
    pub fn q_limits(&self, i: usize) -> Option<(f64, f64)> {
        let mut any = false;
        let (mut lo, mut hi) = (0.0, 0.0);
        for g in self.generators.iter().filter(|g| g.bus_idx == i && g.status) {
            any = true;
            lo += g.q_min;
            hi += g.q_max;
        }
        any.then(|| (lo / self.base_mva, hi / self.base_mva))
    }
}
