//! Raw case records in engineering units and the native `.case.json` schema.
//!
//! ```json
//! {
//!   "baseMVA": 100,
//!   "bus":    [{"id": 1, "type": "REF", "pd": 0, "qd": 0, "gs": 0, "bs": 0, "vm": 1.04, "va": 0}],
//!   "gen":    [{"bus": 1, "pg": 72.3, "qg": 27.03, "qmax": 300, "qmin": -300, "vg": 1.04, "status": true}],
//!   "branch": [{"from": 1, "to": 4, "r": 0, "x": 0.0576, "b": 0, "ratio": 1, "angle": 0, "status": true}]
//! }
//! ```
//!
//! Powers are MW/MVAr, shunts are MW/MVAr consumed at 1 p.u. voltage,
//! angles are degrees, impedances are per-unit. Missing optional fields
//! take MATPOWER defaults.

use serde::{Deserialize, Serialize};

use super::BusKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseData {
    #[serde(rename = "baseMVA")]
    pub base_mva: f64,
    pub bus: Vec<BusRecord>,
    #[serde(default)]
    pub gen: Vec<GenRecord>,
    pub branch: Vec<BranchRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusRecord {
    pub id: usize,
    #[serde(rename = "type")]
    pub kind: BusKind,
    #[serde(default)]
    pub pd: f64,
    #[serde(default)]
    pub qd: f64,
    #[serde(default)]
    pub gs: f64,
    #[serde(default)]
    pub bs: f64,
    #[serde(default = "one")]
    pub vm: f64,
    #[serde(default)]
    pub va: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRecord {
    pub bus: usize,
    #[serde(default)]
    pub pg: f64,
    #[serde(default)]
    pub qg: f64,
    #[serde(default = "big")]
    pub qmax: f64,
    #[serde(default = "neg_big")]
    pub qmin: f64,
    #[serde(default = "one")]
    pub vg: f64,
    #[serde(default = "yes")]
    pub status: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub from: usize,
    pub to: usize,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b: f64,
    /// Off-nominal tap ratio; 0 means nominal (1.0), as in MATPOWER.
    #[serde(default = "one")]
    pub ratio: f64,
    /// Phase shift in degrees.
    #[serde(default)]
    pub angle: f64,
    #[serde(default = "yes")]
    pub status: bool,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn big() -> f64 {
    9999.0
}

fn neg_big() -> f64 {
    -9999.0
}

impl CaseData {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case data is always serializable")
    }
}
