use serde::{Deserialize, Serialize};

use super::{BusKind, NetworkError, PowerNetwork};

/// How the loading parameter moves injections.
///
/// ```json
/// { "mode": "uniform" }
/// { "mode": "explicit", "entries": [{"bus": 7, "dp_mw": -50, "dq_mvar": -10}] }
/// ```
///
/// Explicit entries use the injection sign convention: a load increase is a
/// negative `dp_mw`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum DirectionSpec {
    Uniform,
    Explicit { entries: Vec<DirectionEntry> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionEntry {
    pub bus: usize,
    #[serde(default)]
    pub dp_mw: f64,
    #[serde(default)]
    pub dq_mvar: f64,
}

impl DirectionSpec {
    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        serde_json::from_str(text).map_err(|e| NetworkError::Json(e.to_string()))
    }
}

/// Per-bus injection change `(Δp_i, Δq_i)` per unit of λ, in p.u.
///
/// `dq` is zero on PV and REF buses and `dp` is zero on the REF bus.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionVector {
    pub dp: Vec<f64>,
    pub dq: Vec<f64>,
}

impl DirectionVector {
    pub fn len(&self) -> usize {
        self.dp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dp.is_empty()
    }
}

/// Direction vector for `spec`.
///
/// `uniform` scales every non-reference bus's net base-case injection
/// (generation and load together); the reference bus absorbs the balance.
pub fn build_direction(
    net: &PowerNetwork,
    spec: &DirectionSpec,
) -> Result<DirectionVector, NetworkError> {
    let n = net.n_buses();
    let mut dp = vec![0.0; n];
    let mut dq = vec![0.0; n];
    match spec {
        DirectionSpec::Uniform => {
            for (i, b) in net.buses.iter().enumerate() {
                dp[i] = b.p_sp;
                dq[i] = b.q_sp;
            }
        }
        DirectionSpec::Explicit { entries } => {
            for e in entries {
                let i = net.bus_index(e.bus).ok_or(NetworkError::UnknownBus(e.bus))?;
                dp[i] += e.dp_mw / net.base_mva;
                dq[i] += e.dq_mvar / net.base_mva;
            }
        }
    }
    for (i, b) in net.buses.iter().enumerate() {
        match b.kind {
            BusKind::PQ => {}
            BusKind::PV => dq[i] = 0.0,
            BusKind::Ref => {
                dp[i] = 0.0;
                dq[i] = 0.0;
            }
        }
    }
    if dp.iter().chain(&dq).all(|v| *v == 0.0) {
        return Err(NetworkError::EmptyDirection);
    }
    Ok(DirectionVector { dp, dq })
}
