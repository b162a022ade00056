use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use dpf_core::network::{build_direction, parse_case, DirectionSpec, DirectionVector, PowerNetwork};
use dpf_core::tracer::FormulationMode;
use dpf_core::{CpfConfig, TraceConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dpf,
    Cpf,
    Both,
}

impl Method {
    pub fn dpf(self) -> bool {
        matches!(self, Self::Dpf | Self::Both)
    }

    pub fn cpf(self) -> bool {
        matches!(self, Self::Cpf | Self::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormulationArg {
    Lambda,
    Voltage,
    Auto,
}

impl From<FormulationArg> for FormulationMode {
    fn from(f: FormulationArg) -> Self {
        match f {
            FormulationArg::Lambda => Self::LambdaDriven,
            FormulationArg::Voltage => Self::VoltageDriven,
            FormulationArg::Auto => Self::Auto,
        }
    }
}

/// Either an inline direction object or a string: `uniform` or a path to
/// a direction JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DirectionSource {
    Inline(DirectionSpec),
    Named(String),
}

/// JSON run description. Relative paths resolve against the manifest's
/// directory.
///
/// ```json
/// {
///   "case": "case9.m",
///   "direction": "uniform",
///   "method": "both",
///   "dpf": { "order_k": 6, "step_h": 0.1 },
///   "cpf": { "max_arc_step": 0.2 },
///   "out": "out9",
///   "pv_buses": [9]
/// }
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub case: Option<PathBuf>,
    pub direction: Option<DirectionSource>,
    pub method: Option<Method>,
    pub dpf: Option<TraceConfig>,
    pub cpf: Option<CpfConfig>,
    pub out: Option<PathBuf>,
    pub pv_buses: Vec<usize>,
    pub verify: bool,
    pub workers: Option<usize>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read(path)?;
        let mut m: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::parse(format!("manifest {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = m.case.as_mut() {
            rebase(p);
        }
        if let Some(p) = m.out.as_mut() {
            rebase(p);
        }
        if let Some(DirectionSource::Named(s)) = m.direction.as_mut() {
            if s != "uniform" && Path::new(s.as_str()).is_relative() {
                *s = base.join(s.as_str()).to_string_lossy().into_owned();
            }
        }
        Ok(m)
    }
}

/// Flags shared by `trace` and `nminus1`. Flags override the manifest,
/// which overrides built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON run manifest
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Case file (MATPOWER .m or native JSON)
    #[arg(long)]
    pub case: Option<PathBuf>,
    /// `uniform` or a direction JSON file
    #[arg(long)]
    pub direction: Option<String>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Series order per window
    #[arg(long)]
    pub k: Option<usize>,
    /// Fictitious-time window length
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub c2: Option<f64>,
    #[arg(long, value_enum)]
    pub formulation: Option<FormulationArg>,
    /// Bus id held by the voltage-driven form
    #[arg(long)]
    pub driven_bus: Option<usize>,
    /// Enforce generator reactive limits
    #[arg(long)]
    pub q_limits: bool,
    #[arg(long)]
    pub max_windows: Option<usize>,
    /// Stop both tracers once the nose is located
    #[arg(long)]
    pub stop_at_nose: bool,
    /// Write pv_<bus>.csv for this bus id (repeatable)
    #[arg(long = "pv-bus")]
    pub pv_buses: Vec<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Re-check every CSV row against the power-flow equations
    #[arg(long)]
    pub verify: bool,
    /// N-1 worker threads (default: available parallelism)
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Fully resolved run.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub case_path: PathBuf,
    pub net: PowerNetwork,
    pub direction: DirectionSpec,
    pub dir: DirectionVector,
    pub method: Method,
    pub dpf: TraceConfig,
    pub cpf: CpfConfig,
    pub out: PathBuf,
    pub pv_buses: Vec<usize>,
    pub verify: bool,
    pub workers: Option<usize>,
}

impl RunPlan {
    pub fn resolve(args: &RunArgs) -> Result<Self, CliError> {
        let m = match &args.manifest {
            Some(p) => RunManifest::load(p)?,
            None => RunManifest::default(),
        };
        let case_path = args
            .case
            .clone()
            .or(m.case)
            .ok_or_else(|| CliError::usage("no case given (--case or manifest)"))?;
        let net = load_case(&case_path)?;
        let direction = match args.direction.clone().map(DirectionSource::Named).or(m.direction) {
            None => DirectionSpec::Uniform,
            Some(DirectionSource::Inline(spec)) => spec,
            Some(DirectionSource::Named(s)) => load_direction(&s)?,
        };
        let dir = build_direction(&net, &direction).map_err(|e| CliError::parse(e.to_string()))?;

        let mut dpf = m.dpf.unwrap_or_default();
        let mut cpf = m.cpf.unwrap_or_default();
        if let Some(k) = args.k {
            dpf.order_k = k;
        }
        if let Some(h) = args.step {
            dpf.step_h = h;
        }
        if let Some(c) = args.c1 {
            dpf.c1 = c;
        }
        if let Some(c) = args.c2 {
            dpf.c2 = c;
        }
        if let Some(f) = args.formulation {
            dpf.formulation = f.into();
        }
        if args.driven_bus.is_some() {
            dpf.driven_bus = args.driven_bus;
        }
        if let Some(w) = args.max_windows {
            dpf.max_windows = w;
        }
        if args.q_limits {
            dpf.enforce_q_limits = true;
            cpf.enforce_q_limits = true;
        }
        if args.stop_at_nose {
            dpf.stop_at_nose = true;
            cpf.stop_at_nose = true;
        }
        dpf.validate().map_err(|e| CliError::parse(e.to_string()))?;
        cpf.validate().map_err(|e| CliError::parse(e.to_string()))?;

        let mut pv_buses = if args.pv_buses.is_empty() { m.pv_buses } else { args.pv_buses.clone() };
        pv_buses.sort_unstable();
        pv_buses.dedup();
        if let Some(id) = pv_buses.iter().find(|id| net.bus_index(**id).is_none()) {
            return Err(CliError::parse(format!("unknown pv bus {id}")));
        }
        Ok(Self {
            case_path,
            net,
            direction,
            dir,
            method: args.method.or(m.method).unwrap_or(Method::Dpf),
            dpf,
            cpf,
            out: args.out.clone().or(m.out).unwrap_or_else(|| PathBuf::from("out")),
            pv_buses,
            verify: args.verify || m.verify,
            workers: args.workers.or(m.workers),
        })
    }
}

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))
}

pub fn load_case(path: &Path) -> Result<PowerNetwork, CliError> {
    parse_case(&read(path)?).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))
}

pub fn load_direction(src: &str) -> Result<DirectionSpec, CliError> {
    if src == "uniform" {
        return Ok(DirectionSpec::Uniform);
    }
    let path = Path::new(src);
    DirectionSpec::from_json(&read(path)?).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))
}
