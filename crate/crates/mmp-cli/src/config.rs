//! Experiment configuration: one TOML document per run.
//!
//! ```toml
//! task = "stationarity"
//! mode = "exact"            # or "float"
//! seed = 7
//! kernel = "totally_asymmetric"
//! weights = "zrp_weights(2)"
//!
//! [family]
//! name = "built_mmzrp"      # any built-in, or built_mmzrp / built_mmtp
//! params = { weights = "zrp_weights(2)", c = "reciprocal", cutoff = 8 }
//!
//! [lattice]
//! side = 3
//! particles = 5
//! ```

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    CheckInvariance,
    CheckAttractiveness,
    CouplingVerify,
    Simulate,
    SimulateCoupled,
    Canonical,
    FixedVolume,
    Thermo,
    FScan,
    Stationarity,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::CheckInvariance => "check_invariance",
            Task::CheckAttractiveness => "check_attractiveness",
            Task::CouplingVerify => "coupling_verify",
            Task::Simulate => "simulate",
            Task::SimulateCoupled => "simulate_coupled",
            Task::Canonical => "canonical",
            Task::FixedVolume => "fixed_volume",
            Task::Thermo => "thermo",
            Task::FScan => "f_scan",
            Task::Stationarity => "stationarity",
        }
    }

    pub fn stochastic(self) -> bool {
        matches!(self, Task::Simulate | Task::SimulateCoupled)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Exact,
    Float,
}

/// Parameter values may be written as strings or as TOML numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Int(i64),
    Float(f64),
    Text(String),
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Param::Int(i) => write!(f, "{i}"),
            Param::Float(x) => write!(f, "{x}"),
            Param::Text(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, Param>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub side: usize,
    #[serde(default)]
    pub particles: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    pub cutoff: Option<usize>,
    pub quad_cutoff: Option<usize>,
    pub state_guard: Option<u64>,
    /// Growth constant for the coupling key inequality; scanned when absent.
    pub growth_constant: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub events: u64,
    #[serde(default)]
    pub burn_in: u64,
    #[serde(default = "one")]
    pub replicas: u64,
    /// `fixed_density(ρ)`, `deterministic(n, n, …)` or `product(weights, φ)`.
    pub init: String,
    /// Upper configuration of a coupled run.
    pub second_init: Option<String>,
    #[serde(default)]
    pub checkpoints: u64,
    /// Target single-site law as weights and a fugacity.
    pub target: Option<String>,
    pub target_phi: Option<String>,
    pub tv_threshold: Option<f64>,
}

fn one() -> u64 {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalSpec {
    pub weights: String,
    pub sites: usize,
    pub particles: usize,
    #[serde(default = "one_usize")]
    pub marginal_sites: usize,
}

fn one_usize() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedVolumeSpec {
    pub weights: String,
    pub sites: usize,
    pub particles: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermoSpec {
    pub weights: String,
    pub rho: String,
    pub sizes: Vec<usize>,
    #[serde(default = "one_usize")]
    pub marginal_sites: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FScanSpec {
    /// r(n) = π(n)/π(n+1) as a sequence.
    pub r: String,
    pub alpha_max: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Option<Task>,
    #[serde(default)]
    pub mode: Mode,
    pub seed: Option<u64>,
    pub family: Option<FamilySpec>,
    pub kernel: Option<String>,
    /// Single-site weights μ for invariance and stationarity checks.
    pub weights: Option<String>,
    pub lattice: Option<LatticeSpec>,
    #[serde(default)]
    pub limits: Limits,
    pub simulation: Option<SimulationSpec>,
    pub canonical: Option<CanonicalSpec>,
    pub fixed_volume: Option<FixedVolumeSpec>,
    pub thermo: Option<ThermoSpec>,
    pub f_scan: Option<FScanSpec>,
    pub output: Option<String>,
}

/// A configuration problem, with the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn missing(field: &str) -> ValidationError {
    ValidationError { field: field.into(), message: "required for this task".into() }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig, ValidationError> {
        toml::from_str(text).map_err(|e| {
            let field = e.span().map_or("config".to_string(), |s| {
                let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                format!("line {line}")
            });
            ValidationError { field, message: e.message().to_string() }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    /// Fills the task from the command line and checks that the fields the
    /// task needs are present.
    pub fn validate(&mut self, task: Task) -> Result<(), ValidationError> {
        match self.task {
            Some(t) if t != task => {
                return Err(ValidationError {
                    field: "task".into(),
                    message: format!("config names {} but {} was requested", t.name(), task.name()),
                })
            }
            _ => self.task = Some(task),
        }
        if task.stochastic() && self.seed.is_none() {
            return Err(ValidationError { field: "seed".into(), message: "stochastic tasks need a seed".into() });
        }
        let need_family = !matches!(task, Task::Canonical | Task::FixedVolume | Task::Thermo | Task::FScan);
        if need_family && self.family.is_none() {
            return Err(missing("family"));
        }
        match task {
            Task::Simulate | Task::SimulateCoupled => {
                let sim = self.simulation.as_ref().ok_or_else(|| missing("simulation"))?;
                if self.lattice.is_none() {
                    return Err(missing("lattice"));
                }
                if task == Task::SimulateCoupled && sim.second_init.is_none() {
                    return Err(missing("simulation.second_init"));
                }
                if sim.target.is_some() != sim.target_phi.is_some() {
                    return Err(ValidationError {
                        field: "simulation.target".into(),
                        message: "target and target_phi go together".into(),
                    });
                }
            }
            Task::Stationarity => {
                let lat = self.lattice.as_ref().ok_or_else(|| missing("lattice"))?;
                if lat.particles.is_none() {
                    return Err(missing("lattice.particles"));
                }
            }
            Task::Canonical if self.canonical.is_none() => return Err(missing("canonical")),
            Task::FixedVolume if self.fixed_volume.is_none() => return Err(missing("fixed_volume")),
            Task::Thermo if self.thermo.is_none() => return Err(missing("thermo")),
            Task::FScan if self.f_scan.is_none() => return Err(missing("f_scan")),
            _ => {}
        }
        Ok(())
    }
}
