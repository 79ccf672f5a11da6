//! Deterministic three-tier simulation and execution-time benchmarks.

pub mod bench;
pub mod scenario;

use serde::{Deserialize, Serialize};

use crate::sync::{ClientAlgorithm, ModelKind};

pub use bench::{bench_execution, BenchConfig, BenchRow};
pub use scenario::{run_scenario, run_scenario_with, LinkConfig, ScenarioConfig, ScenarioResult, SensorNodeConfig, SourceConfig};

/// The four context-learning algorithms. CL and DCL decide on the server,
/// LCL and ADCL on the client from downloaded bundles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "CL")]
    Cl,
    #[serde(rename = "LCL")]
    Lcl,
    #[serde(rename = "DCL")]
    Dcl,
    #[serde(rename = "ADCL")]
    Adcl,
}

impl Algorithm {
    pub fn all() -> Vec<Algorithm> {
        vec![Algorithm::Cl, Algorithm::Lcl, Algorithm::Dcl, Algorithm::Adcl]
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Cl => "CL",
            Algorithm::Lcl => "LCL",
            Algorithm::Dcl => "DCL",
            Algorithm::Adcl => "ADCL",
        }
    }

    pub fn is_client(&self) -> bool {
        matches!(self, Algorithm::Lcl | Algorithm::Adcl)
    }

    /// Kind of bundle the algorithm trains or consumes.
    pub fn model_kind(&self) -> ModelKind {
        match self {
            Algorithm::Cl | Algorithm::Lcl => ModelKind::Cl,
            Algorithm::Dcl | Algorithm::Adcl => ModelKind::Dcl,
        }
    }

    /// CL decides with thresholds like LCL; DCL with argmax like ADCL.
    pub fn decision_rule(&self) -> ClientAlgorithm {
        match self.model_kind() {
            ModelKind::Cl => ClientAlgorithm::Lcl,
            ModelKind::Dcl => ClientAlgorithm::Adcl,
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "CL" => Ok(Algorithm::Cl),
            "LCL" => Ok(Algorithm::Lcl),
            "DCL" => Ok(Algorithm::Dcl),
            "ADCL" => Ok(Algorithm::Adcl),
            other => Err(format!("unknown algorithm `{other}`")),
        }
    }
}
