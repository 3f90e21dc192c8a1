//! Run configuration: one TOML file, overridable from the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ic::SamplePlan;
use crate::kernels::{self, Kernel};
use crate::revenue::{MyopicOptions, SimulationOptions, SweepAxis};
use crate::solver::SolveConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    pub name: Option<String>,
    pub params: BTreeMap<String, f64>,
}

/// Which incentive-compatibility diagnostics `check` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckToggles {
    pub integral_monotonicity: bool,
    pub sufficient_conditions: bool,
    pub two_period: bool,
    pub expost_ir: bool,
    pub best_response: bool,
    pub myopic: bool,
    pub plan: SamplePlan,
    /// Discrete types for the best-response oracle.
    pub oracle_types: usize,
    /// Stratified quantiles per period for the ex-post IR paths.
    pub expost_quantiles: usize,
    pub myopic_options: MyopicOptions,
}

impl Default for CheckToggles {
    fn default() -> Self {
        Self {
            integral_monotonicity: true,
            sufficient_conditions: true,
            two_period: true,
            expost_ir: true,
            best_response: true,
            myopic: false,
            plan: SamplePlan::default(),
            oracle_types: 20,
            expost_quantiles: 100,
            myopic_options: MyopicOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            axis: SweepAxis::Delta,
            values: vec![0.0, 0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

impl OutputSpec {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: KernelSpec,
    pub solve: SolveConfig,
    pub checks: CheckToggles,
    pub simulation: SimulationOptions,
    pub sweep: SweepSpec,
    pub output: OutputSpec,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    /// Check everything that can be checked before any computation,
    /// including building the kernel.
    pub fn validate(&self) -> Result<Arc<dyn Kernel>> {
        self.solve.validate()?;
        if self.checks.oracle_types < 2 {
            return Err(Error::config("checks.oracle_types", "must be at least 2"));
        }
        for (i, v) in self.sweep.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::config(format!("sweep.values[{i}]"), "must be finite"));
            }
        }
        self.build_kernel()
    }

    pub fn build_kernel(&self) -> Result<Arc<dyn Kernel>> {
        let name = self
            .kernel
            .name
            .as_deref()
            .ok_or_else(|| Error::config("kernel.name", "no kernel given (use --kernel or [kernel] name)"))?;
        kernels::from_name(name, &self.kernel.params)
    }

    /// SHA-256 of the canonical JSON form, hex encoded. The output
    /// directory does not enter the hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir = PathBuf::new();
        let canonical = serde_json::to_vec(&c).expect("config serialises");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.kernel.name = Some("ar1".into());
        c.kernel.params.insert("gamma".into(), 0.3);
        c.solve.delta = 0.1 + 0.2;
        c.solve.distortion_bounds = Some((1e-7, 3.0));
        let text = c.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_fields_and_kernels() {
        assert!(RunConfig::from_toml_str("[solve]\nhorizn = 3\n").is_err());
        let c = RunConfig::from_toml_str("[kernel]\nname = \"nope\"\n").unwrap();
        assert!(matches!(c.validate(), Err(Error::UnknownKernel(_))));
        let c = RunConfig::from_toml_str("[kernel]\nname = \"ar1\"\nparams = { gamma = 1.5 }\n").unwrap();
        assert!(c.validate().is_err());
        assert!(matches!(RunConfig::default().validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.output.dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.solve.delta = 0.5;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
