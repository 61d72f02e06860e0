//! The JSON run configuration: `{hamiltonian, potential, run}`.

use std::path::Path;

use hjflat::hamiltonian::{DoubleWell, HamiltonianDoc};
use hjflat::potential::{PotentialDoc, PotentialProcess};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub hamiltonian: HamiltonianDoc,
    pub potential: PotentialDoc,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub beta: Option<f64>,
    pub seed: Option<u64>,
    /// Window length for random processes.
    pub window: Option<f64>,
    /// Realizations per ensemble average.
    pub samples: Option<usize>,
    pub output_dir: Option<String>,
    /// Use `p -> G(-p)` in place of the given `G`.
    pub mirror: bool,
    pub curve: CurveSection,
    pub flats: FlatsSection,
    pub oracle: OracleSection,
    pub corrector: CorrectorSection,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveSection {
    pub points: usize,
    pub margin: f64,
    pub theta: Option<Vec<f64>>,
}

impl Default for CurveSection {
    fn default() -> Self {
        CurveSection { points: 200, margin: 1.0, theta: None }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlatsSection {
    pub mode: String,
    pub grid_points: usize,
    pub event_samples: usize,
    pub event_window: f64,
}

impl Default for FlatsSection {
    fn default() -> Self {
        FlatsSection { mode: "both".into(), grid_points: 8, event_samples: 2000, event_window: 200.0 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub dx: f64,
    pub t_final: f64,
    pub cfl: f64,
    pub probes: Option<Vec<f64>>,
    pub tol: f64,
    pub realizations: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection { dx: 1e-3, t_final: 50.0, cfl: 0.5, probes: None, tol: 2e-2, realizations: 4 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectorSection {
    pub recipe: Option<String>,
    pub lambda: Option<f64>,
    pub epsilon: Option<f64>,
    pub junction_from: f64,
    /// Half width of the sampled window.
    pub half_width: f64,
}

impl Default for CorrectorSection {
    fn default() -> Self {
        CorrectorSection { recipe: None, lambda: None, epsilon: None, junction_from: 0.0, half_width: 10.0 }
    }
}

pub struct Loaded {
    pub config: Config,
    pub raw: String,
    pub spec: DoubleWell,
    pub process: PotentialProcess,
    pub beta: f64,
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config: Config = serde_json::from_str(&raw)
        .map_err(|e| CliError::Config(format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column())))?;
    let mut spec = config.hamiltonian.build().map_err(|e| CliError::Config(e.to_string()))?;
    if config.run.mirror {
        spec = spec.mirror();
    }
    let process = config.potential.build().map_err(|e| CliError::Config(e.to_string()))?;
    let beta = config.run.beta.ok_or_else(|| CliError::Config("run.beta is required".into()))?;
    if !(beta > 0.0) {
        return Err(CliError::Config(format!("beta must be positive, got {beta}")));
    }
    Ok(Loaded { config, raw, spec, process, beta })
}
