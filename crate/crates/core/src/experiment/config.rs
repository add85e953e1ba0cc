//! TOML experiment configuration with every default materialized.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::ControllerConfig;
use crate::defaults;
use crate::error::{Error, Result};
use crate::grid::{normalize, read_snapshot, Grid, WaveFunction};
use crate::hamiltonian::{DipoleSpec, PotentialSpec};
use crate::propagator::PropagatorConfig;
use crate::spectrum::{AssumptionTolerances, SpectralData};
use num_complex::Complex64;

/// Initial wavefunction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    /// A single bound state `φ_index`.
    Eigenstate { index: usize },
    /// `Σj (re_j + i im_j) φj`, normalized on load.
    Coefficients {
        re: Vec<f64>,
        #[serde(default)]
        im: Vec<f64>,
    },
    /// Gaussian packet `exp(-|x - center|² / (2 width²) + i momentum·x)`.
    Gaussian {
        width: f64,
        #[serde(default)]
        center: Vec<f64>,
        #[serde(default)]
        momentum: Vec<f64>,
    },
    /// Binary snapshot file, resolved relative to the config file.
    Tabulated { path: PathBuf },
}

impl InitialState {
    /// Builds the normalized state. Coefficient lists whose norm deviates from
    /// one by more than the configured tolerance are normalized with a warning.
    pub fn build(&self, grid: Grid, sd: &SpectralData, base: &Path) -> Result<WaveFunction> {
        match self {
            InitialState::Eigenstate { index } => {
                sd.check_index(*index)?;
                Ok(sd.eigenfunctions()[*index].clone())
            }
            InitialState::Coefficients { re, im } => {
                if re.len() > sd.len() || im.len() > sd.len() {
                    return Err(Error::Config(format!(
                        "{} coefficients given but only {} bound states",
                        re.len().max(im.len()),
                        sd.len()
                    )));
                }
                let mut psi = WaveFunction::zeros(grid);
                let mut norm_sqr = 0.0;
                for (j, phi) in sd.eigenfunctions().iter().enumerate() {
                    let c = Complex64::new(
                        re.get(j).copied().unwrap_or(0.0),
                        im.get(j).copied().unwrap_or(0.0),
                    );
                    if c != Complex64::new(0.0, 0.0) {
                        psi = psi.axpy(c, phi)?;
                        norm_sqr += c.norm_sqr();
                    }
                }
                if (norm_sqr.sqrt() - 1.0).abs() > defaults::COEFFICIENT_NORM_WARN {
                    log::warn!(
                        "initial coefficients have norm {:.6}; normalizing",
                        norm_sqr.sqrt()
                    );
                }
                normalize(&psi)
            }
            InitialState::Gaussian {
                width,
                center,
                momentum,
            } => {
                if !(*width > 0.0) {
                    return Err(Error::Config(format!(
                        "gaussian width must be positive, got {width}"
                    )));
                }
                let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
                let psi = WaveFunction::from_fn(grid, |x| {
                    let mut r2 = 0.0;
                    let mut phase = 0.0;
                    for (i, xi) in x.iter().enumerate() {
                        r2 += (xi - at(center, i)).powi(2);
                        phase += at(momentum, i) * xi;
                    }
                    Complex64::from_polar((-r2 / (2.0 * width * width)).exp(), phase)
                });
                normalize(&psi)
            }
            InitialState::Tabulated { path } => {
                let full = base.join(path);
                let file = std::fs::File::open(&full)
                    .map_err(|e| Error::Config(format!("cannot open {}: {e}", full.display())))?;
                let psi = read_snapshot(std::io::BufReader::new(file))?;
                grid.ensure_same(&psi.grid())?;
                normalize(&psi)
            }
        }
    }
}

/// Run horizon, sampling and tolerances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "d_horizon")]
    pub horizon: f64,
    /// CSV cadence in steps; the in-memory record keeps every step.
    #[serde(default = "d_sample_every")]
    pub sample_every: usize,
    /// Final fraction of the horizon over which the target population must
    /// stay above `1 - ε`.
    #[serde(default = "d_plateau")]
    pub plateau_fraction: f64,
    #[serde(default)]
    pub energy_cut: Option<f64>,
    #[serde(default = "d_gap_tol")]
    pub gap_tol: f64,
    #[serde(default = "d_coupling_tol")]
    pub coupling_tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn d_horizon() -> f64 {
    defaults::HORIZON
}
fn d_sample_every() -> usize {
    defaults::SAMPLE_EVERY
}
fn d_plateau() -> f64 {
    defaults::PLATEAU_FRACTION
}
fn d_gap_tol() -> f64 {
    defaults::GAP_TOL
}
fn d_coupling_tol() -> f64 {
    defaults::COUPLING_TOL
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            horizon: defaults::HORIZON,
            sample_every: defaults::SAMPLE_EVERY,
            plateau_fraction: defaults::PLATEAU_FRACTION,
            energy_cut: None,
            gap_tol: defaults::GAP_TOL,
            coupling_tol: defaults::COUPLING_TOL,
            seed: defaults::SEED,
            output_dir: None,
        }
    }
}

/// σ scan range; explicit `values` take precedence over the log range.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaConfig {
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
    #[serde(default)]
    pub points: Option<usize>,
}

/// Probe times of the dispersion subcommand.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionConfig {
    #[serde(default)]
    pub times: Vec<f64>,
    /// Remove the bound-state part before probing.
    #[serde(default = "d_true")]
    pub project_continuum: bool,
}

fn d_true() -> bool {
    true
}

fn d_controller() -> ControllerConfig {
    ControllerConfig::feed(defaults::EPS, defaults::GAIN)
}

fn d_propagator() -> PropagatorConfig {
    PropagatorConfig::new(defaults::DT)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: Grid,
    pub potential: PotentialSpec,
    #[serde(default = "d_dipole")]
    pub dipole: DipoleSpec,
    #[serde(default = "d_initial")]
    pub initial_state: InitialState,
    #[serde(default = "d_controller")]
    pub controller: ControllerConfig,
    #[serde(default = "d_propagator")]
    pub propagator: PropagatorConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub sigma: SigmaConfig,
    #[serde(default)]
    pub dispersion: DispersionConfig,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn d_dipole() -> DipoleSpec {
    DipoleSpec::Zero
}

fn d_initial() -> InitialState {
    InitialState::Eigenstate { index: 0 }
}

impl ExperimentConfig {
    /// Parses TOML text, applying `key=value` overrides (dotted paths, TOML
    /// values) before deserialization.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text, overrides)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.controller.validate()?;
        self.propagator.validate()?;
        let run = &self.run;
        if !(run.horizon > 0.0 && run.horizon.is_finite()) {
            return Err(Error::Config(format!(
                "horizon must be positive, got {}",
                run.horizon
            )));
        }
        if run.sample_every == 0 {
            return Err(Error::Config("sample_every must be at least 1".into()));
        }
        if !(run.plateau_fraction > 0.0 && run.plateau_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "plateau_fraction must lie in (0, 1], got {}",
                run.plateau_fraction
            )));
        }
        if let Some(cut) = run.energy_cut {
            if !(cut <= 0.0) {
                return Err(Error::Config(format!("energy_cut must be <= 0, got {cut}")));
            }
        }
        Ok(())
    }

    pub fn tolerances(&self) -> AssumptionTolerances {
        AssumptionTolerances {
            gap_tol: self.run.gap_tol,
            coupling_tol: self.run.coupling_tol,
        }
    }

    /// The resolved configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Sets `a.b.c = value` in `table`. The value is parsed as TOML and falls
/// back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key '{key}'")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| {
            Error::Config(format!("override key '{key}': '{part}' is not a table"))
        })?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
