//! Analytic potential and dipole families, their sampled fields, and the
//! action of `H0 = -Δ + V` through a Fourier-multiplier Laplacian.
//!
//! Units are `ħ = 1` and mass `1/2`, so the kinetic symbol is `|k|^2`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::Fourier;
use crate::grid::{Grid, WaveFunction};

/// Potential families. Serialized as tagged records `{family = "...", ...}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    /// `V(x) = -s(s+1) sech^2(x)`, one-dimensional only.
    PoschlTeller { strength: f64 },
    /// `V(x) = depth * exp(-|x - center|^2 / width^2)` with `depth < 0`.
    GaussianWell {
        depth: f64,
        width: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
    /// Radial well equal to `depth` for `r <= radius - smoothing`, zero for
    /// `r >= radius`, joined by a C-infinity step.
    CompactBump {
        depth: f64,
        radius: f64,
        smoothing: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
    /// Raw samples on a grid with `points_per_axis` nodes per axis.
    Tabulated {
        points_per_axis: usize,
        samples: Vec<f64>,
    },
    /// No potential at all (free particle).
    Zero,
}

/// Dipole moment families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DipoleSpec {
    /// `mu(x) = a * x_1 * exp(-|x|^2 / w^2)`, odd in the first coordinate.
    GaussianDipole {
        amplitude: f64,
        width: f64,
    },
    /// `mu(x) = a * exp(-|x|^2 / w^2)`, even.
    GaussianEven {
        amplitude: f64,
        width: f64,
    },
    Tabulated {
        points_per_axis: usize,
        samples: Vec<f64>,
    },
    Zero,
}

/// Real samples on a grid, same layout as [`WaveFunction`].
#[derive(Clone, Debug, PartialEq)]
pub struct RealField {
    grid: Grid,
    values: Vec<f64>,
}

impl RealField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} samples for a grid of {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite field value at index {i}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl FnMut(&[f64]) -> f64) -> Result<Self> {
        Self::new(grid, grid.map_nodes(f))
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self + scale * other`, pointwise.
    pub fn add_scaled(&self, scale: f64, other: &RealField) -> Result<RealField> {
        self.grid.ensure_same(&other.grid)?;
        Ok(RealField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + scale * b)
                .collect(),
        })
    }
}

fn center_offset(center: &[f64], dim: usize) -> Result<[f64; 3]> {
    let mut c = [0.0; 3];
    match center.len() {
        0 => {}
        n if n == dim => c[..dim].copy_from_slice(center),
        n => {
            return Err(Error::Config(format!(
                "center has {n} coordinates on a {dim}-dimensional grid"
            )))
        }
    }
    Ok(c)
}

fn smooth_step(t: f64) -> f64 {
    let g = |s: f64| if s <= 0.0 { 0.0 } else { (-1.0 / s).exp() };
    let (a, b) = (g(t), g(1.0 - t));
    a / (a + b)
}

fn tabulated(grid: Grid, points_per_axis: usize, samples: &[f64]) -> Result<RealField> {
    if points_per_axis != grid.points_per_axis() || samples.len() != grid.len() {
        return Err(Error::Resampling(format!(
            "tabulated data has {} points per axis ({} samples), grid needs {} ({} samples)",
            points_per_axis,
            samples.len(),
            grid.points_per_axis(),
            grid.len()
        )));
    }
    RealField::new(grid, samples.to_vec())
}

impl PotentialSpec {
    pub fn sample(&self, grid: Grid) -> Result<RealField> {
        let dim = grid.dim();
        match self {
            PotentialSpec::PoschlTeller { strength } => {
                if dim != 1 {
                    return Err(Error::Unsupported(
                        "the Pöschl-Teller family is one-dimensional".into(),
                    ));
                }
                let s = *strength;
                RealField::from_fn(grid, |x| {
                    let sech = 1.0 / x[0].cosh();
                    -s * (s + 1.0) * sech * sech
                })
            }
            PotentialSpec::GaussianWell {
                depth,
                width,
                center,
            } => {
                if !(*width > 0.0) {
                    return Err(Error::Config("gaussian_well width must be positive".into()));
                }
                let c = center_offset(center, dim)?;
                RealField::from_fn(grid, |x| {
                    let r2: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
                    depth * (-r2 / (width * width)).exp()
                })
            }
            PotentialSpec::CompactBump {
                depth,
                radius,
                smoothing,
                center,
            } => {
                if !(*radius > 0.0 && *smoothing > 0.0 && smoothing <= radius) {
                    return Err(Error::Config(
                        "compact_bump needs 0 < smoothing <= radius".into(),
                    ));
                }
                let c = center_offset(center, dim)?;
                RealField::from_fn(grid, |x| {
                    let r = x
                        .iter()
                        .zip(&c)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    depth * smooth_step((radius - r) / smoothing)
                })
            }
            PotentialSpec::Tabulated {
                points_per_axis,
                samples,
            } => tabulated(grid, *points_per_axis, samples),
            PotentialSpec::Zero => Ok(RealField::zeros(grid)),
        }
    }
}

impl DipoleSpec {
    pub fn sample(&self, grid: Grid) -> Result<RealField> {
        match self {
            DipoleSpec::GaussianDipole { amplitude, width } => {
                if !(*width > 0.0) {
                    return Err(Error::Config("dipole width must be positive".into()));
                }
                RealField::from_fn(grid, |x| {
                    let r2: f64 = x.iter().map(|v| v * v).sum();
                    amplitude * x[0] * (-r2 / (width * width)).exp()
                })
            }
            DipoleSpec::GaussianEven { amplitude, width } => {
                if !(*width > 0.0) {
                    return Err(Error::Config("dipole width must be positive".into()));
                }
                RealField::from_fn(grid, |x| {
                    let r2: f64 = x.iter().map(|v| v * v).sum();
                    amplitude * (-r2 / (width * width)).exp()
                })
            }
            DipoleSpec::Tabulated {
                points_per_axis,
                samples,
            } => tabulated(grid, *points_per_axis, samples),
            DipoleSpec::Zero => Ok(RealField::zeros(grid)),
        }
    }
}

/// Applies `-Δ` through the Fourier multiplier `|k|^2`.
pub fn apply_laplacian(psi: &WaveFunction, fourier: &mut Fourier, k2: &[f64]) -> Vec<Complex64> {
    let mut data = psi.amplitudes().to_vec();
    fourier.forward(&mut data);
    for (z, k) in data.iter_mut().zip(k2) {
        *z *= *k;
    }
    fourier.inverse(&mut data);
    data
}

/// `H0 psi = -Δ psi + V psi`.
pub fn apply_h0(v: &RealField, psi: &WaveFunction) -> Result<WaveFunction> {
    v.grid().ensure_same(&psi.grid())?;
    let grid = psi.grid();
    let mut fourier = Fourier::new(grid);
    let mut out = apply_laplacian(psi, &mut fourier, &grid.k_squared());
    for ((o, z), vx) in out.iter_mut().zip(psi.amplitudes()).zip(v.values()) {
        *o += z * vx;
    }
    WaveFunction::new(grid, out)
}

/// Outcome of one dimension-indexed condition of the decay assumption.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionStatus {
    Satisfied,
    NotSatisfied,
    Unchecked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCondition {
    pub dim: usize,
    pub statement: String,
    pub status: ConditionStatus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayKind {
    Exponential,
    Gaussian,
    CompactSupport,
    Identically0,
}

/// Symbolic decay classification of an analytic potential family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub family: String,
    pub dim: usize,
    pub kind: DecayKind,
    /// All four conditions, one per dimension class.
    pub conditions: Vec<DecayCondition>,
    /// Status of the condition that applies to `dim`.
    pub applicable: ConditionStatus,
    /// Absence of a zero-energy eigenvalue or resonance is never verified.
    pub zero_energy: ConditionStatus,
    pub notes: Vec<String>,
}

pub fn check_decay_class(spec: &PotentialSpec, dim: usize) -> Result<DecayReport> {
    let (family, kind) = match spec {
        PotentialSpec::PoschlTeller { .. } if dim != 1 => {
            return Err(Error::Unsupported(
                "the Pöschl-Teller family is one-dimensional".into(),
            ))
        }
        PotentialSpec::PoschlTeller { .. } => ("poschl_teller", DecayKind::Exponential),
        PotentialSpec::GaussianWell { .. } => ("gaussian_well", DecayKind::Gaussian),
        PotentialSpec::CompactBump { .. } => ("compact_bump", DecayKind::CompactSupport),
        PotentialSpec::Zero => ("zero", DecayKind::Identically0),
        PotentialSpec::Tabulated { .. } => {
            return Err(Error::Unsupported(
                "decay class of tabulated potentials cannot be derived symbolically".into(),
            ))
        }
    };
    if dim == 0 {
        return Err(Error::Domain("dimension must be positive".into()));
    }

    // Every shipped family is bounded and decays at least exponentially, which
    // dominates any polynomial weight, so the N = 1, 2, 3 conditions all hold.
    let conditions = vec![
        DecayCondition {
            dim: 1,
            statement: "(1+|x|)V ∈ L¹(ℝ)".into(),
            status: ConditionStatus::Satisfied,
        },
        DecayCondition {
            dim: 2,
            statement: "|V(x)| ≤ C(1+|x|)^{-3-ε}".into(),
            status: ConditionStatus::Satisfied,
        },
        DecayCondition {
            dim: 3,
            statement: "V ∈ L^{3/2-ε}(ℝ³) ∩ L^{3/2+ε}(ℝ³)".into(),
            status: ConditionStatus::Satisfied,
        },
        DecayCondition {
            dim: 4,
            statement: "V̂ ∈ L¹ and (1+|x|²)^{γ/2}V bounded on H^ν (N ≥ 4)".into(),
            status: ConditionStatus::Unchecked,
        },
    ];
    let applicable = conditions[dim.min(4) - 1].status;

    let mut notes = Vec::new();
    if let PotentialSpec::PoschlTeller { strength } = spec {
        if strength.fract() == 0.0 && *strength > 0.0 {
            notes.push(
                "integer Pöschl-Teller strength is reflectionless with a threshold state at zero energy"
                    .into(),
            );
        }
    }

    Ok(DecayReport {
        family: family.into(),
        dim,
        kind,
        conditions,
        applicable,
        zero_energy: ConditionStatus::Unchecked,
        notes,
    })
}
