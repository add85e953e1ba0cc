//! Strang split-step propagation of `i ∂t ψ = (-Δ + V - u μ) ψ`, with an
//! optional absorbing boundary mask and dispersive-decay probes.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::Fourier;
use crate::grid::{Grid, WaveFunction};
use crate::hamiltonian::RealField;
use crate::spectrum::{project_ac, SpectralData};

/// Boundary absorber.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AbsorberSpec {
    #[default]
    None,
    /// Multiplier `exp(-strength * dt * ramp)` applied after every step, where
    /// `ramp` rises as `(1 - cos(π s)) / 2` across the outer `width * L` of each
    /// half-axis and is zero inside.
    Mask {
        #[serde(default = "default_width")]
        width: f64,
        #[serde(default = "default_strength")]
        strength: f64,
    },
}

fn default_width() -> f64 {
    crate::defaults::ABSORBER_WIDTH
}

fn default_strength() -> f64 {
    crate::defaults::ABSORBER_STRENGTH
}

impl AbsorberSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AbsorberSpec::None => Ok(()),
            AbsorberSpec::Mask { width, strength } => {
                if !(width > 0.0 && width <= 0.25) {
                    return Err(Error::Config(format!(
                        "absorber width must lie in (0, 0.25], got {width}"
                    )));
                }
                if !(strength >= 0.0 && strength.is_finite()) {
                    return Err(Error::Config(format!(
                        "absorber strength must be >= 0, got {strength}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Per-step mask values, or `None` when there is no absorber.
    pub fn mask(&self, grid: Grid, dt: f64) -> Option<Vec<f64>> {
        match *self {
            AbsorberSpec::None => None,
            AbsorberSpec::Mask { width, strength } => {
                let l = grid.half_extent();
                let inner = (1.0 - width) * l;
                let thickness = width * l;
                Some(grid.map_nodes(|x| {
                    let ramp: f64 = x
                        .iter()
                        .map(|xi| {
                            let s = ((xi.abs() - inner) / thickness).clamp(0.0, 1.0);
                            0.5 * (1.0 - (PI * s).cos())
                        })
                        .sum();
                    (-strength * dt * ramp).exp()
                }))
            }
        }
    }
}

/// Time step and absorber; the scheme is always second-order Strang.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagatorConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub absorber: AbsorberSpec,
}

fn default_dt() -> f64 {
    crate::defaults::DT
}

impl PropagatorConfig {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            absorber: AbsorberSpec::None,
        }
    }

    pub fn with_absorber(mut self, absorber: AbsorberSpec) -> Self {
        self.absorber = absorber;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        self.absorber.validate()
    }
}

/// Per-trajectory propagation workspace.
///
/// Owns the FFT plans, the kinetic half-step phases, the sampled `V` and `μ`,
/// and the running total of probability removed by the absorber.
#[derive(Debug)]
pub struct Propagator {
    grid: Grid,
    cfg: PropagatorConfig,
    fourier: Fourier,
    k2: Vec<f64>,
    half_kinetic: Vec<Complex64>,
    v: Vec<f64>,
    mu: Vec<f64>,
    mask: Option<Vec<f64>>,
    absorbed: f64,
    steps: usize,
}

impl Propagator {
    pub fn new(v: &RealField, mu: &RealField, cfg: PropagatorConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = v.grid();
        grid.ensure_same(&mu.grid())?;
        let k2 = grid.k_squared();
        let half_kinetic = k2
            .iter()
            .map(|k| Complex64::new(0.0, -0.5 * cfg.dt * k).exp())
            .collect();
        Ok(Self {
            grid,
            cfg,
            fourier: Fourier::new(grid),
            k2,
            half_kinetic,
            v: v.values().to_vec(),
            mu: mu.values().to_vec(),
            mask: cfg.absorber.mask(grid, cfg.dt),
            absorbed: 0.0,
            steps: 0,
        })
    }

    pub fn config(&self) -> PropagatorConfig {
        self.cfg
    }

    pub fn dt(&self) -> f64 {
        self.cfg.dt
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Probability removed by the absorber so far.
    pub fn absorbed_mass(&self) -> f64 {
        self.absorbed
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    fn kinetic_half(&mut self, data: &mut [Complex64], backward: bool) {
        self.fourier.forward(data);
        if backward {
            for (z, p) in data.iter_mut().zip(&self.half_kinetic) {
                *z *= p.conj();
            }
        } else {
            for (z, p) in data.iter_mut().zip(&self.half_kinetic) {
                *z *= p;
            }
        }
        self.fourier.inverse(data);
    }

    fn advance(&mut self, psi: &mut WaveFunction, u: f64, backward: bool) -> Result<()> {
        psi.grid().ensure_same(&self.grid)?;
        if !u.is_finite() {
            return Err(Error::NumericalBlowUp {
                step: self.steps,
                t: self.steps as f64 * self.cfg.dt,
            });
        }
        let signed_dt = if backward { -self.cfg.dt } else { self.cfg.dt };
        let data = psi.amplitudes_mut();
        self.kinetic_half(data, backward);
        for ((z, v), m) in data.iter_mut().zip(&self.v).zip(&self.mu) {
            let (s, c) = (-signed_dt * (v - u * m)).sin_cos();
            *z *= Complex64::new(c, s);
        }
        self.kinetic_half(data, backward);

        if let (Some(mask), false) = (&self.mask, backward) {
            let h = self.grid.cell_volume();
            let mut removed = 0.0;
            for (z, m) in data.iter_mut().zip(mask) {
                let before = z.norm_sqr();
                *z *= *m;
                removed += before - z.norm_sqr();
            }
            self.absorbed += removed * h;
        }

        self.steps += 1;
        if !data.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::NumericalBlowUp {
                step: self.steps,
                t: self.steps as f64 * self.cfg.dt,
            });
        }
        Ok(())
    }

    /// One Strang step with the control `u` held constant, in place.
    pub fn step_in_place(&mut self, psi: &mut WaveFunction, u: f64) -> Result<()> {
        self.advance(psi, u, false)
    }

    /// One Strang step with the control `u` held constant.
    pub fn step(&mut self, psi: &WaveFunction, u: f64) -> Result<WaveFunction> {
        let mut out = psi.clone();
        self.advance(&mut out, u, false)?;
        Ok(out)
    }

    /// The exact inverse of [`Propagator::step`] (step with `-dt`). Not
    /// available with an absorber, which is not invertible.
    pub fn step_backward(&mut self, psi: &WaveFunction, u: f64) -> Result<WaveFunction> {
        if self.mask.is_some() {
            return Err(Error::Unsupported(
                "backward stepping is undefined with an absorber".into(),
            ));
        }
        let mut out = psi.clone();
        self.advance(&mut out, u, true)?;
        Ok(out)
    }

    /// Fourier-space mass fraction carried by modes with `|k| > k`.
    pub fn spectral_tail(&mut self, psi: &WaveFunction, k: f64) -> f64 {
        let mut data = psi.amplitudes().to_vec();
        self.fourier.forward(&mut data);
        let total: f64 = data.iter().map(|z| z.norm_sqr()).sum();
        let tail: f64 = data
            .iter()
            .zip(&self.k2)
            .filter(|(_, k2)| **k2 > k * k)
            .map(|(z, _)| z.norm_sqr())
            .sum();
        if total > 0.0 {
            tail / total
        } else {
            0.0
        }
    }

    /// Smallest `|k|` such that modes beyond it carry at most `fraction` of
    /// the Fourier mass of `psi`.
    pub fn significant_wavenumber(&mut self, psi: &WaveFunction, fraction: f64) -> f64 {
        let mut data = psi.amplitudes().to_vec();
        self.fourier.forward(&mut data);
        let mut modes: Vec<(f64, f64)> = data
            .iter()
            .zip(&self.k2)
            .map(|(z, k2)| (k2.sqrt(), z.norm_sqr()))
            .collect();
        let total: f64 = modes.iter().map(|m| m.1).sum();
        if total == 0.0 {
            return 0.0;
        }
        modes.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut tail = 0.0;
        for (k, w) in modes {
            tail += w;
            if tail > fraction * total {
                return k;
            }
        }
        0.0
    }
}

/// Number of steps and exact step length used to cover `t` with steps no
/// longer than `dt`.
fn partition(t: f64, dt: f64) -> (usize, f64) {
    let n = (t / dt - 1e-9).ceil().max(0.0) as usize;
    if n == 0 {
        (0, dt)
    } else {
        (n, t / n as f64)
    }
}

/// Free evolution `S(t) psi` with `u = 0`. When `t` is a multiple of `dt` the
/// steps are exactly those of the configured propagator, so
/// `evolve_free(t1 + t2) = evolve_free(t2) ∘ evolve_free(t1)`.
pub fn evolve_free(
    psi: &WaveFunction,
    t: f64,
    v: &RealField,
    cfg: &PropagatorConfig,
) -> Result<WaveFunction> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!(
            "evolution time must be >= 0, got {t}"
        )));
    }
    let (steps, dt) = partition(t, cfg.dt);
    let mut out = psi.clone();
    if steps == 0 {
        return Ok(out);
    }
    let zero = RealField::zeros(v.grid());
    let mut prop = Propagator::new(v, &zero, PropagatorConfig { dt, ..*cfg })?;
    for _ in 0..steps {
        prop.step_in_place(&mut out, 0.0)?;
    }
    Ok(out)
}

/// Least-squares power-law fit of `||S(t) P_ac psi0||_inf` against `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
    pub times: Vec<f64>,
    pub sup_norms: Vec<f64>,
    /// Last time before the fastest significant component can wrap around.
    pub window_end: f64,
    pub significant_wavenumber: f64,
    pub contamination_warning: Option<String>,
}

/// Mode mass fraction beyond the significant wavenumber.
pub const SIGNIFICANT_TAIL: f64 = 1e-6;

pub fn dispersion_probe(
    v: &RealField,
    psi0: &WaveFunction,
    sd: Option<&SpectralData>,
    times: &[f64],
    cfg: &PropagatorConfig,
) -> Result<DecayFit> {
    if times.len() < 2 {
        return Err(Error::Domain("need at least two probe times".into()));
    }
    if times[0] <= 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain(
            "probe times must be positive and strictly increasing".into(),
        ));
    }
    let mut psi = match sd {
        Some(sd) if !sd.is_empty() => project_ac(sd, psi0)?,
        _ => psi0.clone(),
    };

    let zero = RealField::zeros(v.grid());
    let mut probe = Propagator::new(&zero, &zero, PropagatorConfig::new(cfg.dt))?;
    let k_sig = probe.significant_wavenumber(&psi, SIGNIFICANT_TAIL);
    let window_end = if k_sig > 0.0 {
        v.grid().half_extent() / (2.0 * k_sig)
    } else {
        f64::INFINITY
    };

    let mut sup_norms = Vec::with_capacity(times.len());
    let mut now = 0.0;
    for &t in times {
        psi = evolve_free(&psi, t - now, v, cfg)?;
        now = t;
        sup_norms.push(psi.max_abs());
    }

    let xs: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = sup_norms.iter().map(|s| s.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();

    let last = *times.last().unwrap();
    let contamination_warning = (last >= window_end).then(|| {
        format!(
            "probe time {last} exceeds the pre-boundary window {window_end:.3} (k_sig = {k_sig:.3})"
        )
    });
    if let Some(w) = &contamination_warning {
        log::warn!("{w}");
    }

    Ok(DecayFit {
        slope,
        intercept,
        residual,
        times: times.to_vec(),
        sup_norms,
        window_end,
        significant_wavenumber: k_sig,
        contamination_warning,
    })
}
