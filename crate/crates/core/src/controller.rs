//! Feedback laws built on the bound-state overlaps of the current state.
//!
//! With `i ∂t ψ = (H0 - u μ) ψ` and `<a, b> = ∫ a conj(b)`, every population
//! obeys `d/dt |<ψ, φj>|² = -2 u Im(<μψ, φj><φj, ψ>)`, so the Lyapunov
//! function `V_ε` has `dV_ε/dt = 2 u f(ψ)` with `f` the bracket computed by
//! [`feedback_f`]. The laws below use `u = -(2c)^(1+α) f |f|^α`, which gives
//! `dV_ε/dt = -|u|^r / c` with `r = (2+α)/(1+α)`, and reduces to
//! `u = -2c f` (`dV_ε/dt = -u²/c`) for `α = 0`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{raw_inner, WaveFunction};
use crate::spectrum::SpectralData;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    Feed,
    FeedAlpha,
    FeedSigma,
}

/// Open-loop resonant pulse used to seed population in the target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KickSpec {
    /// Index of the populated state the pulse is resonant with.
    pub source: usize,
    #[serde(default = "default_kick_amplitude")]
    pub amplitude: f64,
    /// Pulse length; defaults to the half Rabi period `π / (A |μ_{k,target}|)`.
    #[serde(default)]
    pub duration: Option<f64>,
}

fn default_kick_amplitude() -> f64 {
    crate::defaults::KICK_AMPLITUDE
}

fn default_mode() -> FeedbackMode {
    FeedbackMode::Feed
}

fn default_eps() -> f64 {
    crate::defaults::EPS
}

fn default_gain() -> f64 {
    crate::defaults::GAIN
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    #[serde(default = "default_mode")]
    pub mode: FeedbackMode,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Gain `c > 0`.
    #[serde(default = "default_gain")]
    pub gain: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub target: usize,
    #[serde(default)]
    pub kick: Option<KickSpec>,
}

impl ControllerConfig {
    pub fn feed(eps: f64, gain: f64) -> Self {
        Self {
            mode: FeedbackMode::Feed,
            eps,
            gain,
            alpha: 0.0,
            sigma: 0.0,
            target: 0,
            kick: None,
        }
    }

    pub fn feed_alpha(eps: f64, gain: f64, alpha: f64) -> Self {
        Self {
            mode: FeedbackMode::FeedAlpha,
            alpha,
            ..Self::feed(eps, gain)
        }
    }

    pub fn feed_sigma(eps: f64, gain: f64, sigma: f64) -> Self {
        Self {
            mode: FeedbackMode::FeedSigma,
            sigma,
            ..Self::feed(eps, gain)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::Config(format!(
                "eps must lie in (0, 1), got {}",
                self.eps
            )));
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::Config(format!(
                "gain must be positive, got {}",
                self.gain
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !self.sigma.is_finite() {
            return Err(Error::Config("sigma must be finite".into()));
        }
        if let Some(kick) = &self.kick {
            if let Some(d) = kick.duration {
                if !(d > 0.0) {
                    return Err(Error::Config(format!(
                        "kick duration must be positive, got {d}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Effective `α` of the active law (zero except for feed_alpha).
    pub fn effective_alpha(&self) -> f64 {
        match self.mode {
            FeedbackMode::FeedAlpha => self.alpha,
            _ => 0.0,
        }
    }

    /// Exponent `r = (2+α)/(1+α)` in `dV/dt = -|u|^r / c`.
    pub fn dissipation_exponent(&self) -> f64 {
        let a = self.effective_alpha();
        (2.0 + a) / (1.0 + a)
    }

    /// Lyapunov weight actually used by the law (`ε/2` for feed_sigma).
    pub fn lyapunov_eps(&self) -> f64 {
        match self.mode {
            FeedbackMode::FeedSigma => 0.5 * self.eps,
            _ => self.eps,
        }
    }

    /// Constant control offset (`-σ` for feed_sigma).
    pub fn offset(&self) -> f64 {
        match self.mode {
            FeedbackMode::FeedSigma => -self.sigma,
            _ => 0.0,
        }
    }
}

/// Overlaps `<ψ, φj>` and `<μψ, φj>` for every bound state.
#[derive(Clone, Debug, PartialEq)]
pub struct Overlaps {
    pub state: Vec<Complex64>,
    pub dipole: Vec<Complex64>,
}

impl Overlaps {
    pub fn compute(sd: &SpectralData, psi: &WaveFunction) -> Result<Self> {
        let h = psi.grid().cell_volume();
        let mut state = Vec::with_capacity(sd.len());
        let mut dipole = Vec::with_capacity(sd.len());
        for (phi, mphi) in sd.eigenfunctions().iter().zip(sd.mu_phi()) {
            psi.grid().ensure_same(&phi.grid())?;
            state.push(raw_inner(psi.amplitudes(), phi.amplitudes()) * h);
            // μ is real, so <μψ, φ> = <ψ, μφ>.
            dipole.push(raw_inner(psi.amplitudes(), mphi.amplitudes()) * h);
        }
        Ok(Self { state, dipole })
    }

    pub fn populations(&self) -> impl Iterator<Item = f64> + '_ {
        self.state.iter().map(|z| z.norm_sqr())
    }

    /// `w_all Σj Im(<μψ,φj><φj,ψ>) + w_target Im(<μψ,φt><φt,ψ>)`.
    pub fn bracket(&self, weight_all: f64, weight_target: f64, target: usize) -> f64 {
        let term = |j: usize| (self.dipole[j] * self.state[j].conj()).im;
        let sum: f64 = (0..self.state.len()).map(term).sum();
        weight_all * sum + weight_target * term(target)
    }
}

/// The gain law `u = -(2c)^(1+α) f |f|^α`.
pub fn gain_law(f: f64, gain: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        -2.0 * gain * f
    } else {
        -(2.0 * gain).powf(1.0 + alpha) * f * f.abs().powf(alpha)
    }
}

/// Control value of `cfg`'s law from precomputed overlaps. For feed_sigma the
/// overlaps must be taken against the spectrum of `H0 + σ μ`.
pub fn control_from_overlaps(cfg: &ControllerConfig, ov: &Overlaps) -> f64 {
    let eps = cfg.lyapunov_eps();
    let f = ov.bracket(1.0 - eps, eps, cfg.target);
    cfg.offset() + gain_law(f, cfg.gain, cfg.effective_alpha())
}

/// The bracket `f(ψ) = (1-ε) Σj Im(<μψ,φj><φj,ψ>) + ε Im(<μψ,φt><φt,ψ>)`.
/// The dipole field is the one `sd` was built with.
pub fn feedback_f(psi: &WaveFunction, sd: &SpectralData, eps: f64, target: usize) -> Result<f64> {
    sd.check_index(target)?;
    let ov = Overlaps::compute(sd, psi)?;
    Ok(ov.bracket(1.0 - eps, eps, target))
}

/// Feedback `u_ε = -2c f(ψ)`.
pub fn feedback_u(psi: &WaveFunction, sd: &SpectralData, cfg: &ControllerConfig) -> Result<f64> {
    let f = feedback_f(psi, sd, cfg.eps, cfg.target)?;
    Ok(gain_law(f, cfg.gain, 0.0))
}

/// Feedback `u_{ε,α} = -(2c)^(1+α) f |f|^α`.
pub fn feedback_u_alpha(
    psi: &WaveFunction,
    sd: &SpectralData,
    cfg: &ControllerConfig,
) -> Result<f64> {
    let f = feedback_f(psi, sd, cfg.eps, cfg.target)?;
    Ok(gain_law(f, cfg.gain, cfg.alpha))
}

/// Offset feedback `u = -σ + v` where `v` is the `ε/2` law on the spectrum of
/// `H_σ = H0 + σ μ`.
pub fn feedback_u_sigma(
    psi: &WaveFunction,
    sd_sigma: &SpectralData,
    cfg: &ControllerConfig,
) -> Result<f64> {
    if sd_sigma.is_empty() {
        return Err(Error::Precondition(
            "perturbed Hamiltonian has no bound states".into(),
        ));
    }
    let f = feedback_f(psi, sd_sigma, 0.5 * cfg.eps, cfg.target)?;
    Ok(-cfg.sigma + gain_law(f, cfg.gain, 0.0))
}

/// Largest gain with `c (M + 2) ||μ||_inf dt <= budget`.
pub fn max_gain(bound_states: usize, mu_sup: f64, dt: f64, budget: f64) -> f64 {
    budget / ((bound_states + 1) as f64 * mu_sup * dt)
}

/// `u(t) = A cos((λk - λt) t)` on `[0, duration]`, zero afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KickSignal {
    pub amplitude: f64,
    pub frequency: f64,
    pub duration: f64,
}

impl KickSignal {
    pub fn value(&self, t: f64) -> f64 {
        if (0.0..=self.duration).contains(&t) {
            self.amplitude * (self.frequency * t).cos()
        } else {
            0.0
        }
    }
}

pub fn resonant_kick_signal(
    sd: &SpectralData,
    kick: &KickSpec,
    target: usize,
) -> Result<KickSignal> {
    sd.check_index(target)?;
    sd.check_index(kick.source)?;
    if kick.source == target {
        return Err(Error::Domain(
            "kick source equals target: zero transition frequency".into(),
        ));
    }
    let frequency = sd.eigenvalues()[kick.source] - sd.eigenvalues()[target];
    let duration = match kick.duration {
        Some(d) if d > 0.0 => d,
        Some(d) => {
            return Err(Error::Domain(format!(
                "kick duration must be positive, got {d}"
            )))
        }
        None => {
            let coupling = sd.mu_matrix()[kick.source][target].norm();
            if kick.amplitude == 0.0 || coupling == 0.0 {
                return Err(Error::Domain(
                    "default kick duration needs nonzero amplitude and coupling".into(),
                ));
            }
            std::f64::consts::PI / (kick.amplitude.abs() * coupling)
        }
    };
    Ok(KickSignal {
        amplitude: kick.amplitude,
        frequency,
        duration,
    })
}

/// Exponent choice for feed_alpha from the dipole integrability `μ ∈ L^p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaChoice {
    pub alpha: f64,
    /// `(2 + α) / (1 + α)`.
    pub control_exponent: f64,
    /// `p / (p - N) - ϖ`; equal to `control_exponent`.
    pub target_exponent: f64,
}

/// `α = (p - 2N + ϖ(p - N)) / (N - ϖ(p - N))`, requiring `p >= 2N`, `ϖ > 0`
/// and a positive denominator (equivalently `ϖ < N / (p - N)`).
pub fn alpha_from_dispersion(p: f64, dim: usize, varpi: f64) -> Result<AlphaChoice> {
    let n = dim as f64;
    if dim == 0 || !(p >= 2.0 * n) {
        return Err(Error::Domain(format!(
            "need p >= 2N, got p = {p}, N = {dim}"
        )));
    }
    if !(varpi > 0.0) {
        return Err(Error::Domain(format!(
            "varpi must be positive, got {varpi}"
        )));
    }
    let denominator = n - varpi * (p - n);
    if !(denominator > 0.0) {
        return Err(Error::Domain(format!(
            "varpi = {varpi} must stay below N/(p-N) = {}",
            n / (p - n)
        )));
    }
    let alpha = (p - 2.0 * n + varpi * (p - n)) / denominator;
    Ok(AlphaChoice {
        alpha,
        control_exponent: (2.0 + alpha) / (1.0 + alpha),
        target_exponent: p / (p - n) - varpi,
    })
}
