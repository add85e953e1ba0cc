//! Lyapunov function, trajectory records, and the dissipation checks read by
//! the acceptance tests.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::controller::{control_from_overlaps, ControllerConfig, Overlaps};
use crate::error::{Error, Result};
use crate::grid::WaveFunction;
use crate::spectrum::SpectralData;

/// `V_ε = 1 - (1-ε) Σj pj - ε p_target` from populations.
pub fn lyapunov_from_populations(populations: &[f64], eps: f64, target: usize) -> f64 {
    let total: f64 = populations.iter().sum();
    1.0 - (1.0 - eps) * total - eps * populations[target]
}

pub fn lyapunov(psi: &WaveFunction, sd: &SpectralData, eps: f64, target: usize) -> Result<f64> {
    sd.check_index(target)?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("eps must lie in (0, 1), got {eps}")));
    }
    Ok(lyapunov_from_populations(
        &sd.populations(psi)?,
        eps,
        target,
    ))
}

/// Margin below `ε` that [`initial_bound_check`] requires, so that states
/// sitting on the boundary `V_ε = ε` are not accepted through rounding.
pub const INITIAL_BOUND_MARGIN: f64 = 1e-12;

/// `V_ε(ψ0) < ε`, the condition under which the discrete population stays
/// above `1 - ε` along a dissipative closed loop.
pub fn initial_bound_check(
    psi0: &WaveFunction,
    sd: &SpectralData,
    eps: f64,
    target: usize,
) -> Result<bool> {
    Ok(lyapunov(psi0, sd, eps, target)? < eps - INITIAL_BOUND_MARGIN)
}

/// One row of a [`TrajectoryRecord`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub lyapunov: f64,
    pub populations: Vec<f64>,
    pub target_population: f64,
    pub u: f64,
    pub int_u2: f64,
    pub int_u_r: f64,
    pub continuum_mass: f64,
    pub absorbed_mass: f64,
    pub norm: f64,
}

/// Time series of a closed- or open-loop run, one row per step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// Exponent `r` of the `∫|u|^r` accumulator.
    pub energy_exponent: f64,
    /// First row produced by feedback; earlier rows belong to a kick.
    #[serde(default)]
    pub feedback_from: usize,
    pub rows: Vec<Sample>,
}

impl TrajectoryRecord {
    pub fn new(energy_exponent: f64) -> Self {
        Self {
            energy_exponent,
            feedback_from: 0,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&Sample> {
        self.rows.last()
    }

    /// Appends a row, filling the cumulative control energies by the
    /// trapezoidal rule. Times must increase strictly.
    pub fn push(&mut self, mut row: Sample) -> Result<()> {
        let r = self.energy_exponent;
        match self.rows.last() {
            None => {
                row.int_u2 = 0.0;
                row.int_u_r = 0.0;
            }
            Some(prev) => {
                if !(row.t > prev.t) {
                    return Err(Error::Sampling(format!(
                        "sample time {} does not follow {}",
                        row.t, prev.t
                    )));
                }
                let h = row.t - prev.t;
                row.int_u2 = prev.int_u2 + 0.5 * h * (prev.u * prev.u + row.u * row.u);
                row.int_u_r = prev.int_u_r + 0.5 * h * (prev.u.abs().powf(r) + row.u.abs().powf(r));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    /// Largest single-step increase of the Lyapunov function.
    pub fn max_lyapunov_increase(&self) -> f64 {
        self.rows
            .windows(2)
            .map(|w| w[1].lyapunov - w[0].lyapunov)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Minimum target population over rows with `t >= from`.
    pub fn min_target_population_after(&self, from: f64) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.t >= from)
            .map(|r| r.target_population)
            .reduce(f64::min)
    }

    /// Largest `continuum_mass + absorbed_mass` along the run.
    pub fn max_lost_mass(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.continuum_mass + r.absorbed_mass)
            .fold(0.0, f64::max)
    }

    /// Control values, one per row.
    pub fn controls(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.u).collect()
    }

    /// CSV with the fixed column order `t, lyapunov, pop_0 … pop_M,
    /// target_pop, u, int_u2, int_u_r, continuum_mass, absorbed_mass, norm`,
    /// keeping every `every`-th row and always the last one.
    pub fn write_csv(&self, mut out: impl Write, every: usize) -> Result<()> {
        let every = every.max(1);
        let m = self.rows.first().map_or(0, |r| r.populations.len());
        let mut header = vec!["t".to_string(), "lyapunov".to_string()];
        header.extend((0..m).map(|j| format!("pop_{j}")));
        header.extend(
            [
                "target_pop",
                "u",
                "int_u2",
                "int_u_r",
                "continuum_mass",
                "absorbed_mass",
                "norm",
            ]
            .map(String::from),
        );
        writeln!(out, "{}", header.join(","))?;
        let last = self.rows.len().saturating_sub(1);
        for (k, r) in self.rows.iter().enumerate() {
            if k % every != 0 && k != last {
                continue;
            }
            let mut fields = vec![r.t, r.lyapunov];
            fields.extend(&r.populations);
            fields.extend([
                r.target_population,
                r.u,
                r.int_u2,
                r.int_u_r,
                r.continuum_mass,
                r.absorbed_mass,
                r.norm,
            ]);
            let line: Vec<String> = fields.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// What a sample is measured against.
///
/// Populations, the target population and the continuum mass refer to the
/// `reference` spectrum (the unperturbed `H0`). The Lyapunov value and the
/// feedback refer to `control`, which differs from `reference` only for the
/// sigma-offset law.
#[derive(Clone, Copy, Debug)]
pub struct SampleContext<'a> {
    pub reference: &'a SpectralData,
    pub control: &'a SpectralData,
    pub cfg: &'a ControllerConfig,
    pub reference_target: usize,
}

impl<'a> SampleContext<'a> {
    pub fn new(sd: &'a SpectralData, cfg: &'a ControllerConfig) -> Self {
        Self {
            reference: sd,
            control: sd,
            cfg,
            reference_target: cfg.target,
        }
    }

    /// Evaluates every row field at `psi`. The control is the feedback value
    /// unless `u_override` supplies an open-loop value.
    pub fn sample(
        &self,
        psi: &WaveFunction,
        t: f64,
        absorbed_mass: f64,
        u_override: Option<f64>,
    ) -> Result<Sample> {
        let reference = Overlaps::compute(self.reference, psi)?;
        let populations: Vec<f64> = reference.populations().collect();
        let control_overlaps;
        let control = if std::ptr::eq(self.reference, self.control) {
            &reference
        } else {
            control_overlaps = Overlaps::compute(self.control, psi)?;
            &control_overlaps
        };
        let control_pops: Vec<f64> = control.populations().collect();
        let lyap =
            lyapunov_from_populations(&control_pops, self.cfg.lyapunov_eps(), self.cfg.target);
        let u = match u_override {
            Some(u) => u,
            None => control_from_overlaps(self.cfg, control),
        };
        let norm_sqr = psi.norm_sqr();
        let disc: f64 = populations.iter().sum();
        Ok(Sample {
            t,
            lyapunov: lyap,
            target_population: populations[self.reference_target],
            populations,
            u,
            int_u2: 0.0,
            int_u_r: 0.0,
            continuum_mass: norm_sqr - disc,
            absorbed_mass,
            norm: norm_sqr.sqrt(),
        })
    }
}

/// Samples `psi` at time `t`, appends the row and returns the control value.
pub fn record_sample(
    record: &mut TrajectoryRecord,
    ctx: &SampleContext<'_>,
    psi: &WaveFunction,
    t: f64,
    absorbed_mass: f64,
    u_override: Option<f64>,
) -> Result<f64> {
    let row = ctx.sample(psi, t, absorbed_mass, u_override)?;
    let u = row.u;
    record.push(row)?;
    Ok(u)
}

/// Residuals of the discrete dissipation identity along a record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipationReport {
    /// `r` in `dV/dt = -|v|^r / c`.
    pub exponent: f64,
    /// `max_k |(V_{k+1} - V_k)/dt + |v_k|^r / c|`.
    pub max_pointwise_residual: f64,
    /// `∫ |v|^r dt` (trapezoidal).
    pub control_energy: f64,
    /// `c (V(0) - V(T))`.
    pub lyapunov_drop: f64,
    /// `|control_energy - lyapunov_drop|`.
    pub energy_identity_residual: f64,
    /// Residual relative to `lyapunov_drop` (infinite if the drop is zero).
    pub relative_energy_residual: f64,
    pub max_lyapunov_increase: f64,
}

/// Checks `dV/dt = -|v|^r / c` step by step over the feedback rows, where
/// `v = u - offset` is the feedback part of the control. Requires one row
/// per step of length `dt`.
pub fn verify_dissipation(
    record: &TrajectoryRecord,
    cfg: &ControllerConfig,
    dt: f64,
) -> Result<DissipationReport> {
    let rows = &record.rows[record.feedback_from.min(record.len())..];
    if rows.len() < 2 {
        return Err(Error::Sampling("need at least two feedback samples".into()));
    }
    for w in rows.windows(2) {
        let h = w[1].t - w[0].t;
        if (h - dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::Sampling(format!(
                "gap of {h} between samples at t = {}; expected {dt}",
                w[0].t
            )));
        }
    }
    let r = cfg.dissipation_exponent();
    let c = cfg.gain;
    let offset = cfg.offset();
    let feedback = |u: f64| (u - offset).abs().powf(r);

    let mut max_res: f64 = 0.0;
    for w in rows.windows(2) {
        let rate = (w[1].lyapunov - w[0].lyapunov) / dt;
        max_res = max_res.max((rate + feedback(w[0].u) / c).abs());
    }
    let mut energy = 0.0;
    for w in rows.windows(2) {
        energy += 0.5 * dt * (feedback(w[0].u) + feedback(w[1].u));
    }
    let first = &rows[0];
    let last = &rows[rows.len() - 1];
    let drop = c * (first.lyapunov - last.lyapunov);
    let residual = (energy - drop).abs();
    let relative = if drop != 0.0 {
        residual / drop.abs()
    } else if residual == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(DissipationReport {
        exponent: r,
        max_pointwise_residual: max_res,
        control_energy: energy,
        lyapunov_drop: drop,
        energy_identity_residual: residual,
        relative_energy_residual: relative,
        max_lyapunov_increase: rows
            .windows(2)
            .map(|w| w[1].lyapunov - w[0].lyapunov)
            .fold(f64::NEG_INFINITY, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::hamiltonian::{DipoleSpec, PotentialSpec};
    use crate::spectrum::{project_disc, solve_bound_states};
    use num_complex::Complex64;
    use std::sync::OnceLock;

    fn two_level() -> &'static SpectralData {
        static CELL: OnceLock<SpectralData> = OnceLock::new();
        CELL.get_or_init(|| {
            let grid = Grid::new(1, 512, 20.0).unwrap();
            let v = PotentialSpec::PoschlTeller { strength: 2.0 }
                .sample(grid)
                .unwrap();
            let mu = DipoleSpec::GaussianDipole {
                amplitude: 1.0,
                width: 2.0,
            }
            .sample(grid)
            .unwrap();
            solve_bound_states(&v, &mu, None).unwrap()
        })
    }

    fn mix(c0: f64, c1: f64) -> WaveFunction {
        let sd = two_level();
        let phi = sd.eigenfunctions();
        phi[0]
            .scaled(Complex64::new(c0, 0.0))
            .axpy(Complex64::new(c1, 0.0), &phi[1])
            .unwrap()
    }

    #[test]
    fn lyapunov_examples() {
        let sd = two_level();
        let eps = 0.1;
        assert!(lyapunov(&sd.eigenfunctions()[0], sd, eps, 0).unwrap().abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v = lyapunov(&mix(h, h), sd, eps, 0).unwrap();
        assert!((v - eps / 2.0).abs() < 1e-12);

        // far-away packet with its bound-state part removed
        let grid = sd.grid().unwrap();
        let far = WaveFunction::from_fn(grid, |x| {
            Complex64::new((-(x[0] - 10.0).powi(2)).exp(), 0.0)
        });
        let cont = crate::spectrum::project_ac(sd, &far).unwrap();
        let cont = crate::grid::normalize(&cont).unwrap();
        assert!((lyapunov(&cont, sd, eps, 0).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn initial_bound_examples() {
        let sd = two_level();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(initial_bound_check(&mix(h, h), sd, 0.1, 0).unwrap());
        assert!(!initial_bound_check(&sd.eigenfunctions()[1], sd, 0.1, 0).unwrap());

        let grid = sd.grid().unwrap();
        let far = WaveFunction::from_fn(grid, |x| {
            Complex64::new((-(x[0] - 10.0).powi(2)).exp(), 0.0)
        });
        let cont = crate::grid::normalize(&crate::spectrum::project_ac(sd, &far).unwrap()).unwrap();
        let half = mix(h, 0.0).axpy(Complex64::new(h, 0.0), &cont).unwrap();
        assert!((half.norm() - 1.0).abs() < 1e-10);
        assert!(!initial_bound_check(&half, sd, 0.3, 0).unwrap());
    }

    #[test]
    fn lyapunov_is_phase_invariant_and_depends_on_disc_part_only() {
        let sd = two_level();
        let grid = sd.grid().unwrap();
        let psi = WaveFunction::from_fn(grid, |x| {
            Complex64::new((-(x[0] - 1.0).powi(2)).exp(), 0.3 * (-x[0] * x[0]).exp())
        });
        let psi = crate::grid::normalize(&psi).unwrap();
        let a = lyapunov(&psi, sd, 0.2, 0).unwrap();
        let b = lyapunov(&psi.scaled(Complex64::from_polar(1.0, 1.234)), sd, 0.2, 0).unwrap();
        assert!((a - b).abs() < 1e-15);
        let disc = project_disc(sd, &psi).unwrap();
        let pops = sd.populations(&disc).unwrap();
        assert!((a - lyapunov_from_populations(&pops, 0.2, 0)).abs() < 1e-12);
    }

    #[test]
    fn record_rows_and_trapezoid() {
        let sd = two_level();
        let cfg = ControllerConfig::feed(0.1, 1.0);
        let ctx = SampleContext::new(sd, &cfg);
        let mut rec = TrajectoryRecord::new(cfg.dissipation_exponent());
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let psi = mix(h, h);
        let us = [0.3, -0.2, 0.5, 0.0, 0.1];
        for (k, u) in us.iter().enumerate() {
            record_sample(&mut rec, &ctx, &psi, 0.01 * k as f64, 0.0, Some(*u)).unwrap();
        }
        let row = &rec.rows[0];
        assert!(row.continuum_mass.abs() <= 1e-10);
        assert!((row.norm - crate::grid::lp_norm(&psi, 2.0).unwrap()).abs() < 1e-14);
        let pops: f64 = row.populations.iter().sum();
        assert!((pops + row.continuum_mass - row.norm * row.norm).abs() < 1e-8);

        // independent trapezoid over the logged controls
        let mut oracle = 0.0;
        for w in us.windows(2) {
            oracle += 0.01 * (w[0] * w[0] + w[1] * w[1]) / 2.0;
        }
        assert!((rec.last().unwrap().int_u2 - oracle).abs() < 1e-12);
        for w in rec.rows.windows(2) {
            assert!(w[1].int_u2 >= w[0].int_u2);
        }
        assert!(record_sample(&mut rec, &ctx, &psi, 0.0, 0.0, None).is_err());
    }

    #[test]
    fn csv_column_order() {
        let sd = two_level();
        let cfg = ControllerConfig::feed(0.1, 1.0);
        let ctx = SampleContext::new(sd, &cfg);
        let mut rec = TrajectoryRecord::new(2.0);
        for k in 0..5 {
            record_sample(&mut rec, &ctx, &sd.eigenfunctions()[0], k as f64, 0.0, None).unwrap();
        }
        let mut out = Vec::new();
        rec.write_csv(&mut out, 2).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,lyapunov,pop_0,pop_1,target_pop,u,int_u2,int_u_r,continuum_mass,absorbed_mass,norm"
        );
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn constant_record_has_zero_residuals() {
        let sd = two_level();
        let cfg = ControllerConfig::feed(0.1, 1.0);
        let ctx = SampleContext::new(sd, &cfg);
        let mut rec = TrajectoryRecord::new(2.0);
        for k in 0..10 {
            record_sample(
                &mut rec,
                &ctx,
                &sd.eigenfunctions()[1],
                0.1 * k as f64,
                0.0,
                None,
            )
            .unwrap();
        }
        let rep = verify_dissipation(&rec, &cfg, 0.1).unwrap();
        assert!(rep.max_pointwise_residual <= 1e-10);
        assert!(rep.energy_identity_residual <= 1e-10);
        assert!(verify_dissipation(&rec, &cfg, 0.05).is_err());
    }
}
