//! Closed-loop runs, their on-disk artifacts, signal extraction and replay.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::controller::{resonant_kick_signal, FeedbackMode, KickSignal};
use crate::diagnostics::{
    initial_bound_check, verify_dissipation, DissipationReport, SampleContext, TrajectoryRecord,
};
use crate::error::{Error, Result};
use crate::experiment::config::ExperimentConfig;
use crate::experiment::simulate::{run_steps, step_count, ControlSource, LoopOutcome};
use crate::grid::{inner_product, WaveFunction};
use crate::hamiltonian::RealField;
use crate::propagator::{dispersion_probe, DecayFit, Propagator};
use crate::relaxation::{
    build_perturbed, default_sigma_grid, log_spaced, scan_sigma, RelaxedRunSettings,
    SigmaScanReport,
};
use crate::spectrum::{check_assumptions, solve_bound_states, AssumptionReport, SpectralData};

pub const SUMMARY_FILE: &str = "summary.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const CONTROLS_FILE: &str = "controls.bin";
pub const PLOT_FILE: &str = "trajectory.gp";
pub const SIGNAL_FILE: &str = "signal.csv";

/// Sampled fields, spectrum and initial state of a configuration.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub v: RealField,
    pub mu: RealField,
    pub sd: SpectralData,
    pub psi0: WaveFunction,
    pub assumptions: AssumptionReport,
    pub initial_bound_ok: bool,
}

/// Samples the fields, solves the spectrum, builds `ψ0` and checks the
/// stabilization hypotheses. Flags are logged, not enforced.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let v = cfg.potential.sample(cfg.grid)?;
    let mu = cfg.dipole.sample(cfg.grid)?;
    let sd = solve_bound_states(&v, &mu, cfg.run.energy_cut)?;
    let psi0 = cfg.initial_state.build(cfg.grid, &sd, &cfg.base_dir)?;
    let target = cfg.controller.target;
    let assumptions = check_assumptions(&sd, &psi0, target, cfg.controller.eps, cfg.tolerances())?;
    let initial_bound_ok = initial_bound_check(&psi0, &sd, cfg.controller.eps, target)?;
    for (flag, name) in [
        (
            assumptions.a1_ok,
            "A1 (initial state in the bound-state span)",
        ),
        (assumptions.a2_ok, "A2 (initial overlap with the target)"),
        (assumptions.a3_ok, "A3 (distinct transitions)"),
        (assumptions.a4_ok, "A4 (nonzero couplings)"),
    ] {
        if !flag {
            log::warn!("assumption {name} does not hold");
        }
    }
    log::info!("assumptions: {assumptions:?}");
    Ok(Prepared {
        v,
        mu,
        sd,
        psi0,
        assumptions,
        initial_bound_ok,
    })
}

/// Index of the state of `perturbed` that overlaps `reference[index]` most.
pub fn continued_index(
    reference: &SpectralData,
    perturbed: &SpectralData,
    index: usize,
) -> Result<usize> {
    reference.check_index(index)?;
    let phi = &reference.eigenfunctions()[index];
    let mut best = (0, -1.0);
    for (k, f) in perturbed.eigenfunctions().iter().enumerate() {
        let ov = inner_product(f, phi)?.norm();
        if ov > best.1 {
            best = (k, ov);
        }
    }
    Ok(best.0)
}

/// Everything a run reports besides the trajectory itself.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub completed: bool,
    pub success: bool,
    pub abort_reason: Option<String>,
    pub open_loop: bool,
    pub eigenvalues: Vec<f64>,
    pub assumptions: AssumptionReport,
    pub initial_bound_ok: bool,
    pub steps: usize,
    pub dt: f64,
    pub final_time: f64,
    pub final_target_population: f64,
    /// First sample time at which the target population exceeded `1 - ε`.
    pub reached_at: Option<f64>,
    pub plateau_start: f64,
    pub min_plateau_population: Option<f64>,
    pub max_lost_mass: f64,
    pub max_lyapunov_increase: f64,
    pub dissipation: Option<DissipationReport>,
    pub kick: Option<KickSignal>,
    pub wall_time_seconds: f64,
    pub config: ExperimentConfig,
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub record: TrajectoryRecord,
    pub final_state: WaveFunction,
}

fn summarize(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    outcome: LoopOutcome,
    dt: f64,
    kick: Option<KickSignal>,
    open_loop: bool,
    started: Instant,
) -> RunArtifacts {
    let record = outcome.record;
    let eps = cfg.controller.eps;
    let last = record.last();
    let final_time = last.map_or(0.0, |r| r.t);
    let plateau_start = final_time * (1.0 - cfg.run.plateau_fraction);
    let min_plateau_population = record.min_target_population_after(plateau_start);
    let completed = outcome.abort.is_none();
    let dissipation = if open_loop {
        None
    } else {
        verify_dissipation(&record, &cfg.controller, dt).ok()
    };
    let summary = RunSummary {
        completed,
        success: completed && min_plateau_population.is_some_and(|p| p > 1.0 - eps),
        abort_reason: outcome.abort.as_ref().map(ToString::to_string),
        open_loop,
        eigenvalues: prepared.sd.eigenvalues().to_vec(),
        assumptions: prepared.assumptions.clone(),
        initial_bound_ok: prepared.initial_bound_ok,
        steps: record.len().saturating_sub(1),
        dt,
        final_time,
        final_target_population: last.map_or(0.0, |r| r.target_population),
        reached_at: record
            .rows
            .iter()
            .find(|r| r.target_population > 1.0 - eps)
            .map(|r| r.t),
        plateau_start,
        min_plateau_population,
        max_lost_mass: record.max_lost_mass(),
        max_lyapunov_increase: record.max_lyapunov_increase(),
        dissipation,
        kick,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        config: cfg.clone(),
    };
    RunArtifacts {
        summary,
        record,
        final_state: outcome.state,
    }
}

/// Runs the configured closed loop (with its optional kick first).
///
/// For feed_sigma the feedback and the Lyapunov value use the spectrum of
/// `H0 + σ μ`; populations are always reported against `H0`.
pub fn run_closed_loop(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let started = Instant::now();
    let prepared = prepare(cfg)?;
    if !prepared.assumptions.a2_ok && cfg.controller.kick.is_none() {
        log::warn!("initial state has no overlap with the target and no kick is configured");
    }
    let mut controller = cfg.controller;
    let perturbed = match controller.mode {
        FeedbackMode::FeedSigma => {
            let vs = build_perturbed(&prepared.v, &prepared.mu, controller.sigma)?;
            let sd = solve_bound_states(&vs, &prepared.mu, Some(prepared.sd.energy_cut()))?;
            controller.target = continued_index(&prepared.sd, &sd, cfg.controller.target)?;
            Some(sd)
        }
        _ => None,
    };
    let kick = match &cfg.controller.kick {
        Some(k) => Some(resonant_kick_signal(
            &prepared.sd,
            k,
            cfg.controller.target,
        )?),
        None => None,
    };
    let ctx = SampleContext {
        reference: &prepared.sd,
        control: perturbed.as_ref().unwrap_or(&prepared.sd),
        cfg: &controller,
        reference_target: cfg.controller.target,
    };
    let mut prop = Propagator::new(&prepared.v, &prepared.mu, cfg.propagator)?;
    let steps = step_count(cfg.run.horizon, prop.dt())?;
    let outcome = run_steps(
        &mut prop,
        &ctx,
        &prepared.psi0,
        steps,
        ControlSource::Feedback { kick },
    )?;
    Ok(summarize(
        cfg,
        &prepared,
        outcome,
        prop.dt(),
        kick,
        false,
        started,
    ))
}

/// Applies `controls` open loop from the configured initial state.
pub fn replay(cfg: &ExperimentConfig, controls: &[f64]) -> Result<RunArtifacts> {
    if controls.is_empty() {
        return Err(Error::Config("empty control signal".into()));
    }
    let started = Instant::now();
    let prepared = prepare(cfg)?;
    let ctx = SampleContext::new(&prepared.sd, &cfg.controller);
    let mut prop = Propagator::new(&prepared.v, &prepared.mu, cfg.propagator)?;
    let outcome = run_steps(
        &mut prop,
        &ctx,
        &prepared.psi0,
        controls.len() - 1,
        ControlSource::OpenLoop(controls),
    )?;
    Ok(summarize(
        cfg,
        &prepared,
        outcome,
        prop.dt(),
        None,
        true,
        started,
    ))
}

/// Free-evolution decay fit of the configured initial state. With
/// `dispersion.project_continuum` the bound-state part is removed first; a
/// potential without bound states is probed as is.
pub fn run_dispersion_probe(cfg: &ExperimentConfig) -> Result<DecayFit> {
    let v = cfg.potential.sample(cfg.grid)?;
    let mu = cfg.dipole.sample(cfg.grid)?;
    let sd = match solve_bound_states(&v, &mu, cfg.run.energy_cut) {
        Ok(sd) => sd,
        Err(Error::EmptySpectrum { energy_cut }) => {
            SpectralData::from_parts(vec![], vec![], &mu, energy_cut, vec![])?
        }
        Err(e) => return Err(e),
    };
    let psi0 = cfg.initial_state.build(cfg.grid, &sd, &cfg.base_dir)?;
    let basis = cfg.dispersion.project_continuum.then_some(&sd);
    dispersion_probe(&v, &psi0, basis, &cfg.dispersion.times, &cfg.propagator)
}

/// σ values of the configuration: explicit values, else a log-spaced grid
/// whose unset ends and count fall back to the default grid for `mu`.
pub fn sigma_grid(cfg: &ExperimentConfig, mu: &RealField) -> Result<Vec<f64>> {
    let s = &cfg.sigma;
    if !s.values.is_empty() {
        return Ok(s.values.clone());
    }
    let default = default_sigma_grid(mu)?;
    if s.min.is_none() && s.max.is_none() && s.points.is_none() {
        return Ok(default);
    }
    log_spaced(
        s.min.unwrap_or(default[0]),
        s.max.unwrap_or(default[default.len() - 1]),
        s.points.unwrap_or(default.len()),
    )
}

/// Prepares the configuration and scans `H0 + σ μ` over its σ grid.
pub fn run_sigma_scan(cfg: &ExperimentConfig) -> Result<(Prepared, SigmaScanReport)> {
    let prepared = prepare(cfg)?;
    let grid = sigma_grid(cfg, &prepared.mu)?;
    let report = scan_sigma(
        &prepared.v,
        &prepared.mu,
        &grid,
        cfg.tolerances(),
        cfg.controller.eps,
        &prepared.psi0,
        cfg.controller.target,
        cfg.run.energy_cut,
    )?;
    Ok((prepared, report))
}

pub fn relaxed_settings(cfg: &ExperimentConfig) -> RelaxedRunSettings {
    RelaxedRunSettings {
        gain: cfg.controller.gain,
        horizon: cfg.run.horizon,
        propagator: cfg.propagator,
        tail_fraction: cfg.run.plateau_fraction,
    }
}

fn gnuplot_script() -> String {
    format!(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set xlabel 't'\n\
         set multiplot layout 3,1\n\
         plot '{f}' using 1:2 with lines\n\
         plot '{f}' using 1:(column('target_pop')) with lines, '{f}' using 1:(column('continuum_mass')+column('absorbed_mass')) with lines title 'lost mass'\n\
         plot '{f}' using 1:(column('u')) with lines\n\
         unset multiplot\n",
        f = TRAJECTORY_FILE
    )
}

/// Writes `summary.json`, `trajectory.csv` (every `sample_every` steps),
/// `controls.bin` (every step, little-endian f64) and a gnuplot script.
pub fn write_artifacts(art: &RunArtifacts, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let summary = BufWriter::new(File::create(dir.join(SUMMARY_FILE))?);
    serde_json::to_writer_pretty(summary, &art.summary)?;
    let csv = BufWriter::new(File::create(dir.join(TRAJECTORY_FILE))?);
    art.record
        .write_csv(csv, art.summary.config.run.sample_every)?;
    let mut bin = BufWriter::new(File::create(dir.join(CONTROLS_FILE))?);
    for r in &art.record.rows {
        bin.write_all(&r.u.to_le_bytes())?;
    }
    bin.flush()?;
    std::fs::write(dir.join(PLOT_FILE), gnuplot_script())?;
    Ok(())
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let file = File::open(dir.join(SUMMARY_FILE))
        .map_err(|e| Error::IncompleteRun(format!("no run summary in {}: {e}", dir.display())))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Writes `(t, u)` pairs with 17 significant digits.
pub fn write_signal(signal: &[(f64, f64)], mut out: impl Write) -> Result<()> {
    writeln!(out, "t,u")?;
    for (t, u) in signal {
        writeln!(out, "{t:.16e},{u:.16e}")?;
    }
    Ok(())
}

pub fn read_signal(input: impl Read) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if n == 0 {
            if line.trim() != "t,u" {
                return Err(Error::Format(format!("unexpected signal header '{line}'")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parse = |s: Option<&str>| -> Result<f64> {
            s.and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("bad signal line {}: '{line}'", n + 1)))
        };
        let mut fields = line.split(',');
        out.push((parse(fields.next())?, parse(fields.next())?));
    }
    Ok(out)
}

/// Turns a completed run directory into `signal.csv`. Refuses aborted or
/// partial runs.
pub fn extract_open_loop_signal(run_dir: &Path) -> Result<PathBuf> {
    let summary = read_summary(run_dir)?;
    if !summary.completed {
        return Err(Error::IncompleteRun(format!(
            "run in {} did not complete: {}",
            run_dir.display(),
            summary.abort_reason.as_deref().unwrap_or("unknown reason")
        )));
    }
    let mut bytes = Vec::new();
    File::open(run_dir.join(CONTROLS_FILE))?.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * (summary.steps + 1) {
        return Err(Error::IncompleteRun(format!(
            "{} holds {} bytes, expected {}",
            CONTROLS_FILE,
            bytes.len(),
            8 * (summary.steps + 1)
        )));
    }
    let signal: Vec<(f64, f64)> = bytes
        .chunks_exact(8)
        .enumerate()
        .map(|(k, b)| {
            (
                k as f64 * summary.dt,
                f64::from_le_bytes(b.try_into().unwrap()),
            )
        })
        .collect();
    let path = run_dir.join(SIGNAL_FILE);
    write_signal(&signal, BufWriter::new(File::create(&path)?))?;
    Ok(path)
}

/// Control values of a signal, checked against the step `dt`.
pub fn signal_controls(signal: &[(f64, f64)], dt: f64) -> Result<Vec<f64>> {
    for (k, (t, _)) in signal.iter().enumerate() {
        if (t - k as f64 * dt).abs() > 1e-9 * dt.max(1.0) * (k as f64 + 1.0) {
            return Err(Error::Config(format!(
                "signal time {t} at row {k} does not match dt = {dt}"
            )));
        }
    }
    Ok(signal.iter().map(|(_, u)| *u).collect())
}
