//! Command line dispatch for `qstab`. [`run`] takes the full argument vector
//! and returns the process exit status:
//!
//! | status | meaning |
//! |--------|---------|
//! | 0 | success |
//! | 1 | run finished but its criterion was not met |
//! | 2 | usage or configuration error |
//! | 3 | numerical abort |

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use qstab_core::experiment::run::{read_signal, signal_controls, write_artifacts, TRAJECTORY_FILE};
use qstab_core::experiment::{
    extract_open_loop_signal, prepare, relaxed_settings, replay, run_closed_loop,
    run_dispersion_probe, run_sigma_scan, ExperimentConfig,
};
use qstab_core::grid::write_snapshot;
use qstab_core::hamiltonian::check_decay_class;
use qstab_core::relaxation::run_relaxed_control;
use qstab_core::{solve_bound_states, Error, PotentialSpec};
use serde_json::json;

pub const EXIT_OK: i32 = 0;
pub const EXIT_UNMET: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "qstab",
    version,
    about = "Lyapunov feedback stabilization experiments"
)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to `run.output_dir` or `./qstab-out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `dotted.key=value` override applied to the configuration, repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for the bound states and write the spectral summary.
    Spectrum,
    /// Run the configured closed loop.
    Control,
    /// Report which stabilization hypotheses hold for the configuration.
    CheckAssumptions,
    /// Scan the perturbation strength of `H0 + σ μ`.
    SigmaScan,
    /// Scan σ, then run the offset feedback at the selected value.
    RelaxedControl,
    /// Fit the decay of the free evolution's sup norm.
    DispersionProbe,
    /// Write `signal.csv` from a completed run directory.
    ExtractSignal {
        /// Run directory; defaults to `--out`.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Apply a control signal open loop from the configured initial state.
    Replay {
        #[arg(long)]
        signal: PathBuf,
    },
}

/// Exit status for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NumericalBlowUp { .. } | Error::NoConvergence { .. } | Error::DegenerateState(_) => {
            EXIT_NUMERICAL
        }
        Error::Precondition(_)
        | Error::EmptySpectrum { .. }
        | Error::IncompleteRun(_)
        | Error::Sampling(_) => EXIT_UNMET,
        _ => EXIT_CONFIG,
    }
}

struct Context {
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    overrides: Vec<String>,
}

impl Context {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| Error::Config("--config is required".into()))?;
        ExperimentConfig::load(path, &self.overrides)
    }

    fn out_dir(&self, cfg: Option<&ExperimentConfig>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.and_then(|c| c.run.output_dir.clone()))
            .unwrap_or_else(|| PathBuf::from("qstab-out"))
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), value)?;
    Ok(())
}

fn print_json(value: &impl serde::Serialize) {
    let mut stdout = std::io::stdout().lock();
    // a closed pipe on stdout is not an error of the run
    let _ = serde_json::to_writer_pretty(&mut stdout, value)
        .and_then(|_| writeln!(stdout).map_err(serde_json::Error::io));
}

fn spectrum(ctx: &Context) -> Result<i32, Error> {
    let cfg = ctx.load()?;
    let v = cfg.potential.sample(cfg.grid)?;
    let mu = cfg.dipole.sample(cfg.grid)?;
    let sd = solve_bound_states(&v, &mu, cfg.run.energy_cut)?;
    let out = ctx.out_dir(Some(&cfg));
    let summary = sd.summary();
    write_json(&out.join("spectrum.json"), &summary)?;
    for (j, phi) in sd.eigenfunctions().iter().enumerate() {
        write_snapshot(
            phi,
            BufWriter::new(File::create(out.join(format!("phi_{j}.bin")))?),
        )?;
    }
    print_json(&summary);
    Ok(EXIT_OK)
}

fn control(ctx: &Context) -> Result<i32, Error> {
    let cfg = ctx.load()?;
    let art = run_closed_loop(&cfg)?;
    let out = ctx.out_dir(Some(&cfg));
    write_artifacts(&art, &out)?;
    let s = &art.summary;
    println!(
        "final target population {:.6}, min over plateau {:.6}, max lost mass {:.3e} -> {}",
        s.final_target_population,
        s.min_plateau_population.unwrap_or(f64::NAN),
        s.max_lost_mass,
        out.join(TRAJECTORY_FILE).display()
    );
    if let Some(reason) = &s.abort_reason {
        log::error!("run aborted: {reason}");
        return Ok(EXIT_NUMERICAL);
    }
    Ok(if s.success { EXIT_OK } else { EXIT_UNMET })
}

fn check_assumptions(ctx: &Context) -> Result<i32, Error> {
    let cfg = ctx.load()?;
    let prepared = prepare(&cfg)?;
    let decay = match &cfg.potential {
        PotentialSpec::Tabulated { .. } => None,
        spec => Some(check_decay_class(spec, cfg.grid.dim())?),
    };
    let a = &prepared.assumptions;
    let report = json!({
        "eigenvalues": prepared.sd.eigenvalues(),
        "assumptions": a,
        "initial_bound_ok": prepared.initial_bound_ok,
        "decay": decay,
    });
    write_json(&ctx.out_dir(Some(&cfg)).join("assumptions.json"), &report)?;
    print_json(&report);
    let all = (a.a1_ok || a.a1_prime_ok) && a.a2_ok && a.a3_ok && a.a4_ok;
    Ok(if all { EXIT_OK } else { EXIT_UNMET })
}

fn sigma_scan(ctx: &Context) -> Result<i32, Error> {
    let cfg = ctx.load()?;
    let (_, report) = run_sigma_scan(&cfg)?;
    let out = ctx.out_dir(Some(&cfg));
    std::fs::create_dir_all(&out)?;
    report.write_json(BufWriter::new(File::create(out.join("sigma_scan.json"))?))?;
    report.write_branch_csv(BufWriter::new(File::create(
        out.join("sigma_branches.csv"),
    )?))?;
    match report.selected_sigma {
        Some(s) => {
            println!(
                "selected sigma {s:.6e} (closeness bound {:.3e})",
                report.closeness_bound
            );
            Ok(EXIT_OK)
        }
        None => {
            println!("no sigma satisfies the checks");
            Ok(EXIT_UNMET)
        }
    }
}

fn relaxed_control(ctx: &Context) -> Result<i32, Error> {
    let cfg = ctx.load()?;
    let (prepared, report) = run_sigma_scan(&cfg)?;
    let out = ctx.out_dir(Some(&cfg));
    std::fs::create_dir_all(&out)?;
    report.write_json(BufWriter::new(File::create(out.join("sigma_scan.json"))?))?;
    let settings = relaxed_settings(&cfg);
    let run = run_relaxed_control(
        &prepared.v,
        &prepared.mu,
        &prepared.psi0,
        &report,
        &settings,
    )?;
    run.outcome.record.write_csv(
        BufWriter::new(File::create(out.join(TRAJECTORY_FILE))?),
        cfg.run.sample_every,
    )?;
    let summary = json!({
        "sigma": run.sigma,
        "controller": run.controller,
        "completed": run.outcome.completed(),
        "abort_reason": run.outcome.abort.as_ref().map(ToString::to_string),
        "final_target_population": run.final_target_population,
        "success": run.success,
        "late_control_deviation": run.late_control_deviation,
        "config": cfg,
    });
    write_json(&out.join("relaxed.json"), &summary)?;
    println!(
        "sigma {:.6e}: final target population {:.6}, late |u + sigma| {:.3e}",
        run.sigma, run.final_target_population, run.late_control_deviation
    );
    if !run.outcome.completed() {
        return Ok(EXIT_NUMERICAL);
    }
    Ok(if run.success { EXIT_OK } else { EXIT_UNMET })
}

fn dispersion(ctx: &Context) -> Result<i32, Error> {
    let cfg = ctx.load()?;
    let fit = run_dispersion_probe(&cfg)?;
    write_json(&ctx.out_dir(Some(&cfg)).join("dispersion.json"), &fit)?;
    println!(
        "slope {:.4} (expected {:.1}), window ends at t = {:.3}",
        fit.slope,
        -0.5 * cfg.grid.dim() as f64,
        fit.window_end
    );
    Ok(if fit.contamination_warning.is_some() {
        EXIT_UNMET
    } else {
        EXIT_OK
    })
}

fn extract_signal(ctx: &Context, run: Option<PathBuf>) -> Result<i32, Error> {
    let dir = run.unwrap_or_else(|| ctx.out_dir(None));
    let path = extract_open_loop_signal(&dir)?;
    println!("{}", path.display());
    Ok(EXIT_OK)
}

fn replay_signal(ctx: &Context, signal: &Path) -> Result<i32, Error> {
    let cfg = ctx.load()?;
    let file = File::open(signal)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", signal.display())))?;
    let controls = signal_controls(&read_signal(BufReader::new(file))?, cfg.propagator.dt)?;
    let art = replay(&cfg, &controls)?;
    write_artifacts(&art, &ctx.out_dir(Some(&cfg)))?;
    println!(
        "final target population {:.12}",
        art.summary.final_target_population
    );
    if art.summary.abort_reason.is_some() {
        return Ok(EXIT_NUMERICAL);
    }
    Ok(EXIT_OK)
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let ctx = Context {
        config: cli.config,
        out: cli.out,
        overrides: cli.overrides,
    };
    let result = match cli.command {
        Command::Spectrum => spectrum(&ctx),
        Command::Control => control(&ctx),
        Command::CheckAssumptions => check_assumptions(&ctx),
        Command::SigmaScan => sigma_scan(&ctx),
        Command::RelaxedControl => relaxed_control(&ctx),
        Command::DispersionProbe => dispersion(&ctx),
        Command::ExtractSignal { run } => extract_signal(&ctx, run),
        Command::Replay { signal } => replay_signal(&ctx, &signal),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
