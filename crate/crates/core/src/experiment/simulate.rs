//! Step loops shared by closed-loop, kicked and replayed runs.

use crate::controller::KickSignal;
use crate::diagnostics::{record_sample, SampleContext, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::grid::WaveFunction;
use crate::propagator::Propagator;

/// Number of steps of length `dt` needed to reach `horizon`.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    Ok((horizon / dt - 1e-9).ceil().max(1.0) as usize)
}

/// Result of a step loop. A numerical abort keeps the partial record.
#[derive(Debug)]
pub struct LoopOutcome {
    pub record: TrajectoryRecord,
    pub state: WaveFunction,
    pub abort: Option<Error>,
}

impl LoopOutcome {
    pub fn completed(&self) -> bool {
        self.abort.is_none()
    }
}

/// How the control of a run is produced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ControlSource<'a> {
    /// State feedback, optionally preceded by an open-loop resonant kick.
    Feedback { kick: Option<KickSignal> },
    /// Piecewise-constant values applied over consecutive steps.
    OpenLoop(&'a [f64]),
}

/// Propagates `psi0` for `steps` steps, sampling before every step and once
/// at the end.
///
/// Feedback is evaluated on the state at the start of each step and held
/// over it. Kick values are taken at the step midpoint. Open-loop values
/// `u_k` are applied over step `k` and the last one is logged with the final
/// sample, so replaying a record's controls reproduces it.
pub fn run_steps(
    prop: &mut Propagator,
    ctx: &SampleContext<'_>,
    psi0: &WaveFunction,
    steps: usize,
    source: ControlSource<'_>,
) -> Result<LoopOutcome> {
    if let ControlSource::OpenLoop(values) = source {
        if values.len() != steps + 1 {
            return Err(Error::Config(format!(
                "open-loop signal has {} values, expected {}",
                values.len(),
                steps + 1
            )));
        }
    }
    let dt = prop.dt();
    let mut record = TrajectoryRecord::new(ctx.cfg.dissipation_exponent());
    let mut psi = psi0.clone();
    let kick_steps = match source {
        ControlSource::Feedback { kick: Some(k) } => {
            ((k.duration / dt).round() as usize).min(steps)
        }
        _ => 0,
    };
    record.feedback_from = kick_steps;

    let control = |k: usize| -> Option<f64> {
        match source {
            ControlSource::OpenLoop(values) => Some(values[k]),
            ControlSource::Feedback { kick: Some(kick) } if k < kick_steps => {
                Some(kick.value((k as f64 + 0.5) * dt))
            }
            ControlSource::Feedback { .. } => None,
        }
    };

    for k in 0..steps {
        let t = k as f64 * dt;
        let u = record_sample(&mut record, ctx, &psi, t, prop.absorbed_mass(), control(k))?;
        if let Err(e) = prop.step_in_place(&mut psi, u) {
            return Ok(LoopOutcome {
                record,
                state: psi,
                abort: Some(e),
            });
        }
    }
    let end = if kick_steps == steps {
        Some(0.0)
    } else {
        control(steps)
    };
    record_sample(
        &mut record,
        ctx,
        &psi,
        steps as f64 * dt,
        prop.absorbed_mass(),
        end,
    )?;
    Ok(LoopOutcome {
        record,
        state: psi,
        abort: None,
    })
}
