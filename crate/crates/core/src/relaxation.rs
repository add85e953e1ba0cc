//! Perturbed Hamiltonians `H_σ = H0 + σ μ`: scanning σ for non-degeneracy
//! and running the offset feedback toward the perturbed ground state.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::ControllerConfig;
use crate::diagnostics::SampleContext;
use crate::error::{Error, Result};
use crate::experiment::simulate::{run_steps, step_count, ControlSource, LoopOutcome};
use crate::grid::{inner_product, WaveFunction};
use crate::hamiltonian::RealField;
use crate::propagator::{Propagator, PropagatorConfig};
use crate::spectrum::{
    check_assumptions, solve_bound_states, worst_coupling, worst_transition_gap,
    AssumptionTolerances, SpectralData,
};

/// Pointwise `V + σ μ`.
pub fn build_perturbed(v: &RealField, mu: &RealField, sigma: f64) -> Result<RealField> {
    v.add_scaled(sigma, mu)
}

/// `count` log-spaced values in `[min, max]`.
pub fn log_spaced(min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max >= min && max.is_finite()) || count == 0 {
        return Err(Error::Config(format!(
            "bad sigma range [{min}, {max}] with {count} points"
        )));
    }
    if count == 1 {
        return Ok(vec![min]);
    }
    let (a, b) = (min.ln(), max.ln());
    Ok((0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect())
}

/// Default scan: log-spaced points in `[SIGMA_MIN, SIGMA_MAX_SCALE / ||μ||_inf]`.
pub fn default_sigma_grid(mu: &RealField) -> Result<Vec<f64>> {
    let sup = mu.sup_norm();
    if sup == 0.0 {
        return Err(Error::Config("dipole vanishes identically".into()));
    }
    let max = (crate::defaults::SIGMA_MAX_SCALE / sup).max(crate::defaults::SIGMA_MIN);
    log_spaced(
        crate::defaults::SIGMA_MIN,
        max,
        crate::defaults::SIGMA_POINTS,
    )
}

/// Right side of the closeness condition on the eigenfunction drift:
/// `min(ε/4, ε |<ψ0, φt>|² / (2(M+1)(2-ε) + 2ε))`.
pub fn closeness_bound(eps: f64, target_overlap: f64, bound_states: usize) -> f64 {
    let m1 = bound_states as f64;
    let second = eps * target_overlap * target_overlap / (2.0 * m1 * (2.0 - eps) + 2.0 * eps);
    (0.25 * eps).min(second)
}

/// One σ of a scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaPoint {
    pub sigma: f64,
    /// Eigenvalues of `H_σ`, ascending.
    pub eigenvalues: Vec<f64>,
    /// `branches[j]` is the index at this σ of the state continuing `φj(0)`.
    /// Indices absent from `branches` are states that appeared along the scan.
    pub branches: Vec<usize>,
    pub worst_gap: Option<f64>,
    pub worst_coupling: Option<f64>,
    pub a3_ok: bool,
    pub a4_ok: bool,
    /// `max_j ||φ_{j,σ} - φj||` after sign alignment.
    pub drift: f64,
    /// `max_j ||φ_{j,σ} - φ_{j,σ_prev}||` after sign alignment.
    pub step_change: f64,
    /// `δσ ||μ||_inf / d`, with `d` the smallest isolation distance of a
    /// tracked eigenvalue from the rest of the spectrum including `[0, ∞)`.
    pub step_bound: f64,
    /// `max_j |λ_j(σ) - λ_j(σ_prev)|` over tracked branches.
    pub eigenvalue_step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaScanReport {
    pub sigma_values: Vec<f64>,
    pub reference_eigenvalues: Vec<f64>,
    pub points: Vec<SigmaPoint>,
    pub selected_sigma: Option<f64>,
    pub closeness_bound: f64,
    pub energy_cut: f64,
    pub mu_sup: f64,
    pub eps: f64,
    pub target: usize,
    pub tolerances: AssumptionTolerances,
    /// First σ at which an original bound state was lost, if any.
    pub truncated_at: Option<f64>,
    pub warnings: Vec<String>,
}

impl SigmaScanReport {
    pub fn point(&self, sigma: f64) -> Option<&SigmaPoint> {
        self.points.iter().find(|p| p.sigma == sigma)
    }

    /// Every step obeys `step_change <= factor * step_bound`.
    pub fn drift_continuity_ok(&self, factor: f64) -> bool {
        self.points
            .iter()
            .all(|p| p.step_change <= factor * p.step_bound)
    }

    /// Every tracked eigenvalue moves by at most `||μ||_inf δσ` per step.
    pub fn eigenvalue_continuity_ok(&self) -> bool {
        let mut prev = 0.0;
        self.points.iter().all(|p| {
            let ok = p.eigenvalue_step <= self.mu_sup * (p.sigma - prev) * (1.0 + 1e-9) + 1e-12;
            prev = p.sigma;
            ok
        })
    }

    pub fn write_json(&self, out: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// Long-format branch table `sigma,branch,eigenvalue`, starting with the
    /// unperturbed spectrum. New states get branch labels after the tracked
    /// ones, in order of appearance.
    pub fn write_branch_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "sigma,branch,eigenvalue")?;
        for (j, l) in self.reference_eigenvalues.iter().enumerate() {
            writeln!(out, "{:.16e},{j},{l:.16e}", 0.0)?;
        }
        let tracked = self.reference_eigenvalues.len();
        for p in &self.points {
            for (j, &k) in p.branches.iter().enumerate() {
                writeln!(out, "{:.16e},{j},{:.16e}", p.sigma, p.eigenvalues[k])?;
            }
            let mut label = tracked;
            for (k, l) in p.eigenvalues.iter().enumerate() {
                if !p.branches.contains(&k) {
                    writeln!(out, "{:.16e},{label},{l:.16e}", p.sigma)?;
                    label += 1;
                }
            }
        }
        Ok(())
    }
}

/// Smallest distance from `λ_j` to the other eigenvalues and to `[0, ∞)`.
fn isolation(values: &[f64], j: usize) -> f64 {
    values
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != j)
        .map(|(_, l)| (values[j] - l).abs())
        .fold(values[j].abs(), f64::min)
}

/// Matches each previous branch to a current state by largest overlap
/// (greedy over all pairs) and returns the matched, sign-aligned states.
fn track(
    previous: &[WaveFunction],
    current: &SpectralData,
) -> Result<Option<(Vec<usize>, Vec<WaveFunction>)>> {
    let funcs = current.eigenfunctions();
    if funcs.len() < previous.len() {
        return Ok(None);
    }
    let mut pairs = Vec::new();
    for (j, p) in previous.iter().enumerate() {
        for (k, f) in funcs.iter().enumerate() {
            pairs.push((inner_product(f, p)?, j, k));
        }
    }
    pairs.sort_by(|a, b| b.0.norm().total_cmp(&a.0.norm()));
    let mut branch = vec![usize::MAX; previous.len()];
    let mut used = vec![false; funcs.len()];
    let mut aligned: Vec<Option<WaveFunction>> = vec![None; previous.len()];
    for (ov, j, k) in pairs {
        if branch[j] != usize::MAX || used[k] {
            continue;
        }
        branch[j] = k;
        used[k] = true;
        let sign = if ov.re < 0.0 { -1.0 } else { 1.0 };
        aligned[j] = Some(funcs[k].scaled(sign.into()));
    }
    Ok(Some((
        branch,
        aligned.into_iter().map(Option::unwrap).collect(),
    )))
}

/// Solves `H_σ` on every σ of `sigma_grid` (in parallel), tracks the
/// unperturbed branches through the scan and selects the smallest σ at which
/// the non-degeneracy checks hold and the drift is below the closeness bound.
///
/// The scan stops with a warning at the first σ where fewer bound states are
/// found than at σ = 0.
#[allow(clippy::too_many_arguments)]
pub fn scan_sigma(
    v: &RealField,
    mu: &RealField,
    sigma_grid: &[f64],
    tol: AssumptionTolerances,
    eps: f64,
    psi0: &WaveFunction,
    target: usize,
    energy_cut: Option<f64>,
) -> Result<SigmaScanReport> {
    if sigma_grid.is_empty() {
        return Err(Error::Config("empty sigma grid".into()));
    }
    if let Some(s) = sigma_grid.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::Config(format!(
            "sigma values must be positive, got {s}"
        )));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("eps must lie in (0, 1), got {eps}")));
    }
    let mut sigmas = sigma_grid.to_vec();
    sigmas.sort_by(f64::total_cmp);
    sigmas.dedup();

    let reference = solve_bound_states(v, mu, energy_cut)?;
    reference.check_index(target)?;
    let cut = reference.energy_cut();
    let overlap = inner_product(psi0, &reference.eigenfunctions()[target])?.norm();
    let bound = closeness_bound(eps, overlap, reference.len());
    let mu_sup = mu.sup_norm();

    let solved: Vec<Result<SpectralData>> = sigmas
        .par_iter()
        .map(|&s| solve_bound_states(&build_perturbed(v, mu, s)?, mu, Some(cut)))
        .collect();

    let mut warnings = Vec::new();
    let mut points = Vec::new();
    let mut truncated_at = None;
    let mut previous: Vec<WaveFunction> = reference.eigenfunctions().to_vec();
    let mut previous_values: Vec<f64> = reference.eigenvalues().to_vec();
    let mut previous_sigma = 0.0;
    for (&sigma, sd) in sigmas.iter().zip(solved) {
        let sd = match sd {
            Ok(sd) => sd,
            Err(Error::EmptySpectrum { .. }) => {
                truncated_at = Some(sigma);
                break;
            }
            Err(e) => return Err(e),
        };
        let Some((branches, aligned)) = track(&previous, &sd)? else {
            truncated_at = Some(sigma);
            break;
        };
        if sd.len() > previous.len() {
            warnings.push(format!(
                "{} new bound state(s) at sigma = {sigma:e}",
                sd.len() - previous.len()
            ));
        }
        let mut drift: f64 = 0.0;
        let mut step_change: f64 = 0.0;
        let mut eigenvalue_step: f64 = 0.0;
        let mut min_isolation = f64::INFINITY;
        for (j, phi) in aligned.iter().enumerate() {
            let d0 = phi
                .axpy((-1.0).into(), &reference.eigenfunctions()[j])?
                .norm();
            let d1 = phi.axpy((-1.0).into(), &previous[j])?.norm();
            drift = drift.max(d0);
            step_change = step_change.max(d1);
            let lam = sd.eigenvalues()[branches[j]];
            eigenvalue_step = eigenvalue_step.max((lam - previous_values[j]).abs());
            min_isolation = min_isolation
                .min(isolation(sd.eigenvalues(), branches[j]))
                .min(isolation(&previous_values, j));
        }
        let worst_gap = worst_transition_gap(sd.eigenvalues());
        let worst_coupling = worst_coupling(sd.mu_matrix());
        points.push(SigmaPoint {
            sigma,
            eigenvalues: sd.eigenvalues().to_vec(),
            a3_ok: sd.degenerate_pairs().is_empty() && worst_gap.is_none_or(|g| g > tol.gap_tol),
            a4_ok: worst_coupling.is_none_or(|c| c > tol.coupling_tol),
            worst_gap,
            worst_coupling,
            drift,
            step_change,
            step_bound: (sigma - previous_sigma) * mu_sup / min_isolation,
            eigenvalue_step,
            branches: branches.clone(),
        });
        previous_values = branches.iter().map(|&k| sd.eigenvalues()[k]).collect();
        previous = aligned;
        previous_sigma = sigma;
    }
    if let Some(s) = truncated_at {
        let msg = format!("bound states lost at sigma = {s:e}; scan truncated");
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let selected_sigma = points
        .iter()
        .find(|p| p.a3_ok && p.a4_ok && p.drift < bound)
        .map(|p| p.sigma);
    Ok(SigmaScanReport {
        sigma_values: sigmas,
        reference_eigenvalues: reference.eigenvalues().to_vec(),
        points,
        selected_sigma,
        closeness_bound: bound,
        energy_cut: cut,
        mu_sup,
        eps,
        target,
        tolerances: tol,
        truncated_at,
        warnings,
    })
}

/// Outcome of [`run_relaxed_control`].
#[derive(Debug)]
pub struct RelaxedRun {
    pub sigma: f64,
    pub controller: ControllerConfig,
    pub outcome: LoopOutcome,
    /// `|<ψ(T), φ_target>|²` against the unperturbed target.
    pub final_target_population: f64,
    pub success: bool,
    /// `max |u + σ|` over the final `tail_fraction` of the run.
    pub late_control_deviation: f64,
}

/// Settings of a relaxed run besides the scan report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxedRunSettings {
    pub gain: f64,
    pub horizon: f64,
    pub propagator: PropagatorConfig,
    pub tail_fraction: f64,
}

/// Closed loop under the offset law at the scan's selected σ, steering
/// toward the perturbed continuation of the target. Preconditions are checked
/// before any propagation: a selected σ must exist and `ψ0` must satisfy the
/// relaxed initial condition for `H_σ` with weight `ε/2`.
pub fn run_relaxed_control(
    v: &RealField,
    mu: &RealField,
    psi0: &WaveFunction,
    report: &SigmaScanReport,
    settings: &RelaxedRunSettings,
) -> Result<RelaxedRun> {
    let sigma = report
        .selected_sigma
        .ok_or_else(|| Error::Config("sigma scan selected no sigma".into()))?;
    let point = report
        .point(sigma)
        .ok_or_else(|| Error::Config(format!("sigma {sigma} missing from scan")))?;
    let eps = report.eps;
    let reference = solve_bound_states(v, mu, Some(report.energy_cut))?;
    let perturbed =
        solve_bound_states(&build_perturbed(v, mu, sigma)?, mu, Some(report.energy_cut))?;
    if perturbed.eigenvalues() != point.eigenvalues.as_slice() {
        return Err(Error::Precondition(
            "perturbed spectrum differs from the scan report".into(),
        ));
    }
    let control_target = point.branches[report.target];
    let check = check_assumptions(
        &perturbed,
        psi0,
        control_target,
        0.5 * eps,
        report.tolerances,
    )?;
    if !check.a1_prime_ok {
        return Err(Error::Precondition(format!(
            "initial state violates the relaxed initial condition for H_sigma: continuum mass {:.3e}, target overlap {:.3e}",
            check.continuum_mass, check.target_overlap
        )));
    }

    let mut cfg = ControllerConfig::feed_sigma(eps, settings.gain, sigma);
    cfg.target = control_target;
    cfg.validate()?;
    let ctx = SampleContext {
        reference: &reference,
        control: &perturbed,
        cfg: &cfg,
        reference_target: report.target,
    };
    let mut prop = Propagator::new(v, mu, settings.propagator)?;
    let steps = step_count(settings.horizon, prop.dt())?;
    let outcome = run_steps(
        &mut prop,
        &ctx,
        psi0,
        steps,
        ControlSource::Feedback { kick: None },
    )?;
    let last = outcome
        .record
        .last()
        .ok_or_else(|| Error::IncompleteRun("empty record".into()))?;
    let final_target_population = last.target_population;
    let t_end = last.t;
    let from = t_end * (1.0 - settings.tail_fraction);
    let late_control_deviation = outcome
        .record
        .rows
        .iter()
        .filter(|r| r.t >= from)
        .map(|r| (r.u + sigma).abs())
        .fold(0.0, f64::max);
    Ok(RelaxedRun {
        sigma,
        success: outcome.completed() && final_target_population > 1.0 - eps,
        controller: cfg,
        outcome,
        final_target_population,
        late_control_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{normalize, Grid};
    use crate::hamiltonian::{DipoleSpec, PotentialSpec};
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn fields(grid: Grid) -> (RealField, RealField) {
        let v = PotentialSpec::GaussianWell {
            depth: -6.0,
            width: 1.5,
            center: vec![],
        }
        .sample(grid)
        .unwrap();
        let mu = DipoleSpec::GaussianDipole {
            amplitude: 1.0,
            width: 2.0,
        }
        .sample(grid)
        .unwrap();
        (v, mu)
    }

    #[test]
    fn zero_sigma_leaves_potential_unchanged() {
        let grid = Grid::new(1, 64, 10.0).unwrap();
        let (v, mu) = fields(grid);
        assert_eq!(build_perturbed(&v, &mu, 0.0).unwrap(), v);
    }

    proptest! {
        #[test]
        fn perturbation_is_linear_in_sigma(s1 in -1.0f64..1.0, s2 in -1.0f64..1.0) {
            let grid = Grid::new(1, 64, 10.0).unwrap();
            let (v, mu) = fields(grid);
            let a = build_perturbed(&v, &mu, s1).unwrap();
            let b = build_perturbed(&v, &mu, s2).unwrap();
            let c = build_perturbed(&v, &mu, s1 + s2).unwrap();
            for i in 0..grid.len() {
                let lhs = a.values()[i] + b.values()[i] - v.values()[i];
                // both sides round once per operation; allow one ulp of the operands
                let scale = v.values()[i].abs() + (s1.abs() + s2.abs()) * mu.values()[i].abs();
                prop_assert!((lhs - c.values()[i]).abs() <= 4.0 * f64::EPSILON * scale);
            }
        }
    }

    #[test]
    fn log_spacing_and_default_grid() {
        let g = log_spaced(1e-3, 1e-1, 3).unwrap();
        assert!((g[1] - 1e-2).abs() < 1e-15);
        let grid = Grid::new(1, 64, 10.0).unwrap();
        let (_, mu) = fields(grid);
        let d = default_sigma_grid(&mu).unwrap();
        assert_eq!(d.len(), crate::defaults::SIGMA_POINTS);
        assert!((d[d.len() - 1] - 0.5 / mu.sup_norm()).abs() < 1e-12);
        assert!(log_spaced(0.0, 1.0, 4).is_err());
    }

    #[test]
    fn closeness_bound_takes_the_smaller_term() {
        assert_eq!(closeness_bound(0.2, 1.0, 1), 0.05);
        // 0.2 * 0.5 / (2 * 3 * 1.8 + 0.4) = 0.1 / 11.2
        assert!((closeness_bound(0.2, 0.5f64.sqrt(), 3) - 0.1 / 11.2).abs() < 1e-15);
    }

    #[test]
    fn scan_tracks_branches_and_selects_sigma() {
        let grid = Grid::new(1, 256, 16.0).unwrap();
        let (v, mu) = fields(grid);
        let reference = solve_bound_states(&v, &mu, None).unwrap();
        let psi0 = normalize(
            &reference.eigenfunctions()[0]
                .axpy(Complex64::new(0.0, 1.0), &reference.eigenfunctions()[1])
                .unwrap(),
        )
        .unwrap();
        let sigmas = log_spaced(1e-3, 0.05, 6).unwrap();
        let rep = scan_sigma(
            &v,
            &mu,
            &sigmas,
            AssumptionTolerances::default(),
            0.2,
            &psi0,
            0,
            None,
        )
        .unwrap();
        assert_eq!(rep.points.len(), 6);
        assert!(rep.truncated_at.is_none());
        assert!(rep.drift_continuity_ok(10.0));
        assert!(rep.eigenvalue_continuity_ok());
        for w in rep.points.windows(2) {
            assert!(w[0].drift <= w[1].drift);
        }
        let mut csv = Vec::new();
        rep.write_branch_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 1 + reference.len() * 7);
    }
}
