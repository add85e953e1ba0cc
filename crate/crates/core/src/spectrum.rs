//! Discrete spectrum of the grid Hamiltonian, the spectral projectors, the
//! dipole matrix, and the non-degeneracy checks on an initial state.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigensolver::{lobpcg, start_vectors, GridOperator, LobpcgSettings};
use crate::error::{Error, Result};
use crate::grid::{inner_product, raw_inner, Grid, WaveFunction};
use crate::hamiltonian::RealField;

/// Residual target for every returned eigenpair (relative L2).
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-10;
/// Adjacent eigenvalues closer than this are flagged as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-10;
/// Bound states should be below this modulus on the outermost grid layer.
pub const BOUNDARY_AMPLITUDE_TOL: f64 = 1e-12;

const INITIAL_BLOCK: usize = 4;
const MAX_BLOCK: usize = 128;
const MAX_ITER: usize = 5000;
const SOLVER_SEED: u64 = 0x5eed_0001;

/// Default energy cut: one `spacing^2` below the continuum edge.
pub fn default_energy_cut(grid: Grid) -> f64 {
    -grid.spacing().powi(2)
}

/// Bound states below an energy cut together with their dipole couplings.
#[derive(Clone, Debug)]
pub struct SpectralData {
    eigenvalues: Vec<f64>,
    eigenfunctions: Vec<WaveFunction>,
    mu_matrix: Vec<Vec<Complex64>>,
    residuals: Vec<f64>,
    energy_cut: f64,
    mu_phi: Vec<WaveFunction>,
}

impl SpectralData {
    /// Assembles spectral data from given eigenpairs (sorted by the caller).
    pub fn from_parts(
        eigenvalues: Vec<f64>,
        eigenfunctions: Vec<WaveFunction>,
        mu: &RealField,
        energy_cut: f64,
        residuals: Vec<f64>,
    ) -> Result<Self> {
        if eigenvalues.len() != eigenfunctions.len() || residuals.len() != eigenvalues.len() {
            return Err(Error::Domain(
                "eigenpair arrays have different lengths".into(),
            ));
        }
        for phi in &eigenfunctions {
            phi.grid().ensure_same(&mu.grid())?;
        }
        let mu_phi: Vec<WaveFunction> = eigenfunctions
            .iter()
            .map(|phi| phi.multiplied_by(mu.values()))
            .collect();
        let mut mu_matrix = Vec::with_capacity(eigenfunctions.len());
        for mphi in &mu_phi {
            let row = eigenfunctions
                .iter()
                .map(|phik| inner_product(mphi, phik))
                .collect::<Result<Vec<_>>>()?;
            mu_matrix.push(row);
        }
        Ok(Self {
            eigenvalues,
            eigenfunctions,
            mu_matrix,
            residuals,
            energy_cut,
            mu_phi,
        })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn grid(&self) -> Option<Grid> {
        self.eigenfunctions.first().map(|p| p.grid())
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenfunctions(&self) -> &[WaveFunction] {
        &self.eigenfunctions
    }

    /// Entries `<mu phi_j, phi_k>`.
    pub fn mu_matrix(&self) -> &[Vec<Complex64>] {
        &self.mu_matrix
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn energy_cut(&self) -> f64 {
        self.energy_cut
    }

    /// `mu * phi_j`, cached for feedback evaluation.
    pub fn mu_phi(&self) -> &[WaveFunction] {
        &self.mu_phi
    }

    pub fn check_index(&self, index: usize) -> Result<()> {
        if index < self.len() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "eigenstate index {index} out of range ({} bound states)",
                self.len()
            )))
        }
    }

    /// Overlaps `<psi, phi_j>` for every bound state.
    pub fn overlaps(&self, psi: &WaveFunction) -> Result<Vec<Complex64>> {
        self.eigenfunctions
            .iter()
            .map(|phi| inner_product(psi, phi))
            .collect()
    }

    /// Populations `|<psi, phi_j>|^2`.
    pub fn populations(&self, psi: &WaveFunction) -> Result<Vec<f64>> {
        Ok(self.overlaps(psi)?.iter().map(|z| z.norm_sqr()).collect())
    }

    /// Largest modulus of each eigenfunction on the grid boundary layer.
    pub fn boundary_amplitudes(&self) -> Vec<f64> {
        self.eigenfunctions
            .iter()
            .map(|p| p.boundary_amplitude())
            .collect()
    }

    /// Pairs `(j, j+1)` whose eigenvalues are numerically degenerate.
    pub fn degenerate_pairs(&self) -> Vec<(usize, usize)> {
        self.eigenvalues
            .windows(2)
            .enumerate()
            .filter(|(_, w)| (w[1] - w[0]).abs() < DEGENERACY_TOL)
            .map(|(j, _)| (j, j + 1))
            .collect()
    }

    /// Largest deviation of `mu_matrix` from Hermitian symmetry.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.len();
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for k in 0..n {
                worst = worst.max((self.mu_matrix[j][k] - self.mu_matrix[k][j].conj()).norm());
            }
        }
        worst
    }

    pub fn summary(&self) -> SpectrumSummary {
        SpectrumSummary {
            eigenvalues: self.eigenvalues.clone(),
            mu_matrix: self
                .mu_matrix
                .iter()
                .map(|row| row.iter().map(|z| [z.re, z.im]).collect())
                .collect(),
            residuals: self.residuals.clone(),
            energy_cut: self.energy_cut,
            boundary_amplitudes: self.boundary_amplitudes(),
            degenerate_pairs: self.degenerate_pairs(),
        }
    }
}

/// JSON export of [`SpectralData`]; `mu_matrix` entries are `[re, im]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub eigenvalues: Vec<f64>,
    pub mu_matrix: Vec<Vec<[f64; 2]>>,
    pub residuals: Vec<f64>,
    pub energy_cut: f64,
    pub boundary_amplitudes: Vec<f64>,
    pub degenerate_pairs: Vec<(usize, usize)>,
}

/// Rotates a real eigenvector so that its largest-modulus entry is positive.
fn fix_sign(v: &mut [f64]) {
    let (mut best, mut idx) = (0.0, 0);
    for (i, x) in v.iter().enumerate() {
        // strict comparison keeps the first of equal-modulus entries
        if x.abs() > best {
            best = x.abs();
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// All eigenpairs of `-Δ + V` below `energy_cut`, ascending, L2-normalized
/// and sign-fixed, together with their dipole matrix.
pub fn solve_bound_states(
    v: &RealField,
    mu: &RealField,
    energy_cut: Option<f64>,
) -> Result<SpectralData> {
    let grid = v.grid();
    grid.ensure_same(&mu.grid())?;
    let cut = energy_cut.unwrap_or_else(|| default_energy_cut(grid));
    if cut > 0.0 {
        return Err(Error::Domain(format!("energy cut must be <= 0, got {cut}")));
    }
    let mut op = GridOperator::new(v);
    let n = op.len();
    let settings = LobpcgSettings {
        tol: EIGEN_RESIDUAL_TOL,
        loose_tol: 1e-6,
        loose_above: cut + 0.5 * cut.abs().max(1e-6),
        max_iter: MAX_ITER,
    };

    let mut block = INITIAL_BLOCK.min(n);
    let mut start = start_vectors(&mut op, block, SOLVER_SEED);
    let outcome = loop {
        let out = lobpcg(&mut op, start, &settings)?;
        let below = out.values.iter().filter(|&&l| l < cut).count();
        // Two guard states above the cut show that nothing was missed.
        if below + 2 <= block || block >= n {
            break out;
        }
        if block >= MAX_BLOCK {
            return Err(Error::Domain(format!(
                "more than {} states below the energy cut {cut}",
                MAX_BLOCK - 2
            )));
        }
        let grown = (2 * block).min(n);
        let mut next = out.vectors;
        let extra = start_vectors(&mut op, grown, SOLVER_SEED + block as u64);
        next.extend(extra.into_iter().take(grown - block));
        start = next;
        block = grown;
    };

    let scale = 1.0 / grid.cell_volume().sqrt();
    let mut pairs: Vec<(f64, Vec<f64>, f64)> = outcome
        .values
        .into_iter()
        .zip(outcome.vectors)
        .zip(outcome.residuals)
        .filter(|((l, _), _)| *l < cut)
        .map(|((l, mut vec), r)| {
            fix_sign(&mut vec);
            vec.iter_mut().for_each(|x| *x *= scale);
            (l, vec, r)
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptySpectrum { energy_cut: cut });
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut values = Vec::new();
    let mut functions = Vec::new();
    let mut residuals = Vec::new();
    for (l, vec, r) in pairs {
        values.push(l);
        functions.push(WaveFunction::from_real(grid, &vec)?);
        residuals.push(r);
    }
    let sd = SpectralData::from_parts(values, functions, mu, cut, residuals)?;
    for (j, amp) in sd.boundary_amplitudes().iter().enumerate() {
        if *amp > BOUNDARY_AMPLITUDE_TOL {
            log::warn!(
                "bound state {j} has boundary amplitude {amp:.2e} > {BOUNDARY_AMPLITUDE_TOL:e}; consider a larger domain"
            );
        }
    }
    if !sd.degenerate_pairs().is_empty() {
        log::warn!("degenerate eigenvalues: {:?}", sd.degenerate_pairs());
    }
    Ok(sd)
}

/// `P_disc psi = sum_j <psi, phi_j> phi_j`.
pub fn project_disc(sd: &SpectralData, psi: &WaveFunction) -> Result<WaveFunction> {
    let mut out = WaveFunction::zeros(psi.grid());
    let h = psi.grid().cell_volume();
    for phi in sd.eigenfunctions() {
        psi.grid().ensure_same(&phi.grid())?;
        let c = raw_inner(psi.amplitudes(), phi.amplitudes()) * h;
        for (o, p) in out.amplitudes_mut().iter_mut().zip(phi.amplitudes()) {
            *o += c * p;
        }
    }
    Ok(out)
}

/// `P_ac psi = psi - P_disc psi`.
pub fn project_ac(sd: &SpectralData, psi: &WaveFunction) -> Result<WaveFunction> {
    let disc = project_disc(sd, psi)?;
    psi.axpy(Complex64::new(-1.0, 0.0), &disc)
}

/// Tolerances for the non-degeneracy checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionTolerances {
    pub gap_tol: f64,
    pub coupling_tol: f64,
}

impl Default for AssumptionTolerances {
    fn default() -> Self {
        Self {
            gap_tol: crate::defaults::GAP_TOL,
            coupling_tol: crate::defaults::COUPLING_TOL,
        }
    }
}

/// Which of the stabilization hypotheses hold for a given spectrum and
/// initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Initial state lies in the discrete subspace.
    pub a1_ok: bool,
    /// Continuum part is small relative to the target population.
    pub a1_prime_ok: bool,
    /// Initial state overlaps the target.
    pub a2_ok: bool,
    /// Transition frequencies are pairwise distinct.
    pub a3_ok: bool,
    /// Every off-diagonal dipole element is nonzero.
    pub a4_ok: bool,
    /// `None` when there are fewer than two transitions to compare.
    pub worst_gap: Option<f64>,
    /// `None` when there is a single bound state.
    pub worst_coupling: Option<f64>,
    pub continuum_mass: f64,
    pub target_overlap: f64,
    pub degenerate_pairs: Vec<(usize, usize)>,
}

/// Smallest `|(λ_j - λ_k) - (λ_j' - λ_k')|` over distinct ordered pairs.
pub fn worst_transition_gap(eigenvalues: &[f64]) -> Option<f64> {
    let n = eigenvalues.len();
    let mut transitions = Vec::new();
    for j in 0..n {
        for k in 0..n {
            if j != k {
                transitions.push(eigenvalues[j] - eigenvalues[k]);
            }
        }
    }
    let mut worst: Option<f64> = None;
    for a in 0..transitions.len() {
        for b in a + 1..transitions.len() {
            let d = (transitions[a] - transitions[b]).abs();
            worst = Some(worst.map_or(d, |w| w.min(d)));
        }
    }
    worst
}

/// Smallest off-diagonal `|<mu phi_j, phi_k>|`.
pub fn worst_coupling(mu_matrix: &[Vec<Complex64>]) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for (j, row) in mu_matrix.iter().enumerate() {
        for (k, z) in row.iter().enumerate() {
            if j != k {
                let c = z.norm();
                worst = Some(worst.map_or(c, |w| w.min(c)));
            }
        }
    }
    worst
}

pub fn check_assumptions(
    sd: &SpectralData,
    psi0: &WaveFunction,
    target: usize,
    eps: f64,
    tol: AssumptionTolerances,
) -> Result<AssumptionReport> {
    sd.check_index(target)?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("eps must lie in (0, 1), got {eps}")));
    }
    let overlaps = sd.overlaps(psi0)?;
    let disc: f64 = overlaps.iter().map(|z| z.norm_sqr()).sum();
    let continuum_mass = (psi0.norm_sqr() - disc).clamp(0.0, 1.0);
    let target_overlap = overlaps[target].norm();

    let worst_gap = worst_transition_gap(sd.eigenvalues());
    let worst_coupling = worst_coupling(sd.mu_matrix());
    let degenerate_pairs = sd.degenerate_pairs();

    Ok(AssumptionReport {
        a1_ok: continuum_mass <= 1e-10,
        a1_prime_ok: continuum_mass < eps / (1.0 - eps) * target_overlap * target_overlap,
        a2_ok: target_overlap > 1e-8,
        a3_ok: degenerate_pairs.is_empty() && worst_gap.is_none_or(|g| g > tol.gap_tol),
        a4_ok: worst_coupling.is_none_or(|c| c > tol.coupling_tol),
        worst_gap,
        worst_coupling,
        continuum_mass,
        target_overlap,
        degenerate_pairs,
    })
}
