//! Fixtures shared by the benchmarks.

use qstab_core::{
    normalize, solve_bound_states, Complex64, DipoleSpec, Grid, PotentialSpec, RealField,
    SpectralData, WaveFunction,
};

/// Pöschl-Teller well `-6 sech^2(x)` with an odd Gaussian dipole.
pub fn poschl_teller(points: usize) -> (RealField, RealField) {
    let grid = Grid::new(1, points, 20.0).expect("valid grid");
    let v = PotentialSpec::PoschlTeller { strength: 2.0 }
        .sample(grid)
        .expect("1D potential");
    let mu = DipoleSpec::GaussianDipole {
        amplitude: 1.0,
        width: 2.0,
    }
    .sample(grid)
    .expect("dipole");
    (v, mu)
}

/// Gaussian well on a square 2D grid.
pub fn gaussian_well_2d(points: usize) -> (RealField, RealField) {
    let grid = Grid::new(2, points, 16.0).expect("valid grid");
    let v = PotentialSpec::GaussianWell {
        depth: -4.0,
        width: 1.5,
        center: vec![],
    }
    .sample(grid)
    .expect("potential");
    let mu = DipoleSpec::GaussianDipole {
        amplitude: 1.0,
        width: 2.0,
    }
    .sample(grid)
    .expect("dipole");
    (v, mu)
}

/// `(φ0 + i φ1) / √2` of the given spectrum.
pub fn two_level_state(sd: &SpectralData) -> WaveFunction {
    let phi = sd.eigenfunctions();
    let mixed = phi[0]
        .axpy(Complex64::new(0.0, 1.0), &phi[1])
        .expect("same grid");
    normalize(&mixed).expect("nonzero state")
}

pub fn spectrum(v: &RealField, mu: &RealField) -> SpectralData {
    solve_bound_states(v, mu, None).expect("bound states")
}

/// Normalized Gaussian packet centered at the origin.
pub fn packet(grid: Grid) -> WaveFunction {
    let psi = WaveFunction::from_fn(grid, |x| {
        let r2: f64 = x.iter().map(|c| c * c).sum();
        Complex64::new((-r2).exp(), 0.0)
    });
    normalize(&psi).expect("nonzero state")
}
