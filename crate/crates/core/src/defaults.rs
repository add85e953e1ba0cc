//! Every physical and numerical default used when a configuration leaves a
//! value unset. Configuration loading materializes these into the resolved
//! config that each run echoes.

/// Minimum gap between distinct transition frequencies for the A3 check.
pub const GAP_TOL: f64 = 1e-6;
/// Minimum off-diagonal dipole coupling for the A4 check.
pub const COUPLING_TOL: f64 = 1e-8;

/// Lyapunov weight on the target population.
pub const EPS: f64 = 0.1;
/// Target eigenstate index.
pub const TARGET: usize = 0;
/// Largest admissible `c (M + 2) ||mu||_inf dt`; bounds the potential phase
/// accumulated by the control term per step.
pub const GAIN_PHASE_BUDGET: f64 = 0.05;
/// Gain used when the budget above allows it.
pub const GAIN: f64 = 1.0;

/// Time step of the Strang propagator.
pub const DT: f64 = 1e-3;
/// Fraction of each axis covered by the absorbing layer.
pub const ABSORBER_WIDTH: f64 = 0.2;
/// Absorption rate at the outer edge of the layer.
pub const ABSORBER_STRENGTH: f64 = 20.0;

/// Resonant kick amplitude.
pub const KICK_AMPLITUDE: f64 = 0.1;

/// Closed-loop horizon.
pub const HORIZON: f64 = 500.0;
/// Trajectory CSV keeps every n-th step.
pub const SAMPLE_EVERY: usize = 10;
/// Fraction of the horizon over which the target population must stay above
/// `1 - eps` for a run to count as stabilized.
pub const PLATEAU_FRACTION: f64 = 0.2;

/// Number of log-spaced points in the default sigma scan.
pub const SIGMA_POINTS: usize = 16;
/// Smallest sigma in the default scan.
pub const SIGMA_MIN: f64 = 1e-3;
/// `sigma_max = SIGMA_MAX_SCALE / ||mu||_inf`.
pub const SIGMA_MAX_SCALE: f64 = 0.5;

/// `L^p` exponent and slack used to pick the feed_alpha exponent.
pub const DISPERSION_P: f64 = 4.0;
pub const DISPERSION_VARPI: f64 = 0.1;

/// Relative warning threshold when normalizing coefficient lists.
pub const COEFFICIENT_NORM_WARN: f64 = 1e-6;

/// Seed for randomized initial states.
pub const SEED: u64 = 0;
