//! Lyapunov feedback stabilization of bound states of `-Δ + V` under a
//! bilinear dipole control `u(t) mu(x)`.
//!
//! The crate covers the whole numerical pipeline: periodic grids and
//! wavefunctions ([`grid`]), potential and dipole families ([`hamiltonian`]),
//! the discrete spectrum and projectors ([`spectrum`]), Strang split-step
//! propagation with an absorbing layer ([`propagator`]), the feedback laws
//! ([`controller`]), trajectory diagnostics ([`diagnostics`]), the
//! sigma-perturbation machinery ([`relaxation`]) and configuration-driven
//! experiments ([`experiment`]).

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod defaults;
pub mod diagnostics;
mod eigensolver;
pub mod error;
pub mod experiment;
pub mod fourier;
pub mod grid;
pub mod hamiltonian;
pub mod propagator;
pub mod relaxation;
pub mod spectrum;

pub use controller::{ControllerConfig, FeedbackMode, KickSpec};
pub use diagnostics::TrajectoryRecord;
pub use error::{Error, Result};
pub use grid::{inner_product, lp_norm, normalize, Grid, WaveFunction};
pub use hamiltonian::{apply_h0, DipoleSpec, PotentialSpec, RealField};
pub use num_complex::Complex64;
pub use propagator::{AbsorberSpec, Propagator, PropagatorConfig};
pub use spectrum::{project_ac, project_disc, solve_bound_states, AssumptionReport, SpectralData};
