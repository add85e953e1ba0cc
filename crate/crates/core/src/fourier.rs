//! Multi-dimensional FFT on the row-major tensor grid.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlannerScalar};

use crate::grid::Grid;

/// Planned forward/inverse transforms for one grid, with owned scratch space.
///
/// The forward transform is unnormalized; the inverse divides by the total
/// number of cells so that `inverse(forward(x)) == x`.
pub struct Fourier {
    grid: Grid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    line: Vec<Complex64>,
}

impl fmt::Debug for Fourier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fourier").field("grid", &self.grid).finish()
    }
}

impl Fourier {
    pub fn new(grid: Grid) -> Self {
        let n = grid.points_per_axis();
        // Scalar plans: the SIMD ones drift in norm by ~3e-16 per step.
        let mut planner = FftPlannerScalar::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            grid,
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            line: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn forward(&mut self, data: &mut [Complex64]) {
        let fft = Arc::clone(&self.forward);
        self.transform(fft.as_ref(), data);
    }

    pub fn inverse(&mut self, data: &mut [Complex64]) {
        let fft = Arc::clone(&self.inverse);
        self.transform(fft.as_ref(), data);
        let scale = 1.0 / self.grid.len() as f64;
        for z in data.iter_mut() {
            *z *= scale;
        }
    }

    fn transform(&mut self, fft: &dyn Fft<f64>, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.grid.len(), "buffer does not match grid");
        let n = self.grid.points_per_axis();
        let dim = self.grid.dim();

        // Last axis is contiguous: every run of n values is one line.
        fft.process_with_scratch(data, &mut self.scratch);

        for axis in 0..dim.saturating_sub(1) {
            let stride = n.pow((dim - 1 - axis) as u32);
            let outer = n.pow(axis as u32);
            for o in 0..outer {
                for inner in 0..stride {
                    let base = o * n * stride + inner;
                    for (j, slot) in self.line.iter_mut().enumerate() {
                        *slot = data[base + j * stride];
                    }
                    fft.process_with_scratch(&mut self.line, &mut self.scratch);
                    for (j, value) in self.line.iter().enumerate() {
                        data[base + j * stride] = *value;
                    }
                }
            }
        }
    }
}
