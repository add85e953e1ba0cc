//! Uniform periodic grids on `[-L, L)^N`, wavefunctions sampled on them, and
//! the quadrature-weighted inner product and norms.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used to decide whether a state counts as normalized.
pub const NORMALIZED_TOL: f64 = 1e-12;

/// Uniform tensor grid with `points_per_axis` nodes per axis on `[-L, L)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid {
    dim: usize,
    points_per_axis: usize,
    half_extent: f64,
}

/// Serialized form of [`Grid`]; validated on conversion.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub points_per_axis: usize,
    pub half_extent: f64,
}

impl TryFrom<GridSpec> for Grid {
    type Error = Error;

    fn try_from(spec: GridSpec) -> Result<Self> {
        Grid::new(spec.dim, spec.points_per_axis, spec.half_extent)
    }
}

impl From<Grid> for GridSpec {
    fn from(grid: Grid) -> Self {
        GridSpec {
            dim: grid.dim,
            points_per_axis: grid.points_per_axis,
            half_extent: grid.half_extent,
        }
    }
}

impl Grid {
    pub fn new(dim: usize, points_per_axis: usize, half_extent: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!(
                "dim must be 1, 2 or 3, got {dim}"
            )));
        }
        if points_per_axis < 2 || !points_per_axis.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points_per_axis must be a power of two >= 2, got {points_per_axis}"
            )));
        }
        if !(half_extent.is_finite() && half_extent > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "half_extent must be positive and finite, got {half_extent}"
            )));
        }
        Ok(Self {
            dim,
            points_per_axis,
            half_extent,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn half_extent(&self) -> f64 {
        self.half_extent
    }

    /// Node spacing `2L / n`. Exact because `n` is a power of two.
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_extent / self.points_per_axis as f64
    }

    /// Quadrature weight `spacing^dim` attached to every cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Total number of cells, `points_per_axis^dim`.
    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Node coordinates along one axis.
    pub fn axis(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.points_per_axis)
            .map(|i| -self.half_extent + i as f64 * h)
            .collect()
    }

    /// Angular wavenumbers along one axis in FFT order.
    pub fn axis_wavenumbers(&self) -> Vec<f64> {
        let n = self.points_per_axis as isize;
        let dk = PI / self.half_extent;
        (0..n)
            .map(|j| {
                let m = if j < n / 2 { j } else { j - n };
                m as f64 * dk
            })
            .collect()
    }

    /// Largest representable wavenumber `π / spacing`.
    pub fn max_wavenumber(&self) -> f64 {
        PI / self.spacing()
    }

    /// Multi-index of a flat row-major index.
    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for axis in (0..self.dim).rev() {
            out[axis] = flat % self.points_per_axis;
            flat /= self.points_per_axis;
        }
    }

    /// Coordinates of the node with flat index `flat`.
    pub fn coords(&self, flat: usize, out: &mut [f64]) {
        let mut idx = [0usize; 3];
        self.unravel(flat, &mut idx[..self.dim]);
        let h = self.spacing();
        for axis in 0..self.dim {
            out[axis] = -self.half_extent + idx[axis] as f64 * h;
        }
    }

    /// `|k|^2` for every Fourier mode, flattened row-major.
    pub fn k_squared(&self) -> Vec<f64> {
        let k = self.axis_wavenumbers();
        let mut idx = [0usize; 3];
        (0..self.len())
            .map(|flat| {
                self.unravel(flat, &mut idx[..self.dim]);
                idx[..self.dim].iter().map(|&i| k[i] * k[i]).sum()
            })
            .collect()
    }

    /// Evaluates `f` at every node.
    pub fn map_nodes<T>(&self, mut f: impl FnMut(&[f64]) -> T) -> Vec<T> {
        let mut x = [0.0; 3];
        (0..self.len())
            .map(|flat| {
                self.coords(flat, &mut x);
                f(&x[..self.dim])
            })
            .collect()
    }

    pub(crate) fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// Complex amplitudes on a [`Grid`], flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveFunction {
    grid: Grid,
    amplitudes: Vec<Complex64>,
}

impl WaveFunction {
    pub fn new(grid: Grid, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} amplitudes for a grid of {} cells",
                amplitudes.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, amplitudes })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            amplitudes: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl FnMut(&[f64]) -> Complex64) -> Self {
        Self {
            grid,
            amplitudes: grid.map_nodes(f),
        }
    }

    /// Lifts a real array (e.g. an eigenvector) to a wavefunction.
    pub fn from_real(grid: Grid, values: &[f64]) -> Result<Self> {
        Self::new(
            grid,
            values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amplitudes
    }

    /// Squared L2 norm, `spacing^dim * sum |psi_k|^2`.
    pub fn norm_sqr(&self) -> f64 {
        self.grid.cell_volume() * self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    pub fn norm(&self) -> f64 {
        l2_norm_scaled(&self.amplitudes, self.grid.cell_volume())
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm() - 1.0).abs() <= NORMALIZED_TOL
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            grid: self.grid,
            amplitudes: self.amplitudes.iter().map(|z| z * factor).collect(),
        }
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: Complex64, other: &WaveFunction) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            amplitudes: self
                .amplitudes
                .iter()
                .zip(&other.amplitudes)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        })
    }

    /// Pointwise product with a real field given as raw samples.
    pub fn multiplied_by(&self, field: &[f64]) -> Self {
        assert_eq!(field.len(), self.amplitudes.len());
        Self {
            grid: self.grid,
            amplitudes: self
                .amplitudes
                .iter()
                .zip(field)
                .map(|(z, f)| z * f)
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest modulus over the outermost layer of nodes on every axis.
    pub fn boundary_amplitude(&self) -> f64 {
        let n = self.grid.points_per_axis();
        let dim = self.grid.dim();
        let mut idx = [0usize; 3];
        let mut worst: f64 = 0.0;
        for (flat, z) in self.amplitudes.iter().enumerate() {
            self.grid.unravel(flat, &mut idx[..dim]);
            if idx[..dim].iter().any(|&i| i == 0 || i == n - 1) {
                worst = worst.max(z.norm());
            }
        }
        worst
    }
}

/// Weighted L2 norm computed with max-abs prescaling so tiny or huge
/// amplitudes neither underflow nor overflow.
fn l2_norm_scaled(values: &[Complex64], weight: f64) -> f64 {
    let peak = values.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return 0.0;
    }
    let sum: f64 = values.iter().map(|z| (z / peak).norm_sqr()).sum();
    peak * (weight * sum).sqrt()
}

/// Hermitian product `<a, b> = spacing^dim * sum a_k conj(b_k)`.
pub fn inner_product(a: &WaveFunction, b: &WaveFunction) -> Result<Complex64> {
    a.grid.ensure_same(&b.grid)?;
    Ok(raw_inner(&a.amplitudes, &b.amplitudes) * a.grid.cell_volume())
}

pub(crate) fn raw_inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        // x * conj(y)
        re += x.re * y.re + x.im * y.im;
        im += x.im * y.re - x.re * y.im;
    }
    Complex64::new(re, im)
}

/// Discrete `L^p` norm; `p = f64::INFINITY` gives the max modulus.
pub fn lp_norm(psi: &WaveFunction, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::Domain(format!("L^p norm needs p >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(psi.max_abs());
    }
    if p == 2.0 {
        return Ok(psi.norm());
    }
    let peak = psi.max_abs();
    if peak == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = psi
        .amplitudes
        .iter()
        .map(|z| (z.norm() / peak).powf(p))
        .sum();
    Ok(peak * (psi.grid.cell_volume() * sum).powf(1.0 / p))
}

/// Rescales `psi` to unit L2 norm.
pub fn normalize(psi: &WaveFunction) -> Result<WaveFunction> {
    let norm = psi.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegenerateState(format!(
            "cannot normalize a state of norm {norm}"
        )));
    }
    Ok(psi.scaled(Complex64::new(1.0 / norm, 0.0)))
}

const SNAPSHOT_HEADER_BYTES: usize = 24;

/// Writes the binary snapshot: `{dim: u64, points_per_axis: u64,
/// half_extent: f64}` little-endian, then interleaved `(re, im)` f64 values.
pub fn write_snapshot(psi: &WaveFunction, mut out: impl Write) -> Result<()> {
    let grid = psi.grid();
    let mut buf = Vec::with_capacity(SNAPSHOT_HEADER_BYTES + 16 * grid.len());
    buf.extend_from_slice(&(grid.dim() as u64).to_le_bytes());
    buf.extend_from_slice(&(grid.points_per_axis() as u64).to_le_bytes());
    buf.extend_from_slice(&grid.half_extent().to_le_bytes());
    for z in psi.amplitudes() {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_snapshot(mut input: impl Read) -> Result<WaveFunction> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < SNAPSHOT_HEADER_BYTES {
        return Err(Error::Format("snapshot shorter than its header".into()));
    }
    let word = |i: usize| -> [u8; 8] { bytes[8 * i..8 * i + 8].try_into().unwrap() };
    let dim = u64::from_le_bytes(word(0)) as usize;
    let points = u64::from_le_bytes(word(1)) as usize;
    let half_extent = f64::from_le_bytes(word(2));
    let grid = Grid::new(dim, points, half_extent)?;
    let body = &bytes[SNAPSHOT_HEADER_BYTES..];
    if body.len() != 16 * grid.len() {
        return Err(Error::Format(format!(
            "snapshot body has {} bytes, expected {}",
            body.len(),
            16 * grid.len()
        )));
    }
    let amplitudes = body
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    WaveFunction::new(grid, amplitudes)
}

/// Lossy CSV export with columns `x[,y[,z]],re,im` for plotting.
pub fn write_csv(psi: &WaveFunction, mut out: impl Write) -> Result<()> {
    let grid = psi.grid();
    let names = ["x", "y", "z"];
    writeln!(out, "{},re,im", names[..grid.dim()].join(","))?;
    let mut x = [0.0; 3];
    for (flat, z) in psi.amplitudes().iter().enumerate() {
        grid.coords(flat, &mut x);
        for xi in &x[..grid.dim()] {
            write!(out, "{xi:.10e},")?;
        }
        writeln!(out, "{:.10e},{:.10e}", z.re, z.im)?;
    }
    Ok(())
}
