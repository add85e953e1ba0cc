//! Block LOBPCG for the lowest eigenpairs of the real symmetric grid
//! Hamiltonian, preconditioned with the shifted inverse kinetic symbol.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fourier::Fourier;
use crate::hamiltonian::RealField;

/// `-Δ + V` acting on real vectors (Euclidean inner product).
pub(crate) struct GridOperator {
    fourier: Fourier,
    k2: Vec<f64>,
    v: Vec<f64>,
    buf: Vec<Complex64>,
}

impl GridOperator {
    pub(crate) fn new(v: &RealField) -> Self {
        let grid = v.grid();
        Self {
            fourier: Fourier::new(grid),
            k2: grid.k_squared(),
            v: v.values().to_vec(),
            buf: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.v.len()
    }

    fn multiplier(&mut self, x: &[f64], out: &mut [f64], symbol: impl Fn(f64) -> f64) {
        for (b, xi) in self.buf.iter_mut().zip(x) {
            *b = Complex64::new(*xi, 0.0);
        }
        self.fourier.forward(&mut self.buf);
        for (b, k) in self.buf.iter_mut().zip(&self.k2) {
            *b *= symbol(*k);
        }
        self.fourier.inverse(&mut self.buf);
        for (o, b) in out.iter_mut().zip(&self.buf) {
            *o = b.re;
        }
    }

    pub(crate) fn apply(&mut self, x: &[f64], out: &mut [f64]) {
        self.multiplier(x, out, |k| k);
        for ((o, xi), vi) in out.iter_mut().zip(x).zip(&self.v) {
            *o += vi * xi;
        }
    }

    fn precondition(&mut self, r: &[f64], shift: f64, out: &mut [f64]) {
        self.multiplier(r, out, |k| 1.0 / (k + shift));
    }
}

pub(crate) struct EigenOutcome {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthonormalizes `candidate` against `basis` (two Gram-Schmidt passes).
/// Returns `None` when the candidate is numerically inside the span.
fn orthonormalize_against(basis: &[Vec<f64>], mut candidate: Vec<f64>) -> Option<Vec<f64>> {
    let original = norm(&candidate);
    if original == 0.0 || !original.is_finite() {
        return None;
    }
    for _ in 0..2 {
        for b in basis {
            let c = dot(b, &candidate);
            for (x, y) in candidate.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
    }
    let remaining = norm(&candidate);
    if remaining < 1e-10 * original {
        return None;
    }
    candidate.iter_mut().for_each(|x| *x /= remaining);
    Some(candidate)
}

/// Smooth pseudo-random start vectors, reproducible from `seed`.
pub(crate) fn start_vectors(op: &mut GridOperator, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = op.len();
    let mut out = Vec::with_capacity(count);
    let mut smooth = vec![0.0; n];
    while out.len() < count {
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        op.precondition(&raw, 1.0, &mut smooth);
        if let Some(v) = orthonormalize_against(&out, smooth.clone()) {
            out.push(v);
        }
    }
    out
}

pub(crate) struct LobpcgSettings {
    /// Residual target for columns whose Ritz value is below `loose_above`.
    pub tol: f64,
    /// Residual target for the remaining (guard) columns.
    pub loose_tol: f64,
    pub loose_above: f64,
    pub max_iter: usize,
}

/// Lowest `start.len()` eigenpairs of `op`.
pub(crate) fn lobpcg(
    op: &mut GridOperator,
    start: Vec<Vec<f64>>,
    settings: &LobpcgSettings,
) -> Result<EigenOutcome> {
    let n = op.len();
    let m = start.len();
    let mut x: Vec<Vec<f64>> = Vec::with_capacity(m);
    for v in start {
        if let Some(v) = orthonormalize_against(&x, v) {
            x.push(v);
        }
    }
    if x.len() < m {
        return Err(Error::Domain("linearly dependent start vectors".into()));
    }
    let mut p: Vec<Vec<f64>> = Vec::new();
    let mut theta = vec![0.0; m];
    let mut residuals = vec![f64::INFINITY; m];
    let mut scratch = vec![0.0; n];

    for iter in 0..settings.max_iter {
        // Basis S = [X, W, P], orthonormal.
        let mut basis = x.clone();
        let mut a_basis: Vec<Vec<f64>> = basis
            .iter()
            .map(|b| {
                let mut out = vec![0.0; n];
                op.apply(b, &mut out);
                out
            })
            .collect();

        if iter > 0 {
            let mut active = Vec::new();
            for i in 0..m {
                let target = if theta[i] < settings.loose_above {
                    settings.tol
                } else {
                    settings.loose_tol
                };
                if residuals[i] > target {
                    active.push(i);
                }
            }
            if active.is_empty() {
                return Ok(EigenOutcome {
                    values: theta,
                    vectors: x,
                    residuals,
                });
            }
            for &i in &active {
                let r: Vec<f64> = a_basis[i]
                    .iter()
                    .zip(&x[i])
                    .map(|(ax, xv)| ax - theta[i] * xv)
                    .collect();
                let shift = (-theta[i]).max(0.0) + 0.1;
                op.precondition(&r, shift, &mut scratch);
                if let Some(w) = orthonormalize_against(&basis, scratch.clone()) {
                    basis.push(w);
                }
            }
            for pv in p.drain(..) {
                if let Some(pv) = orthonormalize_against(&basis, pv) {
                    basis.push(pv);
                }
            }
            for b in &basis[m..] {
                let mut out = vec![0.0; n];
                op.apply(b, &mut out);
                a_basis.push(out);
            }
        }

        let s = basis.len();
        let mut gram = DMatrix::<f64>::zeros(s, s);
        for i in 0..s {
            for j in i..s {
                let g = 0.5 * (dot(&basis[i], &a_basis[j]) + dot(&basis[j], &a_basis[i]));
                gram[(i, j)] = g;
                gram[(j, i)] = g;
            }
        }
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

        let mut new_x = Vec::with_capacity(m);
        let mut new_ax = Vec::with_capacity(m);
        let mut new_p = Vec::with_capacity(m);
        for (col, &k) in order.iter().take(m).enumerate() {
            theta[col] = eig.eigenvalues[k];
            let coeffs = eig.eigenvectors.column(k);
            let mut xv = vec![0.0; n];
            let mut axv = vec![0.0; n];
            let mut pv = vec![0.0; n];
            for (j, c) in coeffs.iter().enumerate() {
                for t in 0..n {
                    xv[t] += c * basis[j][t];
                    axv[t] += c * a_basis[j][t];
                }
                if j >= m {
                    for t in 0..n {
                        pv[t] += c * basis[j][t];
                    }
                }
            }
            new_x.push(xv);
            new_ax.push(axv);
            if s > m {
                new_p.push(pv);
            }
        }
        for i in 0..m {
            let nx = norm(&new_x[i]);
            let r: f64 = new_ax[i]
                .iter()
                .zip(&new_x[i])
                .map(|(a, b)| (a - theta[i] * b).powi(2))
                .sum::<f64>()
                .sqrt();
            residuals[i] = r / nx;
        }
        x = new_x;
        p = new_p;
    }

    let worst = residuals.iter().cloned().fold(0.0, f64::max);
    Err(Error::NoConvergence {
        iterations: settings.max_iter,
        residual: worst,
    })
}
