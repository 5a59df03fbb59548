//! Schmidt decomposition of the cropped biphoton amplitude and the
//! effective number of independent mode pairs.
//!
//! The source width `σ` used throughout the crate is the standard deviation
//! of the coincidence distribution `|Ψ|²` in `k_S + k_AS`. The amplitude
//! sampled on the grid is therefore `exp(-(k_S + k_AS)² / 4σ²)`, i.e. the
//! Gaussian amplitude with width `√2 σ`.

use std::f64::consts::SQRT_2;
use std::io::{self, Write};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::model::{self, ModelError};

pub const DEFAULT_GRID_N: usize = 1024;

/// Singular values below this are treated as numerical noise.
pub const LAMBDA_FLOOR: f64 = 1e-12;

/// Minimum samples per `σ` for a resolved grid.
const MIN_SAMPLES_PER_SIGMA: f64 = 4.0;

const SVD_EPS: f64 = 1e-14;
const SVD_MAX_ITER: usize = 10_000;

#[derive(Debug, Error)]
pub enum SchmidtError {
    #[error("grid needs at least 2 samples per axis, got {0}x{1}")]
    GridTooSmall(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("amplitude grid has zero norm")]
    ZeroNorm,
    #[error("SVD did not converge for {rows}x{cols} grid (sigma={sigma}, kappa={kappa})")]
    NoConvergence {
        rows: usize,
        cols: usize,
        sigma: f64,
        kappa: f64,
    },
}

/// Normalised amplitude sampled on a uniform grid over `[-κ/2, κ/2]` in
/// each variable. Rows index `k_S`, columns `k_AS`.
#[derive(Debug, Clone)]
pub struct AmplitudeGrid {
    pub values: DMatrix<f64>,
    pub axis_s: Vec<f64>,
    pub axis_as: Vec<f64>,
    pub sigma: f64,
    pub kappa_s: f64,
    pub kappa_as: f64,
}

impl AmplitudeGrid {
    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    /// True when either axis has fewer than four samples per `σ`.
    pub fn under_resolved(&self) -> bool {
        samples_per_sigma(self.kappa_s, self.axis_s.len(), self.sigma) < MIN_SAMPLES_PER_SIGMA
            || samples_per_sigma(self.kappa_as, self.axis_as.len(), self.sigma) < MIN_SAMPLES_PER_SIGMA
    }
}

fn samples_per_sigma(kappa: f64, n: usize, sigma: f64) -> f64 {
    sigma / (kappa / (n - 1) as f64)
}

#[derive(Debug, Clone)]
pub struct SchmidtResult {
    /// Normalised singular values, descending, `Σλ² = 1`.
    pub lambdas: Vec<f64>,
    /// `1 / Σλ⁴`
    pub mode_number: f64,
    pub grid_n: (usize, usize),
}

/// Schmidt modes with their weights.
#[derive(Debug, Clone)]
pub struct SchmidtModes {
    pub lambdas: Vec<f64>,
    /// Columns are `u_j(k_S)`.
    pub signal: DMatrix<f64>,
    /// Columns are `v_j(k_AS)`.
    pub idler: DMatrix<f64>,
}

fn uniform_axis(kappa: f64, n: usize) -> Vec<f64> {
    let step = kappa / (n - 1) as f64;
    (0..n).map(|i| -0.5 * kappa + step * i as f64).collect()
}

/// Square `n × n` grid over a window of side `κ`.
pub fn build_amplitude_grid(sigma: f64, kappa: f64, n: usize) -> Result<AmplitudeGrid, SchmidtError> {
    build_rectangular_grid(sigma, kappa, n, kappa, n)
}

/// Grid with independent extents and sample counts for the two arms.
pub fn build_rectangular_grid(
    sigma: f64,
    kappa_s: f64,
    n_s: usize,
    kappa_as: f64,
    n_as: usize,
) -> Result<AmplitudeGrid, SchmidtError> {
    if n_s < 2 || n_as < 2 {
        return Err(SchmidtError::GridTooSmall(n_s, n_as));
    }
    model::positive("sigma", sigma)?;
    model::positive("kappa_s", kappa_s)?;
    model::positive("kappa_as", kappa_as)?;
    let axis_s = uniform_axis(kappa_s, n_s);
    let axis_as = uniform_axis(kappa_as, n_as);
    let width = SQRT_2 * sigma;
    let mut values = DMatrix::zeros(n_s, n_as);
    for (j, &k_as) in axis_as.iter().enumerate() {
        for (i, &k_s) in axis_s.iter().enumerate() {
            values[(i, j)] = model::biphoton_amplitude(k_s, k_as, width)?;
        }
    }
    let norm = values.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(SchmidtError::ZeroNorm);
    }
    values /= norm;
    let grid = AmplitudeGrid {
        values,
        axis_s,
        axis_as,
        sigma,
        kappa_s,
        kappa_as,
    };
    if grid.under_resolved() {
        log::warn!(
            "amplitude grid {}x{} resolves sigma={} with fewer than {} samples",
            n_s,
            n_as,
            sigma,
            MIN_SAMPLES_PER_SIGMA
        );
    }
    Ok(grid)
}

fn normalised_spectrum(mut s: Vec<f64>) -> Vec<f64> {
    s.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    s.iter_mut().for_each(|x| *x /= total);
    s
}

fn mode_number_from(lambdas: &[f64]) -> f64 {
    let sum4: f64 = lambdas
        .iter()
        .filter(|&&l| l >= LAMBDA_FLOOR)
        .map(|l| l.powi(4))
        .sum();
    1.0 / sum4
}

fn no_convergence(grid: &AmplitudeGrid) -> SchmidtError {
    let (rows, cols) = grid.shape();
    SchmidtError::NoConvergence {
        rows,
        cols,
        sigma: grid.sigma,
        kappa: grid.kappa_s,
    }
}

/// Singular-value spectrum and effective mode number of a grid.
pub fn schmidt_decompose(grid: &AmplitudeGrid) -> Result<SchmidtResult, SchmidtError> {
    decompose_matrix(&grid.values).ok_or_else(|| no_convergence(grid))
}

/// Decomposition of an arbitrary amplitude matrix; the matrix is
/// normalised internally. `None` if the SVD fails to converge.
pub fn decompose_matrix(values: &DMatrix<f64>) -> Option<SchmidtResult> {
    let svd = values.clone().try_svd(false, false, SVD_EPS, SVD_MAX_ITER)?;
    let lambdas = normalised_spectrum(svd.singular_values.iter().copied().collect());
    Some(SchmidtResult {
        mode_number: mode_number_from(&lambdas),
        lambdas,
        grid_n: values.shape(),
    })
}

/// Leading `count` Schmidt modes with their eigenfunctions.
pub fn schmidt_modes(grid: &AmplitudeGrid, count: usize) -> Result<SchmidtModes, SchmidtError> {
    let svd = grid
        .values
        .clone()
        .try_svd(true, true, SVD_EPS, SVD_MAX_ITER)
        .ok_or_else(|| no_convergence(grid))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    order.truncate(count);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let total: f64 = svd.singular_values.norm();
    let lambdas = order.iter().map(|&i| svd.singular_values[i] / total).collect();
    let signal = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let idler = DMatrix::from_fn(v_t.ncols(), order.len(), |r, c| v_t[(order[c], r)]);
    Ok(SchmidtModes {
        lambdas,
        signal,
        idler,
    })
}

/// Product of the per-axis mode numbers.
pub fn total_mode_number(mx: f64, my: f64) -> f64 {
    mx * my
}

/// Mode number at resolution `n` and `2n`, for a convergence check.
#[derive(Debug, Clone, Copy)]
pub struct Convergence {
    pub coarse: f64,
    pub fine: f64,
}

impl Convergence {
    pub fn relative_change(&self) -> f64 {
        (self.fine - self.coarse).abs() / self.fine
    }
}

pub fn mode_number_convergence(sigma: f64, kappa: f64, n: usize) -> Result<Convergence, SchmidtError> {
    let coarse = schmidt_decompose(&build_amplitude_grid(sigma, kappa, n)?)?.mode_number;
    let fine = schmidt_decompose(&build_amplitude_grid(sigma, kappa, 2 * n)?)?.mode_number;
    Ok(Convergence { coarse, fine })
}

/// Writes the spectrum as a two-column `index lambda` table.
pub fn write_spectrum<W: Write>(mut out: W, result: &SchmidtResult, header: &[String]) -> io::Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "# grid={}x{}", result.grid_n.0, result.grid_n.1)?;
    writeln!(out, "# mode_number={}", result.mode_number)?;
    writeln!(out, "# columns=index,lambda")?;
    for (i, l) in result.lambdas.iter().enumerate() {
        writeln!(out, "{i},{l}")?;
    }
    Ok(())
}
