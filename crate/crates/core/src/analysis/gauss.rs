//! Two-dimensional Gaussian fit to a centre-of-mass coincidence histogram.

use nalgebra::DMatrix;

use super::fit::{levenberg_marquardt, LeastSquares, LmOptions};
use super::histogram::CoincidenceHistogram;
use super::AnalysisError;

/// Minimum coincidences inside the histogram range for a fit.
pub const MIN_FIT_COUNTS: u64 = 1000;

pub const AMPLITUDE: usize = 0;
pub const CENTER_X: usize = 1;
pub const CENTER_Y: usize = 2;
pub const SIGMA_X: usize = 3;
pub const SIGMA_Y: usize = 4;
pub const OFFSET: usize = 5;
pub const PARAM_NAMES: [&str; 6] = ["amplitude", "center_x", "center_y", "sigma_x", "sigma_y", "offset"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub center: (f64, f64),
    pub sigma: (f64, f64),
    pub offset: f64,
}

#[derive(Debug, Clone)]
pub struct GaussianFit {
    /// `[amplitude, center_x, center_y, sigma_x, sigma_y, offset]`
    pub params: [f64; 6],
    pub stderr: [f64; 6],
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
}

impl GaussianFit {
    pub fn sigma(&self) -> (f64, f64) {
        (self.params[SIGMA_X], self.params[SIGMA_Y])
    }

    pub fn center(&self) -> (f64, f64) {
        (self.params[CENTER_X], self.params[CENTER_Y])
    }
}

/// Gaussian peak on a flat pedestal evaluated at bin centres.
struct Peak<'a> {
    xs: Vec<f64>,
    ys: Vec<f64>,
    values: &'a [f64],
    inv_sigma: Vec<f64>,
}

impl Peak<'_> {
    fn model(p: &[f64], x: f64, y: f64) -> (f64, f64) {
        let dx = (x - p[CENTER_X]) / p[SIGMA_X];
        let dy = (y - p[CENTER_Y]) / p[SIGMA_Y];
        let e = (-0.5 * (dx * dx + dy * dy)).exp();
        (p[AMPLITUDE] * e + p[OFFSET], e)
    }

    fn point(&self, i: usize) -> (f64, f64) {
        (self.xs[i % self.xs.len()], self.ys[i / self.xs.len()])
    }
}

impl LeastSquares for Peak<'_> {
    fn n_params(&self) -> usize {
        6
    }

    fn n_residuals(&self) -> usize {
        self.values.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let (x, y) = self.point(i);
            *o = (Self::model(p, x, y).0 - self.values[i]) * self.inv_sigma[i];
        }
    }

    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) {
        for i in 0..self.values.len() {
            let (x, y) = self.point(i);
            let (_, e) = Self::model(p, x, y);
            let w = self.inv_sigma[i];
            let (sx, sy) = (p[SIGMA_X], p[SIGMA_Y]);
            let (dx, dy) = (x - p[CENTER_X], y - p[CENTER_Y]);
            let ae = p[AMPLITUDE] * e;
            out[(i, AMPLITUDE)] = e * w;
            out[(i, CENTER_X)] = ae * dx / (sx * sx) * w;
            out[(i, CENTER_Y)] = ae * dy / (sy * sy) * w;
            out[(i, SIGMA_X)] = ae * dx * dx / (sx * sx * sx) * w;
            out[(i, SIGMA_Y)] = ae * dy * dy / (sy * sy * sy) * w;
            out[(i, OFFSET)] = w;
        }
    }
}

/// Moment-based estimate of the peak: pedestal from the border bins,
/// centre and width from the first and second moments of the excess.
pub fn moment_estimate(values: &[f64], xs: &[f64], ys: &[f64]) -> Option<MomentEstimate> {
    let (nx, ny) = (xs.len(), ys.len());
    let mut border = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
                border.push(values[j * nx + i]);
            }
        }
    }
    let offset = border.iter().sum::<f64>() / border.len() as f64;
    let (mut w, mut mx, mut my) = (0.0, 0.0, 0.0);
    for j in 0..ny {
        for i in 0..nx {
            let e = (values[j * nx + i] - offset).max(0.0);
            w += e;
            mx += e * xs[i];
            my += e * ys[j];
        }
    }
    if w <= 0.0 {
        return None;
    }
    mx /= w;
    my /= w;
    let (mut vx, mut vy) = (0.0, 0.0);
    for j in 0..ny {
        for i in 0..nx {
            let e = (values[j * nx + i] - offset).max(0.0);
            vx += e * (xs[i] - mx).powi(2);
            vy += e * (ys[j] - my).powi(2);
        }
    }
    Some(MomentEstimate {
        center: (mx, my),
        sigma: ((vx / w).sqrt(), (vy / w).sqrt()),
        offset,
    })
}

/// Weighted fit of `A exp(-(x-x₀)²/2σx² - (y-y₀)²/2σy²) + B` to binned values.
///
/// Weights are Poisson: a first pass uses the observed counts (floored at 1)
/// as variances, a second pass the first-pass model. Uncertainties are the
/// square roots of the covariance diagonal.
pub fn fit_gaussian_2d(values: &[f64], xs: &[f64], ys: &[f64]) -> Result<GaussianFit, AnalysisError> {
    let moments = moment_estimate(values, xs, ys).ok_or(AnalysisError::InsufficientData {
        needed: 1,
        found: 0,
    })?;
    let peak_value = values.iter().cloned().fold(f64::MIN, f64::max);
    let init = [
        peak_value - moments.offset,
        moments.center.0,
        moments.center.1,
        moments.sigma.0.max(1e-6),
        moments.sigma.1.max(1e-6),
        moments.offset,
    ];
    let span_x = xs[xs.len() - 1] - xs[0];
    let span_y = ys[ys.len() - 1] - ys[0];
    let mut opts = LmOptions::unbounded(6);
    opts.lower[SIGMA_X] = 1e-9 * span_x;
    opts.lower[SIGMA_Y] = 1e-9 * span_y;
    opts.upper[SIGMA_X] = 10.0 * span_x;
    opts.upper[SIGMA_Y] = 10.0 * span_y;
    opts.lower[AMPLITUDE] = 0.0;

    let mut problem = Peak {
        xs: xs.to_vec(),
        ys: ys.to_vec(),
        values,
        inv_sigma: values.iter().map(|&v| 1.0 / v.max(1.0).sqrt()).collect(),
    };
    let first = levenberg_marquardt(&problem, &init, &opts);
    if !first.converged {
        return Err(AnalysisError::FitFailed {
            iterations: first.iterations,
            fallback: moments,
        });
    }
    problem.inv_sigma = (0..values.len())
        .map(|i| {
            let (x, y) = problem.point(i);
            1.0 / Peak::model(&first.params, x, y).0.max(1.0).sqrt()
        })
        .collect();
    let fit = levenberg_marquardt(&problem, &first.params, &opts);
    if !fit.converged {
        return Err(AnalysisError::FitFailed {
            iterations: first.iterations + fit.iterations,
            fallback: moments,
        });
    }
    let mut params = [0.0; 6];
    params.copy_from_slice(&fit.params);
    let stderr = std::array::from_fn(|i| fit.stderr(i));
    Ok(GaussianFit {
        params,
        stderr,
        covariance: fit.covariance,
        chi2: fit.chi2,
        dof: fit.dof,
        iterations: first.iterations + fit.iterations,
    })
}

/// Fits the peak of a centre-of-mass histogram.
pub fn fit_histogram(hist: &CoincidenceHistogram) -> Result<GaussianFit, AnalysisError> {
    let found = hist.in_range();
    if found < MIN_FIT_COUNTS {
        return Err(AnalysisError::InsufficientData {
            needed: MIN_FIT_COUNTS,
            found,
        });
    }
    let xs: Vec<f64> = (0..hist.x.bins).map(|i| hist.x.center(i)).collect();
    let ys: Vec<f64> = (0..hist.y.bins).map(|i| hist.y.center(i)).collect();
    let values: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    fit_gaussian_2d(&values, &xs, &ys)
}
