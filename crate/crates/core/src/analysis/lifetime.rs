//! Fit of `g²(t)` over storage time with a beating two-component retrieval.
//!
//! `g²(t) = 1 + η_AS χ(t) f / (p η_AS χ(t) + ξ)` with
//! `χ(t) = |α₁ e^{-t²/2τ₁²} + α₂ e^{iωt} e^{-t²/2τ₂²}|²`.
//!
//! Scaling both α's by `s` and ξ by `s²` leaves `g²` unchanged, so ξ is
//! held fixed unless the caller fixes α₁ instead.

use nalgebra::DMatrix;

use super::fit::{levenberg_marquardt, LeastSquares, LmOptions};
use super::{AnalysisError, Measurement};
use crate::model::{chi_r_of_t, MemoryParams};

pub const ALPHA1: usize = 0;
pub const ALPHA2: usize = 1;
pub const TAU1: usize = 2;
pub const TAU2: usize = 3;
pub const OMEGA: usize = 4;
pub const XI: usize = 5;
pub const PARAM_NAMES: [&str; 6] = ["alpha1", "alpha2", "tau1", "tau2", "omega", "xi"];

/// Storage times needed for a fit.
pub const MIN_POINTS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifetimePoint {
    /// Storage time (μs).
    pub t: f64,
    pub g2: f64,
    pub stderr: f64,
}

/// Quantities held fixed in the fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifetimeInputs {
    pub p_mode: f64,
    pub eta_as: f64,
    pub f_kappa: f64,
    /// Spin-wave wavevector of the analysed region (mm⁻¹), reported only.
    pub region_k: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifetimeOptions {
    /// ξ used for initialisation and, when `fix_xi`, throughout.
    pub xi: f64,
    pub fix_xi: bool,
    /// Fixed α₁; required when ξ is free.
    pub alpha1: Option<f64>,
    /// Fit the single-component model (α₂ = 0, ω and τ₂ unused).
    pub force_alpha2_zero: bool,
    /// Number of spectral peaks used as starting points.
    pub starts: usize,
}

impl LifetimeOptions {
    pub fn with_xi(xi: f64) -> Self {
        LifetimeOptions {
            xi,
            fix_xi: true,
            alpha1: None,
            force_alpha2_zero: false,
            starts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifetimeFit {
    /// `[α₁, α₂, τ₁, τ₂, ω, ξ]`
    pub params: [f64; 6],
    pub stderr: [f64; 6],
    pub covariance: DMatrix<f64>,
    pub residual_norm: f64,
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
    pub converged: bool,
    /// τ₂ is not constrained by the data (α₂ tiny or forced to zero).
    pub tau2_degenerate: bool,
    pub fixed: [bool; 6],
    pub region_k: f64,
}

impl LifetimeFit {
    pub fn memory(&self) -> MemoryParams {
        MemoryParams {
            alpha1: self.params[ALPHA1],
            alpha2: self.params[ALPHA2],
            tau1: self.params[TAU1],
            tau2: self.params[TAU2],
            omega: self.params[OMEGA],
            ..MemoryParams::reference()
        }
    }

    pub fn beat_period(&self) -> Option<Measurement> {
        let w = self.params[OMEGA];
        (w > 0.0).then(|| {
            let t = std::f64::consts::TAU / w;
            Measurement::new(t, t * self.stderr[OMEGA] / w)
        })
    }

    pub fn param(&self, i: usize) -> Measurement {
        Measurement::new(self.params[i], self.stderr[i])
    }

    pub fn predict(&self, inputs: &LifetimeInputs, t: f64) -> f64 {
        g2_curve(&self.params, inputs, t)
    }
}

fn chi(p: &[f64], t: f64) -> f64 {
    let mem = MemoryParams {
        alpha1: p[ALPHA1],
        alpha2: p[ALPHA2],
        tau1: p[TAU1],
        tau2: p[TAU2],
        omega: p[OMEGA],
        ..MemoryParams::reference()
    };
    chi_r_of_t(t, &mem)
}

fn g2_curve(p: &[f64], inputs: &LifetimeInputs, t: f64) -> f64 {
    let c = chi(p, t);
    let denom = inputs.p_mode * inputs.eta_as * c + p[XI];
    if denom <= 0.0 {
        return f64::INFINITY;
    }
    1.0 + inputs.eta_as * c * inputs.f_kappa / denom
}

struct Curve<'a> {
    points: &'a [LifetimePoint],
    inputs: LifetimeInputs,
}

impl LeastSquares for Curve<'_> {
    fn n_params(&self) -> usize {
        6
    }

    fn n_residuals(&self) -> usize {
        self.points.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (o, pt) in out.iter_mut().zip(self.points) {
            *o = (g2_curve(p, &self.inputs, pt.t) - pt.g2) / pt.stderr;
        }
    }
}

/// Inverts the `g²` relation for χ at a given ξ.
fn invert(g2: f64, inputs: &LifetimeInputs, xi: f64) -> Option<f64> {
    let excess = g2 - 1.0;
    let d = inputs.eta_as * (inputs.f_kappa - excess * inputs.p_mode);
    (excess > 0.0 && d > 0.0).then(|| excess * xi / d)
}

/// Weighted straight line `y = a + b x`.
fn line_fit(x: &[f64], y: &[f64], w: &[f64]) -> Option<(f64, f64)> {
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y).sum();
    let det = sw * sxx - sx * sx;
    (det.abs() > 0.0).then(|| ((sxx * sy - sx * sxy) / det, (sw * sxy - sx * sy) / det))
}

/// Candidate angular frequencies ranked by periodogram power of `r`.
fn spectral_peaks(t: &[f64], r: &[f64], count: usize) -> Vec<(f64, f64)> {
    let span = t.last().unwrap() - t[0];
    let mut dts: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
    dts.sort_by(f64::total_cmp);
    let dt = dts.get(dts.len() / 2).copied().unwrap_or(span);
    let (lo, hi) = (std::f64::consts::PI / span, std::f64::consts::PI / dt);
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    const STEPS: usize = 4000;
    let power: Vec<(f64, f64, f64)> = (0..=STEPS)
        .map(|i| {
            let w = lo + (hi - lo) * i as f64 / STEPS as f64;
            let (mut c, mut s) = (0.0, 0.0);
            for (&tk, &rk) in t.iter().zip(r) {
                c += (rk - mean) * (w * tk).cos();
                s += (rk - mean) * (w * tk).sin();
            }
            (w, c * c + s * s, 2.0 * c.hypot(s) / r.len() as f64)
        })
        .collect();
    let mut peaks: Vec<(f64, f64, f64)> = (1..STEPS)
        .filter(|&i| power[i].1 >= power[i - 1].1 && power[i].1 >= power[i + 1].1)
        .map(|i| power[i])
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    peaks.into_iter().take(count).map(|(w, _, amp)| (w, amp)).collect()
}

/// Weighted least-squares fit of `g²(t)`.
///
/// Initial values: χ from inverting each point, τ₁ and α₁ from a straight
/// line through `ln χ` against `t²`, ω and α₂ from the strongest periodogram
/// peaks of the envelope-normalised residual. Each peak seeds one fit and
/// the lowest χ² wins.
pub fn fit_lifetime(points: &[LifetimePoint], inputs: &LifetimeInputs, opts: &LifetimeOptions) -> Result<LifetimeFit, AnalysisError> {
    if points.len() < MIN_POINTS {
        return Err(AnalysisError::InsufficientData {
            needed: MIN_POINTS as u64,
            found: points.len() as u64,
        });
    }
    if !opts.fix_xi && opts.alpha1.is_none() {
        return Err(AnalysisError::Invalid("with xi free, alpha1 must be fixed: the pair is degenerate".into()));
    }
    if points.iter().any(|p| !(p.stderr > 0.0) || !p.t.is_finite() || p.t < 0.0 || !p.g2.is_finite()) {
        return Err(AnalysisError::Invalid("points need finite t >= 0, g2 and stderr > 0".into()));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.t.total_cmp(&b.t));
    let t: Vec<f64> = pts.iter().map(|p| p.t).collect();
    let span = t[t.len() - 1] - t[0];

    let inverted: Vec<(f64, f64)> = pts
        .iter()
        .filter_map(|p| invert(p.g2, inputs, opts.xi).map(|c| (p.t, c)))
        .collect();
    let (mut alpha1, mut tau1) = (opts.alpha1.unwrap_or(0.5), span.max(1e-3));
    if inverted.len() >= 2 {
        let x: Vec<f64> = inverted.iter().map(|(t, _)| t * t).collect();
        let y: Vec<f64> = inverted.iter().map(|(_, c)| c.ln()).collect();
        if let Some((a, b)) = line_fit(&x, &y, &vec![1.0; x.len()]) {
            if opts.alpha1.is_none() {
                alpha1 = (0.5 * a).exp();
            }
            tau1 = if b < 0.0 { (-1.0 / b).sqrt() } else { 10.0 * span.max(1e-3) };
        }
    }

    let mut seeds: Vec<[f64; 6]> = Vec::new();
    let base = [alpha1, 0.0, tau1, tau1, 0.0, opts.xi];
    if opts.force_alpha2_zero || inverted.len() < MIN_POINTS {
        seeds.push(base);
    } else {
        let ti: Vec<f64> = inverted.iter().map(|(t, _)| *t).collect();
        let resid: Vec<f64> = inverted
            .iter()
            .map(|&(t, c)| {
                let env = (-t * t / (tau1 * tau1)).exp();
                c / env - alpha1 * alpha1
            })
            .collect();
        for (w, amp) in spectral_peaks(&ti, &resid, opts.starts.max(1)) {
            let mut s = base;
            s[OMEGA] = w;
            s[ALPHA2] = (amp / (2.0 * alpha1.max(1e-12))).max(1e-4);
            seeds.push(s);
        }
        if seeds.is_empty() {
            seeds.push(base);
        }
    }

    let mut lm = LmOptions::unbounded(6);
    lm.lower = vec![0.0, 0.0, 1e-9, 1e-9, 0.0, 0.0];
    lm.fixed[XI] = opts.fix_xi;
    lm.fixed[ALPHA1] = opts.alpha1.is_some();
    if opts.force_alpha2_zero {
        lm.fixed[ALPHA2] = true;
        lm.fixed[TAU2] = true;
        lm.fixed[OMEGA] = true;
    }
    let problem = Curve { points: &pts, inputs: *inputs };
    let best = seeds
        .iter()
        .map(|s| levenberg_marquardt(&problem, s, &lm))
        .min_by(|a, b| (!a.converged, a.chi2).partial_cmp(&(!b.converged, b.chi2)).unwrap_or(std::cmp::Ordering::Equal))
        .expect("at least one seed");

    let mut params = [0.0; 6];
    params.copy_from_slice(&best.params);
    let stderr: [f64; 6] = std::array::from_fn(|i| best.stderr(i));
    let tau2_rel = stderr[TAU2] / params[TAU2];
    let tau2_degenerate = opts.force_alpha2_zero || params[ALPHA2] < 0.1 * params[ALPHA1] || !(tau2_rel <= 0.25);
    let fit = LifetimeFit {
        params,
        stderr,
        covariance: best.covariance.clone(),
        residual_norm: best.chi2.sqrt(),
        chi2: best.chi2,
        dof: best.dof,
        iterations: best.iterations,
        converged: best.converged,
        tau2_degenerate,
        fixed: std::array::from_fn(|i| lm.fixed[i]),
        region_k: inputs.region_k,
    };
    if !fit.converged {
        return Err(AnalysisError::LifetimeNotConverged(Box::new(fit)));
    }
    if !opts.force_alpha2_zero && params[ALPHA2] > 0.0 && params[OMEGA] > 0.0 {
        let period = std::f64::consts::TAU / params[OMEGA];
        if span < period {
            return Err(AnalysisError::ShortSpan { span, period });
        }
    }
    Ok(fit)
}

/// `g²(t)` of the model at the given parameters, for synthetic data.
pub fn model_curve(mem: &MemoryParams, xi: f64, inputs: &LifetimeInputs, t: f64) -> f64 {
    let p = [mem.alpha1, mem.alpha2, mem.tau1, mem.tau2, mem.omega, xi];
    g2_curve(&p, inputs, t)
}
