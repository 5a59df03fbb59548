//! Closed-form physics of the multiplexed source: biphoton amplitude,
//! region-of-interest acceptance, coincidence and correlation models, and
//! the retrieval-efficiency dynamics of the memory.
//!
//! Units are fixed across the crate: wavevectors in mm⁻¹, times in μs,
//! rates in μs⁻¹, speeds in mm/μs.

use std::f64::consts::{FRAC_2_PI, PI, SQRT_2};

use thiserror::Error;

/// Proportionality constant between the Schmidt number of a cropped
/// Gaussian amplitude and the ratio `κ / 2σ`.
pub const MODE_SCALING_A: f64 = 0.565;

/// Below this `κ/σ` the acceptance uses its Taylor series.
const ACCEPTANCE_SERIES_CUTOFF: f64 = 1e-2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("{name} = {value} is outside its domain ({domain})")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("computed probability {0} exceeds 1; inputs are mutually inconsistent")]
    ProbabilityExceedsOne(f64),
    #[error("g2 model undefined: {0}")]
    Undefined(&'static str),
}

pub(crate) fn finite(name: &'static str, v: f64) -> Result<f64, ModelError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ModelError::NonFinite(name))
    }
}

pub(crate) fn positive(name: &'static str, v: f64) -> Result<f64, ModelError> {
    finite(name, v)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(ModelError::Domain {
            name,
            value: v,
            domain: "> 0",
        })
    }
}

pub(crate) fn non_negative(name: &'static str, v: f64) -> Result<f64, ModelError> {
    finite(name, v)?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(ModelError::Domain {
            name,
            value: v,
            domain: ">= 0",
        })
    }
}

pub(crate) fn probability(name: &'static str, v: f64) -> Result<f64, ModelError> {
    finite(name, v)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(ModelError::Domain {
            name,
            value: v,
            domain: "[0, 1]",
        })
    }
}

/// Distribution of singles over the field of view.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Envelope {
    #[default]
    Uniform,
    /// Gaussian weighting of the per-mode pair number, widths in mm⁻¹.
    Gaussian { width_x: f64, width_y: f64 },
}

/// Emission model of the source.
///
/// `sigma_x`/`sigma_y` are the standard deviations of the coincidence
/// distribution in the centre-of-mass variable `k_S + k_AS`, which is what
/// a Gaussian fit to measured coincidences returns.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceParams {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub fov_kappa_x: f64,
    pub fov_kappa_y: f64,
    /// Mean pair number per mode per trial.
    pub p_mode: f64,
    pub envelope: Envelope,
    /// Ensemble waist in mm, only used for the `2/w` diffraction estimate.
    pub ensemble_waist: Option<f64>,
}

impl SourceParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        positive("sigma_x", self.sigma_x)?;
        positive("sigma_y", self.sigma_y)?;
        positive("fov_kappa_x", self.fov_kappa_x)?;
        positive("fov_kappa_y", self.fov_kappa_y)?;
        non_negative("p_mode", self.p_mode)?;
        if let Envelope::Gaussian { width_x, width_y } = self.envelope {
            positive("envelope.width_x", width_x)?;
            positive("envelope.width_y", width_y)?;
        }
        if let Some(w) = self.ensemble_waist {
            positive("ensemble_waist", w)?;
        }
        Ok(())
    }

    /// Far-field wavevector spread `2/w` set by diffraction on the ensemble.
    pub fn diffraction_limit(&self) -> Option<f64> {
        self.ensemble_waist.map(|w| 2.0 / w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionParams {
    pub eta_s: f64,
    pub eta_as: f64,
    /// Retrieval efficiency at zero storage time.
    pub chi_r0: f64,
    /// Mean dark counts per frame over both arms together.
    pub dark_rate: f64,
    /// Wavevector extent of one pixel (mm⁻¹).
    pub pixel_pitch: f64,
    pub sensor_px_x: u32,
    pub sensor_px_y: u32,
}

impl DetectionParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        probability("eta_s", self.eta_s)?;
        probability("eta_as", self.eta_as)?;
        probability("chi_r0", self.chi_r0)?;
        non_negative("dark_rate", self.dark_rate)?;
        positive("pixel_pitch", self.pixel_pitch)?;
        if self.sensor_px_x == 0 || self.sensor_px_y == 0 {
            return Err(ModelError::Domain {
                name: "sensor_px",
                value: 0.0,
                domain: ">= 1",
            });
        }
        Ok(())
    }
}

/// Piecewise-linear table of the anti-Stokes noise level versus storage
/// time, clamped beyond the first and last knots.
#[derive(Debug, Clone, PartialEq)]
pub struct XiTable {
    knots: Vec<(f64, f64)>,
}

impl XiTable {
    pub fn constant(xi: f64) -> Self {
        XiTable {
            knots: vec![(0.0, xi)],
        }
    }

    pub fn from_points(mut knots: Vec<(f64, f64)>) -> Result<Self, ModelError> {
        if knots.is_empty() {
            return Err(ModelError::Undefined("empty xi table"));
        }
        for &(t, xi) in &knots {
            non_negative("xi_table.t", t)?;
            non_negative("xi_table.xi", xi)?;
        }
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(XiTable { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn at(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        let last = k[k.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        let i = k.partition_point(|&(tk, _)| tk <= t);
        let (t0, x0) = k[i - 1];
        let (t1, x1) = k[i];
        x0 + (x1 - x0) * (t - t0) / (t1 - t0)
    }
}

impl Default for XiTable {
    fn default() -> Self {
        XiTable::constant(0.0)
    }
}

/// Spin-wave dynamics of the memory.
///
/// `xi_table` holds the mean anti-Stokes noise count per mode cell per
/// frame; a region covering `m` mode cells sees `m` times that.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub tau1: f64,
    pub tau2: f64,
    /// Larmor angular frequency (rad/μs).
    pub omega: f64,
    /// Thermal atomic speed (mm/μs).
    pub v_thermal: f64,
    pub xi_table: XiTable,
}

impl MemoryParams {
    /// Amplitudes and Larmor frequency fitted in the reference experiment,
    /// with 150 μs Gaussian lifetimes.
    pub fn reference() -> Self {
        MemoryParams {
            alpha1: 0.58,
            alpha2: 0.04,
            tau1: 150.0,
            tau2: 150.0,
            omega: 2.0 * PI * 0.051,
            v_thermal: 1.45e-5,
            xi_table: XiTable::default(),
        }
    }

    /// Memory with no decay and unit retrieval shape, for idealised runs.
    pub fn ideal() -> Self {
        MemoryParams {
            alpha1: 1.0,
            alpha2: 0.0,
            tau1: f64::INFINITY,
            tau2: f64::INFINITY,
            omega: 0.0,
            v_thermal: 1.45e-5,
            xi_table: XiTable::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        non_negative("alpha1", self.alpha1)?;
        non_negative("alpha2", self.alpha2)?;
        if self.tau1.is_nan() || self.tau1 <= 0.0 {
            return Err(ModelError::Domain {
                name: "tau1",
                value: self.tau1,
                domain: "> 0",
            });
        }
        if self.tau2.is_nan() || self.tau2 <= 0.0 {
            return Err(ModelError::Domain {
                name: "tau2",
                value: self.tau2,
                domain: "> 0",
            });
        }
        non_negative("omega", self.omega)?;
        positive("v_thermal", self.v_thermal)?;
        let peak = chi_r_of_t(0.0, self);
        if peak > 1.0 {
            return Err(ModelError::Domain {
                name: "chi_R(0)",
                value: peak,
                domain: "[0, 1]",
            });
        }
        Ok(())
    }

    pub fn xi(&self, t: f64) -> f64 {
        self.xi_table.at(t)
    }

    pub fn beat_period(&self) -> f64 {
        beat_period(self.omega)
    }
}

/// Two-photon amplitude `exp(-(k_S + k_AS)² / 2σ²)`, peak-normalised to 1.
pub fn biphoton_amplitude(k_s: f64, k_as: f64, sigma: f64) -> Result<f64, ModelError> {
    finite("k_s", k_s)?;
    finite("k_as", k_as)?;
    positive("sigma", sigma)?;
    let sum = k_s + k_as;
    Ok((-sum * sum / (2.0 * sigma * sigma)).exp())
}

/// One-dimensional conditional acceptance: probability that the partner of
/// a photon found uniformly inside a window of side `κ` falls inside the
/// conjugate window, for a centre-of-mass spread `σ`.
fn acceptance_1d(x: f64) -> f64 {
    if x < ACCEPTANCE_SERIES_CUTOFF {
        // sqrt(2/pi) * x/2 * (1 - x²/12 + x⁴/120 - x⁶/1344)
        let x2 = x * x;
        let poly = 1.0 - x2 / 12.0 + x2 * x2 / 120.0 - x2 * x2 * x2 / 1344.0;
        FRAC_2_PI.sqrt() * 0.5 * x * poly
    } else {
        libm::erf(x / SQRT_2) + FRAC_2_PI.sqrt() / x * ((-0.5 * x * x).exp() - 1.0)
    }
}

/// Probability `f(κ)` that the anti-Stokes partner of a Stokes photon
/// registered in a square region of side `κ` lands in the conjugate region.
/// The two transverse axes contribute identical factors.
pub fn roi_acceptance_f(kappa: f64, sigma: f64) -> Result<f64, ModelError> {
    positive("kappa", kappa)?;
    positive("sigma", sigma)?;
    let a = acceptance_1d(kappa / sigma);
    Ok(a * a)
}

/// Acceptance for an anisotropic source: product of per-axis factors.
pub fn roi_acceptance_anisotropic(kappa: f64, sigma_x: f64, sigma_y: f64) -> Result<f64, ModelError> {
    positive("kappa", kappa)?;
    positive("sigma_x", sigma_x)?;
    positive("sigma_y", sigma_y)?;
    Ok(acceptance_1d(kappa / sigma_x) * acceptance_1d(kappa / sigma_y))
}

/// Net Stokes/anti-Stokes coincidence probability: correlated pairs that
/// survive both arms plus accidentals `p_S p_AS`.
#[allow(clippy::too_many_arguments)]
pub fn coincidence_probability(
    p_mode: f64,
    modes: f64,
    kappa: f64,
    sigma: f64,
    eta_s: f64,
    eta_as: f64,
    chi_r: f64,
    p_s: f64,
    p_as: f64,
) -> Result<f64, ModelError> {
    probability("p_mode", p_mode)?;
    finite("modes", modes)?;
    if modes < 1.0 {
        return Err(ModelError::Domain {
            name: "modes",
            value: modes,
            domain: ">= 1",
        });
    }
    probability("eta_s", eta_s)?;
    probability("eta_as", eta_as)?;
    probability("chi_r", chi_r)?;
    probability("p_s", p_s)?;
    probability("p_as", p_as)?;
    let f = roi_acceptance_f(kappa, sigma)?;
    let p = p_mode * modes * f * eta_s * eta_as * chi_r + p_s * p_as;
    if p > 1.0 {
        Err(ModelError::ProbabilityExceedsOne(p))
    } else {
        Ok(p)
    }
}

/// Cross-correlation `g²` expected for pair probability `p`, arm
/// efficiencies, retrieval `χ_R`, acceptance `f(κ)` and noise `ξ`.
pub fn g2_model(
    p: f64,
    eta_s: f64,
    eta_as: f64,
    chi_r: f64,
    f_kappa: f64,
    xi: f64,
) -> Result<f64, ModelError> {
    finite("p", p)?;
    if p <= 0.0 {
        return Err(ModelError::Undefined("pair probability must be > 0"));
    }
    probability("eta_s", eta_s)?;
    probability("eta_as", eta_as)?;
    probability("chi_r", chi_r)?;
    probability("f_kappa", f_kappa)?;
    non_negative("xi", xi)?;
    let denominator = p * eta_s * (p * eta_as * chi_r + xi);
    if denominator <= 0.0 {
        return Err(ModelError::Undefined("zero denominator"));
    }
    Ok(1.0 + p * eta_s * eta_as * chi_r * f_kappa / denominator)
}

/// Upper bound on `g²` for a two-mode squeezed vacuum with mean photon
/// number `p̄` per mode.
pub fn tmsv_g2(mean_photons: f64) -> Result<f64, ModelError> {
    positive("mean_photons", mean_photons)?;
    Ok(2.0 + 1.0 / mean_photons)
}

/// Retrieval efficiency with quantum beating between two spin-wave species.
pub fn chi_r_of_t(t: f64, mem: &MemoryParams) -> f64 {
    let g1 = gaussian_decay(t, mem.tau1);
    let g2 = gaussian_decay(t, mem.tau2);
    let a1 = mem.alpha1;
    let a2 = mem.alpha2;
    a1 * a1 * g1 * g1 + a2 * a2 * g2 * g2 + 2.0 * a1 * a2 * (mem.omega * t).cos() * g1 * g2
}

/// `exp(-t²/2τ²)`; infinite `τ` means no decay.
fn gaussian_decay(t: f64, tau: f64) -> f64 {
    if tau.is_infinite() {
        1.0
    } else {
        (-t * t / (2.0 * tau * tau)).exp()
    }
}

/// Motional decoherence rate `|K| v` of a spin wave.
pub fn decoherence_rate(k: f64, v_thermal: f64) -> f64 {
    k.abs() * v_thermal
}

/// Effective mode count of a window of side `κ` under the inverse scaling
/// law `M = A κ / 2σ`.
pub fn mode_number_scaling(kappa: f64, sigma: f64) -> f64 {
    MODE_SCALING_A * kappa / (2.0 * sigma)
}

/// Side length of one independent mode cell, `2σ / A`.
pub fn mode_cell_pitch(sigma: f64) -> f64 {
    2.0 * sigma / MODE_SCALING_A
}

pub fn beat_period(omega: f64) -> f64 {
    2.0 * PI / omega
}
