//! Streaming estimators over frame streams.
//!
//! Every count accumulator implements [`Accumulator`]: partial states built
//! over any partition of a stream merge into exactly the single-pass counts.

use thiserror::Error;

use crate::sim::{fold_simulation, Frame, Simulator};

pub mod counts;
pub mod fit;
pub mod gauss;
pub mod histogram;
pub mod lifetime;
pub mod maps;
pub mod region;
pub mod report;

pub use counts::{conjugate_fraction, count_coincidences, g2_estimate, ClickCounts, CoincidenceCounts, G2Estimate, PairCounter, ProvenanceCounts};
pub use gauss::{fit_gaussian_2d, fit_histogram, moment_estimate, GaussianFit, MomentEstimate};
pub use histogram::{coincidence_map, com_histogram, Axis, Binning, CoincidenceHistogram, Semantics};
pub use lifetime::{fit_lifetime, LifetimeFit, LifetimeInputs, LifetimeOptions, LifetimePoint};
pub use maps::{
    autocorrelation_estimate, conjugate_columns, g2_map, g2_vs_roi_size, region_ensemble_uncertainty, ColumnEnsemble, ColumnGeometry, EnsembleMap, G2Map,
    RoiModelInputs, RoiModelPoint, RoiSizePoint, TileCounter, TilePairing,
};
pub use region::{FieldOfView, Region, RegionPair};

#[derive(Debug, Clone, Error)]
pub enum AnalysisError {
    #[error("no frames in the stream")]
    EmptyStream,
    #[error("region {0:?} is not inside the field of view")]
    RegionOutsideFov(Region),
    #[error("g² undefined: {clicks_first} first-region and {clicks_second} second-region clicks")]
    ZeroDenominator { clicks_first: u64, clicks_second: u64 },
    #[error("invalid binning: {0}")]
    Binning(String),
    #[error("insufficient data: need {needed}, found {found}")]
    InsufficientData { needed: u64, found: u64 },
    #[error("fit did not converge after {iterations} iterations (moment estimate {fallback:?})")]
    FitFailed { iterations: usize, fallback: MomentEstimate },
    #[error("lifetime fit did not converge; best parameters {:?}", .0.params)]
    LifetimeNotConverged(Box<LifetimeFit>),
    #[error("storage times span {span} us, less than one beat period {period} us")]
    ShortSpan { span: f64, period: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("field of view admits {achievable:?} (regions per column, columns), {requested:?} requested")]
    InsufficientFov { requested: (usize, usize), achievable: (usize, usize) },
}

/// A value with its one-standard-deviation uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub value: f64,
    pub stderr: f64,
}

impl Measurement {
    pub fn new(value: f64, stderr: f64) -> Self {
        Measurement { value, stderr }
    }

    /// Sample mean and sample standard deviation (zero for one sample).
    pub fn from_samples(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Measurement::new(mean, std))
    }

    /// Distance from `x` in units of the uncertainty.
    pub fn sigmas_from(&self, x: f64) -> f64 {
        (self.value - x).abs() / self.stderr
    }
}

/// Mergeable streaming state over frames.
pub trait Accumulator: Clone + Send {
    fn observe(&mut self, frame: &Frame);
    fn merge(&mut self, other: &Self);
}

pub fn accumulate<'a, A, I>(mut acc: A, frames: I) -> A
where
    A: Accumulator,
    I: IntoIterator<Item = &'a Frame>,
{
    for f in frames {
        acc.observe(f);
    }
    acc
}

/// Runs an accumulator over a whole simulation without storing frames.
pub fn accumulate_simulation<A: Accumulator + Sync>(sim: &Simulator, workers: usize, empty: A) -> A {
    fold_simulation(sim, workers, empty, |a, f| a.observe(f), |a, b| a.merge(&b))
}

/// Cauchy–Schwarz parameter `R = g²_SAS² / (g²_SS g²_ASAS)` with
/// first-order propagation of independent uncertainties.
pub fn cauchy_schwarz_r(sas: Measurement, ss: Measurement, asas: Measurement) -> Result<Measurement, AnalysisError> {
    for (name, m) in [("g2_sas", sas), ("g2_ss", ss), ("g2_asas", asas)] {
        if !(m.value > 0.0 && m.value.is_finite()) || !(m.stderr >= 0.0) {
            return Err(AnalysisError::Invalid(format!("{name} must be positive, got {}", m.value)));
        }
    }
    let r = sas.value * sas.value / (ss.value * asas.value);
    let rel2 = (2.0 * sas.stderr / sas.value).powi(2) + (ss.stderr / ss.value).powi(2) + (asas.stderr / asas.value).powi(2);
    Ok(Measurement::new(r, r * rel2.sqrt()))
}
