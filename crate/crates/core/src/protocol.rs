//! Multiplexed multi-photon generation by repeated heralded writes.
//!
//! Each write trial excites every mode cell with a thermal number of pairs.
//! A detected Stokes photon registers its cell and spin-wave wavevector in a
//! classical registry. Writing stops once the registry holds the requested
//! number of excitations; the youngest ones are then routed to output
//! channels and read out together.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{self, chi_r_of_t, MemoryParams, ModelError};
use crate::rng::{self, Domain};
use crate::sim::{pool, thermal_laws};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid protocol configuration: {0}")]
    Config(String),
}

/// Retrieval efficiency of a stored excitation.
#[derive(Debug, Clone, PartialEq)]
pub enum Retrieval {
    /// Independent of storage time and wavevector.
    Constant(f64),
    /// Beating memory curve rescaled so that its maximum is `chi_r0`.
    Memory { chi_r0: f64, memory: MemoryParams },
    /// `chi_r0 exp(-t²/τ_K²)` with `τ_K = 1/(|K| v)`.
    WavevectorDecay { chi_r0: f64, v_thermal: f64 },
}

impl Retrieval {
    fn validate(&self) -> Result<(), ModelError> {
        match self {
            Retrieval::Constant(c) => model::probability("chi_r", *c).map(drop),
            Retrieval::Memory { chi_r0, memory } => {
                model::probability("chi_r0", *chi_r0)?;
                memory.validate()
            }
            Retrieval::WavevectorDecay { chi_r0, v_thermal } => {
                model::probability("chi_r0", *chi_r0)?;
                model::positive("v_thermal", *v_thermal).map(drop)
            }
        }
    }

    /// Efficiency after storage time `t` (μs) for spin-wave wavevector `k`.
    pub fn at(&self, t: f64, k: (f64, f64)) -> f64 {
        match self {
            Retrieval::Constant(c) => *c,
            Retrieval::Memory { chi_r0, memory } => {
                let peak = memory_peak(memory);
                if peak <= 0.0 {
                    0.0
                } else {
                    chi_r0 * chi_r_of_t(t, memory) / peak
                }
            }
            Retrieval::WavevectorDecay { chi_r0, v_thermal } => {
                let rate = model::decoherence_rate(k.0.hypot(k.1), *v_thermal);
                chi_r0 * (-(t * rate).powi(2)).exp()
            }
        }
    }
}

/// Largest value of the memory curve; it is attained at `t = 0`.
fn memory_peak(mem: &MemoryParams) -> f64 {
    chi_r_of_t(0.0, mem)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub n_target: u32,
    /// Mean pair number per mode cell per trial.
    pub p_mode: f64,
    /// Number of mode cells.
    pub modes: u32,
    pub eta_s: f64,
    pub eta_as: f64,
    pub retrieval: Retrieval,
    /// Time between write trials (μs).
    pub trial_period: f64,
    pub max_trials: u64,
    pub switch_loss: f64,
    pub master_seed: u64,
    /// Pairs whose Stokes photon was not detected still occupy their cell
    /// and can produce an anti-Stokes photon at readout.
    pub undetected_occupy: bool,
    /// Wavevector pitch of the mode cells (mm⁻¹).
    pub cell_pitch: f64,
    /// Write-beam transverse wavevector; `K = k_S - k_w`.
    pub k_w: (f64, f64),
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.n_target == 0 {
            return Err(ProtocolError::Config("n_target must be >= 1".into()));
        }
        if self.modes == 0 {
            return Err(ProtocolError::Config("modes must be >= 1".into()));
        }
        if self.max_trials == 0 {
            return Err(ProtocolError::Config("max_trials must be >= 1".into()));
        }
        model::non_negative("p_mode", self.p_mode)?;
        model::probability("eta_s", self.eta_s)?;
        model::probability("eta_as", self.eta_as)?;
        model::probability("switch_loss", self.switch_loss)?;
        model::positive("trial_period", self.trial_period)?;
        model::positive("cell_pitch", self.cell_pitch)?;
        model::finite("k_w", self.k_w.0)?;
        model::finite("k_w", self.k_w.1)?;
        self.retrieval.validate()?;
        Ok(())
    }

    /// Spin-wave wavevector of mode cell `cell`.
    pub fn cell_k(&self, cell: u32) -> (f64, f64) {
        let nx = (self.modes as f64).sqrt().ceil() as u32;
        let (ix, iy) = (cell % nx, cell / nx);
        let ny = self.modes.div_ceil(nx);
        let c = |i: u32, n: u32| (i as f64 + 0.5 - 0.5 * n as f64) * self.cell_pitch;
        (c(ix, nx) - self.k_w.0, c(iy, ny) - self.k_w.1)
    }
}

/// A heralded spin-wave excitation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoredExcitation {
    pub k: (f64, f64),
    pub birth_trial: u64,
    pub mode_cell: u32,
}

/// Outcome of one protocol run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub trials_used: u64,
    /// Registered cells when writing stopped.
    pub registry: Vec<StoredExcitation>,
    /// Stokes heralds over all trials, re-excitations included.
    pub total_heralds: u64,
    /// Pairs created over all trials, detected or not.
    pub pairs_created: u64,
    /// Cell-trials with two or more pairs.
    pub double_occupancy: u64,
    /// Heralds landing in an already registered cell.
    pub overwrites: u64,
    /// Routed channels at readout.
    pub routed: u32,
    /// Routed channels that clicked.
    pub output_photons: u32,
    /// The target was reached before `max_trials`.
    pub complete: bool,
}

impl RunResult {
    pub fn registry_size(&self) -> usize {
        self.registry.len()
    }
}

#[derive(Debug, Clone, Default)]
struct Slot {
    registered: Option<usize>,
    /// Birth trials of unheralded excitations sharing the cell.
    background: Vec<u64>,
}

/// Runs the protocol once; `run` selects the random streams.
pub fn run_protocol(config: &ProtocolConfig, run: u64) -> Result<RunResult, ProtocolError> {
    config.validate()?;
    Ok(run_unchecked(config, run))
}

fn run_unchecked(config: &ProtocolConfig, run: u64) -> RunResult {
    let mut write = rng::stream(config.master_seed, Domain::ProtocolWrite, run);
    let (gap, extra) = thermal_laws(config.p_mode);
    let m = config.modes as u64;
    let mut slots = vec![Slot::default(); config.modes as usize];
    let mut registry: Vec<StoredExcitation> = Vec::new();
    let mut result = RunResult {
        trials_used: 0,
        registry: Vec::new(),
        total_heralds: 0,
        pairs_created: 0,
        double_occupancy: 0,
        overwrites: 0,
        routed: 0,
        output_photons: 0,
        complete: false,
    };

    for trial in 0..config.max_trials {
        result.trials_used = trial + 1;
        if let Some(gap) = &gap {
            let mut cell = gap.sample(&mut write);
            while cell < m {
                let n = 1 + extra.sample(&mut write);
                result.pairs_created += n;
                if n >= 2 {
                    result.double_occupancy += 1;
                }
                let detected = Binomial::new(n, config.eta_s).expect("valid probability").sample(&mut write);
                let slot = &mut slots[cell as usize];
                if detected > 0 {
                    result.total_heralds += 1;
                    let entry = StoredExcitation {
                        k: config.cell_k(cell as u32),
                        birth_trial: trial,
                        mode_cell: cell as u32,
                    };
                    // Re-excitation replaces whatever the cell held.
                    match slot.registered {
                        Some(i) => {
                            result.overwrites += 1;
                            registry[i] = entry;
                        }
                        None => {
                            slot.registered = Some(registry.len());
                            registry.push(entry);
                        }
                    }
                    slot.background.clear();
                    if config.undetected_occupy {
                        slot.background.extend(std::iter::repeat_n(trial, (n - 1) as usize));
                    }
                } else if config.undetected_occupy {
                    slot.background.extend(std::iter::repeat_n(trial, n as usize));
                }
                cell += 1 + gap.sample(&mut write);
            }
        }
        if registry.len() >= config.n_target as usize {
            result.complete = true;
            break;
        }
    }

    // Readout: the youngest excitations are routed, ties broken by cell.
    let stop = result.trials_used - 1;
    let mut order: Vec<usize> = (0..registry.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(registry[i].birth_trial), registry[i].mode_cell));
    order.truncate(config.n_target as usize);
    order.sort_by_key(|&i| registry[i].mode_cell);
    let mut readout = rng::stream(config.master_seed, Domain::ProtocolReadout, run);
    let pass = (1.0 - config.switch_loss) * config.eta_as;
    let period = config.trial_period;
    for &i in &order {
        let e = registry[i];
        let survive = |birth: u64| config.retrieval.at((stop - birth) as f64 * period, e.k) * pass;
        let mut click = readout.random::<f64>() < survive(e.birth_trial);
        for &b in &slots[e.mode_cell as usize].background {
            // Every excitation consumes one uniform so that the draws line up
            // across parameter changes.
            click |= readout.random::<f64>() < survive(b);
        }
        result.output_photons += click as u32;
    }
    result.routed = order.len() as u32;
    result.registry = registry;
    result
}

/// Aggregate statistics over independent runs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProtocolSummary {
    pub runs: u64,
    pub n_target: u32,
    /// `output[n]` = runs with `n` output photons.
    pub output: Vec<u64>,
    /// Output distribution for each registry size at stop.
    pub by_registry: BTreeMap<usize, Vec<u64>>,
    pub incomplete: u64,
    pub trials: u64,
    pub trials_sq: u128,
    pub pairs_created: u64,
    pub heralds: u64,
    pub double_occupancy: u64,
    pub overwrites: u64,
    pub modes: u32,
}

impl ProtocolSummary {
    fn new(n_target: u32, modes: u32) -> Self {
        ProtocolSummary {
            n_target,
            modes,
            output: vec![0; n_target as usize + 1],
            ..Default::default()
        }
    }

    fn add(&mut self, r: &RunResult) {
        self.runs += 1;
        self.output[r.output_photons as usize] += 1;
        let row = self.by_registry.entry(r.registry_size()).or_insert_with(|| vec![0; self.n_target as usize + 1]);
        row[r.output_photons as usize] += 1;
        self.incomplete += (!r.complete) as u64;
        self.trials += r.trials_used;
        self.trials_sq += (r.trials_used as u128).pow(2);
        self.pairs_created += r.pairs_created;
        self.heralds += r.total_heralds;
        self.double_occupancy += r.double_occupancy;
        self.overwrites += r.overwrites;
    }

    fn merge(mut self, o: ProtocolSummary) -> Self {
        self.runs += o.runs;
        for (a, b) in self.output.iter_mut().zip(&o.output) {
            *a += b;
        }
        for (k, v) in o.by_registry {
            let row = self.by_registry.entry(k).or_insert_with(|| vec![0; v.len()]);
            for (a, b) in row.iter_mut().zip(&v) {
                *a += b;
            }
        }
        self.incomplete += o.incomplete;
        self.trials += o.trials;
        self.trials_sq += o.trials_sq;
        self.pairs_created += o.pairs_created;
        self.heralds += o.heralds;
        self.double_occupancy += o.double_occupancy;
        self.overwrites += o.overwrites;
        self
    }

    /// Fraction of runs with exactly `n` output photons and its binomial
    /// standard error.
    pub fn probability(&self, n: usize) -> (f64, f64) {
        let k = self.output.get(n).copied().unwrap_or(0);
        binomial(k, self.runs)
    }

    /// Probability of exactly `n_target` output photons.
    pub fn exact_n(&self) -> (f64, f64) {
        self.probability(self.n_target as usize)
    }

    /// 95% Wilson score interval for the exact-`n` probability.
    pub fn exact_n_ci95(&self) -> (f64, f64) {
        wilson(self.output[self.n_target as usize], self.runs, 1.959_963_984_540_054)
    }

    /// Mean write trials per run and its standard error.
    pub fn mean_trials(&self) -> (f64, f64) {
        let n = self.runs as f64;
        let mean = self.trials as f64 / n;
        let var = (self.trials_sq as f64 / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
        (mean, (var / n).sqrt())
    }

    /// Mean pairs created per trial over all mode cells.
    pub fn pairs_per_trial(&self) -> f64 {
        self.pairs_created as f64 / self.trials as f64
    }

    /// Mean Stokes heralds per trial.
    pub fn heralds_per_trial(&self) -> f64 {
        self.heralds as f64 / self.trials as f64
    }

    /// Fraction of cell-trials with two or more pairs.
    pub fn double_occupancy_rate(&self) -> f64 {
        self.double_occupancy as f64 / (self.trials as f64 * self.modes as f64)
    }

    /// Output distribution conditioned on the registry size at stop.
    pub fn conditional(&self, registry: usize) -> Option<Vec<f64>> {
        let row = self.by_registry.get(&registry)?;
        let total: u64 = row.iter().sum();
        Some(row.iter().map(|&c| c as f64 / total as f64).collect())
    }
}

fn binomial(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let p = k as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

fn wilson(k: u64, n: u64, z: f64) -> (f64, f64) {
    let n = n as f64;
    let p = k as f64 / n;
    let d = 1.0 + z * z / n;
    let c = (p + z * z / (2.0 * n)) / d;
    let h = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / d;
    let lo = if k == 0 { 0.0 } else { (c - h).max(0.0) };
    let hi = if k as f64 == n { 1.0 } else { (c + h).min(1.0) };
    (lo, hi)
}

/// Runs `n_runs` independent protocol runs on `workers` threads. The result
/// does not depend on the worker count.
pub fn protocol_ensemble(config: &ProtocolConfig, n_runs: u64, workers: usize) -> Result<ProtocolSummary, ProtocolError> {
    config.validate()?;
    if n_runs == 0 {
        return Err(ProtocolError::Config("n_runs must be >= 1".into()));
    }
    let empty = ProtocolSummary::new(config.n_target, config.modes);
    Ok(pool(workers).install(|| {
        (0..n_runs)
            .into_par_iter()
            .fold(
                || empty.clone(),
                |mut acc, run| {
                    acc.add(&run_unchecked(config, run));
                    acc
                },
            )
            .reduce(|| empty.clone(), ProtocolSummary::merge)
    }))
}

/// Mean number of trials until at least one herald, `1/(1 - (1+pη)^-M)`.
pub fn mean_trials_to_first_herald(p_mode: f64, eta_s: f64, modes: u32) -> f64 {
    1.0 / (1.0 - (1.0 + p_mode * eta_s).powf(-(modes as f64)))
}

/// Thermal probability of two or more pairs in one cell.
pub fn thermal_multi_pair(p_mode: f64) -> f64 {
    (p_mode / (1.0 + p_mode)).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn base() -> ProtocolConfig {
        ProtocolConfig {
            n_target: 3,
            p_mode: 0.01,
            modes: 665,
            eta_s: 0.08,
            eta_as: 0.08,
            retrieval: Retrieval::Constant(0.35),
            trial_period: 2.0,
            max_trials: 10_000,
            switch_loss: 0.0,
            master_seed: 5,
            undetected_occupy: true,
            cell_pitch: model::mode_cell_pitch(4.45),
            k_w: (0.0, 0.0),
        }
    }

    #[test]
    fn conservation_per_run() {
        let cfg = base();
        for run in 0..200 {
            let r = run_protocol(&cfg, run).unwrap();
            assert!(r.output_photons <= r.routed);
            assert!(r.routed as usize <= r.registry_size());
            assert!(r.registry_size() as u64 <= r.total_heralds);
            assert!(r.complete);
        }
    }

    #[test]
    fn deterministic_config_has_no_variance() {
        let cfg = ProtocolConfig {
            p_mode: 0.0,
            max_trials: 7,
            ..base()
        };
        let s = protocol_ensemble(&cfg, 50, 3).unwrap();
        assert_eq!(s.output[0], 50);
        assert_eq!(s.incomplete, 50);
        assert_eq!(s.mean_trials(), (7.0, 0.0));
    }

    #[test]
    fn single_run_ensemble_equals_run() {
        let cfg = base();
        let r = run_protocol(&cfg, 0).unwrap();
        let s = protocol_ensemble(&cfg, 1, 1).unwrap();
        assert_eq!(s.output[r.output_photons as usize], 1);
        assert_eq!(s.trials, r.trials_used);
        assert_eq!(s.pairs_created, r.pairs_created);
    }

    #[test]
    fn workers_do_not_change_results() {
        let cfg = base();
        assert_eq!(protocol_ensemble(&cfg, 300, 1).unwrap(), protocol_ensemble(&cfg, 300, 5).unwrap());
    }

    #[test]
    fn cell_wavevectors_are_centred() {
        let cfg = ProtocolConfig { modes: 4, cell_pitch: 2.0, ..base() };
        let ks: Vec<_> = (0..4).map(|c| cfg.cell_k(c)).collect();
        assert_eq!(ks, vec![(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn wavevector_decay() {
        let r = Retrieval::WavevectorDecay { chi_r0: 0.5, v_thermal: 1.45e-5 };
        assert_eq!(r.at(100.0, (0.0, 0.0)), 0.5);
        let tau = 1.0 / (100.0 * 1.45e-5);
        assert!((r.at(tau, (100.0, 0.0)) - 0.5 * (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn memory_retrieval_is_rescaled() {
        let r = Retrieval::Memory {
            chi_r0: 0.35,
            memory: MemoryParams::reference(),
        };
        assert!((r.at(0.0, (0.0, 0.0)) - 0.35).abs() < 1e-15);
        assert!(r.at(50.0, (0.0, 0.0)) < 0.35);
    }

    #[test]
    fn rejects_invalid() {
        assert!(run_protocol(&ProtocolConfig { n_target: 0, ..base() }, 0).is_err());
        assert!(run_protocol(&ProtocolConfig { switch_loss: 1.5, ..base() }, 0).is_err());
        assert!(run_protocol(&ProtocolConfig { trial_period: 0.0, ..base() }, 0).is_err());
        assert!(protocol_ensemble(&base(), 0, 1).is_err());
    }
}
