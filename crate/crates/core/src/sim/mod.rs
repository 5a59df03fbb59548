//! Synthetic camera frames from a multimode thermal pair source.
//!
//! The momentum plane of each arm is tiled by independent mode cells of
//! side `2σ/A`. In every frame each cell emits a thermally distributed
//! number of pairs. A Stokes photon is placed uniformly inside its cell and
//! its anti-Stokes partner at the mirrored wavevector plus a Gaussian
//! deviate of width `σ` per axis, so `k_S + k_AS` is normal with standard
//! deviation `σ`. Losses, dark counts and anti-Stokes noise follow.

pub mod format;

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Geometric, Normal, Poisson};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{self, chi_r_of_t, DetectionParams, Envelope, MemoryParams, ModelError, SourceParams};
use crate::rng::{self, Domain};

/// Frames generated per parallel work item.
pub const CHUNK_FRAMES: u64 = 4096;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("frame index {index} out of range (n_frames = {n_frames})")]
    FrameIndex { index: u64, n_frames: u64 },
    #[error("sink failed after {frames_written} frames: {source}")]
    Sink {
        frames_written: u64,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    Stokes,
    AntiStokes,
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Arm::Stokes => "S",
            Arm::AntiStokes => "AS",
        }
    }
}

/// Where a simulated hit came from. Not part of the interchange format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Pair { cell: u32, pair: u32 },
    Dark,
    Noise,
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub arm: Arm,
    pub kx: f64,
    pub ky: f64,
    pub px: u32,
    pub py: u32,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u64,
    pub storage_time: f64,
    pub hits: Vec<Hit>,
}

impl Frame {
    pub fn arm_hits(&self, arm: Arm) -> impl Iterator<Item = &Hit> {
        self.hits.iter().filter(move |h| h.arm == arm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StorageSchedule {
    Constant(f64),
    /// Frame `i` uses entry `i mod len`.
    Cycle(Vec<f64>),
}

impl StorageSchedule {
    pub fn at(&self, index: u64) -> f64 {
        match self {
            StorageSchedule::Constant(t) => *t,
            StorageSchedule::Cycle(ts) => ts[(index % ts.len() as u64) as usize],
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            StorageSchedule::Constant(t) => vec![*t],
            StorageSchedule::Cycle(ts) => ts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub source: SourceParams,
    pub detection: DetectionParams,
    pub memory: MemoryParams,
    pub n_frames: u64,
    pub storage: StorageSchedule,
    pub master_seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.source.validate()?;
        self.detection.validate()?;
        self.memory.validate()?;
        if self.n_frames == 0 {
            return Err(SimError::Config("n_frames must be >= 1".into()));
        }
        let times = self.storage.values();
        if times.is_empty() {
            return Err(SimError::Config("storage schedule is empty".into()));
        }
        for t in times {
            model::non_negative("storage_time", t)?;
        }
        let s = &self.source;
        for (axis, sigma, fov) in [("x", s.sigma_x, s.fov_kappa_x), ("y", s.sigma_y, s.fov_kappa_y)] {
            let pitch = model::mode_cell_pitch(sigma);
            if pitch > fov {
                return Err(SimError::Config(format!(
                    "mode cell pitch {pitch} exceeds field of view {fov} along {axis}"
                )));
            }
        }
        let d = &self.detection;
        for (axis, px, fov) in [("x", d.sensor_px_x, s.fov_kappa_x), ("y", d.sensor_px_y, s.fov_kappa_y)] {
            if px as f64 * d.pixel_pitch < fov * (1.0 - 1e-9) {
                return Err(SimError::Config(format!(
                    "{px} pixels of pitch {} do not cover field of view {fov} along {axis}",
                    d.pixel_pitch
                )));
            }
        }
        Ok(())
    }
}

/// Tiling of the field of view into independent mode cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeGrid {
    pub nx: usize,
    pub ny: usize,
    pub cell_x: f64,
    pub cell_y: f64,
    pub fov_x: f64,
    pub fov_y: f64,
}

impl ModeGrid {
    /// Cells of side as close to `2σ/A` as tiles the field of view exactly.
    pub fn for_source(source: &SourceParams) -> Self {
        let n = |fov: f64, sigma: f64| ((fov / model::mode_cell_pitch(sigma)).round() as usize).max(1);
        let nx = n(source.fov_kappa_x, source.sigma_x);
        let ny = n(source.fov_kappa_y, source.sigma_y);
        ModeGrid {
            nx,
            ny,
            cell_x: source.fov_kappa_x / nx as f64,
            cell_y: source.fov_kappa_y / ny as f64,
            fov_x: source.fov_kappa_x,
            fov_y: source.fov_kappa_y,
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, cell: usize) -> (f64, f64) {
        let (ix, iy) = (cell % self.nx, cell / self.nx);
        (
            -0.5 * self.fov_x + (ix as f64 + 0.5) * self.cell_x,
            -0.5 * self.fov_y + (iy as f64 + 0.5) * self.cell_y,
        )
    }

    /// Number of cells covered by a square window of side `kappa`.
    pub fn cells_in_window(&self, kappa: f64) -> f64 {
        (kappa / self.cell_x) * (kappa / self.cell_y)
    }
}

enum PairLaw {
    Uniform { occupied: Option<Geometric>, extra: Geometric },
    PerCell(Vec<(f64, Geometric)>),
}

/// Validated configuration with precomputed sampling tables.
pub struct Simulator {
    config: SimConfig,
    grid: ModeGrid,
    law: PairLaw,
    chi_peak: f64,
    jitter_x: Normal<f64>,
    jitter_y: Normal<f64>,
}

pub(crate) fn thermal_laws(pbar: f64) -> (Option<Geometric>, Geometric) {
    let occupied = pbar / (1.0 + pbar);
    let gap = (occupied > 0.0).then(|| Geometric::new(occupied).expect("probability in (0,1)"));
    (gap, Geometric::new(1.0 / (1.0 + pbar)).expect("probability in (0,1]"))
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let grid = ModeGrid::for_source(&config.source);
        let law = match config.source.envelope {
            Envelope::Uniform => {
                let (occupied, extra) = thermal_laws(config.source.p_mode);
                PairLaw::Uniform { occupied, extra }
            }
            Envelope::Gaussian { width_x, width_y } => PairLaw::PerCell(
                (0..grid.len())
                    .map(|c| {
                        let (x, y) = grid.center(c);
                        let w = (-0.5 * (x * x / (width_x * width_x) + y * y / (width_y * width_y))).exp();
                        let pbar = config.source.p_mode * w;
                        (pbar / (1.0 + pbar), thermal_laws(pbar).1)
                    })
                    .collect(),
            ),
        };
        let chi_peak = chi_r_of_t(0.0, &config.memory);
        let jitter_x = Normal::new(0.0, config.source.sigma_x).map_err(|e| SimError::Config(e.to_string()))?;
        let jitter_y = Normal::new(0.0, config.source.sigma_y).map_err(|e| SimError::Config(e.to_string()))?;
        Ok(Simulator {
            config,
            grid,
            law,
            chi_peak,
            jitter_x,
            jitter_y,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn grid(&self) -> &ModeGrid {
        &self.grid
    }

    /// Retrieval efficiency at storage time `t`: the memory's beating
    /// profile rescaled so that it equals `chi_r0` at `t = 0`.
    pub fn retrieval(&self, t: f64) -> f64 {
        if self.chi_peak <= 0.0 {
            return 0.0;
        }
        self.config.detection.chi_r0 * chi_r_of_t(t, &self.config.memory) / self.chi_peak
    }

    /// Mean anti-Stokes noise count over the whole field at storage time `t`.
    pub fn noise_mean(&self, t: f64) -> f64 {
        self.config.memory.xi(t) * self.grid.len() as f64
    }

    fn pixel(&self, k: f64, fov: f64, n_px: u32) -> u32 {
        let p = ((k + 0.5 * fov) / self.config.detection.pixel_pitch).floor();
        (p.max(0.0) as u32).min(n_px - 1)
    }

    fn hit(&self, arm: Arm, kx: f64, ky: f64, origin: Origin) -> Hit {
        let d = &self.config.detection;
        Hit {
            arm,
            kx,
            ky,
            px: self.pixel(kx, self.grid.fov_x, d.sensor_px_x),
            py: self.pixel(ky, self.grid.fov_y, d.sensor_px_y),
            origin,
        }
    }

    fn in_fov(&self, kx: f64, ky: f64) -> bool {
        let (hx, hy) = (0.5 * self.grid.fov_x, 0.5 * self.grid.fov_y);
        (-hx..hx).contains(&kx) && (-hy..hy).contains(&ky)
    }

    fn uniform_hit<R: Rng>(&self, rng: &mut R, arm: Arm, origin: Origin) -> Hit {
        let kx = (rng.random::<f64>() - 0.5) * self.grid.fov_x;
        let ky = (rng.random::<f64>() - 0.5) * self.grid.fov_y;
        self.hit(arm, kx, ky, origin)
    }

    fn emit_pairs<R: Rng>(&self, rng: &mut R, cell: usize, count: u64, pair_id: &mut u32, chi: f64, hits: &mut Vec<Hit>) {
        let d = &self.config.detection;
        let (cx, cy) = self.grid.center(cell);
        for _ in 0..count {
            let sx = cx + (rng.random::<f64>() - 0.5) * self.grid.cell_x;
            let sy = cy + (rng.random::<f64>() - 0.5) * self.grid.cell_y;
            let ax = -sx + self.jitter_x.sample(rng);
            let ay = -sy + self.jitter_y.sample(rng);
            let keep_s = rng.random::<f64>() < d.eta_s;
            let keep_as = rng.random::<f64>() < chi * d.eta_as;
            let origin = Origin::Pair {
                cell: cell as u32,
                pair: *pair_id,
            };
            *pair_id += 1;
            if keep_s {
                hits.push(self.hit(Arm::Stokes, sx, sy, origin));
            }
            if keep_as && self.in_fov(ax, ay) {
                hits.push(self.hit(Arm::AntiStokes, ax, ay, origin));
            }
        }
    }

    /// Frame number `index`; a pure function of the configuration and index.
    pub fn frame(&self, index: u64) -> Result<Frame, SimError> {
        if index >= self.config.n_frames {
            return Err(SimError::FrameIndex {
                index,
                n_frames: self.config.n_frames,
            });
        }
        Ok(self.frame_unchecked(index))
    }

    fn frame_unchecked(&self, index: u64) -> Frame {
        let mut rng = rng::stream(self.config.master_seed, Domain::Frame, index);
        let t = self.config.storage.at(index);
        let chi = self.retrieval(t);
        let mut hits = Vec::new();
        let mut pair_id = 0u32;

        match &self.law {
            PairLaw::Uniform { occupied, extra } => {
                if let Some(gap) = occupied {
                    let cells = self.grid.len() as u64;
                    let mut next = gap.sample(&mut rng);
                    while next < cells {
                        let count = 1 + extra.sample(&mut rng);
                        self.emit_pairs(&mut rng, next as usize, count, &mut pair_id, chi, &mut hits);
                        next += 1 + gap.sample(&mut rng);
                    }
                }
            }
            PairLaw::PerCell(cells) => {
                for (cell, (occupied, extra)) in cells.iter().enumerate() {
                    if rng.random::<f64>() < *occupied {
                        let count = 1 + extra.sample(&mut rng);
                        self.emit_pairs(&mut rng, cell, count, &mut pair_id, chi, &mut hits);
                    }
                }
            }
        }

        let half_dark = 0.5 * self.config.detection.dark_rate;
        for arm in [Arm::Stokes, Arm::AntiStokes] {
            for _ in 0..poisson(&mut rng, half_dark) {
                hits.push(self.uniform_hit(&mut rng, arm, Origin::Dark));
            }
        }
        for _ in 0..poisson(&mut rng, self.noise_mean(t)) {
            hits.push(self.uniform_hit(&mut rng, Arm::AntiStokes, Origin::Noise));
        }

        Frame {
            index,
            storage_time: t,
            hits,
        }
    }

    /// Frames in `range`, generated in parallel on the current rayon pool.
    pub fn frames(&self, range: Range<u64>) -> Vec<Frame> {
        let end = range.end.min(self.config.n_frames);
        (range.start..end).into_par_iter().map(|i| self.frame_unchecked(i)).collect()
    }
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
}

/// Frame number `frame_index` of the run described by `config`.
pub fn sample_frame(config: &SimConfig, frame_index: u64) -> Result<Frame, SimError> {
    Simulator::new(config.clone())?.frame(frame_index)
}

/// Consumer of a frame stream.
pub trait FrameSink {
    fn accept(&mut self, frame: &Frame) -> std::io::Result<()>;
}

impl FrameSink for Vec<Frame> {
    fn accept(&mut self, frame: &Frame) -> std::io::Result<()> {
        self.push(frame.clone());
        Ok(())
    }
}

/// Whole-field singles and coincidence statistics of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub frames: u64,
    pub s_hits: u64,
    pub as_hits: u64,
    pub s_hits_sq: u64,
    pub as_hits_sq: u64,
    pub s_click_frames: u64,
    pub as_click_frames: u64,
    pub both_click_frames: u64,
}

impl RunSummary {
    pub fn observe(&mut self, frame: &Frame) {
        let s = frame.arm_hits(Arm::Stokes).count() as u64;
        let a = frame.arm_hits(Arm::AntiStokes).count() as u64;
        self.frames += 1;
        self.s_hits += s;
        self.as_hits += a;
        self.s_hits_sq += s * s;
        self.as_hits_sq += a * a;
        self.s_click_frames += (s > 0) as u64;
        self.as_click_frames += (a > 0) as u64;
        self.both_click_frames += (s > 0 && a > 0) as u64;
    }

    pub fn merge(&mut self, other: &RunSummary) {
        self.frames += other.frames;
        self.s_hits += other.s_hits;
        self.as_hits += other.as_hits;
        self.s_hits_sq += other.s_hits_sq;
        self.as_hits_sq += other.as_hits_sq;
        self.s_click_frames += other.s_click_frames;
        self.as_click_frames += other.as_click_frames;
        self.both_click_frames += other.both_click_frames;
    }

    /// Mean detected Stokes photons per frame.
    pub fn mean_s(&self) -> f64 {
        self.s_hits as f64 / self.frames as f64
    }

    pub fn mean_as(&self) -> f64 {
        self.as_hits as f64 / self.frames as f64
    }

    /// Standard error of [`mean_s`](Self::mean_s).
    pub fn mean_s_stderr(&self) -> f64 {
        stderr_of_mean(self.s_hits, self.s_hits_sq, self.frames)
    }

    pub fn mean_as_stderr(&self) -> f64 {
        stderr_of_mean(self.as_hits, self.as_hits_sq, self.frames)
    }

    /// Fraction of frames with at least one Stokes detection.
    pub fn p_s(&self) -> f64 {
        self.s_click_frames as f64 / self.frames as f64
    }

    pub fn p_as(&self) -> f64 {
        self.as_click_frames as f64 / self.frames as f64
    }
}

fn stderr_of_mean(sum: u64, sum_sq: u64, n: u64) -> f64 {
    let n = n as f64;
    let mean = sum as f64 / n;
    let var = (sum_sq as f64 / n - mean * mean) * n / (n - 1.0).max(1.0);
    (var.max(0.0) / n).sqrt()
}

pub(crate) fn pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool")
}

/// Generates every frame and hands them to `sink` in index order.
///
/// Frames are produced in parallel chunks on `workers` threads and
/// reordered before delivery, so the sink sees the same stream for any
/// worker count.
pub fn run_simulation<S: FrameSink>(sim: &Simulator, workers: usize, sink: &mut S) -> Result<RunSummary, SimError> {
    let pool = pool(workers);
    let mut summary = RunSummary::default();
    let n = sim.config.n_frames;
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK_FRAMES * workers.max(1) as u64).min(n);
        let frames = pool.install(|| sim.frames(start..end));
        for frame in &frames {
            sink.accept(frame).map_err(|source| SimError::Sink {
                frames_written: summary.frames,
                source,
            })?;
            summary.observe(frame);
        }
        start = end;
    }
    Ok(summary)
}

/// Folds every frame of the run into per-chunk accumulators on `workers`
/// threads and merges them. `observe` and `merge` must form a commutative
/// monoid for the result to be independent of scheduling.
pub fn fold_simulation<A, O, M>(sim: &Simulator, workers: usize, empty: A, observe: O, merge: M) -> A
where
    A: Clone + Send + Sync,
    O: Fn(&mut A, &Frame) + Sync,
    M: Fn(&mut A, A) + Sync,
{
    let n = sim.config.n_frames;
    let chunks = n.div_ceil(CHUNK_FRAMES);
    pool(workers).install(|| {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = empty.clone();
                for i in c * CHUNK_FRAMES..((c + 1) * CHUNK_FRAMES).min(n) {
                    observe(&mut acc, &sim.frame_unchecked(i));
                }
                acc
            })
            .reduce(
                || empty.clone(),
                |mut a, b| {
                    merge(&mut a, b);
                    a
                },
            )
    })
}

/// Splits one arm of a frame 50:50 into two sub-arms, as a polarising
/// beam splitter in front of the camera would. The other arm's hits are
/// copied unchanged into both outputs.
pub fn wollaston_split(frame: &Frame, arm: Arm, master_seed: u64) -> (Frame, Frame) {
    let domain = match arm {
        Arm::Stokes => Domain::SplitStokes,
        Arm::AntiStokes => Domain::SplitAntiStokes,
    };
    let mut rng = rng::stream(master_seed, domain, frame.index);
    let mut first = Frame {
        index: frame.index,
        storage_time: frame.storage_time,
        hits: Vec::new(),
    };
    let mut second = first.clone();
    for hit in &frame.hits {
        if hit.arm != arm {
            first.hits.push(hit.clone());
            second.hits.push(hit.clone());
        } else if rng.random::<bool>() {
            first.hits.push(hit.clone());
        } else {
            second.hits.push(hit.clone());
        }
    }
    (first, second)
}
