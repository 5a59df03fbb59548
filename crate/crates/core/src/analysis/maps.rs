//! Many-region `g²` estimators: maps over region grids, region-size
//! sweeps, tilings of conjugate pairs and the column-ensemble procedure
//! used for uncertainty maps.

use super::counts::{count_in, ClickCounts, G2Estimate, PairCounter};
use super::region::{FieldOfView, Region, RegionPair};
use super::{accumulate, Accumulator, AnalysisError, Measurement};
use crate::model::{self, ModelError};
use crate::sim::{Arm, Frame, Hit};

/// Click counts for every combination of a Stokes and an anti-Stokes region.
#[derive(Debug, Clone)]
pub struct G2Map {
    pub regions_s: Vec<Region>,
    pub regions_as: Vec<Region>,
    frames: u64,
    clicks_s: Vec<u64>,
    clicks_as: Vec<u64>,
    /// `both[i * regions_as.len() + j]`
    both: Vec<u64>,
    scratch_s: Vec<usize>,
    scratch_as: Vec<usize>,
}

impl PartialEq for G2Map {
    fn eq(&self, o: &Self) -> bool {
        self.regions_s == o.regions_s
            && self.regions_as == o.regions_as
            && self.frames == o.frames
            && self.clicks_s == o.clicks_s
            && self.clicks_as == o.clicks_as
            && self.both == o.both
    }
}

impl G2Map {
    pub fn new(regions_s: Vec<Region>, regions_as: Vec<Region>, fov: &FieldOfView) -> Result<Self, AnalysisError> {
        for r in regions_s.iter().chain(&regions_as) {
            r.check_within(fov)?;
        }
        let (ns, na) = (regions_s.len(), regions_as.len());
        Ok(G2Map {
            regions_s,
            regions_as,
            frames: 0,
            clicks_s: vec![0; ns],
            clicks_as: vec![0; na],
            both: vec![0; ns * na],
            scratch_s: Vec::new(),
            scratch_as: Vec::new(),
        })
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn counts(&self, i: usize, j: usize) -> ClickCounts {
        let both = self.both[i * self.regions_as.len() + j];
        ClickCounts {
            frames: self.frames,
            both,
            first_only: self.clicks_s[i] - both,
            second_only: self.clicks_as[j] - both,
            ..Default::default()
        }
    }

    pub fn estimate(&self, i: usize, j: usize) -> Result<G2Estimate, AnalysisError> {
        self.counts(i, j).g2()
    }

    /// All cells, row `i` for Stokes region `i`.
    pub fn estimates(&self) -> Vec<Vec<Result<G2Estimate, AnalysisError>>> {
        (0..self.regions_s.len())
            .map(|i| (0..self.regions_as.len()).map(|j| self.estimate(i, j)).collect())
            .collect()
    }
}

fn clicked(regions: &[Region], hits: impl Iterator<Item = Hit>, out: &mut Vec<usize>) {
    out.clear();
    let hits: Vec<Hit> = hits.collect();
    if hits.is_empty() {
        return;
    }
    for (i, r) in regions.iter().enumerate() {
        if hits.iter().any(|h| r.contains_hit(h)) {
            out.push(i);
        }
    }
}

impl Accumulator for G2Map {
    fn observe(&mut self, frame: &Frame) {
        self.frames += 1;
        let mut s = std::mem::take(&mut self.scratch_s);
        let mut a = std::mem::take(&mut self.scratch_as);
        clicked(&self.regions_s, frame.arm_hits(Arm::Stokes).cloned(), &mut s);
        clicked(&self.regions_as, frame.arm_hits(Arm::AntiStokes).cloned(), &mut a);
        let na = self.regions_as.len();
        for &i in &s {
            self.clicks_s[i] += 1;
            for &j in &a {
                self.both[i * na + j] += 1;
            }
        }
        for &j in &a {
            self.clicks_as[j] += 1;
        }
        self.scratch_s = s;
        self.scratch_as = a;
    }

    fn merge(&mut self, other: &Self) {
        self.frames += other.frames;
        for (x, y) in self.clicks_s.iter_mut().zip(&other.clicks_s) {
            *x += y;
        }
        for (x, y) in self.clicks_as.iter_mut().zip(&other.clicks_as) {
            *x += y;
        }
        for (x, y) in self.both.iter_mut().zip(&other.both) {
            *x += y;
        }
    }
}

/// `g²` for every (Stokes region, anti-Stokes region) combination.
pub fn g2_map<'a, I>(frames: I, regions_s: Vec<Region>, regions_as: Vec<Region>, fov: &FieldOfView) -> Result<G2Map, AnalysisError>
where
    I: IntoIterator<Item = &'a Frame>,
{
    Ok(accumulate(G2Map::new(regions_s, regions_as, fov)?, frames))
}

/// A column of `n` Stokes regions at `x`, spread evenly in `y`, and the
/// mirrored anti-Stokes column; entry `i` of each are conjugate.
pub fn conjugate_columns(x: f64, n: usize, kappa: f64, fov: &FieldOfView) -> (Vec<Region>, Vec<Region>) {
    let ys = spread(n, fov.kappa_y - kappa);
    let s: Vec<Region> = ys.iter().map(|&y| Region::new(x, y, kappa)).collect();
    let a = s.iter().map(Region::mirrored).collect();
    (s, a)
}

/// `n` evenly spaced centres spanning `[-span/2, span/2]`.
fn spread(n: usize, span: f64) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| -0.5 * span + span * i as f64 / (n - 1) as f64).collect()
}

/// One point of a conjugate-pair `g²` curve versus region size.
#[derive(Debug, Clone)]
pub struct RoiSizePoint {
    pub kappa: f64,
    pub counts: ClickCounts,
    pub estimate: Result<G2Estimate, AnalysisError>,
}

/// Conjugate-pair `g²` and `p_S` for each region size around `center`.
pub fn g2_vs_roi_size<'a, I>(frames: I, center: (f64, f64), sizes: &[f64], fov: &FieldOfView) -> Result<Vec<RoiSizePoint>, AnalysisError>
where
    I: IntoIterator<Item = &'a Frame>,
{
    let pairs = sizes.iter().map(|&k| RegionPair::conjugate(center, k)).collect();
    let counter = accumulate(PairCounter::new(pairs, fov)?, frames);
    Ok(sizes
        .iter()
        .zip(counter.counts())
        .map(|(&kappa, c)| RoiSizePoint {
            kappa,
            counts: *c,
            estimate: c.g2(),
        })
        .collect())
}

/// Source and detector description needed to predict `g²(κ)`.
#[derive(Debug, Clone, Copy)]
pub struct RoiModelInputs {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub p_mode: f64,
    /// Wavevector area of one mode cell.
    pub cell_area: f64,
    pub eta_s: f64,
    pub eta_as: f64,
    pub chi_r: f64,
    /// Anti-Stokes noise per mode cell.
    pub xi_cell: f64,
    /// Dark counts per unit wavevector area in each arm.
    pub dark_density: f64,
}

/// Model overlays for a region of side `κ`.
#[derive(Debug, Clone, Copy)]
pub struct RoiModelPoint {
    pub kappa: f64,
    pub p_s: f64,
    pub f_kappa: f64,
    /// Full prediction with noise and finite acceptance.
    pub g2: f64,
    /// Noise switched off, acceptance kept.
    pub g2_noiseless: f64,
    /// Noise off and perfect acceptance.
    pub g2_ideal: f64,
    /// Two-mode squeezed vacuum with the region's mean pair number.
    pub g2_tmsv: f64,
}

impl RoiModelInputs {
    pub fn at(&self, kappa: f64) -> Result<RoiModelPoint, ModelError> {
        let modes = kappa * kappa / self.cell_area;
        let p = self.p_mode * modes;
        let f = model::roi_acceptance_anisotropic(kappa, self.sigma_x, self.sigma_y)?;
        let dark = self.dark_density * kappa * kappa;
        // Stokes darks only enter through p_S; fold them into an effective
        // detection efficiency so the ratio structure of the model holds.
        let eta_s_eff = (self.eta_s + dark / p).min(1.0);
        let xi = self.xi_cell * modes + dark;
        let g2 = model::g2_model(p, eta_s_eff, self.eta_as, self.chi_r, f * self.eta_s / eta_s_eff, xi)?;
        let g2_noiseless = model::g2_model(p, self.eta_s, self.eta_as, self.chi_r, f, 0.0)?;
        let g2_ideal = model::g2_model(p, self.eta_s, self.eta_as, self.chi_r, 1.0, 0.0)?;
        Ok(RoiModelPoint {
            kappa,
            p_s: p * self.eta_s + dark,
            f_kappa: f,
            g2,
            g2_noiseless,
            g2_ideal,
            g2_tmsv: model::tmsv_g2(p)?,
        })
    }
}

/// Which click streams a [`TileCounter`] correlates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TilePairing {
    /// Stokes tile against the mirrored anti-Stokes tile.
    Conjugate,
    /// The two halves of one arm after a 50:50 split, same tile.
    Halves(Arm),
}

/// Non-overlapping square tiles of side `κ` covering the centre of the
/// field, symmetric about zero so that tile `(i, j)` and
/// `(nx-1-i, ny-1-j)` are conjugate. Counting is O(hits) per frame.
#[derive(Debug, Clone)]
pub struct TileCounter {
    pub kappa: f64,
    pub nx: usize,
    pub ny: usize,
    pub pairing: TilePairing,
    frames: u64,
    both: Vec<u64>,
    first: Vec<u64>,
    second: Vec<u64>,
    scratch_a: Vec<(usize, u64)>,
    scratch_b: Vec<(usize, u64)>,
}

impl PartialEq for TileCounter {
    fn eq(&self, o: &Self) -> bool {
        (self.kappa, self.nx, self.ny, self.pairing, self.frames) == (o.kappa, o.nx, o.ny, o.pairing, o.frames)
            && self.both == o.both
            && self.first == o.first
            && self.second == o.second
    }
}

impl TileCounter {
    pub fn new(kappa: f64, fov: &FieldOfView, pairing: TilePairing) -> Result<Self, AnalysisError> {
        let nx = (fov.kappa_x / kappa).floor() as usize;
        let ny = (fov.kappa_y / kappa).floor() as usize;
        if kappa <= 0.0 || nx == 0 || ny == 0 {
            return Err(AnalysisError::RegionOutsideFov(Region::new(0.0, 0.0, kappa)));
        }
        let n = nx * ny;
        Ok(TileCounter {
            kappa,
            nx,
            ny,
            pairing,
            frames: 0,
            both: vec![0; n],
            first: vec![0; n],
            second: vec![0; n],
            scratch_a: Vec::new(),
            scratch_b: Vec::new(),
        })
    }

    pub fn tiles(&self) -> usize {
        self.nx * self.ny
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    /// Stokes-side (or first-half) region of tile `t`.
    pub fn region(&self, t: usize) -> Region {
        let (ix, iy) = (t % self.nx, t / self.nx);
        let x0 = -0.5 * self.nx as f64 * self.kappa;
        let y0 = -0.5 * self.ny as f64 * self.kappa;
        Region::new(
            x0 + (ix as f64 + 0.5) * self.kappa,
            y0 + (iy as f64 + 0.5) * self.kappa,
            self.kappa,
        )
    }

    fn tile_of(&self, h: &Hit) -> Option<usize> {
        let fx = (h.kx + 0.5 * self.nx as f64 * self.kappa) / self.kappa;
        let fy = (h.ky + 0.5 * self.ny as f64 * self.kappa) / self.kappa;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (ix, iy) = (fx as usize, fy as usize);
        (ix < self.nx && iy < self.ny).then_some(iy * self.nx + ix)
    }

    fn conjugate(&self, t: usize) -> usize {
        self.tiles() - 1 - t
    }

    fn bucket<'h>(&self, hits: impl Iterator<Item = &'h Hit>, mirror: bool, out: &mut Vec<(usize, u64)>) {
        out.clear();
        for h in hits {
            if let Some(mut t) = self.tile_of(h) {
                if mirror {
                    t = self.conjugate(t);
                }
                match out.iter_mut().find(|(k, _)| *k == t) {
                    Some((_, n)) => *n += 1,
                    None => out.push((t, 1)),
                }
            }
        }
    }

    fn tally(&mut self) {
        self.frames += 1;
        for &(t, _) in &self.scratch_a {
            self.first[t] += 1;
            if self.scratch_b.iter().any(|(k, _)| *k == t) {
                self.both[t] += 1;
            }
        }
        for &(t, _) in &self.scratch_b {
            self.second[t] += 1;
        }
    }

    /// Records the two halves of a split frame (for [`TilePairing::Halves`]).
    pub fn observe_split(&mut self, first: &Frame, second: &Frame) {
        let TilePairing::Halves(arm) = self.pairing else {
            panic!("observe_split needs a Halves pairing");
        };
        let mut a = std::mem::take(&mut self.scratch_a);
        let mut b = std::mem::take(&mut self.scratch_b);
        self.bucket(first.arm_hits(arm), false, &mut a);
        self.bucket(second.arm_hits(arm), false, &mut b);
        self.scratch_a = a;
        self.scratch_b = b;
        self.tally();
    }

    pub fn counts(&self, t: usize) -> ClickCounts {
        ClickCounts {
            frames: self.frames,
            both: self.both[t],
            first_only: self.first[t] - self.both[t],
            second_only: self.second[t] - self.both[t],
            ..Default::default()
        }
    }

    /// Counts of all tiles added together, each tile-frame one trial.
    pub fn pooled(&self) -> ClickCounts {
        let mut total = ClickCounts::default();
        for t in 0..self.tiles() {
            total.merge(&self.counts(t));
        }
        total
    }

    /// Mean and standard deviation of the per-tile `g²` values.
    pub fn spread(&self) -> Option<Measurement> {
        let values: Vec<f64> = (0..self.tiles()).filter_map(|t| self.counts(t).g2().ok()).map(|g| g.g2).collect();
        Measurement::from_samples(&values)
    }
}

impl Accumulator for TileCounter {
    fn observe(&mut self, frame: &Frame) {
        let mut a = std::mem::take(&mut self.scratch_a);
        let mut b = std::mem::take(&mut self.scratch_b);
        match self.pairing {
            TilePairing::Conjugate => {
                self.bucket(frame.arm_hits(Arm::Stokes), false, &mut a);
                // Anti-Stokes hits are indexed by the tile they are conjugate to.
                self.bucket(frame.arm_hits(Arm::AntiStokes), true, &mut b);
            }
            TilePairing::Halves(_) => panic!("split frames go through observe_split"),
        }
        self.scratch_a = a;
        self.scratch_b = b;
        self.tally();
    }

    fn merge(&mut self, other: &Self) {
        self.frames += other.frames;
        for (x, y) in self.both.iter_mut().zip(&other.both) {
            *x += y;
        }
        for (x, y) in self.first.iter_mut().zip(&other.first) {
            *x += y;
        }
        for (x, y) in self.second.iter_mut().zip(&other.second) {
            *x += y;
        }
    }
}

/// Layout of the column-ensemble procedure: `columns` conjugate column
/// positions, each holding `regions` overlapping regions of side `kappa`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnGeometry {
    pub regions: usize,
    pub columns: usize,
    pub kappa: f64,
    /// Smallest allowed distance between neighbouring region centres.
    pub min_spacing: f64,
}

impl ColumnGeometry {
    pub const REFERENCE_REGIONS: usize = 100;
    pub const REFERENCE_COLUMNS: usize = 25;

    pub fn reference(kappa: f64, pixel_pitch: f64) -> Self {
        ColumnGeometry {
            regions: Self::REFERENCE_REGIONS,
            columns: Self::REFERENCE_COLUMNS,
            kappa,
            min_spacing: pixel_pitch,
        }
    }

    fn achievable(&self, fov: f64) -> usize {
        if fov < self.kappa {
            0
        } else {
            ((fov - self.kappa) / self.min_spacing + 1e-9).floor() as usize + 1
        }
    }

    pub fn check(&self, fov: &FieldOfView) -> Result<(), AnalysisError> {
        let max_regions = self.achievable(fov.kappa_y);
        let max_columns = self.achievable(fov.kappa_x);
        if self.regions == 0 || self.columns == 0 || self.regions > max_regions || self.columns > max_columns {
            return Err(AnalysisError::InsufficientFov {
                requested: (self.regions, self.columns),
                achievable: (max_regions, max_columns),
            });
        }
        Ok(())
    }

    pub fn column_x(&self, fov: &FieldOfView) -> Vec<f64> {
        spread(self.columns, fov.kappa_x - self.kappa)
    }
}

/// Per-column [`G2Map`]s of the column-ensemble procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnEnsemble {
    pub geometry: ColumnGeometry,
    maps: Vec<G2Map>,
    column_x: Vec<f64>,
    region_y: Vec<f64>,
}

impl ColumnEnsemble {
    pub fn new(geometry: ColumnGeometry, fov: &FieldOfView) -> Result<Self, AnalysisError> {
        geometry.check(fov)?;
        let column_x = geometry.column_x(fov);
        let maps = column_x
            .iter()
            .map(|&x| {
                let (s, a) = conjugate_columns(x, geometry.regions, geometry.kappa, fov);
                G2Map::new(s, a, fov)
            })
            .collect::<Result<_, _>>()?;
        Ok(ColumnEnsemble {
            geometry,
            maps,
            column_x,
            region_y: spread(geometry.regions, fov.kappa_y - geometry.kappa),
        })
    }

    pub fn maps(&self) -> &[G2Map] {
        &self.maps
    }

    /// Columns whose region (Stokes for `sign = 1`, mirrored anti-Stokes
    /// for `sign = -1`) contains `kx`.
    fn column_of(&self, kx: f64, sign: f64) -> impl Iterator<Item = usize> + '_ {
        let h = 0.5 * self.geometry.kappa;
        self.column_x
            .iter()
            .enumerate()
            .filter(move |(_, &x)| kx >= sign * x - h && kx < sign * x + h)
            .map(|(c, _)| c)
    }

    fn rows_of(&self, ky: f64, sign: f64, out: &mut Vec<usize>) {
        out.clear();
        let h = 0.5 * self.geometry.kappa;
        let n = self.region_y.len();
        let inside = |i: usize| {
            let y = sign * self.region_y[i];
            ky >= y - h && ky < y + h
        };
        if n == 1 {
            if inside(0) {
                out.push(0);
            }
            return;
        }
        // Candidate range from the mirrored coordinate, widened by one row so
        // the exact half-open test decides at the boundaries.
        let u = sign * ky;
        let step = self.region_y[1] - self.region_y[0];
        let lo = ((u - h - self.region_y[0]) / step).floor() - 1.0;
        let hi = ((u + h - self.region_y[0]) / step).ceil() + 1.0;
        if hi < 0.0 {
            return;
        }
        let (lo, hi) = (lo.max(0.0) as usize, (hi as usize).min(n - 1));
        out.extend((lo..=hi).filter(|&i| inside(i)));
    }

    /// Mean and sample standard deviation over columns for every map cell.
    pub fn summary(&self) -> EnsembleMap {
        let n = self.geometry.regions;
        let mut mean = vec![f64::NAN; n * n];
        let mut std = vec![f64::NAN; n * n];
        let mut valid = vec![0usize; n * n];
        for i in 0..n {
            for j in 0..n {
                let values: Vec<f64> = self.maps.iter().filter_map(|m| m.estimate(i, j).ok()).map(|g| g.g2).collect();
                valid[i * n + j] = values.len();
                if let Some(m) = Measurement::from_samples(&values) {
                    mean[i * n + j] = m.value;
                    std[i * n + j] = m.stderr;
                }
            }
        }
        EnsembleMap { n, mean, std, valid }
    }
}

impl Accumulator for ColumnEnsemble {
    fn observe(&mut self, frame: &Frame) {
        let mut rows = Vec::new();
        let mut s_clicks: Vec<(usize, usize)> = Vec::new();
        let mut a_clicks: Vec<(usize, usize)> = Vec::new();
        for h in frame.arm_hits(Arm::Stokes) {
            self.rows_of(h.ky, 1.0, &mut rows);
            for c in self.column_of(h.kx, 1.0).collect::<Vec<_>>() {
                s_clicks.extend(rows.iter().map(|&i| (c, i)));
            }
        }
        for h in frame.arm_hits(Arm::AntiStokes) {
            // Anti-Stokes region j of column c sits at (-x_c, -y_j).
            self.rows_of(h.ky, -1.0, &mut rows);
            for c in self.column_of(h.kx, -1.0).collect::<Vec<_>>() {
                a_clicks.extend(rows.iter().map(|&j| (c, j)));
            }
        }
        s_clicks.sort_unstable();
        s_clicks.dedup();
        a_clicks.sort_unstable();
        a_clicks.dedup();
        let n = self.geometry.regions;
        for map in &mut self.maps {
            map.frames += 1;
        }
        for &(c, i) in &s_clicks {
            let map = &mut self.maps[c];
            map.clicks_s[i] += 1;
            for &(c2, j) in &a_clicks {
                if c2 == c {
                    map.both[i * n + j] += 1;
                }
            }
        }
        for &(c, j) in &a_clicks {
            self.maps[c].clicks_as[j] += 1;
        }
    }

    fn merge(&mut self, other: &Self) {
        for (a, b) in self.maps.iter_mut().zip(&other.maps) {
            a.merge(b);
        }
    }
}

/// Cell-wise mean and spread of `g²` over the column ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMap {
    pub n: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns with a defined `g²` in each cell.
    pub valid: Vec<usize>,
}

impl EnsembleMap {
    pub fn mean_at(&self, i: usize, j: usize) -> f64 {
        self.mean[i * self.n + j]
    }

    pub fn std_at(&self, i: usize, j: usize) -> f64 {
        self.std[i * self.n + j]
    }

    /// Averages of the cell means on and off the diagonal.
    pub fn diagonal_and_off(&self) -> (Option<Measurement>, Option<Measurement>) {
        let mut diag = Vec::new();
        let mut off = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                let v = self.mean_at(i, j);
                if v.is_finite() {
                    if i == j {
                        diag.push(v);
                    } else {
                        off.push(v);
                    }
                }
            }
        }
        (Measurement::from_samples(&diag), Measurement::from_samples(&off))
    }
}

/// Column-ensemble estimate of `g²` with one-standard-deviation spreads.
pub fn region_ensemble_uncertainty<'a, I>(frames: I, geometry: ColumnGeometry, fov: &FieldOfView) -> Result<EnsembleMap, AnalysisError>
where
    I: IntoIterator<Item = &'a Frame>,
{
    let ensemble = accumulate(ColumnEnsemble::new(geometry, fov)?, frames);
    if ensemble.maps[0].frames == 0 {
        return Err(AnalysisError::EmptyStream);
    }
    Ok(ensemble.summary())
}

/// Autocorrelation of one arm from 50:50 split frames: clicks of a region
/// in one half against the same region in the other half.
pub fn autocorrelation_estimate<'a, I>(split: I, arm: Arm, region: &Region, fov: &FieldOfView) -> Result<G2Estimate, AnalysisError>
where
    I: IntoIterator<Item = (&'a Frame, &'a Frame)>,
{
    region.check_within(fov)?;
    let mut counts = ClickCounts::default();
    for (a, b) in split {
        counts.record(count_in(a, arm, region), count_in(b, arm, region));
    }
    counts.g2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Origin;

    fn hit(arm: Arm, kx: f64, ky: f64) -> Hit {
        Hit {
            arm,
            kx,
            ky,
            px: 0,
            py: 0,
            origin: Origin::Unknown,
        }
    }

    fn frame(index: u64, hits: Vec<Hit>) -> Frame {
        Frame {
            index,
            storage_time: 0.0,
            hits,
        }
    }

    #[test]
    fn map_cells_match_pair_counter() {
        let fov = FieldOfView::square(20.0);
        let (s, a) = conjugate_columns(3.0, 4, 4.0, &fov);
        let frames = vec![
            frame(0, vec![hit(Arm::Stokes, 3.0, -8.0), hit(Arm::AntiStokes, -3.0, 8.0)]),
            frame(1, vec![hit(Arm::Stokes, 3.0, -8.0), hit(Arm::AntiStokes, -3.0, -8.0)]),
            frame(2, vec![hit(Arm::AntiStokes, -3.0, 0.5)]),
        ];
        let map = g2_map(&frames, s.clone(), a.clone(), &fov).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let pair = RegionPair {
                    center_s: (s[i].cx, s[i].cy),
                    center_as: (a[j].cx, a[j].cy),
                    kappa: 4.0,
                };
                let direct = accumulate(PairCounter::new(vec![pair], &fov).unwrap(), &frames);
                let c = direct.counts()[0];
                let m = map.counts(i, j);
                assert_eq!((m.both, m.clicks_first(), m.clicks_second()), (c.both, c.clicks_first(), c.clicks_second()));
            }
        }
        assert_eq!(map.counts(0, 0).both, 1);
    }

    #[test]
    fn tiles_are_conjugate_symmetric() {
        let fov = FieldOfView::square(10.0);
        let t = TileCounter::new(2.0, &fov, TilePairing::Conjugate).unwrap();
        assert_eq!((t.nx, t.ny), (5, 5));
        for k in 0..t.tiles() {
            let r = t.region(k);
            let c = t.region(t.conjugate(k));
            assert!((r.cx + c.cx).abs() < 1e-12 && (r.cy + c.cy).abs() < 1e-12);
            assert_eq!(t.tile_of(&hit(Arm::Stokes, r.cx, r.cy)), Some(k));
        }
    }

    #[test]
    fn tile_counts_match_pair_counter() {
        let fov = FieldOfView::square(9.0);
        let frames = vec![
            frame(0, vec![hit(Arm::Stokes, 1.0, 1.0), hit(Arm::AntiStokes, -1.2, -0.9)]),
            frame(1, vec![hit(Arm::Stokes, 1.0, 1.0), hit(Arm::Stokes, 1.1, 1.1)]),
            frame(2, vec![hit(Arm::AntiStokes, 3.0, 3.0)]),
        ];
        let tiles = accumulate(TileCounter::new(3.0, &fov, TilePairing::Conjugate).unwrap(), &frames);
        for t in 0..tiles.tiles() {
            let r = tiles.region(t);
            let pc = accumulate(PairCounter::new(vec![RegionPair::conjugate((r.cx, r.cy), 3.0)], &fov).unwrap(), &frames);
            let (a, b) = (tiles.counts(t), pc.counts()[0]);
            assert_eq!((a.both, a.first_only, a.second_only, a.frames), (b.both, b.first_only, b.second_only, b.frames));
        }
    }

    #[test]
    fn column_ensemble_matches_direct_maps() {
        let fov = FieldOfView::square(30.0);
        let geometry = ColumnGeometry {
            regions: 7,
            columns: 3,
            kappa: 6.0,
            min_spacing: 1.0,
        };
        let frames: Vec<Frame> = (0..40)
            .map(|i| {
                let x = (i as f64 * 0.37).sin() * 14.0;
                let y = (i as f64 * 0.73).cos() * 14.0;
                frame(i, vec![hit(Arm::Stokes, x, y), hit(Arm::AntiStokes, -x + 0.5, -y - 1.0), hit(Arm::AntiStokes, y, x)])
            })
            .collect();
        let ens = accumulate(ColumnEnsemble::new(geometry, &fov).unwrap(), &frames);
        for (c, x) in geometry.column_x(&fov).into_iter().enumerate() {
            let (s, a) = conjugate_columns(x, 7, 6.0, &fov);
            let direct = g2_map(&frames, s, a, &fov).unwrap();
            let e = &ens.maps()[c];
            assert_eq!((&e.clicks_s, &e.clicks_as, &e.both, e.frames), (&direct.clicks_s, &direct.clicks_as, &direct.both, direct.frames), "column {c}");
        }
    }

    #[test]
    fn insufficient_fov_lists_capacity() {
        let fov = FieldOfView::square(50.0);
        match ColumnEnsemble::new(ColumnGeometry::reference(10.0, 2.1), &fov) {
            Err(AnalysisError::InsufficientFov { achievable, .. }) => assert_eq!(achievable, (20, 20)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn identical_columns_have_zero_spread() {
        let fov = FieldOfView::square(30.0);
        let geometry = ColumnGeometry {
            regions: 3,
            columns: 2,
            kappa: 6.0,
            min_spacing: 1.0,
        };
        let xs = geometry.column_x(&fov);
        let mut frames = Vec::new();
        for i in 0..20u64 {
            let mut hits = Vec::new();
            if i % 2 == 0 {
                for &x in &xs {
                    hits.push(hit(Arm::Stokes, x, 0.0));
                    hits.push(hit(Arm::AntiStokes, -x, 0.0));
                }
            }
            if i % 5 == 0 {
                for &x in &xs {
                    hits.push(hit(Arm::AntiStokes, -x, -12.0));
                }
            }
            frames.push(frame(i, hits));
        }
        let e = region_ensemble_uncertainty(&frames, geometry, &fov).unwrap();
        assert_eq!(e.std_at(1, 1), 0.0);
        assert_eq!(e.valid[1 * 3 + 1], 2);
    }

    #[test]
    fn model_overlay_limits() {
        let inputs = RoiModelInputs {
            sigma_x: 4.45,
            sigma_y: 4.76,
            p_mode: 0.01,
            cell_area: 15.75 * 16.85,
            eta_s: 0.08,
            eta_as: 0.08,
            chi_r: 0.35,
            xi_cell: 0.0,
            dark_density: 0.0,
        };
        let pt = inputs.at(20.0).unwrap();
        assert!((pt.g2 - pt.g2_noiseless).abs() < 1e-12);
        assert!(pt.g2_ideal > pt.g2_noiseless);
        let noisy = RoiModelInputs { xi_cell: 1e-4, ..inputs }.at(20.0).unwrap();
        assert!(noisy.g2 < pt.g2);
    }
}
