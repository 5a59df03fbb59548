//! Click counting and the `g²` estimator.
//!
//! A region "clicks" in a frame when at least one hit falls inside it. For
//! a pair of regions the per-frame outcomes form a 2×2 contingency table
//! (both, first only, second only, neither) whose cell counts are a
//! commutative monoid under addition.

use super::region::{FieldOfView, Region, RegionPair};
use super::{AnalysisError, Measurement};
use crate::sim::{Arm, Frame, Origin};

/// Contingency counts of two binary detectors over a number of frames,
/// plus photon-number moments for the alternative estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClickCounts {
    pub frames: u64,
    pub both: u64,
    pub first_only: u64,
    pub second_only: u64,
    pub photons_first: u64,
    pub photons_second: u64,
    pub photon_products: u64,
}

impl ClickCounts {
    /// Records one frame in which the two detectors saw `n1` and `n2` photons.
    #[inline]
    pub fn record(&mut self, n1: u64, n2: u64) {
        self.frames += 1;
        match (n1 > 0, n2 > 0) {
            (true, true) => self.both += 1,
            (true, false) => self.first_only += 1,
            (false, true) => self.second_only += 1,
            (false, false) => {}
        }
        self.photons_first += n1;
        self.photons_second += n2;
        self.photon_products += n1 * n2;
    }

    pub fn merge(&mut self, other: &ClickCounts) {
        self.frames += other.frames;
        self.both += other.both;
        self.first_only += other.first_only;
        self.second_only += other.second_only;
        self.photons_first += other.photons_first;
        self.photons_second += other.photons_second;
        self.photon_products += other.photon_products;
    }

    pub fn clicks_first(&self) -> u64 {
        self.both + self.first_only
    }

    pub fn clicks_second(&self) -> u64 {
        self.both + self.second_only
    }

    pub fn p_first(&self) -> f64 {
        self.clicks_first() as f64 / self.frames as f64
    }

    pub fn p_second(&self) -> f64 {
        self.clicks_second() as f64 / self.frames as f64
    }

    pub fn p_both(&self) -> f64 {
        self.both as f64 / self.frames as f64
    }

    /// Click-based `g² = p₁₂ / (p₁ p₂)`.
    ///
    /// The standard error comes from the delta method applied to the
    /// multinomial counts `(n₁₂, n₁₀, n₀₁, n₀₀)`:
    /// `Var(ln g) = (Σ aᵢ² πᵢ − 1) / N` with
    /// `a = (1/π₁₂ − 1/π₁ − 1/π₂, −1/π₁, −1/π₂, 0)`.
    /// With no coincidences the value is 0 and the error is the value one
    /// coincidence would give.
    pub fn g2(&self) -> Result<G2Estimate, AnalysisError> {
        if self.frames == 0 {
            return Err(AnalysisError::EmptyStream);
        }
        let (n1, n2) = (self.clicks_first(), self.clicks_second());
        if n1 == 0 || n2 == 0 {
            return Err(AnalysisError::ZeroDenominator { clicks_first: n1, clicks_second: n2 });
        }
        let n = self.frames as f64;
        let (p1, p2, p12) = (self.p_first(), self.p_second(), self.p_both());
        let g2 = p12 / (p1 * p2);
        let stderr = if self.both == 0 {
            1.0 / (n * p1 * p2)
        } else {
            let p10 = self.first_only as f64 / n;
            let p01 = self.second_only as f64 / n;
            let a12 = 1.0 / p12 - 1.0 / p1 - 1.0 / p2;
            let quad = a12 * a12 * p12 + p10 / (p1 * p1) + p01 / (p2 * p2);
            g2 * ((quad - 1.0).max(0.0) / n).sqrt()
        };
        Ok(G2Estimate {
            p_s: p1,
            p_as: p2,
            p_sas: p12,
            g2,
            stderr,
            n_frames: self.frames,
        })
    }

    /// Photon-number estimator `⟨n₁n₂⟩ / (⟨n₁⟩⟨n₂⟩)`, not used by default.
    pub fn g2_photon_number(&self) -> Result<f64, AnalysisError> {
        if self.frames == 0 {
            return Err(AnalysisError::EmptyStream);
        }
        if self.photons_first == 0 || self.photons_second == 0 {
            return Err(AnalysisError::ZeroDenominator {
                clicks_first: self.photons_first,
                clicks_second: self.photons_second,
            });
        }
        let n = self.frames as f64;
        Ok(self.photon_products as f64 * n / (self.photons_first as f64 * self.photons_second as f64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct G2Estimate {
    pub p_s: f64,
    pub p_as: f64,
    pub p_sas: f64,
    pub g2: f64,
    pub stderr: f64,
    pub n_frames: u64,
}

impl G2Estimate {
    pub fn measurement(&self) -> Measurement {
        Measurement::new(self.g2, self.stderr)
    }
}

#[inline]
pub(crate) fn count_in(frame: &Frame, arm: Arm, region: &Region) -> u64 {
    frame.arm_hits(arm).filter(|h| region.contains_hit(h)).count() as u64
}

/// Streaming accumulator for a fixed list of region pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCounter {
    pairs: Vec<RegionPair>,
    counts: Vec<ClickCounts>,
}

impl PairCounter {
    pub fn new(pairs: Vec<RegionPair>, fov: &FieldOfView) -> Result<Self, AnalysisError> {
        for p in &pairs {
            p.check_within(fov)?;
        }
        let counts = vec![ClickCounts::default(); pairs.len()];
        Ok(PairCounter { pairs, counts })
    }

    pub fn pairs(&self) -> &[RegionPair] {
        &self.pairs
    }

    pub fn counts(&self) -> &[ClickCounts] {
        &self.counts
    }
}

impl super::Accumulator for PairCounter {
    fn observe(&mut self, frame: &Frame) {
        for (pair, counts) in self.pairs.iter().zip(&mut self.counts) {
            let s = count_in(frame, Arm::Stokes, &pair.stokes());
            let a = count_in(frame, Arm::AntiStokes, &pair.anti_stokes());
            counts.record(s, a);
        }
    }

    fn merge(&mut self, other: &Self) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.merge(b);
        }
    }
}

/// Per-frame click probabilities of one region pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoincidenceCounts {
    pub p_s: f64,
    pub p_as: f64,
    pub p_sas: f64,
    pub raw: ClickCounts,
}

/// Single pass over `frames` counting clicks in both regions of `pair`.
pub fn count_coincidences<'a, I>(frames: I, pair: &RegionPair, fov: &FieldOfView) -> Result<CoincidenceCounts, AnalysisError>
where
    I: IntoIterator<Item = &'a Frame>,
{
    let counter = super::accumulate(PairCounter::new(vec![*pair], fov)?, frames);
    let raw = counter.counts[0];
    if raw.frames == 0 {
        return Err(AnalysisError::EmptyStream);
    }
    Ok(CoincidenceCounts {
        p_s: raw.p_first(),
        p_as: raw.p_second(),
        p_sas: raw.p_both(),
        raw,
    })
}

/// Click-based `g²` of one region pair.
pub fn g2_estimate<'a, I>(frames: I, pair: &RegionPair, fov: &FieldOfView) -> Result<G2Estimate, AnalysisError>
where
    I: IntoIterator<Item = &'a Frame>,
{
    count_coincidences(frames, pair, fov)?.raw.g2()
}

/// Ground-truth split of Stokes × anti-Stokes hit pairs falling in a region
/// pair: those whose photons were born in the same mode cell versus all.
/// Needs simulator provenance; hits read from files carry none.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProvenanceCounts {
    pub pair: Option<(u64, u64)>,
    pub conjugate: u64,
    pub total: u64,
}

impl ProvenanceCounts {
    pub fn fraction(&self) -> f64 {
        self.conjugate as f64 / self.total as f64
    }
}

pub fn conjugate_fraction<'a, I>(frames: I, pair: &RegionPair) -> ProvenanceCounts
where
    I: IntoIterator<Item = &'a Frame>,
{
    let (rs, ra) = (pair.stokes(), pair.anti_stokes());
    let mut out = ProvenanceCounts::default();
    for frame in frames {
        for s in frame.arm_hits(Arm::Stokes).filter(|h| rs.contains_hit(h)) {
            for a in frame.arm_hits(Arm::AntiStokes).filter(|h| ra.contains_hit(h)) {
                out.total += 1;
                if let (Origin::Pair { cell: c1, .. }, Origin::Pair { cell: c2, .. }) = (s.origin, a.origin) {
                    out.conjugate += (c1 == c2) as u64;
                }
            }
        }
    }
    out
}
