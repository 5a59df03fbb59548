//! Uniformly binned two-dimensional coincidence histograms.

use super::{AnalysisError, Accumulator};
use crate::sim::{Arm, Frame};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Binning {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Binning {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self, AnalysisError> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) || bins == 0 {
            return Err(AnalysisError::Binning(format!("[{lo}, {hi}) with {bins} bins")));
        }
        Ok(Binning { lo, hi, bins })
    }

    /// Bins of `width` centred on zero spanning at least `[-half, half)`.
    pub fn centered(half: f64, width: f64) -> Result<Self, AnalysisError> {
        let per_side = (half / width).ceil().max(1.0);
        Binning::new(-per_side * width, per_side * width, 2 * per_side as usize)
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    #[inline]
    pub fn index(&self, v: f64) -> Option<usize> {
        if v >= self.lo && v < self.hi {
            Some((((v - self.lo) / self.width()) as usize).min(self.bins - 1))
        } else {
            None
        }
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins).map(|i| self.lo + i as f64 * self.width()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn label(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
        }
    }
}

/// What the two histogram coordinates mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Semantics {
    /// `(k_axis,S, k_axis,AS)`
    Joint(Axis),
    /// `(k_x,S + k_x,AS, k_y,S + k_y,AS)`
    CenterOfMass,
}

impl Semantics {
    pub fn describe(&self) -> String {
        match self {
            Semantics::Joint(a) => format!("k{0}_S,k{0}_AS", a.label()),
            Semantics::CenterOfMass => "kx_S+kx_AS,ky_S+ky_AS".to_string(),
        }
    }
}

/// Counts of every Stokes × anti-Stokes hit pair within each frame. Pairs
/// outside the binned range are tallied in `outside`, so `total()` always
/// equals the number of pairs seen.
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceHistogram {
    pub semantics: Semantics,
    pub x: Binning,
    pub y: Binning,
    /// Row-major, `counts[iy * x.bins + ix]`.
    pub counts: Vec<u64>,
    pub outside: u64,
}

impl CoincidenceHistogram {
    pub fn new(semantics: Semantics, x: Binning, y: Binning) -> Self {
        CoincidenceHistogram {
            semantics,
            x,
            y,
            counts: vec![0; x.bins * y.bins],
            outside: 0,
        }
    }

    #[inline]
    pub fn fill(&mut self, u: f64, v: f64) {
        match (self.x.index(u), self.y.index(v)) {
            (Some(i), Some(j)) => self.counts[j * self.x.bins + i] += 1,
            _ => self.outside += 1,
        }
    }

    pub fn get(&self, ix: usize, iy: usize) -> u64 {
        self.counts[iy * self.x.bins + ix]
    }

    pub fn in_range(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.in_range() + self.outside
    }
}

impl Accumulator for CoincidenceHistogram {
    fn observe(&mut self, frame: &Frame) {
        for s in frame.arm_hits(Arm::Stokes) {
            for a in frame.arm_hits(Arm::AntiStokes) {
                let (u, v) = match self.semantics {
                    Semantics::Joint(Axis::X) => (s.kx, a.kx),
                    Semantics::Joint(Axis::Y) => (s.ky, a.ky),
                    Semantics::CenterOfMass => (s.kx + a.kx, s.ky + a.ky),
                };
                self.fill(u, v);
            }
        }
    }

    fn merge(&mut self, other: &Self) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.outside += other.outside;
    }
}

/// Joint histogram of one wavevector component in the two arms, without
/// any background subtraction.
pub fn coincidence_map<'a, I>(frames: I, axis: Axis, binning: Binning) -> CoincidenceHistogram
where
    I: IntoIterator<Item = &'a Frame>,
{
    super::accumulate(CoincidenceHistogram::new(Semantics::Joint(axis), binning, binning), frames)
}

/// Histogram over the centre-of-mass sums `k_S + k_AS` on both axes.
pub fn com_histogram<'a, I>(frames: I, x: Binning, y: Binning) -> CoincidenceHistogram
where
    I: IntoIterator<Item = &'a Frame>,
{
    super::accumulate(CoincidenceHistogram::new(Semantics::CenterOfMass, x, y), frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Hit, Origin};

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

    #[test]
    fn binning_edges() {
        let b = Binning::new(-2.0, 2.0, 4).unwrap();
        assert_eq!(b.index(-2.0), Some(0));
        assert_eq!(b.index(-1.0), Some(1));
        assert_eq!(b.index(1.999), Some(3));
        assert_eq!(b.index(2.0), None);
        assert_eq!(b.center(0), -1.5);
        assert_eq!(b.edges(), vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert!(Binning::new(1.0, 1.0, 3).is_err());
        let c = Binning::centered(5.0, 2.0).unwrap();
        assert_eq!((c.lo, c.hi, c.bins), (-6.0, 6.0, 6));
    }

    #[test]
    fn single_anticorrelated_pair() {
        let b = Binning::new(-10.0, 10.0, 20).unwrap();
        let frames = vec![Frame {
            index: 0,
            storage_time: 0.0,
            hits: vec![hit(Arm::Stokes, 0.0, 3.5), hit(Arm::AntiStokes, 0.0, -3.5)],
        }];
        let h = coincidence_map(&frames, Axis::Y, b);
        assert_eq!(h.total(), 1);
        assert_eq!(h.get(b.index(3.5).unwrap(), b.index(-3.5).unwrap()), 1);
    }

    #[test]
    fn all_cross_pairs_are_counted() {
        let b = Binning::new(-1.0, 1.0, 2).unwrap();
        let frames = vec![Frame {
            index: 0,
            storage_time: 0.0,
            hits: vec![
                hit(Arm::Stokes, 0.5, 0.5),
                hit(Arm::Stokes, -0.5, 0.5),
                hit(Arm::AntiStokes, 0.5, 5.0),
            ],
        }];
        let h = com_histogram(&frames, b, b);
        assert_eq!(h.total(), 2);
        assert_eq!(h.outside, 2);
    }
}
