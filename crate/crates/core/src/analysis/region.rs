//! Square regions of interest in wavevector space.

use super::AnalysisError;
use crate::sim::Hit;

/// Full extent of the imaged field, centred on zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOfView {
    pub kappa_x: f64,
    pub kappa_y: f64,
}

impl FieldOfView {
    pub fn square(kappa: f64) -> Self {
        FieldOfView {
            kappa_x: kappa,
            kappa_y: kappa,
        }
    }
}

/// Axis-aligned square `[cx - κ/2, cx + κ/2) × [cy - κ/2, cy + κ/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub cx: f64,
    pub cy: f64,
    pub kappa: f64,
}

const EDGE_SLACK: f64 = 1e-9;

impl Region {
    pub fn new(cx: f64, cy: f64, kappa: f64) -> Self {
        Region { cx, cy, kappa }
    }

    #[inline]
    pub fn contains(&self, kx: f64, ky: f64) -> bool {
        let h = 0.5 * self.kappa;
        kx >= self.cx - h && kx < self.cx + h && ky >= self.cy - h && ky < self.cy + h
    }

    #[inline]
    pub fn contains_hit(&self, hit: &Hit) -> bool {
        self.contains(hit.kx, hit.ky)
    }

    pub fn mirrored(&self) -> Region {
        Region::new(-self.cx, -self.cy, self.kappa)
    }

    pub fn check_within(&self, fov: &FieldOfView) -> Result<(), AnalysisError> {
        let h = 0.5 * self.kappa;
        let inside = |c: f64, side: f64| c - h >= -0.5 * side - EDGE_SLACK && c + h <= 0.5 * side + EDGE_SLACK;
        if self.kappa > 0.0 && inside(self.cx, fov.kappa_x) && inside(self.cy, fov.kappa_y) {
            Ok(())
        } else {
            Err(AnalysisError::RegionOutsideFov(*self))
        }
    }
}

/// A Stokes region and an anti-Stokes region of equal size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionPair {
    pub center_s: (f64, f64),
    pub center_as: (f64, f64),
    pub kappa: f64,
}

impl RegionPair {
    /// Stokes region at `center` and its mirror image in the anti-Stokes arm.
    pub fn conjugate(center: (f64, f64), kappa: f64) -> Self {
        RegionPair {
            center_s: center,
            center_as: (-center.0, -center.1),
            kappa,
        }
    }

    pub fn stokes(&self) -> Region {
        Region::new(self.center_s.0, self.center_s.1, self.kappa)
    }

    pub fn anti_stokes(&self) -> Region {
        Region::new(self.center_as.0, self.center_as.1, self.kappa)
    }

    /// Whether the centres sum to zero within half a pixel on both axes.
    pub fn is_conjugate(&self, pixel_pitch: f64) -> bool {
        let tol = 0.5 * pixel_pitch;
        (self.center_s.0 + self.center_as.0).abs() <= tol && (self.center_s.1 + self.center_as.1).abs() <= tol
    }

    pub fn check_within(&self, fov: &FieldOfView) -> Result<(), AnalysisError> {
        self.stokes().check_within(fov)?;
        self.anti_stokes().check_within(fov)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_open_boundaries() {
        let r = Region::new(0.0, 0.0, 2.0);
        assert!(r.contains(-1.0, -1.0));
        assert!(!r.contains(1.0, 0.0));
        assert!(!r.contains(0.0, 1.0));
        assert!(r.contains(0.999_999, 0.999_999));
    }

    #[test]
    fn adjacent_regions_do_not_share_hits() {
        let a = Region::new(-1.0, 0.0, 2.0);
        let b = Region::new(1.0, 0.0, 2.0);
        for x in [-2.0, -1.0, 0.0, 1.0, 1.999] {
            assert!(a.contains(x, 0.0) ^ b.contains(x, 0.0) || x >= 2.0, "{x}");
        }
    }

    #[test]
    fn conjugacy_tolerance() {
        let p = RegionPair {
            center_s: (10.0, -4.0),
            center_as: (-10.9, 4.0),
            kappa: 5.0,
        };
        assert!(p.is_conjugate(2.1));
        assert!(!p.is_conjugate(1.0));
        assert!(RegionPair::conjugate((3.0, 7.0), 2.0).is_conjugate(1e-12));
    }

    #[test]
    fn fov_containment() {
        let fov = FieldOfView::square(10.0);
        assert!(Region::new(0.0, 0.0, 10.0).check_within(&fov).is_ok());
        assert!(Region::new(3.0, 0.0, 4.0).check_within(&fov).is_ok());
        assert!(Region::new(3.1, 0.0, 4.0).check_within(&fov).is_err());
        assert!(RegionPair::conjugate((0.0, -3.5), 4.0).check_within(&fov).is_err());
    }
}
