//! Box domains, patch supports and separable patch profiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[0, L_1] x ... x [0, L_d]` filled with a medium of
/// wave speed `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    lengths: Vec<f64>,
    wave_speed: f64,
}

impl Domain {
    pub fn new(lengths: Vec<f64>, wave_speed: f64) -> Result<Self> {
        if lengths.is_empty() || lengths.len() > 3 {
            return Err(Error::Unsupported(format!(
                "domains must have 1, 2 or 3 dimensions, got {}",
                lengths.len()
            )));
        }
        if let Some(l) = lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::Geometry(format!("box side lengths must be positive, got {l}")));
        }
        if !(wave_speed.is_finite() && wave_speed > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "wave speed must be positive, got {wave_speed}"
            )));
        }
        Ok(Self { lengths, wave_speed })
    }

    pub fn dims(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn wave_speed(&self) -> f64 {
        self.wave_speed
    }

    pub fn contains(&self, region: &Region) -> bool {
        region.dims() == self.dims()
            && region
                .lo
                .iter()
                .zip(&region.hi)
                .zip(&self.lengths)
                .all(|((lo, hi), l)| *lo >= 0.0 && *hi <= *l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    /// Pairs with distributed sources inside the domain.
    Neumann,
    /// Pairs with sources acting through boundary data.
    Dirichlet,
}

/// Axis-aligned support box. An axis with `lo == hi` is degenerate: the
/// patch is evaluated at that coordinate instead of integrated across it,
/// which models surface (or point) patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Geometry("region bounds have different dimensions".into()));
        }
        if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            return Err(Error::Geometry("region bounds must be finite".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return Err(Error::Geometry(format!("region lower bound exceeds upper bound: {lo:?} > {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn point(at: Vec<f64>) -> Self {
        Self { lo: at.clone(), hi: at }
    }

    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }
}

/// One-dimensional factor of a separable profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Constant,
    /// `(4 (x - a)(b - x) / (b - a)^2)^power` on `[a, b]`, peak value one.
    Bump { power: u32 },
    /// `sin(wavenumber * x)` in absolute coordinates.
    Sine { wavenumber: f64 },
    /// `cos(wavenumber * x)` in absolute coordinates.
    Cosine { wavenumber: f64 },
}

impl Factor {
    pub fn eval(&self, x: f64, lo: f64, hi: f64) -> f64 {
        match *self {
            Factor::Constant => 1.0,
            Factor::Bump { power } => {
                if hi == lo {
                    return 1.0;
                }
                let s = 4.0 * (x - lo) * (hi - x) / ((hi - lo) * (hi - lo));
                s.max(0.0).powi(power as i32)
            }
            Factor::Sine { wavenumber } => (wavenumber * x).sin(),
            Factor::Cosine { wavenumber } => (wavenumber * x).cos(),
        }
    }
}

/// Separable spatial profile, one factor per axis (a single factor is
/// broadcast to every axis).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub factors: Vec<Factor>,
}

impl Profile {
    pub fn constant() -> Self {
        Self {
            factors: vec![Factor::Constant],
        }
    }

    pub fn bump(power: u32) -> Self {
        Self {
            factors: vec![Factor::Bump { power }],
        }
    }

    pub fn separable(factors: Vec<Factor>) -> Self {
        Self { factors }
    }

    pub fn factor(&self, axis: usize) -> Factor {
        if self.factors.len() == 1 {
            self.factors[0]
        } else {
            self.factors.get(axis).copied().unwrap_or(Factor::Constant)
        }
    }
}

/// `amplitude * profile(ξ)` on `region`, zero elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchFunction {
    pub region: Region,
    pub profile: Profile,
    pub amplitude: f64,
}

impl PatchFunction {
    pub fn new(region: Region, profile: Profile, amplitude: f64) -> Self {
        Self {
            region,
            profile,
            amplitude,
        }
    }

    pub fn constant(region: Region) -> Self {
        Self::new(region, Profile::constant(), 1.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if !self.region.contains_point(x) {
            return 0.0;
        }
        self.amplitude
            * x.iter()
                .enumerate()
                .map(|(axis, v)| {
                    self.profile
                        .factor(axis)
                        .eval(*v, self.region.lo[axis], self.region.hi[axis])
                })
                .product::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_validation() {
        assert!(Domain::new(vec![1.0], 1.0).is_ok());
        assert!(matches!(Domain::new(vec![], 1.0), Err(Error::Unsupported(_))));
        assert!(matches!(
            Domain::new(vec![1.0; 4], 1.0),
            Err(Error::Unsupported(_))
        ));
        assert!(Domain::new(vec![1.0, -2.0], 1.0).is_err());
        assert!(Domain::new(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn patch_is_zero_outside_support() {
        let r = Region::new(vec![0.2, 0.0], vec![0.4, 1.0]).unwrap();
        let p = PatchFunction::new(r, Profile::bump(2), 3.0);
        assert_eq!(p.eval(&[0.5, 0.5]), 0.0);
        assert!((p.eval(&[0.3, 0.5]) - 3.0).abs() < 1e-12);
        assert_eq!(p.eval(&[0.2, 0.5]), 0.0);
    }

    #[test]
    fn containment() {
        let d = Domain::new(vec![1.0, 2.0], 1.0).unwrap();
        assert!(d.contains(&Region::new(vec![0.0, 0.5], vec![1.0, 2.0]).unwrap()));
        assert!(!d.contains(&Region::new(vec![0.0, 0.5], vec![1.1, 2.0]).unwrap()));
        assert!(!d.contains(&Region::new(vec![0.0], vec![1.0]).unwrap()));
    }
}
