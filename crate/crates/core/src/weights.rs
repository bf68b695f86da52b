use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-12;

/// Probability weights on a finite signal alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceWeights(Vec<f64>);

impl SourceWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("weights must not be empty".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < -SIMPLEX_TOL) {
            return Err(Error::InvalidArgument(format!("weights must be nonnegative: {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL * weights.len() as f64 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        Ok(Self(weights.into_iter().map(|w| w.max(0.0)).collect()))
    }

    pub fn uniform(count: usize) -> Self {
        Self(vec![1.0 / count as f64; count])
    }

    /// Unit mass on `index`.
    pub fn vertex(count: usize, index: usize) -> Self {
        let mut w = vec![0.0; count];
        w[index] = 1.0;
        Self(w)
    }

    pub(crate) fn from_raw_unchecked(weights: Vec<f64>) -> Self {
        Self(weights)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// `λ self + (1 - λ) other`.
    pub fn mix(&self, other: &SourceWeights, lambda: f64) -> SourceWeights {
        Self(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect(),
        )
    }
}
