use crate::error::{CoreError, Result};

/// Per-state feature vectors phi(s) of dimension k.
///
/// The default map is one-hot (k = n_states); a dense matrix is accepted for
/// anything richer.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    OneHot { n_states: usize },
    Dense { n_states: usize, k: usize, rows: Vec<f64> },
}

impl FeatureMap {
    pub fn one_hot(n_states: usize) -> Self {
        FeatureMap::OneHot { n_states }
    }

    pub fn dense(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        if n_states == 0 {
            return Err(CoreError::InvalidSpec("feature map must cover at least one state".into()));
        }
        let k = rows[0].len();
        if k == 0 {
            return Err(CoreError::InvalidSpec("feature dimension must be positive".into()));
        }
        let mut flat = Vec::with_capacity(n_states * k);
        for row in &rows {
            if row.len() != k {
                return Err(CoreError::DimensionMismatch {
                    what: "feature row length",
                    expected: k,
                    got: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        Ok(FeatureMap::Dense { n_states, k, rows: flat })
    }

    pub fn n_states(&self) -> usize {
        match self {
            FeatureMap::OneHot { n_states } => *n_states,
            FeatureMap::Dense { n_states, .. } => *n_states,
        }
    }

    /// Feature dimension k.
    pub fn k(&self) -> usize {
        match self {
            FeatureMap::OneHot { n_states } => *n_states,
            FeatureMap::Dense { k, .. } => *k,
        }
    }

    /// theta' phi(s).
    pub fn dot(&self, s: usize, theta: &[f64]) -> f64 {
        match self {
            FeatureMap::OneHot { .. } => theta[s],
            FeatureMap::Dense { k, rows, .. } => rows[s * k..(s + 1) * k]
                .iter()
                .zip(theta)
                .map(|(f, t)| f * t)
                .sum(),
        }
    }

    /// Accumulate `scale * phi(s)` into `out` (length k).
    pub fn add_scaled(&self, s: usize, scale: f64, out: &mut [f64]) {
        match self {
            FeatureMap::OneHot { .. } => out[s] += scale,
            FeatureMap::Dense { k, rows, .. } => {
                for (o, f) in out.iter_mut().zip(&rows[s * k..(s + 1) * k]) {
                    *o += scale * f;
                }
            }
        }
    }

    /// phi(s) as an owned vector.
    pub fn feature(&self, s: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.k()];
        self.add_scaled(s, 1.0, &mut out);
        out
    }
}

/// Linear state reward r(s) = theta' phi(s).
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    theta: Vec<f64>,
    features: FeatureMap,
}

impl RewardModel {
    pub fn new(theta: Vec<f64>, features: FeatureMap) -> Result<Self> {
        if theta.len() != features.k() {
            return Err(CoreError::DimensionMismatch {
                what: "theta length",
                expected: features.k(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(CoreError::NonFinite { what: "theta" });
        }
        Ok(Self { theta, features })
    }

    /// One-hot features with k = len(theta).
    pub fn one_hot(theta: Vec<f64>) -> Result<Self> {
        let n = theta.len();
        Self::new(theta, FeatureMap::one_hot(n))
    }

    /// Same feature map, different weights.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        Self::new(theta, self.features.clone())
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn n_states(&self) -> usize {
        self.features.n_states()
    }

    /// r(s) = theta' phi(s).
    pub fn reward_of(&self, s: usize) -> Result<f64> {
        if s >= self.features.n_states() {
            return Err(CoreError::IndexOutOfRange {
                what: "state",
                index: s,
                len: self.features.n_states(),
            });
        }
        Ok(self.features.dot(s, &self.theta))
    }

    /// r(s) for every state, in order.
    pub fn reward_vector(&self) -> Vec<f64> {
        (0..self.features.n_states())
            .map(|s| self.features.dot(s, &self.theta))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_reward_is_theta_entry() {
        let rm = RewardModel::one_hot(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(rm.reward_of(1).unwrap(), 1.0);
        assert_eq!(rm.reward_of(0).unwrap(), 0.0);
    }

    #[test]
    fn dense_reward_is_inner_product() {
        let features = FeatureMap::dense(vec![vec![1.0, 2.0]]).unwrap();
        let rm = RewardModel::new(vec![0.5, 0.25], features).unwrap();
        assert_eq!(rm.reward_of(0).unwrap(), 1.0);
    }

    #[test]
    fn out_of_range_state_errors() {
        let rm = RewardModel::one_hot(vec![0.0, 1.0]).unwrap();
        assert!(rm.reward_of(2).is_err());
    }

    #[test]
    fn theta_length_must_match_k() {
        let features = FeatureMap::dense(vec![vec![1.0, 2.0]]).unwrap();
        assert!(RewardModel::new(vec![1.0], features).is_err());
    }

    #[test]
    fn feature_accumulation_matches_feature() {
        let features = FeatureMap::dense(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let mut acc = vec![0.0; 2];
        features.add_scaled(1, 0.5, &mut acc);
        assert_eq!(acc, vec![1.5, 2.0]);
        assert_eq!(features.feature(0), vec![1.0, 2.0]);
    }
}
