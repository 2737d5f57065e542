use crate::error::{CoreError, Result};
use crate::graph::ConnectivityGraph;
use crate::reward::FeatureMap;

/// A state-action sequence S0, A0, S1, ..., A_{L-1}, S_L.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    states: Vec<usize>,
    actions: Vec<usize>,
}

impl Trajectory {
    /// `states` must be exactly one longer than `actions`.
    pub fn new(states: Vec<usize>, actions: Vec<usize>) -> Result<Self> {
        if states.is_empty() {
            return Err(CoreError::EmptyTrajectory);
        }
        if states.len() != actions.len() + 1 {
            return Err(CoreError::DimensionMismatch {
                what: "trajectory states",
                expected: actions.len() + 1,
                got: states.len(),
            });
        }
        Ok(Self { states, actions })
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    /// Number of actions taken.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Every step must use an in-range action and land on a successor the
    /// graph allows for that (state, action) pair.
    pub fn check_against(&self, graph: &ConnectivityGraph) -> Result<()> {
        for (t, window) in self.states.windows(2).enumerate() {
            let (s, s_next) = (window[0], window[1]);
            if s >= graph.n_states() || s_next >= graph.n_states() {
                return Err(CoreError::IndexOutOfRange {
                    what: "trajectory state",
                    index: s.max(s_next),
                    len: graph.n_states(),
                });
            }
            let a = self.actions[t];
            if a >= graph.n_actions() {
                return Err(CoreError::IndexOutOfRange {
                    what: "trajectory action",
                    index: a,
                    len: graph.n_actions(),
                });
            }
            if !graph.allows(s, a, s_next) {
                return Err(CoreError::InvalidSpec(format!(
                    "step {t}: transition {s} -> {s_next} under action {a} not in connectivity graph"
                )));
            }
        }
        // A bare start state still needs to be in range.
        if let Some(&s0) = self.states.first() {
            if s0 >= graph.n_states() {
                return Err(CoreError::IndexOutOfRange {
                    what: "trajectory state",
                    index: s0,
                    len: graph.n_states(),
                });
            }
        }
        Ok(())
    }
}

/// Trajectory plus the scalar score an oracle assigned to it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrajectory {
    pub trajectory: Trajectory,
    pub score: f64,
}

/// Discounted accrued features psi(zeta) = sum_t gamma^t phi(S_t), summing
/// over every visited state including the last.
pub fn discounted_feature_sum(
    t: &Trajectory,
    features: &FeatureMap,
    gamma: f64,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(CoreError::GammaOutOfRange(gamma));
    }
    let mut psi = vec![0.0; features.k()];
    let mut weight = 1.0;
    for &s in t.states() {
        if s >= features.n_states() {
            return Err(CoreError::IndexOutOfRange {
                what: "trajectory state",
                index: s,
                len: features.n_states(),
            });
        }
        features.add_scaled(s, weight, &mut psi);
        weight *= gamma;
    }
    Ok(psi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_contract() {
        assert!(Trajectory::new(vec![0, 1], vec![0]).is_ok());
        assert!(Trajectory::new(vec![0, 1], vec![]).is_err());
        assert!(Trajectory::new(vec![], vec![]).is_err());
    }

    #[test]
    fn psi_discounts_by_visit_order() {
        let t = Trajectory::new(vec![0, 1, 0], vec![0, 0]).unwrap();
        let features = FeatureMap::one_hot(4);
        let psi = discounted_feature_sum(&t, &features, 0.5).unwrap();
        assert_eq!(psi, vec![1.25, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn psi_single_state_is_basis_vector() {
        let t = Trajectory::new(vec![2], vec![]).unwrap();
        let features = FeatureMap::one_hot(4);
        let psi = discounted_feature_sum(&t, &features, 0.9).unwrap();
        assert_eq!(psi, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn psi_gamma_zero_keeps_only_start() {
        let t = Trajectory::new(vec![1, 2, 3], vec![0, 0]).unwrap();
        let features = FeatureMap::one_hot(4);
        let psi = discounted_feature_sum(&t, &features, 0.0).unwrap();
        assert_eq!(psi, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn graph_check_rejects_forbidden_step() {
        let g = ConnectivityGraph::new(3, 1, 2, vec![vec![0, 1], vec![1, 2], vec![2, 0]])
            .unwrap();
        let ok = Trajectory::new(vec![0, 1, 2], vec![0, 0]).unwrap();
        assert!(ok.check_against(&g).is_ok());
        let bad = Trajectory::new(vec![0, 2], vec![0]).unwrap();
        assert!(bad.check_against(&g).is_err());
    }
}
