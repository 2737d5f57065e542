use anyhow::{ensure, Result};
use iso_core::{
    ConnectivityGraph, FiniteMdp, InitialDistribution, RewardModel, TransitionTable,
};
use rand::Rng;
use rand_distr::Exp1;

/// Uniform draw of `k` distinct indices out of `0..n` (partial Fisher-Yates).
fn distinct_subset<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Uniform point on the k-simplex: normalized unit exponentials.
fn simplex<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k)
        .map(|_| {
            let e: f64 = rng.sample(Exp1);
            e.max(1e-300)
        })
        .collect();
    let total: f64 = v.iter().sum();
    for x in &mut v {
        *x /= total;
    }
    v
}

/// Draws one system: connectivity with exactly `cf` successors per
/// (state, action), transition rows and start distribution uniform on their
/// simplices, and reward 1 on round(density * n_states) states.
///
/// Draw order is frozen (successor rows, transition rows, start
/// distribution, reward states) so one seed always yields one system.
pub fn sample_system<R: Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    cf: usize,
    density: f64,
    gamma: f64,
    rng: &mut R,
) -> Result<(FiniteMdp, RewardModel)> {
    ensure!(n_states > 0 && n_actions > 0, "empty state or action space");
    ensure!(
        cf >= 1 && cf <= n_states,
        "cf {cf} outside [1, {n_states}]"
    );
    ensure!(
        density > 0.0 && density <= 1.0,
        "density {density} outside (0, 1]"
    );

    let n_rows = n_states * n_actions;
    let successor_rows: Vec<Vec<usize>> =
        (0..n_rows).map(|_| distinct_subset(rng, n_states, cf)).collect();
    let graph = ConnectivityGraph::new(n_states, n_actions, cf, successor_rows)?;

    let prob_rows: Vec<Vec<f64>> = (0..n_rows).map(|_| simplex(rng, cf)).collect();
    let transitions = TransitionTable::from_graph_rows(&graph, prob_rows)?;

    let d0 = InitialDistribution::new(simplex(rng, n_states))?;
    let mdp = FiniteMdp::new(graph, transitions, d0, gamma)?;

    let n_rewarded = (density * n_states as f64).round() as usize;
    let mut theta = vec![0.0; n_states];
    for s in distinct_subset(rng, n_states, n_rewarded.min(n_states)) {
        theta[s] = 1.0;
    }
    let rm = RewardModel::one_hot(theta)?;
    Ok((mdp, rm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use iso_core::seeded_rng;

    #[test]
    fn density_quarter_of_64_rewards_16_states() {
        let mut rng = seeded_rng(1);
        let (_, rm) = sample_system(64, 4, 2, 0.25, 0.9, &mut rng).unwrap();
        let ones = rm.theta().iter().filter(|&&x| x == 1.0).count();
        let zeros = rm.theta().iter().filter(|&&x| x == 0.0).count();
        assert_eq!(ones, 16);
        assert_eq!(zeros, 48);
    }

    #[test]
    fn every_pair_has_exactly_cf_successors() {
        let mut rng = seeded_rng(2);
        let (mdp, _) = sample_system(10, 3, 2, 0.5, 0.9, &mut rng).unwrap();
        for s in 0..10 {
            for a in 0..3 {
                assert_eq!(mdp.graph().successors(s, a).len(), 2);
            }
        }
        assert!(mdp.validate().is_pass());
    }

    #[test]
    fn fixed_seed_reproduces_document_bytes() {
        use iso_core::SystemDocument;
        let draw = || {
            let mut rng = seeded_rng(77);
            let (mdp, rm) = sample_system(16, 4, 2, 0.25, 0.9, &mut rng).unwrap();
            SystemDocument::from_system(&mdp, &rm, 77).to_json().unwrap()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn rejects_cf_above_state_count() {
        let mut rng = seeded_rng(3);
        assert!(sample_system(4, 2, 5, 0.5, 0.9, &mut rng).is_err());
    }

    #[test]
    fn start_distribution_covers_simplex() {
        let mut rng = seeded_rng(4);
        let (mdp, _) = sample_system(6, 2, 3, 0.5, 0.9, &mut rng).unwrap();
        let total: f64 = mdp.d0().probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(mdp.d0().probs().iter().all(|&p| p > 0.0));
    }
}
