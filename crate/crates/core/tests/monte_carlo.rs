//! End-to-end check that sampled returns agree with the evaluated start
//! value: the mean of theta' psi over a large sample must land within three
//! standard errors of the closed-form answer.

use iso_core::*;

fn build_system(seed: u64) -> (FiniteMdp, RewardModel, PolicyTable) {
    use rand::Rng;
    let mut rng = seeded_rng(seed);
    let n = 12;
    let m = 3;
    let cf = 4;
    let mut rows = Vec::with_capacity(n * m);
    for _ in 0..n * m {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..cf {
            let j = rng.random_range(i..n);
            idx.swap(i, j);
        }
        idx.truncate(cf);
        rows.push(idx);
    }
    let graph = ConnectivityGraph::new(n, m, cf, rows).unwrap();
    let simplex = |rng: &mut rand_chacha::ChaCha8Rng, k: usize| {
        let mut v: Vec<f64> = (0..k)
            .map(|_| {
                let u: f64 = rng.random();
                -(1.0 - u).ln() + 1e-9
            })
            .collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        v
    };
    let probs: Vec<Vec<f64>> = (0..n * m).map(|_| simplex(&mut rng, cf)).collect();
    let transitions = TransitionTable::from_graph_rows(&graph, probs).unwrap();
    let d0 = InitialDistribution::new(simplex(&mut rng, n)).unwrap();
    let mdp = FiniteMdp::new(graph, transitions, d0, 0.9).unwrap();
    let theta: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let rm = RewardModel::one_hot(theta).unwrap();
    let policy_rows: Vec<Vec<f64>> = (0..n).map(|_| simplex(&mut rng, m)).collect();
    let policy = PolicyTable::from_rows(n, m, policy_rows).unwrap();
    (mdp, rm, policy)
}

#[test]
fn sampled_returns_match_start_value() {
    let (mdp, rm, policy) = build_system(20_240_816);
    let exact = expected_start_value(&mdp, &policy, &rm).unwrap();

    // Horizon 200 leaves a truncation bias of gamma^201 * v_max ~ 1e-9.
    let horizon = 200;
    let n_samples = 100_000u64;
    let mut rng = seeded_rng(7);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let t = sample_trajectory(&mdp, &policy, horizon, &mut rng).unwrap();
        let psi = discounted_feature_sum(&t, rm.features(), mdp.gamma()).unwrap();
        let score: f64 = psi.iter().zip(rm.theta()).map(|(p, w)| p * w).sum();
        sum += score;
        sum_sq += score * score;
    }
    let mean = sum / n_samples as f64;
    let var = (sum_sq / n_samples as f64 - mean * mean).max(0.0);
    let se = (var / n_samples as f64).sqrt();

    let gap = (mean - exact).abs();
    assert!(
        gap <= 3.0 * se + 1e-6,
        "mean {mean} vs exact {exact}: gap {gap}, 3se {}",
        3.0 * se
    );
    // The band itself must be meaningfully tight for the check to say much.
    assert!(se < 0.05, "standard error unexpectedly large: {se}");
}
