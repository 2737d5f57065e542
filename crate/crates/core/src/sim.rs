use rand::Rng;

use crate::error::{CoreError, Result};
use crate::mdp::{FiniteMdp, PolicyTable};
use crate::reward::RewardModel;
use crate::rng::{sample_categorical, trajectory_rng};
use crate::trajectory::{discounted_feature_sum, LabeledTrajectory, Trajectory};

pub const SOFT_VI_TOL: f64 = 1e-8;
pub const SOFT_VI_MAX_ITERS: usize = 10_000;

// ---------------------------------------------------------------------------
// Behavior specification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BehaviorKind {
    /// Every trajectory follows the user's soft-optimal policy.
    Optimal,
    /// Each trajectory is drawn entirely from the adversarial policy with
    /// probability nf, otherwise entirely from the optimal one.
    MixOfBehaviors,
    /// Each step independently replaces the action with a uniform draw over
    /// the non-argmax actions with probability nf.
    NoiseInBehavior,
}

impl BehaviorKind {
    pub fn label(&self) -> &'static str {
        match self {
            BehaviorKind::Optimal => "optimal",
            BehaviorKind::MixOfBehaviors => "mix",
            BehaviorKind::NoiseInBehavior => "noise",
        }
    }
}

/// How the simulated user deviates from optimal play.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorSpec {
    kind: BehaviorKind,
    nf: f64,
}

impl BehaviorSpec {
    pub fn new(kind: BehaviorKind, nf: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&nf) {
            return Err(CoreError::InvalidSpec(format!(
                "noise factor {nf} outside [0, 1]"
            )));
        }
        if kind == BehaviorKind::Optimal && nf != 0.0 {
            return Err(CoreError::InvalidSpec(
                "optimal behavior requires a zero noise factor".into(),
            ));
        }
        Ok(Self { kind, nf })
    }

    pub fn optimal() -> Self {
        Self {
            kind: BehaviorKind::Optimal,
            nf: 0.0,
        }
    }

    pub fn mix_of_behaviors(nf: f64) -> Result<Self> {
        Self::new(BehaviorKind::MixOfBehaviors, nf)
    }

    pub fn noise_in_behavior(nf: f64) -> Result<Self> {
        Self::new(BehaviorKind::NoiseInBehavior, nf)
    }

    pub fn kind(&self) -> BehaviorKind {
        self.kind
    }

    pub fn nf(&self) -> f64 {
        self.nf
    }
}

/// Size, length range, behavior, and seed of one sampled dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub n_trajectories: usize,
    /// Minimum number of actions per trajectory.
    pub min_len: usize,
    /// Maximum number of actions per trajectory.
    pub max_len: usize,
    pub behavior: BehaviorSpec,
    pub seed: u64,
}

impl DatasetSpec {
    /// Paper-scale defaults: 15000 trajectories of 30 to 40 actions.
    pub fn new(behavior: BehaviorSpec, seed: u64) -> Self {
        Self {
            n_trajectories: 15_000,
            min_len: 30,
            max_len: 40,
            behavior,
            seed,
        }
    }

    pub fn with_n_trajectories(mut self, n: usize) -> Self {
        self.n_trajectories = n;
        self
    }

    pub fn with_length_range(mut self, min_len: usize, max_len: usize) -> Self {
        self.min_len = min_len;
        self.max_len = max_len;
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.n_trajectories == 0 {
            return Err(CoreError::InvalidSpec(
                "dataset must contain at least one trajectory".into(),
            ));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(CoreError::InvalidSpec(format!(
                "length range [{}, {}] invalid",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Soft value iteration
// ---------------------------------------------------------------------------

/// Converged soft values, soft Q, log-policy, and the policy itself.
#[derive(Debug, Clone)]
pub struct SoftSolution {
    /// V(s) = log sum_a exp(Q(s, a)).
    pub v: Vec<f64>,
    /// Q(s, a) = r(s) + gamma * sum_s' T(s'|s,a) V(s'), flat row-major.
    pub q: Vec<f64>,
    /// log pi(a|s) = Q(s, a) - V(s), flat row-major. Kept separately so
    /// likelihood computations never go through exp and back.
    pub log_policy: Vec<f64>,
    pub policy: PolicyTable,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Maximum-entropy value iteration. Returns values, Q, and the stochastic
/// policy pi(a|s) = exp(Q(s,a) - V(s)).
pub fn soft_solution(
    mdp: &FiniteMdp,
    rm: &RewardModel,
    tol: f64,
    max_iters: usize,
) -> Result<SoftSolution> {
    if tol <= 0.0 {
        return Err(CoreError::InvalidSpec("tolerance must be positive".into()));
    }
    // Shape checks shared with evaluation; the policy argument is a dummy of
    // the right shape.
    crate::eval::check_shapes(mdp, &PolicyTable::uniform(mdp.n_states(), mdp.n_actions()), rm)?;

    let n = mdp.n_states();
    let m = mdp.n_actions();
    let gamma = mdp.gamma();
    let r = rm.reward_vector();
    let t = mdp.transitions();

    let backup = |v: &[f64], q: &mut [f64]| {
        for s in 0..n {
            for a in 0..m {
                let mut exp_next = 0.0;
                for (&succ, &tp) in t.successors(s, a).iter().zip(t.row(s, a)) {
                    exp_next += tp * v[succ];
                }
                q[s * m + a] = r[s] + gamma * exp_next;
            }
        }
    };

    let mut v = vec![0.0; n];
    let mut q = vec![0.0; n * m];
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for _ in 0..max_iters {
        backup(&v, &mut q);
        let mut diff: f64 = 0.0;
        for s in 0..n {
            let lse = log_sum_exp(&q[s * m..(s + 1) * m]);
            if !lse.is_finite() {
                return Err(CoreError::NonFinite {
                    what: "soft value iteration",
                });
            }
            diff = diff.max((lse - v[s]).abs());
            v[s] = lse;
        }
        residual = diff;
        if diff < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(CoreError::NoConvergence {
            what: "soft value iteration",
            iters: max_iters,
            residual,
        });
    }

    // Final Q from the converged V; rows are normalized by their own
    // log-sum-exp so the policy sums to 1 regardless of the residual left
    // in V.
    backup(&v, &mut q);
    let mut log_policy = vec![0.0; n * m];
    let mut flat = vec![0.0; n * m];
    for s in 0..n {
        let row = &q[s * m..(s + 1) * m];
        let lse = log_sum_exp(row);
        for a in 0..m {
            let lp = row[a] - lse;
            log_policy[s * m + a] = lp;
            flat[s * m + a] = lp.exp();
        }
    }
    let policy = PolicyTable::from_flat(n, m, flat)?;
    Ok(SoftSolution {
        v,
        q,
        log_policy,
        policy,
    })
}

/// Maximum-entropy user policy (see `soft_solution` for the full output).
pub fn soft_value_iteration(
    mdp: &FiniteMdp,
    rm: &RewardModel,
    tol: f64,
    max_iters: usize,
) -> Result<PolicyTable> {
    Ok(soft_solution(mdp, rm, tol, max_iters)?.policy)
}

// ---------------------------------------------------------------------------
// Adversarial policy
// ---------------------------------------------------------------------------

/// pi_adv(a|s) = (1 - pi(a|s)) / (n_actions - 1). Puts most mass where the
/// input puts least.
pub fn adversarial_policy(pi: &PolicyTable) -> Result<PolicyTable> {
    let m = pi.n_actions();
    if m < 2 {
        return Err(CoreError::NotEnoughActions { needed: 2, got: m });
    }
    let rows = pi
        .to_rows()
        .into_iter()
        .map(|row| row.into_iter().map(|p| (1.0 - p) / (m - 1) as f64).collect())
        .collect();
    PolicyTable::from_rows(pi.n_states(), m, rows)
}

// ---------------------------------------------------------------------------
// Trajectory sampling
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
enum Walk<'a> {
    Plain(&'a PolicyTable),
    /// With probability nf a step ignores the policy and picks uniformly
    /// among the non-argmax actions (argmax ties resolve to lowest index).
    NonArgmaxNoise { pi: &'a PolicyTable, nf: f64 },
}

fn walk<R: Rng + ?Sized>(mdp: &FiniteMdp, how: Walk<'_>, len: usize, rng: &mut R) -> Trajectory {
    let t = mdp.transitions();
    let mut states = Vec::with_capacity(len + 1);
    let mut actions = Vec::with_capacity(len);
    let mut s = sample_categorical(rng, mdp.d0().probs());
    states.push(s);
    for _ in 0..len {
        let a = match how {
            Walk::Plain(pi) => sample_categorical(rng, pi.row(s)),
            Walk::NonArgmaxNoise { pi, nf } => {
                let coin: f64 = rng.random();
                if coin < nf {
                    let avoid = pi.argmax_action(s);
                    let pick = rng.random_range(0..pi.n_actions() - 1);
                    if pick >= avoid {
                        pick + 1
                    } else {
                        pick
                    }
                } else {
                    sample_categorical(rng, pi.row(s))
                }
            }
        };
        let pos = sample_categorical(rng, t.row(s, a));
        let s_next = t.successors(s, a)[pos];
        actions.push(a);
        states.push(s_next);
        s = s_next;
    }
    Trajectory::new(states, actions).expect("walker keeps the length contract")
}

/// One rollout: S0 ~ D0, A_t ~ pi(.|S_t), S_{t+1} ~ T(.|S_t, A_t), exactly
/// `len` actions.
pub fn sample_trajectory<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    policy: &PolicyTable,
    len: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if len == 0 {
        return Err(CoreError::InvalidSpec(
            "trajectory length must be at least 1".into(),
        ));
    }
    crate::eval::check_shapes(mdp, policy, &RewardModel::one_hot(vec![0.0; mdp.n_states()])?)?;
    Ok(walk(mdp, Walk::Plain(policy), len, rng))
}

/// Samples a dataset under the requested behavior.
///
/// Every trajectory draws from its own RNG stream keyed by
/// `(spec.seed, index)`, so the dataset is reproducible and independent of
/// sampling order. With nf = 0 the noisy kinds consume exactly the same
/// random draws as Optimal and produce bit-identical output.
pub fn sample_dataset(
    mdp: &FiniteMdp,
    pi_star: &PolicyTable,
    spec: &DatasetSpec,
) -> Result<Vec<Trajectory>> {
    spec.check()?;
    crate::eval::check_shapes(
        mdp,
        pi_star,
        &RewardModel::one_hot(vec![0.0; mdp.n_states()])?,
    )?;
    let nf = spec.behavior.nf();
    let needs_noise = nf > 0.0;
    if needs_noise && mdp.n_actions() < 2 {
        return Err(CoreError::NotEnoughActions {
            needed: 2,
            got: mdp.n_actions(),
        });
    }
    let pi_adv = if spec.behavior.kind() == BehaviorKind::MixOfBehaviors && needs_noise {
        Some(adversarial_policy(pi_star)?)
    } else {
        None
    };

    let mut out = Vec::with_capacity(spec.n_trajectories);
    for i in 0..spec.n_trajectories {
        let mut rng = trajectory_rng(spec.seed, i as u64);
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let traj = match (spec.behavior.kind(), needs_noise) {
            (BehaviorKind::MixOfBehaviors, true) => {
                let coin: f64 = rng.random();
                let policy = if coin < nf {
                    pi_adv.as_ref().expect("adversarial policy prepared")
                } else {
                    pi_star
                };
                walk(mdp, Walk::Plain(policy), len, &mut rng)
            }
            (BehaviorKind::NoiseInBehavior, true) => {
                walk(mdp, Walk::NonArgmaxNoise { pi: pi_star, nf }, len, &mut rng)
            }
            _ => walk(mdp, Walk::Plain(pi_star), len, &mut rng),
        };
        out.push(traj);
    }
    Ok(out)
}

/// Attaches the oracle score theta' psi(zeta) to every trajectory.
pub fn label_dataset(
    ds: &[Trajectory],
    rm_true: &RewardModel,
    gamma: f64,
) -> Result<Vec<LabeledTrajectory>> {
    ds.iter()
        .map(|t| {
            let psi = discounted_feature_sum(t, rm_true.features(), gamma)?;
            let score = psi.iter().zip(rm_true.theta()).map(|(p, t)| p * t).sum();
            Ok(LabeledTrajectory {
                trajectory: t.clone(),
                score,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ConnectivityGraph;
    use crate::mdp::{InitialDistribution, TransitionTable};

    /// 2 states, 2 actions, both actions share the same successor row.
    fn symmetric_mdp(gamma: f64) -> FiniteMdp {
        let rows = vec![vec![0, 1]; 4];
        let g = ConnectivityGraph::new(2, 2, 2, rows).unwrap();
        let t = TransitionTable::from_graph_rows(&g, vec![vec![0.3, 0.7]; 4]).unwrap();
        FiniteMdp::new(g, t, InitialDistribution::uniform(2), gamma).unwrap()
    }

    /// 2 states, 2 actions: action 0 self-loops, action 1 switches state.
    fn switch_mdp(gamma: f64) -> FiniteMdp {
        let g = ConnectivityGraph::new(
            2,
            2,
            1,
            vec![vec![0], vec![1], vec![1], vec![0]],
        )
        .unwrap();
        let t = TransitionTable::from_graph_rows(&g, vec![vec![1.0]; 4]).unwrap();
        FiniteMdp::new(g, t, InitialDistribution::delta(2, 0).unwrap(), gamma).unwrap()
    }

    #[test]
    fn identical_actions_give_uniform_policy() {
        let mdp = symmetric_mdp(0.9);
        let rm = RewardModel::one_hot(vec![1.0, -0.5]).unwrap();
        let pi = soft_value_iteration(&mdp, &rm, 1e-10, 10_000).unwrap();
        for s in 0..2 {
            assert!((pi.prob(s, 0) - 0.5).abs() < 1e-9);
            assert!((pi.prob(s, 1) - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_reward_gives_uniform_policy() {
        let mdp = switch_mdp(0.9);
        let rm = RewardModel::one_hot(vec![0.0, 0.0]).unwrap();
        let pi = soft_value_iteration(&mdp, &rm, 1e-10, 10_000).unwrap();
        for s in 0..2 {
            assert!((pi.prob(s, 0) - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn myopic_discount_gives_uniform_policy() {
        let mdp = switch_mdp(0.0);
        let rm = RewardModel::one_hot(vec![3.0, -1.0]).unwrap();
        let pi = soft_value_iteration(&mdp, &rm, 1e-10, 10_000).unwrap();
        for s in 0..2 {
            assert!((pi.prob(s, 0) - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn soft_policy_prefers_rewarding_branch() {
        let mdp = switch_mdp(0.9);
        let rm = RewardModel::one_hot(vec![0.0, 1.0]).unwrap();
        let pi = soft_value_iteration(&mdp, &rm, 1e-10, 10_000).unwrap();
        // From state 0, switching (action 1) reaches the rewarding state.
        assert!(pi.prob(0, 1) > pi.prob(0, 0));
        // From state 1, the self-loop (action 0) keeps collecting it.
        assert!(pi.prob(1, 0) > pi.prob(1, 1));
    }

    #[test]
    fn adversarial_flips_peaked_row() {
        let pi = PolicyTable::from_rows(1, 4, vec![vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        let adv = adversarial_policy(&pi).unwrap();
        let third = 1.0 / 3.0;
        assert!((adv.prob(0, 0) - 0.0).abs() < 1e-12);
        for a in 1..4 {
            assert!((adv.prob(0, a) - third).abs() < 1e-12);
        }
    }

    #[test]
    fn adversarial_fixes_uniform_and_swaps_pairs() {
        let uniform = PolicyTable::uniform(3, 4);
        let adv = adversarial_policy(&uniform).unwrap();
        for s in 0..3 {
            for a in 0..4 {
                assert!((adv.prob(s, a) - 0.25).abs() < 1e-12);
            }
        }
        let pair = PolicyTable::from_rows(1, 2, vec![vec![0.7, 0.3]]).unwrap();
        let adv = adversarial_policy(&pair).unwrap();
        assert!((adv.prob(0, 0) - 0.3).abs() < 1e-12);
        assert!((adv.prob(0, 1) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn adversarial_needs_two_actions() {
        let pi = PolicyTable::uniform(2, 1);
        assert!(matches!(
            adversarial_policy(&pi),
            Err(CoreError::NotEnoughActions { .. })
        ));
    }

    #[test]
    fn trajectory_length_contract() {
        let mdp = switch_mdp(0.9);
        let pi = PolicyTable::uniform(2, 2);
        let mut rng = crate::rng::seeded_rng(5);
        let t = sample_trajectory(&mdp, &pi, 1, &mut rng).unwrap();
        assert_eq!(t.states().len(), 2);
        assert_eq!(t.actions().len(), 1);
        assert!(sample_trajectory(&mdp, &pi, 0, &mut rng).is_err());
    }

    #[test]
    fn deterministic_walk_is_the_unique_path() {
        let mdp = switch_mdp(0.9);
        // Always pick action 1: 0 -> 1 -> 0 -> 1 ...
        let pi = PolicyTable::from_rows(2, 2, vec![vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let mut rng = crate::rng::seeded_rng(9);
        let t = sample_trajectory(&mdp, &pi, 4, &mut rng).unwrap();
        assert_eq!(t.states(), &[0, 1, 0, 1, 0]);
        assert_eq!(t.actions(), &[1, 1, 1, 1]);
    }

    #[test]
    fn successor_frequencies_match_probabilities() {
        let mdp = symmetric_mdp(0.9);
        let pi = PolicyTable::uniform(2, 2);
        let spec = DatasetSpec::new(BehaviorSpec::optimal(), 77)
            .with_n_trajectories(100_000)
            .with_length_range(1, 1);
        let ds = sample_dataset(&mdp, &pi, &spec).unwrap();
        // First step lands on state 1 with probability 0.7 from every state.
        let hits = ds.iter().filter(|t| t.states()[1] == 1).count();
        let freq = hits as f64 / ds.len() as f64;
        let sigma = (0.7 * 0.3 / ds.len() as f64).sqrt();
        assert!(
            (freq - 0.7).abs() < 3.0 * sigma,
            "freq {freq} deviates from 0.7"
        );
    }

    #[test]
    fn dataset_is_seed_reproducible() {
        let mdp = switch_mdp(0.9);
        let pi = PolicyTable::uniform(2, 2);
        let spec = DatasetSpec::new(BehaviorSpec::optimal(), 123)
            .with_n_trajectories(50)
            .with_length_range(3, 6);
        let a = sample_dataset(&mdp, &pi, &spec).unwrap();
        let b = sample_dataset(&mdp, &pi, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_noise_matches_optimal_bitwise() {
        let mdp = switch_mdp(0.9);
        let pi = PolicyTable::from_rows(2, 2, vec![vec![0.8, 0.2], vec![0.4, 0.6]]).unwrap();
        let base = DatasetSpec::new(BehaviorSpec::optimal(), 321)
            .with_n_trajectories(40)
            .with_length_range(5, 8);
        let optimal = sample_dataset(&mdp, &pi, &base).unwrap();

        let mut mb = base;
        mb.behavior = BehaviorSpec::mix_of_behaviors(0.0).unwrap();
        assert_eq!(sample_dataset(&mdp, &pi, &mb).unwrap(), optimal);

        let mut nb = base;
        nb.behavior = BehaviorSpec::noise_in_behavior(0.0).unwrap();
        assert_eq!(sample_dataset(&mdp, &pi, &nb).unwrap(), optimal);
    }

    #[test]
    fn full_mix_is_fully_adversarial() {
        let mdp = switch_mdp(0.9);
        // Deterministic preference for action 0 everywhere.
        let pi = PolicyTable::from_rows(2, 2, vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let spec = DatasetSpec::new(BehaviorSpec::mix_of_behaviors(1.0).unwrap(), 11)
            .with_n_trajectories(30)
            .with_length_range(4, 4);
        let ds = sample_dataset(&mdp, &pi, &spec).unwrap();
        for t in &ds {
            assert!(t.actions().iter().all(|&a| a == 1));
        }
    }

    #[test]
    fn full_noise_never_plays_argmax() {
        let mdp = switch_mdp(0.9);
        let pi = PolicyTable::from_rows(2, 2, vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let spec = DatasetSpec::new(BehaviorSpec::noise_in_behavior(1.0).unwrap(), 13)
            .with_n_trajectories(30)
            .with_length_range(4, 4);
        let ds = sample_dataset(&mdp, &pi, &spec).unwrap();
        for t in &ds {
            for (s, a) in t.states().iter().zip(t.actions()) {
                assert_ne!(*a, pi.argmax_action(*s));
            }
        }
    }

    #[test]
    fn labels_are_discounted_scores() {
        let rm = RewardModel::one_hot(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let t = Trajectory::new(vec![0, 1, 0], vec![0, 0]).unwrap();
        let labeled = label_dataset(&[t], &rm, 0.5).unwrap();
        assert!((labeled[0].score - 1.25).abs() < 1e-12);

        let doubled = rm.with_theta(vec![2.0, 0.0, 0.0, 0.0]).unwrap();
        let t = Trajectory::new(vec![0, 1, 0], vec![0, 0]).unwrap();
        let relabeled = label_dataset(&[t], &doubled, 0.5).unwrap();
        assert!((relabeled[0].score - 2.5).abs() < 1e-12);
    }

    #[test]
    fn zero_reward_labels_are_zero() {
        let rm = RewardModel::one_hot(vec![0.0, 0.0]).unwrap();
        let t = Trajectory::new(vec![0, 1], vec![0]).unwrap();
        let labeled = label_dataset(&[t], &rm, 0.9).unwrap();
        assert_eq!(labeled[0].score, 0.0);
    }

    #[test]
    fn behavior_spec_validates() {
        assert!(BehaviorSpec::mix_of_behaviors(1.5).is_err());
        assert!(BehaviorSpec::new(BehaviorKind::Optimal, 0.2).is_err());
        assert!(BehaviorSpec::noise_in_behavior(0.6).is_ok());
    }
}
