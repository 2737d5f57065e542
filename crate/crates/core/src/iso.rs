use std::time::Instant;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::eval::{expected_start_value, policy_evaluation};
use crate::graph::ConnectivityGraph;
use crate::irl::{dm_irl, maxent_irl, recovery_quality, MaxEntConfig};
use crate::mdp::{FiniteMdp, InitialDistribution, PolicyTable, TransitionTable};
use crate::reward::RewardModel;
use crate::sim::{
    label_dataset, sample_dataset, soft_value_iteration, DatasetSpec, SOFT_VI_MAX_ITERS,
    SOFT_VI_TOL,
};

/// Value-iteration tolerance for the transformed problem.
pub const PLUS_VI_TOL: f64 = 1e-9;

/// Q-value ties narrower than this are broken by successor state index.
const TIE_EPS: f64 = 1e-11;

// ---------------------------------------------------------------------------
// MdpPlus
// ---------------------------------------------------------------------------

/// The transformed decision problem in which the system is the agent.
///
/// Plus-states are pairs (s, a) indexed s * n_actions + a. The plus-action j
/// means "steer to the j-th connectivity successor of (s, a)"; taking it
/// lands in plus-state (s', a') with probability pi_hat(a' | s'). Rewards
/// and discount carry over: r_plus((s, a)) = r_hat(s), gamma_plus = gamma,
/// D0_plus((s, a)) = D0(s) * pi_hat(a | s).
///
/// Internally the plus problem is itself a `FiniteMdp` over the plus state
/// space, which lets every evaluation routine work on it unchanged.
#[derive(Debug, Clone)]
pub struct MdpPlus {
    base_states: usize,
    base_actions: usize,
    cf: usize,
    inner: FiniteMdp,
    rewards: Vec<f64>,
    pi_hat: PolicyTable,
    /// Base successor state targeted by each (plus-state, plus-action),
    /// flat row-major; these label the plus-actions.
    action_targets: Vec<usize>,
}

impl MdpPlus {
    pub fn n_plus_states(&self) -> usize {
        self.base_states * self.base_actions
    }

    /// Index of plus-state (s, a).
    pub fn plus_index(&self, s: usize, a: usize) -> usize {
        s * self.base_actions + a
    }

    /// (s, a) of a plus-state index.
    pub fn base_pair(&self, p: usize) -> (usize, usize) {
        (p / self.base_actions, p % self.base_actions)
    }

    /// Successor states selectable from plus-state (s, a); these label the
    /// plus-actions in order.
    pub fn plus_actions(&self, s: usize, a: usize) -> &[usize] {
        let p = self.plus_index(s, a);
        // Plus-action j of plus-state p targets base state
        // successors(s, a)[j]; the inner graph stores the expansion.
        &self.action_targets[p * self.cf..(p + 1) * self.cf]
    }

    pub fn plus_reward(&self, p: usize) -> f64 {
        self.rewards[p]
    }

    pub fn plus_d0(&self) -> &[f64] {
        self.inner.d0().probs()
    }

    pub fn plus_gamma(&self) -> f64 {
        self.inner.gamma()
    }

    /// The plus problem as a plain MDP (plus-states as states, cf actions).
    pub fn as_mdp(&self) -> &FiniteMdp {
        &self.inner
    }

    /// r_plus as a reward model over plus-states.
    pub fn reward_model(&self) -> RewardModel {
        RewardModel::one_hot(self.rewards.clone()).expect("plus rewards are finite")
    }

    pub fn pi_hat(&self) -> &PolicyTable {
        &self.pi_hat
    }

    pub fn cf(&self) -> usize {
        self.cf
    }
}

/// Builds the transformed problem from the system, a modeled user policy,
/// and a (typically recovered) reward model.
pub fn build_mdp_plus(
    mdp: &FiniteMdp,
    pi_hat: &PolicyTable,
    rm_hat: &RewardModel,
) -> Result<MdpPlus> {
    crate::eval::check_shapes(mdp, pi_hat, rm_hat)?;
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let cf = mdp.graph().cf();
    let g = mdp.graph();
    let r_hat = rm_hat.reward_vector();

    let n_plus = n * m;
    let mut graph_rows = Vec::with_capacity(n_plus * cf);
    let mut prob_rows = Vec::with_capacity(n_plus * cf);
    let mut action_targets = Vec::with_capacity(n_plus * cf);
    for s in 0..n {
        for a in 0..m {
            for &succ in g.successors(s, a) {
                action_targets.push(succ);
                graph_rows.push((0..m).map(|ap| succ * m + ap).collect::<Vec<_>>());
                prob_rows.push(pi_hat.row(succ).to_vec());
            }
        }
    }
    // In the plus problem the action count is cf and each action reaches the
    // m plus-states sharing a first component.
    let plus_graph = ConnectivityGraph::new(n_plus, cf, m, graph_rows)?;
    let plus_t = TransitionTable::from_graph_rows(&plus_graph, prob_rows)?;

    let mut d0 = Vec::with_capacity(n_plus);
    for s in 0..n {
        for a in 0..m {
            d0.push(mdp.d0().probs()[s] * pi_hat.prob(s, a));
        }
    }
    let inner = FiniteMdp::new(plus_graph, plus_t, InitialDistribution::new(d0)?, mdp.gamma())?;

    let rewards: Vec<f64> = (0..n_plus).map(|p| r_hat[p / m]).collect();
    Ok(MdpPlus {
        base_states: n,
        base_actions: m,
        cf,
        inner,
        rewards,
        pi_hat: pi_hat.clone(),
        action_targets,
    })
}

// ---------------------------------------------------------------------------
// Solving the plus problem
// ---------------------------------------------------------------------------

/// Output of `solve_mdp_plus`: exact values of the greedy policy, its Q
/// table, and the extraction policies.
#[derive(Debug, Clone)]
pub struct PlusSolution {
    /// Value of the greedy plus-policy, solved exactly.
    pub values: Vec<f64>,
    /// Q(p, j) at `values`, flat row-major.
    pub q: Vec<f64>,
    /// Deterministic argmax policy; Q ties go to the lowest successor state.
    pub greedy: PolicyTable,
    /// softmax(Q / tau) when tau > 0.
    pub soft: Option<PolicyTable>,
    pub tau: f64,
}

fn plus_q_row(mp: &MdpPlus, v: &[f64], p: usize, out: &mut [f64]) {
    let inner_t = mp.inner.transitions();
    let gamma = mp.inner.gamma();
    for (j, slot) in out.iter_mut().enumerate() {
        let r = p * mp.cf + j;
        let mut next = 0.0;
        for (&succ, &tp) in inner_t
            .successors_by_index(r)
            .iter()
            .zip(inner_t.row_by_index(r))
        {
            next += tp * v[succ];
        }
        *slot = mp.rewards[p] + gamma * next;
    }
}

fn greedy_choice(mp: &MdpPlus, q_row: &[f64], p: usize) -> usize {
    let targets = &mp.action_targets[p * mp.cf..(p + 1) * mp.cf];
    let mut best = 0;
    for j in 1..q_row.len() {
        if q_row[j] > q_row[best] + TIE_EPS {
            best = j;
        } else if (q_row[j] - q_row[best]).abs() <= TIE_EPS && targets[j] < targets[best] {
            best = j;
        }
    }
    best
}

/// Hard value iteration on the plus problem followed by an exact evaluation
/// of the resulting greedy policy. The iteration runs well past `tol` so the
/// greedy policy's value is within `tol` of the optimum.
pub fn solve_mdp_plus(mp: &MdpPlus, tol: f64, tau: f64) -> Result<PlusSolution> {
    if tol <= 0.0 {
        return Err(CoreError::InvalidSpec("tolerance must be positive".into()));
    }
    if tau < 0.0 || !tau.is_finite() {
        return Err(CoreError::InvalidSpec(
            "extraction temperature must be non-negative".into(),
        ));
    }
    let n_plus = mp.n_plus_states();
    let cf = mp.cf;
    let gamma = mp.inner.gamma();

    // Greedy suboptimality is bounded by 2 gamma eps / (1 - gamma) for a
    // value error of eps, so drive the iteration far enough below tol that
    // the bound lands under it.
    let margin = if gamma > 0.0 {
        (tol * (1.0 - gamma) * (1.0 - gamma) / (4.0 * gamma * gamma)).max(1e-15)
    } else {
        tol
    };

    let mut v = vec![0.0; n_plus];
    let mut q_row = vec![0.0; cf];
    let max_iters = 5_000_000;
    let mut converged = false;
    let mut last_diff = f64::INFINITY;
    for _ in 0..max_iters {
        let mut diff: f64 = 0.0;
        for p in 0..n_plus {
            plus_q_row(mp, &v, p, &mut q_row);
            let best = q_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            diff = diff.max((best - v[p]).abs());
            v[p] = best;
        }
        last_diff = diff;
        if diff < margin {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(CoreError::NoConvergence {
            what: "plus value iteration",
            iters: max_iters,
            residual: last_diff,
        });
    }

    // Canonical greedy policy from the converged values.
    let mut choices = Vec::with_capacity(n_plus);
    for p in 0..n_plus {
        plus_q_row(mp, &v, p, &mut q_row);
        choices.push(greedy_choice(mp, &q_row, p));
    }
    let greedy_rows: Vec<Vec<f64>> = choices
        .iter()
        .map(|&j| {
            let mut row = vec![0.0; cf];
            row[j] = 1.0;
            row
        })
        .collect();
    let greedy = PolicyTable::from_rows(n_plus, cf, greedy_rows)?;

    // Exact value of the chosen policy.
    let values = policy_evaluation(&mp.inner, &greedy, &mp.reward_model())?;
    let mut q = vec![0.0; n_plus * cf];
    for p in 0..n_plus {
        plus_q_row(mp, &values, p, &mut q[p * cf..(p + 1) * cf]);
    }

    let soft = if tau > 0.0 {
        let mut rows = Vec::with_capacity(n_plus);
        for p in 0..n_plus {
            let row = &q[p * cf..(p + 1) * cf];
            let hottest = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = row.iter().map(|x| ((x - hottest) / tau).exp()).collect();
            let total: f64 = weights.iter().sum();
            rows.push(weights.into_iter().map(|w| w / total).collect());
        }
        Some(PolicyTable::from_rows(n_plus, cf, rows)?)
    } else {
        None
    };

    Ok(PlusSolution {
        values,
        q,
        greedy,
        soft,
        tau,
    })
}

/// The plus-policy a transition table induces: plus-state (s, a) chooses
/// successor positions exactly with T's probabilities.
pub fn induced_plus_policy(mp: &MdpPlus, t: &TransitionTable) -> Result<PolicyTable> {
    if t.n_states() != mp.base_states || t.n_actions() != mp.base_actions || t.cf() != mp.cf {
        return Err(CoreError::DimensionMismatch {
            what: "transition table shape",
            expected: mp.base_states * mp.base_actions * mp.cf,
            got: t.n_states() * t.n_actions() * t.cf(),
        });
    }
    let rows = (0..mp.n_plus_states())
        .map(|p| t.row_by_index(p).to_vec())
        .collect();
    PolicyTable::from_rows(mp.n_plus_states(), mp.cf, rows)
}

/// D0_plus-weighted exact value of a plus-policy.
pub fn plus_policy_value(mp: &MdpPlus, policy: &PolicyTable) -> Result<f64> {
    let v = policy_evaluation(&mp.inner, policy, &mp.reward_model())?;
    Ok(mp
        .plus_d0()
        .iter()
        .zip(&v)
        .map(|(d, val)| d * val)
        .sum())
}

// ---------------------------------------------------------------------------
// Transition extraction
// ---------------------------------------------------------------------------

/// Reads the optimized transition table off the plus solution:
/// T_raw(s'|s,a) = pi_plus(s' | (s,a)), then blends T_new =
/// (1 - eta) T_old + eta T_raw. Support stays inside the connectivity graph
/// because rows blend position-by-position.
pub fn extract_transition(
    sol: &PlusSolution,
    mdp: &FiniteMdp,
    eta: f64,
    tau: f64,
) -> Result<TransitionTable> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(CoreError::InvalidSpec(format!(
            "gradual-update rate {eta} outside [0, 1]"
        )));
    }
    let source = if tau > 0.0 {
        sol.soft.as_ref().ok_or_else(|| {
            CoreError::InvalidSpec("solution carries no soft policy for tau > 0".into())
        })?
    } else {
        &sol.greedy
    };
    let n_rows = mdp.n_states() * mdp.n_actions();
    if source.n_states() != n_rows || source.n_actions() != mdp.graph().cf() {
        return Err(CoreError::DimensionMismatch {
            what: "plus policy shape",
            expected: n_rows * mdp.graph().cf(),
            got: source.n_states() * source.n_actions(),
        });
    }
    let t_old = mdp.transitions();
    let rows = (0..n_rows)
        .map(|p| {
            t_old
                .row_by_index(p)
                .iter()
                .zip(source.row(p))
                .map(|(old, raw)| (1.0 - eta) * old + eta * raw)
                .collect()
        })
        .collect();
    TransitionTable::from_graph_rows(mdp.graph(), rows)
}

// ---------------------------------------------------------------------------
// The outer loop
// ---------------------------------------------------------------------------

/// Which reward recoverer drives the optimization.
#[derive(Debug, Clone, PartialEq)]
pub enum Recoverer {
    MaxEnt(MaxEntConfig),
    DmOracle,
}

impl Recoverer {
    pub fn label(&self) -> &'static str {
        match self {
            Recoverer::MaxEnt(_) => "maxent",
            Recoverer::DmOracle => "dm",
        }
    }
}

/// Settings for the outer optimization loop.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoConfig {
    pub max_outer_iters: usize,
    /// Convergence tolerance on the true expected start value.
    pub value_tol: f64,
    /// Consecutive sub-tolerance changes required to stop early.
    pub patience: usize,
    /// Extraction temperature; 0 extracts the greedy policy.
    pub tau: f64,
    /// Gradual-update rate blending the new table into the old.
    pub eta: f64,
    pub recoverer: Recoverer,
    /// Template for the per-iteration dataset; its seed field is ignored and
    /// replaced with a fresh draw from the loop RNG every iteration.
    pub dataset: DatasetSpec,
    pub soft_vi_tol: f64,
    pub soft_vi_max_iters: usize,
    pub plus_tol: f64,
}

impl IsoConfig {
    pub fn new(recoverer: Recoverer, dataset: DatasetSpec) -> Self {
        Self {
            max_outer_iters: 100,
            value_tol: 1e-6,
            patience: 5,
            tau: 0.0,
            eta: 1.0,
            recoverer,
            dataset,
            soft_vi_tol: SOFT_VI_TOL,
            soft_vi_max_iters: SOFT_VI_MAX_ITERS,
            plus_tol: PLUS_VI_TOL,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(CoreError::InvalidSpec(format!(
                "gradual-update rate {} outside (0, 1]",
                self.eta
            )));
        }
        if self.tau < 0.0 || !self.tau.is_finite() {
            return Err(CoreError::InvalidSpec(
                "extraction temperature must be non-negative".into(),
            ));
        }
        if self.value_tol <= 0.0 || self.plus_tol <= 0.0 || self.soft_vi_tol <= 0.0 {
            return Err(CoreError::InvalidSpec("tolerances must be positive".into()));
        }
        if self.patience == 0 {
            return Err(CoreError::InvalidSpec("patience must be positive".into()));
        }
        self.dataset.check()
    }
}

/// One row of the optimization trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Expected start value under the TRUE reward and the user's re-adapted
    /// soft policy.
    pub value_true: f64,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    /// Exact plus-value of the previous transition table's induced policy.
    pub plus_value_prev: Option<f64>,
    /// Exact plus-value of the extracted policy in the same plus problem.
    /// Greedy extraction (tau = 0) never scores below `plus_value_prev`;
    /// a softened policy (tau > 0) trades plus-value for smoothness and may.
    pub plus_value_extracted: Option<f64>,
    pub elapsed_ms: f64,
    pub dataset_seed: Option<u64>,
    pub recoverer: &'static str,
    pub tau: f64,
    pub eta: f64,
}

/// Evaluates the true system quality: re-adapt the user to the (possibly
/// new) dynamics and score with the true reward.
fn true_quality(mdp: &FiniteMdp, rm_true: &RewardModel, cfg: &IsoConfig) -> Result<f64> {
    let pi_user = soft_value_iteration(mdp, rm_true, cfg.soft_vi_tol, cfg.soft_vi_max_iters)
        .map_err(|e| e.at_stage("evaluation"))?;
    expected_start_value(mdp, &pi_user, rm_true).map_err(|e| e.at_stage("evaluation"))
}

/// One outer iteration: adapt user, sample data, recover rewards, model the
/// user, build and solve the plus problem, extract the next transition
/// table, and score the result with the true reward.
pub fn iso_iteration<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    rm_true: &RewardModel,
    cfg: &IsoConfig,
    rng: &mut R,
) -> Result<(FiniteMdp, IterationRecord)> {
    cfg.check()?;
    let started = Instant::now();

    let pi_star = soft_value_iteration(mdp, rm_true, cfg.soft_vi_tol, cfg.soft_vi_max_iters)
        .map_err(|e| e.at_stage("user-adaptation"))?;

    let dataset_seed: u64 = rng.random();
    let spec = DatasetSpec {
        seed: dataset_seed,
        ..cfg.dataset
    };
    let ds = sample_dataset(mdp, &pi_star, &spec).map_err(|e| e.at_stage("dataset-sampling"))?;

    let features = rm_true.features().clone();
    let report = match &cfg.recoverer {
        Recoverer::DmOracle => {
            let labeled = label_dataset(&ds, rm_true, mdp.gamma())
                .map_err(|e| e.at_stage("dataset-labeling"))?;
            dm_irl(&labeled, &features, mdp.gamma())
                .map_err(|e| e.at_stage("reward-recovery"))?
        }
        Recoverer::MaxEnt(me_cfg) => maxent_irl(mdp, &ds, &features, me_cfg)
            .map_err(|e| e.at_stage("reward-recovery"))?,
    };
    let rm_hat = RewardModel::new(report.theta_hat.clone(), features)
        .map_err(|e| e.at_stage("reward-recovery"))?;
    let (pearson, spearman) =
        recovery_quality(&rm_hat.reward_vector(), &rm_true.reward_vector())
            .unwrap_or((None, None));

    let pi_hat = soft_value_iteration(mdp, &rm_hat, cfg.soft_vi_tol, cfg.soft_vi_max_iters)
        .map_err(|e| e.at_stage("user-model"))?;

    let mp = build_mdp_plus(mdp, &pi_hat, &rm_hat).map_err(|e| e.at_stage("mdp-plus-build"))?;
    let sol =
        solve_mdp_plus(&mp, cfg.plus_tol, cfg.tau).map_err(|e| e.at_stage("mdp-plus-solve"))?;

    // Improvement audit: both policies scored exactly in the same plus
    // problem.
    let prev_policy = induced_plus_policy(&mp, mdp.transitions())
        .map_err(|e| e.at_stage("mdp-plus-solve"))?;
    let plus_value_prev =
        plus_policy_value(&mp, &prev_policy).map_err(|e| e.at_stage("mdp-plus-solve"))?;
    let extracted_policy = if cfg.tau > 0.0 {
        sol.soft.as_ref().expect("soft policy exists for tau > 0")
    } else {
        &sol.greedy
    };
    let plus_value_extracted =
        plus_policy_value(&mp, extracted_policy).map_err(|e| e.at_stage("mdp-plus-solve"))?;

    let t_new =
        extract_transition(&sol, mdp, cfg.eta, cfg.tau).map_err(|e| e.at_stage("extraction"))?;
    let next = mdp
        .with_transitions(t_new)
        .map_err(|e| e.at_stage("extraction"))?;

    let value_true = true_quality(&next, rm_true, cfg)?;

    let record = IterationRecord {
        iteration: 0,
        value_true,
        pearson,
        spearman,
        plus_value_prev: Some(plus_value_prev),
        plus_value_extracted: Some(plus_value_extracted),
        elapsed_ms: started.elapsed().as_secs_f64() * 1000.0,
        dataset_seed: Some(dataset_seed),
        recoverer: cfg.recoverer.label(),
        tau: cfg.tau,
        eta: cfg.eta,
    };
    Ok((next, record))
}

/// Runs the outer loop. The trace starts with an evaluation of the input
/// system (iteration 0) and stops early when the true expected start value
/// moves less than `value_tol` for `patience` consecutive iterations.
pub fn iso_loop<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    rm_true: &RewardModel,
    cfg: &IsoConfig,
    rng: &mut R,
) -> Result<(Vec<IterationRecord>, FiniteMdp)> {
    cfg.check()?;
    let started = Instant::now();
    let initial_value = true_quality(mdp, rm_true, cfg)?;
    let mut records = vec![IterationRecord {
        iteration: 0,
        value_true: initial_value,
        pearson: None,
        spearman: None,
        plus_value_prev: None,
        plus_value_extracted: None,
        elapsed_ms: started.elapsed().as_secs_f64() * 1000.0,
        dataset_seed: None,
        recoverer: cfg.recoverer.label(),
        tau: cfg.tau,
        eta: cfg.eta,
    }];

    let mut current = mdp.clone();
    let mut last_value = initial_value;
    let mut stable = 0usize;
    for iteration in 1..=cfg.max_outer_iters {
        let (next, mut record) = iso_iteration(&current, rm_true, cfg, rng)?;
        record.iteration = iteration;
        let delta = (record.value_true - last_value).abs();
        last_value = record.value_true;
        current = next;
        records.push(record);
        if delta < cfg.value_tol {
            stable += 1;
            if stable >= cfg.patience {
                break;
            }
        } else {
            stable = 0;
        }
    }
    Ok((records, current))
}
