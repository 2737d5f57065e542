use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};
use crate::mdp::{FiniteMdp, PolicyTable};
use crate::reward::{FeatureMap, RewardModel};
use crate::sim::{soft_solution, SoftSolution, SOFT_VI_MAX_ITERS, SOFT_VI_TOL};
use crate::stats;
use crate::trajectory::{discounted_feature_sum, LabeledTrajectory, Trajectory};

/// Gradient ascent stops early once the gradient max-norm drops below this.
pub const MAXENT_GRAD_TOL: f64 = 1e-5;

/// Ridge added to the normal equations for numerical rank safety.
pub const DM_RIDGE: f64 = 1e-10;

/// Settings for maximum-entropy reward recovery.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxEntConfig {
    pub learning_rate: f64,
    pub n_gradient_steps: usize,
    /// Forward-pass length in states; defaults to the longest trajectory.
    pub horizon: Option<usize>,
    pub soft_vi_tol: f64,
    pub soft_vi_max_iters: usize,
    /// L2 penalty weight on theta.
    pub l2_penalty: f64,
}

impl Default for MaxEntConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            n_gradient_steps: 200,
            horizon: None,
            soft_vi_tol: SOFT_VI_TOL,
            soft_vi_max_iters: SOFT_VI_MAX_ITERS,
            l2_penalty: 0.0,
        }
    }
}

impl MaxEntConfig {
    fn check(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(CoreError::InvalidSpec(
                "learning rate must be positive".into(),
            ));
        }
        if self.soft_vi_tol <= 0.0 {
            return Err(CoreError::InvalidSpec(
                "soft value-iteration tolerance must be positive".into(),
            ));
        }
        if self.l2_penalty < 0.0 {
            return Err(CoreError::InvalidSpec(
                "L2 penalty must be non-negative".into(),
            ));
        }
        if self.horizon == Some(0) {
            return Err(CoreError::InvalidSpec("horizon must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of a reward recovery. Correlations are filled in by callers that
/// hold a reference reward; recoverers leave them unset.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub theta_hat: Vec<f64>,
    /// Max-norm of the objective gradient at the returned theta.
    pub grad_inf_norm: f64,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    /// Least-squares design did not have full column rank; recovery is only
    /// determined up to the design's row space.
    pub rank_deficient: bool,
    /// Accepted log-likelihood after each gradient step (MaxEnt only),
    /// starting with the value at initialization.
    pub ll_trace: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Empirical statistics and the forward pass
// ---------------------------------------------------------------------------

/// Frequency of each state as a trajectory start.
pub fn empirical_start_frequency(ds: &[Trajectory], n_states: usize) -> Result<Vec<f64>> {
    if ds.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let mut freq = vec![0.0; n_states];
    for t in ds {
        let s0 = t.states()[0];
        if s0 >= n_states {
            return Err(CoreError::IndexOutOfRange {
                what: "trajectory state",
                index: s0,
                len: n_states,
            });
        }
        freq[s0] += 1.0;
    }
    for f in &mut freq {
        *f /= ds.len() as f64;
    }
    Ok(freq)
}

/// Mean undiscounted feature count per trajectory, summed over every visited
/// state.
pub fn empirical_feature_counts(ds: &[Trajectory], features: &FeatureMap) -> Result<Vec<f64>> {
    if ds.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let mut counts = vec![0.0; features.k()];
    for t in ds {
        for &s in t.states() {
            if s >= features.n_states() {
                return Err(CoreError::IndexOutOfRange {
                    what: "trajectory state",
                    index: s,
                    len: features.n_states(),
                });
            }
            features.add_scaled(s, 1.0, &mut counts);
        }
    }
    for c in &mut counts {
        *c /= ds.len() as f64;
    }
    Ok(counts)
}

/// State-occupancy evolution D[t][s]: D[0] = `start`, each later row is one
/// push of the previous row through policy and transitions. Every row sums
/// to 1.
pub fn forward_occupancy(
    mdp: &FiniteMdp,
    policy: &PolicyTable,
    start: &[f64],
    horizon: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = mdp.n_states();
    if start.len() != n {
        return Err(CoreError::DimensionMismatch {
            what: "start distribution",
            expected: n,
            got: start.len(),
        });
    }
    let t = mdp.transitions();
    let m = mdp.n_actions();
    let mut d: Vec<Vec<f64>> = Vec::with_capacity(horizon);
    if horizon == 0 {
        return Ok(d);
    }
    d.push(start.to_vec());
    for step in 1..horizon {
        let prev = &d[step - 1];
        let mut next = vec![0.0; n];
        for s in 0..n {
            let mass = prev[s];
            if mass == 0.0 {
                continue;
            }
            for a in 0..m {
                let w = mass * policy.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for (&succ, &tp) in t.successors(s, a).iter().zip(t.row(s, a)) {
                    next[succ] += w * tp;
                }
            }
        }
        d.push(next);
    }
    Ok(d)
}

fn inf_norm(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))
}

// ---------------------------------------------------------------------------
// MaxEnt-IRL
// ---------------------------------------------------------------------------

/// Maximum-entropy reward recovery from unlabeled trajectories.
///
/// Gradient ascent on the trajectory log-likelihood: each step computes the
/// soft policy at the current theta, rolls the empirical start distribution
/// forward, and moves theta along (empirical - expected - lambda * theta)
/// feature counts. The step size is halved whenever a step would decrease
/// the data log-likelihood.
pub fn maxent_irl(
    mdp: &FiniteMdp,
    ds: &[Trajectory],
    features: &FeatureMap,
    cfg: &MaxEntConfig,
) -> Result<RecoveryReport> {
    if ds.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    cfg.check()?;
    if features.n_states() != mdp.n_states() {
        return Err(CoreError::DimensionMismatch {
            what: "feature map states",
            expected: mdp.n_states(),
            got: features.n_states(),
        });
    }

    let n = mdp.n_states();
    let m = mdp.n_actions();
    let k = features.k();
    let n_traj = ds.len() as f64;

    let start = empirical_start_frequency(ds, n)?;
    let f_emp = empirical_feature_counts(ds, features)?;
    let mut sa_counts = vec![0.0; n * m];
    let mut longest = 0;
    for t in ds {
        longest = longest.max(t.states().len());
        for (&s, &a) in t.states().iter().zip(t.actions()) {
            if a >= m {
                return Err(CoreError::IndexOutOfRange {
                    what: "trajectory action",
                    index: a,
                    len: m,
                });
            }
            sa_counts[s * m + a] += 1.0;
        }
    }
    let horizon = cfg.horizon.unwrap_or(longest);

    // Mean per-trajectory action log-likelihood, the theta-dependent part of
    // the trajectory likelihood, plus the L2 term.
    let ll_of = |sol: &SoftSolution, theta: &[f64]| -> f64 {
        let data: f64 = sa_counts
            .iter()
            .zip(&sol.log_policy)
            .map(|(c, lp)| c * lp)
            .sum();
        let penalty: f64 = theta.iter().map(|t| t * t).sum();
        data / n_traj - 0.5 * cfg.l2_penalty * penalty
    };

    let grad_of = |sol: &SoftSolution, theta: &[f64]| -> Result<Vec<f64>> {
        let steps = forward_occupancy(mdp, &sol.policy, &start, horizon)?;
        let mut occ = vec![0.0; n];
        for row in &steps {
            for (o, d) in occ.iter_mut().zip(row) {
                *o += d;
            }
        }
        let mut f_exp = vec![0.0; k];
        for (s, &o) in occ.iter().enumerate() {
            if o != 0.0 {
                features.add_scaled(s, o, &mut f_exp);
            }
        }
        Ok((0..k)
            .map(|j| f_emp[j] - f_exp[j] - cfg.l2_penalty * theta[j])
            .collect())
    };

    let solve = |theta: &[f64]| -> Result<SoftSolution> {
        let rm = RewardModel::new(theta.to_vec(), features.clone())?;
        soft_solution(mdp, &rm, cfg.soft_vi_tol, cfg.soft_vi_max_iters)
    };

    let mut theta = vec![0.0; k];
    let mut sol = solve(&theta)?;
    let mut ll = ll_of(&sol, &theta);
    if !ll.is_finite() {
        return Err(CoreError::NonFinite {
            what: "maxent likelihood",
        });
    }
    let mut ll_trace = vec![ll];
    let mut alpha = cfg.learning_rate;

    for _ in 0..cfg.n_gradient_steps {
        let grad = grad_of(&sol, &theta)?;
        if inf_norm(&grad) < MAXENT_GRAD_TOL {
            break;
        }
        let mut stepped = false;
        while alpha >= 1e-12 {
            let cand: Vec<f64> = theta
                .iter()
                .zip(&grad)
                .map(|(t, g)| t + alpha * g)
                .collect();
            if cand.iter().any(|c| !c.is_finite()) {
                return Err(CoreError::NonFinite { what: "theta" });
            }
            let cand_sol = solve(&cand)?;
            let cand_ll = ll_of(&cand_sol, &cand);
            if !cand_ll.is_finite() {
                return Err(CoreError::NonFinite {
                    what: "maxent likelihood",
                });
            }
            if cand_ll + 1e-12 >= ll {
                theta = cand;
                sol = cand_sol;
                ll = cand_ll;
                stepped = true;
                break;
            }
            alpha *= 0.5;
        }
        if !stepped {
            // No step size makes progress along this gradient; theta is as
            // good as this ascent gets.
            break;
        }
        ll_trace.push(ll);
    }

    let grad_inf_norm = inf_norm(&grad_of(&sol, &theta)?);
    Ok(RecoveryReport {
        theta_hat: theta,
        grad_inf_norm,
        pearson: None,
        spearman: None,
        rank_deficient: false,
        ll_trace,
    })
}

// ---------------------------------------------------------------------------
// DM-IRL
// ---------------------------------------------------------------------------

/// Oracle reward recovery: least squares of trajectory scores on discounted
/// accrued features, solved by ridge-stabilized normal equations. With a
/// full-rank design and exact scores the recovery is exact.
pub fn dm_irl(
    ds: &[LabeledTrajectory],
    features: &FeatureMap,
    gamma: f64,
) -> Result<RecoveryReport> {
    if ds.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let k = features.k();
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for lt in ds {
        let psi = discounted_feature_sum(&lt.trajectory, features, gamma)?;
        for i in 0..k {
            if psi[i] == 0.0 {
                continue;
            }
            b[i] += psi[i] * lt.score;
            for j in 0..k {
                a[(i, j)] += psi[i] * psi[j];
            }
        }
    }

    // Rank of the design, read off the Gram spectrum before the ridge.
    let eig = a.clone().symmetric_eigen();
    let lam_max = eig.eigenvalues.iter().fold(0.0f64, |acc, &l| acc.max(l.abs()));
    let rank_deficient =
        lam_max == 0.0 || eig.eigenvalues.iter().any(|&l| l.abs() <= 1e-12 * lam_max);

    for i in 0..k {
        a[(i, i)] += DM_RIDGE;
    }
    let theta = match a.clone().cholesky() {
        Some(chol) => chol.solve(&b),
        None => a
            .clone()
            .lu()
            .solve(&b)
            .ok_or(CoreError::LinearSolve("normal equations"))?,
    };
    let residual = &a * &theta - &b;
    Ok(RecoveryReport {
        theta_hat: theta.iter().copied().collect(),
        grad_inf_norm: residual.amax(),
        pearson: None,
        spearman: None,
        rank_deficient,
        ll_trace: Vec::new(),
    })
}

/// Pearson and Spearman correlation between recovered and true per-state
/// rewards. `None` entries mean the correlation is undefined (zero
/// variance).
pub fn recovery_quality(
    theta_hat: &[f64],
    theta_true: &[f64],
) -> Result<(Option<f64>, Option<f64>)> {
    if theta_hat.len() != theta_true.len() {
        return Err(CoreError::DimensionMismatch {
            what: "reward vectors",
            expected: theta_true.len(),
            got: theta_hat.len(),
        });
    }
    if theta_hat.len() < 2 {
        return Err(CoreError::InvalidSpec(
            "correlation needs at least two entries".into(),
        ));
    }
    Ok((
        stats::pearson(theta_hat, theta_true),
        stats::spearman(theta_hat, theta_true),
    ))
}
