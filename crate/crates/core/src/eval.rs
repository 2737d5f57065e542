use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};
use crate::mdp::{FiniteMdp, PolicyTable};
use crate::reward::RewardModel;

/// Largest state count solved by direct factorization; larger systems fall
/// back to fixed-point iteration.
pub const DIRECT_SOLVE_CAP: usize = 1024;

/// Required residual bound on the returned value vector.
pub const EVAL_RESIDUAL_TOL: f64 = 1e-9;

pub(crate) fn check_shapes(mdp: &FiniteMdp, policy: &PolicyTable, rm: &RewardModel) -> Result<()> {
    let report = mdp.validate();
    if let Some(v) = report.violations.first() {
        return Err(CoreError::InvalidSpec(v.to_string()));
    }
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(CoreError::DimensionMismatch {
            what: "policy shape",
            expected: mdp.n_states() * mdp.n_actions(),
            got: policy.n_states() * policy.n_actions(),
        });
    }
    if rm.n_states() != mdp.n_states() {
        return Err(CoreError::DimensionMismatch {
            what: "reward model states",
            expected: mdp.n_states(),
            got: rm.n_states(),
        });
    }
    Ok(())
}

/// State-to-state transition matrix P[s][s'] = sum_a pi(a|s) T(s'|s,a),
/// stored row-major as nested vectors.
pub fn policy_transition_matrix(mdp: &FiniteMdp, policy: &PolicyTable) -> Vec<Vec<f64>> {
    let n = mdp.n_states();
    let t = mdp.transitions();
    let mut p = vec![vec![0.0; n]; n];
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            for (&succ, &tp) in t.successors(s, a).iter().zip(t.row(s, a)) {
                p[s][succ] += pa * tp;
            }
        }
    }
    p
}

/// Max-norm of v - (r + gamma P v).
pub fn bellman_residual(p: &[Vec<f64>], r: &[f64], gamma: f64, v: &[f64]) -> f64 {
    let mut res: f64 = 0.0;
    for s in 0..v.len() {
        let backup: f64 = p[s].iter().zip(v).map(|(pij, vj)| pij * vj).sum();
        res = res.max((v[s] - (r[s] + gamma * backup)).abs());
    }
    res
}

fn solve_direct(p: &[Vec<f64>], r: &[f64], gamma: f64) -> Result<Vec<f64>> {
    let n = r.len();
    let a = DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - gamma * p[i][j]
    });
    let b = DVector::from_column_slice(r);
    let lu = a.clone().lu();
    let mut v = lu
        .solve(&b)
        .ok_or(CoreError::LinearSolve("singular policy-evaluation system"))?;
    // One refinement step tightens the worst-case rounding on larger systems.
    let residual = &b - &a * &v;
    if let Some(correction) = lu.solve(&residual) {
        v += correction;
    }
    Ok(v.iter().copied().collect())
}

fn solve_iterative(p: &[Vec<f64>], r: &[f64], gamma: f64) -> Result<Vec<f64>> {
    let n = r.len();
    let mut v = r.to_vec();
    let mut next = vec![0.0; n];
    // Contraction bound: after the update, the distance to the fixed point
    // is at most gamma * diff / (1 - gamma).
    let target = EVAL_RESIDUAL_TOL * 0.1 * (1.0 - gamma).max(1e-6);
    let max_iters = 1_000_000;
    for _ in 0..max_iters {
        let mut diff: f64 = 0.0;
        for s in 0..n {
            let backup: f64 = p[s].iter().zip(&v).map(|(pij, vj)| pij * vj).sum();
            next[s] = r[s] + gamma * backup;
            diff = diff.max((next[s] - v[s]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        if diff < target {
            return Ok(v);
        }
    }
    Err(CoreError::NoConvergence {
        what: "iterative policy evaluation",
        iters: max_iters,
        residual: bellman_residual(p, r, gamma, &v),
    })
}

/// Exact policy value: the fixed point of
/// v(s) = r(s) + gamma * sum_a pi(a|s) sum_s' T(s'|s,a) v(s').
///
/// Direct linear solve up to `cap` states, fixed-point iteration beyond.
/// The returned vector's Bellman residual is below 1e-9 in max norm.
pub fn policy_evaluation_with_cap(
    mdp: &FiniteMdp,
    policy: &PolicyTable,
    rm: &RewardModel,
    cap: usize,
) -> Result<Vec<f64>> {
    check_shapes(mdp, policy, rm)?;
    let p = policy_transition_matrix(mdp, policy);
    let r = rm.reward_vector();
    let gamma = mdp.gamma();
    let v = if mdp.n_states() <= cap {
        solve_direct(&p, &r, gamma)?
    } else {
        solve_iterative(&p, &r, gamma)?
    };
    let residual = bellman_residual(&p, &r, gamma, &v);
    if !residual.is_finite() || residual >= EVAL_RESIDUAL_TOL {
        return Err(CoreError::NoConvergence {
            what: "policy evaluation",
            iters: 1,
            residual,
        });
    }
    Ok(v)
}

pub fn policy_evaluation(
    mdp: &FiniteMdp,
    policy: &PolicyTable,
    rm: &RewardModel,
) -> Result<Vec<f64>> {
    policy_evaluation_with_cap(mdp, policy, rm, DIRECT_SOLVE_CAP)
}

/// System quality: E_{s ~ D0}[v(s)], the scalar reported everywhere.
pub fn expected_start_value(
    mdp: &FiniteMdp,
    policy: &PolicyTable,
    rm: &RewardModel,
) -> Result<f64> {
    let v = policy_evaluation(mdp, policy, rm)?;
    Ok(mdp
        .d0()
        .probs()
        .iter()
        .zip(&v)
        .map(|(d, vs)| d * vs)
        .sum())
}
