use crate::error::{CoreError, Result};
use crate::graph::ConnectivityGraph;

/// Absolute tolerance for probability-row sums.
pub const PROB_TOL: f64 = 1e-9;
/// Rows whose sum drifts by more than `PROB_TOL` but at most this much are
/// renormalized on construction; larger drift is rejected.
pub const RENORM_TOL: f64 = 1e-6;

/// Checks a probability row in place: entries finite and non-negative, sum
/// within `PROB_TOL` of 1 (kept), within `RENORM_TOL` (renormalized), else
/// rejected.
fn check_prob_row(kind: &'static str, row_idx: usize, row: &mut [f64]) -> Result<()> {
    let mut sum = 0.0;
    for (i, &p) in row.iter().enumerate() {
        if !p.is_finite() {
            return Err(CoreError::NonFinite { what: kind });
        }
        if p < 0.0 {
            return Err(CoreError::NegativeEntry {
                kind,
                row: row_idx,
                index: i,
                value: p,
            });
        }
        sum += p;
    }
    let drift = (sum - 1.0).abs();
    if drift <= PROB_TOL {
        Ok(())
    } else if drift <= RENORM_TOL {
        for p in row.iter_mut() {
            *p /= sum;
        }
        Ok(())
    } else {
        Err(CoreError::RowSum {
            kind,
            row: row_idx,
            sum,
        })
    }
}

// ---------------------------------------------------------------------------
// TransitionTable
// ---------------------------------------------------------------------------

/// Transition probabilities constrained to a connectivity graph.
///
/// The table carries its own copy of the successor lists so each probability
/// entry is tied to an explicit target state. Row `(s * n_actions + a)` gives
/// `cf` probabilities aligned position-by-position with the successor list of
/// that pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    n_states: usize,
    n_actions: usize,
    cf: usize,
    successors: Vec<usize>,
    probs: Vec<f64>,
}

impl TransitionTable {
    /// Build a table over `graph`'s support from per-row probability vectors.
    pub fn from_graph_rows(graph: &ConnectivityGraph, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != graph.n_rows() {
            return Err(CoreError::DimensionMismatch {
                what: "transition rows",
                expected: graph.n_rows(),
                got: rows.len(),
            });
        }
        let cf = graph.cf();
        let mut probs = Vec::with_capacity(graph.n_rows() * cf);
        for (row_idx, mut row) in rows.into_iter().enumerate() {
            if row.len() != cf {
                return Err(CoreError::DimensionMismatch {
                    what: "transition row length",
                    expected: cf,
                    got: row.len(),
                });
            }
            check_prob_row("transition", row_idx, &mut row)?;
            probs.extend_from_slice(&row);
        }
        Ok(Self {
            n_states: graph.n_states(),
            n_actions: graph.n_actions(),
            cf,
            successors: graph.to_rows().into_iter().flatten().collect(),
            probs,
        })
    }

    /// Uniform probability over each pair's successors.
    pub fn uniform(graph: &ConnectivityGraph) -> Self {
        let cf = graph.cf();
        let rows = vec![vec![1.0 / cf as f64; cf]; graph.n_rows()];
        Self::from_graph_rows(graph, rows).expect("uniform rows are valid")
    }

    /// Build without any validation. Intended for diagnostics and document
    /// loading paths that validate separately.
    pub fn from_parts_unchecked(
        n_states: usize,
        n_actions: usize,
        cf: usize,
        successors: Vec<usize>,
        probs: Vec<f64>,
    ) -> Self {
        Self {
            n_states,
            n_actions,
            cf,
            successors,
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn cf(&self) -> usize {
        self.cf
    }

    pub fn n_rows(&self) -> usize {
        self.n_states * self.n_actions
    }

    /// Probability row for `(s, a)`, aligned with `successors(s, a)`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let r = s * self.n_actions + a;
        &self.probs[r * self.cf..(r + 1) * self.cf]
    }

    /// Successor states of `(s, a)`, aligned with `row(s, a)`.
    pub fn successors(&self, s: usize, a: usize) -> &[usize] {
        let r = s * self.n_actions + a;
        &self.successors[r * self.cf..(r + 1) * self.cf]
    }

    pub fn row_by_index(&self, r: usize) -> &[f64] {
        &self.probs[r * self.cf..(r + 1) * self.cf]
    }

    pub fn successors_by_index(&self, r: usize) -> &[usize] {
        &self.successors[r * self.cf..(r + 1) * self.cf]
    }

    /// T(s_next | s, a); zero when `s_next` is not a successor of `(s, a)`.
    pub fn prob(&self, s: usize, a: usize, s_next: usize) -> f64 {
        let row = self.row(s, a);
        self.successors(s, a)
            .iter()
            .zip(row)
            .filter(|(&succ, _)| succ == s_next)
            .map(|(_, &p)| p)
            .sum()
    }

    /// Nested probability rows, row-major over (state, action).
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows())
            .map(|r| self.row_by_index(r).to_vec())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// InitialDistribution
// ---------------------------------------------------------------------------

/// Start-state distribution D0.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDistribution {
    probs: Vec<f64>,
}

impl InitialDistribution {
    pub fn new(mut probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(CoreError::InvalidSpec(
                "initial distribution must be non-empty".into(),
            ));
        }
        check_prob_row("initial distribution", 0, &mut probs)?;
        Ok(Self { probs })
    }

    /// Point mass on one state.
    pub fn delta(n_states: usize, s: usize) -> Result<Self> {
        if s >= n_states {
            return Err(CoreError::IndexOutOfRange {
                what: "start state",
                index: s,
                len: n_states,
            });
        }
        let mut probs = vec![0.0; n_states];
        probs[s] = 1.0;
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize) -> Self {
        Self {
            probs: vec![1.0 / n_states as f64; n_states],
        }
    }

    pub fn from_unchecked(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }
}

// ---------------------------------------------------------------------------
// PolicyTable
// ---------------------------------------------------------------------------

/// Stochastic policy pi(a | s), one probability row per state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    pub fn from_rows(n_states: usize, n_actions: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != n_states {
            return Err(CoreError::DimensionMismatch {
                what: "policy rows",
                expected: n_states,
                got: rows.len(),
            });
        }
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for (s, mut row) in rows.into_iter().enumerate() {
            if row.len() != n_actions {
                return Err(CoreError::DimensionMismatch {
                    what: "policy row length",
                    expected: n_actions,
                    got: row.len(),
                });
            }
            check_prob_row("policy", s, &mut row)?;
            probs.extend_from_slice(&row);
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn from_flat(n_states: usize, n_actions: usize, mut probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(CoreError::DimensionMismatch {
                what: "policy entries",
                expected: n_states * n_actions,
                got: probs.len(),
            });
        }
        for s in 0..n_states {
            check_prob_row("policy", s, &mut probs[s * n_actions..(s + 1) * n_actions])?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// pi(a | s).
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Most probable action in `s`; ties resolve to the lowest index.
    pub fn argmax_action(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for (a, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_states).map(|s| self.row(s).to_vec()).collect()
    }
}

// ---------------------------------------------------------------------------
// FiniteMdp
// ---------------------------------------------------------------------------

/// A finite interactive system: connectivity, transitions, start
/// distribution, and discount. Rewards live in a separate `RewardModel` so
/// true and recovered rewards can be swapped over the same dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    graph: ConnectivityGraph,
    transitions: TransitionTable,
    d0: InitialDistribution,
    gamma: f64,
}

impl FiniteMdp {
    pub fn new(
        graph: ConnectivityGraph,
        transitions: TransitionTable,
        d0: InitialDistribution,
        gamma: f64,
    ) -> Result<Self> {
        let mdp = Self::from_parts_unchecked(graph, transitions, d0, gamma);
        let report = mdp.validate();
        if let Some(v) = report.violations.into_iter().next() {
            return Err(CoreError::InvalidSpec(v.to_string()));
        }
        Ok(mdp)
    }

    /// Assemble without validation; `validate` reports the damage.
    pub fn from_parts_unchecked(
        graph: ConnectivityGraph,
        transitions: TransitionTable,
        d0: InitialDistribution,
        gamma: f64,
    ) -> Self {
        Self {
            graph,
            transitions,
            d0,
            gamma,
        }
    }

    pub fn graph(&self) -> &ConnectivityGraph {
        &self.graph
    }

    pub fn transitions(&self) -> &TransitionTable {
        &self.transitions
    }

    pub fn d0(&self) -> &InitialDistribution {
        &self.d0
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n_states(&self) -> usize {
        self.graph.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.graph.n_actions()
    }

    /// Same system with a replacement transition table (validated).
    pub fn with_transitions(&self, transitions: TransitionTable) -> Result<Self> {
        Self::new(
            self.graph.clone(),
            transitions,
            self.d0.clone(),
            self.gamma,
        )
    }

    /// Full invariant check; collects every violation instead of stopping at
    /// the first.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let g = &self.graph;
        let t = &self.transitions;

        if !(0.0..1.0).contains(&self.gamma) || !self.gamma.is_finite() {
            violations.push(Violation::GammaOutOfRange { gamma: self.gamma });
        }
        if t.n_states() != g.n_states() || t.n_actions() != g.n_actions() || t.cf() != g.cf() {
            violations.push(Violation::ShapeMismatch {
                what: "transition table does not match connectivity graph shape",
            });
        } else {
            for r in 0..g.n_rows() {
                let probs = t.row_by_index(r);
                let succ = t.successors_by_index(r);
                let mut sum = 0.0;
                for (j, &p) in probs.iter().enumerate() {
                    if p < 0.0 || !p.is_finite() {
                        violations.push(Violation::NegativeEntry {
                            kind: "transition",
                            row: r,
                            index: j,
                            value: p,
                        });
                    }
                    sum += p;
                    // Mass on a state outside the graph's successor list for
                    // this pair breaks the support constraint.
                    if p > 0.0 && !g.successors_by_row(r).contains(&succ[j]) {
                        violations.push(Violation::SupportViolation {
                            row: r,
                            state: succ[j],
                            mass: p,
                        });
                    }
                }
                if (sum - 1.0).abs() > PROB_TOL {
                    violations.push(Violation::RowSum {
                        kind: "transition",
                        row: r,
                        sum,
                    });
                }
            }
        }

        if self.d0.n_states() != g.n_states() {
            violations.push(Violation::ShapeMismatch {
                what: "initial distribution length does not match state count",
            });
        } else {
            let mut sum = 0.0;
            for (s, &p) in self.d0.probs().iter().enumerate() {
                if p < 0.0 || !p.is_finite() {
                    violations.push(Violation::NegativeEntry {
                        kind: "initial distribution",
                        row: 0,
                        index: s,
                        value: p,
                    });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > PROB_TOL {
                violations.push(Violation::RowSum {
                    kind: "initial distribution",
                    row: 0,
                    sum,
                });
            }
        }

        ValidationReport { violations }
    }
}

/// One violated invariant found by `FiniteMdp::validate`.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RowSum {
        kind: &'static str,
        row: usize,
        sum: f64,
    },
    NegativeEntry {
        kind: &'static str,
        row: usize,
        index: usize,
        value: f64,
    },
    SupportViolation {
        row: usize,
        state: usize,
        mass: f64,
    },
    GammaOutOfRange {
        gamma: f64,
    },
    ShapeMismatch {
        what: &'static str,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::RowSum { kind, row, sum } => {
                write!(f, "{kind} row {row} sums to {sum}")
            }
            Violation::NegativeEntry {
                kind,
                row,
                index,
                value,
            } => write!(f, "{kind} row {row} entry {index} is negative: {value}"),
            Violation::SupportViolation { row, state, mass } => write!(
                f,
                "transition row {row} places mass {mass} on non-successor state {state}"
            ),
            Violation::GammaOutOfRange { gamma } => {
                write!(f, "discount factor {gamma} outside [0, 1)")
            }
            Violation::ShapeMismatch { what } => write!(f, "{what}"),
        }
    }
}

/// Result of validating a system: empty means every invariant holds.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }
}
