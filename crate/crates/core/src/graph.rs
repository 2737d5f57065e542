use crate::error::{CoreError, Result};

/// Fixed support structure of an interactive system.
///
/// For every (state, action) pair the graph lists exactly `cf` distinct
/// successor states. Transition tables may only place probability mass on
/// these successors. The graph is sampled once per system and never changes
/// afterwards; all optimized transition tables share it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectivityGraph {
    n_states: usize,
    n_actions: usize,
    cf: usize,
    /// Flat successor storage, row `(s * n_actions + a)`, row length `cf`.
    successors: Vec<usize>,
}

impl ConnectivityGraph {
    /// Build a graph from per-(state, action) successor lists.
    ///
    /// `rows` is indexed `s * n_actions + a`; each row must contain exactly
    /// `cf` distinct state indices in `[0, n_states)`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        cf: usize,
        rows: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if n_states == 0 {
            return Err(CoreError::InvalidSpec("n_states must be positive".into()));
        }
        if n_actions == 0 {
            return Err(CoreError::InvalidSpec("n_actions must be positive".into()));
        }
        if cf == 0 || cf > n_states {
            return Err(CoreError::InvalidSpec(format!(
                "connection factor {cf} must be in [1, n_states={n_states}]"
            )));
        }
        if rows.len() != n_states * n_actions {
            return Err(CoreError::DimensionMismatch {
                what: "connectivity rows",
                expected: n_states * n_actions,
                got: rows.len(),
            });
        }
        let mut successors = Vec::with_capacity(n_states * n_actions * cf);
        for (row_idx, row) in rows.iter().enumerate() {
            if row.len() != cf {
                return Err(CoreError::DimensionMismatch {
                    what: "successor list length",
                    expected: cf,
                    got: row.len(),
                });
            }
            let mut seen = vec![false; n_states];
            for &s in row {
                if s >= n_states {
                    return Err(CoreError::IndexOutOfRange {
                        what: "successor state",
                        index: s,
                        len: n_states,
                    });
                }
                if seen[s] {
                    return Err(CoreError::InvalidSpec(format!(
                        "duplicate successor {s} in row {row_idx}"
                    )));
                }
                seen[s] = true;
            }
            successors.extend_from_slice(row);
        }
        Ok(Self {
            n_states,
            n_actions,
            cf,
            successors,
        })
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

    /// Successor states reachable from `(s, a)`, in fixed order.
    pub fn successors(&self, s: usize, a: usize) -> &[usize] {
        let row = s * self.n_actions + a;
        &self.successors[row * self.cf..(row + 1) * self.cf]
    }

    /// Successor list by flat row index `s * n_actions + a`.
    pub fn successors_by_row(&self, row: usize) -> &[usize] {
        &self.successors[row * self.cf..(row + 1) * self.cf]
    }

    pub fn n_rows(&self) -> usize {
        self.n_states * self.n_actions
    }

    /// Nested successor lists, row-major over (state, action).
    pub fn to_rows(&self) -> Vec<Vec<usize>> {
        (0..self.n_rows())
            .map(|r| self.successors_by_row(r).to_vec())
            .collect()
    }

    /// True if `s_next` is a permitted successor of `(s, a)`.
    pub fn allows(&self, s: usize, a: usize, s_next: usize) -> bool {
        self.successors(s, a).contains(&s_next)
    }
}
