use std::fs;
use std::io::{self, BufRead, BufReader, Write as IoWrite};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::graph::ConnectivityGraph;
use crate::mdp::{FiniteMdp, InitialDistribution, PolicyTable, TransitionTable};
use crate::reward::{FeatureMap, RewardModel};
use crate::trajectory::{LabeledTrajectory, Trajectory};

// ---------------------------------------------------------------------------
// Float formatting
// ---------------------------------------------------------------------------

/// JSON formatter printing every float with 17 significant digits, enough to
/// reproduce the exact f64 on parse. The same value always renders to the
/// same string, so documents round-trip byte-identically.
struct Float17Formatter;

impl serde_json::ser::Formatter for Float17Formatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.8e}")
    }
}

/// Serializes with the 17-significant-digit float convention.
pub fn to_document_json<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Float17Formatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("JSON serializer emits UTF-8"))
}

// ---------------------------------------------------------------------------
// System document
// ---------------------------------------------------------------------------

/// Feature map descriptor: the literal string "one-hot" or an explicit
/// per-state matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureMapDoc {
    Named(String),
    Matrix(Vec<Vec<f64>>),
}

/// Flat persisted form of a system and its true reward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub cf: usize,
    pub gamma: f64,
    /// Successor lists, row-major over (state, action).
    pub successors: Vec<Vec<usize>>,
    /// Probability rows aligned with `successors`.
    pub transition_probs: Vec<Vec<f64>>,
    pub d0: Vec<f64>,
    pub theta: Vec<f64>,
    pub feature_map: FeatureMapDoc,
    /// Seed the system was sampled from.
    pub rng_seed: u64,
}

impl SystemDocument {
    pub fn from_system(mdp: &FiniteMdp, rm: &RewardModel, rng_seed: u64) -> Self {
        let feature_map = match rm.features() {
            FeatureMap::OneHot { .. } => FeatureMapDoc::Named("one-hot".into()),
            FeatureMap::Dense { n_states, k, rows } => FeatureMapDoc::Matrix(
                (0..*n_states)
                    .map(|s| rows[s * k..(s + 1) * k].to_vec())
                    .collect(),
            ),
        };
        Self {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            cf: mdp.graph().cf(),
            gamma: mdp.gamma(),
            successors: mdp.graph().to_rows(),
            transition_probs: mdp.transitions().to_rows(),
            d0: mdp.d0().probs().to_vec(),
            theta: rm.theta().to_vec(),
            feature_map,
            rng_seed,
        }
    }

    /// Reconstructs and fully validates the system; rows with drift up to
    /// 1e-6 are renormalized on the way in.
    pub fn into_system(&self) -> Result<(FiniteMdp, RewardModel)> {
        let graph = ConnectivityGraph::new(
            self.n_states,
            self.n_actions,
            self.cf,
            self.successors.clone(),
        )?;
        let transitions = TransitionTable::from_graph_rows(&graph, self.transition_probs.clone())?;
        let d0 = InitialDistribution::new(self.d0.clone())?;
        let mdp = FiniteMdp::new(graph, transitions, d0, self.gamma)?;
        let features = match &self.feature_map {
            FeatureMapDoc::Named(name) if name == "one-hot" => {
                FeatureMap::one_hot(self.n_states)
            }
            FeatureMapDoc::Named(other) => {
                return Err(CoreError::Document(format!(
                    "unknown feature map descriptor {other:?}"
                )))
            }
            FeatureMapDoc::Matrix(rows) => {
                if rows.len() != self.n_states {
                    return Err(CoreError::Document(format!(
                        "feature matrix covers {} states, system has {}",
                        rows.len(),
                        self.n_states
                    )));
                }
                FeatureMap::dense(rows.clone())?
            }
        };
        let rm = RewardModel::new(self.theta.clone(), features)?;
        Ok((mdp, rm))
    }

    pub fn to_json(&self) -> Result<String> {
        to_document_json(self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_json()?)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

// ---------------------------------------------------------------------------
// Policy document
// ---------------------------------------------------------------------------

/// Persisted stochastic policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub probs: Vec<Vec<f64>>,
}

impl PolicyDocument {
    pub fn from_policy(policy: &PolicyTable) -> Self {
        Self {
            n_states: policy.n_states(),
            n_actions: policy.n_actions(),
            probs: policy.to_rows(),
        }
    }

    pub fn into_policy(&self) -> Result<PolicyTable> {
        PolicyTable::from_rows(self.n_states, self.n_actions, self.probs.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, to_document_json(self)?)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

// ---------------------------------------------------------------------------
// Dataset persistence (one JSON record per line)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRecord {
    states: Vec<usize>,
    actions: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

/// Writes unlabeled trajectories, one record per line.
pub fn save_dataset(path: &Path, ds: &[Trajectory]) -> Result<()> {
    let mut file = io::BufWriter::new(fs::File::create(path)?);
    for t in ds {
        let record = TrajectoryRecord {
            states: t.states().to_vec(),
            actions: t.actions().to_vec(),
            score: None,
        };
        writeln!(file, "{}", to_document_json(&record)?)?;
    }
    file.flush()?;
    Ok(())
}

/// Writes labeled trajectories, one record per line.
pub fn save_labeled_dataset(path: &Path, ds: &[LabeledTrajectory]) -> Result<()> {
    let mut file = io::BufWriter::new(fs::File::create(path)?);
    for lt in ds {
        let record = TrajectoryRecord {
            states: lt.trajectory.states().to_vec(),
            actions: lt.trajectory.actions().to_vec(),
            score: Some(lt.score),
        };
        writeln!(file, "{}", to_document_json(&record)?)?;
    }
    file.flush()?;
    Ok(())
}

/// Loads a dataset and validates every trajectory against the owning
/// system's connectivity graph. Scores come back alongside each trajectory
/// when the file has them.
pub fn load_dataset(
    path: &Path,
    graph: &ConnectivityGraph,
) -> Result<Vec<(Trajectory, Option<f64>)>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord = serde_json::from_str(&line).map_err(|e| {
            CoreError::Document(format!("line {}: {e}", line_no + 1))
        })?;
        let trajectory = Trajectory::new(record.states, record.actions)
            .map_err(|e| CoreError::Document(format!("line {}: {e}", line_no + 1)))?;
        trajectory
            .check_against(graph)
            .map_err(|e| CoreError::Document(format!("line {}: {e}", line_no + 1)))?;
        out.push((trajectory, record.score));
    }
    Ok(out)
}
