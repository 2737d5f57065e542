use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use iso_core::{BehaviorSpec, DatasetSpec, IsoConfig, MaxEntConfig, Recoverer};
use serde::{Deserialize, Serialize};

/// Behavior kind as written in config files; labels match the metrics output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BehaviorName {
    Optimal,
    Mix,
    Noise,
}

impl BehaviorName {
    pub fn label(self) -> &'static str {
        match self {
            BehaviorName::Optimal => "optimal",
            BehaviorName::Mix => "mix",
            BehaviorName::Noise => "noise",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecovererName {
    Maxent,
    Dm,
}

impl RecovererName {
    pub fn label(self) -> &'static str {
        match self {
            RecovererName::Maxent => "maxent",
            RecovererName::Dm => "dm",
        }
    }
}

/// One cell of the behavior grid: a simulated-user behavior plus the reward
/// recoverer run against it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub behavior: BehaviorName,
    #[serde(default)]
    pub nf: f64,
    pub recoverer: RecovererName,
}

impl Arm {
    pub fn behavior_spec(&self) -> Result<BehaviorSpec> {
        let spec = match self.behavior {
            BehaviorName::Optimal => {
                if self.nf != 0.0 {
                    bail!("optimal behavior cannot carry a noise factor");
                }
                BehaviorSpec::optimal()
            }
            BehaviorName::Mix => BehaviorSpec::mix_of_behaviors(self.nf)?,
            BehaviorName::Noise => BehaviorSpec::noise_in_behavior(self.nf)?,
        };
        Ok(spec)
    }
}

/// MaxEnt-IRL settings exposed to config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaxEntSection {
    pub learning_rate: f64,
    pub n_gradient_steps: usize,
    pub l2_penalty: f64,
    pub horizon: Option<usize>,
}

impl Default for MaxEntSection {
    fn default() -> Self {
        let base = MaxEntConfig::default();
        Self {
            learning_rate: base.learning_rate,
            n_gradient_steps: base.n_gradient_steps,
            l2_penalty: base.l2_penalty,
            horizon: base.horizon,
        }
    }
}

/// Full sweep description. Config files mirror these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_systems: usize,
    pub n_states: usize,
    pub n_actions: usize,
    /// Connection factors; the sweep crosses systems with every entry.
    pub cf: Vec<usize>,
    pub gamma: f64,
    /// Fraction of states carrying reward 1.
    pub density: f64,
    /// Behavior grid.
    pub behaviors: Vec<Arm>,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub n_trajectories: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub max_outer_iters: usize,
    pub value_tol: f64,
    pub patience: usize,
    pub tau: f64,
    pub eta: f64,
    pub soft_vi_tol: f64,
    pub soft_vi_max_iters: usize,
    pub plus_tol: f64,
    /// When false the elapsed_ms column is written as zero so repeated runs
    /// with one master seed emit byte-identical files.
    pub record_timing: bool,
    pub maxent: MaxEntSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_systems: 40,
            n_states: 64,
            n_actions: 4,
            cf: vec![2, 8, 32],
            gamma: 0.9,
            density: 0.25,
            behaviors: default_grid(),
            master_seed: 20_240_816,
            out_dir: PathBuf::from("runs"),
            n_trajectories: 15_000,
            min_len: 30,
            max_len: 40,
            max_outer_iters: 100,
            value_tol: 1e-6,
            patience: 5,
            tau: 0.0,
            eta: 1.0,
            soft_vi_tol: iso_core::sim::SOFT_VI_TOL,
            soft_vi_max_iters: iso_core::sim::SOFT_VI_MAX_ITERS,
            plus_tol: iso_core::iso::PLUS_VI_TOL,
            record_timing: false,
            maxent: MaxEntSection::default(),
        }
    }
}

fn default_grid() -> Vec<Arm> {
    use BehaviorName::*;
    vec![
        Arm { behavior: Optimal, nf: 0.0, recoverer: RecovererName::Maxent },
        Arm { behavior: Mix, nf: 0.2, recoverer: RecovererName::Maxent },
        Arm { behavior: Mix, nf: 0.6, recoverer: RecovererName::Maxent },
        Arm { behavior: Noise, nf: 0.2, recoverer: RecovererName::Maxent },
        Arm { behavior: Noise, nf: 0.6, recoverer: RecovererName::Maxent },
        Arm { behavior: Optimal, nf: 0.0, recoverer: RecovererName::Dm },
    ]
}

impl ExperimentConfig {
    /// Small preset sized so a full sweep finishes in minutes.
    pub fn desk() -> Self {
        Self {
            n_systems: 10,
            cf: vec![2],
            n_trajectories: 2_000,
            max_outer_iters: 30,
            ..Self::default()
        }
    }

    /// Full scale matching the reference evaluation protocol.
    pub fn paper() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.n_systems == 0 {
            bail!("n_systems must be positive");
        }
        if self.n_states == 0 || self.n_actions == 0 {
            bail!("state and action counts must be positive");
        }
        if self.cf.is_empty() {
            bail!("cf list must not be empty");
        }
        for &cf in &self.cf {
            if cf == 0 || cf > self.n_states {
                bail!("cf {} outside [1, {}]", cf, self.n_states);
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            bail!("gamma {} outside [0, 1)", self.gamma);
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            bail!("density {} outside (0, 1]", self.density);
        }
        if self.behaviors.is_empty() {
            bail!("behavior grid must not be empty");
        }
        for arm in &self.behaviors {
            arm.behavior_spec()?;
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            bail!(
                "trajectory length range [{}, {}] is invalid",
                self.min_len,
                self.max_len
            );
        }
        if self.n_trajectories == 0 {
            bail!("n_trajectories must be positive");
        }
        // The remaining loop settings are validated by the optimizer itself.
        let probe = self.behaviors[0];
        self.iso_config(&probe)?.check()?;
        Ok(())
    }

    pub fn maxent_config(&self) -> MaxEntConfig {
        MaxEntConfig {
            learning_rate: self.maxent.learning_rate,
            n_gradient_steps: self.maxent.n_gradient_steps,
            horizon: self.maxent.horizon,
            soft_vi_tol: self.soft_vi_tol,
            soft_vi_max_iters: self.soft_vi_max_iters,
            l2_penalty: self.maxent.l2_penalty,
        }
    }

    /// Optimizer settings for one arm. The dataset seed is a placeholder:
    /// the loop draws a fresh one each iteration.
    pub fn iso_config(&self, arm: &Arm) -> Result<IsoConfig> {
        let behavior = arm.behavior_spec()?;
        let dataset = DatasetSpec::new(behavior, 0)
            .with_n_trajectories(self.n_trajectories)
            .with_length_range(self.min_len, self.max_len);
        let recoverer = match arm.recoverer {
            RecovererName::Maxent => Recoverer::MaxEnt(self.maxent_config()),
            RecovererName::Dm => Recoverer::DmOracle,
        };
        let mut cfg = IsoConfig::new(recoverer, dataset);
        cfg.max_outer_iters = self.max_outer_iters;
        cfg.value_tol = self.value_tol;
        cfg.patience = self.patience;
        cfg.tau = self.tau;
        cfg.eta = self.eta;
        cfg.soft_vi_tol = self.soft_vi_tol;
        cfg.soft_vi_max_iters = self.soft_vi_max_iters;
        cfg.plus_tol = self.plus_tol;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_paper_scale() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.n_systems, 40);
        assert_eq!(cfg.n_states, 64);
        assert_eq!(cfg.n_actions, 4);
        assert_eq!(cfg.cf, vec![2, 8, 32]);
        assert_eq!(cfg.density, 0.25);
        assert_eq!(cfg.n_trajectories, 15_000);
        assert_eq!(cfg.behaviors.len(), 6);
        cfg.check().unwrap();
    }

    #[test]
    fn desk_preset_is_small() {
        let cfg = ExperimentConfig::desk();
        assert_eq!(cfg.n_systems, 10);
        assert_eq!(cfg.n_trajectories, 2_000);
        assert_eq!(cfg.max_outer_iters, 30);
        assert_eq!(cfg.cf, vec![2]);
        cfg.check().unwrap();
    }

    #[test]
    fn toml_round_trip_mirrors_field_names() {
        let text = r#"
            n_systems = 3
            n_states = 8
            n_actions = 2
            cf = [2]
            gamma = 0.8
            density = 0.5
            master_seed = 7
            n_trajectories = 50
            min_len = 3
            max_len = 5
            max_outer_iters = 4

            [[behaviors]]
            behavior = "noise"
            nf = 0.2
            recoverer = "maxent"

            [maxent]
            n_gradient_steps = 25
        "#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.n_systems, 3);
        assert_eq!(cfg.behaviors.len(), 1);
        assert_eq!(cfg.behaviors[0].behavior, BehaviorName::Noise);
        assert_eq!(cfg.behaviors[0].nf, 0.2);
        assert_eq!(cfg.maxent.n_gradient_steps, 25);
        assert_eq!(cfg.patience, 5);
        cfg.check().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = "bogus_field = 1";
        assert!(toml::from_str::<ExperimentConfig>(text).is_err());
    }

    #[test]
    fn invalid_grid_is_rejected() {
        let mut cfg = ExperimentConfig::desk();
        cfg.behaviors[0].behavior = BehaviorName::Optimal;
        cfg.behaviors[0].nf = 0.3;
        assert!(cfg.check().is_err());
    }
}
