use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use iso_core::{derive_seed, iso_loop, seeded_rng, IterationRecord, SystemDocument};
use rayon::prelude::*;

use crate::config::{Arm, ExperimentConfig};
use crate::sample::sample_system;

pub const ITERATIONS_HEADER: &str =
    "system_id,cf,behavior,nf,recoverer,iteration,expected_value_true,pearson_r,spearman_r,elapsed_ms,seed";
pub const SUMMARY_HEADER: &str = "system_id,cf,behavior,nf,recoverer,initial_value,final_value,\
                                  relative_improvement,plateau_iteration,n_iterations,seed,curve_file";
pub const CURVES_HEADER: &str =
    "cf,behavior,nf,recoverer,iteration,mean_value,band_low,band_high,n_systems";
pub const FAILURES_HEADER: &str = "system_id,cf,behavior,nf,recoverer,seed,error";

/// Identity of one sweep cell.
#[derive(Debug, Clone, Copy)]
pub struct CellKey {
    pub system_id: usize,
    pub cf: usize,
    pub arm: Arm,
}

/// Successful cell payload.
#[derive(Debug, Clone)]
pub struct CellTrace {
    pub records: Vec<IterationRecord>,
    pub final_doc: SystemDocument,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub key: CellKey,
    /// Seed of the optimizer loop RNG for this cell.
    pub seed: u64,
    /// Seed the system itself was sampled from (shared across arms).
    pub system_seed: u64,
    pub outcome: std::result::Result<CellTrace, String>,
}

impl CellResult {
    pub fn records(&self) -> Option<&[IterationRecord]> {
        self.outcome.as_ref().ok().map(|t| t.records.as_slice())
    }

    pub fn initial_value(&self) -> Option<f64> {
        self.records().and_then(|r| r.first()).map(|r| r.value_true)
    }

    pub fn final_value(&self) -> Option<f64> {
        self.records().and_then(|r| r.last()).map(|r| r.value_true)
    }
}

/// Everything a sweep produced, with the emitted file paths.
#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub cells: Vec<CellResult>,
}

impl RunSummary {
    pub fn iterations_csv(&self) -> PathBuf {
        self.out_dir.join("iterations.csv")
    }

    pub fn summary_csv(&self) -> PathBuf {
        self.out_dir.join("summary.csv")
    }

    pub fn curves_csv(&self) -> PathBuf {
        self.out_dir.join("curves.csv")
    }

    pub fn failures_csv(&self) -> PathBuf {
        self.out_dir.join("failures.csv")
    }
}

/// First iteration at which 80% of the total improvement is in hand; 0 when
/// nothing improved.
pub fn plateau_iteration(values: &[f64]) -> usize {
    let (Some(&first), Some(&last)) = (values.first(), values.last()) else {
        return 0;
    };
    let total = last - first;
    if total <= 0.0 {
        return 0;
    }
    values
        .iter()
        .position(|&v| v - first >= 0.8 * total)
        .unwrap_or(0)
}

fn execute_cell(
    cfg: &ExperimentConfig,
    system_id: usize,
    cf_index: usize,
    cf: usize,
    arm_index: usize,
    arm: Arm,
) -> CellResult {
    let per_system = derive_seed(cfg.master_seed, system_id as u64);
    let system_seed = derive_seed(per_system, cf_index as u64);
    let loop_seed = derive_seed(system_seed, arm_index as u64);
    let run = || -> Result<CellTrace> {
        let mut sys_rng = seeded_rng(system_seed);
        let (mdp, rm_true) = sample_system(
            cfg.n_states,
            cfg.n_actions,
            cf,
            cfg.density,
            cfg.gamma,
            &mut sys_rng,
        )?;
        let iso_cfg = cfg.iso_config(&arm)?;
        let mut loop_rng = seeded_rng(loop_seed);
        let (records, final_mdp) = iso_loop(&mdp, &rm_true, &iso_cfg, &mut loop_rng)?;
        let final_doc = SystemDocument::from_system(&final_mdp, &rm_true, system_seed);
        Ok(CellTrace { records, final_doc })
    };
    CellResult {
        key: CellKey { system_id, cf, arm },
        seed: loop_seed,
        system_seed,
        outcome: run().map_err(|e| format!("{e:#}")),
    }
}

/// Runs the full sweep: systems x connection factors x behavior grid.
/// Cells execute independently (in parallel when a pool is available) and
/// the files come out identical regardless of completion order. A failed
/// cell lands in failures.csv and the sweep continues.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.check()?;
    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let final_dir = cfg.out_dir.join("final");
    fs::create_dir_all(&final_dir)?;

    let mut cell_specs = Vec::new();
    for system_id in 0..cfg.n_systems {
        for (cf_index, &cf) in cfg.cf.iter().enumerate() {
            for (arm_index, &arm) in cfg.behaviors.iter().enumerate() {
                cell_specs.push((system_id, cf_index, cf, arm_index, arm));
            }
        }
    }

    let cells: Vec<CellResult> = cell_specs
        .par_iter()
        .map(|&(system_id, cf_index, cf, arm_index, arm)| {
            execute_cell(cfg, system_id, cf_index, cf, arm_index, arm)
        })
        .collect();

    let summary = RunSummary {
        out_dir: cfg.out_dir.clone(),
        cells,
    };
    write_iterations_csv(&summary, cfg)?;
    write_summary_csv(&summary)?;
    write_curves_csv(&summary, cfg)?;
    write_failures_csv(&summary)?;
    write_final_documents(&summary, &final_dir)?;
    Ok(summary)
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Writes `lines` to `path` through a temp file so readers never observe a
/// half-written artifact.
fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    fs::write(&tmp, content).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn write_iterations_csv(summary: &RunSummary, cfg: &ExperimentConfig) -> Result<()> {
    let mut out = String::from(ITERATIONS_HEADER);
    out.push('\n');
    for cell in &summary.cells {
        let Some(records) = cell.records() else {
            continue;
        };
        for rec in records {
            let elapsed = if cfg.record_timing { rec.elapsed_ms } else { 0.0 };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                cell.key.system_id,
                cell.key.cf,
                cell.key.arm.behavior.label(),
                fmt_f64(cell.key.arm.nf),
                cell.key.arm.recoverer.label(),
                rec.iteration,
                fmt_f64(rec.value_true),
                fmt_opt(rec.pearson),
                fmt_opt(rec.spearman),
                fmt_f64(elapsed),
                cell.seed,
            ));
        }
    }
    write_atomic(&summary.iterations_csv(), &out)
}

fn write_summary_csv(summary: &RunSummary) -> Result<()> {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for cell in &summary.cells {
        let Some(records) = cell.records() else {
            continue;
        };
        let values: Vec<f64> = records.iter().map(|r| r.value_true).collect();
        let initial = values[0];
        let final_v = *values.last().expect("trace never empty");
        let rel = (final_v - initial) / initial.abs().max(1e-12);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},iterations.csv\n",
            cell.key.system_id,
            cell.key.cf,
            cell.key.arm.behavior.label(),
            fmt_f64(cell.key.arm.nf),
            cell.key.arm.recoverer.label(),
            fmt_f64(initial),
            fmt_f64(final_v),
            fmt_f64(rel),
            plateau_iteration(&values),
            records.len() - 1,
            cell.seed,
        ));
    }
    write_atomic(&summary.summary_csv(), &out)
}

fn write_curves_csv(summary: &RunSummary, cfg: &ExperimentConfig) -> Result<()> {
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    for &cf in &cfg.cf {
        for arm in &cfg.behaviors {
            let traces: Vec<&[IterationRecord]> = summary
                .cells
                .iter()
                .filter(|c| {
                    c.key.cf == cf
                        && c.key.arm.behavior == arm.behavior
                        && c.key.arm.nf == arm.nf
                        && c.key.arm.recoverer == arm.recoverer
                })
                .filter_map(|c| c.records())
                .collect();
            if traces.is_empty() {
                continue;
            }
            let longest = traces.iter().map(|t| t.len()).max().unwrap();
            for t in 0..longest {
                // Early-stopped traces hold their last value.
                let values: Vec<f64> = traces
                    .iter()
                    .map(|trace| {
                        let idx = t.min(trace.len() - 1);
                        trace[idx].value_true
                    })
                    .collect();
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                let lo = iso_core::quantile(&values, 0.1).expect("non-empty");
                let hi = iso_core::quantile(&values, 0.9).expect("non-empty");
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    cf,
                    arm.behavior.label(),
                    fmt_f64(arm.nf),
                    arm.recoverer.label(),
                    t,
                    fmt_f64(mean),
                    fmt_f64(lo),
                    fmt_f64(hi),
                    values.len(),
                ));
            }
        }
    }
    write_atomic(&summary.curves_csv(), &out)
}

fn write_failures_csv(summary: &RunSummary) -> Result<()> {
    let mut out = String::from(FAILURES_HEADER);
    out.push('\n');
    for cell in &summary.cells {
        if let Err(message) = &cell.outcome {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                cell.key.system_id,
                cell.key.cf,
                cell.key.arm.behavior.label(),
                fmt_f64(cell.key.arm.nf),
                cell.key.arm.recoverer.label(),
                cell.seed,
                message.replace([',', '\n'], ";"),
            ));
        }
    }
    write_atomic(&summary.failures_csv(), &out)
}

fn write_final_documents(summary: &RunSummary, final_dir: &Path) -> Result<()> {
    for cell in &summary.cells {
        let Ok(trace) = &cell.outcome else { continue };
        let name = format!(
            "system_{:03}_cf{}_{}-nf{:.2}_{}.json",
            cell.key.system_id,
            cell.key.cf,
            cell.key.arm.behavior.label(),
            cell.key.arm.nf,
            cell.key.arm.recoverer.label(),
        );
        trace.final_doc.save(&final_dir.join(name))?;
    }
    Ok(())
}

/// Samples and persists the system population without running the
/// optimizer (the `gen` subcommand).
pub fn generate_systems(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.check()?;
    let dir = cfg.out_dir.join("systems");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    for system_id in 0..cfg.n_systems {
        for (cf_index, &cf) in cfg.cf.iter().enumerate() {
            let per_system = derive_seed(cfg.master_seed, system_id as u64);
            let system_seed = derive_seed(per_system, cf_index as u64);
            let mut rng = seeded_rng(system_seed);
            let (mdp, rm) = sample_system(
                cfg.n_states,
                cfg.n_actions,
                cf,
                cfg.density,
                cfg.gamma,
                &mut rng,
            )?;
            let doc = SystemDocument::from_system(&mdp, &rm, system_seed);
            let path = dir.join(format!("system_{system_id:03}_cf{cf}.json"));
            doc.save(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BehaviorName, RecovererName};

    fn tiny_config(out: &Path) -> ExperimentConfig {
        ExperimentConfig {
            n_systems: 2,
            n_states: 4,
            n_actions: 2,
            cf: vec![2],
            n_trajectories: 40,
            min_len: 3,
            max_len: 5,
            max_outer_iters: 2,
            behaviors: vec![Arm {
                behavior: BehaviorName::Optimal,
                nf: 0.0,
                recoverer: RecovererName::Dm,
            }],
            out_dir: out.to_path_buf(),
            master_seed: 5,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn zero_iteration_sweep_emits_one_row_per_cell() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.n_systems = 1;
        cfg.max_outer_iters = 0;
        let summary = run_experiment(&cfg).unwrap();
        let text = fs::read_to_string(summary.iterations_csv()).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], ITERATIONS_HEADER);
        assert!(rows[1].starts_with("0,2,optimal,0,dm,0,"));
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = run_experiment(&tiny_config(dir_a.path())).unwrap();
        let b = run_experiment(&tiny_config(dir_b.path())).unwrap();
        for (pa, pb) in [
            (a.iterations_csv(), b.iterations_csv()),
            (a.summary_csv(), b.summary_csv()),
            (a.curves_csv(), b.curves_csv()),
            (a.failures_csv(), b.failures_csv()),
        ] {
            assert_eq!(fs::read(pa).unwrap(), fs::read(pb).unwrap());
        }
    }

    #[test]
    fn plateau_iteration_examples() {
        assert_eq!(plateau_iteration(&[1.0, 1.0, 1.0]), 0);
        assert_eq!(plateau_iteration(&[1.0, 2.0, 2.0, 2.0]), 1);
        assert_eq!(plateau_iteration(&[0.0, 0.5, 0.79, 0.8, 1.0]), 3);
        assert_eq!(plateau_iteration(&[2.0, 1.0]), 0);
    }

    #[test]
    fn generated_systems_reload_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let paths = generate_systems(&cfg).unwrap();
        assert_eq!(paths.len(), 2);
        for p in paths {
            let doc = SystemDocument::load(&p).unwrap();
            let (mdp, _) = doc.into_system().unwrap();
            assert!(mdp.validate().is_pass());
        }
    }
}
