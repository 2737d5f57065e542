//! End-to-end command-line checks plus a source guard keeping the true
//! reward out of the optimization path.

use std::fs;
use std::path::Path;
use std::process::Command;

use iso_core::{PolicyDocument, PolicyTable, SystemDocument};

const BIN: &str = env!("CARGO_BIN_EXE_iso-harness");

fn run_ok(args: &[&str]) -> String {
    let out = Command::new(BIN).args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf8 stdout")
}

#[test]
fn cli_round_trip() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg_path = tmp.path().join("cfg.toml");
    fs::write(
        &cfg_path,
        r#"
n_systems = 2
n_states = 10
n_actions = 2
cf = [2]
gamma = 0.9
density = 0.3
master_seed = 42
n_trajectories = 150
min_len = 10
max_len = 15
max_outer_iters = 3

[[behaviors]]
behavior = "optimal"
recoverer = "dm"
"#,
    )
    .expect("write config");
    let cfg = cfg_path.to_str().unwrap();

    // Population sampling.
    let gen_dir = tmp.path().join("gen");
    let stdout = run_ok(&["gen", "--config", cfg, "--out", gen_dir.to_str().unwrap()]);
    assert!(stdout.contains("wrote 2 system documents"), "{stdout}");
    let mut systems: Vec<_> = fs::read_dir(gen_dir.join("systems"))
        .expect("systems dir")
        .map(|e| e.expect("entry").path())
        .collect();
    systems.sort();
    assert_eq!(systems.len(), 2);

    // Full sweep.
    let run_dir = tmp.path().join("run");
    let stdout = run_ok(&["run", "--config", cfg, "--out", run_dir.to_str().unwrap()]);
    assert!(stdout.contains("ran 2 cells (0 failed)"), "{stdout}");
    let summary = fs::read_to_string(run_dir.join("summary.csv")).expect("summary");
    assert_eq!(summary.lines().count(), 3, "header plus one row per cell");

    // Scoring a stored system under a stored policy.
    let doc = SystemDocument::load(&systems[0]).expect("system document");
    let (mdp, _) = doc.into_system().expect("system");
    let uniform = PolicyTable::uniform(mdp.n_states(), mdp.n_actions());
    let policy_path = tmp.path().join("uniform.json");
    PolicyDocument::from_policy(&uniform)
        .save(&policy_path)
        .expect("save policy");
    let stdout = run_ok(&[
        "eval",
        "--system",
        systems[0].to_str().unwrap(),
        "--policy",
        policy_path.to_str().unwrap(),
    ]);
    let value: f64 = stdout.trim().parse().expect("numeric value");
    assert!(value.is_finite());

    // Aggregation over the run directory.
    let stdout = run_ok(&["report", "--out", run_dir.to_str().unwrap()]);
    assert!(stdout.contains("median"), "{stdout}");
    assert!(run_dir.join("report.csv").is_file());

    // An empty directory is a reportable failure, not a crash.
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = Command::new(BIN)
        .args(["report", "--out", empty.to_str().unwrap()])
        .output()
        .expect("spawn");
    assert!(!out.status.success());
}

/// The optimizer must never see the true reward; it reaches scoring only.
/// Every production call of `expected_start_value` has to name its reward
/// argument `rm_true`, which keeps accidental reuse greppable.
#[test]
fn true_reward_reaches_scoring_only() {
    let harness_src = Path::new(env!("CARGO_MANIFEST_DIR")).join("src");
    let core_src = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/src");
    let mut call_sites = 0usize;
    for dir in [harness_src, core_src] {
        for entry in fs::read_dir(&dir).expect("source dir") {
            let path = entry.expect("entry").path();
            if path.extension().and_then(|e| e.to_str()) != Some("rs") {
                continue;
            }
            let text = fs::read_to_string(&path).expect("source file");
            let prod = match text.find("#[cfg(test)]") {
                Some(cut) => &text[..cut],
                None => &text[..],
            };
            let mut from = 0;
            while let Some(pos) = prod[from..].find("expected_start_value(") {
                let at = from + pos;
                from = at + 1;
                let before = &prod[at.saturating_sub(8)..at];
                if before.contains("fn ") {
                    continue;
                }
                let after = &prod[at..prod.len().min(at + 160)];
                assert!(
                    after.contains("rm_true"),
                    "unlabeled true-reward scoring in {}: {after}",
                    path.display()
                );
                call_sites += 1;
            }
        }
    }
    assert!(call_sites >= 2, "scoring call sites went missing");
}
