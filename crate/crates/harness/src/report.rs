use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use iso_core::median;

/// One aggregated line: medians over systems for a (cf, behavior, recoverer)
/// group.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub cf: u64,
    pub behavior: String,
    pub nf: f64,
    pub recoverer: String,
    pub n_systems: usize,
    pub median_initial: f64,
    pub median_final: f64,
    /// Median of per-system relative improvements, as a fraction.
    pub median_improvement: f64,
}

#[derive(Debug, Default)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// Per-file parse problems, reported but not fatal.
    pub file_errors: Vec<String>,
}

impl Report {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:>4}  {:<8} {:>4}  {:<7} {:>8}  {:>14}  {:>14}  {:>12}\n",
            "cf", "behavior", "nf", "recov", "systems", "median_initial", "median_final", "improvement"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:>4}  {:<8} {:>4}  {:<7} {:>8}  {:>14.6}  {:>14.6}  {:>11.2}%\n",
                r.cf,
                r.behavior,
                r.nf,
                r.recoverer,
                r.n_systems,
                r.median_initial,
                r.median_final,
                r.median_improvement * 100.0,
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "cf,behavior,nf,recoverer,n_systems,median_initial,median_final,median_improvement\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.cf,
                r.behavior,
                r.nf,
                r.recoverer,
                r.n_systems,
                r.median_initial,
                r.median_final,
                r.median_improvement
            ));
        }
        out
    }
}

#[derive(Debug)]
struct SummaryRecord {
    cf: u64,
    behavior: String,
    nf: f64,
    recoverer: String,
    initial_value: f64,
    final_value: f64,
    relative_improvement: f64,
}

fn parse_summary_file(path: &Path) -> Result<Vec<SummaryRecord>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let need = [
        "cf",
        "behavior",
        "nf",
        "recoverer",
        "initial_value",
        "final_value",
        "relative_improvement",
    ];
    let mut cols = Vec::with_capacity(need.len());
    for name in need {
        let idx = headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{}: missing column {name}", path.display()))?;
        cols.push(idx);
    }
    let mut out = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", path.display(), line + 2))?;
        let field = |i: usize| -> &str { row.get(cols[i]).unwrap_or("") };
        let numeric = |i: usize| -> Result<f64> {
            field(i)
                .parse()
                .with_context(|| format!("{}: row {}: bad number", path.display(), line + 2))
        };
        out.push(SummaryRecord {
            cf: field(0)
                .parse()
                .with_context(|| format!("{}: row {}: bad cf", path.display(), line + 2))?,
            behavior: field(1).to_string(),
            nf: numeric(2)?,
            recoverer: field(3).to_string(),
            initial_value: numeric(4)?,
            final_value: numeric(5)?,
            relative_improvement: numeric(6)?,
        });
    }
    Ok(out)
}

fn looks_like_summary(path: &Path) -> bool {
    let Ok(text) = fs::read_to_string(path) else {
        return false;
    };
    let Some(header) = text.lines().next() else {
        return false;
    };
    ["initial_value", "final_value", "relative_improvement"]
        .iter()
        .all(|c| header.contains(c))
        && !header.contains("median_initial")
}

/// Aggregates every summary-shaped CSV in `dir` by median over systems.
pub fn build_report(dir: &Path) -> Result<Report> {
    let mut report = Report::default();
    let mut records = Vec::new();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    for path in paths.iter().filter(|p| looks_like_summary(p)) {
        match parse_summary_file(path) {
            Ok(mut rows) => records.append(&mut rows),
            Err(e) => report.file_errors.push(format!("{e:#}")),
        }
    }

    // Group keys in deterministic order.
    let mut keys: Vec<(u64, String, u64, String)> = records
        .iter()
        .map(|r| (r.cf, r.behavior.clone(), r.nf.to_bits(), r.recoverer.clone()))
        .collect();
    keys.sort();
    keys.dedup();

    for (cf, behavior, nf_bits, recoverer) in keys {
        let group: Vec<&SummaryRecord> = records
            .iter()
            .filter(|r| {
                r.cf == cf
                    && r.behavior == behavior
                    && r.nf.to_bits() == nf_bits
                    && r.recoverer == recoverer
            })
            .collect();
        let initial: Vec<f64> = group.iter().map(|r| r.initial_value).collect();
        let final_v: Vec<f64> = group.iter().map(|r| r.final_value).collect();
        let improvement: Vec<f64> = group.iter().map(|r| r.relative_improvement).collect();
        report.rows.push(ReportRow {
            cf,
            behavior,
            nf: f64::from_bits(nf_bits),
            recoverer,
            n_systems: group.len(),
            median_initial: median(&initial).expect("group non-empty"),
            median_final: median(&final_v).expect("group non-empty"),
            median_improvement: median(&improvement).expect("group non-empty"),
        });
    }
    Ok(report)
}

/// Builds, prints, and persists the report; returns it for the exit status
/// decision.
pub fn report_command(dir: &Path) -> Result<Report> {
    let report = build_report(dir)?;
    for err in &report.file_errors {
        eprintln!("warning: {err}");
    }
    print!("{}", report.render());
    if !report.is_empty() {
        fs::write(dir.join("report.csv"), report.to_csv())?;
    }
    Ok(report)
}
