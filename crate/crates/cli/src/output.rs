//! Report, JSON results and CSV tables for one run.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use dualbench::duality::VerificationRecord;
use serde::Serialize;

use crate::config::Plan;
use crate::run::{Outcome, Table};

#[derive(Serialize)]
struct Results<'a> {
    model: &'a str,
    experiment: &'a str,
    seed: u64,
    passed: bool,
    records: &'a [VerificationRecord],
    tables: &'a [Table],
}

/// Machine-readable results; identical for identical config and seed.
pub fn results_json(plan: &Plan, outcome: &Outcome) -> String {
    let results = Results {
        model: plan.model.kind.name(),
        experiment: plan.run.experiment.name(),
        seed: plan.run.seed,
        passed: outcome.passed(),
        records: &outcome.records,
        tables: &outcome.tables,
    };
    serde_json::to_string_pretty(&results).expect("results serialize") + "\n"
}

pub fn report(plan: &Plan, outcome: &Outcome, config: &Path, timestamp: &str) -> String {
    let mut text = format!(
        "dualbench report\ngenerated: {timestamp}\nconfig: {}\nmodel: {}\nexperiment: {}\nseed: {}\nsites: {}\n\n",
        config.display(),
        plan.model.kind,
        plan.run.experiment,
        plan.run.seed,
        plan.kernel.names().join(" "),
    );
    for r in &outcome.records {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        let sector = if r.sector.is_empty() { String::new() } else { format!(" [{}]", r.sector) };
        text.push_str(&format!("{verdict} {} = {}{sector}", r.identity, r.residual));
        if let Some(w) = &r.witness {
            text.push_str(&format!(" at {w}"));
        }
        text.push('\n');
    }
    for note in &outcome.notes {
        text.push_str(&format!("note: {note}\n"));
    }
    for table in &outcome.tables {
        text.push_str(&format!("\n{}:\n  {}\n", table.name, table.header.join("  ")));
        for row in &table.rows {
            text.push_str(&format!("  {}\n", row.join("  ")));
        }
    }
    let summary = if outcome.passed() { "all checks passed" } else { "some checks FAILED" };
    text.push_str(&format!("\n{summary} ({} records)\n", outcome.records.len()));
    text
}

fn write_csv(path: &Path, table: &Table) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()
}

/// Writes every artifact into `dir` and returns the paths written.
pub fn write_all(dir: &Path, plan: &Plan, outcome: &Outcome, config: &Path, timestamp: &str) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let report_path = dir.join("report.txt");
    fs::write(&report_path, report(plan, outcome, config, timestamp))?;
    written.push(report_path);
    let json_path = dir.join("results.json");
    fs::write(&json_path, results_json(plan, outcome))?;
    written.push(json_path);
    for table in &outcome.tables {
        let path = dir.join(format!("{}.csv", table.name));
        write_csv(&path, table)?;
        written.push(path);
    }
    Ok(written)
}
