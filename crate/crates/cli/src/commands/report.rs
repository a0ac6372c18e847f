//! `report`: side-by-side comparison table of metric CSVs from the four
//! system variants, micro-averaged from raw counts.

use std::path::Path;

use anyhow::anyhow;
use tatumscribe_core::eval::{micro_prf, PrfResult};

use crate::error::{validation, CliResult, Context};
use crate::formats::{ensure_dir, read_metrics_csv, MetricsRow};

/// Recomputes corpus P/R/F from the per-song ALL rows' raw counts.
fn micro_from_rows(rows: &[MetricsRow], path: &Path) -> CliResult<PrfResult> {
    let all: Vec<&MetricsRow> = rows.iter().filter(|r| r.instrument == "ALL").collect();
    if all.is_empty() {
        return Err(validation(anyhow!(
            "{}: no ALL rows to aggregate",
            path.display()
        )));
    }
    Ok(micro_prf(all.iter().map(|r| {
        (r.n_estimated, r.n_ground_truth, r.n_correct)
    })))
}

pub struct ReportInputs<'a> {
    pub baseline: Option<&'a Path>,
    pub plain: Option<&'a Path>,
    pub bigram: Option<&'a Path>,
    pub gru: Option<&'a Path>,
}

pub fn run(inputs: ReportInputs, out: Option<&Path>) -> CliResult<()> {
    let rows: Vec<(&str, Option<&Path>)> = vec![
        ("baseline CRNN", inputs.baseline),
        ("CRNN", inputs.plain),
        ("+Bi-gram", inputs.bigram),
        ("+GRU", inputs.gru),
    ];
    if rows.iter().all(|(_, p)| p.is_none()) {
        return Err(validation(anyhow!(
            "pass at least one of --baseline, --plain, --bigram, --gru"
        )));
    }
    let mut table = String::new();
    table.push_str(&format!("{:<16}{:>8}{:>8}{:>8}\n", "method", "F", "P", "R"));
    for (label, path) in rows {
        let Some(path) = path else { continue };
        let metrics = read_metrics_csv(path)?;
        let prf = micro_from_rows(&metrics, path)?;
        table.push_str(&format!(
            "{:<16}{:>8.1}{:>8.1}{:>8.1}\n",
            label,
            100.0 * prf.f_measure,
            100.0 * prf.precision,
            100.0 * prf.recall
        ));
    }
    print!("{table}");
    if let Some(out) = out {
        ensure_dir(out)?;
        let path = out.join("report.txt");
        std::fs::write(&path, &table).or_runtime(&format!("cannot write {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
