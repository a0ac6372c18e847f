//! `quantize`: frame-level onset annotations onto a tatum grid, reporting
//! the conflict/far undetectable-onset ratios.

use std::path::Path;

use anyhow::anyhow;
use serde::Serialize;
use tatumscribe_core::score::{build_tatum_grid, quantize_onsets};

use crate::config::RunConfig;
use crate::error::{validation, CliResult, Context};
use crate::formats::{ensure_dir, read_annotation, read_beats, write_score};

#[derive(Serialize)]
struct StatsFile {
    total_onsets: usize,
    conflict: usize,
    far: usize,
    union: usize,
    conflict_ratio: f64,
    far_ratio: f64,
    union_ratio: f64,
}

pub fn run(cfg: &RunConfig, annotation: &Path, beats: &Path, out: &Path) -> CliResult<()> {
    ensure_dir(out)?;
    let events = read_annotation(annotation)?;
    let grid = build_tatum_grid(&read_beats(beats)?)
        .map_err(|e| validation(anyhow!("{}: {e}", beats.display())))?;
    let (score, stats) =
        quantize_onsets(&events, &grid).map_err(|e| validation(anyhow!("{e}")))?;
    let score_path = out.join("score.json");
    write_score(&score_path, &score, Some(grid.times()))?;

    let stats_file = StatsFile {
        total_onsets: stats.total_onsets,
        conflict: stats.conflict,
        far: stats.far,
        union: stats.union,
        conflict_ratio: stats.conflict_ratio(),
        far_ratio: stats.far_ratio(),
        union_ratio: stats.union_ratio(),
    };
    let stats_path = out.join("stats.json");
    std::fs::write(
        &stats_path,
        serde_json::to_string_pretty(&stats_file).expect("stats serialize"),
    )
    .or_runtime(&format!("cannot write {}", stats_path.display()))?;
    cfg.dump_effective(out)?;

    println!(
        "quantized {} onsets onto {} tatums: conflict {:.2}% far {:.2}% union {:.2}%",
        stats.total_onsets,
        grid.len(),
        100.0 * stats.conflict_ratio(),
        100.0 * stats.far_ratio(),
        100.0 * stats.union_ratio()
    );
    println!("wrote {}", score_path.display());
    Ok(())
}
