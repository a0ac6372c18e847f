//! Subcommand implementations.

pub mod evaluate;
pub mod lm;
pub mod quantize;
pub mod report;
pub mod synth;
pub mod train;
pub mod transcribe;

use std::path::Path;

use tatumscribe_core::eval::{micro_prf, PrfResult};

use crate::formats::MetricsRow;

/// Per-song, per-instrument rows plus an ALL row, in song order.
pub fn metrics_rows(
    per_song: &[(String, tatumscribe_core::eval::TatumPrf)],
) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    for (song, prf) in per_song {
        for (k, instrument) in tatumscribe_core::Instrument::ALL.iter().enumerate() {
            rows.push(MetricsRow::from_prf(
                song,
                instrument.label(),
                &prf.per_instrument[k],
            ));
        }
        rows.push(MetricsRow::from_prf(song, "ALL", &prf.overall));
    }
    rows
}

/// Micro-averaged corpus summary from per-song results.
pub fn corpus_summary(
    per_song: &[(String, tatumscribe_core::eval::TatumPrf)],
) -> crate::formats::CorpusSummary {
    let collect = |select: &dyn Fn(&tatumscribe_core::eval::TatumPrf) -> PrfResult| {
        micro_prf(per_song.iter().map(|(_, prf)| {
            let p = select(prf);
            (p.n_estimated, p.n_ground_truth, p.n_correct)
        }))
    };
    let overall = collect(&|p| p.overall);
    let bd = collect(&|p| p.per_instrument[0]);
    let sd = collect(&|p| p.per_instrument[1]);
    let hh = collect(&|p| p.per_instrument[2]);
    crate::formats::CorpusSummary {
        n_songs: per_song.len(),
        overall: (&overall).into(),
        bd: (&bd).into(),
        sd: (&sd).into(),
        hh: (&hh).into(),
    }
}

/// File stem for naming outputs after an input file.
pub fn stem_of(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("output")
        .trim_end_matches(".score")
        .to_string()
}
