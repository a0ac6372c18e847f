//! `evaluate`: tatum-level P/R/F of estimated scores against references,
//! with per-song CSV rows and a micro-averaged corpus summary; also scores
//! beat lists against each other with the 50 ms rule.

use std::path::Path;

use anyhow::anyhow;
use tatumscribe_core::eval::{beat_prf, tatum_prf, TatumPrf, BEAT_TOLERANCE_SECS};

use crate::commands::{corpus_summary, metrics_rows, stem_of};
use crate::config::RunConfig;
use crate::dataset::manifest_dir;
use crate::error::{validation, CliResult};
use crate::formats::{
    ensure_dir, read_beats, read_score, write_metrics_csv, write_summary, Manifest,
};

pub enum Inputs<'a> {
    /// One estimated score JSON against one reference score JSON.
    Files { est: &'a Path, reference: &'a Path },
    /// A directory of `<id>.score.json` estimates against the references
    /// named by a manifest split.
    Dir {
        est_dir: &'a Path,
        manifest: &'a Path,
        split: &'a str,
    },
}

fn compare(est_path: &Path, ref_path: &Path) -> CliResult<TatumPrf> {
    let (est, _) = read_score(est_path)?;
    let (reference, _) = read_score(ref_path)?;
    tatum_prf(&est, &reference).map_err(|e| {
        validation(anyhow!(
            "{} vs {}: {e}",
            est_path.display(),
            ref_path.display()
        ))
    })
}

pub fn run(cfg: &RunConfig, inputs: Inputs, out: Option<&Path>) -> CliResult<()> {
    let per_song: Vec<(String, TatumPrf)> = match &inputs {
        Inputs::Files { est, reference } => {
            vec![(stem_of(est), compare(est, reference)?)]
        }
        Inputs::Dir {
            est_dir,
            manifest,
            split,
        } => {
            let m = Manifest::read(manifest)?;
            let dir = manifest_dir(manifest);
            let songs = m.split(split);
            if songs.is_empty() {
                return Err(validation(anyhow!(
                    "manifest {} has no songs in split {split:?}",
                    manifest.display()
                )));
            }
            let mut rows = Vec::with_capacity(songs.len());
            for song in songs {
                let est_path = est_dir.join(format!("{}.score.json", song.id));
                rows.push((song.id.clone(), compare(&est_path, &dir.join(&song.score))?));
            }
            rows
        }
    };

    for (song, prf) in &per_song {
        println!(
            "{song}: F={:.3} P={:.3} R={:.3}",
            prf.overall.f_measure, prf.overall.precision, prf.overall.recall
        );
    }
    let summary = corpus_summary(&per_song);
    println!(
        "overall F={:.3} P={:.3} R={:.3} over {} songs",
        summary.overall.f_measure,
        summary.overall.precision,
        summary.overall.recall,
        per_song.len()
    );

    if let Some(out) = out {
        ensure_dir(out)?;
        write_metrics_csv(&out.join("metrics.csv"), &metrics_rows(&per_song))?;
        write_summary(&out.join("summary.json"), &summary)?;
        cfg.dump_effective(out)?;
        println!("wrote {}", out.join("metrics.csv").display());
    }
    Ok(())
}

/// Beat-level F-measure with the 50 ms tolerance.
pub fn run_beats(est: &Path, reference: &Path) -> CliResult<()> {
    let est_beats = read_beats(est)?;
    let ref_beats = read_beats(reference)?;
    let prf = beat_prf(&est_beats, &ref_beats, BEAT_TOLERANCE_SECS)
        .map_err(|e| validation(anyhow!("{e}")))?;
    println!(
        "beats F={:.3} P={:.3} R={:.3} ({} estimated, {} reference, {} matched)",
        prf.f_measure, prf.precision, prf.recall, prf.n_estimated, prf.n_ground_truth, prf.n_correct
    );
    Ok(())
}
