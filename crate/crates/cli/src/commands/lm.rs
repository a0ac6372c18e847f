//! `train-lm` and `eval-lm`: pretraining and perplexity evaluation of the
//! symbolic language models.

use std::path::Path;

use anyhow::anyhow;
use tatumscribe_core::lm::{train_gru_lm, BigramLm, LanguageModel};
use tatumscribe_core::DrumScore;

use crate::config::RunConfig;
use crate::error::{runtime, validation, CliResult};
use crate::formats::{
    ensure_dir, list_score_files, read_language_model, read_score, write_bigram, write_checkpoint,
    Manifest,
};

/// A symbolic corpus source: either a directory of score JSONs or a
/// manifest (with a split filter).
pub fn load_scores(path: &Path, split: Option<&str>) -> CliResult<Vec<(String, DrumScore)>> {
    if path.is_dir() {
        let files = list_score_files(path)?;
        let mut scores = Vec::with_capacity(files.len());
        for f in files {
            let (score, _) = read_score(&f)?;
            scores.push((crate::commands::stem_of(&f), score));
        }
        Ok(scores)
    } else {
        let manifest = Manifest::read(path)?;
        let dir = crate::dataset::manifest_dir(path);
        let songs = match split {
            Some(s) => manifest.split(s),
            None => {
                let mut all: Vec<_> = manifest.songs.iter().collect();
                all.sort_by(|a, b| a.id.cmp(&b.id));
                all
            }
        };
        if songs.is_empty() {
            return Err(validation(anyhow!(
                "no scores selected from {}",
                path.display()
            )));
        }
        let mut scores = Vec::with_capacity(songs.len());
        for song in songs {
            let (score, _) = read_score(&dir.join(&song.score))?;
            scores.push((song.id.clone(), score));
        }
        Ok(scores)
    }
}

pub fn train(
    cfg: &RunConfig,
    kind: &str,
    scores_path: &Path,
    split: Option<&str>,
    seed: u64,
    out: &Path,
) -> CliResult<()> {
    ensure_dir(out)?;
    let corpus = load_scores(scores_path, split)?;
    let scores: Vec<DrumScore> = corpus.into_iter().map(|(_, s)| s).collect();
    match kind {
        "bigram" => {
            let model = BigramLm::train(&scores).map_err(runtime)?;
            let path = out.join("bigram.json");
            write_bigram(&path, &model)?;
            report_perplexity(&LanguageModel::Bigram(model), &scores);
            println!("wrote {}", path.display());
        }
        "gru" => {
            let lm_cfg = cfg.lm.to_core(seed);
            let (model, epoch_nll) = train_gru_lm(&scores, &lm_cfg).map_err(runtime)?;
            if let (Some(first), Some(last)) = (epoch_nll.first(), epoch_nll.last()) {
                log::info!("gru lm nll: epoch 1 {first:.3} -> epoch {} {last:.3}", epoch_nll.len());
            }
            let path = out.join("gru-lm.tscb");
            write_checkpoint(&path, model.params())?;
            report_perplexity(&LanguageModel::Gru(model), &scores);
            println!("wrote {}", path.display());
        }
        other => {
            return Err(validation(anyhow!(
                "unknown language model kind {other:?} (expected bigram or gru)"
            )));
        }
    }
    cfg.dump_effective(out)?;
    Ok(())
}

fn report_perplexity(model: &LanguageModel, scores: &[DrumScore]) {
    let mut total = 0.0;
    let mut counted = 0usize;
    for score in scores {
        if let Ok(s) = model.nll(score) {
            total += s.perplexity;
            counted += 1;
        }
    }
    if counted > 0 {
        println!(
            "training-corpus perplexity: {:.3} over {counted} scores",
            total / counted as f64
        );
    }
}

pub fn eval(model_path: &Path, scores_path: &Path, split: Option<&str>) -> CliResult<()> {
    let model = read_language_model(model_path)?;
    let corpus = load_scores(scores_path, split)?;
    let mut total = 0.0;
    for (id, score) in &corpus {
        let s = model
            .nll(score)
            .map_err(|e| validation(anyhow!("{id}: {e}")))?;
        println!("{id} perplexity={:.3}", s.perplexity);
        total += s.perplexity;
    }
    println!(
        "mean perplexity={:.3} over {} scores ({} model)",
        total / corpus.len() as f64,
        corpus.len(),
        model.kind()
    );
    Ok(())
}
