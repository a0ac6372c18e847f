//! `transcribe` and `baseline-transcribe`: checkpointed models applied to
//! audio plus beat files, emitting tatum-level score JSONs.

use std::path::Path;

use anyhow::anyhow;
use tatumscribe_core::baseline::{frames_to_tatums, peak_pick, FrameActivations};
use tatumscribe_core::dsp::mel_spectrogram;
use tatumscribe_core::score::build_tatum_grid;
use tatumscribe_core::{FrameCrnn, Transcriber};

use crate::config::RunConfig;
use crate::dataset::manifest_dir;
use crate::error::{runtime, validation, CliResult};
use crate::formats::{ensure_dir, read_beats, read_checkpoint, read_wav, write_score, Manifest};

/// Work list: either one wav+beats pair or a manifest split.
pub enum Inputs<'a> {
    Single { wav: &'a Path, beats: &'a Path },
    Split { manifest: &'a Path, split: &'a str },
}

fn collect_jobs(inputs: &Inputs) -> CliResult<Vec<(String, std::path::PathBuf, std::path::PathBuf)>> {
    match inputs {
        Inputs::Single { wav, beats } => Ok(vec![(
            crate::commands::stem_of(wav),
            wav.to_path_buf(),
            beats.to_path_buf(),
        )]),
        Inputs::Split { manifest, split } => {
            let m = Manifest::read(manifest)?;
            let dir = manifest_dir(manifest);
            let songs = m.split(split);
            if songs.is_empty() {
                return Err(validation(anyhow!(
                    "manifest {} has no songs in split {split:?}",
                    manifest.display()
                )));
            }
            Ok(songs
                .into_iter()
                .map(|s| (s.id.clone(), dir.join(&s.wav), dir.join(&s.beats)))
                .collect())
        }
    }
}

pub fn run(
    cfg: &RunConfig,
    checkpoint: &Path,
    inputs: Inputs,
    out: &Path,
) -> CliResult<()> {
    ensure_dir(out)?;
    let params = read_checkpoint(checkpoint)?;
    let model = Transcriber::from_params(params, cfg.transcriber.dropout_p)
        .or_validation_msg(checkpoint)?;
    let threshold = cfg.train.threshold;
    for (id, wav, beats) in collect_jobs(&inputs)? {
        let clip = read_wav(&wav)?;
        let mel = mel_spectrogram(&clip);
        let grid = build_tatum_grid(&read_beats(&beats)?)
            .map_err(|e| validation(anyhow!("{id}: {e}")))?;
        let (_, score) = model
            .transcribe(&mel, &grid, threshold)
            .map_err(|e| runtime(anyhow!("{id}: {e}")))?;
        let path = out.join(format!("{id}.score.json"));
        write_score(&path, &score, Some(grid.times()))?;
        println!("{id}: {} onsets -> {}", score.onset_count(), path.display());
    }
    cfg.dump_effective(out)?;
    Ok(())
}

pub fn run_baseline(
    cfg: &RunConfig,
    checkpoint: &Path,
    inputs: Inputs,
    out: &Path,
) -> CliResult<()> {
    ensure_dir(out)?;
    let params = read_checkpoint(checkpoint)?;
    let model =
        FrameCrnn::from_params(params, cfg.transcriber.dropout_p).or_validation_msg(checkpoint)?;
    let peak = cfg.peak_pick.to_core();
    for (id, wav, beats) in collect_jobs(&inputs)? {
        let clip = read_wav(&wav)?;
        let mel = mel_spectrogram(&clip);
        let grid = build_tatum_grid(&read_beats(&beats)?)
            .map_err(|e| validation(anyhow!("{id}: {e}")))?;
        let values = model
            .activations(&mel)
            .map_err(|e| runtime(anyhow!("{id}: {e}")))?;
        let acts = FrameActivations::from_values(values, mel.num_frames());
        let picked = peak_pick(&acts, &peak);
        let score = frames_to_tatums(&picked, &grid)
            .map_err(|e| runtime(anyhow!("{id}: {e}")))?;
        let path = out.join(format!("{id}.score.json"));
        write_score(&path, &score, Some(grid.times()))?;
        println!("{id}: {} onsets -> {}", score.onset_count(), path.display());
    }
    cfg.dump_effective(out)?;
    Ok(())
}

trait ValidationMsg<T> {
    fn or_validation_msg(self, path: &Path) -> CliResult<T>;
}

impl<T, E: std::fmt::Display> ValidationMsg<T> for Result<T, E> {
    fn or_validation_msg(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| validation(anyhow!("{}: {e}", path.display())))
    }
}
