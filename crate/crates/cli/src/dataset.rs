//! Synthetic dataset generation (paired audio + beats + annotations +
//! scores with a train/val/test manifest) and loading manifests back into
//! training items.

use std::path::Path;

use anyhow::anyhow;
use rand::seq::SliceRandom;
use rand::Rng;
use tatumscribe_core::dsp::mel_spectrogram;
use tatumscribe_core::rng;
use tatumscribe_core::score::build_tatum_grid;
use tatumscribe_core::synth::{render, sample_score, PatternTemplate, RenderSpec, RenderedSong};
use tatumscribe_core::train::TrainItem;
use tatumscribe_core::DrumScore;

use crate::config::SynthSection;
use crate::error::{validation, CliResult};
use crate::formats::{
    ensure_dir, read_beats, read_score, read_wav, write_annotation, write_beats, write_score,
    write_wav, Manifest, ManifestSong,
};

/// One generated song before anything is written.
pub struct GeneratedSong {
    pub id: String,
    pub score: DrumScore,
    pub song: RenderedSong,
}

/// Deterministically generates `n_songs` from alternating templates with
/// per-song tempos drawn from the configured range.
pub fn generate_songs(cfg: &SynthSection, seed: u64) -> CliResult<Vec<GeneratedSong>> {
    if cfg.n_songs < 3 {
        return Err(validation(anyhow!(
            "need at least 3 songs for a train/val/test split, got {}",
            cfg.n_songs
        )));
    }
    if cfg.tempo_min <= 0.0 || cfg.tempo_max < cfg.tempo_min {
        return Err(validation(anyhow!(
            "bad tempo range {}..{}",
            cfg.tempo_min,
            cfg.tempo_max
        )));
    }
    let templates = [
        PatternTemplate {
            bars: cfg.bars,
            variation_rate: cfg.variation_rate,
            fill_bar_period: cfg.fill_bar_period,
            ..PatternTemplate::rock(cfg.bars)
        },
        PatternTemplate {
            bars: cfg.bars,
            variation_rate: cfg.variation_rate,
            fill_bar_period: cfg.fill_bar_period,
            ..PatternTemplate::offbeat(cfg.bars)
        },
    ];
    let mut tempo_rand = rng::stream(seed, 10);
    let mut songs = Vec::with_capacity(cfg.n_songs);
    for i in 0..cfg.n_songs {
        let template = &templates[i % templates.len()];
        let score = sample_score(template, seed.wrapping_add(i as u64));
        let tempo = cfg.tempo_min + (cfg.tempo_max - cfg.tempo_min) * tempo_rand.gen::<f64>();
        let spec = RenderSpec {
            tempo_bpm: tempo,
            noise_floor: cfg.noise_floor,
            seed: seed.wrapping_add(1000 + i as u64),
            ..RenderSpec::default()
        };
        let song = render(&score, &spec)
            .map_err(|e| validation(anyhow!("song {i}: {e}")))?;
        songs.push(GeneratedSong {
            id: format!("s{i:03}"),
            score,
            song,
        });
    }
    Ok(songs)
}

/// Deterministic 70/15/15 split by shuffled index; every split gets at
/// least one song.
pub fn assign_splits(n: usize, seed: u64) -> Vec<&'static str> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 11));
    let n_val = (n * 15 / 100).max(1);
    let n_test = (n * 15 / 100).max(1);
    let mut splits = vec!["train"; n];
    for &idx in order.iter().take(n_val) {
        splits[idx] = "val";
    }
    for &idx in order.iter().skip(n_val).take(n_test) {
        splits[idx] = "test";
    }
    splits
}

/// Writes WAV/beats/annotation/score files plus the manifest under `out`.
pub fn write_dataset(out: &Path, songs: &[GeneratedSong], seed: u64) -> CliResult<Manifest> {
    ensure_dir(out)?;
    let songs_dir = out.join("songs");
    ensure_dir(&songs_dir)?;
    let splits = assign_splits(songs.len(), seed);
    let mut entries = Vec::with_capacity(songs.len());
    for (generated, split) in songs.iter().zip(splits) {
        let id = &generated.id;
        let wav_rel = format!("songs/{id}.wav");
        let beats_rel = format!("songs/{id}.beats.txt");
        let ann_rel = format!("songs/{id}.ann.txt");
        let score_rel = format!("songs/{id}.score.json");
        write_wav(&out.join(&wav_rel), &generated.song.clip)?;
        write_beats(&out.join(&beats_rel), &generated.song.beats)?;
        write_annotation(&out.join(&ann_rel), &generated.song.annotation)?;
        let grid = build_tatum_grid(&generated.song.beats)
            .map_err(|e| validation(anyhow!("song {id}: {e}")))?;
        write_score(&out.join(&score_rel), &generated.score, Some(grid.times()))?;
        entries.push(ManifestSong {
            id: id.clone(),
            wav: wav_rel,
            beats: beats_rel,
            annotation: ann_rel,
            score: score_rel,
            split: split.to_string(),
        });
    }
    let manifest = Manifest { songs: entries };
    manifest.write(&out.join("manifest.json"))?;
    Ok(manifest)
}

/// Loads one manifest song into a training item: WAV through the mel front
/// end, beats into a tatum grid, and the score as the target.
pub fn load_item(manifest_dir: &Path, song: &ManifestSong) -> CliResult<TrainItem> {
    let clip = read_wav(&manifest_dir.join(&song.wav))?;
    let mel = mel_spectrogram(&clip);
    let beats = read_beats(&manifest_dir.join(&song.beats))?;
    let grid = build_tatum_grid(&beats)
        .map_err(|e| validation(anyhow!("song {}: {e}", song.id)))?;
    let (score, _) = read_score(&manifest_dir.join(&song.score))?;
    Ok(TrainItem { mel, grid, score })
}

/// Loads every song of a split, sorted by id.
pub fn load_split(
    manifest_path: &Path,
    manifest: &Manifest,
    split: &str,
) -> CliResult<Vec<(String, TrainItem)>> {
    let dir = manifest_dir(manifest_path);
    let songs = manifest.split(split);
    if songs.is_empty() {
        return Err(validation(anyhow!(
            "manifest {} has no songs in split {split:?}",
            manifest_path.display()
        )));
    }
    songs
        .into_iter()
        .map(|s| Ok((s.id.clone(), load_item(&dir, s)?)))
        .collect()
}

pub fn manifest_dir(manifest_path: &Path) -> std::path::PathBuf {
    manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| std::path::PathBuf::from("."))
}
