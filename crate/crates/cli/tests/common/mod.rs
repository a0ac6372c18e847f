//! Shared helpers for the integration and acceptance suites.

use tatumscribe_core::dsp::mel_spectrogram;
use tatumscribe_core::eval::{micro_prf, tatum_prf};
use tatumscribe_core::score::build_tatum_grid;
use tatumscribe_core::synth::{render, sample_score, PatternTemplate, RenderSpec, RenderedSong};
use tatumscribe_core::train::TrainItem;
use tatumscribe_core::{DrumScore, Transcriber};

pub fn template(bars: usize, variation: f64, offbeat: bool) -> PatternTemplate {
    let base = if offbeat {
        PatternTemplate::offbeat(bars)
    } else {
        PatternTemplate::rock(bars)
    };
    PatternTemplate {
        variation_rate: variation,
        fill_bar_period: Some(4),
        ..base
    }
}

pub struct CorpusSpec {
    pub bars: usize,
    pub variation: f64,
    pub noise_floor: f64,
    pub hh_gain: f64,
}

pub fn synth_song(spec: &CorpusSpec, index: usize, seed0: u64) -> (DrumScore, RenderedSong) {
    let t = template(spec.bars, spec.variation, index % 2 == 1);
    let score = sample_score(&t, seed0 + index as u64);
    let mut render_spec = RenderSpec {
        tempo_bpm: 150.0 + 35.0 * ((index * 7919 % 100) as f64 / 100.0),
        noise_floor: spec.noise_floor,
        seed: seed0 + 500 + index as u64,
        ..RenderSpec::default()
    };
    render_spec.recipes[2].gain = spec.hh_gain;
    let song = render(&score, &render_spec).expect("template bars are beat-aligned");
    (score, song)
}

pub fn synth_items(spec: &CorpusSpec, n: usize, seed0: u64) -> Vec<TrainItem> {
    (0..n)
        .map(|i| {
            let (score, song) = synth_song(spec, i, seed0);
            TrainItem {
                mel: mel_spectrogram(&song.clip),
                grid: build_tatum_grid(&song.beats).expect("beats increase"),
                score,
            }
        })
        .collect()
}

pub fn held_out_f(model: &Transcriber, items: &[TrainItem], threshold: f64) -> f64 {
    micro_prf(items.iter().map(|item| {
        let (_, est) = model
            .transcribe(&item.mel, &item.grid, threshold)
            .expect("inference succeeds");
        let prf = tatum_prf(&est, &item.score).expect("grids aligned");
        (
            prf.overall.n_estimated,
            prf.overall.n_ground_truth,
            prf.overall.n_correct,
        )
    }))
    .f_measure
}
