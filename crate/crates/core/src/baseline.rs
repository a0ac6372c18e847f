//! Frame-level comparison system: the weighted frame cross entropy, the
//! three-condition peak picker, and quantization of picked frames onto the
//! tatum grid.

use alloc::vec::Vec;

use crate::dsp::HOP_SECONDS;
use crate::score::{
    quantize_onsets, DrumScore, Instrument, OnsetAnnotation, ScoreError, TatumGrid,
    NUM_INSTRUMENTS,
};
use crate::tape::{Tape, Var};
use crate::tensor::TensorError;
use crate::train::weighted_bce;

/// Peak-picking parameters; defaults follow the published settings
/// (threshold 0.2, w1 = w3 = w5 = 2, w2 = w4 = 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakPickConfig {
    pub threshold: f64,
    /// Frames before t in the local-max window.
    pub w1: usize,
    /// Frames after t in the local-max window.
    pub w2: usize,
    /// Frames before t in the mean window.
    pub w3: usize,
    /// Frames after t in the mean window.
    pub w4: usize,
    /// Minimum gap to the previously picked onset (strict).
    pub w5: usize,
}

impl Default for PeakPickConfig {
    fn default() -> Self {
        PeakPickConfig {
            threshold: 0.2,
            w1: 2,
            w2: 0,
            w3: 2,
            w4: 0,
            w5: 2,
        }
    }
}

/// Frame-level onset activations in [0,1], K x T row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameActivations {
    values: Vec<f64>,
    num_frames: usize,
}

impl FrameActivations {
    pub fn from_values(values: Vec<f64>, num_frames: usize) -> Self {
        debug_assert_eq!(values.len(), NUM_INSTRUMENTS * num_frames);
        FrameActivations { values, num_frames }
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, instrument: usize, frame: usize) -> f64 {
        self.values[instrument * self.num_frames + frame]
    }

    pub fn row(&self, instrument: usize) -> &[f64] {
        &self.values[instrument * self.num_frames..(instrument + 1) * self.num_frames]
    }
}

/// Frame-level weighted cross entropy against binary frame targets
/// (K x T row-major), with onset frames weighted by `beta`.
pub fn frame_loss(
    tape: &mut Tape,
    activations: Var,
    targets: &[u8],
    beta: f64,
) -> Result<Var, TensorError> {
    let shape = tape.shape(activations).to_vec();
    let numel: usize = shape.iter().product();
    if numel != targets.len() {
        return Err(TensorError::ShapeMismatch {
            op: "frame_loss",
            axis: "target length",
            expected: numel,
            got: targets.len(),
        });
    }
    weighted_bce(tape, activations, targets, beta)
}

/// Picks onset frames per instrument. A frame t is selected iff
///   1. its activation is the maximum of frames [t-w1, t+w2],
///   2. its activation is at least the mean of [t-w3, t+w4] plus the
///      threshold,
///   3. it lies more than w5 frames after the previously selected onset.
/// Windows are inclusive and clipped at the sequence edges; the scan runs
/// left to right with no previous onset initially.
pub fn peak_pick(
    activations: &FrameActivations,
    cfg: &PeakPickConfig,
) -> [Vec<usize>; NUM_INSTRUMENTS] {
    let t_len = activations.num_frames();
    let mut picked: [Vec<usize>; NUM_INSTRUMENTS] = Default::default();
    for k in 0..NUM_INSTRUMENTS {
        let row = activations.row(k);
        let mut prev: Option<usize> = None;
        for t in 0..t_len {
            let lo = t.saturating_sub(cfg.w1);
            let hi = (t + cfg.w2).min(t_len - 1);
            let is_max = row[lo..=hi].iter().all(|&v| row[t] >= v);
            if !is_max {
                continue;
            }
            let mlo = t.saturating_sub(cfg.w3);
            let mhi = (t + cfg.w4).min(t_len - 1);
            let mean = row[mlo..=mhi].iter().sum::<f64>() / (mhi - mlo + 1) as f64;
            if row[t] < mean + cfg.threshold {
                continue;
            }
            if let Some(p) = prev {
                if t - p <= cfg.w5 {
                    continue;
                }
            }
            picked[k].push(t);
            prev = Some(t);
        }
    }
    picked
}

/// Converts picked frame indices to onset times and quantizes them to the
/// nearest tatums; collisions collapse to a single onset.
pub fn frames_to_tatums(
    onsets: &[Vec<usize>; NUM_INSTRUMENTS],
    grid: &TatumGrid,
) -> Result<DrumScore, ScoreError> {
    let mut events = Vec::new();
    for (k, frames) in onsets.iter().enumerate() {
        let instrument = Instrument::from_index(k).expect("k < 3");
        for &frame in frames {
            events.push((instrument, frame as f64 * HOP_SECONDS));
        }
    }
    let annotation = OnsetAnnotation::new(events)?;
    let (score, _) = quantize_onsets(&annotation, grid)?;
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::build_tatum_grid;

    fn acts(rows: [&[f64]; NUM_INSTRUMENTS]) -> FrameActivations {
        let t = rows[0].len();
        let mut values = Vec::with_capacity(NUM_INSTRUMENTS * t);
        for row in rows {
            assert_eq!(row.len(), t);
            values.extend_from_slice(row);
        }
        FrameActivations::from_values(values, t)
    }

    fn single_row(row: &[f64]) -> FrameActivations {
        let zeros = alloc::vec![0.0; row.len()];
        acts([row, &zeros, &zeros])
    }

    #[test]
    fn flat_signal_yields_no_onsets() {
        let a = single_row(&[0.3; 12]);
        let picked = peak_pick(&a, &PeakPickConfig::default());
        assert!(picked[0].is_empty());
    }

    #[test]
    fn single_spike_is_picked_at_its_peak() {
        let a = single_row(&[0.0, 0.0, 1.0, 0.0, 0.0]);
        let picked = peak_pick(&a, &PeakPickConfig::default());
        assert_eq!(picked[0], alloc::vec![2]);
    }

    #[test]
    fn second_spike_two_frames_later_is_suppressed() {
        let a = single_row(&[0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let picked = peak_pick(&a, &PeakPickConfig::default());
        // t = 4 fails the minimum-distance rule (4 - 2 = 2 is not > 2).
        assert_eq!(picked[0], alloc::vec![2]);
        // Three frames apart passes.
        let b = single_row(&[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let picked = peak_pick(&b, &PeakPickConfig::default());
        assert_eq!(picked[0], alloc::vec![2, 5]);
    }

    #[test]
    fn degenerate_zero_windows_select_every_frame() {
        let cfg = PeakPickConfig {
            threshold: 0.0,
            w1: 0,
            w2: 0,
            w3: 0,
            w4: 0,
            w5: 0,
        };
        let a = single_row(&[0.1, 0.9, 0.2, 0.5]);
        let picked = peak_pick(&a, &cfg);
        assert_eq!(picked[0], alloc::vec![0, 1, 2, 3]);
    }

    #[test]
    fn selected_onsets_are_local_maxima_with_gaps() {
        let mut rng = crate::rng::seeded(6);
        let t = 200;
        let row: Vec<f64> = (0..t).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect();
        let a = single_row(&row);
        let cfg = PeakPickConfig::default();
        let picked = peak_pick(&a, &cfg);
        for &p in &picked[0] {
            let lo = p.saturating_sub(cfg.w1);
            let hi = (p + cfg.w2).min(t - 1);
            for q in lo..=hi {
                assert!(row[p] >= row[q]);
            }
        }
        for pair in picked[0].windows(2) {
            assert!(pair[1] - pair[0] > cfg.w5);
        }
    }

    #[test]
    fn instruments_are_picked_independently() {
        let a = acts([
            &[0.0, 0.0, 1.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0, 0.0, 0.0],
            &[0.0; 5],
        ]);
        let picked = peak_pick(&a, &PeakPickConfig::default());
        assert_eq!(picked[0], alloc::vec![2]);
        assert_eq!(picked[1], alloc::vec![1]);
        assert!(picked[2].is_empty());
    }

    #[test]
    fn empty_frame_lists_quantize_to_an_empty_score() {
        let grid = build_tatum_grid(&[0.0, 1.0]).unwrap();
        let onsets: [Vec<usize>; NUM_INSTRUMENTS] = Default::default();
        let score = frames_to_tatums(&onsets, &grid).unwrap();
        assert_eq!(score.onset_count(), 0);
    }

    #[test]
    fn frame_25_lands_on_the_quarter_second_tatum() {
        let grid = build_tatum_grid(&[0.0, 1.0]).unwrap();
        let onsets = [alloc::vec![25usize], Vec::new(), Vec::new()];
        let score = frames_to_tatums(&onsets, &grid).unwrap();
        assert!(score.get(0, 1));
        assert_eq!(score.onset_count(), 1);
    }

    #[test]
    fn colliding_frames_collapse_to_one_onset() {
        let grid = build_tatum_grid(&[0.0, 1.0]).unwrap();
        let onsets = [alloc::vec![24usize, 26], Vec::new(), Vec::new()];
        let score = frames_to_tatums(&onsets, &grid).unwrap();
        assert!(score.get(0, 1));
        assert_eq!(score.onset_count(), 1);
    }
}
