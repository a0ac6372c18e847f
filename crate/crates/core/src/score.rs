//! Symbolic drum scores on a quarter-beat (tatum) grid, quantization of
//! frame-level onset annotations, and the conflict/far undetectable-onset
//! statistics.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::dsp::HOP_SECONDS;
use crate::math;

/// Number of transcribed drum instruments (BD, SD, HH).
pub const NUM_INSTRUMENTS: usize = 3;
/// Quarter-beat grid: four tatums per beat.
pub const TATUMS_PER_BEAT: usize = 4;
/// An onset farther than this from every tatum is undetectable ("far").
pub const FAR_TOLERANCE_SECS: f64 = 0.050;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instrument {
    BassDrum,
    SnareDrum,
    HiHat,
}

impl Instrument {
    pub const ALL: [Instrument; NUM_INSTRUMENTS] =
        [Instrument::BassDrum, Instrument::SnareDrum, Instrument::HiHat];

    pub fn index(self) -> usize {
        match self {
            Instrument::BassDrum => 0,
            Instrument::SnareDrum => 1,
            Instrument::HiHat => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Instrument> {
        Instrument::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Instrument::BassDrum => "BD",
            Instrument::SnareDrum => "SD",
            Instrument::HiHat => "HH",
        }
    }

    pub fn from_label(s: &str) -> Option<Instrument> {
        match s {
            "BD" => Some(Instrument::BassDrum),
            "SD" => Some(Instrument::SnareDrum),
            "HH" => Some(Instrument::HiHat),
            _ => None,
        }
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScoreError {
    /// Beat or tatum times must be strictly increasing.
    NotIncreasing { index: usize },
    /// Grid construction needs at least two beats.
    TooFewBeats { got: usize },
    EmptyGrid,
    /// Estimated and reference scores must share a tatum count.
    TatumCountMismatch { left: usize, right: usize },
    /// Annotation carries a non-finite or negative time.
    BadEventTime,
}

impl fmt::Display for ScoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreError::NotIncreasing { index } => {
                write!(f, "times must be strictly increasing (violation at index {index})")
            }
            ScoreError::TooFewBeats { got } => {
                write!(f, "need at least 2 beat times, got {got}")
            }
            ScoreError::EmptyGrid => write!(f, "tatum grid is empty"),
            ScoreError::TatumCountMismatch { left, right } => {
                write!(f, "tatum counts differ: {left} vs {right}")
            }
            ScoreError::BadEventTime => write!(f, "onset times must be finite and nonnegative"),
        }
    }
}

impl core::error::Error for ScoreError {}

/// Binary K x M grid of drum onsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrumScore {
    onsets: Vec<u8>,
    num_tatums: usize,
}

impl DrumScore {
    pub fn empty(num_tatums: usize) -> Self {
        DrumScore {
            onsets: vec![0; NUM_INSTRUMENTS * num_tatums],
            num_tatums,
        }
    }

    /// Builds from K rows of M cells each; nonzero means onset.
    pub fn from_rows(rows: &[Vec<u8>]) -> Option<Self> {
        if rows.len() != NUM_INSTRUMENTS {
            return None;
        }
        let m = rows[0].len();
        if rows.iter().any(|r| r.len() != m) || m == 0 {
            return None;
        }
        let mut onsets = Vec::with_capacity(NUM_INSTRUMENTS * m);
        for row in rows {
            onsets.extend(row.iter().map(|&v| u8::from(v != 0)));
        }
        Some(DrumScore {
            onsets,
            num_tatums: m,
        })
    }

    pub fn num_tatums(&self) -> usize {
        self.num_tatums
    }

    pub fn get(&self, instrument: usize, tatum: usize) -> bool {
        self.onsets[instrument * self.num_tatums + tatum] != 0
    }

    pub fn set(&mut self, instrument: usize, tatum: usize, on: bool) {
        self.onsets[instrument * self.num_tatums + tatum] = u8::from(on);
    }

    pub fn row(&self, instrument: usize) -> &[u8] {
        &self.onsets[instrument * self.num_tatums..(instrument + 1) * self.num_tatums]
    }

    pub fn onset_count(&self) -> usize {
        self.onsets.iter().map(|&v| v as usize).sum()
    }

    /// Cells as 0.0/1.0 in K x M row-major order.
    pub fn as_f64(&self) -> Vec<f64> {
        self.onsets.iter().map(|&v| v as f64).collect()
    }
}

/// Strictly increasing tatum times in seconds on a quarter-beat grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TatumGrid {
    times: Vec<f64>,
}

impl TatumGrid {
    pub fn from_times(times: Vec<f64>) -> Result<Self, ScoreError> {
        if times.is_empty() {
            return Err(ScoreError::EmptyGrid);
        }
        check_increasing(&times)?;
        Ok(TatumGrid { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the tatum nearest to `time`; equidistant times resolve to
    /// the earlier tatum. Also returns the absolute distance.
    pub fn nearest(&self, time: f64) -> (usize, f64) {
        let times = &self.times;
        let split = times.partition_point(|&t| t < time);
        if split == 0 {
            return (0, math::abs(times[0] - time));
        }
        if split == times.len() {
            let i = times.len() - 1;
            return (i, math::abs(time - times[i]));
        }
        let before = split - 1;
        let d_before = time - times[before];
        let d_after = times[split] - time;
        if d_before <= d_after {
            (before, d_before)
        } else {
            (split, d_after)
        }
    }
}

/// Frame-level ground truth: (instrument, time) onset events.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OnsetAnnotation {
    events: Vec<(Instrument, f64)>,
}

impl OnsetAnnotation {
    pub fn new(events: Vec<(Instrument, f64)>) -> Result<Self, ScoreError> {
        if events.iter().any(|&(_, t)| !t.is_finite() || t < 0.0) {
            return Err(ScoreError::BadEventTime);
        }
        Ok(OnsetAnnotation { events })
    }

    pub fn events(&self) -> &[(Instrument, f64)] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Counts of undetectable onsets after quantization. An onset can be both
/// in conflict and far, so the union is at most the sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UndetectableStats {
    pub total_onsets: usize,
    pub conflict: usize,
    pub far: usize,
    pub union: usize,
}

impl UndetectableStats {
    pub fn conflict_ratio(&self) -> f64 {
        ratio(self.conflict, self.total_onsets)
    }

    pub fn far_ratio(&self) -> f64 {
        ratio(self.far, self.total_onsets)
    }

    pub fn union_ratio(&self) -> f64 {
        ratio(self.union, self.total_onsets)
    }
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

fn check_increasing(times: &[f64]) -> Result<(), ScoreError> {
    for (i, pair) in times.windows(2).enumerate() {
        if pair[1] <= pair[0] {
            return Err(ScoreError::NotIncreasing { index: i + 1 });
        }
    }
    Ok(())
}

/// Subdivides each beat interval into four equal tatums and extrapolates
/// four more past the final beat using the last beat period, so M = 4 *
/// number of beats.
pub fn build_tatum_grid(beats: &[f64]) -> Result<TatumGrid, ScoreError> {
    if beats.len() < 2 {
        return Err(ScoreError::TooFewBeats { got: beats.len() });
    }
    check_increasing(beats)?;
    let mut times = Vec::with_capacity(TATUMS_PER_BEAT * beats.len());
    for pair in beats.windows(2) {
        let step = (pair[1] - pair[0]) / TATUMS_PER_BEAT as f64;
        for j in 0..TATUMS_PER_BEAT {
            times.push(pair[0] + j as f64 * step);
        }
    }
    let last = beats[beats.len() - 1];
    let period = last - beats[beats.len() - 2];
    let step = period / TATUMS_PER_BEAT as f64;
    for j in 0..TATUMS_PER_BEAT {
        times.push(last + j as f64 * step);
    }
    TatumGrid::from_times(times)
}

/// Quantizes every onset to its nearest tatum. When several onsets of one
/// instrument land on the same tatum, the one closest in time wins and the
/// rest count as conflicts; onsets farther than 50 ms from every tatum count
/// as far. Both flags can apply to the same onset.
pub fn quantize_onsets(
    ann: &OnsetAnnotation,
    grid: &TatumGrid,
) -> Result<(DrumScore, UndetectableStats), ScoreError> {
    if grid.is_empty() {
        return Err(ScoreError::EmptyGrid);
    }
    let m = grid.len();
    let mut score = DrumScore::empty(m);
    // Per (instrument, tatum): distance of the best onset seen so far.
    let mut best: Vec<Option<f64>> = vec![None; NUM_INSTRUMENTS * m];
    let mut far = 0usize;
    let mut conflict = 0usize;
    let mut union = 0usize;

    for &(instrument, time) in ann.events() {
        let (tatum, dist) = grid.nearest(time);
        let is_far = dist > FAR_TOLERANCE_SECS;
        if is_far {
            far += 1;
        }
        let slot = &mut best[instrument.index() * m + tatum];
        let is_conflict = match slot {
            None => {
                *slot = Some(dist);
                false
            }
            Some(existing) => {
                // Keep whichever onset sits closest to the tatum.
                if dist < *existing {
                    *existing = dist;
                }
                conflict += 1;
                true
            }
        };
        if is_far || is_conflict {
            union += 1;
        }
        score.set(instrument.index(), tatum, true);
    }

    Ok((
        score,
        UndetectableStats {
            total_onsets: ann.len(),
            conflict,
            far,
            union,
        },
    ))
}

/// Projects tatum onsets onto the 10 ms frame grid: tatum m activates frame
/// round(b_m / hop). Tatums past the frame horizon are dropped; the second
/// return value counts them.
pub fn score_to_frames(score: &DrumScore, grid: &TatumGrid, num_frames: usize) -> (Vec<u8>, usize) {
    debug_assert_eq!(score.num_tatums(), grid.len());
    let mut frames = vec![0u8; NUM_INSTRUMENTS * num_frames];
    let mut clipped = 0usize;
    for (m, &time) in grid.times().iter().enumerate() {
        let frame = math::round(time / HOP_SECONDS) as usize;
        for k in 0..NUM_INSTRUMENTS {
            if !score.get(k, m) {
                continue;
            }
            if frame >= num_frames {
                clipped += 1;
            } else {
                frames[k * num_frames + frame] = 1;
            }
        }
    }
    (frames, clipped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(events: &[(Instrument, f64)]) -> OnsetAnnotation {
        OnsetAnnotation::new(events.to_vec()).unwrap()
    }

    #[test]
    fn uniform_beats_subdivide_into_quarter_steps() {
        let grid = build_tatum_grid(&[0.0, 1.0]).unwrap();
        let expect = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75];
        assert_eq!(grid.times().len(), expect.len());
        for (a, b) in grid.times().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn varying_beat_periods_interpolate_piecewise() {
        let grid = build_tatum_grid(&[0.0, 0.5, 1.5]).unwrap();
        let expect = [
            0.0, 0.125, 0.25, 0.375, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.25,
        ];
        assert_eq!(grid.times().len(), expect.len());
        for (a, b) in grid.times().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_interval_grid_has_constant_spacing() {
        let grid = build_tatum_grid(&[2.0, 2.6]).unwrap();
        let diffs: Vec<f64> = grid.times().windows(2).map(|w| w[1] - w[0]).collect();
        for d in &diffs {
            assert!((d - 0.15).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_rejects_non_increasing_beats() {
        assert!(matches!(
            build_tatum_grid(&[0.0, 1.0, 1.0]),
            Err(ScoreError::NotIncreasing { index: 2 })
        ));
        assert!(matches!(
            build_tatum_grid(&[0.5]),
            Err(ScoreError::TooFewBeats { got: 1 })
        ));
    }

    #[test]
    fn exact_alignment_quantizes_without_losses() {
        let grid = build_tatum_grid(&[0.0, 1.0]).unwrap();
        let events = ann(&[
            (Instrument::BassDrum, 0.0),
            (Instrument::SnareDrum, 0.5),
            (Instrument::HiHat, 1.25),
        ]);
        let (score, stats) = quantize_onsets(&events, &grid).unwrap();
        assert!(score.get(0, 0));
        assert!(score.get(1, 2));
        assert!(score.get(2, 5));
        assert_eq!(score.onset_count(), 3);
        assert_eq!(stats.conflict, 0);
        assert_eq!(stats.far, 0);
        assert_eq!(stats.union, 0);
        assert_eq!(stats.union_ratio(), 0.0);
    }

    #[test]
    fn same_tatum_collisions_count_as_conflicts_and_keep_the_closest() {
        let grid = TatumGrid::from_times(vec![0.0, 0.25, 0.5, 0.75]).unwrap();
        let events = ann(&[
            (Instrument::BassDrum, 0.26),
            (Instrument::BassDrum, 0.27),
        ]);
        let (score, stats) = quantize_onsets(&events, &grid).unwrap();
        assert!(score.get(0, 1));
        assert_eq!(score.onset_count(), 1);
        assert_eq!(stats.conflict, 1);
        assert_eq!(stats.far, 0);
        assert_eq!(stats.union, 1);
    }

    #[test]
    fn distant_onsets_count_as_far() {
        let grid = TatumGrid::from_times(vec![0.0, 1.0]).unwrap();
        let events = ann(&[(Instrument::SnareDrum, 0.40)]);
        let (score, stats) = quantize_onsets(&events, &grid).unwrap();
        assert_eq!(stats.far, 1);
        assert_eq!(stats.conflict, 0);
        assert_eq!(stats.union, 1);
        // The cell is still set at the nearest tatum; far is a statistic.
        assert!(score.get(1, 0));
    }

    #[test]
    fn equidistant_onsets_go_to_the_earlier_tatum() {
        let grid = TatumGrid::from_times(vec![0.0, 0.2]).unwrap();
        let (idx, dist) = grid.nearest(0.1);
        assert_eq!(idx, 0);
        assert!((dist - 0.1).abs() < 1e-15);
    }

    #[test]
    fn quantization_is_idempotent_on_grid_aligned_scores() {
        let grid = build_tatum_grid(&[0.0, 0.5, 1.0, 1.5]).unwrap();
        let mut events = Vec::new();
        for (m, &t) in grid.times().iter().enumerate() {
            if m % 3 == 0 {
                events.push((Instrument::HiHat, t));
            }
        }
        let events = ann(&events);
        let (score1, stats1) = quantize_onsets(&events, &grid).unwrap();
        assert_eq!(stats1.union, 0);
        // Re-quantize the score's own tatum times: nothing changes.
        let mut events2 = Vec::new();
        for m in 0..score1.num_tatums() {
            if score1.get(2, m) {
                events2.push((Instrument::HiHat, grid.times()[m]));
            }
        }
        let (score2, stats2) = quantize_onsets(&ann(&events2), &grid).unwrap();
        assert_eq!(score1, score2);
        assert_eq!(stats2.conflict, 0);
        assert_eq!(stats2.far, 0);
    }

    #[test]
    fn never_more_onsets_than_events_per_instrument() {
        let grid = build_tatum_grid(&[0.0, 0.4, 0.8]).unwrap();
        let events = ann(&[
            (Instrument::BassDrum, 0.01),
            (Instrument::BassDrum, 0.012),
            (Instrument::BassDrum, 0.41),
            (Instrument::SnareDrum, 0.2),
        ]);
        let (score, _) = quantize_onsets(&events, &grid).unwrap();
        let bd: usize = score.row(0).iter().map(|&v| v as usize).sum();
        let sd: usize = score.row(1).iter().map(|&v| v as usize).sum();
        assert!(bd <= 3);
        assert!(sd <= 1);
    }

    #[test]
    fn empty_score_projects_to_zero_frames() {
        let grid = build_tatum_grid(&[0.0, 1.0]).unwrap();
        let score = DrumScore::empty(grid.len());
        let (frames, clipped) = score_to_frames(&score, &grid, 200);
        assert!(frames.iter().all(|&v| v == 0));
        assert_eq!(clipped, 0);
    }

    #[test]
    fn tatum_at_quarter_second_hits_frame_25() {
        let grid = build_tatum_grid(&[0.0, 1.0]).unwrap();
        let mut score = DrumScore::empty(grid.len());
        score.set(0, 1, true); // tatum time 0.25 s
        let (frames, _) = score_to_frames(&score, &grid, 200);
        assert_eq!(frames[25], 1);
        assert_eq!(frames.iter().map(|&v| v as usize).sum::<usize>(), 1);
    }

    #[test]
    fn frames_beyond_horizon_are_clipped_and_counted() {
        let grid = build_tatum_grid(&[0.0, 1.0]).unwrap();
        let mut score = DrumScore::empty(grid.len());
        score.set(0, 0, true);
        score.set(1, 7, true); // tatum at 1.75 s -> frame 175
        let (frames, clipped) = score_to_frames(&score, &grid, 100);
        assert_eq!(clipped, 1);
        assert_eq!(frames.iter().map(|&v| v as usize).sum::<usize>(), 1);
    }

    #[test]
    fn frames_roundtrip_back_to_the_same_score_when_spacing_exceeds_20ms() {
        // 0.25 s tatum spacing is far above the 20 ms limit.
        let grid = build_tatum_grid(&[0.0, 1.0, 2.0]).unwrap();
        let mut score = DrumScore::empty(grid.len());
        for (k, m) in [(0usize, 0usize), (0, 4), (1, 2), (1, 6), (2, 1), (2, 11)] {
            score.set(k, m, true);
        }
        let (frames, clipped) = score_to_frames(&score, &grid, 300);
        assert_eq!(clipped, 0);
        let mut events = Vec::new();
        for k in 0..NUM_INSTRUMENTS {
            for t in 0..300 {
                if frames[k * 300 + t] != 0 {
                    events.push((Instrument::from_index(k).unwrap(), t as f64 * HOP_SECONDS));
                }
            }
        }
        let (back, stats) = quantize_onsets(&ann(&events), &grid).unwrap();
        assert_eq!(back, score);
        assert_eq!(stats.union, 0);
    }
}
