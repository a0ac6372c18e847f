//! Precision/recall/F-measure for tatum-level scores and beat sequences.

use core::fmt;

use crate::math;
use crate::score::{DrumScore, NUM_INSTRUMENTS};

/// Matching tolerance for beat evaluation.
pub const BEAT_TOLERANCE_SECS: f64 = 0.050;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalError {
    /// Estimated and reference grids must be aligned.
    TatumCountMismatch { estimated: usize, reference: usize },
    /// Beat lists must be sorted ascending.
    Unsorted { index: usize },
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::TatumCountMismatch { estimated, reference } => {
                write!(f, "tatum counts differ: estimated {estimated}, reference {reference}")
            }
            EvalError::Unsorted { index } => {
                write!(f, "times must be sorted ascending (violation at index {index})")
            }
        }
    }
}

impl core::error::Error for EvalError {}

/// Counts plus the derived precision/recall/F. Zero denominators follow the
/// convention P = 0 when nothing was estimated, R = 0 when nothing was
/// expected, F = 0 when P + R = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrfResult {
    pub n_estimated: usize,
    pub n_ground_truth: usize,
    pub n_correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl PrfResult {
    pub fn from_counts(n_estimated: usize, n_ground_truth: usize, n_correct: usize) -> Self {
        debug_assert!(n_correct <= n_estimated.max(n_ground_truth));
        let precision = if n_estimated == 0 {
            0.0
        } else {
            n_correct as f64 / n_estimated as f64
        };
        let recall = if n_ground_truth == 0 {
            0.0
        } else {
            n_correct as f64 / n_ground_truth as f64
        };
        let f_measure = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * recall * precision / (recall + precision)
        };
        PrfResult {
            n_estimated,
            n_ground_truth,
            n_correct,
            precision,
            recall,
            f_measure,
        }
    }
}

/// Per-instrument and overall tatum scores; the overall row sums counts
/// across instruments (micro average).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TatumPrf {
    pub overall: PrfResult,
    pub per_instrument: [PrfResult; NUM_INSTRUMENTS],
}

/// Cell-exact comparison of two aligned scores: a correct detection is an
/// onset present in both at the same (instrument, tatum).
pub fn tatum_prf(estimated: &DrumScore, reference: &DrumScore) -> Result<TatumPrf, EvalError> {
    if estimated.num_tatums() != reference.num_tatums() {
        return Err(EvalError::TatumCountMismatch {
            estimated: estimated.num_tatums(),
            reference: reference.num_tatums(),
        });
    }
    let mut per = [PrfResult::from_counts(0, 0, 0); NUM_INSTRUMENTS];
    let (mut te, mut tg, mut tc) = (0usize, 0usize, 0usize);
    for k in 0..NUM_INSTRUMENTS {
        let (mut ne, mut ng, mut nc) = (0usize, 0usize, 0usize);
        for m in 0..estimated.num_tatums() {
            let e = estimated.get(k, m);
            let g = reference.get(k, m);
            ne += usize::from(e);
            ng += usize::from(g);
            nc += usize::from(e && g);
        }
        per[k] = PrfResult::from_counts(ne, ng, nc);
        te += ne;
        tg += ng;
        tc += nc;
    }
    Ok(TatumPrf {
        overall: PrfResult::from_counts(te, tg, tc),
        per_instrument: per,
    })
}

/// Greedy one-to-one beat matching in time order: each estimated beat takes
/// the nearest still-unmatched reference beat within the tolerance.
pub fn beat_prf(estimated: &[f64], reference: &[f64], tolerance: f64) -> Result<PrfResult, EvalError> {
    check_sorted(estimated)?;
    check_sorted(reference)?;
    let mut used = alloc::vec![false; reference.len()];
    let mut correct = 0usize;
    for &e in estimated {
        let split = reference.partition_point(|&t| t < e);
        let mut best: Option<(usize, f64)> = None;
        // Nearest unmatched neighbour on either side.
        let mut left = split;
        while left > 0 {
            left -= 1;
            if !used[left] {
                best = Some((left, math::abs(e - reference[left])));
                break;
            }
        }
        let mut right = split;
        while right < reference.len() {
            if !used[right] {
                let d = math::abs(reference[right] - e);
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((right, d));
                }
                break;
            }
            right += 1;
        }
        if let Some((idx, d)) = best {
            if d <= tolerance {
                used[idx] = true;
                correct += 1;
            }
        }
    }
    Ok(PrfResult::from_counts(
        estimated.len(),
        reference.len(),
        correct,
    ))
}

fn check_sorted(times: &[f64]) -> Result<(), EvalError> {
    for (i, pair) in times.windows(2).enumerate() {
        if pair[1] < pair[0] {
            return Err(EvalError::Unsorted { index: i + 1 });
        }
    }
    Ok(())
}

/// Micro average: sums counts before deriving P/R/F.
pub fn micro_prf<I: IntoIterator<Item = (usize, usize, usize)>>(counts: I) -> PrfResult {
    let (mut ne, mut ng, mut nc) = (0usize, 0usize, 0usize);
    for (e, g, c) in counts {
        ne += e;
        ng += g;
        nc += c;
    }
    PrfResult::from_counts(ne, ng, nc)
}
