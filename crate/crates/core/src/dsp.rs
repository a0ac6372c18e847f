//! Mel-spectrogram front end: 44.1 kHz mono audio through a 2048-point Hann
//! STFT at a 10 ms hop into an 80-band mel filterbank (20 Hz - 20 kHz),
//! compressed with log(1 + x).

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use num_complex::Complex64;

use crate::math;

pub const SAMPLE_RATE: u32 = 44_100;
pub const WINDOW_SIZE: usize = 2048;
pub const HOP_SIZE: usize = 441;
/// 10 ms analysis hop.
pub const HOP_SECONDS: f64 = HOP_SIZE as f64 / SAMPLE_RATE as f64;
pub const NUM_BINS: usize = WINDOW_SIZE / 2 + 1;
pub const MEL_BANDS: usize = 80;
pub const MEL_FMIN_HZ: f64 = 20.0;
pub const MEL_FMAX_HZ: f64 = 20_000.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DspError {
    UnsupportedRate { got: u32 },
    InputTooShort { samples: usize, needed: usize },
}

impl fmt::Display for DspError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DspError::UnsupportedRate { got } => {
                write!(f, "sample rate {got} Hz unsupported, need {SAMPLE_RATE} Hz")
            }
            DspError::InputTooShort { samples, needed } => {
                write!(f, "clip holds {samples} samples, need at least {needed}")
            }
        }
    }
}

impl core::error::Error for DspError {}

/// Mono audio at 44.1 kHz, at least one analysis window long.
#[derive(Debug, Clone)]
pub struct AudioClip {
    samples: Vec<f64>,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate != SAMPLE_RATE {
            return Err(DspError::UnsupportedRate { got: sample_rate });
        }
        if samples.len() < WINDOW_SIZE {
            return Err(DspError::InputTooShort {
                samples: samples.len(),
                needed: WINDOW_SIZE,
            });
        }
        Ok(AudioClip { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn num_frames(&self) -> usize {
        (self.samples.len() - WINDOW_SIZE) / HOP_SIZE + 1
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }
}

/// One-sided complex STFT grid; frame t covers samples [t*441, t*441+2048).
#[derive(Debug, Clone)]
pub struct Stft {
    /// Frame-major storage: frame t occupies bins [t*NUM_BINS, (t+1)*NUM_BINS).
    bins: Vec<Complex64>,
    num_frames: usize,
}

impl Stft {
    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn bin(&self, bin: usize, frame: usize) -> Complex64 {
        self.bins[frame * NUM_BINS + bin]
    }

    pub fn magnitude(&self, bin: usize, frame: usize) -> f64 {
        self.bin(bin, frame).norm()
    }

    pub fn frame(&self, frame: usize) -> &[Complex64] {
        &self.bins[frame * NUM_BINS..(frame + 1) * NUM_BINS]
    }
}

/// Nonnegative 80 x T mel features, band-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    values: Vec<f64>,
    num_frames: usize,
}

impl MelSpectrogram {
    pub fn from_values(values: Vec<f64>, num_frames: usize) -> Self {
        debug_assert_eq!(values.len(), MEL_BANDS * num_frames);
        MelSpectrogram { values, num_frames }
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, band: usize, frame: usize) -> f64 {
        self.values[band * self.num_frames + frame]
    }
}

/// Periodic Hann window of WINDOW_SIZE points.
fn hann_window() -> Vec<f64> {
    (0..WINDOW_SIZE)
        .map(|n| 0.5 * (1.0 - math::cos(2.0 * PI * n as f64 / WINDOW_SIZE as f64)))
        .collect()
}

/// In-place iterative radix-2 Cooley-Tukey FFT. Length must be a power of
/// two; the analysis window is fixed at 2048 so this is always satisfied.
pub(crate) fn fft_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        let wlen = Complex64::new(math::cos(ang), math::sin(ang));
        let mut i = 0;
        while i < n {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let u = buf[i + k];
                let v = buf[i + k + len / 2] * w;
                buf[i + k] = u + v;
                buf[i + k + len / 2] = u - v;
                w *= wlen;
            }
            i += len;
        }
        len <<= 1;
    }
}

/// Short-time Fourier transform with the fixed analysis parameters.
pub fn stft(clip: &AudioClip) -> Stft {
    let window = hann_window();
    let num_frames = clip.num_frames();
    let mut bins = Vec::with_capacity(num_frames * NUM_BINS);
    let mut buf = vec![Complex64::new(0.0, 0.0); WINDOW_SIZE];
    for t in 0..num_frames {
        let start = t * HOP_SIZE;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(clip.samples[start + i] * window[i], 0.0);
        }
        fft_in_place(&mut buf);
        bins.extend_from_slice(&buf[..NUM_BINS]);
    }
    Stft { bins, num_frames }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * math::log10(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (math::powf(10.0, mel / 2595.0) - 1.0)
}

/// 80 x 1025 triangular filterbank. Centers are equally spaced on the mel
/// scale between 20 Hz and 20 kHz; each row is scaled so its peak is exactly
/// one.
pub fn mel_filterbank() -> Vec<f64> {
    let mel_lo = hz_to_mel(MEL_FMIN_HZ);
    let mel_hi = hz_to_mel(MEL_FMAX_HZ);
    let n_points = MEL_BANDS + 2;
    let points_hz: Vec<f64> = (0..n_points)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_points - 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..NUM_BINS)
        .map(|j| j as f64 * SAMPLE_RATE as f64 / WINDOW_SIZE as f64)
        .collect();
    let mut fb = vec![0.0; MEL_BANDS * NUM_BINS];
    for band in 0..MEL_BANDS {
        let (left, center, right) = (points_hz[band], points_hz[band + 1], points_hz[band + 2]);
        let row = &mut fb[band * NUM_BINS..(band + 1) * NUM_BINS];
        for (j, w) in row.iter_mut().enumerate() {
            let f = bin_hz[j];
            if f > left && f <= center {
                *w = (f - left) / (center - left);
            } else if f > center && f < right {
                *w = (right - f) / (right - center);
            }
        }
        let peak = row.iter().cloned().fold(0.0, f64::max);
        if peak > 0.0 {
            for w in row.iter_mut() {
                *w /= peak;
            }
        }
    }
    fb
}

/// Mel spectrogram: log(1 + filterbank * |STFT|).
pub fn mel_spectrogram(clip: &AudioClip) -> MelSpectrogram {
    let spec = stft(clip);
    let fb = mel_filterbank();
    let t_frames = spec.num_frames();
    // Magnitudes once, bin-major, so the filter loop streams over frames.
    let mut mags = vec![0.0; NUM_BINS * t_frames];
    for t in 0..t_frames {
        let frame = spec.frame(t);
        for (bin, c) in frame.iter().enumerate() {
            mags[bin * t_frames + t] = c.norm();
        }
    }
    let mut values = vec![0.0; MEL_BANDS * t_frames];
    for band in 0..MEL_BANDS {
        let row = &fb[band * NUM_BINS..(band + 1) * NUM_BINS];
        let out = &mut values[band * t_frames..(band + 1) * t_frames];
        for (bin, &w) in row.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let src = &mags[bin * t_frames..(bin + 1) * t_frames];
            for (o, m) in out.iter_mut().zip(src) {
                *o += w * m;
            }
        }
        for o in out.iter_mut() {
            *o = math::ln(1.0 + *o);
        }
    }
    MelSpectrogram {
        values,
        num_frames: t_frames,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sine_clip(freq: f64, secs: f64) -> AudioClip {
        let n = (secs * SAMPLE_RATE as f64) as usize;
        let samples: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        AudioClip::new(samples, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn clip_validates_rate_and_length() {
        assert!(matches!(
            AudioClip::new(vec![0.0; 4096], 48_000),
            Err(DspError::UnsupportedRate { got: 48_000 })
        ));
        assert!(matches!(
            AudioClip::new(vec![0.0; 1000], SAMPLE_RATE),
            Err(DspError::InputTooShort { .. })
        ));
    }

    #[test]
    fn frame_count_formula_holds_for_various_lengths() {
        for len in [2048usize, 2049, 2488, 2489, 44100, 44541] {
            let clip = AudioClip::new(vec![0.0; len], SAMPLE_RATE).unwrap();
            assert_eq!(clip.num_frames(), (len - 2048) / 441 + 1, "len {len}");
        }
    }

    #[test]
    fn fft_matches_naive_dft() {
        let mut rng = crate::rng::seeded(4);
        let n = 64;
        let input: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let mut fast = input.clone();
        fft_in_place(&mut fast);
        for k in 0..n {
            let mut slow = Complex64::new(0.0, 0.0);
            for (j, x) in input.iter().enumerate() {
                let ang = -2.0 * PI * (k * j) as f64 / n as f64;
                slow += x * Complex64::new(ang.cos(), ang.sin());
            }
            assert!((fast[k] - slow).norm() < 1e-9, "bin {k}");
        }
    }

    #[test]
    fn zero_clip_gives_zero_magnitudes_and_zero_mel() {
        let clip = AudioClip::new(vec![0.0; SAMPLE_RATE as usize], SAMPLE_RATE).unwrap();
        let spec = stft(&clip);
        for t in 0..spec.num_frames() {
            for b in 0..NUM_BINS {
                assert_eq!(spec.magnitude(b, t), 0.0);
            }
        }
        let mel = mel_spectrogram(&clip);
        assert!(mel.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_at_441_hz_peaks_at_bin_20() {
        // 441 * 2048 / 44100 = 20.48, which rounds to bin 20.
        let clip = sine_clip(441.0, 0.5);
        let spec = stft(&clip);
        for t in 0..spec.num_frames() {
            let argmax = (0..NUM_BINS)
                .max_by(|&a, &b| {
                    spec.magnitude(a, t)
                        .partial_cmp(&spec.magnitude(b, t))
                        .unwrap()
                })
                .unwrap();
            assert_eq!(argmax, 20, "frame {t}");
        }
    }

    #[test]
    fn parseval_identity_holds_per_frame() {
        let mut rng = crate::rng::seeded(8);
        let samples: Vec<f64> = (0..3 * 2048).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let clip = AudioClip::new(samples.clone(), SAMPLE_RATE).unwrap();
        let spec = stft(&clip);
        let window = hann_window();
        for t in 0..spec.num_frames() {
            let time_energy: f64 = (0..WINDOW_SIZE)
                .map(|i| {
                    let w = samples[t * HOP_SIZE + i] * window[i];
                    w * w
                })
                .sum();
            // One-sided spectrum: interior bins appear twice in the full DFT.
            let mut spec_energy = spec.magnitude(0, t).powi(2);
            spec_energy += spec.magnitude(NUM_BINS - 1, t).powi(2);
            for b in 1..NUM_BINS - 1 {
                spec_energy += 2.0 * spec.magnitude(b, t).powi(2);
            }
            spec_energy /= WINDOW_SIZE as f64;
            let rel = (time_energy - spec_energy).abs() / time_energy.max(1e-12);
            assert!(rel < 1e-6, "frame {t}: rel err {rel}");
        }
    }

    #[test]
    fn filterbank_rows_peak_at_exactly_one() {
        let fb = mel_filterbank();
        for band in 0..MEL_BANDS {
            let row = &fb[band * NUM_BINS..(band + 1) * NUM_BINS];
            let peak = row.iter().cloned().fold(0.0, f64::max);
            assert_eq!(peak, 1.0, "band {band}");
            let peaks = row.iter().filter(|&&w| w == 1.0).count();
            assert_eq!(peaks, 1, "band {band} has {peaks} maxima");
            assert!(row.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn filterbank_supports_are_sorted_and_overlap_only_adjacent_rows() {
        let fb = mel_filterbank();
        let support = |band: usize| -> (usize, usize) {
            let row = &fb[band * NUM_BINS..(band + 1) * NUM_BINS];
            let first = row.iter().position(|&w| w > 0.0).unwrap();
            let last = row.iter().rposition(|&w| w > 0.0).unwrap();
            (first, last)
        };
        for band in 0..MEL_BANDS - 1 {
            let (a0, a1) = support(band);
            let (b0, b1) = support(band + 1);
            assert!(a0 <= b0 && a1 <= b1, "band {band} supports out of order");
            if band + 2 < MEL_BANDS {
                let (c0, _) = support(band + 2);
                // Triangles share edges only with immediate neighbours.
                assert!(c0 >= a1, "band {band} overlaps band {}", band + 2);
            }
        }
    }

    #[test]
    fn filterbank_geometry_matches_the_mel_formula() {
        // Rebuild every row from mel(f) = 2595*log10(1 + f/700) evaluated at
        // 82 equally spaced mel points between 20 Hz and 20 kHz, then compare.
        let fb = mel_filterbank();
        let mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
        let hz = |mel: f64| 700.0 * (10.0f64.powf(mel / 2595.0) - 1.0);
        let lo = mel(20.0);
        let hi = mel(20_000.0);
        assert!((hz(lo) - 20.0).abs() < 1e-9);
        assert!((hz(hi) - 20_000.0).abs() < 1e-6);
        let bin_hz = |j: usize| j as f64 * 44_100.0 / 2048.0;
        for band in 0..MEL_BANDS {
            let left = hz(lo + (hi - lo) * band as f64 / 81.0);
            let center = hz(lo + (hi - lo) * (band + 1) as f64 / 81.0);
            let right = hz(lo + (hi - lo) * (band + 2) as f64 / 81.0);
            let mut expect: Vec<f64> = (0..NUM_BINS)
                .map(|j| {
                    let f = bin_hz(j);
                    if f > left && f <= center {
                        (f - left) / (center - left)
                    } else if f > center && f < right {
                        (right - f) / (right - center)
                    } else {
                        0.0
                    }
                })
                .collect();
            let peak = expect.iter().cloned().fold(0.0, f64::max);
            for w in expect.iter_mut() {
                *w /= peak;
            }
            let row = &fb[band * NUM_BINS..(band + 1) * NUM_BINS];
            for (j, (a, b)) in row.iter().zip(&expect).enumerate() {
                assert!((a - b).abs() < 1e-9, "band {band} bin {j}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn mel_spectrogram_matches_naive_triple_loop() {
        let mut rng = crate::rng::seeded(12);
        let samples: Vec<f64> = (0..4 * 2048).map(|_| rng.gen::<f64>() * 0.6 - 0.3).collect();
        let clip = AudioClip::new(samples, SAMPLE_RATE).unwrap();
        let got = mel_spectrogram(&clip);

        let spec = stft(&clip);
        let fb = mel_filterbank();
        for band in 0..MEL_BANDS {
            for t in 0..spec.num_frames() {
                let mut s = 0.0;
                for bin in 0..NUM_BINS {
                    s += fb[band * NUM_BINS + bin] * spec.magnitude(bin, t);
                }
                let expect = (1.0 + s).ln();
                assert!(
                    (got.at(band, t) - expect).abs() < 1e-9,
                    "band {band} frame {t}"
                );
            }
        }
    }

    #[test]
    fn doubling_amplitude_never_decreases_any_cell() {
        let mut rng = crate::rng::seeded(20);
        let samples: Vec<f64> = (0..3 * 2048).map(|_| rng.gen::<f64>() * 0.4 - 0.2).collect();
        let loud: Vec<f64> = samples.iter().map(|s| s * 2.0).collect();
        let quiet = mel_spectrogram(&AudioClip::new(samples, SAMPLE_RATE).unwrap());
        let loud = mel_spectrogram(&AudioClip::new(loud, SAMPLE_RATE).unwrap());
        for (a, b) in loud.values().iter().zip(quiet.values()) {
            assert!(a >= b);
        }
    }

    #[test]
    fn spectrogram_is_deterministic_and_nonnegative() {
        let clip = sine_clip(220.0, 0.2);
        let a = mel_spectrogram(&clip);
        let b = mel_spectrogram(&clip);
        assert_eq!(a, b);
        assert!(a.values().iter().all(|&v| v >= 0.0 && v.is_finite()));
    }
}
