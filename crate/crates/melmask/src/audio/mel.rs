//! Log-mel spectrograms: Hann STFT, HTK triangular filterbank, log floor.
//!
//! Geometry is fixed so that one 3 s segment yields exactly 128 x 96 cells:
//! frame 1024, hop 500, reflect padding, 128 mel bins spanning 0-8000 Hz.
//! 96 frames divide evenly by both patch widths (16 and 2).

use std::sync::Arc;

use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};

use super::{Segment, SEGMENT_SAMPLES};
use crate::error::{Error, Result};

pub const MEL_BINS: usize = 128;
pub const FRAMES: usize = 96;
pub const FRAME_LEN: usize = 1024;
pub const HOP: usize = 500;
pub const FMIN: f64 = 0.0;
pub const FMAX: f64 = 8_000.0;
const LOG_FLOOR: f32 = 1e-5;
const N_BINS: usize = FRAME_LEN / 2 + 1;

/// Fingerprint of the DSP settings baked into this module.
pub const CONFIG_HASH: &str = "mel128x96-16k-hann1024-hop500-htk0to8k-ln1e-5";

/// 128 x 96 grid of log-mel energies, row-major by mel bin.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    values: Vec<f32>,
    pub config_hash: &'static str,
}

impl MelSpectrogram {
    pub fn from_values(values: Vec<f32>) -> Result<Self> {
        if values.len() != MEL_BINS * FRAMES {
            return Err(Error::Shape(format!(
                "mel spectrogram needs {} values, got {}",
                MEL_BINS * FRAMES,
                values.len()
            )));
        }
        Ok(MelSpectrogram {
            values,
            config_hash: CONFIG_HASH,
        })
    }

    pub(super) fn with_values(&self, values: Vec<f32>) -> MelSpectrogram {
        debug_assert_eq!(values.len(), self.values.len());
        MelSpectrogram {
            values,
            config_hash: self.config_hash,
        }
    }

    pub fn mel_bins(&self) -> usize {
        MEL_BINS
    }

    pub fn frames(&self) -> usize {
        FRAMES
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn at(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * FRAMES + frame]
    }
}

/// HTK mel scale: mel(f) = 2595 log10(1 + f/700).
pub fn mel_hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank, peak 1.0, sampled at the FFT bin frequencies.
/// Rows are filters ([`MEL_BINS`] x 513).
pub fn mel_filterbank() -> Vec<Vec<f32>> {
    let mel_lo = mel_hz_to_mel(FMIN);
    let mel_hi = mel_hz_to_mel(FMAX);
    let corners: Vec<f64> = (0..MEL_BINS + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (MEL_BINS + 1) as f64))
        .collect();
    let bin_hz = f64::from(super::SAMPLE_RATE) / FRAME_LEN as f64;
    (0..MEL_BINS)
        .map(|m| {
            let (lo, mid, hi) = (corners[m], corners[m + 1], corners[m + 2]);
            (0..N_BINS)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let rising = (f - lo) / (mid - lo);
                    let falling = (hi - f) / (hi - mid);
                    rising.min(falling).max(0.0) as f32
                })
                .collect()
        })
        .collect()
}

/// Periodic Hann window of [`FRAME_LEN`] samples.
fn hann_window() -> Vec<f32> {
    (0..FRAME_LEN)
        .map(|n| {
            0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / FRAME_LEN as f64).cos()) as f32
        })
        .collect()
}

fn reflect_index(i: isize, len: isize) -> usize {
    let mut i = i;
    // A couple of folds suffice for pad < len, but loop for safety.
    loop {
        if i < 0 {
            i = -i;
        } else if i >= len {
            i = 2 * (len - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Onesided power spectra for all [`FRAMES`] frames of a segment.
fn stft_power(samples: &[f32]) -> Vec<Vec<f32>> {
    thread_local! {
        static PLAN: Arc<dyn Fft<f32>> = FftPlanner::new().plan_fft_forward(FRAME_LEN);
    }
    let window = hann_window();
    let len = samples.len() as isize;
    let half = (FRAME_LEN / 2) as isize;
    PLAN.with(|fft| {
        (0..FRAMES)
            .map(|t| {
                let center = (t * HOP) as isize;
                let mut buf: Vec<Complex32> = (0..FRAME_LEN as isize)
                    .map(|n| {
                        let src = reflect_index(center - half + n, len);
                        Complex32::new(samples[src] * window[n as usize], 0.0)
                    })
                    .collect();
                fft.process(&mut buf);
                buf[..N_BINS].iter().map(|c| c.norm_sqr()).collect()
            })
            .collect()
    })
}

/// Log-mel spectrogram of one 3 s segment: power STFT, mel filterbank,
/// then ln(S + 1e-5). Deterministic: identical input gives identical output.
pub fn mel_spectrogram(segment: &Segment) -> MelSpectrogram {
    debug_assert_eq!(segment.samples().len(), SEGMENT_SAMPLES);
    let power = stft_power(segment.samples());
    let bank = mel_filterbank();
    let mut values = vec![0.0f32; MEL_BINS * FRAMES];
    for (m, filter) in bank.iter().enumerate() {
        for (t, frame) in power.iter().enumerate() {
            let mut acc = 0.0f32;
            for (&w, &p) in filter.iter().zip(frame) {
                if w != 0.0 {
                    acc += w * p;
                }
            }
            values[m * FRAMES + t] = (acc + LOG_FLOOR).ln();
        }
    }
    MelSpectrogram {
        values,
        config_hash: CONFIG_HASH,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;

    fn sine_segment(freq: f64) -> Segment {
        Segment::new(
            (0..SEGMENT_SAMPLES)
                .map(|i| {
                    (2.0 * std::f64::consts::PI * freq * i as f64 / f64::from(SAMPLE_RATE)).sin()
                        as f32
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_segment_is_log_floor_everywhere() {
        let spec = mel_spectrogram(&Segment::new(vec![0.0; SEGMENT_SAMPLES]).unwrap());
        let want = (1e-5f32).ln(); // ~= -11.5129
        assert!((want + 11.512_925).abs() < 1e-4);
        assert!(spec.values().iter().all(|&v| v == want));
    }

    #[test]
    fn shape_is_128_by_96() {
        let spec = mel_spectrogram(&sine_segment(440.0));
        assert_eq!(spec.mel_bins(), 128);
        assert_eq!(spec.frames(), 96);
        assert_eq!(spec.values().len(), 128 * 96);
    }

    #[test]
    fn sine_440_peaks_in_expected_mel_bins() {
        // mel(440) ~= 549.64, filter spacing ~= 22.016 -> center index ~= 24.97
        let spec = mel_spectrogram(&sine_segment(440.0));
        for t in 0..FRAMES {
            let argmax = (0..MEL_BINS)
                .max_by(|&a, &b| spec.at(a, t).total_cmp(&spec.at(b, t)))
                .unwrap();
            assert!(
                (23..=25).contains(&argmax),
                "frame {t}: argmax mel bin {argmax}"
            );
        }
    }

    #[test]
    fn deterministic_bit_identical() {
        let seg = sine_segment(523.25);
        let a = mel_spectrogram(&seg);
        let b = mel_spectrogram(&seg);
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn filterbank_rows_nonnegative_with_positive_sums() {
        let bank = mel_filterbank();
        assert_eq!(bank.len(), MEL_BINS);
        for (m, row) in bank.iter().enumerate() {
            assert_eq!(row.len(), N_BINS);
            assert!(row.iter().all(|&w| w >= 0.0), "filter {m} has negative weight");
            let sum: f32 = row.iter().sum();
            assert!(sum > 0.0, "filter {m} sums to {sum}");
        }
    }

    #[test]
    fn each_fft_bin_covered_by_at_most_two_filters() {
        let bank = mel_filterbank();
        for k in 0..N_BINS {
            let covering = bank.iter().filter(|row| row[k] > 0.0).count();
            assert!(covering <= 2, "bin {k} covered by {covering} filters");
        }
    }

    /// Naive DFT oracle, independent of rustfft.
    fn dft_power_onesided(frame: &[f32]) -> Vec<f64> {
        let n = frame.len();
        (0..n / 2 + 1)
            .map(|k| {
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for (t, &x) in frame.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                    re += f64::from(x) * ang.cos();
                    im += f64::from(x) * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn parseval_sanity_on_one_frame() {
        // Take the product path's power spectrum for an interior frame of a
        // unit sine and compare its total against (a) a naive DFT oracle and
        // (b) the closed form N * sum(w^2) / 2 (two-sided), within 5%.
        let seg = sine_segment(440.0);
        let frames = stft_power(seg.samples());
        let t = 48; // interior frame, boundary padding out of reach
        let product_total_onesided: f64 = frames[t].iter().map(|&p| f64::from(p)).sum();

        // Rebuild the same windowed frame for the oracle.
        let window = hann_window();
        let center = (t * HOP) as isize;
        let half = (FRAME_LEN / 2) as isize;
        let len = seg.samples().len() as isize;
        let frame: Vec<f32> = (0..FRAME_LEN as isize)
            .map(|n| seg.samples()[reflect_index(center - half + n, len)] * window[n as usize])
            .collect();
        let oracle = dft_power_onesided(&frame);
        let oracle_total: f64 = oracle.iter().sum();
        assert!(
            (product_total_onesided - oracle_total).abs() / oracle_total < 1e-3,
            "product {product_total_onesided} vs oracle {oracle_total}"
        );

        // Two-sided expected total: N * sum((w x)^2) ~= N * sum(w^2)/2 for a
        // unit sine. Onesided interior bins carry half of each conjugate pair.
        let sum_w2: f64 = window.iter().map(|&w| f64::from(w) * f64::from(w)).sum();
        let expected_two_sided = FRAME_LEN as f64 * sum_w2 / 2.0;
        let measured_two_sided = 2.0 * oracle_total - oracle[0] - oracle[N_BINS - 1];
        assert!(
            (measured_two_sided - expected_two_sided).abs() / expected_two_sided < 0.05,
            "two-sided {measured_two_sided} vs expected {expected_two_sided}"
        );
    }
}
