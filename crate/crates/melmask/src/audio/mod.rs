//! Audio decoding, resampling, segment selection, and log-mel spectrograms.
//!
//! All operations are pure given their inputs; random streams are owned by
//! the caller, so everything here is safe to run from parallel workers.

mod mel;
mod resample;
pub mod synth;
mod wav;

pub use mel::{mel_filterbank, mel_hz_to_mel, mel_spectrogram, MelSpectrogram};
pub use resample::resample;
pub use wav::{decode_wav, write_wav_f32, write_wav_pcm16};

use crate::error::{Error, Result};
use rand::Rng;

/// Working sample rate for the whole pipeline.
pub const SAMPLE_RATE: u32 = 16_000;
/// Analysis segment length in seconds.
pub const SEGMENT_SECONDS: f64 = 3.0;
/// Samples per segment at [`SAMPLE_RATE`].
pub const SEGMENT_SAMPLES: usize = 48_000;

/// Decoded mono audio, samples in [-1, 1].
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl AudioClip {
    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Exactly three seconds of 16 kHz audio.
#[derive(Debug, Clone)]
pub struct Segment {
    samples: Vec<f32>,
}

impl Segment {
    pub fn new(samples: Vec<f32>) -> Result<Self> {
        if samples.len() != SEGMENT_SAMPLES {
            return Err(Error::Contract(format!(
                "segment needs {} samples, got {}",
                SEGMENT_SAMPLES,
                samples.len()
            )));
        }
        Ok(Segment { samples })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }
}

/// Draw two 3 s segments with independent uniform start offsets; overlap is
/// allowed. Clips shorter than one segment are rejected so the caller can
/// skip them.
pub fn select_segments(clip: &AudioClip, rng: &mut impl Rng) -> Result<(Segment, Segment)> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(Error::Contract(format!(
            "select_segments wants {} Hz, got {}",
            SAMPLE_RATE, clip.sample_rate
        )));
    }
    if clip.samples.len() < SEGMENT_SAMPLES {
        return Err(Error::ClipTooShort {
            have_samples: clip.samples.len(),
            rate: clip.sample_rate,
            need_samples: SEGMENT_SAMPLES,
        });
    }
    let max_start = clip.samples.len() - SEGMENT_SAMPLES;
    let s1 = rng.gen_range(0..=max_start);
    let s2 = rng.gen_range(0..=max_start);
    Ok((
        Segment::new(clip.samples[s1..s1 + SEGMENT_SAMPLES].to_vec())?,
        Segment::new(clip.samples[s2..s2 + SEGMENT_SAMPLES].to_vec())?,
    ))
}

/// Shift and scale all cells to mean 0, population std 1 (std floored at
/// 1e-6, so a constant spectrogram maps to all zeros).
pub fn standardize(spec: &MelSpectrogram) -> MelSpectrogram {
    let values = spec.values();
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|&v| {
            let d = f64::from(v) - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = var.sqrt().max(1e-6);
    let out: Vec<f32> = values
        .iter()
        .map(|&v| ((f64::from(v) - mean) / std) as f32)
        .collect();
    spec.with_values(out)
}
