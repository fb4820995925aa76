//! Synthetic sine-mixture clips for sweeps, smoke training, and probe tasks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AudioClip, SAMPLE_RATE};

/// Fundamentals for the built-in 4-class frequency task, spaced far apart
/// in mel space.
pub const FREQ_CLASSES: [f64; 4] = [220.0, 392.0, 698.5, 1244.5];

/// One clip: a fundamental plus two harmonics with randomized amplitudes,
/// phases, and a small detune. Distinct `detail_seed`s give distinct clips
/// of the same class.
pub fn sine_mixture_clip(fundamental: f64, seconds: f64, detail_seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(detail_seed);
    let n = (seconds * f64::from(SAMPLE_RATE)) as usize;
    let detune = 1.0 + rng.gen_range(-0.02..0.02);
    let partials: Vec<(f64, f64, f64)> = [1.0, 2.0, 3.0]
        .iter()
        .map(|&mult| {
            (
                fundamental * detune * mult,
                rng.gen_range(0.15..0.5) / mult,
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let samples: Vec<f32> = (0..n)
        .map(|i| {
            let t = i as f64 / f64::from(SAMPLE_RATE);
            partials
                .iter()
                .map(|&(f, a, ph)| a * (std::f64::consts::TAU * f * t + ph).sin())
                .sum::<f64>() as f32
        })
        .collect();
    AudioClip {
        samples,
        sample_rate: SAMPLE_RATE,
        source_id: format!("synth-{fundamental:.1}hz-{detail_seed}"),
    }
}

/// A small corpus of mutually distinct clips cycling through
/// [`FREQ_CLASSES`]. Returns (clip, class index) pairs.
pub fn labeled_corpus(n_clips: usize, seconds: f64, seed: u64) -> Vec<(AudioClip, usize)> {
    (0..n_clips)
        .map(|i| {
            let class = i % FREQ_CLASSES.len();
            let clip = sine_mixture_clip(
                FREQ_CLASSES[class],
                seconds,
                seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            );
            (clip, class)
        })
        .collect()
}

/// Unlabeled variant for pre-training.
pub fn corpus(n_clips: usize, seconds: f64, seed: u64) -> Vec<AudioClip> {
    labeled_corpus(n_clips, seconds, seed)
        .into_iter()
        .map(|(c, _)| c)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clips_are_distinct_and_bounded() {
        let clips = corpus(8, 6.0, 3);
        assert_eq!(clips.len(), 8);
        for c in &clips {
            assert_eq!(c.samples.len(), 96_000);
            assert!(c.samples.iter().all(|s| s.abs() <= 1.0));
        }
        assert_ne!(clips[0].samples, clips[4].samples); // same class, different detail
    }

    #[test]
    fn corpus_is_reproducible() {
        let a = corpus(4, 4.0, 9);
        let b = corpus(4, 4.0, 9);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.samples, y.samples);
        }
    }
}
