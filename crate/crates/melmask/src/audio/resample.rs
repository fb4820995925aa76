//! Band-limited sample-rate conversion with a windowed-sinc kernel.

use super::AudioClip;
use crate::error::{Error, Result};

/// Half-width of the sinc kernel in source samples (at the cutoff rate).
const KERNEL_HALF_WIDTH: usize = 32;

/// Resample to `target_rate` with windowed-sinc interpolation. Downsampling
/// lowers the kernel cutoff to the target Nyquist, which is the anti-alias
/// filter. Output length is round(len * target / src).
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if clip.sample_rate == 0 || target_rate == 0 {
        return Err(Error::Parameter("sample rates must be positive".into()));
    }
    if clip.sample_rate == target_rate {
        return Ok(clip.clone());
    }
    let src_rate = f64::from(clip.sample_rate);
    let dst_rate = f64::from(target_rate);
    let ratio = dst_rate / src_rate;
    let out_len = (clip.samples.len() as f64 * ratio).round() as usize;

    // cutoff <= 1.0 in units of the source Nyquist frequency
    let cutoff = ratio.min(1.0);
    let half_width = (KERNEL_HALF_WIDTH as f64 / cutoff).ceil() as isize;

    let src = &clip.samples;
    let n = src.len() as isize;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let center = i as f64 / ratio;
        let k0 = center.floor() as isize - half_width + 1;
        let k1 = center.floor() as isize + half_width;
        let mut acc = 0.0f64;
        for k in k0..=k1 {
            if k < 0 || k >= n {
                continue;
            }
            let x = center - k as f64;
            acc += f64::from(src[k as usize]) * kernel(x, cutoff, half_width as f64);
        }
        out.push(acc as f32);
    }
    Ok(AudioClip {
        samples: out,
        sample_rate: target_rate,
        source_id: clip.source_id.clone(),
    })
}

/// Blackman-windowed sinc, scaled by the cutoff so the passband gain is 1.
fn kernel(x: f64, cutoff: f64, half_width: f64) -> f64 {
    if x.abs() >= half_width {
        return 0.0;
    }
    let s = sinc(cutoff * x) * cutoff;
    let t = x / half_width; // in [-1, 1)
    let w = 0.42 + 0.5 * (std::f64::consts::PI * t).cos()
        + 0.08 * (2.0 * std::f64::consts::PI * t).cos();
    s * w
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;

    fn sine_clip(freq: f64, rate: u32, seconds: f64) -> AudioClip {
        let n = (seconds * f64::from(rate)) as usize;
        AudioClip {
            samples: (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / f64::from(rate)).sin()
                    as f32)
                .collect(),
            sample_rate: rate,
            source_id: "sine".into(),
        }
    }

    #[test]
    fn identity_rate_returns_identical_samples() {
        let c = sine_clip(440.0, SAMPLE_RATE, 0.5);
        let r = resample(&c, SAMPLE_RATE).unwrap();
        assert_eq!(r.samples, c.samples);
    }

    #[test]
    fn length_arithmetic_32k_to_16k() {
        let c = sine_clip(440.0, 32_000, 1.0);
        let r = resample(&c, 16_000).unwrap();
        assert_eq!(r.samples.len(), 16_000);
    }

    /// Independent radix-2 FFT used only as a test oracle.
    fn fft_mag(signal: &[f32]) -> Vec<f64> {
        let n = signal.len().next_power_of_two();
        let mut re: Vec<f64> = signal.iter().map(|&x| f64::from(x)).collect();
        re.resize(n, 0.0);
        let mut im = vec![0.0f64; n];
        // bit reversal
        let mut j = 0usize;
        for i in 1..n {
            let mut bit = n >> 1;
            while j & bit != 0 {
                j ^= bit;
                bit >>= 1;
            }
            j |= bit;
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let ang = -2.0 * std::f64::consts::PI / len as f64;
            for start in (0..n).step_by(len) {
                for k in 0..len / 2 {
                    let w_re = (ang * k as f64).cos();
                    let w_im = (ang * k as f64).sin();
                    let (a, b) = (start + k, start + k + len / 2);
                    let t_re = re[b] * w_re - im[b] * w_im;
                    let t_im = re[b] * w_im + im[b] * w_re;
                    re[b] = re[a] - t_re;
                    im[b] = im[a] - t_im;
                    re[a] += t_re;
                    im[a] += t_im;
                }
            }
            len <<= 1;
        }
        (0..n / 2)
            .map(|i| (re[i] * re[i] + im[i] * im[i]).sqrt())
            .collect()
    }

    #[test]
    fn downsampled_sine_keeps_its_peak_bin() {
        let c = sine_clip(440.0, 44_100, 1.0);
        let r = resample(&c, 16_000).unwrap();
        assert_eq!(r.samples.len(), 16_000);
        let mags = fft_mag(&r.samples);
        let n_fft = r.samples.len().next_power_of_two(); // 16384
        let peak = mags
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let bin_hz = 16_000.0 / n_fft as f64;
        let expected_bin = (440.0 / bin_hz).round() as usize;
        assert!(
            peak.abs_diff(expected_bin) <= 1,
            "peak at bin {peak} ({:.1} Hz), expected ~{expected_bin}",
            peak as f64 * bin_hz
        );
    }

    #[test]
    fn upsampling_preserves_tone() {
        let c = sine_clip(440.0, 16_000, 0.5);
        let r = resample(&c, 32_000).unwrap();
        assert_eq!(r.samples.len(), 16_000);
        let mags = fft_mag(&r.samples);
        let n_fft = r.samples.len().next_power_of_two();
        let peak = mags
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let bin_hz = 32_000.0 / n_fft as f64;
        let expected_bin = (440.0 / bin_hz).round() as usize;
        assert!(peak.abs_diff(expected_bin) <= 1);
    }
}
