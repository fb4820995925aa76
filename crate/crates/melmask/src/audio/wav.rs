//! RIFF/WAVE decoding (PCM16 and float32) and small writers for fixtures.

use std::path::Path;

use hound::{SampleFormat, WavSpec};

use super::AudioClip;
use crate::error::{Error, Result};

/// Decode a WAV file to a mono clip. Stereo is averaged channel-wise and
/// 16-bit PCM is scaled by 1/32768, so full-scale positive is 32767/32768.
pub fn decode_wav(path: &Path) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::AudioUnsupported(format!(
            "{}: {} channels (want 1 or 2)",
            path.display(),
            spec.channels
        )));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f32::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(Error::AudioUnsupported(format!(
                "{}: {bits}-bit {fmt:?} (want 16-bit PCM or 32-bit float)",
                path.display()
            )))
        }
    };
    let samples = if spec.channels == 2 {
        interleaved
            .chunks_exact(2)
            .map(|lr| 0.5 * (lr[0] + lr[1]))
            .collect()
    } else {
        interleaved
    };
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::AudioFormat(format!(
            "{}: non-finite sample values",
            path.display()
        )));
    }
    Ok(AudioClip {
        samples,
        sample_rate: spec.sample_rate,
        source_id: path.display().to_string(),
    })
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported => {
            Error::AudioUnsupported(format!("{}: unsupported WAVE encoding", path.display()))
        }
        other => Error::AudioFormat(format!("{}: {other}", path.display())),
    }
}

/// Write mono float32 samples as a WAV file (fixture/synthetic-corpus helper).
pub fn write_wav_f32(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in samples {
        writer.write_sample(s).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

/// Write interleaved PCM16 samples (1 or 2 channels).
pub fn write_wav_pcm16(
    path: &Path,
    interleaved: &[i16],
    channels: u16,
    sample_rate: u32,
) -> Result<()> {
    let spec = WavSpec {
        channels,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in interleaved {
        writer.write_sample(s).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmp(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("melmask_wav_{}_{name}", std::process::id()));
        p
    }

    #[test]
    fn silence_decodes_to_zeros() {
        let p = tmp("silence.wav");
        write_wav_pcm16(&p, &vec![0i16; 16_000], 1, 16_000).unwrap();
        let clip = decode_wav(&p).unwrap();
        assert_eq!(clip.sample_rate, 16_000);
        assert_eq!(clip.samples.len(), 16_000);
        assert!(clip.samples.iter().all(|&s| s == 0.0));
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn stereo_averages_to_mono() {
        let p = tmp("stereo.wav");
        // +0.5 / -0.5 constant channels -> exactly 0 after averaging.
        let l = (0.5f32 * 32768.0) as i16;
        let r = -l;
        let inter: Vec<i16> = (0..1000).flat_map(|_| [l, r]).collect();
        write_wav_pcm16(&p, &inter, 2, 16_000).unwrap();
        let clip = decode_wav(&p).unwrap();
        assert_eq!(clip.samples.len(), 1000);
        assert!(clip.samples.iter().all(|&s| s == 0.0));
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn full_scale_square_wave_scaling() {
        let p = tmp("square.wav");
        let inter: Vec<i16> = (0..100)
            .map(|i| if i % 2 == 0 { 32767 } else { -32767 })
            .collect();
        write_wav_pcm16(&p, &inter, 1, 16_000).unwrap();
        let clip = decode_wav(&p).unwrap();
        let want = 32767.0 / 32768.0;
        for (i, &s) in clip.samples.iter().enumerate() {
            let expect = if i % 2 == 0 { want } else { -want };
            assert_eq!(s, expect);
        }
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn float32_roundtrip() {
        let p = tmp("f32.wav");
        let samples: Vec<f32> = (0..500).map(|i| (i as f32 * 0.01).sin()).collect();
        write_wav_f32(&p, &samples, 44_100).unwrap();
        let clip = decode_wav(&p).unwrap();
        assert_eq!(clip.sample_rate, 44_100);
        assert_eq!(clip.samples, samples);
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn malformed_header_is_format_error() {
        let p = tmp("garbage.wav");
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(b"definitely not a RIFF header").unwrap();
        drop(f);
        let err = decode_wav(&p).unwrap_err();
        assert!(
            matches!(err, Error::AudioFormat(_)),
            "unexpected error: {err}"
        );
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn unsupported_bit_depth_is_unsupported_error() {
        let p = tmp("u8.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 8,
            sample_format: SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(0i8).unwrap();
        }
        w.finalize().unwrap();
        let err = decode_wav(&p).unwrap_err();
        assert!(
            matches!(err, Error::AudioUnsupported(_)),
            "unexpected error: {err}"
        );
        std::fs::remove_file(&p).ok();
    }
}
