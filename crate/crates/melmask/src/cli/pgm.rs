//! Plain (ASCII) PGM images for spectrogram dumps: dependency-free and
//! diffable.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Min-max scale real values to 0..=255 (a constant field maps to 0).
pub fn scale_to_bytes(values: &[f32]) -> Vec<u8> {
    let lo = values.iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = values.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            if span <= 0.0 {
                0u8
            } else {
                (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8
            }
        })
        .collect()
}

/// Write a P2 image; `bytes` is row-major, `height` rows of `width`.
pub fn write_pgm(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    if bytes.len() != width * height {
        return Err(Error::Shape(format!(
            "pgm {}x{} needs {} pixels, got {}",
            width,
            height,
            width * height,
            bytes.len()
        )));
    }
    let mut out = String::with_capacity(bytes.len() * 4 + 32);
    out.push_str(&format!("P2\n{width} {height}\n255\n"));
    for row in bytes.chunks_exact(width) {
        let line: Vec<String> = row.iter().map(|b| b.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Read a P2 image back (test and inspection helper).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = text
        .split_whitespace()
        .filter(|t| !t.starts_with('#'));
    let magic = tokens.next().unwrap_or("");
    if magic != "P2" {
        return Err(Error::CheckpointFormat(format!(
            "{}: not a plain PGM (magic `{magic}`)",
            path.display()
        )));
    }
    let mut next_num = |what: &str| -> Result<usize> {
        tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::CheckpointFormat(format!("{}: bad {what}", path.display())))
    };
    let width = next_num("width")?;
    let height = next_num("height")?;
    let maxval = next_num("maxval")?;
    if maxval != 255 {
        return Err(Error::CheckpointFormat(format!(
            "{}: unsupported maxval {maxval}",
            path.display()
        )));
    }
    let pixels: Vec<u8> = tokens
        .map(|t| {
            t.parse::<u8>().map_err(|_| {
                Error::CheckpointFormat(format!("{}: bad pixel `{t}`", path.display()))
            })
        })
        .collect::<Result<_>>()?;
    if pixels.len() != width * height {
        return Err(Error::CheckpointFormat(format!(
            "{}: {} pixels for {}x{}",
            path.display(),
            pixels.len(),
            width,
            height
        )));
    }
    Ok((width, height, pixels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_scaling() {
        let values = vec![-1.0f32, 0.0, 1.0, 3.0];
        let bytes = scale_to_bytes(&values);
        assert_eq!(bytes, vec![0, 64, 128, 255]);
        let dir = std::env::temp_dir();
        let p = dir.join(format!("melmask_pgm_{}.pgm", std::process::id()));
        write_pgm(&p, 2, 2, &bytes).unwrap();
        let (w, h, px) = read_pgm(&p).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(px, bytes);
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn constant_field_maps_to_zero() {
        assert_eq!(scale_to_bytes(&[2.5; 4]), vec![0, 0, 0, 0]);
    }
}
