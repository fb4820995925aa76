//! Binary container for checkpoints and feature files.
//!
//! Layout (all integers little-endian):
//!   magic "MYNA" | u32 version=1 | u32 config length + UTF-8 config text |
//!   u32 tensor count | per tensor: u32 name length + name, u8 dtype (0=f32),
//!   u8 rank, rank x u64 dims, row-major f32 payload | u32 CRC32 of all
//!   preceding bytes.
//!
//! Writes go to a sibling temp file and are renamed into place.

use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::{ParamStore, Tensor};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::trainer::adam::AdamState;

pub const MAGIC: [u8; 4] = *b"MYNA";
pub const VERSION: u32 = 1;

/// CRC32 (IEEE 802.3, reflected) over a byte stream.
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, entry) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *entry = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ u32::from(b)) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

/// Serialize a container into bytes.
pub fn encode(config_text: &str, tensors: &[(String, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = config_text.as_bytes();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        let nb = name.as_bytes();
        out.extend_from_slice(&(nb.len() as u32).to_le_bytes());
        out.extend_from_slice(nb);
        out.push(0); // dtype f32
        out.push(tensor.rank() as u8);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CheckpointCorrupt(format!(
                "truncated: wanted {} bytes at offset {}, file has {}",
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

/// Parse a container, verifying magic, version, and CRC.
pub fn decode(bytes: &[u8]) -> Result<(String, Vec<(String, Tensor)>)> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::CheckpointFormat("bad magic".into()));
    }
    if bytes.len() < 8 {
        return Err(Error::CheckpointCorrupt("truncated header".into()));
    }
    let body_len = bytes.len() - 4;
    let stored_crc = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let computed = crc32(&bytes[..body_len]);
    if stored_crc != computed {
        return Err(Error::CheckpointCorrupt(format!(
            "CRC mismatch: stored {stored_crc:#010x}, computed {computed:#010x}"
        )));
    }
    let mut c = Cursor {
        bytes: &bytes[..body_len],
        pos: 4,
    };
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointFormat(format!(
            "unsupported version {version} (this build reads {VERSION})"
        )));
    }
    let cfg_len = c.u32()? as usize;
    let config_text = String::from_utf8(c.take(cfg_len)?.to_vec())
        .map_err(|_| Error::CheckpointFormat("config blob is not UTF-8".into()))?;
    let count = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| Error::CheckpointFormat("tensor name is not UTF-8".into()))?;
        let dtype = c.u8()?;
        if dtype != 0 {
            return Err(Error::CheckpointFormat(format!(
                "tensor `{name}`: unknown dtype tag {dtype}"
            )));
        }
        let rank = c.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = c.take(numel * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::from_vec(shape, data)?));
    }
    if c.pos != body_len {
        return Err(Error::CheckpointFormat(format!(
            "{} trailing bytes after tensor table",
            body_len - c.pos
        )));
    }
    Ok((config_text, tensors))
}

/// Atomic container write (temp file + rename).
pub fn write_container(path: &Path, config_text: &str, tensors: &[(String, &Tensor)]) -> Result<()> {
    let bytes = encode(config_text, tensors);
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path) -> Result<(String, Vec<(String, Tensor)>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// A full training snapshot: configuration, parameters, optimizer moments,
/// and the step counter (the seed lives in the config text).
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: ParamStore,
    pub adam: AdamState,
    pub step: u64,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut config = ckpt.config.clone();
    config.state.step = ckpt.step;
    let mut tensors: Vec<(String, &Tensor)> = Vec::new();
    for (name, tensor) in ckpt.params.iter() {
        tensors.push((name.to_string(), tensor));
    }
    for id in ckpt.params.ids() {
        tensors.push((
            format!("opt.m.{}", ckpt.params.name(id)),
            &ckpt.adam.m[id.index()],
        ));
        tensors.push((
            format!("opt.v.{}", ckpt.params.name(id)),
            &ckpt.adam.v[id.index()],
        ));
    }
    let t = Tensor::scalar(ckpt.adam.t as f32);
    tensors.push(("opt.t".to_string(), &t));
    write_container(path, &config.to_canonical_text(), &tensors)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let (config_text, tensors) = read_container(path)?;
    let config = RunConfig::parse_str(&config_text)?;
    config.validate()?;
    let model_cfg = config.model_config()?;
    let mut params = crate::vit::init_params(&model_cfg, config.train.seed)?;
    let mut adam = AdamState::new(&params);
    let mut seen = 0usize;
    for (name, tensor) in &tensors {
        if let Some(rest) = name.strip_prefix("opt.m.") {
            let id = params.id(rest).ok_or_else(|| {
                Error::CheckpointFormat(format!("moment for unknown parameter `{rest}`"))
            })?;
            check_shape(name, &adam.m[id.index()], tensor)?;
            adam.m[id.index()] = tensor.clone();
        } else if let Some(rest) = name.strip_prefix("opt.v.") {
            let id = params.id(rest).ok_or_else(|| {
                Error::CheckpointFormat(format!("moment for unknown parameter `{rest}`"))
            })?;
            check_shape(name, &adam.v[id.index()], tensor)?;
            adam.v[id.index()] = tensor.clone();
        } else if name == "opt.t" {
            adam.t = tensor.item() as u64;
        } else {
            let id = params.id(name).ok_or_else(|| {
                Error::CheckpointFormat(format!(
                    "tensor `{name}` does not belong to the configured model"
                ))
            })?;
            check_shape(name, params.value(id), tensor)?;
            *params.value_mut(id) = tensor.clone();
            seen += 1;
        }
    }
    if seen != params.len() {
        return Err(Error::CheckpointFormat(format!(
            "checkpoint holds {seen} of {} model tensors",
            params.len()
        )));
    }
    Ok(Checkpoint {
        step: config.state.step,
        config,
        params,
        adam,
    })
}

fn check_shape(name: &str, expected: &Tensor, got: &Tensor) -> Result<()> {
    if expected.shape() != got.shape() {
        return Err(Error::CheckpointFormat(format!(
            "tensor `{name}`: shape {:?} does not match configured {:?}",
            got.shape(),
            expected.shape()
        )));
    }
    Ok(())
}
