//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "DSGS"
//! version      u32
//! config       u32 input_channels, 4×u32 stage_widths, u32 blocks_per_stage, u32 out_channels
//! entry_count  u32
//! entries      u32 name_len, name (UTF-8), u32 rank, rank×u32 dims, u64 payload byte offset
//! payload_len  u64
//! payload      f32 values, little-endian
//! crc32        u32 (IEEE) over the payload bytes
//! ```
//!
//! Entries cover trainable parameters followed by BN running statistics.

use std::fs;
use std::path::Path;

use super::{Dsgsn, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DSGS";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn save_checkpoint(model: &Dsgsn, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(model);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode(model: &Dsgsn) -> Vec<u8> {
    let put_u32 = |buf: &mut Vec<u8>, v: usize| buf.extend_from_slice(&(v as u32).to_le_bytes());
    let mut header = Vec::new();
    header.extend_from_slice(&CHECKPOINT_MAGIC);
    header.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let c = model.config();
    put_u32(&mut header, c.input_channels);
    for w in c.stage_widths {
        put_u32(&mut header, w);
    }
    put_u32(&mut header, c.blocks_per_stage);
    put_u32(&mut header, c.out_channels);

    let state: Vec<_> = model.state().collect();
    put_u32(&mut header, state.len());
    let mut payload = Vec::new();
    for (name, t) in &state {
        put_u32(&mut header, name.len());
        header.extend_from_slice(name.as_bytes());
        put_u32(&mut header, t.shape().len());
        for &d in t.shape() {
            put_u32(&mut header, d);
        }
        header.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        for v in t.data().iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    header.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    let crc = crc32fast::hash(&payload);
    header.extend_from_slice(&payload);
    header.extend_from_slice(&crc.to_le_bytes());
    header
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Malformed(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        self.u32().map(|v| v as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

struct Decoded<'a> {
    config: ModelConfig,
    entries: Vec<Entry>,
    payload: &'a [u8],
}

fn decode(bytes: &[u8]) -> Result<Decoded<'_>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = match bytes.get(..4) {
        Some(m) => m.try_into().unwrap(),
        None => return Err(Error::Malformed("file shorter than the magic".into())),
    };
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    r.take(4)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let config = ModelConfig {
        input_channels: r.usize()?,
        stage_widths: [r.usize()?, r.usize()?, r.usize()?, r.usize()?],
        blocks_per_stage: r.usize()?,
        out_channels: r.usize()?,
    };
    let count = r.usize()?;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.usize()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Malformed("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.usize()?;
        let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let offset = r.u64()? as usize;
        entries.push(Entry { name, shape, offset });
    }
    let payload_len = r.u64()? as usize;
    let payload = r.take(payload_len)?;
    let stored = r.u32()?;
    if r.pos != bytes.len() {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after CRC",
            bytes.len() - r.pos
        )));
    }
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::CrcMismatch { stored, computed });
    }
    for e in &entries {
        let n: usize = e.shape.iter().product();
        if e.offset % 4 != 0 || e.offset + 4 * n > payload.len() {
            return Err(Error::Malformed(format!("entry `{}` lies outside the payload", e.name)));
        }
    }
    Ok(Decoded {
        config,
        entries,
        payload,
    })
}

/// Model configuration echoed in a checkpoint header.
pub fn read_checkpoint_config(path: impl AsRef<Path>) -> Result<ModelConfig> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?.config)
}

/// Loads a checkpoint into a network built from `config`; with `None` the
/// configuration stored in the file is used. Every state tensor of the
/// network must be present with a matching shape.
pub fn load_checkpoint(path: impl AsRef<Path>, config: Option<&ModelConfig>) -> Result<Dsgsn> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = decode(&bytes)?;
    let config = config.unwrap_or(&decoded.config);
    let model = Dsgsn::zeroed(config)?;
    for (name, t) in model.state() {
        let entry = decoded
            .entries
            .iter()
            .find(|e| &e.name == name)
            .ok_or_else(|| Error::MissingParam(name.clone()))?;
        if entry.shape != t.shape() {
            return Err(Error::ParamShapeMismatch {
                name: name.clone(),
                expected: t.shape().to_vec(),
                found: entry.shape.clone(),
            });
        }
        let raw = &decoded.payload[entry.offset..entry.offset + 4 * t.numel()];
        let mut data = t.data_mut();
        for (v, b) in data.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().unwrap());
        }
    }
    Ok(model)
}
