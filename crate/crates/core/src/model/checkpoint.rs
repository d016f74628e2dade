//! Checkpoint container.
//!
//! ```text
//! "MNETCKPT" | version u32 | dtype len u8 + tag | step u64
//! | config len u64 + canonical JSON | param count u64
//! | per param (sorted by path): path len u32 + path | rank u8 | dims u64… | data (LE)
//! ```
//!
//! All integers are little-endian. Identical parameters give identical bytes.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use mnet_tensor::{Scalar, Tensor};

use super::{MNet, MNetConfig};
use crate::error::{data, Error, Result};
use crate::nn::Params;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MNETCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn canonical_json(cfg: &MNetConfig) -> Result<String> {
    // `Value` objects keep keys sorted, which makes the text canonical.
    let value = serde_json::to_value(cfg).map_err(|e| data(e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| data(e.to_string()))
}

pub fn write_checkpoint<S: Scalar>(model: &MNet<S>, step: u64) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.write_u32::<LittleEndian>(CHECKPOINT_VERSION).unwrap();
    out.write_u8(S::DTYPE.len() as u8).unwrap();
    out.extend_from_slice(S::DTYPE.as_bytes());
    out.write_u64::<LittleEndian>(step).unwrap();
    let json = canonical_json(&model.config)?;
    out.write_u64::<LittleEndian>(json.len() as u64).unwrap();
    out.extend_from_slice(json.as_bytes());
    let mut params = model.named_params();
    params.sort_by(|a, b| a.0.cmp(&b.0));
    out.write_u64::<LittleEndian>(params.len() as u64).unwrap();
    for (path, t) in &params {
        out.write_u32::<LittleEndian>(path.len() as u32).unwrap();
        out.extend_from_slice(path.as_bytes());
        out.write_u8(t.rank() as u8).unwrap();
        for &d in t.shape() {
            out.write_u64::<LittleEndian>(d as u64).unwrap();
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

fn truncated(e: std::io::Error) -> Error {
    data(format!("checkpoint truncated: {e}"))
}

/// Parses a checkpoint written in the same precision `S`.
pub fn read_checkpoint<S: Scalar>(bytes: &[u8]) -> Result<(MNet<S>, u64)> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(data("not a checkpoint (bad magic)"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(data(format!("unsupported checkpoint version {version}")));
    }
    let mut tag = vec![0u8; r.read_u8().map_err(truncated)? as usize];
    r.read_exact(&mut tag).map_err(truncated)?;
    if tag != S::DTYPE.as_bytes() {
        return Err(data(format!(
            "checkpoint holds {} parameters, expected {}",
            String::from_utf8_lossy(&tag),
            S::DTYPE
        )));
    }
    let step = r.read_u64::<LittleEndian>().map_err(truncated)?;
    let mut json = vec![0u8; r.read_u64::<LittleEndian>().map_err(truncated)? as usize];
    r.read_exact(&mut json).map_err(truncated)?;
    let cfg: MNetConfig =
        serde_json::from_slice(&json).map_err(|e| data(format!("checkpoint config: {e}")))?;
    let mut model = MNet::<S>::new(&cfg, 0)?;
    let mut slots = Vec::new();
    model.params_mut("", &mut slots);
    slots.sort_by(|a, b| a.0.cmp(&b.0));
    let count = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
    if count != slots.len() {
        return Err(data(format!(
            "checkpoint has {count} parameters, configuration expects {}",
            slots.len()
        )));
    }
    for (path, slot) in slots {
        let mut name = vec![0u8; r.read_u32::<LittleEndian>().map_err(truncated)? as usize];
        r.read_exact(&mut name).map_err(truncated)?;
        if name != path.as_bytes() {
            return Err(data(format!(
                "checkpoint parameter `{}` where `{path}` was expected",
                String::from_utf8_lossy(&name)
            )));
        }
        let rank = r.read_u8().map_err(truncated)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u64::<LittleEndian>().map_err(truncated)? as usize);
        }
        if shape != slot.shape() {
            return Err(data(format!(
                "parameter `{path}` has shape {shape:?}, expected {:?}",
                slot.shape()
            )));
        }
        let mut buf = vec![0u8; slot.numel() * S::BYTES];
        r.read_exact(&mut buf).map_err(truncated)?;
        let values = buf.chunks_exact(S::BYTES).map(S::read_le).collect();
        *slot = Tensor::from_vec(&shape, values)?;
    }
    if (r.position() as usize) != bytes.len() {
        return Err(data("trailing bytes after checkpoint payload"));
    }
    Ok((model, step))
}

pub fn save_checkpoint<S: Scalar>(model: &MNet<S>, step: u64, path: &Path) -> Result<()> {
    let bytes = write_checkpoint(model, step)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(MNet<S>, u64)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
