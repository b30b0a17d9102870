//! Binary checkpoint container.
//!
//! Layout: magic `MVKS`, u32 version, u32 tensor count, then per tensor
//! { u16 name length, UTF-8 name, u8 rank, rank×u32 dims, row-major
//! little-endian floats }, and a trailing u32 CRC-32 over all preceding
//! bytes. Version 1 stores 32-bit floats and is the interchange format for
//! model weights; version 2 stores 64-bit floats and is used internally for
//! exact training-state resume. All integers are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::write_atomic;
use crate::tensor::{ParamSet, Tensor};

pub const MAGIC: [u8; 4] = *b"MVKS";
pub const VERSION_F32: u32 = 1;
pub const VERSION_F64: u32 = 2;

/// Serialize named tensors. The map's lexicographic order makes the byte
/// stream deterministic.
pub fn encode(map: &BTreeMap<String, Tensor>, version: u32) -> Result<Vec<u8>> {
    if version != VERSION_F32 && version != VERSION_F64 {
        return Err(Error::Format(format!("cannot write version {version}")));
    }
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(map.len() as u32).to_le_bytes());
    for (name, t) in map {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Format(format!("tensor name '{name}' too long")));
        }
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        let shape = t.shape();
        if shape.len() > u8::MAX as usize {
            return Err(Error::Format(format!("tensor '{name}' rank {} too large", shape.len())));
        }
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match version {
            VERSION_F32 => {
                for v in t.data() {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
            _ => {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Parse a checkpoint byte stream. Returns the version and the tensors
/// (gradient-free leaves).
pub fn decode(bytes: &[u8]) -> Result<(u32, BTreeMap<String, Tensor>)> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic (not a checkpoint file)".into()));
    }
    if bytes.len() < 16 {
        return Err(Error::Format("CRC mismatch (file truncated)".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(body) != stored_crc {
        return Err(Error::Format("CRC mismatch (file corrupt or truncated)".into()));
    }
    let mut pos = 4usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > body.len() {
            return Err(Error::Format("unexpected end of checkpoint body".into()));
        }
        let s = &body[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION_F32 && version != VERSION_F64 {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    let mut map = BTreeMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match version {
            VERSION_F32 => take(&mut pos, 4 * n)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            _ => take(&mut pos, 8 * n)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        if map.insert(name.clone(), Tensor::new(&shape, data)?).is_some() {
            return Err(Error::Format(format!("duplicate tensor '{name}'")));
        }
    }
    if pos != body.len() {
        return Err(Error::Format("trailing bytes after last tensor".into()));
    }
    Ok((version, map))
}

/// Write model parameters as a version-1 (32-bit) checkpoint.
pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<()> {
    let map: BTreeMap<String, Tensor> = params
        .iter()
        .map(|(n, t)| (n.clone(), t.detach()))
        .collect();
    write_atomic(path, &encode(&map, VERSION_F32)?)
}

/// Load a version-1 checkpoint into a gradient-enabled parameter set.
pub fn load_checkpoint(path: &Path) -> Result<ParamSet> {
    let bytes = std::fs::read(path)?;
    let (version, map) = decode(&bytes)?;
    if version != VERSION_F32 {
        return Err(Error::Format(format!(
            "expected a version-1 model checkpoint, found version {version}"
        )));
    }
    let mut params = ParamSet::new();
    for (name, t) in map {
        params.insert(name, Tensor::new_grad(t.shape(), t.data().to_vec())?)?;
    }
    Ok(params)
}
