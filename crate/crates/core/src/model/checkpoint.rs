//! Binary checkpoint: `SRCN`, u32 LE format version, u64 LE length + JSON
//! config, u64 LE tensor count, then per tensor a u64 LE name length, the
//! UTF-8 name and the tensor in its own serialization.

use std::io::{Read, Write};
use std::path::Path;

use super::{SrcnConfig, SrcnParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SRCN";
pub const FORMAT_VERSION: u32 = 1;
const MAX_CONFIG_BYTES: u64 = 1 << 20;
const MAX_NAME_BYTES: u64 = 1 << 10;

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Checkpoint(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_checkpoint<W: Write>(w: &mut W, params: &SrcnParams, config: &SrcnConfig) -> Result<()> {
    params.check_against(config)?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let json = serde_json::to_vec(config)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let tensors: Vec<_> = params.named_tensors().into_iter().chain(params.named_buffers()).collect();
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        t.write_to(w)?;
    }
    Ok(())
}

/// Reads a checkpoint, checking every tensor's name and shape against the
/// embedded configuration. Nothing is returned unless the whole file is valid.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(SrcnParams, SrcnConfig)> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "header")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not an SRCN checkpoint (bad magic)".into()));
    }
    let mut v = [0u8; 4];
    read_exact(r, &mut v, "header")?;
    let version = u32::from_le_bytes(v);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let len = read_u64(r, "config length")?;
    if len > MAX_CONFIG_BYTES {
        return Err(Error::Checkpoint(format!("config block of {len} bytes is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    read_exact(r, &mut json, "config block")?;
    let config: SrcnConfig =
        serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("bad config block: {e}")))?;
    config.validate().map_err(|e| Error::Checkpoint(format!("bad config block: {e}")))?;

    let mut params = SrcnParams::zeros(&config)?;
    let expected: Vec<String> = params
        .named_tensors()
        .into_iter()
        .chain(params.named_buffers())
        .map(|(n, _)| n)
        .collect();
    let count = read_u64(r, "tensor count")?;
    if count != expected.len() as u64 {
        return Err(Error::Checkpoint(format!(
            "{count} tensors stored, configuration needs {}",
            expected.len()
        )));
    }
    let mut loaded = Vec::with_capacity(expected.len());
    for want in &expected {
        let n = read_u64(r, "tensor name length")?;
        if n > MAX_NAME_BYTES {
            return Err(Error::Checkpoint(format!("tensor name of {n} bytes is implausible")));
        }
        let mut name = vec![0u8; n as usize];
        read_exact(r, &mut name, "tensor name")?;
        if name != want.as_bytes() {
            return Err(Error::Checkpoint(format!(
                "expected tensor {want}, found {}",
                String::from_utf8_lossy(&name)
            )));
        }
        loaded.push(Tensor::read_from(r)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after the last tensor".into()));
    }
    let slots = params.tensors_mut().len();
    for (i, t) in loaded.into_iter().enumerate() {
        let slot: &mut Tensor = if i < slots {
            params.tensors_mut().swap_remove(i)
        } else {
            params.buffers_mut().swap_remove(i - slots)
        };
        if slot.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "{}: stored shape {:?}, configuration needs {:?}",
                expected[i],
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    Ok((params, config))
}

pub fn save_checkpoint(path: &Path, params: &SrcnParams, config: &SrcnConfig) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params, config)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(SrcnParams, SrcnConfig)> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}
