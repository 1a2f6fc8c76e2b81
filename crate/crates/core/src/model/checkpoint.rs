//! Binary checkpoint: `b"SGCV"`, little-endian `u32` version, `u32` length
//! of a UTF-8 JSON model config, the config, then every tensor of
//! [`ModelState::all_tensors`] in order as little-endian `f64`.

use std::io::{Read, Write};

use super::classifier::{Model, ModelConfig, ModelState};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SGCV";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(model: &Model, mut out: W) -> Result<()> {
    let config = serde_json::to_vec(&model.config)?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let len = u32::try_from(config.len()).map_err(|_| Error::Checkpoint("config too large".into()))?;
    out.write_all(&len.to_le_bytes())?;
    out.write_all(&config)?;
    for t in model.state.all_tensors() {
        for v in t {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Model> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = read_u32(&mut input)? as usize;
    let mut config = vec![0u8; len];
    input
        .read_exact(&mut config)
        .map_err(|e| Error::Checkpoint(format!("truncated config: {e}")))?;
    let config: ModelConfig = serde_json::from_slice(&config)?;
    let mut state = ModelState::init(&config)?;
    let mut buf = [0u8; 8];
    for t in state.all_tensors_mut() {
        for v in t.iter_mut() {
            input
                .read_exact(&mut buf)
                .map_err(|e| Error::Checkpoint(format!("truncated tensor data: {e}")))?;
            *v = f64::from_le_bytes(buf);
        }
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Model::from_state(config, state)
}
