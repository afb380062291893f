//! Model checkpoint container.
//!
//! Byte layout, all integers little-endian:
//!
//! | offset | size | content                                        |
//! |--------|------|------------------------------------------------|
//! | 0      | 8    | magic `PCSMAGNN`                               |
//! | 8      | 4    | format version (`u32`, currently 1)            |
//! | 12     | 4    | header length `H` (`u32`)                      |
//! | 16     | H    | UTF-8 JSON of the [`ModelConfig`]              |
//! | 16+H   | 8    | parameter count `P` (`u64`)                    |
//! | 24+H   | 8·P  | parameters as `f64`, in layout order           |

use std::io::{Read, Write};

use super::{Model, ModelConfig, ModelParameters};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PCSMAGNN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(model: &Model, mut w: impl Write) -> Result<()> {
    let header = serde_json::to_vec(&model.config)?;
    let flat = model.params.flatten();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(flat.len() as u64).to_le_bytes())?;
    for x in flat {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn bad(msg: &str) -> Error {
    Error::Parse { line: 0, message: format!("checkpoint: {msg}") }
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Model> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    r.read_exact(&mut u32buf)?;
    let mut header = vec![0u8; u32::from_le_bytes(u32buf) as usize];
    r.read_exact(&mut header)?;
    let config: ModelConfig = serde_json::from_slice(&header)?;
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    if count != config.parameter_count() {
        return Err(bad(&format!("{count} parameters for a model with {}", config.parameter_count())));
    }
    let mut flat = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u64buf)?;
        flat.push(f64::from_le_bytes(u64buf));
    }
    let params = ModelParameters::unflatten(&config, &flat)?;
    Model::new(config, params)
}
