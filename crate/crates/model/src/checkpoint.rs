//! Single-file binary checkpoints.
//!
//! Layout (little endian): 8-byte magic, `u32` format version, `u64` header
//! length followed by a JSON header, `u32` tensor count, then per tensor a
//! `u32`-prefixed UTF-8 name, `u32` rank, `u64` dims and raw `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::model::{HarmonyIqa, ModelConfig, TrainingState};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"HIQAMDL\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    state: TrainingState,
    lora_enabled: bool,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(model: &HarmonyIqa, mut w: W) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        config: model.config().clone(),
        state: model.state,
        lora_enabled: model.lora_enabled(),
    })
    .map_err(|e| bad(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    let store = model.store();
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, p) in store.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
        for d in p.value.shape() {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for x in p.value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

const MAX_HEADER: u64 = 1 << 20;
const MAX_ELEMENTS: u64 = 1 << 28;

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<HarmonyIqa> {
    let mut magic = [0; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a model checkpoint"));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let hlen = read_u64(&mut r)?;
    if hlen > MAX_HEADER {
        return Err(bad("header too large"));
    }
    let mut hbuf = vec![0; hlen as usize];
    r.read_exact(&mut hbuf)?;
    let header: Header = serde_json::from_slice(&hbuf).map_err(|e| bad(format!("header: {e}")))?;
    let mut model = HarmonyIqa::new(header.config)?;
    model.state = header.state;
    model.set_lora_enabled(header.lora_enabled);

    let count = read_u32(&mut r)? as usize;
    if count != model.store().len() {
        return Err(bad(format!(
            "checkpoint has {count} tensors, architecture expects {}",
            model.store().len()
        )));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let nlen = read_u32(&mut r)? as usize;
        if nlen > 1024 {
            return Err(bad("tensor name too long"));
        }
        let mut nbuf = vec![0; nlen];
        r.read_exact(&mut nbuf)?;
        let name = String::from_utf8(nbuf).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 4 {
            return Err(bad(format!("tensor `{name}` has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut total: u64 = 1;
        for _ in 0..rank {
            let d = read_u64(&mut r)?;
            total = total.saturating_mul(d);
            shape.push(d as usize);
        }
        if total > MAX_ELEMENTS {
            return Err(bad(format!("tensor `{name}` is too large")));
        }
        let id = model
            .store()
            .id(&name)
            .ok_or_else(|| bad(format!("unknown tensor `{name}`")))?;
        if model.store().value(id).shape() != shape.as_slice() {
            return Err(bad(format!(
                "tensor `{name}` has shape {shape:?}, expected {:?}",
                model.store().value(id).shape()
            )));
        }
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(bad(format!("tensor `{name}` appears twice")));
        }
        let mut data = Vec::with_capacity(total as usize);
        let mut b = [0; 8];
        for _ in 0..total {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        *model.store_mut().value_mut(id) = Tensor::new(shape, data)?;
    }
    Ok(model)
}

pub fn save(model: &HarmonyIqa, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<HarmonyIqa> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
