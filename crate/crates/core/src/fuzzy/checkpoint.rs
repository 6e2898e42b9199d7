//! Binary checkpoint: magic, version, JSON header, then raw little-endian tensors.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use super::model::{FuzzyModel, ModelConfig, Variant};
use crate::data::FeatureSpec;
use crate::error::{NsdtError, Result};
use crate::tree::PaddedRuleSet;

const MAGIC: &[u8; 8] = b"NSDTCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    variant: Variant,
    config: ModelConfig,
    features: Vec<FeatureSpec>,
    rules: PaddedRuleSet,
    #[serde(default)]
    meta: serde_json::Value,
}

pub fn write_checkpoint<W: Write>(model: &FuzzyModel, meta: serde_json::Value, mut w: W) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        variant: model.variant,
        config: model.config.clone(),
        features: model.features.clone(),
        rules: model.rules.clone(),
        meta,
    })?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for (name, t) in model.params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.nrows() as u32).to_le_bytes())?;
        w.write_all(&(t.ncols() as u32).to_le_bytes())?;
        for v in t.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Returns the model and the free-form metadata stored with it.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(FuzzyModel, serde_json::Value)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NsdtError::Format("not a model checkpoint".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NsdtError::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    let mut model = FuzzyModel::build(&header.rules, &header.features, &header.config, header.variant)?;
    let count = read_u32(&mut r)? as usize;
    if count != model.params.len() {
        return Err(NsdtError::Format(format!(
            "checkpoint has {count} tensors, model expects {}",
            model.params.len()
        )));
    }
    for id in model.params.ids().collect::<Vec<_>>() {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| NsdtError::Format(e.to_string()))?;
        if name != model.params.name(id) {
            return Err(NsdtError::Format(format!(
                "tensor `{name}` where `{}` was expected",
                model.params.name(id)
            )));
        }
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let t = model.params.get_mut(id);
        if t.dim() != (rows, cols) {
            return Err(NsdtError::Format(format!("tensor `{name}` has shape {rows}x{cols}")));
        }
        let mut b = [0u8; 8];
        for v in t.iter_mut() {
            r.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
    }
    Ok((model, header.meta))
}

pub fn save_checkpoint(model: &FuzzyModel, meta: serde_json::Value, path: &Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(model, meta, f)
}

pub fn load_checkpoint(path: &Path) -> Result<(FuzzyModel, serde_json::Value)> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}
