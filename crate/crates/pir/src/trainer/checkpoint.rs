//! Checkpoint serialization: one TNSR tensor per parameter block plus Adam
//! moments, and a JSON manifest with field specs and step counts.
//!
//! Checkpoints store f32. Saving also rounds the live parameters and moments
//! to f32 so a resumed run is bit-identical to one that kept going.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::core::error::{Error, Result};
use crate::core::tensor::{tensor_read, tensor_write};
use crate::fields::{FieldSpec, ParamBlock};

use super::AdamState;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: String,
    /// Iteration within the stage (stage-final checkpoints store the total).
    pub iter: usize,
    pub feature_distilled: bool,
    /// Adam step counters keyed by block name.
    pub adam_steps: BTreeMap<String, u64>,
    /// Field specs keyed by block name (for mismatch detection on load).
    pub specs: BTreeMap<String, FieldSpec>,
}

pub fn save_block(
    dir: &Path,
    name: &str,
    block: &mut ParamBlock,
    adam: &mut AdamState,
) -> Result<()> {
    block.snap_to_f32();
    adam.snap_to_f32();
    let as_f32 = |v: &[f64]| -> Vec<f32> { v.iter().map(|&x| x as f32).collect() };
    let n = block.len() as u32;
    tensor_write(dir.join(format!("{name}.tnsr")), &[n], &as_f32(&block.values))?;
    tensor_write(dir.join(format!("{name}.m.tnsr")), &[n], &as_f32(&adam.m))?;
    tensor_write(dir.join(format!("{name}.v.tnsr")), &[n], &as_f32(&adam.v))?;
    Ok(())
}

pub fn load_block(dir: &Path, name: &str, block: &mut ParamBlock, adam: &mut AdamState) -> Result<()> {
    let read_into = |suffix: &str, target: &mut Vec<f64>| -> Result<()> {
        let t = tensor_read(dir.join(format!("{name}{suffix}.tnsr")))?;
        if t.data.len() != target.len() {
            return Err(Error::Checkpoint {
                reason: format!(
                    "block `{name}` has {} parameters, checkpoint has {}",
                    target.len(),
                    t.data.len()
                ),
            });
        }
        for (v, &f) in target.iter_mut().zip(t.data.iter()) {
            *v = f as f64;
        }
        Ok(())
    };
    read_into("", &mut block.values)?;
    read_into(".m", &mut adam.m)?;
    read_into(".v", &mut adam.v)?;
    block.zero_grads();
    Ok(())
}

pub fn save_meta(dir: &Path, meta: &CheckpointMeta) -> Result<()> {
    let json = serde_json::to_string_pretty(meta)?;
    std::fs::write(dir.join("meta.json"), json)
        .map_err(|e| Error::io(format!("writing {}/meta.json", dir.display()), e))
}

pub fn load_meta(dir: &Path) -> Result<CheckpointMeta> {
    let text = std::fs::read_to_string(dir.join("meta.json"))
        .map_err(|e| Error::io(format!("reading {}/meta.json", dir.display()), e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn exists(dir: &Path) -> bool {
    dir.join("meta.json").is_file()
}
