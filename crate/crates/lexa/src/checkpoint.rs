//! The `LEXA` parameter checkpoint.
//!
//! Layout, all integers little-endian u32 unless noted:
//!
//! ```text
//! "LEXA" version count
//!   count × { name_len name rank extents[rank] f32[numel] }
//! "ADAM" count
//!   count × { name_len name rank extents[rank] step:u64 m:f32[numel] v:f32[numel] }
//! "META" len json[len]
//! ```
//!
//! The metadata block carries the training configuration, its hash and the
//! agent's counters and random state.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use lexa_core::ndgrad::{ParamSet, Parameter, Tensor};
use lexa_core::orchestrator::{Agent, AgentProgress, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{IoContext, LexaError, Result};

pub const MAGIC: &[u8; 4] = b"LEXA";
pub const VERSION: u32 = 1;
const MOMENTS_TAG: &[u8; 4] = b"ADAM";
const META_TAG: &[u8; 4] = b"META";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub config: TrainConfig,
    pub progress: AgentProgress,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<Parameter>,
    pub meta: Option<CheckpointMeta>,
}

/// Hex SHA-256 of the configuration's JSON form.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, data: &[f32]) {
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_header(out: &mut Vec<u8>, p: &Parameter) {
    put_u32(out, p.name.len() as u32);
    out.extend_from_slice(p.name.as_bytes());
    let shape = p.tensor.shape();
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u32(out, d as u32);
    }
}

/// Serializes parameters, their moments and optional metadata.
pub fn encode<'a>(params: impl IntoIterator<Item = &'a Parameter> + Clone, meta: Option<&CheckpointMeta>) -> Vec<u8> {
    let count = params.clone().into_iter().count() as u32;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, count);
    for p in params.clone() {
        put_header(&mut out, p);
        put_f32s(&mut out, p.tensor.data());
    }
    out.extend_from_slice(MOMENTS_TAG);
    put_u32(&mut out, count);
    for p in params {
        put_header(&mut out, p);
        out.extend_from_slice(&p.step_count.to_le_bytes());
        put_f32s(&mut out, &p.adam_m);
        put_f32s(&mut out, &p.adam_v);
    }
    if let Some(meta) = meta {
        let json = serde_json::to_vec(meta).expect("metadata serializes");
        out.extend_from_slice(META_TAG);
        put_u32(&mut out, json.len() as u32);
        out.extend_from_slice(&json);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f32>, String> {
        let bytes = self.take(n.checked_mul(4).ok_or("size overflow")?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn tag(&mut self, tag: &[u8; 4]) -> std::result::Result<(), String> {
        let got = self.take(4)?;
        if got != tag {
            return Err(format!("expected section {:?}, found {:?}", String::from_utf8_lossy(tag), String::from_utf8_lossy(got)));
        }
        Ok(())
    }

    fn header(&mut self) -> std::result::Result<(String, Vec<usize>), String> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec()).map_err(|_| "parameter name is not UTF-8")?;
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        Ok((name, shape))
    }
}

/// Parses a checkpoint image.
pub fn decode(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    let mut r = Reader { bytes, pos: 0 };
    r.tag(MAGIC).map_err(|_| "not a LEXA checkpoint".to_string())?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let (name, shape) = r.header()?;
        let n = shape.iter().product();
        let tensor = Tensor::new(&shape, r.f32s(n)?).map_err(|e| e.to_string())?;
        params.push(Parameter::new(name, tensor));
    }
    r.tag(MOMENTS_TAG)?;
    if r.u32()? as usize != count {
        return Err("moment section does not match the parameter count".into());
    }
    for p in &mut params {
        let (name, shape) = r.header()?;
        if name != p.name || shape != p.tensor.shape() {
            return Err(format!("moments for `{name}` do not follow parameter `{}`", p.name));
        }
        let n = p.tensor.numel();
        p.step_count = r.u64()?;
        p.adam_m = r.f32s(n)?;
        p.adam_v = r.f32s(n)?;
    }
    let meta = if r.pos == bytes.len() {
        None
    } else {
        r.tag(META_TAG)?;
        let len = r.u32()? as usize;
        Some(serde_json::from_slice(r.take(len)?).map_err(|e| format!("metadata: {e}"))?)
    };
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(Checkpoint { params, meta })
}

/// Copies values and moments into `sets` by name; every parameter must be
/// present with the same shape.
pub fn apply(params: &[Parameter], sets: Vec<&mut ParamSet>) -> std::result::Result<(), String> {
    let by_name: HashMap<&str, &Parameter> = params.iter().map(|p| (p.name.as_str(), p)).collect();
    let mut used = 0;
    for set in sets {
        for p in set.iter_mut() {
            let src = by_name
                .get(p.name.as_str())
                .ok_or_else(|| format!("checkpoint has no parameter `{}`", p.name))?;
            if src.tensor.shape() != p.tensor.shape() {
                return Err(format!(
                    "`{}` has shape {:?} in the checkpoint but {:?} in the model",
                    p.name,
                    src.tensor.shape(),
                    p.tensor.shape()
                ));
            }
            p.tensor.data_mut().copy_from_slice(src.tensor.data());
            p.adam_m.clone_from(&src.adam_m);
            p.adam_v.clone_from(&src.adam_v);
            p.step_count = src.step_count;
            used += 1;
        }
    }
    if used != params.len() {
        return Err(format!("checkpoint holds {} parameters the model does not use", params.len() - used));
    }
    Ok(())
}

/// Writes the agent's full state atomically.
pub fn save(path: &Path, agent: &Agent) -> Result<()> {
    let meta = CheckpointMeta {
        config_hash: config_hash(agent.config()),
        config: agent.config().clone(),
        progress: agent.progress(),
    };
    let sets = agent.param_sets();
    let bytes = encode(sets.iter().flat_map(|s| s.iter()), Some(&meta));
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, bytes).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).at(path)?;
    decode(&bytes).map_err(|reason| LexaError::format(path, reason))
}

/// Rebuilds an agent from a checkpoint, without its replay buffer.
pub fn load_agent(path: &Path) -> Result<Agent> {
    let ckpt = read(path)?;
    let meta = ckpt
        .meta
        .ok_or_else(|| LexaError::format(path, "checkpoint has no metadata section"))?;
    if config_hash(&meta.config) != meta.config_hash {
        return Err(LexaError::format(path, "config hash does not match the stored config"));
    }
    let mut agent = Agent::new(meta.config)?;
    apply(&ckpt.params, agent.param_sets_mut()).map_err(|r| LexaError::format(path, r))?;
    agent.restore_progress(&meta.progress)?;
    Ok(agent)
}
