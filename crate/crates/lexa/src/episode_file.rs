//! `LEXE` episode files.
//!
//! Header: `"LEXE"`, version u32, frame count T u32, image height, width and
//! channels u32 each, action dim u32, kind u8. Then `T·H·W·C` little-endian
//! f32 pixels followed by `T·A` f32 actions.

use std::fs;
use std::path::Path;

use lexa_core::orchestrator::{derive_seed, EpisodeKind, EpisodeRecord};

use crate::error::{IoContext, LexaError, Result};

pub const MAGIC: &[u8; 4] = b"LEXE";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 6 + 1;

pub fn encode(ep: &EpisodeRecord, image: [usize; 3], action_dim: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * (ep.images.len() + ep.actions.len()));
    out.extend_from_slice(MAGIC);
    for v in [VERSION, ep.len as u32, image[0] as u32, image[1] as u32, image[2] as u32, action_dim as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(ep.kind.code());
    for v in ep.images.iter().chain(&ep.actions) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Header fields of a decoded file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeHeader {
    pub len: usize,
    pub image: [usize; 3],
    pub action_dim: usize,
    pub kind: EpisodeKind,
}

/// Decodes a file; `index` and `seed` are not stored and are filled in by
/// the caller.
pub fn decode(bytes: &[u8]) -> std::result::Result<(EpisodeHeader, Vec<f32>, Vec<f32>), String> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err("not a LEXE episode file".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    if word(0) != VERSION as usize {
        return Err(format!("unsupported episode version {}", word(0)));
    }
    let header = EpisodeHeader {
        len: word(1),
        image: [word(2), word(3), word(4)],
        action_dim: word(5),
        kind: EpisodeKind::from_code(bytes[HEADER_LEN - 1]).map_err(|e| e.to_string())?,
    };
    let pixels = header.len * header.image.iter().product::<usize>();
    let actions = header.len * header.action_dim;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * (pixels + actions) {
        return Err(format!("expected {} data bytes, found {}", 4 * (pixels + actions), body.len()));
    }
    let floats: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let (images, acts) = floats.split_at(pixels);
    Ok((header, images.to_vec(), acts.to_vec()))
}

pub fn file_name(index: u64) -> String {
    format!("ep_{index}.bin")
}

pub fn write(dir: &Path, ep: &EpisodeRecord, image: [usize; 3], action_dim: usize) -> Result<()> {
    let path = dir.join(file_name(ep.index));
    fs::write(&path, encode(ep, image, action_dim)).at(&path)
}

/// Reads episode `index` of a run seeded with `run_seed`.
pub fn read(dir: &Path, index: u64, run_seed: u64) -> Result<EpisodeRecord> {
    let path = dir.join(file_name(index));
    let bytes = fs::read(&path).at(&path)?;
    let (h, images, actions) = decode(&bytes).map_err(|r| LexaError::format(&path, r))?;
    Ok(EpisodeRecord {
        index,
        kind: h.kind,
        seed: derive_seed(run_seed, 1, index),
        len: h.len,
        images,
        actions,
        states: Vec::new(),
    })
}
