//! Little-endian binary formats: FMAP feature maps, SPXL label maps and MLPW
//! classifier weights.

use std::path::Path;

use spxrefine_core::mlp::{Layer, MlpWeights};
use spxrefine_core::{FeatureMap, LabelMap};

use crate::error::{Result, ToolkitError};

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const SPXL_MAGIC: &[u8; 4] = b"SPXL";
pub const MLPW_MAGIC: &[u8; 4] = b"MLPW";

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(path: &'a Path, bytes: &'a [u8], magic: &'static [u8; 4]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != magic {
            let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
            return Err(ToolkitError::BadMagic {
                path: path.to_path_buf(),
                expected: std::str::from_utf8(magic).expect("ascii magic"),
                found,
            });
        }
        Ok(Self { path, bytes, pos: 4 })
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn truncated(&self, needed: usize) -> ToolkitError {
        ToolkitError::PayloadSizeMismatch { path: self.path.to_path_buf(), expected: self.pos + needed, found: self.bytes.len() }
    }

    fn u32(&mut self) -> Result<u32> {
        if self.remaining() < 4 {
            return Err(self.truncated(4));
        }
        let v = u32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().expect("4 bytes"));
        self.pos += 4;
        Ok(v)
    }

    /// Reads `n` little-endian 4-byte words, checking the length first.
    fn words<T>(&mut self, n: usize, f: impl Fn([u8; 4]) -> T) -> Result<Vec<T>> {
        let bytes = n.checked_mul(4).ok_or_else(|| self.truncated(usize::MAX - self.pos))?;
        if self.remaining() < bytes {
            return Err(self.truncated(bytes));
        }
        let out = self.bytes[self.pos..self.pos + bytes]
            .chunks_exact(4)
            .map(|c| f(c.try_into().expect("4 bytes")))
            .collect();
        self.pos += bytes;
        Ok(out)
    }

    fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(ToolkitError::PayloadSizeMismatch {
                path: self.path.to_path_buf(),
                expected: self.pos,
                found: self.bytes.len(),
            });
        }
        Ok(())
    }

    /// Checks the exact payload size implied by a header.
    fn expect_exact(&self, payload: usize) -> Result<()> {
        if self.remaining() != payload {
            return Err(ToolkitError::PayloadSizeMismatch {
                path: self.path.to_path_buf(),
                expected: self.pos + payload,
                found: self.bytes.len(),
            });
        }
        Ok(())
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("dimension fits in u32").to_le_bytes());
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| ToolkitError::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| ToolkitError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| ToolkitError::io(path, e))
}

pub fn encode_feature_map(fm: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + fm.data().len() * 4);
    out.extend_from_slice(FMAP_MAGIC);
    push_u32(&mut out, fm.height());
    push_u32(&mut out, fm.width());
    push_u32(&mut out, fm.dim());
    for v in fm.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// `path` is only used for error messages.
pub fn decode_feature_map(bytes: &[u8], path: &Path) -> Result<FeatureMap> {
    let mut c = Cursor::new(path, bytes, FMAP_MAGIC)?;
    let height = c.u32()? as usize;
    let width = c.u32()? as usize;
    let dim = c.u32()? as usize;
    let n = height.checked_mul(width).and_then(|v| v.checked_mul(dim)).unwrap_or(usize::MAX);
    c.expect_exact(n.saturating_mul(4))?;
    let data = c.words(n, f32::from_le_bytes)?;
    FeatureMap::new(width, height, dim, data).map_err(|e| ToolkitError::Parse { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn read_feature_map(path: &Path) -> Result<FeatureMap> {
    decode_feature_map(&read_file(path)?, path)
}

pub fn write_feature_map(fm: &FeatureMap, path: &Path) -> Result<()> {
    write_file(path, &encode_feature_map(fm))
}

pub fn encode_label_map(lm: &LabelMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + lm.labels().len() * 4);
    out.extend_from_slice(SPXL_MAGIC);
    push_u32(&mut out, lm.height());
    push_u32(&mut out, lm.width());
    push_u32(&mut out, lm.count());
    for v in lm.labels() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_label_map(bytes: &[u8], path: &Path) -> Result<LabelMap> {
    let mut c = Cursor::new(path, bytes, SPXL_MAGIC)?;
    let height = c.u32()? as usize;
    let width = c.u32()? as usize;
    let count = c.u32()? as usize;
    let n = height.saturating_mul(width);
    c.expect_exact(n.saturating_mul(4))?;
    let labels = c.words(n, u32::from_le_bytes)?;
    LabelMap::new(width, height, labels, count)
        .map_err(|e| ToolkitError::InvalidLabelMap { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn read_label_map(path: &Path) -> Result<LabelMap> {
    decode_label_map(&read_file(path)?, path)
}

pub fn write_label_map(lm: &LabelMap, path: &Path) -> Result<()> {
    write_file(path, &encode_label_map(lm))
}

pub fn encode_weights(w: &MlpWeights<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + w.parameter_count() * 4 + w.layers().len() * 8);
    out.extend_from_slice(MLPW_MAGIC);
    push_u32(&mut out, w.layers().len());
    for layer in w.layers() {
        push_u32(&mut out, layer.outputs);
        push_u32(&mut out, layer.inputs);
        for v in layer.weights.iter().chain(&layer.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_weights(bytes: &[u8], path: &Path) -> Result<MlpWeights<f32>> {
    let mut c = Cursor::new(path, bytes, MLPW_MAGIC)?;
    let count = c.u32()? as usize;
    let mut layers = Vec::new();
    for _ in 0..count {
        let outputs = c.u32()? as usize;
        let inputs = c.u32()? as usize;
        let n = outputs.saturating_mul(inputs);
        let weights = c.words(n, f32::from_le_bytes)?;
        let bias = c.words(outputs, f32::from_le_bytes)?;
        layers.push(Layer { inputs, outputs, weights, bias });
    }
    c.finish()?;
    MlpWeights::new(layers).map_err(|e| ToolkitError::InvalidWeights { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn read_weights(path: &Path) -> Result<MlpWeights<f32>> {
    decode_weights(&read_file(path)?, path)
}

pub fn write_weights(w: &MlpWeights<f32>, path: &Path) -> Result<()> {
    write_file(path, &encode_weights(w))
}
