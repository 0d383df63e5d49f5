//! Checkpoint and calibration file formats.
//!
//! A checkpoint is a directory holding `manifest.json` and `weights.bin`.
//! The blob stores each layer's weight row-major as little-endian `f32` at
//! the offset declared in the manifest.
//!
//! A calibration batch is a single file:
//! `"CALB" | u32le version=1 | u32le n_tokens | u32le c_in | f32le payload`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

pub const CALIBRATION_MAGIC: &[u8; 4] = b"CALB";
pub const CALIBRATION_VERSION: u32 = 1;
const CALIBRATION_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::None => v,
            Activation::Relu => v.max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub name: String,
    /// Shape `(c_out, c_in)`.
    pub weight: DenseMatrix,
    /// Applied to this layer's output.
    pub activation: Activation,
}

impl LinearLayer {
    pub fn new(name: impl Into<String>, weight: DenseMatrix, activation: Activation) -> Self {
        Self {
            name: name.into(),
            weight,
            activation,
        }
    }

    pub fn c_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn c_in(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub version: u32,
    pub layers: Vec<LinearLayer>,
}

impl ModelCheckpoint {
    pub fn new(layers: Vec<LinearLayer>) -> Result<Self> {
        let m = Self {
            version: CHECKPOINT_VERSION,
            layers,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].c_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, LinearLayer::c_out)
    }

    /// Checks every structural invariant: non-empty, non-degenerate shapes,
    /// finite weights, and a consistent shape chain.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::CorruptCheckpoint("model has no layers".into()));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.c_out() == 0 || layer.c_in() == 0 {
                return Err(Error::CorruptCheckpoint(format!(
                    "layer {k} (`{}`) has degenerate shape {:?}",
                    layer.name,
                    layer.weight.shape()
                )));
            }
            if k > 0 {
                let expected = self.layers[k - 1].c_out();
                if layer.c_in() != expected {
                    return Err(Error::ShapeChain {
                        index: k,
                        layer: layer.name.clone(),
                        expected,
                        found: layer.c_in(),
                    });
                }
            }
            if let Some(index) = layer.weight.first_non_finite() {
                return Err(Error::NonFinite {
                    layer: layer.name.clone(),
                    index,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    c_out: usize,
    c_in: usize,
    activation: Activation,
    weight_offset: u64,
    weight_nbytes: u64,
    dtype: String,
}

const DTYPE_F32LE: &str = "f32le";

/// Writes `manifest.json` and `weights.bin` into `dir`, creating it if needed.
///
/// Weights are stored as `f32`; values not representable in `f32` are rounded.
pub fn save_checkpoint(model: &ModelCheckpoint, dir: &Path) -> Result<()> {
    model.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let offset = blob.len() as u64;
        for &v in layer.weight.as_slice() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        entries.push(LayerEntry {
            name: layer.name.clone(),
            c_out: layer.c_out(),
            c_in: layer.c_in(),
            activation: layer.activation,
            weight_offset: offset,
            weight_nbytes: blob.len() as u64 - offset,
            dtype: DTYPE_F32LE.to_string(),
        });
    }
    let manifest = Manifest {
        version: model.version,
        layers: entries,
    };

    let blob_path = dir.join(WEIGHTS_FILE);
    fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
        path: manifest_path.clone(),
        source: e,
    })?;
    json.push('\n');
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<ModelCheckpoint> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: manifest_path.clone(),
        source: e,
    })?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::CorruptCheckpoint(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    if manifest.layers.is_empty() {
        return Err(Error::CorruptCheckpoint("manifest lists no layers".into()));
    }

    let blob_path = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;

    let mut layers = Vec::with_capacity(manifest.layers.len());
    let mut blob_end = 0u64;
    for (k, entry) in manifest.layers.iter().enumerate() {
        if entry.dtype != DTYPE_F32LE {
            return Err(Error::CorruptCheckpoint(format!(
                "layer `{}` has unsupported dtype `{}`",
                entry.name, entry.dtype
            )));
        }
        let expected = (entry.c_out as u64)
            .checked_mul(entry.c_in as u64)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| {
                Error::CorruptCheckpoint(format!("layer `{}` shape overflows", entry.name))
            })?;
        if entry.weight_nbytes != expected {
            return Err(Error::CorruptCheckpoint(format!(
                "layer `{}` declares {} weight bytes but shape {}x{} needs {expected}",
                entry.name, entry.weight_nbytes, entry.c_out, entry.c_in
            )));
        }
        let end = entry
            .weight_offset
            .checked_add(entry.weight_nbytes)
            .filter(|&end| end <= blob.len() as u64)
            .ok_or_else(|| {
                Error::CorruptCheckpoint(format!(
                    "layer `{}` spans bytes {}..{} beyond blob length {}",
                    entry.name,
                    entry.weight_offset,
                    entry.weight_offset.saturating_add(entry.weight_nbytes),
                    blob.len()
                ))
            })?;
        blob_end = blob_end.max(end);

        if k > 0 {
            let prev = &manifest.layers[k - 1];
            if entry.c_in != prev.c_out {
                return Err(Error::ShapeChain {
                    index: k,
                    layer: entry.name.clone(),
                    expected: prev.c_out,
                    found: entry.c_in,
                });
            }
        }

        let bytes = &blob[entry.weight_offset as usize..end as usize];
        let data = decode_f32le(bytes);
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: entry.name.clone(),
                index,
            });
        }
        let weight = DenseMatrix::new(entry.c_out, entry.c_in, data)?;
        layers.push(LinearLayer::new(entry.name.clone(), weight, entry.activation));
    }
    if blob_end != blob.len() as u64 {
        return Err(Error::CorruptCheckpoint(format!(
            "blob has {} bytes but the manifest accounts for {blob_end}",
            blob.len()
        )));
    }

    let model = ModelCheckpoint {
        version: manifest.version,
        layers,
    };
    model.validate()?;
    Ok(model)
}

fn decode_f32le(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect()
}

/// Token-by-feature activation sample, shape `(n_tokens, c_in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBatch {
    data: DenseMatrix,
}

impl CalibrationBatch {
    pub fn new(data: DenseMatrix) -> Result<Self> {
        if data.rows() == 0 || data.cols() == 0 {
            return Err(Error::Shape(format!(
                "calibration batch must be non-empty, got {:?}",
                data.shape()
            )));
        }
        if let Some(index) = data.first_non_finite() {
            return Err(Error::NonFinite {
                layer: "calibration".into(),
                index,
            });
        }
        Ok(Self { data })
    }

    pub fn n_tokens(&self) -> usize {
        self.data.rows()
    }

    pub fn c_in(&self) -> usize {
        self.data.cols()
    }

    pub fn data(&self) -> &DenseMatrix {
        &self.data
    }

    pub fn into_data(self) -> DenseMatrix {
        self.data
    }

    /// Rows `start..end` as a new batch.
    pub fn slice_tokens(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_tokens() {
            return Err(Error::Argument(format!(
                "token range {start}..{end} outside 0..{}",
                self.n_tokens()
            )));
        }
        let c = self.c_in();
        let data = self.data.as_slice()[start * c..end * c].to_vec();
        Self::new(DenseMatrix::new(end - start, c, data)?)
    }
}

pub fn encode_calibration(batch: &CalibrationBatch) -> Vec<u8> {
    let mut out = Vec::with_capacity(CALIBRATION_HEADER_LEN + 4 * batch.data.as_slice().len());
    out.extend_from_slice(CALIBRATION_MAGIC);
    out.extend_from_slice(&CALIBRATION_VERSION.to_le_bytes());
    out.extend_from_slice(&(batch.n_tokens() as u32).to_le_bytes());
    out.extend_from_slice(&(batch.c_in() as u32).to_le_bytes());
    for &v in batch.data.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_calibration(bytes: &[u8]) -> Result<CalibrationBatch> {
    if bytes.len() < CALIBRATION_HEADER_LEN {
        return Err(Error::Truncated {
            expected: CALIBRATION_HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != CALIBRATION_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"CALB\"",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let version = word(4);
    if version != CALIBRATION_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n_tokens = word(8) as usize;
    let c_in = word(12) as usize;
    if n_tokens == 0 || c_in == 0 {
        return Err(Error::Format(format!(
            "empty batch declared ({n_tokens} tokens, {c_in} features)"
        )));
    }
    let payload = &bytes[CALIBRATION_HEADER_LEN..];
    let expected = n_tokens
        .checked_mul(c_in)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("declared shape overflows".into()))?;
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }
    CalibrationBatch::new(DenseMatrix::new(n_tokens, c_in, decode_f32le(payload))?)
}

pub fn save_calibration(batch: &CalibrationBatch, path: &Path) -> Result<()> {
    fs::write(path, encode_calibration(batch)).map_err(|e| Error::io(path, e))
}

pub fn load_calibration(path: &Path) -> Result<CalibrationBatch> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_calibration(&bytes)
}
