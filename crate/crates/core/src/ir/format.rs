//! On-disk model format `sqm-1`.
//!
//! A model is two files sharing a stem: a TOML manifest (`model.toml`) that
//! describes the graph and a tensor directory, and a raw blob (`model.bin`)
//! holding every tensor as little-endian FP32, row-major, concatenated at
//! 4-byte aligned offsets. Tensor names in the directory are `<layer>/<param>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Graph, GraphInput, GraphOutput, Layer, Op};
use crate::error::{Error, FormatError, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: &str = "sqm-1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: String,
    blob: String,
    #[serde(default)]
    inputs: Vec<InputEntry>,
    #[serde(default)]
    outputs: Vec<OutputEntry>,
    #[serde(default)]
    layers: Vec<LayerEntry>,
    #[serde(default)]
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputEntry {
    name: String,
    source: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    id: String,
    kind: String,
    inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eps: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    axis: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split_from: Option<String>,
}

/// Accumulates tensors into a blob and the matching directory entries.
#[derive(Debug, Default)]
pub struct BlobWriter {
    pub entries: Vec<TensorEntry>,
    pub bytes: Vec<u8>,
}

impl BlobWriter {
    pub fn push(&mut self, name: String, t: &Tensor) {
        let offset = self.bytes.len() as u64;
        for v in t.data() {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.entries.push(TensorEntry {
            name,
            dtype: "f32".into(),
            shape: t.shape().to_vec(),
            offset,
            length: self.bytes.len() as u64 - offset,
        });
    }
}

/// Decodes one directory entry, enforcing bounds, alignment and dtype.
pub fn read_entry(entry: &TensorEntry, blob: &[u8]) -> Result<Tensor> {
    let blob_len = blob.len() as u64;
    let end = entry.offset.checked_add(entry.length);
    if end.is_none_or(|e| e > blob_len) {
        return Err(FormatError::OutOfBounds {
            name: entry.name.clone(),
            offset: entry.offset,
            length: entry.length,
            blob_len,
        }
        .into());
    }
    if !entry.offset.is_multiple_of(4) {
        return Err(FormatError::Misaligned {
            name: entry.name.clone(),
            offset: entry.offset,
        }
        .into());
    }
    let bad = |detail: String| FormatError::Tensor {
        name: entry.name.clone(),
        detail,
    };
    if entry.dtype != "f32" {
        return Err(bad(format!("unsupported dtype `{}`", entry.dtype)).into());
    }
    let numel: u64 = entry.shape.iter().map(|&d| d as u64).product();
    if numel * 4 != entry.length {
        return Err(bad(format!(
            "shape {:?} needs {} bytes, entry has {}",
            entry.shape,
            numel * 4,
            entry.length
        ))
        .into());
    }
    let bytes = &blob[entry.offset as usize..(entry.offset + entry.length) as usize];
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(entry.shape.clone(), data).map_err(|e| bad(e.to_string()).into())
}

/// Parses TOML text and checks the `version` key before anything else.
pub(crate) fn parse_versioned<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| FormatError::Manifest(e.to_string()))?;
    match table.get("version").and_then(|v| v.as_str()) {
        Some(FORMAT_VERSION) => {}
        Some(other) => {
            return Err(FormatError::Version {
                found: other.to_string(),
                expected: FORMAT_VERSION,
            }
            .into())
        }
        None => return Err(FormatError::Manifest("missing `version` string".into()).into()),
    }
    table
        .try_into()
        .map_err(|e: toml::de::Error| FormatError::Manifest(e.to_string()).into())
}

pub(crate) fn blob_path_for(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Serializes `g` into manifest text plus blob bytes. `blob_name` is the
/// file name recorded in the manifest.
pub fn encode_model(g: &Graph, blob_name: &str) -> Result<(String, Vec<u8>)> {
    let mut blob = BlobWriter::default();
    let mut layers = Vec::with_capacity(g.layers.len());
    for l in &g.layers {
        let mut e = LayerEntry {
            id: l.id.clone(),
            kind: l.op.kind_name().into(),
            inputs: l.inputs.clone(),
            split_from: l.split_from.clone(),
            ..Default::default()
        };
        match l.op {
            Op::Conv2d { stride, padding } => {
                e.stride = Some(stride);
                e.padding = Some(padding);
            }
            Op::BatchNorm { eps } => e.eps = Some(eps),
            Op::Concat { axis } => e.axis = Some(axis as i64),
            Op::Slice { axis, start, len } => {
                e.axis = Some(axis as i64);
                e.start = Some(start);
                e.len = Some(len);
            }
            Op::Linear | Op::Relu | Op::Gelu | Op::Add => {}
        }
        for (name, t) in &l.params {
            blob.push(format!("{}/{name}", l.id), t);
        }
        layers.push(e);
    }
    let manifest = Manifest {
        version: FORMAT_VERSION.into(),
        blob: blob_name.into(),
        inputs: g
            .inputs
            .iter()
            .map(|i| InputEntry {
                name: i.name.clone(),
                shape: i.shape.clone(),
            })
            .collect(),
        outputs: g
            .outputs
            .iter()
            .map(|o| OutputEntry {
                name: o.name.clone(),
                source: o.source.clone(),
            })
            .collect(),
        layers,
        tensors: blob.entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| FormatError::Manifest(e.to_string()))?;
    Ok((text, blob.bytes))
}

/// Inverse of [`encode_model`]. Checks format invariants only; use
/// [`super::validate`] for graph invariants.
pub fn decode_model(text: &str, blob: &[u8]) -> Result<Graph> {
    let m: Manifest = parse_versioned(text)?;
    let mut layers = Vec::with_capacity(m.layers.len());
    let mut by_id = BTreeMap::new();
    for e in m.layers {
        let missing = |field: &str| FormatError::Manifest(format!("layer `{}` ({}) lacks `{field}`", e.id, e.kind));
        let op = match e.kind.as_str() {
            "linear" => Op::Linear,
            "conv2d" => Op::Conv2d {
                stride: e.stride.ok_or_else(|| missing("stride"))?,
                padding: e.padding.ok_or_else(|| missing("padding"))?,
            },
            "relu" => Op::Relu,
            "gelu" => Op::Gelu,
            "batchnorm" => Op::BatchNorm {
                eps: e.eps.ok_or_else(|| missing("eps"))?,
            },
            "add" => Op::Add,
            "concat" => Op::Concat {
                axis: e.axis.ok_or_else(|| missing("axis"))? as isize,
            },
            "slice" => Op::Slice {
                axis: e.axis.ok_or_else(|| missing("axis"))? as isize,
                start: e.start.ok_or_else(|| missing("start"))?,
                len: e.len.ok_or_else(|| missing("len"))?,
            },
            other => return Err(FormatError::UnsupportedKind(other.to_string()).into()),
        };
        by_id.insert(e.id.clone(), layers.len());
        layers.push(Layer {
            id: e.id,
            op,
            inputs: e.inputs,
            params: BTreeMap::new(),
            split_from: e.split_from,
        });
    }
    for entry in &m.tensors {
        let t = read_entry(entry, blob)?;
        let (layer, param) = entry
            .name
            .rsplit_once('/')
            .ok_or_else(|| FormatError::Manifest(format!("tensor name `{}` is not `<layer>/<param>`", entry.name)))?;
        let idx = *by_id
            .get(layer)
            .ok_or_else(|| FormatError::Manifest(format!("tensor `{}` names unknown layer `{layer}`", entry.name)))?;
        if layers[idx].params.insert(param.to_string(), t).is_some() {
            return Err(FormatError::Manifest(format!("duplicate tensor `{}`", entry.name)).into());
        }
    }
    Ok(Graph {
        inputs: m
            .inputs
            .into_iter()
            .map(|i| GraphInput {
                name: i.name,
                shape: i.shape,
            })
            .collect(),
        layers,
        outputs: m
            .outputs
            .into_iter()
            .map(|o| GraphOutput {
                name: o.name,
                source: o.source,
            })
            .collect(),
    })
}

/// Writes `g` to `path` (manifest) and `path` with extension `.bin` (blob).
pub fn save_model(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let blob_path = blob_path_for(path);
    let blob_name = blob_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::arg(format!("cannot derive blob file name from {}", path.display())))?;
    let (text, bytes) = encode_model(g, blob_name)?;
    write_file(path, text.as_bytes())?;
    write_file(&blob_path, &bytes)
}

/// Reads a model written by [`save_model`]. The blob is located relative to
/// the manifest's directory.
pub fn load_model(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let text = String::from_utf8(read_file(path)?).map_err(|e| FormatError::Manifest(format!("not UTF-8: {e}")))?;
    let blob_name = blob_name_of(&text)?;
    let blob = read_file(&path.with_file_name(blob_name))?;
    decode_model(&text, &blob)
}

pub(crate) fn blob_name_of(text: &str) -> Result<String> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| FormatError::Manifest(e.to_string()))?;
    table
        .get("blob")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| FormatError::Manifest("missing `blob` file name".into()).into())
}
