use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::ir::format::{
    blob_name_of, blob_path_for, parse_versioned, read_entry, read_file, write_file, BlobWriter, TensorEntry,
    FORMAT_VERSION,
};
use crate::tensor::Tensor;

const FEATURES: &str = "features";

/// Feature tensors with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// Where the data came from, e.g. `teacher:seed=7`.
    pub source: String,
}

impl LabeledDataset {
    pub fn new(features: Vec<Tensor>, labels: Vec<usize>, classes: usize, source: impl Into<String>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::arg(format!(
                "{} feature tensors but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::arg(format!("label {bad} is outside {classes} classes")));
        }
        if let Some(first) = features.first() {
            if let Some(t) = features.iter().find(|t| t.shape() != first.shape()) {
                return Err(Error::dim(
                    "dataset",
                    format!("feature shapes differ: {:?} and {:?}", first.shape(), t.shape()),
                ));
            }
        }
        Ok(Self {
            features,
            labels,
            classes,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    version: String,
    blob: String,
    classes: usize,
    source: String,
    labels: Vec<usize>,
    tensors: Vec<TensorEntry>,
}

/// Writes a dataset as a manifest plus a blob holding one stacked
/// `features` tensor of shape `[n, ...]`.
pub fn save_dataset(d: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if d.is_empty() {
        return Err(Error::arg("cannot save an empty dataset"));
    }
    let blob_path = blob_path_for(path);
    let blob_name = blob_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::arg(format!("cannot derive blob file name from {}", path.display())))?;
    let mut shape = vec![d.len()];
    shape.extend_from_slice(d.features[0].shape());
    let stacked = Tensor::new(
        shape,
        d.features.iter().flat_map(|t| t.data().iter().copied()).collect(),
    )?;
    let mut blob = BlobWriter::default();
    blob.push(FEATURES.into(), &stacked);
    let manifest = DatasetManifest {
        version: FORMAT_VERSION.into(),
        blob: blob_name.into(),
        classes: d.classes,
        source: d.source.clone(),
        labels: d.labels.clone(),
        tensors: blob.entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| FormatError::Manifest(e.to_string()))?;
    write_file(path, text.as_bytes())?;
    write_file(&blob_path, &blob.bytes)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = String::from_utf8(read_file(path)?).map_err(|e| FormatError::Manifest(format!("not UTF-8: {e}")))?;
    let blob = read_file(&path.with_file_name(blob_name_of(&text)?))?;
    let m: DatasetManifest = parse_versioned(&text)?;
    let entry = match m.tensors.as_slice() {
        [e] if e.name == FEATURES => e,
        _ => return Err(FormatError::Manifest("dataset needs exactly one `features` tensor".into()).into()),
    };
    let stacked = read_entry(entry, &blob)?;
    let n = stacked.shape()[0];
    if n != m.labels.len() || stacked.rank() < 2 {
        return Err(FormatError::Tensor {
            name: FEATURES.into(),
            detail: format!("shape {:?} does not hold {} samples", stacked.shape(), m.labels.len()),
        }
        .into());
    }
    let item_shape = stacked.shape()[1..].to_vec();
    let per = stacked.numel() / n;
    let features = stacked
        .data()
        .chunks_exact(per)
        .map(|c| Tensor::new(item_shape.clone(), c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(features, m.labels, m.classes, m.source)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.toml");
        let f = |v: &[f32]| Tensor::new(vec![1, 2], v.to_vec()).unwrap();
        let d = LabeledDataset::new(
            vec![f(&[1.0, -2.5]), f(&[0.0, 3.25]), f(&[7.0, 8.0])],
            vec![2, 0, 1],
            3,
            "test",
        )
        .unwrap();
        save_dataset(&d, &path).unwrap();
        assert!(dir.path().join("data.bin").exists());
        assert_eq!(load_dataset(&path).unwrap(), d);
    }

    #[test]
    fn invariants() {
        let t = Tensor::vector(vec![1.0]).unwrap();
        assert!(LabeledDataset::new(vec![t.clone()], vec![], 2, "").is_err());
        assert!(LabeledDataset::new(vec![t.clone()], vec![2], 2, "").is_err());
        let u = Tensor::vector(vec![1.0, 2.0]).unwrap();
        assert!(LabeledDataset::new(vec![t, u], vec![0, 1], 2, "").is_err());
    }
}
