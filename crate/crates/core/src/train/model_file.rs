//! Versioned JSON model files.
//!
//! The header (format version, dims, dropout rates, training config,
//! normalization statistics) is plain JSON. Each weight tensor is stored as
//! base64 of its row-major little-endian `f64` bytes, so a save/load round
//! trip is bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TrainConfig;
use crate::brnn::{DropoutSpec, NetworkDims, NetworkParams};
use crate::cmapss::NormStats;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model format version {found} (this build reads {FORMAT_VERSION})")]
    Version { found: u64 },
    #[error("model shape error: {0}")]
    Shape(String),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
}

/// Everything needed to run a trained model on raw telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub params: NetworkParams,
    pub config: TrainConfig,
    pub normalization: Option<NormStats>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    dims: NetworkDims,
    dropout_spec: DropoutSpec,
    config: TrainConfig,
    normalization: Option<NormStats>,
    weights: Vec<TensorBlob>,
}

#[derive(Serialize, Deserialize)]
struct TensorBlob {
    name: String,
    rows: usize,
    cols: usize,
    data: String,
}

fn shapes(dims: &NetworkDims) -> [(usize, usize); 8] {
    let (i, h1, h2) = (dims.input, dims.hidden1, dims.hidden2);
    [
        (4 * h1, i),
        (4 * h1, h1),
        (4 * h1, 1),
        (4 * h2, h1),
        (4 * h2, h2),
        (4 * h2, 1),
        (1, h2),
        (1, 1),
    ]
}

pub fn model_to_json(model: &SavedModel) -> Result<String, ModelFileError> {
    let dims = model.config.dims();
    model
        .params
        .check_shape(&dims)
        .map_err(|e| ModelFileError::Shape(e.to_string()))?;
    if !model.params.is_finite() {
        return Err(ModelFileError::Corrupt(
            "refusing to save non-finite weights".into(),
        ));
    }
    let weights = NetworkParams::TENSOR_NAMES
        .iter()
        .zip(model.params.tensors())
        .zip(shapes(&dims))
        .map(|((name, values), (rows, cols))| {
            let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
            TensorBlob {
                name: name.to_string(),
                rows,
                cols,
                data: STANDARD.encode(bytes),
            }
        })
        .collect();
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        dims,
        dropout_spec: model.config.dropout,
        config: model.config.clone(),
        normalization: model.normalization.clone(),
        weights,
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    Ok(text)
}

pub fn model_from_json(text: &str) -> Result<SavedModel, ModelFileError> {
    let raw: serde_json::Value = serde_json::from_str(text)?;
    match raw.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        Some(found) => return Err(ModelFileError::Version { found }),
        None => return Err(ModelFileError::Corrupt("missing format_version".into())),
    }
    let file: ModelFile = serde_json::from_value(raw)?;
    let dims = file.dims;
    if file.config.dims() != dims {
        return Err(ModelFileError::Shape(format!(
            "header dims {dims:?} disagree with config dims {:?}",
            file.config.dims()
        )));
    }
    if file.config.dropout != file.dropout_spec {
        return Err(ModelFileError::Corrupt(
            "dropout_spec disagrees with the training config".into(),
        ));
    }
    if file.weights.len() != 8 {
        return Err(ModelFileError::Shape(format!(
            "expected 8 weight tensors, found {}",
            file.weights.len()
        )));
    }
    let mut params = NetworkParams::zeros(&dims);
    for (((blob, name), want), dst) in file
        .weights
        .iter()
        .zip(NetworkParams::TENSOR_NAMES)
        .zip(shapes(&dims))
        .zip(params.tensors_mut())
    {
        if blob.name != name {
            return Err(ModelFileError::Corrupt(format!(
                "expected tensor {name}, found {}",
                blob.name
            )));
        }
        if (blob.rows, blob.cols) != want {
            return Err(ModelFileError::Shape(format!(
                "{name}: declared {}x{}, dims imply {}x{}",
                blob.rows, blob.cols, want.0, want.1
            )));
        }
        let bytes = STANDARD
            .decode(&blob.data)
            .map_err(|e| ModelFileError::Corrupt(format!("{name}: {e}")))?;
        if bytes.len() != dst.len() * 8 {
            return Err(ModelFileError::Shape(format!(
                "{name}: {} bytes of data for {} values",
                bytes.len(),
                dst.len()
            )));
        }
        for (v, chunk) in dst.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(ModelFileError::Corrupt(format!(
                    "{name}: non-finite weight"
                )));
            }
        }
    }
    Ok(SavedModel {
        params,
        config: file.config,
        normalization: file.normalization,
    })
}

pub fn save_model(model: &SavedModel, path: &Path) -> Result<(), ModelFileError> {
    let text = model_to_json(model)?;
    std::fs::write(path, text).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<SavedModel, ModelFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    model_from_json(&text)
}
