//! Model checkpoints: parameters as an SDT1 tensor next to a JSON manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelSpec};
use crate::error::{Error, Result};
use crate::io::{read_tensor, write_tensor};
use crate::tensor::TensorF;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub n_params: usize,
    pub model: ModelSpec,
}

/// `model.sdt` → `model.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Parameters are stored as f32, so a reload is exact only to f32 precision.
pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let params = TensorF::new(vec![model.params().len()], model.params().to_vec())?;
    write_tensor(path, &params)?;
    let manifest = Manifest {
        format: "SDT1".into(),
        n_params: model.params().len(),
        model: model.spec().clone(),
    };
    std::fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Loads a checkpoint, optionally insisting on a particular architecture.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&ModelSpec>) -> Result<Model> {
    let path = path.as_ref();
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(manifest_path(path))?)?;
    if manifest.format != "SDT1" {
        return Err(Error::CheckpointMismatch(format!("unknown format {:?}", manifest.format)));
    }
    if let Some(spec) = expected {
        if spec.kind != manifest.model.kind
            || spec.feature_set != manifest.model.feature_set
            || spec.classes != manifest.model.classes
            || spec.n_params() != manifest.n_params
        {
            return Err(Error::CheckpointMismatch("architecture differs from the checkpoint".into()));
        }
    }
    let params = read_tensor(path)?;
    if params.dims() != [manifest.n_params] {
        return Err(Error::CheckpointMismatch(format!(
            "manifest says {} parameters, tensor has dims {:?}",
            manifest.n_params,
            params.dims()
        )));
    }
    Model::from_params(manifest.model, params.into_data())
}
