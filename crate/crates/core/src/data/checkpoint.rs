use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::data::thr1::{read_tensor, write_tensor};
use crate::data::DataError;
use crate::scalar::Scalar;

/// One tensor file of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

/// Writes each parameter as `{prefix}{i:04}.thr1` in store order.
pub fn save_params<T: Scalar>(store: &ParamStore<T>, dir: &Path, prefix: &str) -> Result<Vec<TensorEntry>, DataError> {
    store
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let file = format!("{prefix}{i:04}.thr1");
            write_tensor(&dir.join(&file), &p.value)?;
            Ok(TensorEntry {
                name: p.name.clone(),
                file,
                shape: p.value.shape().to_vec(),
            })
        })
        .collect()
}

/// Overwrites the values of `store` by name. Every parameter must be listed
/// with a matching shape.
pub fn load_params<T: Scalar>(store: &mut ParamStore<T>, dir: &Path, entries: &[TensorEntry]) -> Result<(), DataError> {
    if entries.len() != store.len() {
        return Err(DataError::Invalid(format!(
            "checkpoint has {} parameters, model has {}",
            entries.len(),
            store.len()
        )));
    }
    for e in entries {
        let id = store
            .id(&e.name)
            .ok_or_else(|| DataError::Invalid(format!("unknown parameter {}", e.name)))?;
        let t: Tensor<T> = read_tensor(&dir.join(&e.file))?;
        if t.shape() != store.value(id).shape() {
            return Err(DataError::Invalid(format!(
                "parameter {}: file shape {:?}, model shape {:?}",
                e.name,
                t.shape(),
                store.value(id).shape()
            )));
        }
        store.set_value(id, t)?;
    }
    Ok(())
}

/// Writes plain tensors as `{prefix}{i:04}.thr1`.
pub fn save_tensors<T: Scalar>(tensors: &[Tensor<T>], dir: &Path, prefix: &str) -> Result<Vec<TensorEntry>, DataError> {
    tensors
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let file = format!("{prefix}{i:04}.thr1");
            write_tensor(&dir.join(&file), t)?;
            Ok(TensorEntry {
                name: format!("{prefix}{i}"),
                file,
                shape: t.shape().to_vec(),
            })
        })
        .collect()
}

pub fn load_tensors<T: Scalar>(dir: &Path, entries: &[TensorEntry]) -> Result<Vec<Tensor<T>>, DataError> {
    entries.iter().map(|e| read_tensor(&dir.join(&e.file))).collect()
}
