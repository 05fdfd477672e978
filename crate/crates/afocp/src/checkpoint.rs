//! JSON checkpoints for models and attention parameters.
//!
//! Matrices are stored as `{"rows", "cols", "data"}` with row-major data.
//! Floats are written in shortest round-trip form, so a save/load cycle is
//! lossless.

use std::path::Path;

use afocp_core::attention::AttentionParams;
use afocp_core::neuralnet::TwoStageModel;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{io_err, Result};
use crate::fsutil::write_atomic;

fn save<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_model(path: &Path, model: &TwoStageModel) -> Result<()> {
    save(path, model)
}

/// Loads and re-validates shapes.
pub fn load_model(path: &Path) -> Result<TwoStageModel> {
    let raw: TwoStageModel = load(path)?;
    Ok(TwoStageModel::new(raw.extractor, raw.head)?)
}

pub fn save_attention(path: &Path, params: &AttentionParams) -> Result<()> {
    save(path, params)
}

pub fn load_attention(path: &Path) -> Result<AttentionParams> {
    let raw: AttentionParams = load(path)?;
    raw.validate()?;
    Ok(raw)
}
