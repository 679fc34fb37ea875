//! JSON checkpoint: model config, scaler and every tensor with its declared shape.
//! Floats are written with shortest round-trip formatting, so save/load is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelConfig, ModelParams, ParamTensors};
use crate::series::ScalerParams;

pub const FORMAT: &str = "cnn-tft-checkpoint/1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model: ModelConfig,
    pub scaler: ScalerParams,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, scaler: ScalerParams) -> Self {
        let tensors = params
            .tensors
            .named()
            .into_iter()
            .map(|(name, v)| TensorRecord {
                name,
                shape: v.shape.to_vec(),
                data: v.data.to_vec(),
            })
            .collect();
        Self {
            format: FORMAT.to_string(),
            model: params.config,
            scaler,
            tensors,
        }
    }

    pub fn into_parts(self) -> Result<(ModelParams, ScalerParams), CheckpointError> {
        let bad = |m: String| Err(CheckpointError::BadCheckpoint(m));
        if self.format != FORMAT {
            return bad(format!("unknown format {:?}", self.format));
        }
        self.model
            .validate()
            .map_err(|e| CheckpointError::BadCheckpoint(e.to_string()))?;
        if !(self.scaler.std > 0.0) || !self.scaler.mean.is_finite() {
            return bad("scaler std must be positive".into());
        }
        let mut tensors = ParamTensors::zeros(&self.model);
        let expected: Vec<(String, Vec<usize>)> = tensors
            .named()
            .into_iter()
            .map(|(n, v)| (n, v.shape.to_vec()))
            .collect();
        if expected.len() != self.tensors.len() {
            return bad(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            ));
        }
        for ((name, shape), rec) in expected.iter().zip(&self.tensors) {
            if *name != rec.name || *shape != rec.shape {
                return bad(format!(
                    "tensor {:?} {:?} does not match expected {:?} {:?}",
                    rec.name, rec.shape, name, shape
                ));
            }
            if rec.data.len() != shape.iter().product::<usize>() {
                return bad(format!("tensor {:?} has wrong element count", rec.name));
            }
            if rec.data.iter().any(|v| !v.is_finite()) {
                return bad(format!("tensor {:?} has non-finite entries", rec.name));
            }
        }
        for (dst, rec) in tensors.slices_mut().into_iter().zip(&self.tensors) {
            dst.copy_from_slice(&rec.data);
        }
        Ok((
            ModelParams {
                config: self.model,
                tensors,
            },
            self.scaler,
        ))
    }
}

pub fn save(
    params: &ModelParams,
    scaler: ScalerParams,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &Checkpoint::new(params, scaler))?;
    out.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(ModelParams, ScalerParams), CheckpointError> {
    let reader = BufReader::new(File::open(path)?);
    let ckpt: Checkpoint = serde_json::from_reader(reader)?;
    ckpt.into_parts()
}
