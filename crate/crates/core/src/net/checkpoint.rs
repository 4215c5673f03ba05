//! Model checkpoints as JSON.
//!
//! Layout (version 1):
//!
//! ```text
//! {
//!   "format_version": 1,
//!   "net": { "config": NetConfig, "layers": [ { "weights": {rows, cols, data}, "bias": [..] }, .. ] },
//!   "velocity": [ Layer, .. ],
//!   "epoch": usize,
//!   "current_d": null | { "entries": {rows, cols, data}, "provenance": "ordinal" | "learned" | "external" }
//! }
//! ```
//!
//! All numbers are written with shortest round-trip formatting, so a
//! save/load cycle reproduces every `f64` bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Layer, Mlp};
use super::train::ModelState;
use crate::error::{Error, Result};
use crate::ground_distance::GroundMatrix;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    net: Mlp,
    velocity: Vec<Layer>,
    epoch: usize,
    current_d: Option<GroundMatrix>,
}

pub fn checkpoint_to_string(model: &ModelState) -> Result<String> {
    let file = CheckpointFile {
        format_version: CHECKPOINT_VERSION,
        net: model.net.clone(),
        velocity: model.velocity.clone(),
        epoch: model.epoch,
        current_d: model.current_d.clone(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn checkpoint_from_str(text: &str) -> Result<ModelState> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    if file.format_version != CHECKPOINT_VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            file.format_version
        )));
    }
    // re-validate shapes and ground-matrix invariants
    let net = Mlp::from_layers(file.net.config().clone(), file.net.layers().to_vec())?;
    let velocity_ok = file.velocity.len() == net.layers().len()
        && file.velocity.iter().zip(net.layers()).all(|(v, l)| {
            v.weights.rows() == l.weights.rows() && v.weights.cols() == l.weights.cols() && v.bias.len() == l.bias.len()
        });
    if !velocity_ok {
        return Err(Error::InvalidInput("checkpoint momentum buffers do not match the network".into()));
    }
    let current_d = file
        .current_d
        .map(|d| GroundMatrix::new(d.matrix().clone(), d.provenance()))
        .transpose()?;
    Ok(ModelState {
        net,
        velocity: file.velocity,
        epoch: file.epoch,
        current_d,
    })
}

pub fn save_checkpoint(path: &Path, model: &ModelState) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}
