//! Training-state checkpoints in the named-tensor container.
//!
//! Entries, in order: `meta/kind`, `meta/config` (JSON echo of the training
//! config), `meta/state` (epoch, cursor), `meta/step`, `meta/epoch_loss`,
//! `meta/epoch_batches`, then `param/<name>` for every parameter and
//! `adam/m/<name>`, `adam/v/<name>` for every parameter.

use std::path::Path;

use super::container::Container;
use super::optim::AdamState;
use super::trainer::{TrainConfig, TrainState};
use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

const KIND: &[u8] = b"pointat-checkpoint";

fn bad(detail: impl Into<String>) -> Error {
    Error::Format { what: "checkpoint", detail: detail.into() }
}

pub fn checkpoint_to_container(state: &TrainState) -> Result<Container> {
    let mut c = Container::default();
    c.push_bytes("meta/kind", KIND);
    c.push_bytes("meta/config", serde_json::to_string(&state.config)?.as_bytes());
    c.push_u32s("meta/state", &[state.epoch as u32, state.cursor as u32]);
    c.push_u64("meta/step", state.adam.step);
    c.push_f64("meta/epoch_loss", state.epoch_loss_sum);
    c.push_u64("meta/epoch_batches", state.epoch_batches);
    let params = state.model.params();
    for (_, name, t) in params.iter() {
        c.push(format!("param/{name}"), t.clone());
    }
    for (id, name, t) in params.iter() {
        for (kind, buf) in [("m", &state.adam.m[id.0]), ("v", &state.adam.v[id.0])] {
            c.push(format!("adam/{kind}/{name}"), Tensor::new(t.shape().to_vec(), buf.clone())?);
        }
    }
    Ok(c)
}

fn read_config(c: &Container) -> Result<TrainConfig> {
    if c.bytes("meta/kind")? != KIND {
        return Err(bad("not a training checkpoint"));
    }
    let json = c.bytes("meta/config")?;
    Ok(serde_json::from_slice(&json)?)
}

fn read_params(c: &Container) -> Result<ParamSet<f32>> {
    let mut params = ParamSet::new();
    for (name, t) in &c.entries {
        if let Some(p) = name.strip_prefix("param/") {
            params.insert(p, t.clone())?;
        }
    }
    Ok(params)
}

pub fn checkpoint_from_container(c: &Container) -> Result<TrainState> {
    let config = read_config(c)?;
    let model = Model::with_params(config.model_config(), read_params(c)?)?;
    let mut adam = AdamState::new(model.params());
    adam.step = c.u64("meta/step")?;
    for (id, name, _) in model.params().iter() {
        adam.m[id.0] = c.require(&format!("adam/m/{name}"))?.data().to_vec();
        adam.v[id.0] = c.require(&format!("adam/v/{name}"))?.data().to_vec();
    }
    let [epoch, cursor] = c.u32s("meta/state")?[..] else {
        return Err(bad("meta/state must hold epoch and cursor"));
    };
    Ok(TrainState {
        config,
        model,
        adam,
        epoch: epoch as usize,
        cursor: cursor as usize,
        epoch_loss_sum: c.f64("meta/epoch_loss")?,
        epoch_batches: c.u64("meta/epoch_batches")?,
    })
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    checkpoint_to_container(state)?.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    checkpoint_from_container(&Container::load(path)?)
}

/// Model only (no optimizer state), for inference.
pub fn load_model(path: &Path) -> Result<Model> {
    let c = Container::load(path)?;
    let config = read_config(&c)?;
    Model::with_params(config.model_config(), read_params(&c)?)
}
