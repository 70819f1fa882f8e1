//! Training loop: per-sample tapes, ordered gradient reduction, Adam.

use std::sync::atomic::{AtomicBool, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalReport};
use super::optim::{AdamConfig, AdamState};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::imageio::rgb_to_tensor;
use crate::model::{normalize_point, HeadKind, Model, ModelConfig, Preset};
use crate::scenegen::{Dataset, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub preset: Preset,
    pub head: HeadKind,
    /// False reproduces the no-modulation ablation.
    pub modulation: bool,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// lr 1e-4, weight decay 1e-8, batch 8; 50 epochs for the default preset
    /// and 200 for the small one.
    pub fn new(preset: Preset) -> Self {
        TrainConfig {
            preset,
            head: HeadKind::Siamese,
            modulation: true,
            adam: AdamConfig::default(),
            batch_size: 8,
            epochs: match preset {
                Preset::Default => 50,
                Preset::Small => 200,
            },
            seed: 0,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::new(self.preset, self.head, self.modulation && self.head == HeadKind::Siamese)
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: AdamState,
    /// Epoch in progress (0-based).
    pub epoch: usize,
    /// Next batch within the epoch.
    pub cursor: usize,
    /// Sum and count of batch losses so far in the current epoch.
    pub epoch_loss_sum: f64,
    pub epoch_batches: u64,
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::init(config.model_config(), config.seed)?;
        let adam = AdamState::new(model.params());
        Ok(TrainState { config, model, adam, epoch: 0, cursor: 0, epoch_loss_sum: 0.0, epoch_batches: 0 })
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }
}

/// Sample order of an epoch; a pure function of `(seed, epoch)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Rejects datasets whose preset or image size does not match the model.
pub fn check_dataset(config: &TrainConfig, dataset: &Dataset) -> Result<()> {
    let have = dataset.manifest.config.preset;
    if have != config.preset {
        return Err(Error::Mismatch(format!("dataset was generated for preset `{have}`, training uses `{}`", config.preset)));
    }
    let arch = config.preset.arch();
    for s in dataset.train.iter().chain(&dataset.test).take(1) {
        let (w, h) = s.exemplar.dimensions();
        if (w as usize, h as usize) != (arch.input_w, arch.input_h) {
            return Err(Error::Mismatch(format!(
                "dataset images are {w}×{h}, preset `{}` expects {}×{}",
                config.preset, arch.input_w, arch.input_h
            )));
        }
    }
    if dataset.train.is_empty() {
        return Err(Error::Invalid("dataset has no training samples".into()));
    }
    Ok(())
}

/// Loss of one sample (exemplar MSE, plus search MSE for the Siamese head)
/// in normalized image coordinates, with parameter gradients if requested.
pub fn sample_loss(model: &Model, sample: &Sample, with_grads: bool) -> Result<(f32, Option<Vec<Option<Vec<f32>>>>)> {
    let arch = model.arch();
    let (w, h) = (arch.input_w, arch.input_h);
    let r = &sample.record;
    let label = normalize_point((r.target_pos[0], r.target_pos[1]), w, h);
    let mut tape = Tape::new(model.params());
    let x = tape.constant(rgb_to_tensor(&sample.exemplar));
    let net = model.net();
    let (p, ex) = net.predict_exemplar(&mut tape, x)?;
    let mut loss = tape.mse(p, &[label.0 as f32, label.1 as f32])?;
    if let Some(ex) = ex {
        let label_s = normalize_point((r.target_pos_search[0], r.target_pos_search[1]), w, h);
        let y = tape.constant(rgb_to_tensor(&sample.search));
        let s = net.search(&mut tape, y, ex.f)?;
        let ls = tape.mse(s.p_norm, &[label_s.0 as f32, label_s.1 as f32])?;
        loss = tape.add(loss, ls)?;
    }
    let value = tape.value(loss).data()[0];
    let grads = if with_grads { Some(tape.backward(loss)?.into_param_grads()) } else { None };
    Ok((value, grads))
}

/// One optimizer step on `batch`; returns the mean sample loss. Gradients are
/// summed in batch order, so the result does not depend on thread count.
pub fn train_step(state: &mut TrainState, batch: &[&Sample]) -> Result<f32> {
    let model = &state.model;
    let results: Vec<(f32, Vec<Option<Vec<f32>>>)> = batch
        .par_iter()
        .map(|s| sample_loss(model, s, true).map(|(l, g)| (l, g.expect("requested"))))
        .collect::<Result<_>>()?;
    let n = batch.len() as f32;
    let mut total: Vec<Option<Vec<f32>>> = vec![None; model.params().len()];
    let mut loss = 0.0f32;
    for (l, grads) in results {
        loss += l;
        for (acc, g) in total.iter_mut().zip(grads) {
            if let Some(g) = g {
                match acc {
                    Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += *y),
                    None => *acc = Some(g),
                }
            }
        }
    }
    for g in total.iter_mut().flatten() {
        g.iter_mut().for_each(|x| *x /= n);
    }
    let cfg = state.config.adam;
    state.adam.step(state.model.params_mut(), &total, &cfg)?;
    Ok(loss / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub exemplar_acc: f64,
    /// Absent for the regression baselines, which have no search branch.
    pub search_acc: Option<f64>,
}

#[derive(Debug)]
pub enum TrainEvent<'a> {
    Step { epoch: usize, step: u64, loss: f32 },
    /// Fired after the epoch's test evaluation; the state already points at
    /// the next epoch, so it is a valid resume point.
    Epoch { metrics: EpochMetrics, state: &'a TrainState },
}

#[derive(Debug, Default)]
pub struct TrainControl<'a> {
    /// Stop after this many optimizer steps in total (across resumes).
    pub max_steps: Option<u64>,
    /// Skip the per-epoch test evaluation.
    pub skip_eval: bool,
    pub cancel: Option<&'a AtomicBool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub completed: bool,
    pub steps: u64,
    pub epochs: Vec<EpochMetrics>,
}

/// Runs (or continues) training until the configured epoch count, the step
/// limit, or cancellation.
pub fn train(
    state: &mut TrainState,
    dataset: &Dataset,
    control: &TrainControl<'_>,
    mut on_event: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    check_dataset(&state.config, dataset)?;
    let n = dataset.train.len();
    let bs = state.config.batch_size;
    let batches = n.div_ceil(bs);
    let mut epochs = Vec::new();
    while !state.finished() {
        let order = epoch_order(state.config.seed, state.epoch, n);
        while state.cursor < batches {
            if control.max_steps.is_some_and(|m| state.step() >= m) || control.cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
                return Ok(TrainOutcome { completed: false, steps: state.step(), epochs });
            }
            let idx = &order[state.cursor * bs..((state.cursor + 1) * bs).min(n)];
            let batch: Vec<&Sample> = idx.iter().map(|i| &dataset.train[*i]).collect();
            let loss = train_step(state, &batch)?;
            state.cursor += 1;
            state.epoch_loss_sum += loss as f64;
            state.epoch_batches += 1;
            on_event(TrainEvent::Step { epoch: state.epoch, step: state.step(), loss })?;
        }
        let report = if control.skip_eval || dataset.test.is_empty() {
            None
        } else {
            Some(evaluate(&state.model, &dataset.test)?)
        };
        let metrics = EpochMetrics {
            epoch: state.epoch,
            train_loss: state.epoch_loss_sum / state.epoch_batches.max(1) as f64,
            exemplar_acc: report.map_or(f64::NAN, |r: EvalReport| r.exemplar_acc),
            search_acc: report.and_then(|r| r.search_acc),
        };
        state.epoch += 1;
        state.cursor = 0;
        state.epoch_loss_sum = 0.0;
        state.epoch_batches = 0;
        epochs.push(metrics);
        on_event(TrainEvent::Epoch { metrics, state })?;
    }
    Ok(TrainOutcome { completed: true, steps: state.step(), epochs })
}
