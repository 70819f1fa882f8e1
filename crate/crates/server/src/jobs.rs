//! Background training jobs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use pointat_api::*;
use pointat_core::scenegen::load_dataset;
use pointat_core::training::{
    check_dataset, evaluate, load_checkpoint, save_checkpoint, train, AdamConfig, TrainConfig, TrainControl,
    TrainEvent, TrainState,
};

use crate::ops::require_exists;

pub struct Job {
    status: Mutex<JobStatus>,
    cancel: AtomicBool,
    checkpoint: PathBuf,
}

impl Job {
    pub fn status(&self) -> JobStatus {
        self.status.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn update(&self, f: impl FnOnce(&mut JobStatus)) {
        f(&mut self.status.lock().unwrap_or_else(|e| e.into_inner()));
    }
}

#[derive(Default)]
pub struct Jobs {
    next: AtomicU64,
    map: Mutex<HashMap<u64, Arc<Job>>>,
}

impl Jobs {
    pub fn get(&self, id: u64) -> Option<Arc<Job>> {
        self.map.lock().unwrap_or_else(|e| e.into_inner()).get(&id).cloned()
    }

    pub fn cancel(&self, id: u64) -> Option<JobStatus> {
        let job = self.get(id)?;
        job.cancel.store(true, Ordering::Relaxed);
        Some(job.status())
    }

    /// Validates the request, prepares the initial state and starts the run on
    /// a dedicated thread.
    pub fn start(self: &Arc<Self>, req: TrainRequest) -> Result<u64, ApiError> {
        let prepared = prepare(&req)?;
        let mut map = self.map.lock().unwrap_or_else(|e| e.into_inner());
        if map.values().any(|j| j.checkpoint == req.checkpoint && !j.status().state.is_terminal()) {
            return Err(ApiError::new(
                ErrorKind::Validation,
                format!("a running job already writes {}", req.checkpoint.display()),
            ));
        }
        let id = self.next.fetch_add(1, Ordering::Relaxed) + 1;
        let state = &prepared.state;
        let job = Arc::new(Job {
            status: Mutex::new(JobStatus {
                id,
                state: JobState::Running,
                condition: state.model.config().condition().to_string(),
                epoch: state.epoch,
                epochs: state.config.epochs,
                step: state.step(),
                last_loss: None,
                history: prepared.history.clone(),
                summary: None,
                error: None,
            }),
            cancel: AtomicBool::new(false),
            checkpoint: req.checkpoint.clone(),
        });
        map.insert(id, Arc::clone(&job));
        drop(map);
        std::thread::Builder::new()
            .name(format!("train-{id}"))
            .spawn(move || {
                let result = run(&req, prepared, &job);
                job.update(|s| match result {
                    Ok(summary) => {
                        s.state = if summary.completed || !job.cancel.load(Ordering::Relaxed) {
                            JobState::Succeeded
                        } else {
                            JobState::Cancelled
                        };
                        s.summary = Some(summary);
                    }
                    Err(e) => {
                        tracing::warn!(job = id, error = %e, "training failed");
                        s.state = JobState::Failed;
                        s.error = Some(e);
                    }
                });
            })
            .map_err(|e| ApiError::new(ErrorKind::Internal, format!("cannot spawn training thread: {e}")))?;
        Ok(id)
    }
}

struct Prepared {
    state: TrainState,
    dataset: pointat_core::scenegen::Dataset,
    history: Vec<EpochMetrics>,
    metrics: PathBuf,
}

fn metrics_path(req: &TrainRequest) -> PathBuf {
    req.metrics.clone().unwrap_or_else(|| req.checkpoint.with_extension("csv"))
}

fn prepare(req: &TrainRequest) -> Result<Prepared, ApiError> {
    require_exists(&req.data, "dataset")?;
    let state = match &req.resume {
        Some(path) => {
            require_exists(path, "checkpoint")?;
            let mut state = load_checkpoint(path)?;
            if let Some(epochs) = req.epochs {
                if epochs < state.epoch {
                    return Err(ApiError::new(
                        ErrorKind::Validation,
                        format!("checkpoint has already completed {} epochs; --epochs {epochs} is smaller", state.epoch),
                    ));
                }
                state.config.epochs = epochs;
            }
            state
        }
        None => {
            let mut config = TrainConfig::new(req.preset);
            config.head = req.head;
            config.modulation = req.modulation;
            config.seed = req.seed;
            config.epochs = req.epochs.unwrap_or(config.epochs);
            config.batch_size = req.batch_size.unwrap_or(config.batch_size);
            config.adam = AdamConfig::new(
                req.lr.unwrap_or(config.adam.lr),
                req.weight_decay.unwrap_or(config.adam.weight_decay),
            );
            TrainState::new(config)?
        }
    };
    let dataset = load_dataset(&req.data)?;
    check_dataset(&state.config, &dataset)?;
    let metrics = metrics_path(req);
    let history = match &req.resume {
        Some(_) if metrics.exists() => {
            let mut rows = read_metrics(&metrics)?;
            rows.retain(|m| m.epoch < state.epoch);
            rows
        }
        _ => Vec::new(),
    };
    Ok(Prepared { state, dataset, history, metrics })
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CsvRow {
    epoch: usize,
    train_loss: f64,
    exemplar_acc: f64,
    search_acc: Option<f64>,
}

fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>, ApiError> {
    let bad = |e: csv::Error| ApiError::new(ErrorKind::Validation, format!("{}: {e}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(bad)?;
    reader
        .deserialize::<CsvRow>()
        .map(|r| {
            r.map(|r| EpochMetrics {
                epoch: r.epoch,
                train_loss: r.train_loss,
                exemplar_acc: r.exemplar_acc,
                search_acc: r.search_acc,
            })
            .map_err(bad)
        })
        .collect()
}

/// Rewrites the whole CSV so a resumed run produces the same file as an
/// uninterrupted one.
pub fn write_metrics(path: &Path, rows: &[EpochMetrics]) -> Result<(), ApiError> {
    let io = |e: csv::Error| ApiError::new(ErrorKind::Validation, format!("{}: {e}", path.display()));
    let tmp = path.with_extension("csv.tmp");
    let mut w = csv::Writer::from_path(&tmp).map_err(io)?;
    for m in rows {
        let row = CsvRow { epoch: m.epoch, train_loss: m.train_loss, exemplar_acc: m.exemplar_acc, search_acc: m.search_acc };
        w.serialize(row).map_err(io)?;
    }
    if rows.is_empty() {
        w.write_record(["epoch", "train_loss", "exemplar_acc", "search_acc"]).map_err(io)?;
    }
    w.flush().map_err(|e| ApiError::new(ErrorKind::Validation, format!("{}: {e}", tmp.display())))?;
    drop(w);
    std::fs::rename(&tmp, path).map_err(|e| ApiError::new(ErrorKind::Validation, format!("{}: {e}", path.display())))
}

fn run(req: &TrainRequest, prepared: Prepared, job: &Job) -> Result<TrainSummary, ApiError> {
    let Prepared { mut state, dataset, mut history, metrics } = prepared;
    write_metrics(&metrics, &history)?;
    let control = TrainControl { max_steps: req.max_steps, skip_eval: false, cancel: Some(&job.cancel) };
    let outcome = train(&mut state, &dataset, &control, |event| {
        match event {
            TrainEvent::Step { epoch, step, loss } => job.update(|s| {
                s.epoch = epoch;
                s.step = step;
                s.last_loss = Some(loss);
            }),
            TrainEvent::Epoch { metrics: m, state } => {
                save_checkpoint(state, &req.checkpoint)?;
                history.push(m);
                write_metrics(&metrics, &history).map_err(|e| pointat_core::Error::Invalid(e.message))?;
                tracing::info!(epoch = m.epoch, loss = m.train_loss, acc = m.exemplar_acc, "epoch finished");
                job.update(|s| {
                    s.epoch = state.epoch;
                    s.history.push(m);
                });
            }
        }
        Ok(())
    })?;
    save_checkpoint(&state, &req.checkpoint)?;
    let final_eval = if outcome.completed && !dataset.test.is_empty() {
        Some(evaluate(&state.model, &dataset.test)?)
    } else {
        None
    };
    Ok(TrainSummary {
        condition: state.model.config().condition().to_string(),
        checkpoint: req.checkpoint.clone(),
        metrics,
        steps: outcome.steps,
        completed: outcome.completed,
        final_eval,
    })
}
