//! Wire types of the pointat HTTP/JSON service.
//!
//! Every path in a request is interpreted on the server's filesystem. Images
//! may instead be sent inline as base64 PNG.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use pointat_core::model::{HeadKind, Preset};
pub use pointat_core::scenegen::{Manifest, Split};
pub use pointat_core::training::{EpochMetrics, EvalReport, FindResult, TeachResult};

pub const API_PREFIX: &str = "/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

/// Broad failure class; decides the HTTP status and the CLI exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Malformed request.
    Usage,
    /// Bad or missing data, mismatched artifacts, rejected inputs.
    Validation,
    NotFound,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{message}")]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
}

impl ApiError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        ApiError { kind, message: message.into() }
    }
}

impl From<pointat_core::Error> for ApiError {
    fn from(e: pointat_core::Error) -> Self {
        ApiError::new(ErrorKind::Validation, e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenDataRequest {
    pub out: PathBuf,
    pub preset: Preset,
    pub seed: u64,
    /// Defaults to the preset's split sizes.
    pub train: Option<usize>,
    pub test: Option<usize>,
    #[serde(default)]
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenDataResponse {
    pub out: PathBuf,
    pub manifest: Manifest,
    /// SHA-256 over the directory contents.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    pub data: PathBuf,
    /// Written after every epoch and when the run stops.
    pub checkpoint: PathBuf,
    /// Per-epoch CSV; defaults to the checkpoint path with a `.csv` extension.
    pub metrics: Option<PathBuf>,
    pub preset: Preset,
    pub head: HeadKind,
    pub modulation: bool,
    pub seed: u64,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    /// Continue from this checkpoint; its configuration wins.
    pub resume: Option<PathBuf>,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Succeeded,
    Failed,
    Cancelled,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        self != JobState::Running
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobCreated {
    pub id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub condition: String,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub steps: u64,
    /// False when stopped by the step limit or cancellation.
    pub completed: bool,
    pub final_eval: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: u64,
    pub state: JobState,
    pub condition: String,
    pub epoch: usize,
    pub epochs: usize,
    pub step: u64,
    pub last_loss: Option<f32>,
    pub history: Vec<EpochMetrics>,
    pub summary: Option<TrainSummary>,
    pub error: Option<ApiError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub checkpoints: Vec<PathBuf>,
    pub data: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub checkpoint: PathBuf,
    pub condition: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResponse {
    pub data: PathBuf,
    pub split: Split,
    pub rows: Vec<EvalRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageInput {
    Path(PathBuf),
    PngBase64(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachRequest {
    pub checkpoint: PathBuf,
    pub store: PathBuf,
    pub name: String,
    pub image: ImageInput,
    #[serde(default)]
    pub overwrite: bool,
    /// Unix seconds recorded as provenance.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachResponse {
    #[serde(flatten)]
    pub result: TeachResult,
    pub source_sha256: String,
    pub store: PathBuf,
    pub objects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindRequest {
    pub checkpoint: PathBuf,
    pub store: PathBuf,
    pub name: String,
    pub image: ImageInput,
    /// Writes a PNG copy of the input with the predicted box drawn on it.
    pub annotate: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindResponse {
    #[serde(flatten)]
    pub result: FindResult,
    /// Predicted box `[x0, y0, x1, y1]` in pixels, sprite-sized.
    pub bbox: [f64; 4],
    pub annotated: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpAttentionRequest {
    pub checkpoint: PathBuf,
    /// Scene with the pointing hand.
    pub image: ImageInput,
    /// Scene searched with the pooled feature; defaults to `image`.
    pub search: Option<ImageInput>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandPoseSummary {
    pub row: usize,
    pub col: usize,
    pub orientation: usize,
    pub angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpAttentionResponse {
    pub out: PathBuf,
    pub grid: [usize; 2],
    /// Exemplar prediction in pixels.
    pub p: (f64, f64),
    /// Search prediction in pixels.
    pub p_hat: (f64, f64),
    pub hand: Option<HandPoseSummary>,
    pub files: Vec<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_input_is_externally_tagged() {
        let v = serde_json::to_value(ImageInput::Path("a.png".into())).unwrap();
        assert_eq!(v, serde_json::json!({"path": "a.png"}));
        let back: ImageInput = serde_json::from_str(r#"{"png_base64": "AAAA"}"#).unwrap();
        assert_eq!(back, ImageInput::PngBase64("AAAA".into()));
    }

    #[test]
    fn errors_carry_their_kind() {
        let e: ApiError = serde_json::from_str(r#"{"kind": "validation", "message": "x"}"#).unwrap();
        assert_eq!(e, ApiError::new(ErrorKind::Validation, "x"));
        assert_eq!(e.to_string(), "x");
    }
}
