use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("image size {got_w}x{got_h} does not match preset `{preset}` ({want_w}x{want_h}); resize the image to {want_w}x{want_h}")]
    ImageSize {
        preset: String,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },

    #[error("non-finite gradient in parameter `{0}`; optimizer step aborted")]
    NonFiniteGradient(String),

    #[error("scene placement failed after {attempts} attempts: {detail}; use fewer or smaller sprites")]
    Placement { attempts: usize, detail: String },

    #[error("unknown object `{name}`; known objects: [{}]", known.join(", "))]
    UnknownObject { name: String, known: Vec<String> },

    #[error("object `{0}` already exists in the store; pass --overwrite to replace it")]
    DuplicateObject(String),

    #[error("dataset/model mismatch: {0}")]
    Mismatch(String),

    #[error("output directory {0} exists and is not empty; pass --force to overwrite")]
    NotEmpty(PathBuf),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Errors caused by the caller's inputs rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}
