use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },

    #[error("invalid shape for {op}: {reason}")]
    InvalidShape { op: &'static str, reason: String },

    #[error("channel mismatch in {op}: expected {expected}, got {got}")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error(
        "groups={groups} must divide in_channels={in_channels} and out_channels={out_channels}"
    )]
    InvalidGroups {
        groups: usize,
        in_channels: usize,
        out_channels: usize,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("non-finite gradient for parameter `{0}`, step rejected")]
    NonFiniteGradient(String),

    #[error("backward requires a scalar (1, 1, 1, 1) loss, got {0}")]
    NonScalarLoss(Shape),

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("value of node {0} was released")]
    Released(usize),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("mask {path} has non-binary value {value} at (y={y}, x={x})")]
    NonBinaryMask {
        path: PathBuf,
        value: u8,
        y: u32,
        x: u32,
    },

    #[error("non-binary value {value} at flat index {index}")]
    NonBinary { value: f64, index: usize },

    #[error("image is {image_hw:?} but mask is {mask_hw:?}")]
    DimensionMismatch {
        image_hw: (u32, u32),
        mask_hw: (u32, u32),
    },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error(
        "unmatched files: only in {left_dir}: {only_left:?}; only in {right_dir}: {only_right:?}"
    )]
    UnmatchedFiles {
        left_dir: PathBuf,
        right_dir: PathBuf,
        only_left: Vec<String>,
        only_right: Vec<String>,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(
        "checkpoint does not match model: model expects {expected:?}, checkpoint has {found:?}"
    )]
    CheckpointMismatch {
        expected: Vec<(String, Vec<usize>)>,
        found: Vec<(String, Vec<usize>)>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable category used in machine-readable error lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. }
            | Error::InvalidShape { .. }
            | Error::ChannelMismatch { .. }
            | Error::InvalidGroups { .. }
            | Error::NonScalarLoss(_) => "shape",
            Error::NonFinite(_) | Error::NonFiniteGradient(_) | Error::NonFiniteLoss { .. } => {
                "numeric"
            }
            Error::EmptyTape | Error::Released(_) => "internal",
            Error::Config(_) => "config",
            Error::Empty(_) => "empty",
            Error::Io { .. } => "io",
            Error::Image { .. }
            | Error::NonBinaryMask { .. }
            | Error::NonBinary { .. }
            | Error::DimensionMismatch { .. }
            | Error::UnmatchedFiles { .. } => "data",
            Error::Checkpoint(_) | Error::CheckpointMismatch { .. } => "checkpoint",
        }
    }
}
