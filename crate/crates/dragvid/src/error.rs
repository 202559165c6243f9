use thiserror::Error;

/// Errors produced by the editing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coordinate: ({0}, {1})")]
    InvalidCoordinate(f64, f64),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("frame index {frame} out of range (frame count {count})")]
    FrameOutOfRange { frame: usize, count: usize },

    #[error("timestep {t} out of range (schedule length {t_max})")]
    TimestepOutOfRange { t: usize, t_max: usize },

    #[error("empty point set")]
    EmptyPointSet,

    #[error("unsupported scene kind: {0}")]
    UnsupportedScene(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid drag spec: {0}")]
    DragSpec(String),

    #[error("non-finite {quantity} at frame {frame}, timestep {t}")]
    NonFinite {
        quantity: &'static str,
        frame: usize,
        t: usize,
    },

    #[error("need three frames, got {0}")]
    NeedThreeFrames(usize),

    #[error("frame {height}x{width} too small for window {window}")]
    FrameTooSmall {
        height: usize,
        width: usize,
        window: usize,
    },

    #[error("run aborted: {0}")]
    Aborted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, Error>;
