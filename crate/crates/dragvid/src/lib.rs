//! Point-based video drag editing at desk scale.
//!
//! Given handle points, target points, and optional mask points on the first
//! frame of a video, the pipeline propagates them across frames, optimizes
//! per-frame latent offsets at several noising timesteps under a video-level
//! motion supervision loss, advances all frames' handle points by one shared
//! tracking step per iteration, and decodes the edited frames. A synthetic
//! scene generator with exact flow and masks provides the segmentation and
//! correspondence oracles, and a temporal smoothness metric scores results.
//!
//! See the `examples/` directory for one runnable example per capability;
//! the `dragvid` binary exposes `run`, `render`, and `metric` subcommands.

pub mod backbone;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod propagate;
pub mod rng;
pub mod supervise;
pub mod synth;
pub mod track;

pub use error::{Error, Result};
pub use grid::{
    bilinear_sample, patch_center_index, patch_offsets, sample_patch, Grid2D, Point, PointLabel,
    PointSet,
};

/// A video is a sequence of equally shaped frames.
pub type VideoGrid = Vec<Grid2D>;
