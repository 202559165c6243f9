//! JSON run configuration.
//!
//! Exactly one of `scene` / `input_dir` selects the video source. Unknown
//! keys are rejected by name; omitted hyperparameters fall back to the
//! defaults listed on each field. Point coordinates are sub-pixel `[x, y]`
//! pairs with the origin at the top-left cell center.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::RunConfig;
use crate::error::{Error, Result};
use crate::grid::Point;
use crate::propagate::DragSpec;
use crate::supervise::SupervisionConfig;
use crate::synth::{SceneKind, SceneSpec};
use crate::track::{TrackConfig, TrackReferenceMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub kind: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub velocity: [f64; 2],
    #[serde(default)]
    pub angular_rate: f64,
    #[serde(default)]
    pub jitter: [f64; 2],
    #[serde(default)]
    pub texture_seed: u64,
}

impl SceneConfig {
    pub fn to_spec(&self) -> Result<SceneSpec> {
        let spec = SceneSpec {
            kind: SceneKind::parse(&self.kind)?,
            frames: self.frames,
            height: self.height,
            width: self.width,
            velocity: (self.velocity[0], self.velocity[1]),
            angular_rate: self.angular_rate,
            jitter: (self.jitter[0], self.jitter[1]),
            texture_seed: self.texture_seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DragConfig {
    pub handles: Vec<[f64; 2]>,
    pub targets: Vec<[f64; 2]>,
    #[serde(default)]
    pub mask_points: Vec<[f64; 2]>,
}

impl DragConfig {
    pub fn to_spec(&self) -> DragSpec {
        let p = |a: &[f64; 2]| Point::new(a[0], a[1]);
        DragSpec {
            handles: self.handles.iter().map(p).collect(),
            targets: self.targets.iter().map(p).collect(),
            mask_points: self.mask_points.iter().map(p).collect(),
        }
    }
}

fn default_timesteps() -> Vec<usize> {
    vec![42, 41, 35, 30]
}
fn default_track_range() -> f64 {
    3.0
}
fn default_track_step() -> f64 {
    0.5
}
fn default_supervision_patch_radius() -> usize {
    1
}
fn default_track_patch_radius() -> usize {
    2
}
fn default_handle_set_radius() -> usize {
    1
}
fn default_mask_patch_radius() -> usize {
    4
}
fn default_mask_weight() -> f64 {
    0.1
}
fn default_ema() -> f64 {
    0.8
}
fn default_learning_rate() -> f64 {
    0.01
}
fn default_max_iterations() -> usize {
    60
}
fn default_tolerance() -> f64 {
    1.0
}
fn default_track_reference() -> TrackReferenceMode {
    TrackReferenceMode::EmaReference
}
fn default_supervision_steps() -> usize {
    1
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Full run configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dir: Option<PathBuf>,
    pub drag: DragConfig,
    /// Selected noising timesteps.
    #[serde(default = "default_timesteps")]
    pub timesteps: Vec<usize>,
    /// Maximum tracking step magnitude, px.
    #[serde(default = "default_track_range")]
    pub track_range: f64,
    /// Tracking candidate spacing, px.
    #[serde(default = "default_track_step")]
    pub track_step: f64,
    #[serde(default = "default_supervision_patch_radius")]
    pub supervision_patch_radius: usize,
    #[serde(default = "default_track_patch_radius")]
    pub track_patch_radius: usize,
    #[serde(default = "default_handle_set_radius")]
    pub handle_set_radius: usize,
    #[serde(default = "default_mask_patch_radius")]
    pub mask_patch_radius: usize,
    #[serde(default = "default_mask_weight")]
    pub mask_weight: f64,
    /// Reference moving-average coefficient.
    #[serde(default = "default_ema")]
    pub ema: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Convergence tolerance, px.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Master seed controlling all randomness.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_track_reference")]
    pub track_reference: TrackReferenceMode,
    #[serde(default = "default_supervision_steps")]
    pub supervision_steps_per_track: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ConfigFile {
    /// Minimal config: a scene plus handle/target pairs, everything else
    /// defaulted.
    pub fn minimal(scene: SceneConfig, drag: DragConfig) -> Self {
        ConfigFile {
            scene: Some(scene),
            input_dir: None,
            drag,
            timesteps: default_timesteps(),
            track_range: default_track_range(),
            track_step: default_track_step(),
            supervision_patch_radius: default_supervision_patch_radius(),
            track_patch_radius: default_track_patch_radius(),
            handle_set_radius: default_handle_set_radius(),
            mask_patch_radius: default_mask_patch_radius(),
            mask_weight: default_mask_weight(),
            ema: default_ema(),
            learning_rate: default_learning_rate(),
            max_iterations: default_max_iterations(),
            tolerance: default_tolerance(),
            seed: 0,
            track_reference: default_track_reference(),
            supervision_steps_per_track: default_supervision_steps(),
            output_dir: default_output_dir(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.scene, &self.input_dir) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "config must set exactly one of `scene` and `input_dir`, got both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "config must set exactly one of `scene` and `input_dir`".into(),
                ))
            }
            _ => {}
        }
        if self.drag.handles.len() != self.drag.targets.len() {
            return Err(Error::Config(format!(
                "`drag.handles` has {} points but `drag.targets` has {}",
                self.drag.handles.len(),
                self.drag.targets.len()
            )));
        }
        if self.drag.handles.is_empty() {
            return Err(Error::Config("`drag.handles` must be non-empty".into()));
        }
        for (key, pts) in [
            ("drag.handles", &self.drag.handles),
            ("drag.targets", &self.drag.targets),
            ("drag.mask_points", &self.drag.mask_points),
        ] {
            for (i, p) in pts.iter().enumerate() {
                if !(p[0].is_finite() && p[1].is_finite()) || p[0] < 0.0 || p[1] < 0.0 {
                    return Err(Error::Config(format!(
                        "`{key}[{i}]` at ({}, {}) is out of bounds",
                        p[0], p[1]
                    )));
                }
                if let Some(scene) = &self.scene {
                    if p[0] > (scene.width - 1) as f64 || p[1] > (scene.height - 1) as f64 {
                        return Err(Error::Config(format!(
                            "`{key}[{i}]` at ({}, {}) is out of bounds for {}x{}",
                            p[0], p[1], scene.width, scene.height
                        )));
                    }
                }
            }
        }
        if let Some(scene) = &self.scene {
            scene.to_spec()?;
        }
        self.run_config().validate(50)
    }

    /// Engine configuration assembled from this file.
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            handle_set_radius: self.handle_set_radius,
            mask_patch_radius: self.mask_patch_radius,
            supervision: SupervisionConfig {
                patch_radius: self.supervision_patch_radius,
                mask_weight: self.mask_weight,
                ema: self.ema,
                learning_rate: self.learning_rate,
                timesteps: self.timesteps.clone(),
                ..Default::default()
            },
            track: TrackConfig {
                max_range: self.track_range,
                step_size: self.track_step,
                patch_radius: self.track_patch_radius,
                reference: self.track_reference,
            },
            supervision_steps_per_track: self.supervision_steps_per_track,
            seed: self.seed,
        }
    }
}

/// Parse and validate a config file.
pub fn parse_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)?;
    let cfg: ConfigFile =
        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
