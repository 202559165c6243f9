//! Temporally consistent point tracking.
//!
//! After each latent update, one shared scalar step is chosen for all frames
//! by scanning a discrete candidate grid and minimizing the summed feature
//! distance between the patch at the stepped handle position and each
//! point's reference patch. Every frame's handle set then advances by that
//! shared step along its own handle-to-target direction, capped per frame so
//! points never overshoot their targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{sample_patch, Grid2D, Point, PointSet};
use crate::supervise::CONVERGED_EPS;

/// Which reference patch the tracking objective compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackReferenceMode {
    /// Moving average of per-frame handle patches over iterations.
    EmaReference,
    /// Patches sampled just before this iteration's latent update.
    PreUpdate,
    /// Patches frozen at iteration 0.
    IterationZero,
}

/// Tracking hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackConfig {
    /// Maximum step magnitude in px.
    pub max_range: f64,
    /// Candidate spacing in px; candidates are `-l, -l+s, ..., l`.
    pub step_size: f64,
    /// Half-width of the comparison patch.
    pub patch_radius: usize,
    pub reference: TrackReferenceMode,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            max_range: 3.0,
            step_size: 0.5,
            patch_radius: 2,
            reference: TrackReferenceMode::EmaReference,
        }
    }
}

impl TrackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_range <= 0.0 {
            return Err(Error::Config("tracking range must be > 0".into()));
        }
        if self.step_size <= 0.0 || self.step_size > self.max_range {
            return Err(Error::Config(
                "tracking step size must be in (0, range]".into(),
            ));
        }
        let m = (self.max_range / self.step_size).round();
        if (m * self.step_size - self.max_range).abs() > 1e-9 {
            return Err(Error::Config(
                "tracking range must be an integer multiple of the step size".into(),
            ));
        }
        Ok(())
    }

    /// The candidate step grid, always containing 0.
    pub fn candidates(&self) -> Vec<f64> {
        let m = (self.max_range / self.step_size).round() as i64;
        (-m..=m).map(|k| k as f64 * self.step_size).collect()
    }
}

/// Outcome of one tracking update for one click.
#[derive(Debug, Clone)]
pub struct TrackStep {
    /// Chosen shared step in px.
    pub delta_p: f64,
    /// Objective value at the chosen step.
    pub objective: f64,
    /// True when every frame had already converged; nothing moved.
    pub done: bool,
    /// Effective per-frame step after the overshoot cap.
    pub frame_steps: Vec<f64>,
    /// True where the cap shortened the shared step.
    pub cap_active: Vec<bool>,
    /// Unit handle-to-target direction per frame (zero for converged frames).
    pub directions: Vec<(f64, f64)>,
    pub updated_sets: Vec<PointSet>,
}

/// Choose the shared step by exhaustive scan over the candidate grid and
/// advance every frame's handle set by it.
///
/// Ties in the objective break toward the larger candidate. The per-frame
/// step is capped at the remaining handle-to-target distance so handles
/// never pass their targets.
pub fn track_step(
    sets: &[PointSet],
    targets: &[Point],
    center_index: usize,
    features: &[&Grid2D],
    references: &[Vec<Vec<f64>>],
    cfg: &TrackConfig,
) -> Result<TrackStep> {
    cfg.validate()?;
    let frames = sets.len();
    assert_eq!(targets.len(), frames);
    assert_eq!(features.len(), frames);
    assert_eq!(references.len(), frames);

    let mut directions = vec![(0.0, 0.0); frames];
    let mut distances = vec![0.0; frames];
    let mut active = Vec::new();
    for i in 0..frames {
        let p = sets[i].points[center_index];
        let q = targets[i];
        let dist = p.distance(q);
        distances[i] = dist;
        if dist > CONVERGED_EPS {
            directions[i] = ((q.x - p.x) / dist, (q.y - p.y) / dist);
            active.push(i);
        }
    }

    if active.is_empty() {
        return Ok(TrackStep {
            delta_p: 0.0,
            objective: 0.0,
            done: true,
            frame_steps: vec![0.0; frames],
            cap_active: vec![false; frames],
            directions,
            updated_sets: sets.to_vec(),
        });
    }

    let mut best_dp = f64::NEG_INFINITY;
    let mut best_obj = f64::INFINITY;
    for dp in cfg.candidates() {
        let mut obj = 0.0;
        for &i in &active {
            let d = directions[i];
            for (j, &p) in sets[i].points.iter().enumerate() {
                let pos = p.offset(dp * d.0, dp * d.1);
                let patch = sample_patch(features[i], pos, cfg.patch_radius)?;
                let reference = &references[i][j];
                debug_assert_eq!(patch.len(), reference.len());
                for (a, b) in patch.iter().zip(reference) {
                    obj += (a - b).abs();
                }
            }
        }
        // Ascending scan; ties resolve to the larger candidate.
        if obj <= best_obj {
            best_obj = obj;
            best_dp = dp;
        }
    }

    let mut frame_steps = vec![0.0; frames];
    let mut cap_active = vec![false; frames];
    let mut updated = sets.to_vec();
    for &i in &active {
        let mut step = best_dp;
        if step > distances[i] {
            step = distances[i];
            cap_active[i] = true;
        }
        frame_steps[i] = step;
        let d = directions[i];
        for p in &mut updated[i].points {
            *p = p.offset(step * d.0, step * d.1);
        }
    }

    Ok(TrackStep {
        delta_p: best_dp,
        objective: best_obj,
        done: false,
        frame_steps,
        cap_active,
        directions,
        updated_sets: updated,
    })
}
