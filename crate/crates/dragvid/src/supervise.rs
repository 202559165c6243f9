//! Video-level motion supervision and the latent offset optimizer.
//!
//! The drag loss compares the feature patch one unit step ahead of each
//! handle point against a stop-gradient reference patch built by averaging
//! that point's features across all frames and folding the average into an
//! exponential moving average over iterations. Gradients flow only into the
//! current frame's features, never into the reference. The mask loss is the
//! L1 norm of each latent offset outside the editable region; its subgradient
//! at zero is zero, so untouched cells stay untouched. Offsets advance by one
//! bias-corrected adaptive-moment step per iteration, without weight decay.

use crate::backbone::{FeatureExtractor, LatentStack};
use crate::error::{Error, Result};
use crate::grid::{bilinear_scatter, patch_offsets, sample_patch, Grid2D, Point};
use crate::propagate::PropagatedInputs;

/// Distance below which a handle counts as converged on its target.
pub const CONVERGED_EPS: f64 = 1e-9;

/// Supervision hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionConfig {
    /// Half-width of the supervision patch around each handle point.
    pub patch_radius: usize,
    /// Weight of the mask loss in the total loss.
    pub mask_weight: f64,
    /// Reference moving-average coefficient in `[0, 1)`; `0` tracks the
    /// current average, values near `1` freeze the initial reference.
    pub ema: f64,
    pub learning_rate: f64,
    /// Selected noising timesteps, each with its own learnable offset.
    pub timesteps: Vec<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for SupervisionConfig {
    fn default() -> Self {
        SupervisionConfig {
            patch_radius: 1,
            mask_weight: 0.1,
            ema: 0.8,
            learning_rate: 0.01,
            timesteps: vec![42, 41, 35, 30],
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl SupervisionConfig {
    pub fn validate(&self, t_max: usize) -> Result<()> {
        if self.mask_weight < 0.0 {
            return Err(Error::Config("mask weight must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.ema) {
            return Err(Error::Config("ema coefficient must be in [0, 1)".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if self.timesteps.is_empty() {
            return Err(Error::Config("timestep set must be non-empty".into()));
        }
        for &t in &self.timesteps {
            if t >= t_max {
                return Err(Error::TimestepOutOfRange { t, t_max });
            }
        }
        Ok(())
    }
}

/// Cross-frame average of one point's feature patch (one patch offset at a
/// time, bilinearly sampled per frame).
pub fn averaged_handle_feature(
    points_per_frame: &[Point],
    features_per_frame: &[&Grid2D],
    radius: usize,
) -> Result<Vec<f64>> {
    if points_per_frame.is_empty() {
        return Err(Error::Config("feature average needs at least one frame".into()));
    }
    assert_eq!(points_per_frame.len(), features_per_frame.len());
    let mut acc = sample_patch(features_per_frame[0], points_per_frame[0], radius)?;
    for (p, f) in points_per_frame[1..].iter().zip(&features_per_frame[1..]) {
        let patch = sample_patch(f, *p, radius)?;
        for (a, b) in acc.iter_mut().zip(&patch) {
            *a += b;
        }
    }
    let n = points_per_frame.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(acc)
}

/// Reference feature patches, frame-averaged for supervision and per-frame
/// for tracking, maintained as moving averages over iterations.
#[derive(Debug, Clone, Default)]
pub struct EmaFeatureBank {
    /// `[click][member][timestep index]` -> frame-averaged reference patch.
    pub supervision: Vec<Vec<Vec<Vec<f64>>>>,
    /// `[click][member][frame]` -> per-frame moving-average patch at the
    /// tracking timestep.
    pub track_ema: Vec<Vec<Vec<Vec<f64>>>>,
    /// Same layout, raw patches from the latest refresh (no averaging).
    pub track_last: Vec<Vec<Vec<Vec<f64>>>>,
    /// Same layout, frozen at the first refresh.
    pub track_iter0: Vec<Vec<Vec<Vec<f64>>>>,
    initialized: bool,
}

impl EmaFeatureBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Fold the current features into the bank: on the first call the bank
    /// is initialized from them, afterwards each patch becomes
    /// `ema * old + (1 - ema) * current`. Call once per iteration, before
    /// the optimizer step.
    #[allow(clippy::too_many_arguments)]
    pub fn refresh(
        &mut self,
        features: &[Vec<Grid2D>],
        inputs: &PropagatedInputs,
        sup_radius: usize,
        track_radius: usize,
        t_track_index: usize,
        ema: f64,
    ) -> Result<()> {
        let frames = inputs.frames();
        let clicks = inputs.clicks();
        let members = inputs.handle_sets[0][0].len();
        let t_count = features[0].len();

        let mut sup = Vec::with_capacity(clicks);
        let mut track = Vec::with_capacity(clicks);
        for click in 0..clicks {
            let mut sup_members = Vec::with_capacity(members);
            let mut track_members = Vec::with_capacity(members);
            for member in 0..members {
                let points: Vec<Point> = (0..frames)
                    .map(|i| inputs.handle_sets[i][click].points[member])
                    .collect();
                let mut per_t = Vec::with_capacity(t_count);
                for t_idx in 0..t_count {
                    let fields: Vec<&Grid2D> = (0..frames).map(|i| &features[i][t_idx]).collect();
                    per_t.push(averaged_handle_feature(&points, &fields, sup_radius)?);
                }
                sup_members.push(per_t);

                let mut per_frame = Vec::with_capacity(frames);
                for (i, &p) in points.iter().enumerate() {
                    per_frame.push(sample_patch(&features[i][t_track_index], p, track_radius)?);
                }
                track_members.push(per_frame);
            }
            sup.push(sup_members);
            track.push(track_members);
        }

        if !self.initialized {
            self.supervision = sup.clone();
            self.track_ema = track.clone();
            self.track_iter0 = track.clone();
            self.track_last = track;
            self.initialized = true;
            return Ok(());
        }

        fold(&mut self.supervision, &sup, ema);
        fold(&mut self.track_ema, &track, ema);
        self.track_last = track;
        Ok(())
    }
}

fn fold(bank: &mut [Vec<Vec<Vec<f64>>>], current: &[Vec<Vec<Vec<f64>>>], ema: f64) {
    for (b2, c2) in bank.iter_mut().zip(current) {
        for (b1, c1) in b2.iter_mut().zip(c2) {
            for (b0, c0) in b1.iter_mut().zip(c1) {
                for (b, c) in b0.iter_mut().zip(c0) {
                    *b = ema * *b + (1.0 - ema) * c;
                }
            }
        }
    }
}

#[inline]
fn l1_sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// L1 distance between the feature patch one unit step ahead of `handle` and
/// a constant reference patch. The cotangent with respect to the feature
/// field accumulates into `cot`; nothing flows into the reference.
pub fn drag_loss(
    features: &Grid2D,
    handle: Point,
    direction: (f64, f64),
    reference: &[f64],
    radius: usize,
    cot: &mut Grid2D,
) -> Result<f64> {
    let c = features.channels();
    let offsets = patch_offsets(radius);
    assert_eq!(reference.len(), offsets.len() * c, "reference patch size");
    let shifted = handle.offset(direction.0, direction.1);
    let mut loss = 0.0;
    let mut buf = vec![0.0; c];
    let mut signs = vec![0.0; c];
    for (k, &(dx, dy)) in offsets.iter().enumerate() {
        let pos = shifted.offset(dx as f64, dy as f64);
        if !pos.is_finite() {
            return Err(Error::InvalidCoordinate(pos.x, pos.y));
        }
        crate::grid::bilinear_sample_into(features, pos, &mut buf);
        for ch in 0..c {
            let diff = buf[ch] - reference[k * c + ch];
            loss += diff.abs();
            signs[ch] = l1_sign(diff);
        }
        bilinear_scatter(cot, pos, &signs);
    }
    Ok(loss)
}

/// L1 norm of an offset outside the editable mask, with its gradient.
/// The subgradient of the absolute value at zero is zero.
pub fn mask_loss(offset: &Grid2D, mask: &Grid2D) -> Result<(f64, Grid2D)> {
    if mask.height() != offset.height() || mask.width() != offset.width() || mask.channels() != 1 {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}x1 mask", offset.height(), offset.width()),
            got: mask.shape_string(),
        });
    }
    let mut grad = Grid2D::zeros(offset.height(), offset.width(), offset.channels());
    let mut loss = 0.0;
    for y in 0..offset.height() {
        for x in 0..offset.width() {
            let w = 1.0 - mask.get(x, y, 0);
            if w == 0.0 {
                continue;
            }
            for ch in 0..offset.channels() {
                let v = offset.get(x, y, ch);
                loss += w * v.abs();
                grad.set(x, y, ch, w * l1_sign(v));
            }
        }
    }
    Ok((loss, grad))
}

/// Losses and per-offset gradients of one supervision evaluation.
#[derive(Debug, Clone)]
pub struct SupervisionEval {
    pub total_loss: f64,
    pub drag_loss: f64,
    pub mask_loss: f64,
    /// `[frame][timestep index]` gradient with respect to each offset.
    pub gradients: Vec<Vec<Grid2D>>,
    /// Drag loss per frame, summed over clicks, members, and timesteps.
    pub per_frame_drag: Vec<f64>,
}

/// Evaluate the full supervision loss and its gradients at the current
/// offsets, holding the reference bank constant.
pub fn evaluate(
    features: &[Vec<Grid2D>],
    latents: &LatentStack,
    inputs: &PropagatedInputs,
    bank: &EmaFeatureBank,
    extractor: &FeatureExtractor,
    cfg: &SupervisionConfig,
) -> Result<SupervisionEval> {
    let frames = inputs.frames();
    let t_count = cfg.timesteps.len();
    let center = inputs.center_index();

    let mut drag_total = 0.0;
    let mut mask_total = 0.0;
    let mut per_frame_drag = vec![0.0; frames];
    let mut gradients = Vec::with_capacity(frames);

    for i in 0..frames {
        let feat = &features[i];
        let mut cots: Vec<Grid2D> = feat
            .iter()
            .map(|f| Grid2D::zeros(f.height(), f.width(), f.channels()))
            .collect();

        for click in 0..inputs.clicks() {
            let set = &inputs.handle_sets[i][click];
            let p = set.points[center];
            let q = inputs.targets[i][click];
            let dist = p.distance(q);
            if dist <= CONVERGED_EPS {
                continue; // converged pair, excluded from the drag loss
            }
            let d = ((q.x - p.x) / dist, (q.y - p.y) / dist);
            for (member, &mp) in set.points.iter().enumerate() {
                for t_idx in 0..t_count {
                    let reference = &bank.supervision[click][member][t_idx];
                    let l = drag_loss(
                        &feat[t_idx],
                        mp,
                        d,
                        reference,
                        cfg.patch_radius,
                        &mut cots[t_idx],
                    )?;
                    drag_total += l;
                    per_frame_drag[i] += l;
                }
            }
        }

        let mut frame_grads = Vec::with_capacity(t_count);
        for t_idx in 0..t_count {
            let x = latents.latent(i, t_idx);
            let mut g = extractor.features_adjoint(&x, cfg.timesteps[t_idx], &cots[t_idx])?;
            let (ml, mg) = mask_loss(&latents.frames[i].offsets[t_idx], &inputs.masks[i])?;
            mask_total += ml;
            g.add_scaled(&mg, cfg.mask_weight);
            frame_grads.push(g);
        }
        gradients.push(frame_grads);
    }

    Ok(SupervisionEval {
        total_loss: drag_total + cfg.mask_weight * mask_total,
        drag_loss: drag_total,
        mask_loss: mask_total,
        gradients,
        per_frame_drag,
    })
}

/// One bias-corrected adaptive-moment step on every latent offset.
/// Fails without touching state if any gradient is non-finite.
pub fn step(
    latents: &mut LatentStack,
    gradients: &[Vec<Grid2D>],
    cfg: &SupervisionConfig,
) -> Result<()> {
    for (i, frame_grads) in gradients.iter().enumerate() {
        for (t_idx, g) in frame_grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    quantity: "gradient",
                    frame: i,
                    t: cfg.timesteps[t_idx],
                });
            }
        }
    }
    latents.step_count += 1;
    let k = latents.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(k);
    let bc2 = 1.0 - cfg.beta2.powi(k);

    for (frame, frame_grads) in gradients.iter().enumerate() {
        let f = &mut latents.frames[frame];
        for (t_idx, g) in frame_grads.iter().enumerate() {
            let m = f.moment1[t_idx].data_mut();
            let v = f.moment2[t_idx].data_mut();
            let o = f.offsets[t_idx].data_mut();
            for ((om, (mm, vv)), gg) in o.iter_mut().zip(m.iter_mut().zip(v.iter_mut())).zip(g.data()) {
                *mm = cfg.beta1 * *mm + (1.0 - cfg.beta1) * gg;
                *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gg * gg;
                let m_hat = *mm / bc1;
                let v_hat = *vv / bc2;
                *om -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
    Ok(())
}
