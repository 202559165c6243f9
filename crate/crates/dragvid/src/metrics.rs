//! Temporal smoothness metric and a block-matching flow estimator.
//!
//! The metric assumes pixels move linearly over short spans: for each pixel
//! of an interior frame, find its correspondences in the previous and next
//! frames, measure the distance to the segment between them, filter out
//! pixels whose edited-video distance is smaller than their input-video
//! distance, and average the rest. Correspondences to the next frame come
//! from the forward flow; correspondences to the previous frame invert the
//! previous pair's forward flow by nearest-source search, which is exact
//! under ground-truth flow.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid2D, Point};
use crate::synth::SceneTruth;

/// Per-pair displacement field (channels dx, dy) with a validity mask.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub flow: Grid2D,
    pub valid: Grid2D,
}

/// Source of forward flow between consecutive frames of a video.
pub trait FlowProvider: Sync {
    fn forward(&self, video: &[Grid2D], pair: usize) -> Result<FlowField>;
}

/// Exact flow of a synthetic scene; ignores the pixel data.
pub struct GroundTruthFlow<'a>(pub &'a SceneTruth);

impl FlowProvider for GroundTruthFlow<'_> {
    fn forward(&self, _video: &[Grid2D], pair: usize) -> Result<FlowField> {
        if pair >= self.0.flow.len() {
            return Err(Error::FrameOutOfRange {
                frame: pair,
                count: self.0.flow.len(),
            });
        }
        let flow = self.0.flow[pair].clone();
        let valid = Grid2D::filled(flow.height(), flow.width(), 1, 1.0);
        Ok(FlowField { flow, valid })
    }
}

/// Block-matching flow on the video's own pixels.
#[derive(Debug, Clone, Copy)]
pub struct BlockMatchFlow {
    pub window: usize,
    pub search: usize,
}

impl Default for BlockMatchFlow {
    fn default() -> Self {
        BlockMatchFlow {
            window: 8,
            search: 4,
        }
    }
}

impl FlowProvider for BlockMatchFlow {
    fn forward(&self, video: &[Grid2D], pair: usize) -> Result<FlowField> {
        if pair + 1 >= video.len() {
            return Err(Error::FrameOutOfRange {
                frame: pair,
                count: video.len().saturating_sub(1),
            });
        }
        block_match_flow(&video[pair], &video[pair + 1], self.window, self.search)
    }
}

/// Per-pixel integer displacement minimizing the sum of absolute differences
/// over a `window x window` block within `+-search`. Ties break to the
/// smallest displacement magnitude, then lexicographically on `(dy, dx)`.
pub fn block_match_flow(a: &Grid2D, b: &Grid2D, window: usize, search: usize) -> Result<FlowField> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            expected: a.shape_string(),
            got: b.shape_string(),
        });
    }
    assert!(window > 0 && search > 0, "window and search must be positive");
    let (h, w, c) = (a.height(), a.width(), a.channels());
    if h < window || w < window {
        return Err(Error::FrameTooSmall {
            height: h,
            width: w,
            window,
        });
    }

    let s = search as i64;
    let rows: Vec<Vec<(f64, f64)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(w);
            for x in 0..w {
                // Full-size block anchored inside the frame.
                let bx = (x as i64 - (window / 2) as i64).clamp(0, (w - window) as i64) as usize;
                let by = (y as i64 - (window / 2) as i64).clamp(0, (h - window) as i64) as usize;

                let mut best = (0i64, 0i64);
                let mut best_cost = f64::INFINITY;
                let mut best_mag = i64::MAX;
                for dv in -s..=s {
                    let ty = by as i64 + dv;
                    if ty < 0 || ty + window as i64 > h as i64 {
                        continue;
                    }
                    for du in -s..=s {
                        let tx = bx as i64 + du;
                        if tx < 0 || tx + window as i64 > w as i64 {
                            continue;
                        }
                        let mut cost = 0.0;
                        for wy in 0..window {
                            for wx in 0..window {
                                for ch in 0..c {
                                    cost += (a.get(bx + wx, by + wy, ch)
                                        - b.get(tx as usize + wx, ty as usize + wy, ch))
                                    .abs();
                                }
                            }
                        }
                        let mag = du * du + dv * dv;
                        let better = cost < best_cost
                            || (cost == best_cost
                                && (mag < best_mag
                                    || (mag == best_mag && (dv, du) < (best.1, best.0))));
                        if better {
                            best_cost = cost;
                            best_mag = mag;
                            best = (du, dv);
                        }
                    }
                }
                row.push((best.0 as f64, best.1 as f64));
            }
            row
        })
        .collect();

    let mut flow = Grid2D::zeros(h, w, 2);
    for (y, row) in rows.iter().enumerate() {
        for (x, &(du, dv)) in row.iter().enumerate() {
            flow.set(x, y, 0, du);
            flow.set(x, y, 1, dv);
        }
    }
    let valid = Grid2D::filled(h, w, 1, 1.0);
    Ok(FlowField { flow, valid })
}

/// Euclidean distance from `p` to the segment `[a, b]`; a degenerate segment
/// collapses to point distance.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (abx, aby) = (b.x - a.x, b.y - a.y);
    let len2 = abx * abx + aby * aby;
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (((p.x - a.x) * abx + (p.y - a.y) * aby) / len2).clamp(0.0, 1.0);
    p.distance(Point::new(a.x + t * abx, a.y + t * aby))
}

/// Smoothness summary for an input/edited video pair.
#[derive(Debug, Clone, Serialize)]
pub struct SmoothnessResult {
    /// Mean edited-video distance over the kept pixels.
    pub filtered_mean: f64,
    /// Filtered mean per interior frame.
    pub per_frame_means: Vec<f64>,
    /// Fraction of jointly valid pixels that survive the filter.
    pub kept_fraction: f64,
    /// Unfiltered mean distance of the edited video.
    pub raw_mean_edited: f64,
    /// Unfiltered mean distance of the input video.
    pub raw_mean_input: f64,
}

/// Per-pixel linear-motion deviation for each interior frame of one video.
///
/// Returns `(distance, valid)` grids for frames `1..n-1`. A pixel is invalid
/// when a correspondence leaves the frame or its flow is marked invalid.
pub fn pixel_smoothness_distances(
    video: &[Grid2D],
    provider: &dyn FlowProvider,
) -> Result<Vec<(Grid2D, Grid2D)>> {
    let n = video.len();
    if n < 3 {
        return Err(Error::NeedThreeFrames(n));
    }
    let (h, w) = (video[0].height(), video[0].width());
    let mut flows = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        flows.push(provider.forward(video, i)?);
    }

    let mut out = Vec::with_capacity(n - 2);
    for i in 1..n - 1 {
        let fwd = &flows[i];
        let back = &flows[i - 1];
        let inv = invert_forward_flow(back);
        let mut dist = Grid2D::zeros(h, w, 1);
        let mut valid = Grid2D::zeros(h, w, 1);
        for y in 0..h {
            for x in 0..w {
                if fwd.valid.get(x, y, 0) < 0.5 {
                    continue;
                }
                let p = Point::new(x as f64, y as f64);
                let next = p.offset(fwd.flow.get(x, y, 0), fwd.flow.get(x, y, 1));
                if next.x < 0.0
                    || next.y < 0.0
                    || next.x > (w - 1) as f64
                    || next.y > (h - 1) as f64
                {
                    continue;
                }
                let Some(prev) = inv[y * w + x] else {
                    continue;
                };
                dist.set(x, y, 0, point_segment_distance(p, prev, next));
                valid.set(x, y, 0, 1.0);
            }
        }
        out.push((dist, valid));
    }
    Ok(out)
}

/// Invert a forward flow field by nearest-source search: for every target
/// pixel, the source whose forward destination lands closest. Exact when the
/// true source cell maps onto the target.
fn invert_forward_flow(field: &FlowField) -> Vec<Option<Point>> {
    let (h, w) = (field.flow.height(), field.flow.width());
    let mut max_mag = 0.0_f64;
    for y in 0..h {
        for x in 0..w {
            max_mag = max_mag
                .max(field.flow.get(x, y, 0).abs())
                .max(field.flow.get(x, y, 1).abs());
        }
    }
    let radius = max_mag.ceil() as i64 + 1;

    (0..h * w)
        .into_par_iter()
        .map(|idx| {
            let (ty, tx) = (idx / w, idx % w);
            let target = Point::new(tx as f64, ty as f64);
            let mut best: Option<(f64, Point)> = None;
            for sy in (ty as i64 - radius).max(0)..=(ty as i64 + radius).min(h as i64 - 1) {
                for sx in (tx as i64 - radius).max(0)..=(tx as i64 + radius).min(w as i64 - 1) {
                    let (sxu, syu) = (sx as usize, sy as usize);
                    if field.valid.get(sxu, syu, 0) < 0.5 {
                        continue;
                    }
                    let dest = Point::new(
                        sx as f64 + field.flow.get(sxu, syu, 0),
                        sy as f64 + field.flow.get(sxu, syu, 1),
                    );
                    let d = dest.distance(target);
                    if best.map_or(true, |(bd, _)| d < bd) {
                        best = Some((d, Point::new(sx as f64, sy as f64)));
                    }
                }
            }
            best.map(|(_, p)| p)
        })
        .collect()
}

/// Filtered temporal smoothness of an edited video against its input.
pub fn smoothness(
    input: &[Grid2D],
    edited: &[Grid2D],
    provider: &dyn FlowProvider,
) -> Result<SmoothnessResult> {
    if input.len() != edited.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} frames", input.len()),
            got: format!("{} frames", edited.len()),
        });
    }
    if input.len() < 3 {
        return Err(Error::NeedThreeFrames(input.len()));
    }
    for (a, b) in input.iter().zip(edited) {
        if !a.same_shape(b) {
            return Err(Error::ShapeMismatch {
                expected: a.shape_string(),
                got: b.shape_string(),
            });
        }
    }

    let din = pixel_smoothness_distances(input, provider)?;
    let ded = pixel_smoothness_distances(edited, provider)?;

    let mut kept_sum = 0.0;
    let mut kept_count = 0usize;
    let mut total_count = 0usize;
    let mut raw_edit_sum = 0.0;
    let mut raw_input_sum = 0.0;
    let mut per_frame_means = Vec::with_capacity(din.len());

    for ((di, vi), (de, ve)) in din.iter().zip(&ded) {
        let mut frame_sum = 0.0;
        let mut frame_count = 0usize;
        for idx in 0..di.data().len() {
            if vi.data()[idx] < 0.5 || ve.data()[idx] < 0.5 {
                continue;
            }
            let (d_input, d_edit) = (di.data()[idx], de.data()[idx]);
            total_count += 1;
            raw_edit_sum += d_edit;
            raw_input_sum += d_input;
            if d_edit >= d_input {
                kept_sum += d_edit;
                kept_count += 1;
                frame_sum += d_edit;
                frame_count += 1;
            }
        }
        per_frame_means.push(if frame_count > 0 {
            frame_sum / frame_count as f64
        } else {
            0.0
        });
    }

    Ok(SmoothnessResult {
        filtered_mean: if kept_count > 0 {
            kept_sum / kept_count as f64
        } else {
            0.0
        },
        per_frame_means,
        kept_fraction: if total_count > 0 {
            kept_count as f64 / total_count as f64
        } else {
            0.0
        },
        raw_mean_edited: if total_count > 0 {
            raw_edit_sum / total_count as f64
        } else {
            0.0
        },
        raw_mean_input: if total_count > 0 {
            raw_input_sum / total_count as f64
        } else {
            0.0
        },
    })
}
