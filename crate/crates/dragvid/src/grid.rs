//! Dense scalar grids and sub-pixel point types shared by the whole pipeline.
//!
//! A [`Grid2D`] stores `height * width * channels` values in row-major layout
//! (`(y * width + x) * channels + c`) and is used for frames, latents, latent
//! offsets, feature fields, flow fields, and masks. All arithmetic is `f64`.
//! Sampling clamps coordinates to the valid border; there is no wrapping or
//! zero padding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense `height x width x channels` grid of `f64` values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Grid2D {
    /// Zero-filled grid.
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty grid");
        Grid2D {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// Constant-filled grid.
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        let mut g = Self::zeros(height, width, channels);
        g.data.fill(value);
        g
    }

    /// Build a grid from raw row-major data. Fails on length mismatch or
    /// non-finite values.
    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", height * width * channels),
                got: format!("{}", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch {
                expected: "finite values".into(),
                got: "non-finite value".into(),
            });
        }
        Ok(Grid2D {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// True when `other` has identical dimensions.
    pub fn same_shape(&self, other: &Grid2D) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }

    #[inline]
    fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.idx(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.idx(x, y, c);
        self.data[i] = v;
    }

    #[inline]
    pub fn add_at(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.idx(x, y, c);
        self.data[i] += v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Elementwise `self + scale * other`.
    pub fn add_scaled(&mut self, other: &Grid2D, scale: f64) {
        assert!(self.same_shape(other), "shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid2D {
        Grid2D {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn abs_sum(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Sub-pixel location. `x` runs along columns, `y` along rows, with the
/// origin at the center of the top-left cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn offset(self, dx: f64, dy: f64) -> Point {
        Point::new(self.x + dx, self.y + dy)
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Clamp into `[0, w-1] x [0, h-1]`.
    pub fn clamp_to(self, width: usize, height: usize) -> Point {
        Point::new(
            self.x.clamp(0.0, (width - 1) as f64),
            self.y.clamp(0.0, (height - 1) as f64),
        )
    }

    /// Nearest-cell coordinates with halves rounded up, clamped to bounds.
    pub fn round_cell(self, width: usize, height: usize) -> (usize, usize) {
        let p = self.clamp_to(width, height);
        let cx = (p.x + 0.5).floor().clamp(0.0, (width - 1) as f64) as usize;
        let cy = (p.y + 0.5).floor().clamp(0.0, (height - 1) as f64) as usize;
        (cx, cy)
    }
}

/// Foreground/background tag attached to propagated points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointLabel {
    Foreground,
    Background,
}

/// Ordered collection of points with optional per-point labels.
///
/// Labels are `None` until a segmentation oracle assigns them during
/// propagation; point order is stable so index `j` always refers to the same
/// physical point across frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub points: Vec<Point>,
    pub labels: Vec<Option<PointLabel>>,
}

impl PointSet {
    pub fn unlabeled(points: Vec<Point>) -> Self {
        let labels = vec![None; points.len()];
        PointSet { points, labels }
    }

    pub fn with_labels(points: Vec<Point>, labels: Vec<PointLabel>) -> Self {
        assert_eq!(points.len(), labels.len(), "label count mismatch");
        let labels = labels.into_iter().map(Some).collect();
        PointSet { points, labels }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn foreground_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(PointLabel::Foreground))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Clamped bilinear cell/weight decomposition shared by sampling and its
/// adjoint so the two stay exact transposes of each other.
#[inline]
pub(crate) fn bilinear_cells(
    width: usize,
    height: usize,
    p: Point,
) -> ([(usize, usize); 4], [f64; 4]) {
    let x = p.x.clamp(0.0, (width - 1) as f64);
    let y = p.y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    (
        [(x0, y0), (x1, y0), (x0, y1), (x1, y1)],
        [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ],
    )
}

/// Channel-wise bilinear interpolation of the four cells around `p`, with
/// coordinates clamped to the border.
pub fn bilinear_sample(grid: &Grid2D, p: Point) -> Result<Vec<f64>> {
    if !p.is_finite() {
        return Err(Error::InvalidCoordinate(p.x, p.y));
    }
    let mut out = vec![0.0; grid.channels()];
    bilinear_sample_into(grid, p, &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn bilinear_sample_into(grid: &Grid2D, p: Point, out: &mut [f64]) {
    let (cells, weights) = bilinear_cells(grid.width(), grid.height(), p);
    out.fill(0.0);
    for (&(x, y), &w) in cells.iter().zip(weights.iter()) {
        if w == 0.0 {
            continue;
        }
        for (c, o) in out.iter_mut().enumerate() {
            *o += w * grid.get(x, y, c);
        }
    }
}

/// Scatter `values` (one per channel) into the grid with the bilinear
/// weights of `p`; the exact adjoint of [`bilinear_sample`].
pub(crate) fn bilinear_scatter(grid: &mut Grid2D, p: Point, values: &[f64]) {
    let (cells, weights) = bilinear_cells(grid.width(), grid.height(), p);
    for (&(x, y), &w) in cells.iter().zip(weights.iter()) {
        if w == 0.0 {
            continue;
        }
        for (c, &v) in values.iter().enumerate() {
            grid.add_at(x, y, c, w * v);
        }
    }
}

/// All integer displacements `(dx, dy)` with `|dx| <= radius` and
/// `|dy| <= radius`, in row-major order. The count is `(2r+1)^2` and the
/// center `(0, 0)` sits at index `(count - 1) / 2`.
pub fn patch_offsets(radius: usize) -> Vec<(i32, i32)> {
    let r = radius as i32;
    let mut out = Vec::with_capacity((2 * radius + 1).pow(2));
    for dy in -r..=r {
        for dx in -r..=r {
            out.push((dx, dy));
        }
    }
    out
}

/// Index of the `(0, 0)` offset inside [`patch_offsets`]`(radius)`.
pub fn patch_center_index(radius: usize) -> usize {
    ((2 * radius + 1).pow(2) as usize - 1) / 2
}

/// Bilinearly sample a square patch of half-width `radius` centered at `p`.
///
/// Output layout: offsets in [`patch_offsets`] order, channels contiguous per
/// offset, so the length is `(2r+1)^2 * channels`.
pub fn sample_patch(grid: &Grid2D, center: Point, radius: usize) -> Result<Vec<f64>> {
    if !center.is_finite() {
        return Err(Error::InvalidCoordinate(center.x, center.y));
    }
    let c = grid.channels();
    let offsets = patch_offsets(radius);
    let mut out = vec![0.0; offsets.len() * c];
    for (k, &(dx, dy)) in offsets.iter().enumerate() {
        let q = center.offset(dx as f64, dy as f64);
        bilinear_sample_into(grid, q, &mut out[k * c..(k + 1) * c]);
    }
    Ok(out)
}
