//! Deterministic synthetic scenes with analytically known motion.
//!
//! Every scene renders a textured foreground object moving over a static
//! textured background. The per-pixel forward flow and the per-frame
//! foreground mask are exact for the parametric motion, which makes the
//! segmentation and correspondence oracles below trustworthy ground truth for
//! the rest of the pipeline. Foreground flow is the parametric motion;
//! background flow is zero.

use crate::backbone::binomial_blur;
use crate::error::{Error, Result};
use crate::grid::{bilinear_sample, Grid2D, Point, PointLabel};
use crate::rng::{derive_seed, seeded_field, splitmix64, uniform_at};

/// Scene families. `ThinSpire` renders a 1-2 px wide vertical structure so
/// single-point tracking failures are reproducible at desk scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    TranslatingBlob,
    RotatingSprite,
    ThinSpire,
    JitteredLinear,
}

impl SceneKind {
    pub fn parse(name: &str) -> Result<SceneKind> {
        match name {
            "translating_blob" => Ok(SceneKind::TranslatingBlob),
            "rotating_sprite" => Ok(SceneKind::RotatingSprite),
            "thin_spire" => Ok(SceneKind::ThinSpire),
            "jittered_linear" => Ok(SceneKind::JitteredLinear),
            other => Err(Error::UnsupportedScene(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SceneKind::TranslatingBlob => "translating_blob",
            SceneKind::RotatingSprite => "rotating_sprite",
            SceneKind::ThinSpire => "thin_spire",
            SceneKind::JitteredLinear => "jittered_linear",
        }
    }
}

/// Parameters of a synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Foreground velocity in px/frame.
    pub velocity: (f64, f64),
    /// Rotation rate in rad/frame (rotating sprite only).
    pub angular_rate: f64,
    /// Perpendicular jitter vector in px, applied on even frames
    /// (jittered linear only).
    pub jitter: (f64, f64),
    pub texture_seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::Config(format!(
                "scene needs at least 2 frames, got {}",
                self.frames
            )));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::Config(format!(
                "scene must be at least 16x16, got {}x{}",
                self.height, self.width
            )));
        }
        let finite = self.velocity.0.is_finite()
            && self.velocity.1.is_finite()
            && self.angular_rate.is_finite()
            && self.jitter.0.is_finite()
            && self.jitter.1.is_finite();
        if !finite {
            return Err(Error::Config("scene motion parameters must be finite".into()));
        }
        Ok(())
    }

    fn min_dim(&self) -> f64 {
        self.height.min(self.width) as f64
    }

    fn frame_center(&self) -> Point {
        Point::new((self.width - 1) as f64 / 2.0, (self.height - 1) as f64 / 2.0)
    }

    // Radii sit slightly off the lattice resonances that appear when a disc
    // boundary passes through many integer cells at once; this keeps the
    // rasterized mask area stable as the object moves sub-pixel.
    fn blob_radius(&self) -> f64 {
        0.2 * self.min_dim() - 0.15
    }

    fn sprite_orbit(&self) -> f64 {
        self.min_dim() / 6.0
    }

    fn sprite_radius(&self) -> f64 {
        (self.min_dim() / 6.0 * 10.0).round() / 10.0
    }

    const SPIRE_HALF_WIDTH: f64 = 0.75;

    /// Translation of the foreground object since frame 0 (not meaningful for
    /// the rotating sprite).
    pub fn object_offset(&self, frame: usize) -> (f64, f64) {
        let i = frame as f64;
        let mut off = (i * self.velocity.0, i * self.velocity.1);
        if self.kind == SceneKind::JitteredLinear && frame % 2 == 0 {
            off.0 += self.jitter.0;
            off.1 += self.jitter.1;
        }
        off
    }

    /// Analytic blob center at a frame (translation-family scenes).
    pub fn blob_center(&self, frame: usize) -> Point {
        let c = self.frame_center();
        let off = self.object_offset(frame);
        Point::new(c.x + off.0, c.y + off.1)
    }

    /// Analytic spire center column at a frame.
    pub fn spire_center_x(&self, frame: usize) -> f64 {
        self.frame_center().x + self.object_offset(frame).0
    }

    fn is_foreground(&self, frame: usize, x: f64, y: f64) -> bool {
        match self.kind {
            SceneKind::TranslatingBlob | SceneKind::JitteredLinear => {
                let c = self.blob_center(frame);
                (x - c.x).hypot(y - c.y) <= self.blob_radius()
            }
            SceneKind::ThinSpire => {
                let off = self.object_offset(frame);
                let cx = self.frame_center().x + off.0;
                let y_lo = 0.15 * self.height as f64 + off.1;
                let y_hi = 0.85 * self.height as f64 + off.1;
                (x - cx).abs() <= Self::SPIRE_HALF_WIDTH && y >= y_lo && y <= y_hi
            }
            SceneKind::RotatingSprite => {
                let pivot = self.frame_center();
                let (ox, oy) = rotate(
                    x - pivot.x,
                    y - pivot.y,
                    -(frame as f64) * self.angular_rate,
                );
                (ox - self.sprite_orbit()).hypot(oy) <= self.sprite_radius()
            }
        }
    }

    /// Exact forward displacement of a foreground pixel from frame to frame+1.
    fn foreground_motion(&self, frame: usize, x: f64, y: f64) -> (f64, f64) {
        match self.kind {
            SceneKind::TranslatingBlob | SceneKind::ThinSpire => self.velocity,
            SceneKind::JitteredLinear => {
                let a = self.object_offset(frame);
                let b = self.object_offset(frame + 1);
                (b.0 - a.0, b.1 - a.1)
            }
            SceneKind::RotatingSprite => {
                let pivot = self.frame_center();
                let (rx, ry) = rotate(x - pivot.x, y - pivot.y, self.angular_rate);
                (rx - (x - pivot.x), ry - (y - pivot.y))
            }
        }
    }

    /// World position -> object texture coordinates at a frame.
    fn texture_coords(&self, frame: usize, x: f64, y: f64) -> (f64, f64) {
        match self.kind {
            SceneKind::RotatingSprite => {
                let pivot = self.frame_center();
                let (ox, oy) = rotate(
                    x - pivot.x,
                    y - pivot.y,
                    -(frame as f64) * self.angular_rate,
                );
                (ox + pivot.x, oy + pivot.y)
            }
            _ => {
                let off = self.object_offset(frame);
                (x - off.0, y - off.1)
            }
        }
    }
}

fn rotate(x: f64, y: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * x - s * y, s * x + c * y)
}

/// Rendered scene plus exact ground truth.
///
/// `flow[i]` is the forward displacement field from frame `i` to `i+1`
/// (2 channels: dx, dy). `fgmask[i]` is binary.
#[derive(Debug, Clone)]
pub struct SceneTruth {
    pub spec: SceneSpec,
    pub video: Vec<Grid2D>,
    pub flow: Vec<Grid2D>,
    pub fgmask: Vec<Grid2D>,
}

/// Band-limited texture: seeded normal noise smoothed by three binomial blur
/// passes, mapped to `[0, 1]`.
fn texture(seed: u64, height: usize, width: usize) -> Grid2D {
    let mut t = seeded_field(seed, height, width, 1);
    for _ in 0..3 {
        t = binomial_blur(&t);
    }
    t.map(|v| (0.5 + 3.0 * v).clamp(0.0, 1.0))
}

/// Render a scene deterministically.
pub fn render_scene(spec: &SceneSpec) -> Result<SceneTruth> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let tex_bg = texture(derive_seed(spec.texture_seed, 0xB6), h, w);
    let tex_fg = texture(derive_seed(spec.texture_seed, 0xF6), h, w);

    let mut video = Vec::with_capacity(spec.frames);
    let mut fgmask = Vec::with_capacity(spec.frames);
    let mut flow = Vec::with_capacity(spec.frames - 1);

    for i in 0..spec.frames {
        let mut frame = Grid2D::zeros(h, w, 1);
        let mut mask = Grid2D::zeros(h, w, 1);
        for y in 0..h {
            for x in 0..w {
                let (xf, yf) = (x as f64, y as f64);
                if spec.is_foreground(i, xf, yf) {
                    mask.set(x, y, 0, 1.0);
                    let (u, v) = spec.texture_coords(i, xf, yf);
                    let val = bilinear_sample(&tex_fg, Point::new(u, v))?[0];
                    // Brightness lift keeps the object visually separable.
                    frame.set(x, y, 0, (0.25 + 0.75 * val).clamp(0.0, 1.0));
                } else {
                    frame.set(x, y, 0, 0.7 * tex_bg.get(x, y, 0));
                }
            }
        }
        video.push(frame);
        fgmask.push(mask);
    }

    for i in 0..spec.frames - 1 {
        let mut f = Grid2D::zeros(h, w, 2);
        for y in 0..h {
            for x in 0..w {
                if fgmask[i].get(x, y, 0) > 0.5 {
                    let (dx, dy) = spec.foreground_motion(i, x as f64, y as f64);
                    f.set(x, y, 0, dx);
                    f.set(x, y, 1, dy);
                }
            }
        }
        flow.push(f);
    }

    Ok(SceneTruth {
        spec: spec.clone(),
        video,
        flow,
        fgmask,
    })
}

/// Foreground/background lookup at the rounded coordinate of `p`
/// (halves round up).
pub fn segment(truth: &SceneTruth, frame: usize, p: Point) -> Result<PointLabel> {
    if frame >= truth.video.len() {
        return Err(Error::FrameOutOfRange {
            frame,
            count: truth.video.len(),
        });
    }
    let (cx, cy) = p.round_cell(truth.spec.width, truth.spec.height);
    if truth.fgmask[frame].get(cx, cy, 0) > 0.5 {
        Ok(PointLabel::Foreground)
    } else {
        Ok(PointLabel::Background)
    }
}

/// Correspondence of `p` on the next frame: `p` plus the bilinearly sampled
/// forward flow, clamped to frame bounds.
pub fn correspond(truth: &SceneTruth, frame: usize, p: Point) -> Result<Point> {
    if frame + 1 >= truth.video.len() {
        return Err(Error::FrameOutOfRange {
            frame,
            count: truth.video.len().saturating_sub(1),
        });
    }
    let f = bilinear_sample(&truth.flow[frame], p)?;
    Ok(p.offset(f[0], f[1])
        .clamp_to(truth.spec.width, truth.spec.height))
}

/// Point segmentation oracle interface.
pub trait Segmenter {
    fn label(&self, frame: usize, p: Point) -> Result<PointLabel>;
}

/// Frame-to-next-frame point correspondence oracle interface.
pub trait Correspondence {
    fn map_forward(&self, frame: usize, p: Point) -> Result<Point>;
}

impl Segmenter for SceneTruth {
    fn label(&self, frame: usize, p: Point) -> Result<PointLabel> {
        segment(self, frame, p)
    }
}

impl Correspondence for SceneTruth {
    fn map_forward(&self, frame: usize, p: Point) -> Result<Point> {
        correspond(self, frame, p)
    }
}

/// Labels every point foreground. Used when no segmentation oracle exists for
/// arbitrary input frames, which makes propagation fall back to plain
/// correspondence.
pub struct AllForeground;

impl Segmenter for AllForeground {
    fn label(&self, _frame: usize, _p: Point) -> Result<PointLabel> {
        Ok(PointLabel::Foreground)
    }
}

/// Which correspondence queries receive injected noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseTarget {
    /// Only queries at background-labeled points (where true motion is
    /// ambiguous) are perturbed.
    BackgroundOnly,
    /// Every query is perturbed.
    AllQueries,
}

/// Correspondence oracle that adds a deterministic pseudo-random offset of
/// fixed magnitude to selected queries, emulating an imperfect matcher.
pub struct NoisyCorrespondence<'a> {
    pub truth: &'a SceneTruth,
    pub amplitude: f64,
    pub seed: u64,
    pub target: NoiseTarget,
}

impl NoisyCorrespondence<'_> {
    fn noise(&self, frame: usize, p: Point) -> (f64, f64) {
        let mut k = splitmix64(self.seed ^ splitmix64(frame as u64 + 1));
        k = splitmix64(k ^ p.x.to_bits());
        k = splitmix64(k ^ p.y.to_bits());
        let theta = 2.0 * std::f64::consts::PI * uniform_at(k, 0);
        (self.amplitude * theta.cos(), self.amplitude * theta.sin())
    }
}

impl Correspondence for NoisyCorrespondence<'_> {
    fn map_forward(&self, frame: usize, p: Point) -> Result<Point> {
        let base = correspond(self.truth, frame, p)?;
        let perturb = match self.target {
            NoiseTarget::AllQueries => true,
            NoiseTarget::BackgroundOnly => {
                segment(self.truth, frame, p)? == PointLabel::Background
            }
        };
        if !perturb {
            return Ok(base);
        }
        let (nx, ny) = self.noise(frame, p);
        Ok(base
            .offset(nx, ny)
            .clamp_to(self.truth.spec.width, self.truth.spec.height))
    }
}
