//! Frame and report I/O.
//!
//! Frames are normalized `[0, 1]` scalars internally and quantized to 8 bits
//! only at export, as grayscale or RGB PNG plus binary PPM. Marker overlays
//! are drawn on export copies only.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::engine::{IterationRecord, RunReport};
use crate::error::{Error, Result};
use crate::grid::{Grid2D, Point};

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit RGB export copy of a grid (grayscale replicates channels).
pub fn to_rgb8(grid: &Grid2D) -> RgbImage {
    let (h, w) = (grid.height() as u32, grid.width() as u32);
    let mut img = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let px = match grid.channels() {
                1 => {
                    let g = quantize(grid.get(x as usize, y as usize, 0));
                    [g, g, g]
                }
                _ => {
                    let c = |i: usize| {
                        quantize(grid.get(x as usize, y as usize, i.min(grid.channels() - 1)))
                    };
                    [c(0), c(1), c(2)]
                }
            };
            img.put_pixel(x, y, image::Rgb(px));
        }
    }
    img
}

/// Write a frame as PNG (grayscale when single-channel).
pub fn write_png(grid: &Grid2D, path: &Path) -> Result<()> {
    if grid.channels() == 1 {
        let (h, w) = (grid.height() as u32, grid.width() as u32);
        let mut img = GrayImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.put_pixel(
                    x,
                    y,
                    image::Luma([quantize(grid.get(x as usize, y as usize, 0))]),
                );
            }
        }
        img.save(path).map_err(|e| Error::Image(e.to_string()))
    } else {
        to_rgb8(grid)
            .save(path)
            .map_err(|e| Error::Image(e.to_string()))
    }
}

/// Write a frame as binary PPM (always RGB).
pub fn write_ppm(grid: &Grid2D, path: &Path) -> Result<()> {
    let img = to_rgb8(grid);
    let mut out = Vec::with_capacity(img.len() + 32);
    out.extend_from_slice(format!("P6\n{} {}\n255\n", img.width(), img.height()).as_bytes());
    out.extend_from_slice(img.as_raw());
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Load one frame; PNG grayscale stays single-channel, everything else loads
/// as RGB. Values map back to `[0, 1]`.
pub fn read_frame(path: &Path) -> Result<Grid2D> {
    let img = image::open(path).map_err(|e| Error::Image(e.to_string()))?;
    match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            let data = g.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
            Grid2D::from_data(h, w, 1, data)
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let mut data = Vec::with_capacity(h * w * 3);
            for p in rgb.pixels() {
                data.extend(p.0.iter().map(|&v| v as f64 / 255.0));
            }
            Grid2D::from_data(h, w, 3, data)
        }
    }
}

/// Load all frames from a directory, sorted by file name. Accepts `.png`
/// and `.ppm`.
pub fn load_frames_dir(dir: &Path) -> Result<Vec<Grid2D>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png") | Some("ppm")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!(
            "no .png or .ppm frames in {}",
            dir.display()
        )));
    }
    let frames: Vec<Grid2D> = paths
        .iter()
        .map(|p| read_frame(p))
        .collect::<Result<_>>()?;
    for f in &frames[1..] {
        if !f.same_shape(&frames[0]) {
            return Err(Error::ShapeMismatch {
                expected: frames[0].shape_string(),
                got: f.shape_string(),
            });
        }
    }
    Ok(frames)
}

const GREEN: [u8; 3] = [0, 200, 0];
const BLUE: [u8; 3] = [40, 90, 255];

fn draw_marker(img: &mut RgbImage, p: Point, color: [u8; 3]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
    for (dx, dy) in [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1), (-2, 0), (2, 0), (0, -2), (0, 2)] {
        let (x, y) = (cx + dx, cy + dy);
        if x >= 0 && x < w && y >= 0 && y < h {
            img.put_pixel(x as u32, y as u32, image::Rgb(color));
        }
    }
}

/// Side-by-side input|edited strip with handle (green) and target (blue)
/// markers rasterized. The left half shows the initial handles, the right
/// half the final ones.
pub fn comparison_strip(
    input: &Grid2D,
    edited: &Grid2D,
    initial_handles: &[Point],
    final_handles: &[Point],
    targets: &[Point],
) -> RgbImage {
    let mut left = to_rgb8(input);
    let mut right = to_rgb8(edited);
    for &p in initial_handles {
        draw_marker(&mut left, p, GREEN);
    }
    for &p in final_handles {
        draw_marker(&mut right, p, GREEN);
    }
    for &q in targets {
        draw_marker(&mut left, q, BLUE);
        draw_marker(&mut right, q, BLUE);
    }
    let (w, h) = (left.width(), left.height());
    let mut strip = RgbImage::new(w * 2 + 2, h);
    for y in 0..h {
        for x in 0..w {
            strip.put_pixel(x, y, *left.get_pixel(x, y));
            strip.put_pixel(w + 2 + x, y, *right.get_pixel(x, y));
        }
    }
    strip
}

/// One JSON record per line, one line per iteration.
pub fn write_trajectory_log(records: &[IterationRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Config(e.to_string()))?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Final report as pretty-printed JSON (wall clock excluded so reruns are
/// byte-identical).
pub fn write_report(report: &RunReport, path: &Path) -> Result<()> {
    let text =
        serde_json::to_string_pretty(report).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}
