//! Command implementations behind the binary.

use std::fs;
use std::path::Path;

use crate::config::ConfigFile;
use crate::engine::{self, RunReport};
use crate::error::{Error, Result};
use crate::grid::{bilinear_sample, Grid2D, Point};
use crate::io;
use crate::metrics::{block_match_flow, smoothness, BlockMatchFlow, FlowField, SmoothnessResult};
use crate::propagate::propagate_all;
use crate::synth::{render_scene, AllForeground, Correspondence, SceneTruth};

/// Correspondence for arbitrary frame directories: forward block-matching
/// flow between consecutive frames, bilinearly sampled at the query point.
pub struct BlockMatchCorrespondence {
    flows: Vec<FlowField>,
    width: usize,
    height: usize,
}

impl BlockMatchCorrespondence {
    pub fn new(video: &[Grid2D], window: usize, search: usize) -> Result<Self> {
        let mut flows = Vec::with_capacity(video.len().saturating_sub(1));
        for pair in video.windows(2) {
            flows.push(block_match_flow(&pair[0], &pair[1], window, search)?);
        }
        Ok(BlockMatchCorrespondence {
            flows,
            width: video[0].width(),
            height: video[0].height(),
        })
    }
}

impl Correspondence for BlockMatchCorrespondence {
    fn map_forward(&self, frame: usize, p: Point) -> Result<Point> {
        let field = self.flows.get(frame).ok_or(Error::FrameOutOfRange {
            frame,
            count: self.flows.len(),
        })?;
        let f = bilinear_sample(&field.flow, p)?;
        Ok(p.offset(f[0], f[1]).clamp_to(self.width, self.height))
    }
}

fn export_video(video: &[Grid2D], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, frame) in video.iter().enumerate() {
        io::write_png(frame, &dir.join(format!("frame_{i:03}.png")))?;
        io::write_ppm(frame, &dir.join(format!("frame_{i:03}.ppm")))?;
    }
    Ok(())
}

/// Render the configured scene's frames and masks without running the
/// optimization.
pub fn render_command(cfg: &ConfigFile) -> Result<()> {
    let scene = cfg
        .scene
        .as_ref()
        .ok_or_else(|| Error::Config("render needs a `scene` config".into()))?;
    let truth = render_scene(&scene.to_spec()?)?;
    let out = &cfg.output_dir;
    export_video(&truth.video, &out.join("frames"))?;
    fs::create_dir_all(out.join("masks"))?;
    for (i, m) in truth.fgmask.iter().enumerate() {
        io::write_png(m, &out.join("masks").join(format!("mask_{i:03}.png")))?;
    }
    println!(
        "rendered {} frames of {} to {}",
        truth.video.len(),
        scene.kind,
        out.display()
    );
    Ok(())
}

/// Full pipeline: load or render the video, run the drag optimization, and
/// write frames, comparison strips, the trajectory log, and the report.
pub fn run_command(cfg: &ConfigFile) -> Result<RunReport> {
    cfg.validate()?;
    let run_cfg = cfg.run_config();
    let drag = cfg.drag.to_spec();
    let flow = BlockMatchFlow::default();

    enum Source {
        Scene(Box<SceneTruth>),
        Frames(BlockMatchCorrespondence),
    }

    let (video, source) = match (&cfg.scene, &cfg.input_dir) {
        (Some(scene), None) => {
            let truth = render_scene(&scene.to_spec()?)?;
            (truth.video.clone(), Source::Scene(Box::new(truth)))
        }
        (None, Some(dir)) => {
            let video = io::load_frames_dir(dir)?;
            let corr = BlockMatchCorrespondence::new(&video, flow.window, flow.search)?;
            (video, Source::Frames(corr))
        }
        _ => unreachable!("validated above"),
    };

    let all_fg = AllForeground;
    let (edited, report) = match &source {
        Source::Scene(truth) => {
            engine::run(&video, &drag, &run_cfg, truth.as_ref(), truth.as_ref(), &flow)?
        }
        Source::Frames(corr) => engine::run(&video, &drag, &run_cfg, &all_fg, corr, &flow)?,
    };

    let out = &cfg.output_dir;
    export_video(&video, &out.join("input"))?;
    export_video(&edited, &out.join("edited"))?;

    // Comparison strips need per-frame handle/target positions; recompute the
    // propagation (deterministic) for the initial ones.
    let prop = match &source {
        Source::Scene(truth) => propagate_all(
            &drag,
            run_cfg.handle_set_radius,
            run_cfg.mask_patch_radius,
            truth.as_ref(),
            truth.as_ref(),
            video.len(),
            video[0].width(),
            video[0].height(),
        )?,
        Source::Frames(corr) => propagate_all(
            &drag,
            run_cfg.handle_set_radius,
            run_cfg.mask_patch_radius,
            &all_fg,
            corr,
            video.len(),
            video[0].width(),
            video[0].height(),
        )?,
    };
    fs::create_dir_all(out.join("compare"))?;
    for i in 0..video.len() {
        let initial: Vec<Point> = (0..prop.clicks()).map(|c| prop.center(i, c)).collect();
        let finals: Vec<Point> = match report.records.last() {
            Some(r) => (0..prop.clicks()).map(|c| r.handles[c][i]).collect(),
            None => initial.clone(),
        };
        let targets: Vec<Point> = (0..prop.clicks()).map(|c| prop.targets[i][c]).collect();
        let strip = io::comparison_strip(&video[i], &edited[i], &initial, &finals, &targets);
        strip
            .save(out.join("compare").join(format!("frame_{i:03}.png")))
            .map_err(|e| Error::Image(e.to_string()))?;
    }

    io::write_trajectory_log(&report.records, &out.join("trajectory.jsonl"))?;
    io::write_report(&report, &out.join("report.json"))?;

    println!(
        "{} after {} iterations: mean distance {:.3} -> {:.3} px ({:.2} s)",
        if report.converged { "converged" } else { "stopped" },
        report.iterations,
        report.initial_mean_distance,
        report.final_mean_distance,
        report.wall_clock_seconds,
    );
    if let Some(s) = &report.smoothness {
        println!(
            "smoothness: filtered {:.4}, raw edited {:.4}, raw input {:.4}, kept {:.3}",
            s.filtered_mean, s.raw_mean_edited, s.raw_mean_input, s.kept_fraction
        );
    }
    if report.aborted {
        return Err(Error::Aborted(
            report.diagnostic.clone().unwrap_or_else(|| "unknown".into()),
        ));
    }
    Ok(report)
}

/// Standalone smoothness metric over two frame directories.
pub fn metric_command(
    input_dir: &Path,
    edited_dir: &Path,
    window: usize,
    search: usize,
) -> Result<SmoothnessResult> {
    let input = io::load_frames_dir(input_dir)?;
    let edited = io::load_frames_dir(edited_dir)?;
    if input.len() != edited.len() {
        return Err(Error::Config(format!(
            "frame count mismatch: {} vs {}",
            input.len(),
            edited.len()
        )));
    }
    let provider = BlockMatchFlow { window, search };
    let result = smoothness(&input, &edited, &provider)?;
    println!("filtered mean distance: {:.6} px", result.filtered_mean);
    println!("raw mean (edited):      {:.6} px", result.raw_mean_edited);
    println!("raw mean (input):       {:.6} px", result.raw_mean_input);
    println!("kept pixel fraction:    {:.6}", result.kept_fraction);
    Ok(result)
}
