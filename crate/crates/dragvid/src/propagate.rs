//! Point set propagation from the first frame to all frames.
//!
//! Each user click expands into a square set of points that is propagated
//! jointly: a segmentation oracle splits the set into foreground and
//! background, foreground points follow the correspondence oracle, and each
//! background point reuses the motion of its nearest foreground point so the
//! set keeps covering the object even when individual matches fail. Targets
//! move in parallel with their handle's center point, and the editable-region
//! mask is the union of square patches around propagated mask points.

use crate::error::{Error, Result};
use crate::grid::{patch_center_index, patch_offsets, Grid2D, Point, PointLabel, PointSet};
use crate::synth::{Correspondence, Segmenter};

/// User input on frame 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DragSpec {
    pub handles: Vec<Point>,
    pub targets: Vec<Point>,
    pub mask_points: Vec<Point>,
}

impl DragSpec {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.handles.is_empty() {
            return Err(Error::DragSpec("need at least one handle/target pair".into()));
        }
        if self.handles.len() != self.targets.len() {
            return Err(Error::DragSpec(format!(
                "{} handles but {} targets",
                self.handles.len(),
                self.targets.len()
            )));
        }
        let in_bounds = |p: &Point| {
            p.is_finite()
                && p.x >= 0.0
                && p.y >= 0.0
                && p.x <= (width - 1) as f64
                && p.y <= (height - 1) as f64
        };
        for (name, pts) in [
            ("handle", &self.handles),
            ("target", &self.targets),
            ("mask point", &self.mask_points),
        ] {
            for (i, p) in pts.iter().enumerate() {
                if !in_bounds(p) {
                    return Err(Error::DragSpec(format!(
                        "{name} {i} at ({}, {}) out of bounds for {width}x{height}",
                        p.x, p.y
                    )));
                }
            }
        }
        Ok(())
    }

    /// True when every handle already sits on its target.
    pub fn is_degenerate(&self) -> bool {
        self.handles
            .iter()
            .zip(&self.targets)
            .all(|(p, q)| p.distance(*q) == 0.0)
    }
}

/// Per-frame propagated handle sets, targets, mask points, and masks.
///
/// `handle_sets[frame][click]` keeps set size and point order fixed across
/// frames, so member `j` always refers to the same physical point.
#[derive(Debug, Clone)]
pub struct PropagatedInputs {
    pub handle_sets: Vec<Vec<PointSet>>,
    pub targets: Vec<Vec<Point>>,
    pub mask_points: Option<Vec<PointSet>>,
    pub masks: Vec<Grid2D>,
    pub set_radius: usize,
}

impl PropagatedInputs {
    pub fn frames(&self) -> usize {
        self.handle_sets.len()
    }

    pub fn clicks(&self) -> usize {
        self.handle_sets.first().map_or(0, |f| f.len())
    }

    pub fn center_index(&self) -> usize {
        patch_center_index(self.set_radius)
    }

    /// Center handle point (the user's click) for a click at a frame.
    pub fn center(&self, frame: usize, click: usize) -> Point {
        self.handle_sets[frame][click].points[self.center_index()]
    }
}

/// Expand a click into the `(2r+1)^2` points of a square patch, clamped to
/// the frame. The center point sits at `patch_center_index(radius)`.
pub fn expand_to_set(p: Point, radius: usize, width: usize, height: usize) -> PointSet {
    let points = patch_offsets(radius)
        .into_iter()
        .map(|(dx, dy)| p.offset(dx as f64, dy as f64).clamp_to(width, height))
        .collect();
    PointSet::unlabeled(points)
}

/// Propagate one point set from `frame` to `frame + 1`.
///
/// Points are labeled by the segmentation oracle at the source frame.
/// Foreground points map through the correspondence oracle; each background
/// point reuses the displacement of its nearest foreground point (ties break
/// to the lowest point index). A set with no foreground points maps every
/// point through the correspondence oracle directly. The returned set carries
/// the source-frame labels that drove each point's rule.
pub fn propagate_handles(
    set: &PointSet,
    frame: usize,
    seg: &dyn Segmenter,
    corr: &dyn Correspondence,
    width: usize,
    height: usize,
) -> Result<PointSet> {
    if set.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let labels: Vec<PointLabel> = set
        .points
        .iter()
        .map(|&p| seg.label(frame, p))
        .collect::<Result<_>>()?;

    let fg: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == PointLabel::Foreground)
        .map(|(i, _)| i)
        .collect();

    let mut next = Vec::with_capacity(set.len());
    if fg.is_empty() {
        for &p in &set.points {
            next.push(corr.map_forward(frame, p)?.clamp_to(width, height));
        }
    } else {
        let mut fg_next = vec![Point::new(0.0, 0.0); set.len()];
        for &i in &fg {
            fg_next[i] = corr.map_forward(frame, set.points[i])?;
        }
        for (i, &p) in set.points.iter().enumerate() {
            let q = if labels[i] == PointLabel::Foreground {
                fg_next[i]
            } else {
                // Nearest foreground point in Euclidean distance.
                let mut best = fg[0];
                let mut best_d = p.distance(set.points[fg[0]]);
                for &j in &fg[1..] {
                    let d = p.distance(set.points[j]);
                    if d < best_d {
                        best = j;
                        best_d = d;
                    }
                }
                let motion = (
                    fg_next[best].x - set.points[best].x,
                    fg_next[best].y - set.points[best].y,
                );
                p.offset(motion.0, motion.1)
            };
            next.push(q.clamp_to(width, height));
        }
    }
    Ok(PointSet::with_labels(next, labels))
}

/// Move a target in parallel with its handle: `q + (p_next - p)`, clamped.
pub fn propagate_targets(
    q: Point,
    p: Point,
    p_next: Point,
    width: usize,
    height: usize,
) -> Point {
    q.offset(p_next.x - p.x, p_next.y - p.y).clamp_to(width, height)
}

/// Propagate mask points across all frames and rasterize per-frame masks.
///
/// A cell is masked when it lies within the square patch of half-width
/// `patch_radius` around any of that frame's mask points. An empty input
/// yields all-ones masks (the whole frame is editable).
pub fn propagate_masks(
    mask_points_0: &[Point],
    patch_radius: usize,
    seg: &dyn Segmenter,
    corr: &dyn Correspondence,
    frames: usize,
    width: usize,
    height: usize,
) -> Result<(Option<Vec<PointSet>>, Vec<Grid2D>)> {
    if mask_points_0.is_empty() {
        let masks = (0..frames).map(|_| Grid2D::filled(height, width, 1, 1.0)).collect();
        return Ok((None, masks));
    }
    let mut sets = Vec::with_capacity(frames);
    sets.push(PointSet::unlabeled(mask_points_0.to_vec()));
    for i in 0..frames - 1 {
        let next = propagate_handles(&sets[i], i, seg, corr, width, height)?;
        sets.push(next);
    }
    let masks = sets
        .iter()
        .map(|s| rasterize_mask(s, patch_radius, width, height))
        .collect();
    Ok((Some(sets), masks))
}

/// Union of square patches around the given points.
pub fn rasterize_mask(points: &PointSet, patch_radius: usize, width: usize, height: usize) -> Grid2D {
    let r = patch_radius as f64;
    let mut m = Grid2D::zeros(height, width, 1);
    for p in &points.points {
        let x_lo = ((p.x - r).ceil().max(0.0)) as usize;
        let x_hi = ((p.x + r).floor().min((width - 1) as f64)) as usize;
        let y_lo = ((p.y - r).ceil().max(0.0)) as usize;
        let y_hi = ((p.y + r).floor().min((height - 1) as f64)) as usize;
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                m.set(x, y, 0, 1.0);
            }
        }
    }
    m
}

/// Expand and propagate all user inputs across the video.
pub fn propagate_all(
    drag: &DragSpec,
    set_radius: usize,
    mask_patch_radius: usize,
    seg: &dyn Segmenter,
    corr: &dyn Correspondence,
    frames: usize,
    width: usize,
    height: usize,
) -> Result<PropagatedInputs> {
    drag.validate(width, height)?;

    let center_idx = patch_center_index(set_radius);
    let mut handle_sets: Vec<Vec<PointSet>> = Vec::with_capacity(frames);
    let mut targets: Vec<Vec<Point>> = Vec::with_capacity(frames);

    let first: Vec<PointSet> = drag
        .handles
        .iter()
        .map(|&p| expand_to_set(p, set_radius, width, height))
        .collect();
    handle_sets.push(first);
    targets.push(drag.targets.clone());

    for i in 0..frames - 1 {
        let mut next_sets = Vec::with_capacity(drag.handles.len());
        let mut next_targets = Vec::with_capacity(drag.handles.len());
        for (click, set) in handle_sets[i].iter().enumerate() {
            let next = propagate_handles(set, i, seg, corr, width, height)?;
            let q = propagate_targets(
                targets[i][click],
                set.points[center_idx],
                next.points[center_idx],
                width,
                height,
            );
            next_sets.push(next);
            next_targets.push(q);
        }
        handle_sets.push(next_sets);
        targets.push(next_targets);
    }

    // Label the frame-0 sets too, so the stored labels always describe the
    // source frame of each set.
    for set in &mut handle_sets[0] {
        for (i, &p) in set.points.clone().iter().enumerate() {
            set.labels[i] = Some(seg.label(0, p)?);
        }
    }

    let (mask_points, masks) = propagate_masks(
        &drag.mask_points,
        mask_patch_radius,
        seg,
        corr,
        frames,
        width,
        height,
    )?;

    Ok(PropagatedInputs {
        handle_sets,
        targets,
        mask_points,
        masks,
        set_radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render_scene, SceneKind, SceneSpec};

    /// Segmenter driven by a closure, for closed-form propagation tests.
    struct StubSeg<F: Fn(usize, Point) -> PointLabel>(F);
    impl<F: Fn(usize, Point) -> PointLabel> Segmenter for StubSeg<F> {
        fn label(&self, frame: usize, p: Point) -> Result<PointLabel> {
            Ok((self.0)(frame, p))
        }
    }

    /// Correspondence driven by a closure.
    struct StubCorr<F: Fn(usize, Point) -> Point>(F);
    impl<F: Fn(usize, Point) -> Point> Correspondence for StubCorr<F> {
        fn map_forward(&self, frame: usize, p: Point) -> Result<Point> {
            Ok((self.0)(frame, p))
        }
    }

    #[test]
    fn expand_forms_square_sets() {
        let s = expand_to_set(Point::new(10.0, 10.0), 1, 64, 64);
        assert_eq!(s.len(), 9);
        let expected: Vec<Point> = patch_offsets(1)
            .into_iter()
            .map(|(dx, dy)| Point::new(10.0 + dx as f64, 10.0 + dy as f64))
            .collect();
        assert_eq!(s.points, expected);
        assert_eq!(s.points[patch_center_index(1)], Point::new(10.0, 10.0));

        let single = expand_to_set(Point::new(5.0, 5.0), 0, 64, 64);
        assert_eq!(single.points, vec![Point::new(5.0, 5.0)]);
    }

    #[test]
    fn expand_clamps_at_the_border() {
        let s = expand_to_set(Point::new(0.0, 0.0), 1, 64, 64);
        assert_eq!(s.len(), 9);
        // Oracle: clamp applied per point.
        let expected: Vec<Point> = patch_offsets(1)
            .into_iter()
            .map(|(dx, dy)| Point::new((dx as f64).max(0.0), (dy as f64).max(0.0)))
            .collect();
        assert_eq!(s.points, expected);
    }

    #[test]
    fn all_foreground_set_translates_uniformly() {
        let seg = StubSeg(|_, _| PointLabel::Foreground);
        let corr = StubCorr(|_, p: Point| p.offset(2.0, 0.0));
        let set = expand_to_set(Point::new(20.0, 20.0), 1, 64, 64);
        let next = propagate_handles(&set, 0, &seg, &corr, 64, 64).unwrap();
        for (a, b) in next.points.iter().zip(&set.points) {
            assert_eq!(*a, b.offset(2.0, 0.0));
        }
    }

    #[test]
    fn background_point_follows_nearest_foreground_motion() {
        // Foreground point at (10,10) moves to (12,11); background at (5,5)
        // must land on (7,6).
        let seg = StubSeg(|_, p: Point| {
            if p.x == 10.0 && p.y == 10.0 {
                PointLabel::Foreground
            } else {
                PointLabel::Background
            }
        });
        let corr = StubCorr(|_, p: Point| {
            if p.x == 10.0 && p.y == 10.0 {
                Point::new(12.0, 11.0)
            } else {
                p
            }
        });
        let set = PointSet::unlabeled(vec![Point::new(10.0, 10.0), Point::new(5.0, 5.0)]);
        let next = propagate_handles(&set, 0, &seg, &corr, 64, 64).unwrap();
        assert_eq!(next.points[0], Point::new(12.0, 11.0));
        assert_eq!(next.points[1], Point::new(7.0, 6.0));
        assert_eq!(next.labels[1], Some(PointLabel::Background));
    }

    #[test]
    fn nearest_foreground_ties_break_to_lowest_index() {
        // Two foreground points equidistant from the background point but
        // with different motions.
        let seg = StubSeg(|_, p: Point| {
            if p.y == 0.0 {
                PointLabel::Foreground
            } else {
                PointLabel::Background
            }
        });
        let corr = StubCorr(|_, p: Point| {
            if p.x == 4.0 {
                p.offset(1.0, 0.0)
            } else {
                p.offset(0.0, 1.0)
            }
        });
        let set = PointSet::unlabeled(vec![
            Point::new(4.0, 0.0),
            Point::new(6.0, 0.0),
            Point::new(5.0, 3.0),
        ]);
        let next = propagate_handles(&set, 0, &seg, &corr, 64, 64).unwrap();
        // Ties at distance sqrt(10); index 0 wins, motion (1, 0).
        assert_eq!(next.points[2], Point::new(6.0, 3.0));
    }

    #[test]
    fn empty_set_is_rejected() {
        let seg = StubSeg(|_, _| PointLabel::Foreground);
        let corr = StubCorr(|_, p: Point| p);
        let set = PointSet::unlabeled(vec![]);
        assert!(matches!(
            propagate_handles(&set, 0, &seg, &corr, 64, 64),
            Err(Error::EmptyPointSet)
        ));
    }

    #[test]
    fn set_without_foreground_maps_by_correspondence() {
        let seg = StubSeg(|_, _| PointLabel::Background);
        let corr = StubCorr(|_, p: Point| p.offset(-1.0, 2.0));
        let set = PointSet::unlabeled(vec![Point::new(8.0, 8.0), Point::new(9.0, 9.0)]);
        let next = propagate_handles(&set, 0, &seg, &corr, 64, 64).unwrap();
        assert_eq!(next.points[0], Point::new(7.0, 10.0));
        assert_eq!(next.points[1], Point::new(8.0, 11.0));
    }

    #[test]
    fn target_moves_in_parallel_with_handle() {
        let q = propagate_targets(
            Point::new(20.0, 10.0),
            Point::new(10.0, 10.0),
            Point::new(12.0, 11.0),
            64,
            64,
        );
        assert_eq!(q, Point::new(22.0, 11.0));

        // Zero handle motion keeps the target fixed.
        let q2 = propagate_targets(
            Point::new(20.0, 10.0),
            Point::new(10.0, 10.0),
            Point::new(10.0, 10.0),
            64,
            64,
        );
        assert_eq!(q2, Point::new(20.0, 10.0));
    }

    #[test]
    fn target_clamps_at_right_border() {
        let q = propagate_targets(
            Point::new(62.0, 10.0),
            Point::new(50.0, 10.0),
            Point::new(58.0, 10.0),
            64,
            64,
        );
        assert_eq!(q, Point::new(63.0, 10.0));
    }

    #[test]
    fn single_mask_point_covers_81_cells() {
        let set = PointSet::unlabeled(vec![Point::new(20.0, 20.0)]);
        let m = rasterize_mask(&set, 4, 64, 64);
        let area: f64 = m.data().iter().sum();
        assert_eq!(area, 81.0);
    }

    #[test]
    fn two_close_mask_points_union_below_double() {
        let set = PointSet::unlabeled(vec![Point::new(20.0, 20.0), Point::new(23.0, 20.0)]);
        let m = rasterize_mask(&set, 4, 64, 64);
        let area: f64 = m.data().iter().sum();
        // Oracle: direct union count of the two rasterized patches.
        let mut cells = std::collections::HashSet::new();
        for p in [(20.0_f64, 20.0_f64), (23.0, 20.0)] {
            for y in 0..64_i64 {
                for x in 0..64_i64 {
                    if (x as f64 - p.0).abs() <= 4.0 && (y as f64 - p.1).abs() <= 4.0 {
                        cells.insert((x, y));
                    }
                }
            }
        }
        assert_eq!(area, cells.len() as f64);
        assert!(area < 162.0);
    }

    #[test]
    fn empty_mask_points_give_all_ones_masks() {
        let seg = StubSeg(|_, _| PointLabel::Foreground);
        let corr = StubCorr(|_, p: Point| p);
        let (sets, masks) = propagate_masks(&[], 4, &seg, &corr, 3, 32, 32).unwrap();
        assert!(sets.is_none());
        for m in &masks {
            assert!(m.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn mask_rasterization_is_idempotent() {
        let set = PointSet::unlabeled(vec![Point::new(10.3, 11.7), Point::new(14.0, 9.0)]);
        let a = rasterize_mask(&set, 4, 32, 32);
        let b = rasterize_mask(&set, 4, 32, 32);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn pure_translation_propagation_tracks_ground_truth() {
        let spec = SceneSpec {
            kind: SceneKind::TranslatingBlob,
            frames: 5,
            height: 64,
            width: 64,
            velocity: (2.0, 0.0),
            angular_rate: 0.0,
            jitter: (0.0, 0.0),
            texture_seed: 3,
        };
        let truth = render_scene(&spec).unwrap();
        let c0 = spec.blob_center(0);
        let drag = DragSpec {
            handles: vec![Point::new(c0.x - 3.0, c0.y)],
            targets: vec![Point::new(c0.x + 5.0, c0.y)],
            mask_points: vec![c0],
        };
        let prop = propagate_all(&drag, 1, 4, &truth, &truth, 5, 64, 64).unwrap();
        for frame in 0..5 {
            let off = spec.object_offset(frame);
            for (j, p) in prop.handle_sets[frame][0].points.iter().enumerate() {
                let expect = prop.handle_sets[0][0].points[j].offset(off.0, off.1);
                assert!(p.distance(expect) <= 0.5, "frame {frame} member {j}");
            }
            // Targets obey the parallelogram rule exactly.
            let center_motion_x = prop.center(frame, 0).x - prop.center(0, 0).x;
            let center_motion_y = prop.center(frame, 0).y - prop.center(0, 0).y;
            let q = prop.targets[frame][0];
            assert!((q.x - (drag.targets[0].x + center_motion_x)).abs() < 1e-9);
            assert!((q.y - (drag.targets[0].y + center_motion_y)).abs() < 1e-9);
            // Mask points track the blob too.
            let mp = &prop.mask_points.as_ref().unwrap()[frame].points[0];
            assert!(mp.distance(c0.offset(off.0, off.1)) <= 0.5);
        }
    }

    #[test]
    fn propagation_preserves_count_and_order() {
        let spec = SceneSpec {
            kind: SceneKind::TranslatingBlob,
            frames: 4,
            height: 64,
            width: 64,
            velocity: (1.0, 1.0),
            angular_rate: 0.0,
            jitter: (0.0, 0.0),
            texture_seed: 3,
        };
        let truth = render_scene(&spec).unwrap();
        let c0 = spec.blob_center(0);
        let drag = DragSpec {
            handles: vec![c0, Point::new(c0.x + 4.0, c0.y)],
            targets: vec![Point::new(c0.x, c0.y + 6.0), Point::new(c0.x + 4.0, c0.y + 6.0)],
            mask_points: vec![],
        };
        let prop = propagate_all(&drag, 1, 4, &truth, &truth, 4, 64, 64).unwrap();
        assert_eq!(prop.frames(), 4);
        assert_eq!(prop.clicks(), 2);
        for frame in &prop.handle_sets {
            for set in frame {
                assert_eq!(set.len(), 9);
            }
        }
    }

    #[test]
    fn spire_set_keeps_covering_the_spire() {
        let spec = SceneSpec {
            kind: SceneKind::ThinSpire,
            frames: 4,
            height: 64,
            width: 64,
            velocity: (1.0, 0.0),
            angular_rate: 0.0,
            jitter: (0.0, 0.0),
            texture_seed: 3,
        };
        let truth = render_scene(&spec).unwrap();
        let cx = spec.spire_center_x(0);
        let set0 = expand_to_set(Point::new(cx, 32.0), 1, 64, 64);
        let mut set = set0;
        for frame in 0..3 {
            set = propagate_handles(&set, frame, &truth, &truth, 64, 64).unwrap();
            let spire_x = spec.spire_center_x(frame + 1);
            // Foreground-labeled members at the source frame must still sit
            // on the spire after following exact correspondence; background
            // members follow their nearest spire point's motion.
            let fg = set.foreground_indices();
            assert!(!fg.is_empty(), "frame {frame}: no foreground members");
            for &j in &fg {
                assert!(
                    (set.points[j].x - spire_x).abs() <= 1.5,
                    "frame {frame} member {j} at {:?} vs spire x {spire_x}",
                    set.points[j]
                );
            }
        }
    }
}
