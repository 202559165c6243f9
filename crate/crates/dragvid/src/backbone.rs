//! Invertible noising backbone and a fixed differentiable feature extractor.
//!
//! Inversion is the exact closed form `z_t = sqrt(a_t) z_0 + sqrt(1-a_t) e`
//! with a cosine schedule `a_t = cos^2((t/T_max) pi/2)`, so un-noising
//! recovers `z_0` to machine precision. Learnable offsets are decoupled per
//! timestep; re-noising to each selected timestep with the shared noise,
//! adding the offset, and de-noising again collapses to the closed form
//! `z_0 + sum_t o_t / sqrt(a_t)`, which is what [`decode`] computes.
//!
//! Features are `tanh(blur^r_t(mix(x)))` where `mix` is a fixed seeded
//! orthonormal channel map, `blur` is a separable 1-2-1 binomial smoother
//! with clamped borders, and `r_t = 1 + t/10`, so noisier timesteps see
//! smoother fields. All adjoints are hand-derived: the channel map
//! transposes, the clamped blur matrix is symmetric (self-adjoint), and
//! `tanh' = 1 - tanh^2`.

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::rng::{derive_seed, seeded_field, standard_normal_at};

/// Cosine noising schedule over `t_max` steps.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    t_max: usize,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(t_max: usize) -> Self {
        assert!(t_max > 0);
        let alpha_bar = (0..t_max)
            .map(|t| {
                let a = ((t as f64 / t_max as f64) * std::f64::consts::FRAC_PI_2).cos();
                a * a
            })
            .collect();
        NoiseSchedule { t_max, alpha_bar }
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or(Error::TimestepOutOfRange {
                t,
                t_max: self.t_max,
            })
    }
}

impl Default for NoiseSchedule {
    /// 50 steps, so the default timestep set {42, 41, 35, 30} is meaningful.
    fn default() -> Self {
        NoiseSchedule::new(50)
    }
}

/// Closed-form inversion of a clean frame to timestep `t` with noise `eps`.
pub fn invert(z0: &Grid2D, t: usize, eps: &Grid2D, sched: &NoiseSchedule) -> Result<Grid2D> {
    if !z0.same_shape(eps) {
        return Err(Error::ShapeMismatch {
            expected: z0.shape_string(),
            got: eps.shape_string(),
        });
    }
    let a = sched.alpha_bar(t)?;
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    let data = z0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(z, e)| sa * z + sn * e)
        .collect();
    Grid2D::from_data(z0.height(), z0.width(), z0.channels(), data)
}

/// Exact recovery of `z_0` from an inverted latent and its noise.
pub fn uninvert(zt: &Grid2D, t: usize, eps: &Grid2D, sched: &NoiseSchedule) -> Result<Grid2D> {
    if !zt.same_shape(eps) {
        return Err(Error::ShapeMismatch {
            expected: zt.shape_string(),
            got: eps.shape_string(),
        });
    }
    let a = sched.alpha_bar(t)?;
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    let data = zt
        .data()
        .iter()
        .zip(eps.data())
        .map(|(z, e)| (z - sn * e) / sa)
        .collect();
    Grid2D::from_data(zt.height(), zt.width(), zt.channels(), data)
}

/// Compose per-timestep offsets into the clean frame: `z_0 + sum o_t / sqrt(a_t)`.
///
/// This equals re-noising to each timestep in descending order, adding the
/// offset, and de-noising with the shared noise; the noise terms cancel and
/// each offset enters scaled by `1/sqrt(a_t)`.
pub fn decode(
    z0: &Grid2D,
    timesteps: &[usize],
    offsets: &[Grid2D],
    sched: &NoiseSchedule,
) -> Result<Grid2D> {
    assert_eq!(timesteps.len(), offsets.len());
    let mut out = z0.clone();
    for (&t, o) in timesteps.iter().zip(offsets) {
        if !o.same_shape(z0) {
            return Err(Error::ShapeMismatch {
                expected: z0.shape_string(),
                got: o.shape_string(),
            });
        }
        let a = sched.alpha_bar(t)?;
        out.add_scaled(o, 1.0 / a.sqrt());
    }
    Ok(out)
}

/// One separable 1-2-1 binomial blur pass (horizontal then vertical) with
/// clamped borders. The border clamp folds the out-of-range tap onto the
/// edge cell, which makes the blur matrix symmetric and hence self-adjoint.
pub fn binomial_blur(g: &Grid2D) -> Grid2D {
    let (h, w, c) = (g.height(), g.width(), g.channels());
    let mut mid = Grid2D::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            for ch in 0..c {
                let v =
                    0.25 * g.get(xm, y, ch) + 0.5 * g.get(x, y, ch) + 0.25 * g.get(xp, y, ch);
                mid.set(x, y, ch, v);
            }
        }
    }
    let mut out = Grid2D::zeros(h, w, c);
    for y in 0..h {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        for x in 0..w {
            for ch in 0..c {
                let v = 0.25 * mid.get(x, ym, ch)
                    + 0.5 * mid.get(x, y, ch)
                    + 0.25 * mid.get(x, yp, ch);
                out.set(x, y, ch, v);
            }
        }
    }
    out
}

/// Fixed differentiable feature extractor.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    /// Row-orthonormal channel map, `c_lat x c_feat`, row-major.
    mix: Vec<f64>,
    c_lat: usize,
    c_feat: usize,
    gain: f64,
}

impl FeatureExtractor {
    /// Default feature width used by the pipeline.
    pub const FEATURE_CHANNELS: usize = 8;

    /// Build from a seed. The channel map is a seeded Gaussian matrix whose
    /// rows are orthonormalized, so its adjoint is its transpose.
    pub fn new(seed: u64, c_lat: usize, c_feat: usize) -> Self {
        assert!(c_lat > 0 && c_feat >= c_lat, "need c_lat <= c_feat");
        let mut mix = vec![0.0; c_lat * c_feat];
        for (i, v) in mix.iter_mut().enumerate() {
            *v = standard_normal_at(derive_seed(seed, 0x517), i as u64);
        }
        // Gram-Schmidt on rows.
        for r in 0..c_lat {
            for prev in 0..r {
                let dot: f64 = (0..c_feat)
                    .map(|k| mix[r * c_feat + k] * mix[prev * c_feat + k])
                    .sum();
                for k in 0..c_feat {
                    mix[r * c_feat + k] -= dot * mix[prev * c_feat + k];
                }
            }
            let norm: f64 = (0..c_feat)
                .map(|k| mix[r * c_feat + k] * mix[r * c_feat + k])
                .sum::<f64>()
                .sqrt();
            for k in 0..c_feat {
                mix[r * c_feat + k] /= norm;
            }
        }
        FeatureExtractor {
            mix,
            c_lat,
            c_feat,
            gain: 1.0,
        }
    }

    pub fn latent_channels(&self) -> usize {
        self.c_lat
    }

    pub fn feature_channels(&self) -> usize {
        self.c_feat
    }

    /// Blur repetitions at timestep `t`.
    pub fn blur_reps(t: usize) -> usize {
        1 + t / 10
    }

    fn check_input(&self, x: &Grid2D) -> Result<()> {
        if x.channels() != self.c_lat {
            return Err(Error::ShapeMismatch {
                expected: format!("{} channels", self.c_lat),
                got: format!("{} channels", x.channels()),
            });
        }
        Ok(())
    }

    fn mix_forward(&self, x: &Grid2D) -> Grid2D {
        let (h, w) = (x.height(), x.width());
        let mut out = Grid2D::zeros(h, w, self.c_feat);
        for y in 0..h {
            for xx in 0..w {
                for f in 0..self.c_feat {
                    let mut acc = 0.0;
                    for l in 0..self.c_lat {
                        acc += self.mix[l * self.c_feat + f] * x.get(xx, y, l);
                    }
                    out.set(xx, y, f, acc);
                }
            }
        }
        out
    }

    fn mix_adjoint(&self, g: &Grid2D) -> Grid2D {
        let (h, w) = (g.height(), g.width());
        let mut out = Grid2D::zeros(h, w, self.c_lat);
        for y in 0..h {
            for xx in 0..w {
                for l in 0..self.c_lat {
                    let mut acc = 0.0;
                    for f in 0..self.c_feat {
                        acc += self.mix[l * self.c_feat + f] * g.get(xx, y, f);
                    }
                    out.set(xx, y, l, acc);
                }
            }
        }
        out
    }

    /// Pre-nonlinearity field: `blur^r_t(mix(x))`.
    fn linear_forward(&self, x: &Grid2D, t: usize) -> Grid2D {
        let mut u = self.mix_forward(x);
        for _ in 0..Self::blur_reps(t) {
            u = binomial_blur(&u);
        }
        u
    }

    /// Feature field of a latent at timestep `t`.
    pub fn features(&self, x: &Grid2D, t: usize) -> Result<Grid2D> {
        self.check_input(x)?;
        let gain = self.gain;
        Ok(self.linear_forward(x, t).map(|u| (gain * u).tanh()))
    }

    /// Reverse-mode derivative: `d<cotangent, features(x)>/dx`.
    pub fn features_adjoint(&self, x: &Grid2D, t: usize, cotangent: &Grid2D) -> Result<Grid2D> {
        self.check_input(x)?;
        let u = self.linear_forward(x, t);
        if !cotangent.same_shape(&u) {
            return Err(Error::ShapeMismatch {
                expected: u.shape_string(),
                got: cotangent.shape_string(),
            });
        }
        // tanh'(g u) * g, elementwise on the cotangent.
        let gain = self.gain;
        let mut g = Grid2D::zeros(u.height(), u.width(), u.channels());
        for (i, gv) in g.data_mut().iter_mut().enumerate() {
            let th = (gain * u.data()[i]).tanh();
            *gv = cotangent.data()[i] * gain * (1.0 - th * th);
        }
        // The clamped binomial blur is self-adjoint.
        for _ in 0..Self::blur_reps(t) {
            g = binomial_blur(&g);
        }
        Ok(self.mix_adjoint(&g))
    }
}

/// Per-frame, per-timestep latents, learnable offsets, and optimizer moments.
#[derive(Debug, Clone)]
pub struct FrameLatents {
    pub z0: Grid2D,
    pub noise: Grid2D,
    /// Inverted latents, one per selected timestep.
    pub inverted: Vec<Grid2D>,
    /// Learnable offsets, zero at iteration 0.
    pub offsets: Vec<Grid2D>,
    pub moment1: Vec<Grid2D>,
    pub moment2: Vec<Grid2D>,
}

/// All frames' latent state for a run.
#[derive(Debug, Clone)]
pub struct LatentStack {
    pub timesteps: Vec<usize>,
    pub frames: Vec<FrameLatents>,
    /// Optimizer steps taken so far (for bias correction).
    pub step_count: u64,
}

impl LatentStack {
    /// Invert every frame at every selected timestep with per-frame seeded
    /// noise derived from `seed`.
    pub fn invert_video(
        video: &[Grid2D],
        timesteps: &[usize],
        sched: &NoiseSchedule,
        seed: u64,
    ) -> Result<Self> {
        let mut frames = Vec::with_capacity(video.len());
        for (i, z0) in video.iter().enumerate() {
            let noise = seeded_field(
                derive_seed(seed, 0xE0 + i as u64),
                z0.height(),
                z0.width(),
                z0.channels(),
            );
            let mut inverted = Vec::with_capacity(timesteps.len());
            let mut offsets = Vec::with_capacity(timesteps.len());
            for &t in timesteps {
                inverted.push(invert(z0, t, &noise, sched)?);
                offsets.push(Grid2D::zeros(z0.height(), z0.width(), z0.channels()));
            }
            let moment1 = offsets.clone();
            let moment2 = offsets.clone();
            frames.push(FrameLatents {
                z0: z0.clone(),
                noise,
                inverted,
                offsets,
                moment1,
                moment2,
            });
        }
        Ok(LatentStack {
            timesteps: timesteps.to_vec(),
            frames,
            step_count: 0,
        })
    }

    /// Current optimizer input `z_t + o_t` for a frame and timestep index.
    pub fn latent(&self, frame: usize, t_index: usize) -> Grid2D {
        let f = &self.frames[frame];
        let mut x = f.inverted[t_index].clone();
        x.add_scaled(&f.offsets[t_index], 1.0);
        x
    }

    /// The current edited state re-inverted at one timestep: decode all
    /// offsets into the clean frame, then noise it back with the shared
    /// noise. Equals `z_t + sum_j o_j * sqrt(a_t / a_j)`, so every
    /// timestep's offset is visible in this single latent.
    pub fn composed_latent(
        &self,
        frame: usize,
        t_index: usize,
        sched: &NoiseSchedule,
    ) -> Result<Grid2D> {
        let f = &self.frames[frame];
        let a_t = sched.alpha_bar(self.timesteps[t_index])?;
        let mut x = f.inverted[t_index].clone();
        for (&tj, o) in self.timesteps.iter().zip(&f.offsets) {
            let a_j = sched.alpha_bar(tj)?;
            x.add_scaled(o, (a_t / a_j).sqrt());
        }
        Ok(x)
    }

    /// Decoded (edited) frame under the current offsets.
    pub fn decode_frame(&self, frame: usize, sched: &NoiseSchedule) -> Result<Grid2D> {
        let f = &self.frames[frame];
        decode(&f.z0, &self.timesteps, &f.offsets, sched)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_field;

    #[test]
    fn schedule_endpoints_and_monotonicity() {
        let s = NoiseSchedule::new(50);
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
        for t in 1..50 {
            let a = s.alpha_bar(t).unwrap();
            let prev = s.alpha_bar(t - 1).unwrap();
            assert!(a < prev && a > 0.0 && a <= 1.0);
        }
        assert!(s.alpha_bar(50).is_err());
    }

    #[test]
    fn invert_at_zero_returns_input() {
        let s = NoiseSchedule::new(50);
        let z0 = seeded_field(1, 8, 8, 2);
        let eps = seeded_field(2, 8, 8, 2);
        let z = invert(&z0, 0, &eps, &s).unwrap();
        assert_eq!(z.data(), z0.data());
    }

    #[test]
    fn invert_with_zero_noise_scales_by_sqrt_alpha() {
        let s = NoiseSchedule::new(50);
        let z0 = seeded_field(1, 8, 8, 1);
        let eps = Grid2D::zeros(8, 8, 1);
        for t in [10, 30, 42] {
            let z = invert(&z0, t, &eps, &s).unwrap();
            let a = s.alpha_bar(t).unwrap().sqrt();
            for (zi, z0i) in z.data().iter().zip(z0.data()) {
                assert!((zi - a * z0i).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn schedule_value_matches_direct_formula() {
        let s = NoiseSchedule::new(50);
        let direct = (0.6_f64 * std::f64::consts::FRAC_PI_2).cos().powi(2);
        assert!((s.alpha_bar(30).unwrap() - direct).abs() < 1e-15);
        assert!((direct - 0.3455).abs() < 1e-4);
        let z0 = seeded_field(4, 6, 6, 1);
        let eps = seeded_field(5, 6, 6, 1);
        let z = invert(&z0, 30, &eps, &s).unwrap();
        for i in 0..z.data().len() {
            let expect = direct.sqrt() * z0.data()[i] + (1.0 - direct).sqrt() * eps.data()[i];
            assert!((z.data()[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn uninvert_recovers_input_exactly() {
        let s = NoiseSchedule::new(50);
        let z0 = seeded_field(7, 12, 10, 3);
        let eps = seeded_field(8, 12, 10, 3);
        for t in [1, 30, 42, 49] {
            let zt = invert(&z0, t, &eps, &s).unwrap();
            let back = uninvert(&zt, t, &eps, &s).unwrap();
            for (a, b) in back.data().iter().zip(z0.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decode_identity_and_single_offset() {
        let s = NoiseSchedule::new(50);
        let z0 = seeded_field(3, 8, 8, 1);
        let zero = Grid2D::zeros(8, 8, 1);
        let out = decode(&z0, &[42, 30], &[zero.clone(), zero.clone()], &s).unwrap();
        assert_eq!(out.data(), z0.data());

        let c = 0.37;
        let o42 = Grid2D::filled(8, 8, 1, c);
        let out = decode(&z0, &[42], &[o42], &s).unwrap();
        let scale = 1.0 / s.alpha_bar(42).unwrap().sqrt();
        for (v, z) in out.data().iter().zip(z0.data()) {
            assert!((v - (z + c * scale)).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_matches_sequential_simulation() {
        // Oracle: renoise to each timestep in descending order, add the
        // offset, denoise with the shared noise.
        let s = NoiseSchedule::new(50);
        let z0 = seeded_field(11, 8, 8, 1);
        let eps = seeded_field(12, 8, 8, 1);
        let timesteps = [42usize, 30];
        let offsets = [seeded_field(13, 8, 8, 1), seeded_field(14, 8, 8, 1)];

        let mut sim = z0.clone();
        let mut order: Vec<usize> = (0..timesteps.len()).collect();
        order.sort_by(|&a, &b| timesteps[b].cmp(&timesteps[a]));
        for idx in order {
            let t = timesteps[idx];
            let mut zt = invert(&sim, t, &eps, &s).unwrap();
            zt.add_scaled(&offsets[idx], 1.0);
            sim = uninvert(&zt, t, &eps, &s).unwrap();
        }

        let closed = decode(&z0, &timesteps, &offsets, &s).unwrap();
        for (a, b) in closed.data().iter().zip(sim.data()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn decode_superposition() {
        let s = NoiseSchedule::new(50);
        let z0 = seeded_field(20, 8, 8, 1);
        let o1 = seeded_field(21, 8, 8, 1);
        let o2 = seeded_field(22, 8, 8, 1);
        let zero = Grid2D::zeros(8, 8, 1);
        let both = decode(&z0, &[42, 30], &[o1.clone(), o2.clone()], &s).unwrap();
        let first = decode(&z0, &[42, 30], &[o1, zero.clone()], &s).unwrap();
        let second = decode(&z0, &[42, 30], &[zero, o2], &s).unwrap();
        for i in 0..both.data().len() {
            let sum = first.data()[i] + second.data()[i] - z0.data()[i];
            assert!((both.data()[i] - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_input_gives_constant_features() {
        let fx = FeatureExtractor::new(9, 1, 8);
        let x = Grid2D::filled(10, 10, 1, 0.4);
        let f = fx.features(&x, 42).unwrap();
        for c in 0..8 {
            let v0 = f.get(0, 0, c);
            for y in 0..10 {
                for x in 0..10 {
                    assert!((f.get(x, y, c) - v0).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn small_signal_features_are_linear() {
        // With the pre-nonlinearity field below 1e-3 the cubic tanh error
        // stays under 1e-9.
        let fx = FeatureExtractor::new(9, 1, 8);
        let x = seeded_field(30, 12, 12, 1).map(|v| v * 2e-4);
        let f = fx.features(&x, 20).unwrap();
        let lin = fx.linear_forward(&x, 20);
        assert!(lin.max_abs() <= 1e-3);
        for (a, b) in f.data().iter().zip(lin.data()) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn more_blur_lowers_impulse_peak() {
        let fx = FeatureExtractor::new(9, 1, 8);
        let mut x = Grid2D::zeros(16, 16, 1);
        x.set(8, 8, 0, 1.0);
        let peak = |t: usize| fx.features(&x, t).unwrap().max_abs();
        assert!(peak(42) < peak(30));
    }

    #[test]
    fn feature_smoothing_reduces_total_variation_with_timestep() {
        let fx = FeatureExtractor::new(9, 1, 8);
        let x = seeded_field(31, 16, 16, 1);
        let tv = |g: &Grid2D| {
            let mut acc = 0.0;
            for c in 0..g.channels() {
                for y in 0..g.height() {
                    for xx in 0..g.width() {
                        if xx + 1 < g.width() {
                            acc += (g.get(xx + 1, y, c) - g.get(xx, y, c)).abs();
                        }
                        if y + 1 < g.height() {
                            acc += (g.get(xx, y + 1, c) - g.get(xx, y, c)).abs();
                        }
                    }
                }
            }
            acc
        };
        let mut prev = f64::INFINITY;
        for t in [0, 10, 20, 30, 42] {
            let cur = tv(&fx.features(&x, t).unwrap());
            assert!(cur <= prev + 1e-12, "tv grew at t={t}");
            prev = cur;
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let fx = FeatureExtractor::new(9, 1, 8);
        let x = seeded_field(32, 8, 8, 1);
        let cot = Grid2D::zeros(8, 8, 8);
        let g = fx.features_adjoint(&x, 42, &cot).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn linear_pipeline_satisfies_inner_product_identity() {
        // <A x, y> == <x, A^T y> for the mix+blur sub-pipeline.
        let fx = FeatureExtractor::new(9, 1, 8);
        let x = seeded_field(33, 9, 9, 1);
        let y = seeded_field(34, 9, 9, 8);
        let t = 42;
        let ax = fx.linear_forward(&x, t);
        let lhs: f64 = ax.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let mut aty = y.clone();
        for _ in 0..FeatureExtractor::blur_reps(t) {
            aty = binomial_blur(&aty);
        }
        let aty = fx.mix_adjoint(&aty);
        let rhs: f64 = aty.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let fx = FeatureExtractor::new(9, 1, 8);
        let x = seeded_field(35, 16, 16, 1);
        let cot = seeded_field(36, 16, 16, 8);
        let t = 25;
        let grad = fx.features_adjoint(&x, t, &cot).unwrap();

        let objective = |x: &Grid2D| -> f64 {
            let f = fx.features(x, t).unwrap();
            f.data().iter().zip(cot.data()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        let mut max_rel: f64 = 0.0;
        for i in (0..x.data().len()).step_by(7) {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (objective(&xp) - objective(&xm)) / (2.0 * h);
            let an = grad.data()[i];
            let denom = fd.abs().max(an.abs());
            if denom > 1e-9 {
                max_rel = max_rel.max((fd - an).abs() / denom);
            }
        }
        assert!(max_rel < 1e-6, "max relative error {max_rel}");
    }

    #[test]
    fn composed_latent_matches_reinverted_decode() {
        let sched = NoiseSchedule::default();
        let video: Vec<Grid2D> = (0..2).map(|i| seeded_field(60 + i, 10, 10, 1)).collect();
        let mut stack = LatentStack::invert_video(&video, &[42, 30], &sched, 5).unwrap();
        stack.frames[0].offsets[0] = seeded_field(70, 10, 10, 1).map(|v| 0.1 * v);
        stack.frames[0].offsets[1] = seeded_field(71, 10, 10, 1).map(|v| 0.1 * v);
        for (ti, &t) in [42usize, 30].iter().enumerate() {
            let direct = stack.composed_latent(0, ti, &sched).unwrap();
            let decoded = stack.decode_frame(0, &sched).unwrap();
            let reinverted = invert(&decoded, t, &stack.frames[0].noise, &sched).unwrap();
            for (a, b) in direct.data().iter().zip(reinverted.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn latent_stack_inverts_and_decodes_identity() {
        let sched = NoiseSchedule::default();
        let video: Vec<Grid2D> = (0..3).map(|i| seeded_field(40 + i, 12, 12, 1)).collect();
        let stack = LatentStack::invert_video(&video, &[42, 30], &sched, 77).unwrap();
        for (i, frame) in video.iter().enumerate() {
            // Invertibility by construction.
            for (ti, &t) in stack.timesteps.iter().enumerate() {
                let back = uninvert(
                    &stack.frames[i].inverted[ti],
                    t,
                    &stack.frames[i].noise,
                    &sched,
                )
                .unwrap();
                for (a, b) in back.data().iter().zip(frame.data()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
            // Zero offsets decode to the input.
            let dec = stack.decode_frame(i, &sched).unwrap();
            assert_eq!(dec.data(), frame.data());
        }
    }
}
