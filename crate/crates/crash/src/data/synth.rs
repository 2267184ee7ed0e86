//! Synthetic clip generator.
//!
//! Objects are 2-D points on smooth wandering trajectories around fixed,
//! well-separated anchor points. In a positive clip, one designated pair is
//! steered together: their separation ramps down during an approach window
//! and first drops below the collision radius exactly at the accident frame
//! tau, then stays there. Every other pairwise distance keeps a wide margin
//! at all times, so a threshold on the latent minimum pairwise distance
//! separates the classes perfectly - that is the ground truth the model is
//! supposed to rediscover from features.
//!
//! Per-frame object features are a fixed random linear map (shared by the
//! whole dataset) of [x, y, vx, vy, min distance to any other object], plus
//! N(0, 0.05^2) noise; the context vector is the mean object feature plus the
//! same noise. All values are quantized to f32 so the binary format
//! round-trips bit-exactly.

use super::{DataError, FrameFeatures, VideoSample};
use crate::autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pair anchor separation; the "far apart" baseline distance.
const PAIR_BASE: f64 = 2.0;
/// Anchor grid pitch for non-pair objects.
const GRID: f64 = 4.0;
/// Max wander amplitude around an anchor.
const WANDER: f64 = 0.25;
/// Distance below which the pair counts as collided.
const COLLISION_RADIUS: f64 = 0.5;
/// Pair separation floor before the accident frame.
const PRE_CRASH_FLOOR: f64 = 1.5 * COLLISION_RADIUS;
/// Pair separation at and after the accident frame.
const CRASH_DEPTH: f64 = 0.6 * COLLISION_RADIUS;
/// Amplitude of the baseline separation wiggle.
const SEP_WIGGLE: f64 = 0.4;
/// Approach window as a fraction of T.
const APPROACH_FRAC: f64 = 0.4;
/// Feature noise sigma.
const NOISE_SIGMA: f64 = 0.05;
/// Kinematic state width: x, y, vx, vy, min pairwise distance.
const STATE_DIM: usize = 5;

#[derive(Clone, Debug)]
pub struct GenConfig {
    pub t: usize,
    pub n: usize,
    pub d: usize,
    pub fps: f32,
}

/// Ground truth kept alongside a generated sample for oracle checks.
#[derive(Clone, Debug)]
pub struct LatentTrajectory {
    /// [T][n] object positions.
    pub positions: Vec<Vec<[f64; 2]>>,
    /// [T] minimum over all object pairs of their distance.
    pub min_pairwise: Vec<f64>,
    pub collision_radius: f64,
}

pub fn gen_synthetic(
    cfg: &GenConfig,
    count: usize,
    positive_fraction: f64,
    seed: u64,
) -> Result<Vec<VideoSample>, DataError> {
    gen_synthetic_traced(cfg, count, positive_fraction, seed).map(|(s, _)| s)
}

pub fn gen_synthetic_traced(
    cfg: &GenConfig,
    count: usize,
    positive_fraction: f64,
    seed: u64,
) -> Result<(Vec<VideoSample>, Vec<LatentTrajectory>), DataError> {
    if cfg.t == 0 || cfg.d == 0 {
        return Err(DataError::InvalidArg("generator needs t >= 1 and d >= 1".into()));
    }
    if cfg.n < 2 {
        return Err(DataError::InvalidArg("generator needs at least 2 objects".into()));
    }
    if count == 0 {
        return Err(DataError::InvalidArg("generator needs count >= 1".into()));
    }
    if !(0.0..=1.0).contains(&positive_fraction) {
        return Err(DataError::InvalidArg(format!(
            "positive fraction {positive_fraction} outside [0, 1]"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // One feature map for the whole dataset; per-video maps would make the
    // regression target unlearnable across videos.
    let fmap: Vec<f64> = (0..cfg.d * STATE_DIM)
        .map(|_| normal(&mut rng) / (STATE_DIM as f64).sqrt())
        .collect();

    let anchors = anchor_points(cfg.n);
    let center = centroid(&anchors);
    let n_pos = (positive_fraction * count as f64).round() as usize;

    let mut samples = Vec::with_capacity(count);
    let mut latents = Vec::with_capacity(count);
    for v in 0..count {
        let positive = v < n_pos;
        let (sample, latent) = gen_one(cfg, v, positive, &anchors, center, &fmap, &mut rng);
        samples.push(sample);
        latents.push(latent);
    }
    Ok((samples, latents))
}

fn gen_one(
    cfg: &GenConfig,
    index: usize,
    positive: bool,
    anchors: &[[f64; 2]],
    center: [f64; 2],
    fmap: &[f64],
    rng: &mut ChaCha8Rng,
) -> (VideoSample, LatentTrajectory) {
    let t_frames = cfg.t;
    let tau = if positive {
        let lo = ((0.6 * t_frames as f64).round() as usize).clamp(1, t_frames);
        let hi = ((0.9 * t_frames as f64).round() as usize).clamp(lo, t_frames);
        Some(rng.gen_range(lo..=hi))
    } else {
        None
    };

    // Smooth wander around each anchor; the pair (objects 0 and 1) instead
    // shares a wandering midpoint and an explicitly controlled separation.
    let mid_wander = Wander::draw(rng);
    let theta0: f64 = rng.gen_range(-0.2..0.2);
    let theta_amp: f64 = rng.gen_range(0.1..0.3);
    let theta_freq: f64 = rng.gen_range(1.0..2.0);
    let theta_phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let sep_freq: f64 = rng.gen_range(1.0..2.0);
    let sep_phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let others: Vec<Wander> = (2..cfg.n).map(|_| Wander::draw(rng)).collect();

    let base_sep =
        |t: usize| PAIR_BASE + SEP_WIGGLE * phase(sep_freq, sep_phase, t, t_frames).sin();
    let separation = |t: usize| -> f64 {
        match tau {
            None => base_sep(t),
            Some(tau) => {
                let ramp_len = ((APPROACH_FRAC * t_frames as f64).round() as usize).max(2);
                let t0 = tau.saturating_sub(ramp_len).max(1);
                if t >= tau {
                    CRASH_DEPTH
                } else if t < t0 || tau - 1 <= t0 {
                    if t == tau - 1 && tau - 1 <= t0 {
                        PRE_CRASH_FLOOR
                    } else {
                        base_sep(t)
                    }
                } else {
                    // Cosine ramp from the baseline at t0 down to the
                    // pre-crash floor at tau - 1; the frame at tau then drops
                    // below the collision radius in one step, which pins the
                    // first crossing to tau exactly.
                    let span = (tau - 1 - t0) as f64;
                    let x = (t - t0) as f64 / span;
                    let start = base_sep(t0);
                    PRE_CRASH_FLOOR + (start - PRE_CRASH_FLOOR) * (1.0 + (std::f64::consts::PI * x).cos()) / 2.0
                }
            }
        }
    };

    let mut positions: Vec<Vec<[f64; 2]>> = Vec::with_capacity(t_frames);
    for t in 1..=t_frames {
        let mut frame = Vec::with_capacity(cfg.n);
        let mid = add(midpoint(anchors[0], anchors[1]), mid_wander.at(t, t_frames));
        let th = theta0 + theta_amp * phase(theta_freq, theta_phase, t, t_frames).sin();
        let dir = [th.cos(), th.sin()];
        let half = separation(t) / 2.0;
        frame.push([mid[0] + half * dir[0], mid[1] + half * dir[1]]);
        frame.push([mid[0] - half * dir[0], mid[1] - half * dir[1]]);
        for (k, w) in others.iter().enumerate() {
            frame.push(add(anchors[k + 2], w.at(t, t_frames)));
        }
        positions.push(frame);
    }

    let min_pairwise: Vec<f64> = positions.iter().map(|f| min_pair_distance(f)).collect();

    // Kinematics: backward-difference velocity, first frame copying the second.
    let fps = cfg.fps as f64;
    let mut frames = Vec::with_capacity(t_frames);
    for t in 0..t_frames {
        let vel_from = if t == 0 { 1.min(t_frames - 1) } else { t };
        let mut obj_rows = Vec::with_capacity(cfg.n * cfg.d);
        let mut mean_row = vec![0.0; cfg.d];
        for i in 0..cfg.n {
            let p = positions[t][i];
            let v = if t_frames == 1 {
                [0.0, 0.0]
            } else {
                [
                    (positions[vel_from][i][0] - positions[vel_from - 1][i][0]) * fps,
                    (positions[vel_from][i][1] - positions[vel_from - 1][i][1]) * fps,
                ]
            };
            let mind = min_dist_to_others(&positions[t], i);
            let state = [p[0] - center[0], p[1] - center[1], v[0], v[1], mind];
            for j in 0..cfg.d {
                let mut acc = 0.0;
                for (s, &w) in state.iter().zip(&fmap[j * STATE_DIM..(j + 1) * STATE_DIM]) {
                    acc += s * w;
                }
                let val = quant(acc + NOISE_SIGMA * normal(rng));
                obj_rows.push(val);
                mean_row[j] += val;
            }
        }
        let context: Vec<f64> = mean_row
            .into_iter()
            .map(|s| quant(s / cfg.n as f64 + NOISE_SIGMA * normal(rng)))
            .collect();
        frames.push(FrameFeatures {
            objects: Tensor::new(vec![cfg.n, cfg.d], obj_rows),
            context: Tensor::new(vec![cfg.d], context),
            observed: true,
        });
    }

    let sample = VideoSample {
        id: format!("v{index:05}"),
        fps: cfg.fps,
        label: positive,
        tau: tau.map(|t| t as u32),
        frames,
    };
    let latent = LatentTrajectory {
        positions,
        min_pairwise,
        collision_radius: COLLISION_RADIUS,
    };
    (sample, latent)
}

/// Bounded sinusoidal drift around zero, independent per axis.
struct Wander {
    amp: [f64; 2],
    freq: [f64; 2],
    phase: [f64; 2],
}

impl Wander {
    fn draw(rng: &mut ChaCha8Rng) -> Wander {
        let mut part = || {
            (
                rng.gen_range(0.1..WANDER),
                rng.gen_range(1.0..3.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        };
        let (a0, f0, p0) = part();
        let (a1, f1, p1) = part();
        Wander {
            amp: [a0, a1],
            freq: [f0, f1],
            phase: [p0, p1],
        }
    }

    fn at(&self, t: usize, t_total: usize) -> [f64; 2] {
        [
            self.amp[0] * phase(self.freq[0], self.phase[0], t, t_total).sin(),
            self.amp[1] * phase(self.freq[1], self.phase[1], t, t_total).sin(),
        ]
    }
}

fn phase(freq: f64, phase0: f64, t: usize, t_total: usize) -> f64 {
    phase0 + std::f64::consts::TAU * freq * t as f64 / t_total as f64
}

/// Anchors: the pair shares the bottom row, everyone else sits on a grid two
/// pitches above it, so only the designated pair can ever get close.
fn anchor_points(n: usize) -> Vec<[f64; 2]> {
    let mut pts = vec![[0.0, 0.0], [PAIR_BASE, 0.0]];
    for k in 0..n.saturating_sub(2) {
        let (col, row) = (k % 4, k / 4);
        pts.push([GRID * col as f64, GRID * (1 + row) as f64]);
    }
    pts
}

fn centroid(pts: &[[f64; 2]]) -> [f64; 2] {
    let mut c = [0.0, 0.0];
    for p in pts {
        c[0] += p[0];
        c[1] += p[1];
    }
    [c[0] / pts.len() as f64, c[1] / pts.len() as f64]
}

fn midpoint(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]
}

fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn min_pair_distance(frame: &[[f64; 2]]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..frame.len() {
        for j in i + 1..frame.len() {
            best = best.min(dist(frame[i], frame[j]));
        }
    }
    best
}

fn min_dist_to_others(frame: &[[f64; 2]], i: usize) -> f64 {
    let mut best = f64::INFINITY;
    for (j, p) in frame.iter().enumerate() {
        if j != i {
            best = best.min(dist(frame[i], *p));
        }
    }
    best
}

/// Standard normal via Box-Muller; all generator randomness flows through the
/// one seeded ChaCha stream.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Quantize to f32 so the on-disk format round-trips bit-exactly.
fn quant(v: f64) -> f64 {
    v as f32 as f64
}
