//! Synthetic stand-in cases: a smooth "brain" with an ellipsoidal lesion that
//! drifts and breathes across slices, holding nested core and enhancing
//! regions.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::volume::VolumeRecord;
use crate::error::{data, Result};

/// Largest per-slice lesion-center displacement along either axis.
pub const MAX_DRIFT: f64 = 0.6;

/// Lesion geometry of one slice: center `(row, col)` and radii `(ry, rx)` of
/// the whole tumor. The core and enhancing regions scale the radii.
#[derive(Debug, Clone, Copy)]
pub struct LesionSlice {
    pub center: (f64, f64),
    pub radii: (f64, f64),
}

pub const CORE_SCALE: f64 = 0.6;
pub const ENHANCING_SCALE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    /// Share of slices whose lesion contrast is scaled by `faint_contrast`,
    /// so that only neighbouring slices reveal the lesion clearly.
    pub faint_fraction: f64,
    pub faint_contrast: f64,
    /// Half-width of the uniform per-voxel noise.
    pub noise: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            faint_fraction: 0.3,
            faint_contrast: 0.0,
            noise: 0.05,
        }
    }
}

struct Wave {
    k: [f64; 3],
    phase: f64,
    amp: f64,
}

fn waves(rng: &mut ChaCha8Rng) -> Vec<Wave> {
    (0..3)
        .map(|_| Wave {
            k: [rng.gen_range(0.05..0.3), rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9)],
            phase: rng.gen_range(0.0..2.0 * PI),
            amp: rng.gen_range(0.03..0.08),
        })
        .collect()
}

/// Per-slice lesion geometry drawn from `rng`.
pub fn lesion_track(shape: [usize; 3], rng: &mut ChaCha8Rng) -> Vec<LesionSlice> {
    let [d, h, w] = shape;
    let (h, w) = (h as f64, w as f64);
    let r = 0.2 * h.min(w);
    let aspect: f64 = rng.gen_range(0.8..1.25);
    let vmax = MAX_DRIFT.min(0.12 * h.min(w) / d as f64);
    let v = (rng.gen_range(-vmax..=vmax), rng.gen_range(-vmax..=vmax));
    let c0 = (
        h / 2.0 + rng.gen_range(-0.1..0.1) * h,
        w / 2.0 + rng.gen_range(-0.1..0.1) * w,
    );
    let phase = rng.gen_range(0.0..2.0 * PI);
    (0..d)
        .map(|z| {
            let dz = z as f64 - d as f64 / 2.0;
            let size = 0.8 + 0.25 * (phase + 2.0 * PI * z as f64 / d as f64).sin();
            LesionSlice {
                center: (c0.0 + v.0 * dz, c0.1 + v.1 * dz),
                radii: (r * size * aspect.sqrt(), r * size / aspect.sqrt()),
            }
        })
        .collect()
}

fn inside(l: &LesionSlice, y: f64, x: f64, scale: f64) -> bool {
    let dy = (y - l.center.0) / (l.radii.0 * scale);
    let dx = (x - l.center.1) / (l.radii.1 * scale);
    dy * dy + dx * dx <= 1.0
}

fn generate_case(index: usize, shape: [usize; 3], seed: u64, opts: &SynthOptions) -> Result<VolumeRecord> {
    let [d, h, w] = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let track = lesion_track(shape, &mut rng);
    let base = [0.9, 1.0, 0.7, 0.8];
    let tex: Vec<Vec<Wave>> = (0..4).map(|_| waves(&mut rng)).collect();
    let contrast: Vec<f64> = (0..d)
        .map(|_| if rng.gen_bool(opts.faint_fraction) { opts.faint_contrast } else { 1.0 })
        .collect();
    let n = d * h * w;
    let mut mods: [Vec<f32>; 4] = Default::default();
    mods.iter_mut().for_each(|m| m.reserve(n));
    let mut labels = Vec::with_capacity(n);
    for (z, l) in track.iter().enumerate() {
        let env = 0.8 + 0.2 * (PI * (z as f64 + 0.5) / d as f64).sin();
        for y in 0..h {
            for x in 0..w {
                let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
                let by = (yf - h as f64 / 2.0) / (0.46 * h as f64 * env);
                let bx = (xf - w as f64 / 2.0) / (0.46 * w as f64 * env);
                let brain = by * by + bx * bx <= 1.0;
                let (wt, tc, et) = (
                    inside(l, yf, xf, 1.0),
                    inside(l, yf, xf, CORE_SCALE),
                    inside(l, yf, xf, ENHANCING_SCALE),
                );
                labels.push(match (brain && wt, tc, et) {
                    (false, ..) => 0,
                    (true, _, true) => 4,
                    (true, true, false) => 1,
                    (true, false, false) => 2,
                });
                let lab = *labels.last().unwrap();
                for m in 0..4 {
                    if !brain {
                        mods[m].push(0.0);
                        continue;
                    }
                    let smooth: f64 = tex[m]
                        .iter()
                        .map(|t| t.amp * (t.k[0] * z as f64 + t.k[1] * yf + t.k[2] * xf + t.phase).sin())
                        .sum();
                    // T1, T1ce, T2, FLAIR contrasts for edema (2), core (1), enhancing (4).
                    let lesion = match (m, lab) {
                        (0, 1 | 4) => -0.35,
                        (1, 4) => 1.2,
                        (1, 1) => 0.3,
                        (2, 2) => 0.8,
                        (2, 1 | 4) => 0.3,
                        (3, 2 | 1 | 4) => 1.0,
                        _ => 0.0,
                    };
                    let noise = if opts.noise > 0.0 { rng.gen_range(-opts.noise..opts.noise) } else { 0.0 };
                    mods[m].push((base[m] + smooth + contrast[z] * lesion + noise).max(0.05) as f32);
                }
            }
        }
    }
    VolumeRecord::new(format!("synth_{index:03}"), mods, labels, shape)
}

/// `n_cases` synthetic cases of shape `[D, H, W]`, deterministic in `seed`.
pub fn synth_generate(n_cases: usize, shape: [usize; 3], seed: u64) -> Result<Vec<VolumeRecord>> {
    synth_generate_with(n_cases, shape, seed, &SynthOptions::default())
}

pub fn synth_generate_with(n_cases: usize, shape: [usize; 3], seed: u64, opts: &SynthOptions) -> Result<Vec<VolumeRecord>> {
    if shape.contains(&0) {
        return Err(data(format!("synthetic shape {shape:?} has a zero extent")));
    }
    if !(0.0..=1.0).contains(&opts.faint_fraction) || !(opts.faint_contrast >= 0.0) || !(opts.noise >= 0.0) {
        return Err(data(format!("invalid synthetic options {opts:?}")));
    }
    (0..n_cases)
        .into_par_iter()
        .map(|i| generate_case(i, shape, seed, opts))
        .collect()
}
