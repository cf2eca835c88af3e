//! Synthetic mammography-like images with known anomaly masks.
//!
//! Tissue is an ellipse anchored off the left image edge, filled with a
//! two-scale smooth random field that dims towards the skin line. Masses are
//! soft-edged homogeneous bright ellipses; calcifications are clusters of
//! small bright speckles whose ground truth is the enclosing cluster disc.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{Label, LabeledImage};
use crate::error::{Error, Result};
use crate::eval::squared_distance_transform;
use crate::grid::{Image, Mask};
use crate::seed;

pub const MIN_IMAGE_SIZE: usize = 128;

/// Healthy subjects contribute this many images each.
pub const IMAGES_PER_HEALTHY_SUBJECT: usize = 2;

/// Patch geometry the anomaly placement aligns with.
const PATCH: usize = 64;
const STRIDE: usize = 16;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with clamped borders.
pub(crate) fn blur(img: &Image, sigma: f64) -> Image {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = img.dims();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let tmp = Image::from_fn(h, w, |y, x| {
        k.iter().enumerate().map(|(i, kv)| kv * img.get(y, clamp(x as isize + i as isize - r, w))).sum()
    });
    Image::from_fn(h, w, |y, x| {
        k.iter().enumerate().map(|(i, kv)| kv * tmp.get(clamp(y as isize + i as isize - r, h), x)).sum()
    })
}

/// Zero-mean, unit-variance smooth noise.
fn smooth_noise(h: usize, w: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Image {
    let white = Image::from_fn(h, w, |_, _| rng.sample(StandardNormal));
    let mut b = blur(&white, sigma);
    let n = (h * w) as f64;
    let mean = b.data().iter().sum::<f64>() / n;
    let sd = (b.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    b.data_mut().iter_mut().for_each(|v| *v = (*v - mean) / sd);
    b
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

struct Base {
    image: Image,
    tissue: Mask,
    fine: Image,
}

fn healthy_base(size: usize, rng: &mut ChaCha8Rng) -> Base {
    let s = size as f64;
    let cy = s * (0.5 + rng.random_range(-0.05..0.05));
    let cx = -s * rng.random_range(0.0..0.08);
    let ay = s * rng.random_range(0.40..0.48);
    let ax = s * rng.random_range(0.72..0.88);
    let coarse = smooth_noise(size, size, 6.0, rng);
    let fine = smooth_noise(size, size, 1.5, rng);
    let level = rng.random_range(0.38..0.46);
    let radius = |y: usize, x: usize| (((y as f64 - cy) / ay).powi(2) + ((x as f64 - cx) / ax).powi(2)).sqrt();
    let tissue = Mask::from_fn(size, size, |y, x| radius(y, x) <= 1.0);
    let image = Image::from_fn(size, size, |y, x| {
        let r = radius(y, x);
        let background = 0.04 + 0.01 * fine.get(y, x);
        // ~3 px soft skin line
        let alpha = smoothstep((1.0 - r) * ay.min(ax) / 3.0 + 0.5);
        let falloff = 0.75 + 0.25 * (1.0 - r.min(1.0).powi(2)).sqrt();
        let tissue_v = falloff * (level + 0.09 * coarse.get(y, x) + 0.06 * fine.get(y, x));
        (1.0 - alpha) * background + alpha * tissue_v
    });
    Base { image, tissue, fine }
}

/// Stride-aligned patch centres whose distance to the tissue boundary is at least `margin`.
fn anchor_candidates(tissue: &Mask, margin: f64) -> Vec<(usize, usize)> {
    let (h, w) = tissue.dims();
    let outside = Mask::from_fn(h, w, |y, x| !tissue.get(y, x));
    let dt = squared_distance_transform(&outside);
    let mut out = Vec::new();
    let mut cy = PATCH / 2;
    while cy + PATCH / 2 <= h {
        let mut cx = PATCH / 2;
        while cx + PATCH / 2 <= w {
            if *tissue.get(cy, cx) && dt[cy * w + cx] >= margin * margin {
                out.push((cy, cx));
            }
            cx += STRIDE;
        }
        cy += STRIDE;
    }
    out
}

fn pick_anchor(tissue: &Mask, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let mut cands = anchor_candidates(tissue, 16.0);
    if cands.is_empty() {
        cands = anchor_candidates(tissue, 0.0);
    }
    if cands.is_empty() {
        return Err(Error::InvalidData("no stride-aligned tissue position for an anomaly".into()));
    }
    let (y, x) = cands[rng.random_range(0..cands.len())];
    Ok((y as f64 + rng.random_range(-4.0..=4.0), x as f64 + rng.random_range(-4.0..=4.0)))
}

fn add_masses(base: &mut Base, anomaly: &mut Mask, rng: &mut ChaCha8Rng) -> Result<()> {
    let (h, w) = base.image.dims();
    let count = rng.random_range(1..=3);
    for _ in 0..count {
        let (cy, cx) = pick_anchor(&base.tissue, rng)?;
        let ry = rng.random_range(8.0..=24.0);
        let rx = rng.random_range(8.0..=24.0);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (sin, cos) = theta.sin_cos();
        let brightness = rng.random_range(0.78..0.86);
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let u = (cos * dx + sin * dy) / rx;
                let v = (-sin * dx + cos * dy) / ry;
                let rho = (u * u + v * v).sqrt();
                if rho > 2.5 {
                    continue;
                }
                let alpha = 1.0 / (1.0 + ((rho - 1.0) * 4.0).exp());
                let value = brightness + 0.005 * base.fine.get(y, x);
                let old = *base.image.get(y, x);
                base.image.set(y, x, (1.0 - alpha) * old + alpha * value);
                if rho <= 1.0 && *base.tissue.get(y, x) {
                    anomaly.set(y, x, true);
                }
            }
        }
    }
    Ok(())
}

fn add_calcifications(base: &mut Base, anomaly: &mut Mask, rng: &mut ChaCha8Rng) -> Result<()> {
    let (h, w) = base.image.dims();
    let (cy, cx) = pick_anchor(&base.tissue, rng)?;
    let cluster: f64 = rng.random_range(12.0..=16.0);
    let speckles = rng.random_range(3..=10);
    for _ in 0..speckles {
        let r = (cluster - 3.0) * rng.random::<f64>().sqrt();
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let (sy, sx) = (cy + r * phi.sin(), cx + r * phi.cos());
        let size: f64 = rng.random_range(1.0..=3.0);
        for y in (sy - 5.0).max(0.0) as usize..((sy + 6.0) as usize).min(h) {
            for x in (sx - 5.0).max(0.0) as usize..((sx + 6.0) as usize).min(w) {
                let d = ((y as f64 - sy).powi(2) + (x as f64 - sx).powi(2)).sqrt();
                let alpha = smoothstep(size + 0.5 - d);
                let old = *base.image.get(y, x);
                base.image.set(y, x, old + alpha * (0.95 - old));
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            if d2 <= cluster * cluster && *base.tissue.get(y, x) {
                anomaly.set(y, x, true);
            }
        }
    }
    Ok(())
}

/// Clamps to `[0, 1]` and rounds to 16-bit levels so images survive a PGM round trip.
fn quantize(img: &mut Image) {
    img.data_mut().iter_mut().for_each(|v| *v = (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0);
}

fn generate(label: Label, index: usize, size: usize, seed_root: u64) -> Result<LabeledImage> {
    let stage = match label {
        Label::Healthy => "synth-healthy",
        Label::Mass => "synth-mass",
        Label::Calcification => "synth-calcification",
    };
    let mut rng = seed::rng(seed_root, stage, index as u64);
    let mut base = healthy_base(size, &mut rng);
    let mut anomaly = Mask::filled(size, size, false);
    match label {
        Label::Healthy => {}
        Label::Mass => add_masses(&mut base, &mut anomaly, &mut rng)?,
        Label::Calcification => add_calcifications(&mut base, &mut anomaly, &mut rng)?,
    }
    quantize(&mut base.image);
    let (subject_id, image_id) = match label {
        Label::Healthy => {
            let s = index / IMAGES_PER_HEALTHY_SUBJECT;
            (format!("healthy{s:04}"), format!("healthy{s:04}_{}", index % IMAGES_PER_HEALTHY_SUBJECT))
        }
        Label::Mass => (format!("mass{index:04}"), format!("mass{index:04}_0")),
        Label::Calcification => (format!("calc{index:04}"), format!("calc{index:04}_0")),
    };
    Ok(LabeledImage { image: base.image, tissue_mask: base.tissue, anomaly_mask: anomaly, subject_id, image_id, label })
}

/// Healthy images first, then masses, then calcifications; deterministic per seed.
pub fn make_synthetic_dataset(n_healthy: usize, n_mass: usize, n_calc: usize, image_size: usize, seed: u64) -> Result<Vec<LabeledImage>> {
    if image_size < MIN_IMAGE_SIZE {
        return Err(Error::InvalidConfig(format!("image size must be ≥ {MIN_IMAGE_SIZE}, got {image_size}")));
    }
    let jobs: Vec<(Label, usize)> = (0..n_healthy)
        .map(|i| (Label::Healthy, i))
        .chain((0..n_mass).map(|i| (Label::Mass, i)))
        .chain((0..n_calc).map(|i| (Label::Calcification, i)))
        .collect();
    jobs.into_par_iter().map(|(label, i)| generate(label, i, image_size, seed)).collect()
}
