#![allow(dead_code)]

use std::f64::consts::PI;

use pixelnn::resample::{bicubic_resample, box_downsample};
use pixelnn::{
    DescriptorConfig, ExemplarDatabase, ExemplarInput, ImageRGB, LowFreqImage, Provenance,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform noise image.
pub fn noise_image(rng: &mut impl Rng, w: usize, h: usize) -> ImageRGB {
    let data = (0..w * h * 3).map(|_| rng.random::<f32>()).collect();
    ImageRGB::new(w, h, data).unwrap()
}

/// Smooth random image: a few low-frequency sinusoids per channel.
pub fn smooth_image(rng: &mut impl Rng, w: usize, h: usize) -> ImageRGB {
    let waves: Vec<[f64; 4]> = (0..9)
        .map(|_| {
            [
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.05..0.15),
            ]
        })
        .collect();
    ImageRGB::from_fn(w, h, |x, y| {
        let mut px = [0f32; 3];
        for (c, p) in px.iter_mut().enumerate() {
            let v: f64 = waves[c * 3..c * 3 + 3]
                .iter()
                .map(|[fx, fy, ph, a]| a * (fx * x as f64 + fy * y as f64 + ph).sin())
                .sum();
            *p = (0.5 + v).clamp(0.0, 1.0) as f32;
        }
        px
    })
    .unwrap()
}

/// Database of `n` random pairs whose regressed images are noisy blurs of the targets.
pub fn random_db(
    seed: u64,
    n: usize,
    w: usize,
    h: usize,
    cfg: &DescriptorConfig,
) -> ExemplarDatabase {
    let mut r = rng(seed);
    let pairs = (0..n)
        .map(|k| {
            let target = smooth_image(&mut r, w, h);
            let noise = noise_image(&mut r, w, h);
            let regressed = ImageRGB::new(
                w,
                h,
                target
                    .data()
                    .iter()
                    .zip(noise.data())
                    .map(|(t, n)| (0.8 * t + 0.2 * n).clamp(0.0, 1.0))
                    .collect(),
            )
            .unwrap();
            ExemplarInput {
                regressed: LowFreqImage::new(regressed, Provenance::ExternalFile),
                target,
                name: format!("ex{k:03}"),
                tags: vec![format!("group{}", k % 3)],
            }
        })
        .collect();
    ExemplarDatabase::build(pairs, cfg).unwrap()
}

/// Synthetic texture: band-limited noise plus an oriented grating, tinted.
///
/// The band spans mid frequencies that survive 8x downsampling as well as
/// high frequencies that do not.
pub fn texture(rng: &mut impl Rng, size: usize) -> ImageRGB {
    let components: Vec<[f64; 4]> = (0..24)
        .map(|_| {
            let f = rng.random_range(0.02..0.35);
            let theta = rng.random_range(0.0..PI);
            [
                f * theta.cos(),
                f * theta.sin(),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.5..1.0),
            ]
        })
        .collect();
    let g_f = rng.random_range(0.03..0.3);
    let g_theta = rng.random_range(0.0..PI);
    let (gx, gy) = (g_f * g_theta.cos(), g_f * g_theta.sin());
    let g_phase = rng.random_range(0.0..2.0 * PI);
    let g_amp = rng.random_range(0.5..1.5);
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.7));
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.5..1.0));
    let norm: f64 = components.iter().map(|c| c[3]).sum::<f64>().sqrt();
    ImageRGB::from_fn(size, size, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let noise: f64 = components
            .iter()
            .map(|[fx, fy, ph, a]| a * (2.0 * PI * (fx * xf + fy * yf) + ph).cos())
            .sum::<f64>()
            / norm;
        let grating = g_amp * (2.0 * PI * (gx * xf + gy * yf) + g_phase).cos();
        let v = 0.12 * (noise + grating);
        std::array::from_fn(|c| (base[c] + tint[c] * v).clamp(0.0, 1.0) as f32)
    })
    .unwrap()
}

/// `(low-res input, bicubic f(x), target)` for a texture downsampled by `factor`.
pub fn sr_triplet(target: ImageRGB, factor: usize) -> (ImageRGB, LowFreqImage, ImageRGB) {
    let small = box_downsample(&target, factor).unwrap();
    let up = bicubic_resample(&small, target.width(), target.height()).unwrap();
    (small, up, target)
}
