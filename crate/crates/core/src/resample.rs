//! Catmull-Rom bicubic resampling, the built-in Stage-1 for super-resolution.

use crate::error::{Error, Result};
use crate::image::{ImageRGB, LowFreqImage, Provenance, CHANNELS};

/// Kernel parameter `a` of the Keys cubic; `-0.5` is Catmull-Rom.
pub const CATMULL_ROM_A: f64 = -0.5;

/// Keys cubic convolution kernel.
#[inline]
pub fn cubic_kernel(x: f64) -> f64 {
    let a = CATMULL_ROM_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Four source taps and weights for one output coordinate (pixel-center aligned).
#[derive(Clone, Copy)]
struct Taps {
    index: [usize; 4],
    weight: [f64; 4],
}

fn taps(out_len: usize, in_len: usize) -> Vec<Taps> {
    let scale = in_len as f64 / out_len as f64;
    let last = in_len as i64 - 1;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let t = src - base;
            let base = base as i64;
            let mut index = [0usize; 4];
            let mut weight = [0f64; 4];
            for k in 0..4 {
                let offset = k as i64 - 1;
                index[k] = (base + offset).clamp(0, last) as usize;
                weight[k] = cubic_kernel(t - offset as f64);
            }
            Taps { index, weight }
        })
        .collect()
}

/// Resamples to `out_w` x `out_h` with edge-clamped Catmull-Rom interpolation.
pub fn bicubic_resample(img: &ImageRGB, out_w: usize, out_h: usize) -> Result<LowFreqImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidConfig(format!(
            "zero-size resample target {out_w}x{out_h}"
        )));
    }
    let (w, h) = img.dimensions();
    let src = img.data();
    let xt = taps(out_w, w);
    let yt = taps(out_h, h);

    // Horizontal pass into an out_w x h buffer.
    let mut horiz = vec![0f64; out_w * h * CHANNELS];
    for y in 0..h {
        let row = &src[y * w * CHANNELS..][..w * CHANNELS];
        for (ox, t) in xt.iter().enumerate() {
            let dst = &mut horiz[(y * out_w + ox) * CHANNELS..][..CHANNELS];
            for k in 0..4 {
                let s = &row[t.index[k] * CHANNELS..][..CHANNELS];
                for c in 0..CHANNELS {
                    dst[c] += t.weight[k] * s[c] as f64;
                }
            }
        }
    }

    let mut out = vec![0f32; out_w * out_h * CHANNELS];
    for (oy, t) in yt.iter().enumerate() {
        for ox in 0..out_w {
            let mut acc = [0f64; CHANNELS];
            for k in 0..4 {
                let s = &horiz[(t.index[k] * out_w + ox) * CHANNELS..][..CHANNELS];
                for c in 0..CHANNELS {
                    acc[c] += t.weight[k] * s[c];
                }
            }
            let dst = &mut out[(oy * out_w + ox) * CHANNELS..][..CHANNELS];
            for c in 0..CHANNELS {
                dst[c] = acc[c].clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(LowFreqImage::new(
        ImageRGB::from_raw(out_w, out_h, out),
        Provenance::Bicubic,
    ))
}

/// Box-filter downsampling by an integer factor (used to make low-res inputs).
pub fn box_downsample(img: &ImageRGB, factor: usize) -> Result<ImageRGB> {
    let (w, h) = img.dimensions();
    if factor == 0 || w % factor != 0 || h % factor != 0 {
        return Err(Error::InvalidConfig(format!(
            "cannot box-downsample {w}x{h} by {factor}"
        )));
    }
    let (ow, oh) = (w / factor, h / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = Vec::with_capacity(ow * oh * CHANNELS);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = [0f64; CHANNELS];
            for dy in 0..factor {
                for dx in 0..factor {
                    let p = img.pixel(ox * factor + dx, oy * factor + dy);
                    for c in 0..CHANNELS {
                        acc[c] += p[c] as f64;
                    }
                }
            }
            out.extend(acc.iter().map(|v| (v * norm).clamp(0.0, 1.0) as f32));
        }
    }
    Ok(ImageRGB::from_raw(ow, oh, out))
}
