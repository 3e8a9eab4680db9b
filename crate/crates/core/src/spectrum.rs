//! Centered Fourier magnitude spectra of image luminance.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::image::ImageRGB;

/// Default fraction of the half-size radius above which energy counts as high-frequency.
pub const DEFAULT_CUTOFF: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumStats {
    pub width: usize,
    pub height: usize,
    /// Unnormalized DFT magnitudes, row-major, DC at `(height / 2, width / 2)`.
    pub magnitude: Vec<f64>,
    /// Mean magnitude per integer radius band `floor(r)`.
    pub radial_profile: Vec<f64>,
    /// Share of squared magnitude at radius strictly above the cutoff.
    pub high_freq_ratio: f64,
}

impl SpectrumStats {
    #[inline]
    pub fn magnitude_at(&self, row: usize, col: usize) -> f64 {
        self.magnitude[row * self.width + col]
    }
}

/// Unnormalized 2D DFT of a real row-major signal, in natural (unshifted) order.
pub fn dft2(signal: &[f64], width: usize, height: usize) -> Vec<Complex64> {
    assert_eq!(signal.len(), width * height);
    let mut planner = FftPlanner::<f64>::new();
    let mut data: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();

    let row_fft = planner.plan_fft_forward(width);
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }

    let col_fft = planner.plan_fft_forward(height);
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = data[y * width + x];
        }
        col_fft.process(&mut column);
        for y in 0..height {
            data[y * width + x] = column[y];
        }
    }
    data
}

/// Signed frequency of shifted index `i` on an axis of length `n`.
#[inline]
fn centered_frequency(i: usize, n: usize) -> f64 {
    i as f64 - (n / 2) as f64
}

/// Luminance spectrum of `img`; `cutoff` is a fraction of `min(w, h) / 2`.
pub fn spectrum(img: &ImageRGB, cutoff: f64) -> SpectrumStats {
    let (w, h) = img.dimensions();
    let freq = dft2(&img.luminance(), w, h);

    let mut magnitude = vec![0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let sy = (y + h / 2) % h;
            let sx = (x + w / 2) % w;
            magnitude[sy * w + sx] = freq[y * w + x].norm();
        }
    }

    let cutoff_radius = cutoff * (w.min(h) as f64 / 2.0);
    let max_r = {
        let fy = (h / 2) as f64;
        let fx = (w / 2) as f64;
        (fx * fx + fy * fy).sqrt().floor() as usize
    };
    let mut band_sum = vec![0f64; max_r + 1];
    let mut band_count = vec![0usize; max_r + 1];
    let mut total = 0f64;
    let mut high = 0f64;
    for sy in 0..h {
        let fy = centered_frequency(sy, h);
        for sx in 0..w {
            let fx = centered_frequency(sx, w);
            let r = (fx * fx + fy * fy).sqrt();
            let m = magnitude[sy * w + sx];
            let band = r.floor() as usize;
            band_sum[band] += m;
            band_count[band] += 1;
            let e = m * m;
            total += e;
            if r > cutoff_radius {
                high += e;
            }
        }
    }
    let radial_profile = band_sum
        .iter()
        .zip(&band_count)
        .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    let high_freq_ratio = if total > 0.0 {
        (high / total).clamp(0.0, 1.0)
    } else {
        0.0
    };
    SpectrumStats {
        width: w,
        height: h,
        magnitude,
        radial_profile,
        high_freq_ratio,
    }
}

/// High-frequency energy share only.
pub fn high_freq_ratio(img: &ImageRGB, cutoff: f64) -> f64 {
    spectrum(img, cutoff).high_freq_ratio
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_only_dc() {
        let img = ImageRGB::filled(8, 8, [0.5, 0.5, 0.5]).unwrap();
        let s = spectrum(&img, DEFAULT_CUTOFF);
        assert!((s.magnitude_at(4, 4) - 32.0).abs() < 1e-9);
        for (i, m) in s.magnitude.iter().enumerate() {
            if i != 4 * 8 + 4 {
                assert!(m.abs() < 1e-9);
            }
        }
        assert_eq!(s.high_freq_ratio, 0.0);
        assert!((s.radial_profile[0] - 32.0).abs() < 1e-9);
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let img = ImageRGB::from_fn(
            6,
            4,
            |x, y| if (x, y) == (2, 1) { [1.0; 3] } else { [0.0; 3] },
        )
        .unwrap();
        let s = spectrum(&img, DEFAULT_CUTOFF);
        let first = s.magnitude[0];
        assert!((first - 1.0).abs() < 1e-9);
        assert!(s.magnitude.iter().all(|m| (m - first).abs() < 1e-9));
    }

    #[test]
    fn black_image_ratio_is_zero() {
        let img = ImageRGB::filled(5, 3, [0.0; 3]).unwrap();
        assert_eq!(high_freq_ratio(&img, 0.5), 0.0);
    }
}
