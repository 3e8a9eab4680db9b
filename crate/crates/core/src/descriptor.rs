//! Multiscale per-pixel descriptors and the cosine distance used for matching.
//!
//! Each pyramid level `l` (0-based here) blurs the image with a Gaussian of
//! `sigma = 0.8 * 2^l` and subsamples it with stride `2^l`. For every
//! full-resolution pixel the descriptor gathers a `(2r+1)^2` patch of
//! `(R, G, B, d/dx luma, d/dy luma)` from each level by bilinear sampling,
//! with patch offsets in that level's grid units. Level blocks are
//! L2-normalized (optionally), scaled by their weight, and concatenated
//! finest first, so the last block is always the coarsest.
//!
//! Fields loaded from `PXNT` files carry their own block structure instead.

use std::fmt;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::codec::Writer;
use crate::error::{Error, Result};
use crate::image::{luma, ImageRGB, CHANNELS};
use crate::tensor::Tensor;

/// Features per sample: three intensities plus two luma gradients.
pub const FEATURES_PER_SAMPLE: usize = 5;

const BASE_SIGMA: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorConfig {
    pub levels: usize,
    pub patch_radius: usize,
    pub level_weights: Vec<f32>,
    pub normalize_per_level: bool,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self::new(5, 1)
    }
}

impl DescriptorConfig {
    /// Unit weights and per-level normalization.
    pub fn new(levels: usize, patch_radius: usize) -> Self {
        Self {
            levels,
            patch_radius,
            level_weights: vec![1.0; levels],
            normalize_per_level: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::InvalidConfig(
                "descriptor needs at least one level".into(),
            ));
        }
        if self.level_weights.len() != self.levels {
            return Err(Error::InvalidConfig(format!(
                "{} level weights for {} levels",
                self.level_weights.len(),
                self.levels
            )));
        }
        if let Some(w) = self
            .level_weights
            .iter()
            .find(|w| !w.is_finite() || **w <= 0.0)
        {
            return Err(Error::InvalidConfig(format!(
                "level weight {w} must be finite and positive"
            )));
        }
        Ok(())
    }

    pub fn patch_side(&self) -> usize {
        2 * self.patch_radius + 1
    }

    /// Length of one level's sub-block.
    pub fn block_len(&self) -> usize {
        self.patch_side() * self.patch_side() * FEATURES_PER_SAMPLE
    }

    pub fn dim(&self) -> usize {
        self.levels * self.block_len()
    }

    /// Canonical byte encoding, shared with the database file header.
    pub(crate) fn encode(&self, w: &mut Writer) {
        w.u32(self.levels as u32);
        w.u32(self.patch_radius as u32);
        for &wt in &self.level_weights {
            w.f32(wt);
        }
        w.u8(self.normalize_per_level as u8);
    }

    /// Stable 64-bit digest of the canonical encoding.
    pub fn digest(&self) -> u64 {
        let mut w = Writer::default();
        self.encode(&mut w);
        let hash = Sha256::digest(&w.buf);
        u64::from_le_bytes(hash[..8].try_into().expect("8 bytes"))
    }
}

/// Which configuration produced a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldOrigin {
    Config(u64),
    External,
}

impl fmt::Display for FieldOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldOrigin::Config(h) => write!(f, "{h:016x}"),
            FieldOrigin::External => f.write_str("external"),
        }
    }
}

/// Per-pixel descriptor vectors for one image, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorField {
    width: usize,
    height: usize,
    dim: usize,
    blocks: Vec<usize>,
    data: Vec<f32>,
    origin: FieldOrigin,
}

impl DescriptorField {
    /// Wraps raw data produced elsewhere; marks the field external.
    pub fn from_parts(
        width: usize,
        height: usize,
        dim: usize,
        blocks: Vec<usize>,
        data: Vec<f32>,
    ) -> Result<Self> {
        Self::with_origin(width, height, dim, blocks, data, FieldOrigin::External)
    }

    pub(crate) fn with_origin(
        width: usize,
        height: usize,
        dim: usize,
        blocks: Vec<usize>,
        data: Vec<f32>,
        origin: FieldOrigin,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig(
                "descriptor dim must be positive".into(),
            ));
        }
        if data.len() != width * height * dim {
            return Err(Error::DimensionMismatch(format!(
                "field data length {} != {width}x{height}x{dim}",
                data.len()
            )));
        }
        if !blocks.is_empty() && blocks.iter().sum::<usize>() != dim {
            return Err(Error::Malformed(format!(
                "sub-block lengths {blocks:?} do not sum to dim {dim}"
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self {
            width,
            height,
            dim,
            blocks,
            data,
            origin,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn origin(&self) -> FieldOrigin {
        self.origin
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Descriptor of the pixel with row-major index `i`.
    #[inline]
    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn vector_at(&self, x: usize, y: usize) -> &[f32] {
        self.vector(y * self.width + x)
    }

    /// Index range of the coarsest (last) sub-block.
    pub fn coarsest_block(&self) -> Result<Range<usize>> {
        let last = *self.blocks.last().ok_or(Error::MissingLevelStructure)?;
        Ok(self.dim - last..self.dim)
    }

    /// Squared L2 norm of every pixel vector, via the matching kernel.
    pub fn squared_norms(&self) -> Vec<f32> {
        self.data
            .chunks_exact(self.dim)
            .map(|v| dot(v, v))
            .collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            width: self.width,
            height: self.height,
            dim: self.dim,
            blocks: self.blocks.clone(),
            data: self.data.clone(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_tensor().write(path)
    }
}

/// Loads a `PXNT` tensor as an external descriptor field.
pub fn load_external_field(path: impl AsRef<Path>) -> Result<DescriptorField> {
    field_from_tensor(Tensor::read(path)?)
}

pub fn field_from_tensor(t: Tensor) -> Result<DescriptorField> {
    DescriptorField::with_origin(
        t.width,
        t.height,
        t.dim,
        t.blocks,
        t.data,
        FieldOrigin::External,
    )
}

/// Spatially averaged, L2-normalized coarsest-level descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDescriptor {
    pub data: Vec<f32>,
}

impl GlobalDescriptor {
    pub fn dim(&self) -> usize {
        self.data.len()
    }
}

pub fn global_descriptor(field: &DescriptorField) -> Result<GlobalDescriptor> {
    global_descriptor_in(field, field.coarsest_block()?)
}

/// Global descriptor over explicit sub-block bounds.
pub fn global_descriptor_in(
    field: &DescriptorField,
    block: Range<usize>,
) -> Result<GlobalDescriptor> {
    if block.is_empty() || block.end > field.dim {
        return Err(Error::InvalidConfig(format!(
            "sub-block {block:?} outside descriptor dim {}",
            field.dim
        )));
    }
    let mut mean = vec![0f64; block.len()];
    for v in field.data.chunks_exact(field.dim) {
        for (m, &x) in mean.iter_mut().zip(&v[block.clone()]) {
            *m += x as f64;
        }
    }
    let n = field.pixel_count() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let norm = mean.iter().map(|m| m * m).sum::<f64>().sqrt();
    let data = if norm > 0.0 {
        mean.iter().map(|m| (m / norm) as f32).collect()
    } else {
        vec![0.0; mean.len()]
    };
    Ok(GlobalDescriptor { data })
}

pub(crate) const LANES: usize = 8;

/// Dot product with a fixed eight-lane summation order.
///
/// Every distance in the crate goes through this kernel, so cached norms and
/// on-the-fly norms agree bit for bit.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Cosine distance from a dot product and both squared norms.
///
/// Zero-norm operands give 1.0.
#[inline]
pub fn cosine_from_parts(dot_ab: f32, norm_a: f32, norm_b: f32) -> f64 {
    if norm_a <= 0.0 || norm_b <= 0.0 {
        return 1.0;
    }
    let denom = (norm_a as f64 * norm_b as f64).sqrt();
    (1.0 - dot_ab as f64 / denom).clamp(0.0, 2.0)
}

/// `1 - a.b / (|a| |b|)` in `[0, 2]`; 1.0 when either vector is zero.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "cosine distance of {}-d and {}-d vectors",
            a.len(),
            b.len()
        )));
    }
    Ok(cosine_from_parts(dot(a, b), dot(a, a), dot(b, b)))
}

/// Separable Gaussian blur of one plane, edge-clamped, truncated at `ceil(3 sigma)`.
fn gaussian_blur(plane: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);

    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                let sx = clamp(x as i64 + k as i64 - radius, w);
                acc += wt * plane[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                let sy = clamp(y as i64 + k as i64 - radius, h);
                acc += wt * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// One subsampled pyramid level: feature planes `[R, G, B, gx, gy]`.
struct Level {
    width: usize,
    height: usize,
    stride: usize,
    planes: [Vec<f64>; FEATURES_PER_SAMPLE],
}

impl Level {
    fn build(img: &ImageRGB, index: usize) -> Self {
        let (w, h) = img.dimensions();
        let stride = 1usize << index;
        let sigma = BASE_SIGMA * stride as f64;
        let lw = w.div_ceil(stride);
        let lh = h.div_ceil(stride);

        let mut rgb: [Vec<f64>; CHANNELS] = Default::default();
        for (c, plane) in rgb.iter_mut().enumerate() {
            let full: Vec<f64> = img
                .data()
                .iter()
                .skip(c)
                .step_by(CHANNELS)
                .map(|&v| v as f64)
                .collect();
            let blurred = gaussian_blur(&full, w, h, sigma);
            *plane = (0..lh)
                .flat_map(|v| {
                    let blurred = &blurred;
                    (0..lw).map(move |u| blurred[(v * stride) * w + u * stride])
                })
                .collect();
        }
        let lum: Vec<f64> = (0..lw * lh)
            .map(|i| luma(rgb[0][i], rgb[1][i], rgb[2][i]))
            .collect();
        let mut gx = vec![0f64; lw * lh];
        let mut gy = vec![0f64; lw * lh];
        for v in 0..lh {
            for u in 0..lw {
                let l = |uu: usize, vv: usize| lum[vv * lw + uu];
                gx[v * lw + u] = (l((u + 1).min(lw - 1), v) - l(u.saturating_sub(1), v)) / 2.0;
                gy[v * lw + u] = (l(u, (v + 1).min(lh - 1)) - l(u, v.saturating_sub(1))) / 2.0;
            }
        }
        let [r, g, b] = rgb;
        Self {
            width: lw,
            height: lh,
            stride,
            planes: [r, g, b, gx, gy],
        }
    }

    /// Bilinear sample of all feature planes at level coordinates, edge-clamped.
    fn sample(&self, u: f64, v: f64, out: &mut [f32]) {
        let u = u.clamp(0.0, (self.width - 1) as f64);
        let v = v.clamp(0.0, (self.height - 1) as f64);
        let u0 = u.floor() as usize;
        let v0 = v.floor() as usize;
        let u1 = (u0 + 1).min(self.width - 1);
        let v1 = (v0 + 1).min(self.height - 1);
        let fu = u - u0 as f64;
        let fv = v - v0 as f64;
        let i00 = v0 * self.width + u0;
        let i10 = v0 * self.width + u1;
        let i01 = v1 * self.width + u0;
        let i11 = v1 * self.width + u1;
        for (o, p) in out.iter_mut().zip(&self.planes) {
            let top = p[i00] + fu * (p[i10] - p[i00]);
            let bottom = p[i01] + fu * (p[i11] - p[i01]);
            *o = (top + fv * (bottom - top)) as f32;
        }
    }
}

/// Computes the descriptor of every pixel of `img`.
pub fn compute_field(img: &ImageRGB, cfg: &DescriptorConfig) -> Result<DescriptorField> {
    cfg.validate()?;
    let (w, h) = img.dimensions();
    let needed = cfg.patch_side();
    if w < needed || h < needed {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            radius: cfg.patch_radius,
            needed,
        });
    }
    let levels: Vec<Level> = (0..cfg.levels).map(|l| Level::build(img, l)).collect();
    let dim = cfg.dim();
    let block_len = cfg.block_len();
    let r = cfg.patch_radius as i64;

    let mut data = vec![0f32; w * h * dim];
    data.par_chunks_mut(w * dim)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, desc) in row.chunks_exact_mut(dim).enumerate() {
                for (l, (level, block)) in levels
                    .iter()
                    .zip(desc.chunks_exact_mut(block_len))
                    .enumerate()
                {
                    let s = level.stride as f64;
                    let (cu, cv) = (x as f64 / s, y as f64 / s);
                    let mut k = 0;
                    for dy in -r..=r {
                        for dx in -r..=r {
                            level.sample(
                                cu + dx as f64,
                                cv + dy as f64,
                                &mut block[k..k + FEATURES_PER_SAMPLE],
                            );
                            k += FEATURES_PER_SAMPLE;
                        }
                    }
                    let scale = if cfg.normalize_per_level {
                        let norm = block
                            .iter()
                            .map(|&v| v as f64 * v as f64)
                            .sum::<f64>()
                            .sqrt();
                        if norm > 0.0 {
                            1.0 / norm
                        } else {
                            0.0
                        }
                    } else {
                        1.0
                    };
                    let weight = cfg.level_weights[l] as f64;
                    for v in block.iter_mut() {
                        *v = (*v as f64 * scale * weight) as f32;
                    }
                }
            }
        });

    DescriptorField::with_origin(
        w,
        h,
        dim,
        vec![block_len; cfg.levels],
        data,
        FieldOrigin::Config(cfg.digest()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_dims() {
        let cfg = DescriptorConfig::default();
        assert_eq!(cfg.block_len(), 45);
        assert_eq!(cfg.dim(), 225);
        assert!(cfg.validate().is_ok());
        let mut bad = cfg.clone();
        bad.level_weights[2] = 0.0;
        assert!(bad.validate().is_err());
        assert!(DescriptorConfig::new(0, 1).validate().is_err());
        assert_ne!(cfg.digest(), DescriptorConfig::new(5, 0).digest());
        assert_eq!(cfg.digest(), DescriptorConfig::default().digest());
    }

    #[test]
    fn cosine_cases() {
        let a = [1.0f32, 2.0, -3.0];
        assert_eq!(cosine_distance(&a, &a).unwrap(), 0.0);
        let neg: Vec<f32> = a.iter().map(|v| -v).collect();
        assert!((cosine_distance(&a, &neg).unwrap() - 2.0).abs() < 1e-12);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[0.0, 3.0]).unwrap(), 1.0);
        assert!(cosine_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn constant_image_gives_equal_descriptors() {
        let img = ImageRGB::filled(9, 7, [0.2, 0.5, 0.8]).unwrap();
        let f = compute_field(&img, &DescriptorConfig::default()).unwrap();
        let first = f.vector(0).to_vec();
        for i in 0..f.pixel_count() {
            let v = f.vector(i);
            for (k, (a, b)) in v.iter().zip(&first).enumerate() {
                assert!((a - b).abs() < 1e-6);
                if k % FEATURES_PER_SAMPLE >= 3 {
                    assert!(a.abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn too_small_image() {
        let img = ImageRGB::filled(2, 5, [0.5; 3]).unwrap();
        assert!(matches!(
            compute_field(&img, &DescriptorConfig::new(2, 1)),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn global_of_zero_field_is_zero() {
        let f = DescriptorField::from_parts(2, 2, 4, vec![2, 2], vec![0.0; 16]).unwrap();
        assert_eq!(global_descriptor(&f).unwrap().data, vec![0.0; 2]);
        let unstructured = DescriptorField::from_parts(2, 2, 4, vec![], vec![0.0; 16]).unwrap();
        assert!(matches!(
            global_descriptor(&unstructured),
            Err(Error::MissingLevelStructure)
        ));
        assert!(global_descriptor_in(&unstructured, 1..3).is_ok());
    }

    #[test]
    fn global_of_uniform_field() {
        let v = [0.3f32, -0.4, 2.0, 1.0, 0.0];
        let data: Vec<f32> = (0..6).flat_map(|_| v).collect();
        let f = DescriptorField::from_parts(3, 2, 5, vec![3, 2], data).unwrap();
        let g = global_descriptor(&f).unwrap();
        assert!((g.data[0] - 1.0).abs() < 1e-7);
        assert!(g.data[1].abs() < 1e-7);
    }
}
