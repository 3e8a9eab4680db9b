//! Float RGB rasters and their 8-bit PNG boundary.
//!
//! Pixels live in `[0, 1]` as `f32`, row-major, channel-interleaved. Only
//! [`load_png`] and [`save_png`] touch 8-bit values, so residual transfer
//! never re-quantizes intermediate results.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Dense RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGB {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ImageRGB {
    /// Wraps interleaved RGB data, validating length and range.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "zero-sized image {width}x{height}"
            )));
        }
        let expected = width * height * CHANNELS;
        if data.len() != expected {
            return Err(Error::InvalidImage(format!(
                "data length {} does not match {width}x{height}x3 = {expected}",
                data.len()
            )));
        }
        if let Some(pos) = data
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::InvalidImage(format!(
                "value {} at offset {pos} outside [0, 1]",
                data[pos]
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Constant-color image.
    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(width, height, data)
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    /// Internal constructor for data already known to satisfy the invariants.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height * CHANNELS);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Self {
            width,
            height,
            data,
        }
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

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        self.pixel_at(y * self.width + x)
    }

    /// Pixel by row-major index.
    #[inline]
    pub fn pixel_at(&self, index: usize) -> [f32; 3] {
        let o = index * CHANNELS;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    /// Rec.601 luminance of every pixel.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(CHANNELS)
            .map(|p| luma(p[0] as f64, p[1] as f64, p[2] as f64))
            .collect()
    }
}

#[inline]
pub(crate) fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Where a Stage-1 image came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Bicubic,
    ExternalFile,
}

/// A smoothed, mid-frequency Stage-1 output `f(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowFreqImage {
    image: ImageRGB,
    provenance: Provenance,
}

impl LowFreqImage {
    pub fn new(image: ImageRGB, provenance: Provenance) -> Self {
        Self { image, provenance }
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn image(&self) -> &ImageRGB {
        &self.image
    }

    pub fn into_image(self) -> ImageRGB {
        self.image
    }
}

impl Deref for LowFreqImage {
    type Target = ImageRGB;

    fn deref(&self) -> &ImageRGB {
        &self.image
    }
}

/// Reads an 8-bit RGB or grayscale PNG, mapping bytes to `v / 255`.
pub fn load_png(path: impl AsRef<Path>) -> Result<ImageRGB> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_from(BufReader::new(file), path)
}

/// [`load_png`] on an in-memory PNG.
pub fn decode_png(bytes: &[u8]) -> Result<ImageRGB> {
    decode_from(std::io::Cursor::new(bytes), Path::new("<memory>"))
}

fn decode_from<R: std::io::BufRead + std::io::Seek>(source: R, path: &Path) -> Result<ImageRGB> {
    let decoder = png::Decoder::new(source);
    let decode_err = |e: png::DecodingError| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let (color_type, bit_depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedPng {
            path: path.to_path_buf(),
            property: "bit depth",
            value: format!("{}", bit_depth as u8),
        });
    }
    let channels = match color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Grayscale => 1,
        other => {
            return Err(Error::UnsupportedPng {
                path: path.to_path_buf(),
                property: "color type",
                value: format!("{other:?}"),
            })
        }
    };
    let size = reader.output_buffer_size().ok_or_else(|| Error::Decode {
        path: path.to_path_buf(),
        message: "image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(decode_err)?;
    let (width, height) = (frame.width as usize, frame.height as usize);

    let mut data = Vec::with_capacity(width * height * CHANNELS);
    for row in 0..height {
        let line = &buf[row * frame.line_size..][..width * channels];
        match channels {
            3 => data.extend(line.iter().map(|&b| b as f32 / 255.0)),
            _ => {
                for &b in line {
                    let v = b as f32 / 255.0;
                    data.extend_from_slice(&[v, v, v]);
                }
            }
        }
    }
    ImageRGB::new(width, height, data)
}

/// Quantizes one channel value with round-half-up.
#[inline]
pub fn quantize(v: f32) -> u8 {
    (v as f64 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Encodes the image as 8-bit RGB PNG bytes.
pub fn encode_png(img: &ImageRGB) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    encode_rgb8(img.width, img.height, &bytes)
}

/// Encodes raw interleaved 8-bit RGB as PNG.
pub fn encode_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    let encode_err = |e: png::EncodingError| Error::Encode {
        path: "<memory>".into(),
        message: e.to_string(),
    };
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(encode_err)?;
        writer.write_image_data(rgb).map_err(encode_err)?;
        writer.finish().map_err(encode_err)?;
    }
    Ok(out)
}

/// Writes the image as an 8-bit RGB PNG, quantizing with `round(v * 255)`.
pub fn save_png(img: &ImageRGB, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    std::io::Write::write_all(&mut w, &bytes).map_err(|e| Error::io(path, e))?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
}

/// Peak-signal-to-noise ratio in dB with peak 1.0; identical images give `+inf`.
pub fn psnr(a: &ImageRGB, b: &ImageRGB) -> Result<f64> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::DimensionMismatch(format!(
            "psnr of {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let sse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let mse = sse / a.data.len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}
