//! Residual-transfer synthesis: the residual `y_k,j - f(x_k)_j` of a matched
//! training pixel is added to the query's smoothed image at each output pixel.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;

use crate::codec::{read_file, write_file, Reader, Writer};
use crate::db::{Exemplar, ExemplarDatabase, ExemplarId};
use crate::descriptor::{cosine_from_parts, dot, global_descriptor, DescriptorField};
use crate::error::{Error, Result};
use crate::image::{encode_rgb8, load_png, psnr, ImageRGB, LowFreqImage, Provenance};
use crate::metrics::{angular_stats, random_index, NormalMap};
use crate::resample::bicubic_resample;
use crate::search::{global_knn, MatchGrid, PixelMatch, SearchConfig};

pub const CORRESPONDENCE_MAGIC: &[u8; 4] = b"PXNC";
pub const CORRESPONDENCE_VERSION: u32 = 1;

/// Per output pixel, the training pixel that supplied its residual.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMap {
    width: usize,
    height: usize,
    matches: Vec<PixelMatch>,
}

impl CorrespondenceMap {
    pub fn new(width: usize, height: usize, matches: Vec<PixelMatch>) -> Result<Self> {
        if matches.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} matches for a {width}x{height} output",
                matches.len()
            )));
        }
        if let Some((i, _)) = matches
            .iter()
            .enumerate()
            .find(|(_, m)| m.source_row >= height || m.source_col >= width)
        {
            return Err(Error::Malformed(format!(
                "match for pixel {i} lies outside the image"
            )));
        }
        Ok(Self {
            width,
            height,
            matches,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn matches(&self) -> &[PixelMatch] {
        &self.matches
    }

    pub fn get(&self, x: usize, y: usize) -> &PixelMatch {
        &self.matches[y * self.width + x]
    }

    /// Distinct exemplars used anywhere in the map.
    pub fn exemplar_ids(&self) -> BTreeSet<ExemplarId> {
        self.matches.iter().map(|m| m.exemplar_id).collect()
    }

    /// `PXNC` bytes: magic, `u32` version, `u32` width, `u32` height, then per
    /// pixel `u32` exemplar id, `u32` source row, `u32` source col, `f32` distance.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(CORRESPONDENCE_MAGIC);
        w.u32(CORRESPONDENCE_VERSION);
        w.u32(self.width as u32);
        w.u32(self.height as u32);
        for m in &self.matches {
            w.u32(m.exemplar_id);
            w.u32(m.source_row as u32);
            w.u32(m.source_col as u32);
            w.f32(m.distance as f32);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CORRESPONDENCE_MAGIC)?;
        let version = r.u32()?;
        if version != CORRESPONDENCE_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Error::Malformed("correspondence dimensions overflow".into()))?;
        if r.remaining() != n * 16 {
            return Err(Error::DimensionMismatch(format!(
                "payload of {} bytes for {width}x{height} pixels",
                r.remaining()
            )));
        }
        let mut matches = Vec::with_capacity(n);
        for i in 0..n {
            let exemplar_id = r.u32()?;
            let source_row = r.u32()? as usize;
            let source_col = r.u32()? as usize;
            let distance = r.f32()?;
            if !distance.is_finite() {
                return Err(Error::NonFinite(i));
            }
            matches.push(PixelMatch {
                exemplar_id,
                source_row,
                source_col,
                distance: distance as f64,
            });
        }
        Self::new(width, height, matches)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }

    /// PNG visualizing the source exemplar of each pixel.
    ///
    /// The id is packed little-endian into the channels: R holds bits 0-7,
    /// G bits 8-15 and B bits 16-23.
    pub fn id_map_png(&self) -> Result<Vec<u8>> {
        let rgb: Vec<u8> = self
            .matches
            .iter()
            .flat_map(|m| {
                let id = m.exemplar_id;
                [id as u8, (id >> 8) as u8, (id >> 16) as u8]
            })
            .collect();
        encode_rgb8(self.width, self.height, &rgb)
    }
}

/// One synthesized output and how it was made.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub image: ImageRGB,
    pub config: SearchConfig,
    pub correspondence: CorrespondenceMap,
    /// Channel values that fell outside `[0, 1]` before clamping.
    pub clamped_pixel_count: usize,
}

/// Stage-1 source.
#[derive(Debug, Clone, Copy)]
pub enum Stage1Input<'a> {
    Image(&'a ImageRGB),
    File(&'a Path),
}

/// How the smoothed image is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage1Mode {
    /// Bicubic upsampling of a low-resolution input to the target size.
    BicubicSr { width: usize, height: usize },
    /// A regressor's output, used as-is; must already be the target size.
    External { width: usize, height: usize },
}

pub fn stage1(input: Stage1Input<'_>, mode: Stage1Mode) -> Result<LowFreqImage> {
    let loaded;
    let img = match input {
        Stage1Input::Image(img) => img,
        Stage1Input::File(path) => {
            loaded = load_png(path)?;
            &loaded
        }
    };
    match mode {
        Stage1Mode::BicubicSr { width, height } => {
            if img.width() > width || img.height() > height {
                return Err(Error::DimensionMismatch(format!(
                    "bicubic-sr input {}x{} is larger than the target {width}x{height}",
                    img.width(),
                    img.height()
                )));
            }
            bicubic_resample(img, width, height)
        }
        Stage1Mode::External { width, height } => {
            if img.dimensions() != (width, height) {
                return Err(Error::DimensionMismatch(format!(
                    "external stage-1 image is {}x{}, expected {width}x{height}",
                    img.width(),
                    img.height()
                )));
            }
            Ok(LowFreqImage::new(img.clone(), Provenance::ExternalFile))
        }
    }
}

fn check_inputs(
    f_x: &ImageRGB,
    query_field: &DescriptorField,
    db: &ExemplarDatabase,
) -> Result<()> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    if f_x.dimensions() != db.image_size() || query_field.dimensions() != db.image_size() {
        let (w, h) = db.image_size();
        return Err(Error::DimensionMismatch(format!(
            "query image {}x{} / field {}x{} vs database {w}x{h}",
            f_x.width(),
            f_x.height(),
            query_field.width(),
            query_field.height()
        )));
    }
    Ok(())
}

/// Adds each matched residual to `f_x`, clamping to `[0, 1]`.
///
/// Arithmetic is done in f64 and rounded once.
pub fn transfer_residuals(
    f_x: &ImageRGB,
    db: &ExemplarDatabase,
    correspondence: &CorrespondenceMap,
) -> Result<(ImageRGB, usize)> {
    if f_x.dimensions() != (correspondence.width, correspondence.height) {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{} vs correspondence {}x{}",
            f_x.width(),
            f_x.height(),
            correspondence.width,
            correspondence.height
        )));
    }
    if db.image_size() != f_x.dimensions() {
        return Err(Error::DimensionMismatch(
            "correspondence does not fit the database".into(),
        ));
    }
    let w = correspondence.width;
    let mut data = Vec::with_capacity(f_x.data().len());
    let mut clamped = 0;
    let mut cached: Option<&Exemplar> = None;
    for (i, m) in correspondence.matches.iter().enumerate() {
        let e = match cached {
            Some(e) if e.id == m.exemplar_id => e,
            _ => {
                let e = db.get(m.exemplar_id).ok_or_else(|| {
                    Error::InvalidConfig(format!("exemplar {} not in database", m.exemplar_id))
                })?;
                cached = Some(e);
                e
            }
        };
        let res = e.residual(m.source_index(w));
        let base = f_x.pixel_at(i);
        for c in 0..3 {
            let v = base[c] as f64 + res[c];
            if !(0.0..=1.0).contains(&v) {
                clamped += 1;
            }
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Ok((ImageRGB::from_raw(f_x.width(), f_x.height(), data), clamped))
}

fn candidate(
    f_x: &ImageRGB,
    db: &ExemplarDatabase,
    config: SearchConfig,
    matches: Vec<PixelMatch>,
) -> Result<Candidate> {
    let correspondence = CorrespondenceMap::new(f_x.width(), f_x.height(), matches)?;
    let (image, clamped_pixel_count) = transfer_residuals(f_x, db, &correspondence)?;
    Ok(Candidate {
        image,
        config,
        correspondence,
        clamped_pixel_count,
    })
}

/// Whole-image transfer from the single global nearest exemplar.
///
/// Output pixel `i` takes the residual at the same pixel of that exemplar;
/// the recorded distance is the descriptor distance between the two pixels.
pub fn exemplar_synthesize(
    f_x: &ImageRGB,
    query_field: &DescriptorField,
    db: &ExemplarDatabase,
) -> Result<Candidate> {
    check_inputs(f_x, query_field, db)?;
    let g = global_descriptor(query_field)?;
    let nearest = global_knn(&g, db, 1)?[0];
    let e = db.get(nearest.id).expect("ranked id exists");
    if e.field.origin() != query_field.origin() || e.field.dim() != query_field.dim() {
        return Err(Error::ConfigMismatch {
            query: format!("{} (dim {})", query_field.origin(), query_field.dim()),
            database: format!("{} (dim {})", e.field.origin(), e.field.dim()),
        });
    }
    let w = f_x.width();
    let norms = e.squared_norms();
    let matches = (0..query_field.pixel_count())
        .map(|i| {
            let q = query_field.vector(i);
            PixelMatch {
                exemplar_id: e.id,
                source_row: i / w,
                source_col: i % w,
                distance: cosine_from_parts(dot(q, e.field.vector(i)), dot(q, q), norms[i]),
            }
        })
        .collect();
    candidate(
        f_x,
        db,
        SearchConfig {
            k_global: 1,
            window: 1,
        },
        matches,
    )
}

/// Per-pixel transfer from the best match among the `K` nearest exemplars
/// inside a `T x T` window.
pub fn compositional_synthesize(
    f_x: &ImageRGB,
    query_field: &DescriptorField,
    db: &ExemplarDatabase,
    cfg: SearchConfig,
) -> Result<Candidate> {
    cfg.validate()?;
    check_inputs(f_x, query_field, db)?;
    let g = global_descriptor(query_field)?;
    let ranking = global_knn(&g, db, cfg.k_global)?;
    let grid = MatchGrid::compute(query_field, db, &ranking, &[cfg.window])?;
    candidate(f_x, db, cfg, grid.matches(cfg.k_global, cfg.window)?)
}

/// One candidate per `(K, T)` in `ks x ts`, ordered by `(K, T)`.
pub fn generate_candidates(
    f_x: &ImageRGB,
    query_field: &DescriptorField,
    db: &ExemplarDatabase,
    ks: &[usize],
    ts: &[usize],
) -> Result<Vec<Candidate>> {
    if ks.is_empty() || ts.is_empty() {
        return Err(Error::InvalidConfig(
            "K and T lists must be non-empty".into(),
        ));
    }
    let mut configs = ks
        .iter()
        .flat_map(|&k| ts.iter().map(move |&t| SearchConfig::new(k, t)))
        .collect::<Result<Vec<_>>>()?;
    configs.sort_unstable();
    configs.dedup();
    check_inputs(f_x, query_field, db)?;

    let g = global_descriptor(query_field)?;
    let k_max = configs.iter().map(|c| c.k_global).max().expect("non-empty");
    let ranking = global_knn(&g, db, k_max)?;
    let grid = MatchGrid::compute(query_field, db, &ranking, ts)?;
    configs
        .into_par_iter()
        .map(|cfg| candidate(f_x, db, cfg, grid.matches(cfg.k_global, cfg.window)?))
        .collect()
}

/// Normal estimator applied to candidate images by the normal-map oracle.
pub type NormalEstimator<'a> = &'a (dyn Fn(&ImageRGB) -> Result<NormalMap> + Sync);

pub enum SelectPolicy<'a> {
    /// Highest PSNR against the ground-truth image.
    OraclePsnr,
    /// Lowest mean angular error of the estimated normals.
    OracleNormalMean {
        ground_truth: &'a NormalMap,
        estimate: NormalEstimator<'a>,
    },
    /// Uniform choice from a seeded generator.
    Random { seed: u64 },
}

/// Picks one candidate; oracle ties go to the lowest `(K, T)`.
pub fn select<'c>(
    candidates: &'c [Candidate],
    ground_truth: Option<&ImageRGB>,
    policy: &SelectPolicy<'_>,
) -> Result<&'c Candidate> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("no candidates to select from".into()));
    }
    let argbest = |scores: Vec<f64>, higher: bool| {
        let mut best = 0;
        for i in 1..candidates.len() {
            let (a, b) = (scores[i], scores[best]);
            let wins = if higher { a > b } else { a < b };
            if wins || (a == b && candidates[i].config < candidates[best].config) {
                best = i;
            }
        }
        &candidates[best]
    };
    match policy {
        SelectPolicy::OraclePsnr => {
            let gt = ground_truth.ok_or(Error::MissingGroundTruth)?;
            let scores = candidates
                .iter()
                .map(|c| psnr(&c.image, gt))
                .collect::<Result<Vec<_>>>()?;
            Ok(argbest(scores, true))
        }
        SelectPolicy::OracleNormalMean {
            ground_truth,
            estimate,
        } => {
            let scores = candidates
                .iter()
                .map(|c| Ok(angular_stats(&estimate(&c.image)?, ground_truth)?.mean))
                .collect::<Result<Vec<_>>>()?;
            Ok(argbest(scores, false))
        }
        SelectPolicy::Random { seed } => Ok(&candidates[random_index(candidates.len(), *seed)]),
    }
}
