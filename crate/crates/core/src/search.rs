//! Two-level approximate pixel search and its exhaustive counterpart.
//!
//! The approximate search first ranks exemplars by global-descriptor cosine
//! distance and keeps the best `K`, then matches each query pixel only
//! against pixels inside a `T x T` window around the same location in those
//! `K` exemplars. The window spans rows `[r - floor((T-1)/2), r + floor(T/2)]`
//! (and likewise columns), truncated at the image border.
//!
//! Ties resolve to the lower exemplar id, then the lower row-major source
//! pixel, so results never depend on evaluation order.

use std::cmp::Ordering;
use std::ops::RangeInclusive;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::db::{Exemplar, ExemplarDatabase, ExemplarId};
use crate::descriptor::{
    cosine_distance, cosine_from_parts, dot, DescriptorField, GlobalDescriptor, LANES,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Number of globally retrieved exemplars (`K`).
    pub k_global: usize,
    /// Window side length (`T`).
    pub window: usize,
}

impl SearchConfig {
    pub fn new(k_global: usize, window: usize) -> Result<Self> {
        let cfg = Self { k_global, window };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_global == 0 || self.window == 0 {
            return Err(Error::InvalidConfig(format!(
                "K and T must be at least 1 (got K={}, T={})",
                self.k_global, self.window
            )));
        }
        Ok(())
    }
}

/// Where one output pixel's residual comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelMatch {
    pub exemplar_id: ExemplarId,
    pub source_row: usize,
    pub source_col: usize,
    pub distance: f64,
}

impl PixelMatch {
    pub fn source_index(&self, width: usize) -> usize {
        self.source_row * width + self.source_col
    }
}

/// A globally retrieved exemplar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: ExemplarId,
    pub distance: f64,
}

/// Inclusive window bounds around `center` on an axis of length `len`.
#[inline]
pub fn window_bounds(center: usize, window: usize, len: usize) -> RangeInclusive<usize> {
    if window >= len {
        return 0..=len - 1;
    }
    let lo = center.saturating_sub((window - 1) / 2).min(len - window);
    lo..=lo + window - 1
}

/// Ids of the `min(k, N)` exemplars closest to `query`, nearest first.
pub fn global_knn(
    query: &GlobalDescriptor,
    db: &ExemplarDatabase,
    k: usize,
) -> Result<Vec<Neighbor>> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    if k > db.len() {
        warn!("K={k} exceeds database size {}; clamping", db.len());
    }
    let mut ranked = db
        .iter()
        .map(|e| {
            Ok(Neighbor {
                id: e.id,
                distance: cosine_distance(&query.data, &e.global_desc.data)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
    ranked.truncate(k);
    Ok(ranked)
}

/// Best `(distance, source index)` so far for one exemplar; lower index wins ties.
#[derive(Debug, Clone, Copy)]
struct Best {
    distance: f64,
    source: u32,
}

impl Best {
    const NONE: Best = Best {
        distance: f64::INFINITY,
        source: u32::MAX,
    };
}

/// `(distance, id, source)` lexicographic order.
#[inline]
fn better(d: f64, id: ExemplarId, j: usize, than: &PixelMatchKey) -> bool {
    match d.total_cmp(&than.distance) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => (id, j) < (than.id, than.source),
    }
}

#[derive(Debug, Clone, Copy)]
struct PixelMatchKey {
    distance: f64,
    id: ExemplarId,
    source: usize,
}

impl PixelMatchKey {
    const NONE: PixelMatchKey = PixelMatchKey {
        distance: f64::INFINITY,
        id: ExemplarId::MAX,
        source: usize::MAX,
    };

    fn into_match(self, width: usize) -> PixelMatch {
        PixelMatch {
            exemplar_id: self.id,
            source_row: self.source / width,
            source_col: self.source % width,
            distance: self.distance,
        }
    }
}

fn check_query(query: &DescriptorField, db: &ExemplarDatabase) -> Result<()> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let origin = db.descriptor().origin();
    if query.origin() != origin || query.dim() != db.descriptor().dim() {
        return Err(Error::ConfigMismatch {
            query: format!("{} (dim {})", query.origin(), query.dim()),
            database: format!("{origin} (dim {})", db.descriptor().dim()),
        });
    }
    if query.dimensions() != db.image_size() {
        return Err(Error::DimensionMismatch(format!(
            "query field {}x{} vs database {}x{}",
            query.width(),
            query.height(),
            db.image_size().0,
            db.image_size().1
        )));
    }
    Ok(())
}

fn resolve<'a>(db: &'a ExemplarDatabase, ids: &[ExemplarId]) -> Result<Vec<&'a Exemplar>> {
    if ids.is_empty() {
        return Err(Error::EmptySelection);
    }
    ids.iter()
        .map(|&id| {
            db.get(id)
                .ok_or_else(|| Error::InvalidConfig(format!("exemplar {id} not in database")))
        })
        .collect()
}

/// Scans one exemplar's window with cached norms; row-major, strict improvement.
fn scan_window(
    q: &[f32],
    q_norm: f32,
    e: &Exemplar,
    rows: RangeInclusive<usize>,
    cols: RangeInclusive<usize>,
    width: usize,
) -> Best {
    let dim = q.len();
    let data = e.field.data();
    let norms = e.squared_norms();
    let mut best = Best::NONE;
    for row in rows {
        for col in cols.clone() {
            let j = row * width + col;
            let d = cosine_from_parts(dot(q, &data[j * dim..(j + 1) * dim]), q_norm, norms[j]);
            if d < best.distance {
                best = Best {
                    distance: d,
                    source: j as u32,
                };
            }
        }
    }
    best
}

/// Best match for query pixel `i` within a `T x T` window of the candidates.
pub fn windowed_match(
    query: &DescriptorField,
    i: usize,
    db: &ExemplarDatabase,
    candidate_ids: &[ExemplarId],
    window: usize,
) -> Result<PixelMatch> {
    check_query(query, db)?;
    if i >= query.pixel_count() {
        return Err(Error::InvalidConfig(format!("pixel {i} out of bounds")));
    }
    if window == 0 {
        return Err(Error::InvalidConfig("T must be at least 1".into()));
    }
    let candidates = resolve(db, candidate_ids)?;
    let (w, h) = query.dimensions();
    let q = query.vector(i);
    let q_norm = dot(q, q);
    let rows = window_bounds(i / w, window, h);
    let cols = window_bounds(i % w, window, w);
    let mut best = PixelMatchKey::NONE;
    for e in candidates {
        let b = scan_window(q, q_norm, e, rows.clone(), cols.clone(), w);
        if better(b.distance, e.id, b.source as usize, &best) {
            best = PixelMatchKey {
                distance: b.distance,
                id: e.id,
                source: b.source as usize,
            };
        }
    }
    Ok(best.into_match(w))
}

/// Exhaustive match of query pixel `i` against every pixel of every exemplar.
///
/// Uses [`cosine_distance`] on raw vectors with no cached state; this is the
/// reference the windowed search is checked against.
pub fn brute_force_match(
    query: &DescriptorField,
    i: usize,
    db: &ExemplarDatabase,
) -> Result<PixelMatch> {
    check_query(query, db)?;
    if i >= query.pixel_count() {
        return Err(Error::InvalidConfig(format!("pixel {i} out of bounds")));
    }
    let q = query.vector(i);
    let mut best = PixelMatchKey::NONE;
    for e in db.iter() {
        for j in 0..e.field.pixel_count() {
            let d = cosine_distance(q, e.field.vector(j))?;
            if better(d, e.id, j, &best) {
                best = PixelMatchKey {
                    distance: d,
                    id: e.id,
                    source: j,
                };
            }
        }
    }
    Ok(best.into_match(query.width()))
}

/// Columns per block in the row kernel.
const COL_BLOCK: usize = 8;

/// One exemplar field regrouped as `[row][column block][dim][column]`, so a
/// row of dot products vectorizes across columns. The last block of a row is
/// zero-padded.
struct RowPlanes {
    blocks_per_row: usize,
    dim: usize,
    data: Vec<f32>,
    /// `1 / |v|` per pixel, 0 for zero vectors.
    inv_len: Vec<f32>,
}

impl RowPlanes {
    fn new(field: &DescriptorField, norms: &[f32]) -> Self {
        let (w, h) = field.dimensions();
        let dim = field.dim();
        let blocks_per_row = w.div_ceil(COL_BLOCK);
        let mut data = vec![0f32; h * blocks_per_row * dim * COL_BLOCK];
        for row in 0..h {
            for col in 0..w {
                let blk = (row * blocks_per_row + col / COL_BLOCK) * dim * COL_BLOCK;
                for (d, &v) in field.vector(row * w + col).iter().enumerate() {
                    data[blk + d * COL_BLOCK + col % COL_BLOCK] = v;
                }
            }
        }
        let inv_len = norms
            .iter()
            .map(|&n| if n > 0.0 { 1.0 / n.sqrt() } else { 0.0 })
            .collect();
        Self {
            blocks_per_row,
            dim,
            data,
            inv_len,
        }
    }

    /// Dot products of `q` with columns `cs..=ce` of `row`, written to `out`
    /// starting at column `cs` rounded down to a block; returns that column.
    ///
    /// Each column sees exactly the operations of [`dot`], so results agree
    /// bit for bit.
    fn row_dots(&self, q: &[f32], row: usize, cs: usize, ce: usize, out: &mut Vec<f32>) -> usize {
        let block_len = self.dim * COL_BLOCK;
        let (first, last) = (cs / COL_BLOCK, ce / COL_BLOCK);
        let row_data =
            &self.data[row * self.blocks_per_row * block_len..][..self.blocks_per_row * block_len];
        out.clear();
        for blk in row_data[first * block_len..(last + 1) * block_len].chunks_exact(block_len) {
            let mut acc = [[0f32; COL_BLOCK]; LANES];
            let chunks = blk.chunks_exact(LANES * COL_BLOCK);
            let rest = chunks.remainder();
            for (e, qv) in chunks.zip(q.chunks_exact(LANES)) {
                let e: &[f32; LANES * COL_BLOCK] = e.try_into().expect("exact chunk");
                let qv: &[f32; LANES] = qv.try_into().expect("exact chunk");
                for l in 0..LANES {
                    for x in 0..COL_BLOCK {
                        acc[l][x] += qv[l] * e[l * COL_BLOCK + x];
                    }
                }
            }
            let mut tail = [0f32; COL_BLOCK];
            let q_rest = &q[q.len() / LANES * LANES..];
            for (e, &qv) in rest.chunks_exact(COL_BLOCK).zip(q_rest) {
                let e: &[f32; COL_BLOCK] = e.try_into().expect("exact chunk");
                for x in 0..COL_BLOCK {
                    tail[x] += qv * e[x];
                }
            }
            let mut sums = [0f32; COL_BLOCK];
            for x in 0..COL_BLOCK {
                sums[x] = ((acc[0][x] + acc[4][x]) + (acc[1][x] + acc[5][x]))
                    + ((acc[2][x] + acc[6][x]) + (acc[3][x] + acc[7][x]))
                    + tail[x];
            }
            out.extend_from_slice(&sums);
        }
        first * COL_BLOCK
    }
}

/// Per-pixel best matches for every window size against each ranked exemplar.
///
/// Built once per query; any `(K, T)` with `K` up to the ranking length and
/// `T` among the scanned windows is then a cheap reduction.
pub struct MatchGrid {
    width: usize,
    pixels: usize,
    windows: Vec<usize>,
    ranking: Vec<Neighbor>,
    // [pixel][window][rank]
    best: Vec<Best>,
}

#[derive(Default)]
struct Scratch {
    dots: Vec<f32>,
    scores: Vec<f32>,
}

/// Safety margin, in cosine units, between the cheap score and the exact distance.
const SCORE_MARGIN: f64 = 1e-5;

/// Lowest cheap score `dot / |b|` a pixel can have and still reach distance `d`.
///
/// The score approximates `(1 - distance) * |q|` to within a few f32 ulps,
/// far inside the margin, so skipping pixels below it never changes a result.
#[inline]
fn score_floor(d: f64, q_len: f32) -> f64 {
    (1.0 - d - SCORE_MARGIN) * q_len as f64
}

impl MatchGrid {
    /// Scans all `windows` (any order, deduplicated) for the ranked exemplars.
    pub fn compute(
        query: &DescriptorField,
        db: &ExemplarDatabase,
        ranking: &[Neighbor],
        windows: &[usize],
    ) -> Result<Self> {
        check_query(query, db)?;
        let mut windows = windows.to_vec();
        windows.sort_unstable();
        windows.dedup();
        if windows.is_empty() || windows[0] == 0 {
            return Err(Error::InvalidConfig(
                "window sizes must be non-empty and at least 1".into(),
            ));
        }
        let ids: Vec<ExemplarId> = ranking.iter().map(|n| n.id).collect();
        let exemplars = resolve(db, &ids)?;
        let planes: Vec<RowPlanes> = exemplars
            .par_iter()
            .map(|e| RowPlanes::new(&e.field, e.squared_norms()))
            .collect();

        let (w, h) = query.dimensions();
        let pixels = w * h;
        let nw = windows.len();
        let nr = exemplars.len();
        let t_max = *windows.last().expect("non-empty");

        // All pixels of a query row share their row bounds, so each exemplar
        // row is scanned for the whole query row while it is in cache.
        let mut best = vec![Best::NONE; pixels * nw * nr];
        best.par_chunks_mut(w * nw * nr).enumerate().for_each_init(
            Scratch::default,
            |scratch, (r0, out)| {
                let row_b: Vec<RangeInclusive<usize>> =
                    windows.iter().map(|&t| window_bounds(r0, t, h)).collect();
                let rows = window_bounds(r0, t_max, h);
                let col_b: Vec<Vec<RangeInclusive<usize>>> = (0..w)
                    .map(|c0| windows.iter().map(|&t| window_bounds(c0, t, w)).collect())
                    .collect();
                let q_norms: Vec<f32> = (0..w)
                    .map(|c0| {
                        let q = query.vector(r0 * w + c0);
                        dot(q, q)
                    })
                    .collect();
                let mut floor = vec![f64::NEG_INFINITY; w * nw];
                for (rank, (e, plane)) in exemplars.iter().zip(&planes).enumerate() {
                    let norms = e.squared_norms();
                    floor.iter_mut().for_each(|f| *f = f64::NEG_INFINITY);
                    for row in rows.clone() {
                        // Smallest window containing this row.
                        let Some(first_t) = row_b.iter().position(|b| b.contains(&row)) else {
                            continue;
                        };
                        let base = row * w;
                        for c0 in 0..w {
                            let q = query.vector(r0 * w + c0);
                            let q_norm = q_norms[c0];
                            let q_len = q_norm.sqrt();
                            let cols = &col_b[c0];
                            let (cs, ce) = (*cols[nw - 1].start(), *cols[nw - 1].end());
                            let b0 = plane.row_dots(q, row, cs, ce, &mut scratch.dots);
                            scratch.scores.clear();
                            scratch.scores.extend(
                                scratch.dots[cs - b0..=ce - b0]
                                    .iter()
                                    .zip(&plane.inv_len[base + cs..=base + ce])
                                    .map(|(&d, &r)| d * r),
                            );
                            let px_out = &mut out[c0 * nw * nr..][..nw * nr];
                            let px_floor = &mut floor[c0 * nw..][..nw];
                            for t in first_t..nw {
                                let slot = &mut px_out[t * nr + rank];
                                for col in cols[t].clone() {
                                    if (scratch.scores[col - cs] as f64) < px_floor[t] {
                                        continue;
                                    }
                                    let j = base + col;
                                    let d =
                                        cosine_from_parts(scratch.dots[col - b0], q_norm, norms[j]);
                                    if d < slot.distance {
                                        *slot = Best {
                                            distance: d,
                                            source: j as u32,
                                        };
                                        px_floor[t] = score_floor(d, q_len);
                                    }
                                }
                            }
                        }
                    }
                }
            },
        );
        Ok(Self {
            width: w,
            pixels,
            windows,
            ranking: ranking.to_vec(),
            best,
        })
    }

    pub fn windows(&self) -> &[usize] {
        &self.windows
    }

    pub fn ranking(&self) -> &[Neighbor] {
        &self.ranking
    }

    /// Matches for every pixel using the first `k` ranked exemplars and window `t`.
    pub fn matches(&self, k: usize, t: usize) -> Result<Vec<PixelMatch>> {
        let ti = self
            .windows
            .binary_search(&t)
            .map_err(|_| Error::InvalidConfig(format!("window {t} was not scanned")))?;
        if k == 0 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        let k = k.min(self.ranking.len());
        let nr = self.ranking.len();
        let nw = self.windows.len();
        Ok((0..self.pixels)
            .map(|i| {
                let slots = &self.best[(i * nw + ti) * nr..][..k];
                let mut best = PixelMatchKey::NONE;
                for (n, b) in self.ranking[..k].iter().zip(slots) {
                    if better(b.distance, n.id, b.source as usize, &best) {
                        best = PixelMatchKey {
                            distance: b.distance,
                            id: n.id,
                            source: b.source as usize,
                        };
                    }
                }
                best.into_match(self.width)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_bounds_split() {
        assert_eq!(window_bounds(5, 1, 20), 5..=5);
        assert_eq!(window_bounds(5, 3, 20), 4..=6);
        assert_eq!(window_bounds(5, 10, 20), 1..=10);
        assert_eq!(window_bounds(0, 5, 20), 0..=4);
        assert_eq!(window_bounds(19, 5, 20), 15..=19);
        assert_eq!(window_bounds(7, 96, 16), 0..=15);
        assert_eq!(window_bounds(0, 16, 16), 0..=15);
        for c in 0..40 {
            for t in 1..45 {
                let b = window_bounds(c, t, 40);
                assert_eq!(b.end() - b.start() + 1, t.min(40));
                assert!(b.contains(&c));
                let larger = window_bounds(c, t + 1, 40);
                assert!(larger.start() <= b.start() && larger.end() >= b.end());
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(SearchConfig::new(0, 1).is_err());
        assert!(SearchConfig::new(1, 0).is_err());
        assert!(SearchConfig::new(3, 5).is_ok());
    }
}
