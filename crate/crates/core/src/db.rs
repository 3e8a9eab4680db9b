//! Immutable exemplar database: `(f(x_k), y_k)` pairs with stored descriptors.
//!
//! # File format (`PXNN`, little-endian)
//!
//! ```text
//! magic "PXNN" | u32 version=1 | u32 count | u32 width | u32 height | u32 dim
//! descriptor config:
//!     u32 levels | u32 patch_radius | f32 weight x levels | u8 normalize
//!   or, for externally computed fields:
//!     u32 0xFFFFFFFF | u32 level_count | u32 sub-block length x level_count
//! per exemplar:
//!     u32 id | u16 len + UTF-8 name | u16 tag count | (u16 len + UTF-8) x tags
//!     f32 target x w*h*3 | f32 regressed x w*h*3 | f32 field x w*h*dim
//!     f32 global descriptor (length = coarsest sub-block)
//! ```

use std::collections::{BTreeSet, HashSet};
use std::path::Path;
use std::sync::Arc;

use crate::codec::{read_file, write_file, Reader, Writer};
use crate::descriptor::{
    compute_field, global_descriptor, DescriptorConfig, DescriptorField, FieldOrigin,
    GlobalDescriptor,
};
use crate::error::{Error, Result};
use crate::image::{ImageRGB, LowFreqImage, CHANNELS};

pub const DB_MAGIC: &[u8; 4] = b"PXNN";
pub const DB_VERSION: u32 = 1;
const EXTERNAL_SENTINEL: u32 = 0xFFFF_FFFF;

pub type ExemplarId = u32;

/// How the database's descriptor fields were produced.
#[derive(Debug, Clone, PartialEq)]
pub enum DescriptorSource {
    Config(DescriptorConfig),
    /// Precomputed fields with the given sub-block lengths.
    External {
        blocks: Vec<usize>,
    },
}

impl DescriptorSource {
    pub fn origin(&self) -> FieldOrigin {
        match self {
            DescriptorSource::Config(c) => FieldOrigin::Config(c.digest()),
            DescriptorSource::External { .. } => FieldOrigin::External,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DescriptorSource::Config(c) => c.dim(),
            DescriptorSource::External { blocks } => blocks.iter().sum(),
        }
    }

    fn global_dim(&self) -> Result<usize> {
        match self {
            DescriptorSource::Config(c) => Ok(c.block_len()),
            DescriptorSource::External { blocks } => {
                blocks.last().copied().ok_or(Error::MissingLevelStructure)
            }
        }
    }
}

/// One training pair and its precomputed match keys.
#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub id: ExemplarId,
    pub name: String,
    /// Stage-1 output `f(x_k)`.
    pub regressed: ImageRGB,
    /// Ground-truth image `y_k`.
    pub target: ImageRGB,
    pub field: DescriptorField,
    pub global_desc: GlobalDescriptor,
    pub tags: BTreeSet<String>,
    norms: Vec<f32>,
}

impl Exemplar {
    fn new(
        id: ExemplarId,
        name: String,
        regressed: ImageRGB,
        target: ImageRGB,
        field: DescriptorField,
        global_desc: GlobalDescriptor,
        tags: BTreeSet<String>,
    ) -> Self {
        let norms = field.squared_norms();
        Self {
            id,
            name,
            regressed,
            target,
            field,
            global_desc,
            tags,
            norms,
        }
    }

    /// Cached squared norms of the field vectors.
    pub fn squared_norms(&self) -> &[f32] {
        &self.norms
    }

    /// Per-channel residual `y_k,j - f(x_k)_j` at pixel `j`.
    #[inline]
    pub fn residual(&self, j: usize) -> [f64; 3] {
        let y = self.target.pixel_at(j);
        let f = self.regressed.pixel_at(j);
        [
            y[0] as f64 - f[0] as f64,
            y[1] as f64 - f[1] as f64,
            y[2] as f64 - f[2] as f64,
        ]
    }
}

/// One training pair as supplied to [`ExemplarDatabase::build`].
#[derive(Debug, Clone)]
pub struct ExemplarInput {
    pub regressed: LowFreqImage,
    pub target: ImageRGB,
    pub name: String,
    pub tags: Vec<String>,
}

/// Which exemplars a subset keeps.
#[derive(Debug, Clone, PartialEq)]
pub enum Selector {
    All,
    Ids(Vec<ExemplarId>),
    /// Exemplars carrying any of the tags.
    Tags(Vec<String>),
    Names(Vec<String>),
}

impl Selector {
    fn matches(&self, e: &Exemplar) -> bool {
        match self {
            Selector::All => true,
            Selector::Ids(ids) => ids.contains(&e.id),
            Selector::Tags(tags) => tags.iter().any(|t| e.tags.contains(t)),
            Selector::Names(names) => names.contains(&e.name),
        }
    }
}

/// Ordered, immutable exemplar collection. Subsets share the underlying storage.
#[derive(Debug, Clone)]
pub struct ExemplarDatabase {
    store: Arc<[Exemplar]>,
    members: Arc<[usize]>,
    descriptor: DescriptorSource,
    width: usize,
    height: usize,
}

impl PartialEq for ExemplarDatabase {
    fn eq(&self, other: &Self) -> bool {
        self.descriptor == other.descriptor
            && self.width == other.width
            && self.height == other.height
            && self.len() == other.len()
            && self.iter().zip(other.iter()).all(|(a, b)| a == b)
    }
}

fn check_size(what: &str, index: usize, img: &ImageRGB, size: (usize, usize)) -> Result<()> {
    if img.dimensions() != size {
        return Err(Error::DimensionMismatch(format!(
            "pair {index}: {what} is {}x{}, expected {}x{}",
            img.width(),
            img.height(),
            size.0,
            size.1
        )));
    }
    Ok(())
}

impl ExemplarDatabase {
    /// Builds a database, computing descriptors with `cfg`. Ids follow input order.
    pub fn build(pairs: Vec<ExemplarInput>, cfg: &DescriptorConfig) -> Result<Self> {
        cfg.validate()?;
        let fields = {
            let first = pairs.first().ok_or(Error::EmptyDatabase)?;
            let size = first.target.dimensions();
            let mut fields = Vec::with_capacity(pairs.len());
            for (i, p) in pairs.iter().enumerate() {
                check_size("target", i, &p.target, size)?;
                check_size("regressed", i, &p.regressed, size)?;
                fields.push(compute_field(&p.regressed, cfg)?);
            }
            fields
        };
        Self::assemble(pairs, fields, DescriptorSource::Config(cfg.clone()))
    }

    /// Builds a database from externally computed descriptor fields.
    pub fn build_with_fields(
        pairs: Vec<ExemplarInput>,
        fields: Vec<DescriptorField>,
    ) -> Result<Self> {
        let first = fields.first().ok_or(Error::EmptyDatabase)?;
        if fields.len() != pairs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} pairs but {} fields",
                pairs.len(),
                fields.len()
            )));
        }
        let blocks = first.blocks().to_vec();
        if blocks.is_empty() {
            return Err(Error::MissingLevelStructure);
        }
        for (i, f) in fields.iter().enumerate() {
            if f.blocks() != blocks.as_slice() || f.origin() != FieldOrigin::External {
                return Err(Error::ConfigMismatch {
                    query: format!("field {i} ({}, blocks {:?})", f.origin(), f.blocks()),
                    database: format!("external, blocks {blocks:?}"),
                });
            }
        }
        Self::assemble(pairs, fields, DescriptorSource::External { blocks })
    }

    fn assemble(
        pairs: Vec<ExemplarInput>,
        fields: Vec<DescriptorField>,
        descriptor: DescriptorSource,
    ) -> Result<Self> {
        let size = pairs
            .first()
            .ok_or(Error::EmptyDatabase)?
            .target
            .dimensions();
        let mut exemplars = Vec::with_capacity(pairs.len());
        for (i, (p, field)) in pairs.into_iter().zip(fields).enumerate() {
            check_size("target", i, &p.target, size)?;
            check_size("regressed", i, &p.regressed, size)?;
            if field.dimensions() != size {
                return Err(Error::DimensionMismatch(format!(
                    "pair {i}: field is {}x{}, expected {}x{}",
                    field.width(),
                    field.height(),
                    size.0,
                    size.1
                )));
            }
            let global = global_descriptor(&field)?;
            exemplars.push(Exemplar::new(
                i as ExemplarId,
                p.name,
                p.regressed.into_image(),
                p.target,
                field,
                global,
                p.tags.into_iter().collect(),
            ));
        }
        Self::from_exemplars(exemplars, descriptor, size)
    }

    fn from_exemplars(
        exemplars: Vec<Exemplar>,
        descriptor: DescriptorSource,
        size: (usize, usize),
    ) -> Result<Self> {
        if exemplars.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        let members: Arc<[usize]> = (0..exemplars.len()).collect();
        Ok(Self {
            store: exemplars.into(),
            members,
            descriptor,
            width: size.0,
            height: size.1,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn descriptor(&self) -> &DescriptorSource {
        &self.descriptor
    }

    /// Config the query field must have been computed with.
    pub fn descriptor_config(&self) -> Option<&DescriptorConfig> {
        match &self.descriptor {
            DescriptorSource::Config(c) => Some(c),
            DescriptorSource::External { .. } => None,
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &Exemplar> + '_ {
        self.members.iter().map(|&i| &self.store[i])
    }

    pub fn ids(&self) -> Vec<ExemplarId> {
        self.iter().map(|e| e.id).collect()
    }

    /// Exemplar by id, if it is part of this view.
    pub fn get(&self, id: ExemplarId) -> Option<&Exemplar> {
        self.members
            .binary_search_by_key(&id, |&i| self.store[i].id)
            .ok()
            .map(|pos| &self.store[self.members[pos]])
    }

    /// View restricted to exemplars matching `selector`; ids and order preserved.
    pub fn subset(&self, selector: &Selector) -> Result<Self> {
        let members: Arc<[usize]> = self
            .members
            .iter()
            .copied()
            .filter(|&i| selector.matches(&self.store[i]))
            .collect();
        if members.is_empty() {
            return Err(Error::EmptySelection);
        }
        Ok(Self {
            store: Arc::clone(&self.store),
            members,
            descriptor: self.descriptor.clone(),
            width: self.width,
            height: self.height,
        })
    }

    /// Whether two views share pixel storage.
    pub fn shares_storage(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.store, &other.store)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(DB_MAGIC);
        w.u32(DB_VERSION);
        w.u32(self.len() as u32);
        w.u32(self.width as u32);
        w.u32(self.height as u32);
        w.u32(self.descriptor.dim() as u32);
        match &self.descriptor {
            DescriptorSource::Config(c) => c.encode(&mut w),
            DescriptorSource::External { blocks } => {
                w.u32(EXTERNAL_SENTINEL);
                w.u32(blocks.len() as u32);
                for &b in blocks {
                    w.u32(b as u32);
                }
            }
        }
        for e in self.iter() {
            w.u32(e.id);
            w.string_u16(&e.name)?;
            let tag_count = u16::try_from(e.tags.len()).map_err(|_| {
                Error::InvalidConfig(format!("exemplar {} has too many tags", e.id))
            })?;
            w.u16(tag_count);
            for t in &e.tags {
                w.string_u16(t)?;
            }
            w.f32s(e.target.data());
            w.f32s(e.regressed.data());
            w.f32s(e.field.data());
            w.f32s(&e.global_desc.data);
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(DB_MAGIC)?;
        let version = r.u32()?;
        if version != DB_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let count = r.u32()? as usize;
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let levels = r.u32()?;
        let descriptor = if levels == EXTERNAL_SENTINEL {
            let n = r.u32()? as usize;
            let mut blocks = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                blocks.push(r.u32()? as usize);
            }
            DescriptorSource::External { blocks }
        } else {
            let levels = levels as usize;
            let patch_radius = r.u32()? as usize;
            let mut level_weights = Vec::with_capacity(levels.min(1024));
            for _ in 0..levels {
                level_weights.push(r.f32()?);
            }
            let normalize_per_level = match r.u8()? {
                0 => false,
                1 => true,
                other => return Err(Error::Malformed(format!("normalize flag {other}"))),
            };
            let cfg = DescriptorConfig {
                levels,
                patch_radius,
                level_weights,
                normalize_per_level,
            };
            cfg.validate()?;
            DescriptorSource::Config(cfg)
        };
        if descriptor.dim() != dim {
            return Err(Error::Malformed(format!(
                "header dim {dim} disagrees with descriptor layout ({})",
                descriptor.dim()
            )));
        }
        if count == 0 {
            return Err(Error::EmptyDatabase);
        }
        let origin = descriptor.origin();
        let blocks = match &descriptor {
            DescriptorSource::Config(c) => vec![c.block_len(); c.levels],
            DescriptorSource::External { blocks } => blocks.clone(),
        };
        let global_dim = descriptor.global_dim()?;
        let pixels = width * height;

        let mut exemplars: Vec<Exemplar> = Vec::with_capacity(count.min(1 << 16));
        let mut seen = HashSet::new();
        for _ in 0..count {
            let id = r.u32()?;
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id));
            }
            if let Some(prev) = exemplars.last() {
                if prev.id > id {
                    return Err(Error::Malformed(format!(
                        "ids not ascending: {} then {id}",
                        prev.id
                    )));
                }
            }
            let name = r.string_u16()?;
            let tag_count = r.u16()? as usize;
            let mut tags = BTreeSet::new();
            for _ in 0..tag_count {
                tags.insert(r.string_u16()?);
            }
            let base = r.position() / 4;
            let target = ImageRGB::new(width, height, r.f32s(pixels * CHANNELS, base)?)?;
            let base = r.position() / 4;
            let regressed = ImageRGB::new(width, height, r.f32s(pixels * CHANNELS, base)?)?;
            let base = r.position() / 4;
            let field_data = r.f32s(pixels * dim, base)?;
            let field = DescriptorField::with_origin(
                width,
                height,
                dim,
                blocks.clone(),
                field_data,
                origin,
            )?;
            let base = r.position() / 4;
            let global_desc = GlobalDescriptor {
                data: r.f32s(global_dim, base)?,
            };
            exemplars.push(Exemplar::new(
                id,
                name,
                regressed,
                target,
                field,
                global_desc,
                tags,
            ));
        }
        if r.remaining() != 0 {
            return Err(Error::Malformed(format!(
                "{} trailing bytes after byte {}",
                r.remaining(),
                r.position()
            )));
        }
        Self::from_exemplars(exemplars, descriptor, (width, height))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Provenance;

    fn pair(seed: u32, w: usize, h: usize, tags: &[&str]) -> ExemplarInput {
        let img = |s: u32| {
            ImageRGB::from_fn(w, h, |x, y| {
                let v = ((x as u32 * 7 + y as u32 * 13 + s * 29) % 17) as f32 / 16.0;
                [v, 1.0 - v, (v * 0.5 + 0.25).min(1.0)]
            })
            .unwrap()
        };
        ExemplarInput {
            regressed: LowFreqImage::new(img(seed), Provenance::Bicubic),
            target: img(seed + 1),
            name: format!("ex{seed}"),
            tags: tags.iter().map(|t| t.to_string()).collect(),
        }
    }

    fn small_db() -> ExemplarDatabase {
        let pairs = vec![
            pair(0, 8, 8, &["tabby"]),
            pair(3, 8, 8, &["siamese"]),
            pair(5, 8, 8, &["tabby", "striped"]),
        ];
        ExemplarDatabase::build(pairs, &DescriptorConfig::new(2, 1)).unwrap()
    }

    #[test]
    fn build_assigns_ids_and_rejects_bad_input() {
        let db = small_db();
        assert_eq!(db.ids(), vec![0, 1, 2]);
        assert!(matches!(
            ExemplarDatabase::build(vec![], &DescriptorConfig::default()),
            Err(Error::EmptyDatabase)
        ));
        let err = ExemplarDatabase::build(
            vec![pair(0, 8, 8, &[]), pair(1, 8, 6, &[])],
            &DescriptorConfig::new(1, 1),
        )
        .unwrap_err();
        assert!(err.to_string().contains("pair 1"), "{err}");
    }

    #[test]
    fn identical_pairs_have_equal_globals() {
        let db = ExemplarDatabase::build(
            vec![pair(2, 8, 8, &[]), pair(2, 8, 8, &[])],
            &DescriptorConfig::new(3, 1),
        )
        .unwrap();
        assert_eq!(db.ids(), vec![0, 1]);
        assert_eq!(
            db.get(0).unwrap().global_desc,
            db.get(1).unwrap().global_desc
        );
    }

    #[test]
    fn subset_by_tag_and_ids() {
        let db = small_db();
        let tabby = db.subset(&Selector::Tags(vec!["tabby".into()])).unwrap();
        assert_eq!(tabby.ids(), vec![0, 2]);
        assert!(tabby.shares_storage(&db));
        assert_eq!(db.subset(&Selector::All).unwrap(), db);
        assert_eq!(db.subset(&Selector::Ids(vec![0, 1, 2])).unwrap(), db);
        assert_eq!(
            db.subset(&Selector::Names(vec!["ex3".into()]))
                .unwrap()
                .ids(),
            vec![1]
        );
        assert!(matches!(
            db.subset(&Selector::Tags(vec!["persian".into()])),
            Err(Error::EmptySelection)
        ));
        assert!(tabby.get(1).is_none());
        assert_eq!(tabby.get(2).unwrap().name, "ex5");
    }

    #[test]
    fn round_trip_and_corruptions() {
        let db = small_db();
        let bytes = db.to_bytes().unwrap();
        let back = ExemplarDatabase::from_bytes(&bytes).unwrap();
        assert_eq!(back, db);
        assert_eq!(back.to_bytes().unwrap(), bytes);

        let cut = &bytes[..bytes.len() / 2];
        let err = ExemplarDatabase::from_bytes(cut).unwrap_err();
        assert_eq!(err.to_string(), format!("truncated at byte {}", cut.len()));

        let mut v99 = bytes.clone();
        v99[4..8].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            ExemplarDatabase::from_bytes(&v99),
            Err(Error::UnsupportedVersion(99))
        ));

        let mut magic = bytes.clone();
        magic[..4].copy_from_slice(b"NOPE");
        assert!(matches!(
            ExemplarDatabase::from_bytes(&magic),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let db = small_db();
        let mut bytes = db.to_bytes().unwrap();
        // Header: 6 u32 + config (2 u32 + 2 f32 + u8) = 41 bytes; first id follows.
        let first_id_at = 24 + 8 + 8 + 1;
        assert_eq!(&bytes[first_id_at..first_id_at + 4], &0u32.to_le_bytes());
        let e0_len = {
            let one = db
                .subset(&Selector::Ids(vec![0]))
                .unwrap()
                .to_bytes()
                .unwrap();
            one.len() - first_id_at
        };
        let second_id_at = first_id_at + e0_len;
        bytes[second_id_at..second_id_at + 4].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            ExemplarDatabase::from_bytes(&bytes),
            Err(Error::DuplicateId(0))
        ));
    }
}
