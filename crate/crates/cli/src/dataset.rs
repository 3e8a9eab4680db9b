//! Building a database from a directory of image pairs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pixelnn::resample::bicubic_resample;
use pixelnn::{
    load_png, DescriptorConfig, ExemplarDatabase, ExemplarInput, LowFreqImage, Provenance,
};

const TARGET: &str = ".target.png";
const REGRESSED: &str = ".regressed.png";
const INPUT: &str = ".input.png";
const TAGS: &str = ".tags";

#[derive(Default)]
struct Entry {
    target: Option<PathBuf>,
    regressed: Option<PathBuf>,
    input: Option<PathBuf>,
    tags: Option<PathBuf>,
}

/// Tags are whitespace- or comma-separated.
fn read_tags(path: &Path) -> Result<Vec<String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect())
}

/// Collects `<name>.target.png` with `<name>.regressed.png` or `<name>.input.png`
/// (bicubic-upsampled to the target size) and optional `<name>.tags`.
///
/// Pairs are ordered by name, so ids follow name order.
pub fn collect_pairs(dir: &Path) -> Result<Vec<ExemplarInput>> {
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    let listing =
        std::fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))?;
    for item in listing {
        let path = item?.path();
        let Some(file) = path.file_name().and_then(|f| f.to_str()) else {
            continue;
        };
        let Some((name, suffix)) = [TARGET, REGRESSED, INPUT, TAGS]
            .into_iter()
            .find_map(|s| file.strip_suffix(s).map(|n| (n, s)))
        else {
            continue;
        };
        let e = entries.entry(name.to_owned()).or_default();
        let slot = match suffix {
            TARGET => &mut e.target,
            REGRESSED => &mut e.regressed,
            INPUT => &mut e.input,
            _ => &mut e.tags,
        };
        *slot = Some(path.clone());
    }

    let mut unpaired = Vec::new();
    for (name, e) in &entries {
        match (&e.target, e.regressed.is_some() || e.input.is_some()) {
            (Some(_), true) => {}
            (Some(_), false) => unpaired.push(format!(
                "{name}{TARGET} (no {name}{REGRESSED} or {name}{INPUT})"
            )),
            (None, _) => {
                let have = [
                    (&e.regressed, REGRESSED),
                    (&e.input, INPUT),
                    (&e.tags, TAGS),
                ]
                .into_iter()
                .find_map(|(p, s)| p.as_ref().map(|_| s))
                .expect("entry has at least one file");
                unpaired.push(format!("{name}{have} (no {name}{TARGET})"));
            }
        }
    }
    if !unpaired.is_empty() {
        bail!("unpaired files: {}", unpaired.join(", "));
    }
    if entries.is_empty() {
        bail!("no {TARGET} files in {}", dir.display());
    }

    entries
        .into_iter()
        .map(|(name, e)| {
            let target_path = e.target.expect("checked");
            let target = load_png(&target_path)?;
            let regressed = match (&e.regressed, &e.input) {
                (Some(p), _) => LowFreqImage::new(load_png(p)?, Provenance::ExternalFile),
                (None, Some(p)) => {
                    bicubic_resample(&load_png(p)?, target.width(), target.height())?
                }
                (None, None) => unreachable!("checked"),
            };
            let tags = match &e.tags {
                Some(p) => read_tags(p)?,
                None => Vec::new(),
            };
            Ok(ExemplarInput {
                regressed,
                target,
                name,
                tags,
            })
        })
        .collect()
}

pub fn build_database(dir: &Path, cfg: &DescriptorConfig) -> Result<ExemplarDatabase> {
    let pairs = collect_pairs(dir)?;
    Ok(ExemplarDatabase::build(pairs, cfg)?)
}
