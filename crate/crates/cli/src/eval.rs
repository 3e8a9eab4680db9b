//! Scoring a directory of synthesized candidates.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pixelnn::load_png;
use pixelnn::metrics::{
    evaluate_candidates, EdgeScores, EvalEntry, EvalReport, GroundTruth, NormalMap,
};

/// `(K, T)` from a `cand_K{K}_T{T}.png` file name.
pub fn parse_candidate_name(file: &str) -> Option<(usize, usize)> {
    let rest = file.strip_prefix("cand_K")?.strip_suffix(".png")?;
    let (k, t) = rest.split_once("_T")?;
    Some((k.parse().ok()?, t.parse().ok()?))
}

/// First existing `<stem><suffix>` among the suffixes.
fn sidecar(dir: &Path, stem: &str, suffixes: &[&str]) -> Option<PathBuf> {
    suffixes
        .iter()
        .map(|s| dir.join(format!("{stem}{s}")))
        .find(|p| p.is_file())
}

/// Loads every candidate in `dir`, ordered by `(K, T)`.
///
/// Estimated maps for candidate `cand_K1_T3` are read from
/// `cand_K1_T3.normals.{png,pxnt}` and `cand_K1_T3.edges.{png,pxnt}` when present.
pub fn load_candidates(dir: &Path) -> Result<Vec<EvalEntry>> {
    let mut found = Vec::new();
    for item in
        std::fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))?
    {
        let path = item?.path();
        if let Some((k, t)) = path
            .file_name()
            .and_then(|f| f.to_str())
            .and_then(parse_candidate_name)
        {
            found.push((k, t, path));
        }
    }
    if found.is_empty() {
        bail!("no cand_K*_T*.png files in {}", dir.display());
    }
    found.sort();
    found
        .into_iter()
        .map(|(k, t, path)| {
            let stem = format!("cand_K{k}_T{t}");
            let normals = sidecar(dir, &stem, &[".normals.png", ".normals.pxnt"])
                .map(NormalMap::load)
                .transpose()?;
            let edges = sidecar(dir, &stem, &[".edges.png", ".edges.pxnt"])
                .map(EdgeScores::load)
                .transpose()?;
            Ok(EvalEntry {
                k,
                t,
                image: load_png(&path)?,
                normals,
                edges,
            })
        })
        .collect()
}

pub fn evaluate_dir(
    dir: &Path,
    gt: &Path,
    gt_normals: Option<&Path>,
    gt_edges: Option<&Path>,
    seed: u64,
) -> Result<EvalReport> {
    let entries = load_candidates(dir)?;
    let truth = GroundTruth {
        image: load_png(gt).with_context(|| format!("loading ground truth {}", gt.display()))?,
        normals: gt_normals.map(NormalMap::load).transpose()?,
        edges: gt_edges
            .map(|p| EdgeScores::load(p).map(|e| e.to_labels()))
            .transpose()?,
    };
    Ok(evaluate_candidates(&entries, &truth, seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_names() {
        assert_eq!(parse_candidate_name("cand_K10_T96.png"), Some((10, 96)));
        assert_eq!(parse_candidate_name("cand_K1_T3.normals.png"), None);
        assert_eq!(parse_candidate_name("cand_K1_T3.pxnc"), None);
        assert_eq!(parse_candidate_name("manifest.json"), None);
    }
}
