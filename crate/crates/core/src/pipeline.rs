//! End-to-end synthesis requests shared by the command line and the service.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::db::{ExemplarDatabase, ExemplarId, Selector};
use crate::descriptor::{compute_field, DescriptorField};
use crate::error::{Error, Result};
use crate::image::{encode_png, psnr, ImageRGB, LowFreqImage, Provenance};
use crate::synthesis::{
    generate_candidates, select, stage1, Candidate, SelectPolicy, Stage1Input, Stage1Mode,
};

pub const DEFAULT_KS: [usize; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];
pub const DEFAULT_TS: [usize; 5] = [1, 3, 5, 10, 96];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage1Kind {
    #[default]
    BicubicSr,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    #[default]
    All,
    Oracle,
    Random,
}

/// Synthesis parameters, minus the input image itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisRequest {
    pub stage1: Stage1Kind,
    /// Restrict to these exemplar ids.
    pub ids: Option<Vec<ExemplarId>>,
    /// Restrict to exemplars carrying any of these tags.
    pub tags: Option<Vec<String>>,
    pub ks: Vec<usize>,
    pub ts: Vec<usize>,
    pub seed: u64,
    pub select: Selection,
}

impl Default for SynthesisRequest {
    fn default() -> Self {
        Self {
            stage1: Stage1Kind::BicubicSr,
            ids: None,
            tags: None,
            ks: DEFAULT_KS.to_vec(),
            ts: DEFAULT_TS.to_vec(),
            seed: 0,
            select: Selection::All,
        }
    }
}

impl SynthesisRequest {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ts.is_empty() {
            return Err(Error::InvalidConfig(
                "K and T lists must be non-empty".into(),
            ));
        }
        if self.ks.contains(&0) || self.ts.contains(&0) {
            return Err(Error::InvalidConfig(
                "K and T values must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// The exemplar subset this request runs against.
    pub fn resolve<'a>(
        &self,
        db: &'a ExemplarDatabase,
    ) -> Result<std::borrow::Cow<'a, ExemplarDatabase>> {
        let mut current = std::borrow::Cow::Borrowed(db);
        if let Some(ids) = &self.ids {
            current = std::borrow::Cow::Owned(current.subset(&Selector::Ids(ids.clone()))?);
        }
        if let Some(tags) = &self.tags {
            current = std::borrow::Cow::Owned(current.subset(&Selector::Tags(tags.clone()))?);
        }
        Ok(current)
    }
}

/// Everything a finished request produced.
#[derive(Debug, Clone)]
pub struct SynthesisOutcome {
    pub request: SynthesisRequest,
    pub smoothed: LowFreqImage,
    pub exemplar_ids: Vec<ExemplarId>,
    pub candidates: Vec<Candidate>,
    /// Indices into `candidates` that the selection keeps.
    pub selected: Vec<usize>,
    /// PSNR of each candidate when ground truth was supplied.
    pub psnr: Option<Vec<f64>>,
}

fn psnr_json(p: f64) -> Value {
    if p.is_finite() {
        json!(p)
    } else {
        json!("inf")
    }
}

pub fn candidate_stem(c: &Candidate) -> String {
    format!("cand_K{}_T{}", c.config.k_global, c.config.window)
}

/// Runs stage 1, the candidate grid and the selection policy.
///
/// `query_field` is required for databases built from external descriptor
/// fields; otherwise the field is computed from the smoothed image.
pub fn run(
    db: &ExemplarDatabase,
    request: &SynthesisRequest,
    input: &ImageRGB,
    query_field: Option<DescriptorField>,
    ground_truth: Option<&ImageRGB>,
) -> Result<SynthesisOutcome> {
    request.validate()?;
    let sub = request.resolve(db)?;
    if request.select == Selection::Oracle && ground_truth.is_none() {
        return Err(Error::MissingGroundTruth);
    }
    let (width, height) = sub.image_size();
    let mode = match request.stage1 {
        Stage1Kind::BicubicSr => Stage1Mode::BicubicSr { width, height },
        Stage1Kind::External => Stage1Mode::External { width, height },
    };
    let smoothed = stage1(Stage1Input::Image(input), mode)?;
    let field = match (query_field, sub.descriptor_config()) {
        (Some(f), _) => f,
        (None, Some(cfg)) => compute_field(&smoothed, cfg)?,
        (None, None) => {
            return Err(Error::InvalidConfig(
                "database uses external descriptors; supply the query descriptor field".into(),
            ))
        }
    };
    let candidates = generate_candidates(&smoothed, &field, &sub, &request.ks, &request.ts)?;
    let psnr = ground_truth
        .map(|gt| {
            candidates
                .iter()
                .map(|c| psnr(&c.image, gt))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let pick = |policy: SelectPolicy<'_>| -> Result<usize> {
        let chosen = select(&candidates, ground_truth, &policy)?;
        Ok(candidates
            .iter()
            .position(|c| std::ptr::eq(c, chosen))
            .expect("chosen from list"))
    };
    let selected = match request.select {
        Selection::All => (0..candidates.len()).collect(),
        Selection::Oracle => vec![pick(SelectPolicy::OraclePsnr)?],
        Selection::Random => vec![pick(SelectPolicy::Random { seed: request.seed })?],
    };
    Ok(SynthesisOutcome {
        request: request.clone(),
        smoothed,
        exemplar_ids: sub.ids(),
        candidates,
        selected,
        psnr,
    })
}

impl SynthesisOutcome {
    pub fn selected_candidates(&self) -> impl Iterator<Item = &Candidate> + '_ {
        self.selected.iter().map(|&i| &self.candidates[i])
    }

    /// Request echo plus one entry per emitted candidate.
    pub fn manifest(&self) -> Value {
        let entries: Vec<Value> = self
            .selected
            .iter()
            .map(|&i| {
                let c = &self.candidates[i];
                let stem = candidate_stem(c);
                let mut v = json!({
                    "k": c.config.k_global,
                    "t": c.config.window,
                    "image": format!("{stem}.png"),
                    "correspondence": format!("{stem}.pxnc"),
                    "clamped_pixel_count": c.clamped_pixel_count,
                    "exemplars_used": c.correspondence.exemplar_ids().len(),
                });
                if let Some(p) = &self.psnr {
                    v["psnr"] = psnr_json(p[i]);
                }
                v
            })
            .collect();
        let (w, h) = self.smoothed.dimensions();
        json!({
            "request": self.request,
            "width": w,
            "height": h,
            "stage1_provenance": match self.smoothed.provenance() {
                Provenance::Bicubic => "bicubic",
                Provenance::ExternalFile => "external-file",
            },
            "exemplar_ids": self.exemplar_ids,
            "candidate_count": self.candidates.len(),
            "candidates": entries,
        })
    }

    /// `(file name, bytes)` for every emitted image and correspondence file.
    pub fn files(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let mut out = Vec::with_capacity(self.selected.len() * 2);
        for c in self.selected_candidates() {
            let stem = candidate_stem(c);
            out.push((format!("{stem}.png"), encode_png(&c.image)?));
            out.push((format!("{stem}.pxnc"), c.correspondence.to_bytes()));
        }
        Ok(out)
    }

    /// Writes the emitted files and `manifest.json` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, bytes) in self.files()? {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        }
        let p = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
    }
}
