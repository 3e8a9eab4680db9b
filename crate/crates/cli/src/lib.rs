//! Command-line and HTTP front ends for `pixelnn`.

pub mod dataset;
pub mod eval;
pub mod service;

use std::path::Path;

use anyhow::{Context, Result};
use pixelnn::descriptor::load_external_field;
use pixelnn::pipeline::{self, SynthesisOutcome, SynthesisRequest};
use pixelnn::{load_png, ExemplarDatabase};

/// Environment variable capping worker threads; 0 or unset means one per core.
pub const THREADS_ENV: &str = "PIXELNN_THREADS";

/// Sizes the global rayon pool from [`THREADS_ENV`].
pub fn init_threads() -> Result<()> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .with_context(|| format!("{THREADS_ENV} must be a non-negative integer, got {v:?}"))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring thread pool")
}

/// File-based synthesis, as run by `pixelnn synthesize`.
pub fn synthesize_files(
    db: &ExemplarDatabase,
    request: &SynthesisRequest,
    input: &Path,
    query_field: Option<&Path>,
    ground_truth: Option<&Path>,
) -> Result<SynthesisOutcome> {
    let input = load_png(input)?;
    let field = query_field.map(load_external_field).transpose()?;
    let gt = ground_truth.map(load_png).transpose()?;
    Ok(pipeline::run(db, request, &input, field, gt.as_ref())?)
}
