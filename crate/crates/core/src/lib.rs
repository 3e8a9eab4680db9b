//! Compositional nearest-neighbor image synthesis.
//!
//! A stage-1 regressor turns an incomplete input into a smoothed image
//! `f(x)`. Each output pixel then copies the high-frequency residual
//! `y - f(x)` of its best-matching pixel among a database of training pairs,
//! searched with per-pixel multiscale descriptors.

mod codec;
pub mod db;
pub mod descriptor;
pub mod error;
pub mod image;
pub mod metrics;
pub mod pipeline;
pub mod resample;
pub mod search;
pub mod spectrum;
pub mod synthesis;
pub mod tensor;

pub use db::{Exemplar, ExemplarDatabase, ExemplarId, ExemplarInput, Selector};
pub use descriptor::{
    compute_field, cosine_distance, DescriptorConfig, DescriptorField, GlobalDescriptor,
};
pub use error::{Error, Result};
pub use image::{decode_png, load_png, psnr, save_png, ImageRGB, LowFreqImage, Provenance};
pub use search::{PixelMatch, SearchConfig};
pub use synthesis::{
    compositional_synthesize, exemplar_synthesize, generate_candidates, Candidate,
    CorrespondenceMap,
};
