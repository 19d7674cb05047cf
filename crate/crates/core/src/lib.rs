//! Visually congruent ad selection and placement for image search grids.
//!
//! The crate covers the whole path from raw image feature vectors to a
//! rendered result grid:
//!
//! * [`projection`]: PCA, a variance-balancing dimension permutation and L2
//!   normalization.
//! * [`lopq`], [`adc`], [`codes`]: compact codes built from a two-half coarse
//!   quantizer and product-quantized residuals, with asymmetric distances.
//! * [`selection`]: ranking candidate ads against a result set and the
//!   reciprocity acceptance test.
//! * [`tsne`], [`meanshift`]: 2-D embedding of the result set and density
//!   clustering of the embedding.
//! * [`layout`]: the grid positioning strategies and rejection rules.
//! * [`pipeline`], [`synthetic`], [`agreement`], [`render`]: the end-to-end
//!   driver, a synthetic benchmark corpus, the compressed-versus-exact
//!   agreement evaluation and static HTML output.

pub mod adc;
pub mod agreement;
pub mod blob;
pub mod codes;
pub mod error;
pub mod features;
pub mod io;
pub mod kmeans;
pub mod layout;
pub mod lopq;
pub mod meanshift;
pub mod pca;
pub mod permutation;
pub mod pipeline;
pub mod projection;
pub mod render;
pub mod selection;
pub mod synthetic;
pub mod tsne;

pub use error::{Error, Result};
pub use features::{l2_normalize, FeatureSet, FeatureVector};
pub use lopq::{code_size_bits, CompressedCode, LopqConfig, LopqModel};
pub use projection::Projector;

use std::io::Write;
use std::path::Path;

/// Pretty-printed JSON with a trailing newline; output is byte-stable for
/// equal values.
pub fn to_json_string<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(to_json_string(value)?.as_bytes())?;
    f.flush()?;
    Ok(())
}
