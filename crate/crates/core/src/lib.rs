//! Landmark retrieval over precomputed embeddings: catalog handling,
//! epoch samplers, exact cosine search, k-reciprocal and landmark/country
//! tag re-ranking, and mAP@100 evaluation.

// `!(x > y)` is used on purpose so that NaN lands on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod catalog;
pub mod cli;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod feature_ops;
pub mod manifest;
pub mod rerank;
pub mod retrieval;
pub mod rng;
pub mod sampler;
pub mod synth;

pub use error::{Error, Result};

use std::io::Write;
use std::path::Path;

/// Writes one line per item, each terminated by `\n`.
pub(crate) fn write_lines<'a>(path: &Path, lines: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for l in lines {
        writeln!(w, "{l}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
