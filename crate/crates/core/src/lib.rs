//! Cross-modal retrieval over precomputed image and text embeddings.
//!
//! The crate is organised bottom-up:
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`embedstore`] | embedding sets, paired corpora, `EMB1`/TSV file formats |
//! | [`knn`] | exact cosine top-k search, single and batched |
//! | [`cknn`] | cross-modal kNN alignment and its combined distance |
//! | [`triplet`] | projection towers trained with a hard-negative triplet loss |
//! | [`textenc`] | tokenizer, title labels, average word embeddings, TF-IDF + truncated SVD |
//! | [`eval`] | medR / R@K pool protocol, m-way forced choice, encoder grids |
//! | [`synth`] | seeded synthetic paired corpora with known ground truth |
//!
//! Embeddings are stored as `f32`; every distance, mean and statistic is
//! accumulated in `f64`.

pub mod cknn;
pub mod embedstore;
mod error;
pub mod eval;
pub mod knn;
pub mod optim;
pub mod synth;
pub mod textenc;
pub mod triplet;
pub mod vecmath;

pub use error::{Error, Result};

use std::fmt;
use std::str::FromStr;

/// Which embedding space a vector lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn other(self) -> Self {
        match self {
            Modality::Image => Modality::Text,
            Modality::Text => Modality::Image,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Image => f.write_str("image"),
            Modality::Text => f.write_str("text"),
        }
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Modality::Image),
            "text" => Ok(Modality::Text),
            other => Err(Error::InvalidConfig(format!("unknown modality `{other}`"))),
        }
    }
}
