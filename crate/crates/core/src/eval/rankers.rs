//! Scoring back-ends for the evaluation protocols.

use std::collections::HashSet;

use crate::cknn::{CkNNModel, Represented};
use crate::embedstore::EmbeddingSet;
use crate::triplet::{project, TripletModel};
use crate::vecmath::{cosine_distance_from_dot, dot_f32};
use crate::{Error, Modality, Result};

/// Anything that scores (query, candidate) pairs across modalities.
///
/// Whole embedding sets are prepared once; the protocols then ask for
/// distances between prepared rows. Smaller distances rank first.
pub trait Ranker: Sync {
    type Prepared: Sync;

    fn prepare(&self, set: &EmbeddingSet, modality: Modality) -> Result<Self::Prepared>;

    /// Distance from row `q` of `queries` to row `c` of `candidates`.
    fn distance(&self, queries: &Self::Prepared, q: usize, candidates: &Self::Prepared, c: usize) -> f64;

    /// Rejects prepared image and text sets that cannot be compared.
    fn check_compatible(&self, _images: &Self::Prepared, _texts: &Self::Prepared) -> Result<()> {
        Ok(())
    }

    /// Ids of the data the ranker was built from, for the train/test overlap check.
    fn training_ids(&self) -> HashSet<&str> {
        HashSet::new()
    }
}

/// Prepared CkNN rows together with their modality.
pub struct CkNNPrepared {
    rows: Vec<Represented>,
    modality: Modality,
}

impl Ranker for CkNNModel {
    type Prepared = CkNNPrepared;

    fn prepare(&self, set: &EmbeddingSet, modality: Modality) -> Result<CkNNPrepared> {
        Ok(CkNNPrepared { rows: self.prepare_candidates(set, modality)?, modality })
    }

    fn distance(&self, queries: &CkNNPrepared, q: usize, candidates: &CkNNPrepared, c: usize) -> f64 {
        let (q, c) = (&queries.rows[q], &candidates.rows[c]);
        match queries.modality {
            Modality::Image => self.combined(q, c),
            Modality::Text => self.combined(c, q),
        }
    }

    fn training_ids(&self) -> HashSet<&str> {
        let train = self.train();
        train.images().ids().iter().chain(train.texts().ids()).map(String::as_str).collect()
    }
}

fn set_cosine(a: &EmbeddingSet, i: usize, b: &EmbeddingSet, j: usize) -> f64 {
    cosine_distance_from_dot(dot_f32(a.row(i), b.row(j)), a.norm(i), b.norm(j))
}

/// Plain cosine distance; both modalities must already share one space.
#[derive(Debug, Clone, Copy, Default)]
pub struct DirectRanker;

impl Ranker for DirectRanker {
    type Prepared = EmbeddingSet;

    fn prepare(&self, set: &EmbeddingSet, _: Modality) -> Result<EmbeddingSet> {
        Ok(set.clone())
    }

    fn distance(&self, queries: &EmbeddingSet, q: usize, candidates: &EmbeddingSet, c: usize) -> f64 {
        set_cosine(queries, q, candidates, c)
    }

    fn check_compatible(&self, images: &EmbeddingSet, texts: &EmbeddingSet) -> Result<()> {
        if images.dim() != texts.dim() {
            return Err(Error::DimensionMismatch { expected: images.dim(), found: texts.dim() });
        }
        Ok(())
    }
}

/// Cosine distance after projecting both modalities with a trained triplet head.
#[derive(Debug, Clone)]
pub struct TripletRanker<'a> {
    model: &'a TripletModel,
}

impl<'a> TripletRanker<'a> {
    pub fn new(model: &'a TripletModel) -> Self {
        Self { model }
    }
}

impl Ranker for TripletRanker<'_> {
    type Prepared = EmbeddingSet;

    fn prepare(&self, set: &EmbeddingSet, modality: Modality) -> Result<EmbeddingSet> {
        project(self.model, set, modality)
    }

    fn distance(&self, queries: &EmbeddingSet, q: usize, candidates: &EmbeddingSet, c: usize) -> f64 {
        set_cosine(queries, q, candidates, c)
    }
}

/// Pseudo-random distances keyed by `(seed, query id, candidate id)`.
#[derive(Debug, Clone, Copy)]
pub struct RandomRanker {
    pub seed: u64,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_id(seed: u64, id: &str) -> u64 {
    // FNV-1a over the bytes, then a final avalanche.
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(h)
}

impl Ranker for RandomRanker {
    type Prepared = Vec<u64>;

    fn prepare(&self, set: &EmbeddingSet, _: Modality) -> Result<Vec<u64>> {
        Ok(set.ids().iter().map(|id| hash_id(self.seed, id)).collect())
    }

    fn distance(&self, queries: &Vec<u64>, q: usize, candidates: &Vec<u64>, c: usize) -> f64 {
        let h = mix(queries[q] ^ mix(candidates[c]));
        (h >> 11) as f64 / (1u64 << 53) as f64
    }
}
