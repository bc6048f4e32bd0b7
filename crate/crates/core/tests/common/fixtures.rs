//! Seeded random inputs shared by the integration and acceptance tests.

#![allow(dead_code)]

use cknn_core::embedstore::{join_corpus, EmbeddingSet, PairedCorpus};
use rand::Rng;

pub fn random_set(rng: &mut impl Rng, n: usize, d: usize) -> EmbeddingSet {
    let ids = (0..n).map(|i| format!("r{i}")).collect();
    let data = (0..n * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    EmbeddingSet::new(ids, d, data).unwrap()
}

/// `n_texts` texts, each with 0 to 3 images; text 0 always has one.
pub fn random_corpus(rng: &mut impl Rng, n_texts: usize, di: usize, dt: usize, prefix: &str) -> PairedCorpus {
    let mut image_ids = Vec::new();
    let mut images = Vec::new();
    let mut pairs = Vec::new();
    for t in 0..n_texts {
        let k = if t == 0 { 1 } else { rng.random_range(0..=3) };
        for j in 0..k {
            let id = format!("{prefix}i{t}_{j}");
            image_ids.push(id.clone());
            images.extend((0..di).map(|_| rng.random_range(-1.0f32..1.0)));
            pairs.push((id, format!("{prefix}t{t}")));
        }
    }
    let texts: Vec<f32> = (0..n_texts * dt).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let text_ids = (0..n_texts).map(|t| format!("{prefix}t{t}")).collect();
    join_corpus(
        EmbeddingSet::new(image_ids, di, images).unwrap(),
        EmbeddingSet::new(text_ids, dt, texts).unwrap(),
        &pairs,
    )
    .unwrap()
}
