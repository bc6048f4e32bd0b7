//! Straight-line reference implementations used to check the library.
//!
//! Everything here works on plain `Vec<f64>` rows with naive summation and
//! full sorts, sharing no code with the crate beyond reading embeddings.

#![allow(dead_code)]

use cknn_core::embedstore::{EmbeddingSet, PairedCorpus};

pub fn rows_f64(set: &EmbeddingSet) -> Vec<Vec<f64>> {
    (0..set.len()).map(|r| set.row(r).iter().map(|&v| v as f64).collect()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    (1.0 - dot(a, b) / (norm(a) * norm(b))).clamp(0.0, 2.0)
}

/// All rows sorted by (distance, index), truncated to `k`.
pub fn brute_top_k(rows: &[Vec<f64>], query: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> =
        rows.iter().enumerate().map(|(i, r)| (i, cosine_distance(query, r))).collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn mean(rows: &[&Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r.iter()) {
            *o += v;
        }
    }
    out.iter().map(|v| v / rows.len() as f64).collect()
}

/// Brute-force cross-modal kNN on a plain copy of a training corpus.
pub struct BruteCkNN {
    pub images: Vec<Vec<f64>>,
    pub texts: Vec<Vec<f64>>,
    pub image_text: Vec<usize>,
    pub alpha: f64,
    pub k_t: usize,
    pub k_i: usize,
    pub restrict_to_paired: bool,
}

impl BruteCkNN {
    pub fn new(train: &PairedCorpus, alpha: f64, k_t: usize, k_i: usize, restrict_to_paired: bool) -> Self {
        Self {
            images: rows_f64(train.images()),
            texts: rows_f64(train.texts()),
            image_text: (0..train.images().len()).map(|i| train.text_of_image(i)).collect(),
            alpha,
            k_t,
            k_i,
            restrict_to_paired,
        }
    }

    /// Mean of all images paired with the `k_t` nearest (eligible) training texts.
    pub fn image_repr(&self, text: &[f64]) -> Option<Vec<f64>> {
        let mut cands: Vec<(usize, f64)> = Vec::new();
        for (t, row) in self.texts.iter().enumerate() {
            let has_image = self.image_text.contains(&t);
            if self.restrict_to_paired && !has_image {
                continue;
            }
            cands.push((t, cosine_distance(text, row)));
        }
        cands.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        let mut picked: Vec<&Vec<f64>> = Vec::new();
        for &(t, _) in cands.iter().take(self.k_t) {
            for (i, &owner) in self.image_text.iter().enumerate() {
                if owner == t {
                    picked.push(&self.images[i]);
                }
            }
        }
        if picked.is_empty() {
            None
        } else {
            Some(mean(&picked))
        }
    }

    /// Mean of the texts of the `k_i` nearest training images (one term per image).
    pub fn text_repr(&self, image: &[f64]) -> Vec<f64> {
        let near = brute_top_k(&self.images, image, self.k_i);
        let picked: Vec<&Vec<f64>> = near.iter().map(|&(i, _)| &self.texts[self.image_text[i]]).collect();
        mean(&picked)
    }

    pub fn distance(&self, image: &[f64], text: &[f64]) -> f64 {
        let ci = self.image_repr(text).expect("a paired neighbour");
        let ct = self.text_repr(image);
        self.alpha * cosine_distance(image, &ci) + (1.0 - self.alpha) * cosine_distance(&ct, text)
    }
}

/// Candidate order for one query: indices sorted by (distance, index).
pub fn brute_order(distances: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..distances.len()).collect();
    idx.sort_by(|&a, &b| distances[a].partial_cmp(&distances[b]).unwrap().then(a.cmp(&b)));
    idx
}

/// Rank via a full sort: position of `true_index` in the sorted order, 1-based.
pub fn brute_rank(distances: &[f64], true_index: usize) -> usize {
    brute_order(distances).iter().position(|&i| i == true_index).unwrap() + 1
}

/// Median by sorting a float copy; even counts average the middle pair.
pub fn brute_median(ranks: &[usize]) -> f64 {
    let mut v: Vec<f64> = ranks.iter().map(|&r| r as f64).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn brute_recall(ranks: &[usize], k: usize) -> f64 {
    let mut hits = 0.0;
    for &r in ranks {
        if r <= k {
            hits += 1.0;
        }
    }
    hits * 100.0 / ranks.len() as f64
}

/// Image-to-text pool protocol over `corpus` with a brute-force CkNN, pools
/// given explicitly as text rows. Returns the mean R@1 over pools.
pub fn brute_cknn_pool_r1(brute: &BruteCkNN, corpus: &PairedCorpus, pools: &[Vec<usize>]) -> f64 {
    let images = rows_f64(corpus.images());
    let texts = rows_f64(corpus.texts());
    let text_reprs: Vec<Vec<f64>> = texts.iter().map(|t| brute.image_repr(t).unwrap()).collect();
    let image_reprs: Vec<Vec<f64>> = images.iter().map(|i| brute.text_repr(i)).collect();
    let mut total = 0.0;
    for pool in pools {
        let mut ranks = Vec::new();
        for (pos, &t) in pool.iter().enumerate() {
            for &i in corpus.images_of_text(t) {
                let d: Vec<f64> = pool
                    .iter()
                    .map(|&c| {
                        brute.alpha * cosine_distance(&images[i], &text_reprs[c])
                            + (1.0 - brute.alpha) * cosine_distance(&image_reprs[i], &texts[c])
                    })
                    .collect();
                ranks.push(brute_rank(&d, pos));
            }
        }
        total += brute_recall(&ranks, 1);
    }
    total / pools.len() as f64
}
