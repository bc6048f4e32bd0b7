//! Cross-modal k-nearest-neighbour alignment.
//!
//! A text is carried into image space by averaging the images paired with its
//! `k_t` nearest training texts; an image is carried into text space by
//! averaging the texts paired with its `k_i` nearest training images. An
//! image/text pair is then scored by
//!
//! ```text
//! d(I, T) = alpha * d_img(e_i(I), img_repr(T)) + (1 - alpha) * d_txt(txt_repr(I), e_t(T))
//! ```
//!
//! with cosine distance in both spaces. The model holds no learned state.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::embedstore::{EmbeddingSet, PairedCorpus};
use crate::knn::{self, select_top_k, NeighborList};
use crate::vecmath::{cosine_distance_from_dot, dot_f64, norm_f64, to_f64};
use crate::{Error, Modality, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CkNNConfig {
    /// Weight of the image-space term.
    pub alpha: f64,
    /// Text neighbours used to build an image-space representation.
    pub k_t: usize,
    /// Image neighbours used to build a text-space representation.
    pub k_i: usize,
    /// Search text neighbours among texts that have at least one image.
    pub restrict_to_paired: bool,
}

impl Default for CkNNConfig {
    fn default() -> Self {
        Self { alpha: 0.1, k_t: 15, k_i: 3, restrict_to_paired: true }
    }
}

impl CkNNConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.k_t == 0 || self.k_i == 0 {
            return Err(Error::InvalidConfig("k_t and k_i must be at least 1".into()));
        }
        Ok(())
    }
}

/// A vector in its own space together with its transfer into the other space.
#[derive(Debug, Clone, PartialEq)]
pub struct Represented {
    native: Vec<f64>,
    native_norm: f64,
    transferred: Vec<f64>,
    transferred_norm: f64,
}

impl Represented {
    fn new(native: Vec<f64>, transferred: Vec<f64>) -> Result<Self> {
        let native_norm = norm_f64(&native);
        let transferred_norm = norm_f64(&transferred);
        if native_norm <= 0.0 || transferred_norm <= 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(Self { native, native_norm, transferred, transferred_norm })
    }

    pub fn native(&self) -> &[f64] {
        &self.native
    }

    pub fn transferred(&self) -> &[f64] {
        &self.transferred
    }
}

#[derive(Debug, Clone)]
pub struct CkNNModel {
    train: PairedCorpus,
    config: CkNNConfig,
    /// Texts searched for neighbours, and their rows in `train.texts()`.
    text_search: EmbeddingSet,
    text_search_rows: Vec<usize>,
    exclude: Option<HashSet<String>>,
}

impl CkNNModel {
    pub fn new(train: PairedCorpus, config: CkNNConfig) -> Result<Self> {
        config.validate()?;
        let text_search_rows = if config.restrict_to_paired {
            train.paired_texts()
        } else {
            (0..train.texts().len()).collect()
        };
        if text_search_rows.is_empty() {
            return Err(Error::EmptySearchSet);
        }
        let text_search = train.texts().subset(&text_search_rows);
        Ok(Self { train, config, text_search, text_search_rows, exclude: None })
    }

    /// Ids (image or text) never returned as neighbours.
    pub fn with_exclusions(mut self, ids: HashSet<String>) -> Self {
        self.exclude = if ids.is_empty() { None } else { Some(ids) };
        self
    }

    pub fn config(&self) -> &CkNNConfig {
        &self.config
    }

    pub fn train(&self) -> &PairedCorpus {
        &self.train
    }

    /// Mean embedding of the images paired with the `k_t` nearest training texts.
    pub fn image_repr(&self, text_embedding: &[f32]) -> Result<Vec<f64>> {
        let neighbours =
            knn::top_k(&self.text_search, text_embedding, self.config.k_t, self.exclude.as_ref())?;
        let images = self.train.images();
        let mut sum = vec![0.0f64; images.dim()];
        let mut count = 0usize;
        for n in &neighbours.entries {
            let text = self.text_search_rows[n.index];
            for &i in self.train.images_of_text(text) {
                for (s, v) in sum.iter_mut().zip(images.row(i)) {
                    *s += *v as f64;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::NoPairedNeighbours);
        }
        let inv = count as f64;
        sum.iter_mut().for_each(|s| *s /= inv);
        Ok(sum)
    }

    /// Mean embedding of the texts paired with the `k_i` nearest training
    /// images; a text paired with several neighbour images counts once per image.
    pub fn text_repr(&self, image_embedding: &[f32]) -> Result<Vec<f64>> {
        let images = self.train.images();
        if images.is_empty() {
            return Err(Error::EmptyTrainingImages);
        }
        let neighbours =
            knn::top_k(images, image_embedding, self.config.k_i, self.exclude.as_ref())?;
        let texts = self.train.texts();
        let mut sum = vec![0.0f64; texts.dim()];
        for n in &neighbours.entries {
            let t = self.train.text_of_image(n.index);
            for (s, v) in sum.iter_mut().zip(texts.row(t)) {
                *s += *v as f64;
            }
        }
        let inv = neighbours.len() as f64;
        sum.iter_mut().for_each(|s| *s /= inv);
        Ok(sum)
    }

    fn check_dim(&self, v: &[f32], modality: Modality) -> Result<()> {
        let expected = match modality {
            Modality::Image => self.train.images().dim(),
            Modality::Text => self.train.texts().dim(),
        };
        if v.len() != expected {
            return Err(Error::DimensionMismatch { expected, found: v.len() });
        }
        Ok(())
    }

    /// Pairs an embedding with its representation in the other space.
    pub fn represent(&self, embedding: &[f32], modality: Modality) -> Result<Represented> {
        self.check_dim(embedding, modality)?;
        let transferred = match modality {
            Modality::Image => self.text_repr(embedding)?,
            Modality::Text => self.image_repr(embedding)?,
        };
        Represented::new(to_f64(embedding), transferred)
    }

    /// `(d_img, d_txt)`: the image-space and text-space terms of the combined distance.
    pub fn distance_terms(&self, image: &Represented, text: &Represented) -> (f64, f64) {
        let d_img = cosine_distance_from_dot(
            dot_f64(&image.native, &text.transferred),
            image.native_norm,
            text.transferred_norm,
        );
        let d_txt = cosine_distance_from_dot(
            dot_f64(&image.transferred, &text.native),
            image.transferred_norm,
            text.native_norm,
        );
        (d_img, d_txt)
    }

    pub fn combined(&self, image: &Represented, text: &Represented) -> f64 {
        let (d_img, d_txt) = self.distance_terms(image, text);
        d_img * self.config.alpha + d_txt * (1.0 - self.config.alpha)
    }

    /// Combined distance between an image and a text embedding.
    pub fn distance(&self, image_embedding: &[f32], text_embedding: &[f32]) -> Result<f64> {
        let image = self.represent(image_embedding, Modality::Image)?;
        let text = self.represent(text_embedding, Modality::Text)?;
        Ok(self.combined(&image, &text))
    }

    /// Represents every row of a candidate set; order is preserved.
    pub fn prepare_candidates(
        &self,
        candidates: &EmbeddingSet,
        modality: Modality,
    ) -> Result<Vec<Represented>> {
        (0..candidates.len())
            .into_par_iter()
            .map(|r| self.represent(candidates.row(r), modality))
            .collect()
    }

    /// Combined distance from a prepared query to each prepared candidate.
    pub fn distances(
        &self,
        query: &Represented,
        query_modality: Modality,
        candidates: &[Represented],
    ) -> Vec<f64> {
        candidates
            .iter()
            .map(|c| match query_modality {
                Modality::Image => self.combined(query, c),
                Modality::Text => self.combined(c, query),
            })
            .collect()
    }

    /// Ranks every candidate (of the other modality) by combined distance.
    pub fn rank(
        &self,
        query: &[f32],
        query_modality: Modality,
        candidates: &EmbeddingSet,
    ) -> Result<NeighborList> {
        if candidates.is_empty() {
            return Err(Error::EmptySearchSet);
        }
        let q = self.represent(query, query_modality)?;
        let prepared = self.prepare_candidates(candidates, query_modality.other())?;
        let scored = self
            .distances(&q, query_modality, &prepared)
            .into_iter()
            .enumerate()
            .map(|(i, d)| (d, i))
            .collect();
        Ok(NeighborList { query_id: None, entries: select_top_k(scored, candidates.len()) })
    }
}
