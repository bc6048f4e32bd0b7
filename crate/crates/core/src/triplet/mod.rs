//! Triplet-loss alignment head.
//!
//! Two projection towers map precomputed image and text embeddings into a
//! shared space. Training minimises the batch mean of
//! `max(0, d(g_i(x_img), g_t(x_txt)) - d(g_i(x_img), g_t(x_neg)) + margin)`
//! where `x_neg` is the in-batch text (of a different recipe) closest to the
//! anchor, and `d` is cosine distance.

pub mod checkpoint;
pub mod loss;
pub mod tower;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embedstore::{EmbeddingSet, PairedCorpus};
use crate::optim::Adam;
use crate::{Error, Modality, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use loss::{batch_triplet_loss, mine_hard_negative, triplet_loss, BatchLoss};
pub use tower::{tower_forward, Mode, TowerGrads, TowerParams};

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;
const PROJECT_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct TripletConfig {
    pub margin: f64,
    pub output_dim: usize,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Even epochs update the image tower, odd epochs the text tower.
    pub alternating: bool,
    /// Use texts as anchors and mine negatives among images.
    pub text_anchor: bool,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            margin: 0.3,
            output_dim: 1024,
            hidden_dim: 1024,
            dropout_rate: 0.3,
            batch_size: 256,
            learning_rate: 0.002,
            epochs: 30,
            seed: 7,
            alternating: true,
            text_anchor: false,
        }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad("margin must be a finite non-negative number");
        }
        if self.output_dim == 0 || self.hidden_dim == 0 {
            return bad("output and hidden dimensions must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout rate must lie in [0, 1)");
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletModel {
    pub image_tower: TowerParams,
    pub text_tower: TowerParams,
    pub config: TripletConfig,
    pub trained_epochs: usize,
}

impl TripletModel {
    /// Seeded initialisation for the given input dimensions.
    pub fn init(image_dim: usize, text_dim: usize, config: TripletConfig) -> Result<Self> {
        config.validate()?;
        if image_dim == 0 || text_dim == 0 {
            return Err(Error::InvalidConfig("input dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(INIT_STREAM);
        let image_tower = TowerParams::init(image_dim, config.hidden_dim, config.output_dim, &mut rng);
        let text_tower = TowerParams::init(text_dim, config.hidden_dim, config.output_dim, &mut rng);
        Ok(Self { image_tower, text_tower, config, trained_epochs: 0 })
    }

    pub fn tower(&self, modality: Modality) -> &TowerParams {
        match modality {
            Modality::Image => &self.image_tower,
            Modality::Text => &self.text_tower,
        }
    }

    /// Checks that tower shapes agree with each other and with the config.
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("image", &self.image_tower), ("text", &self.text_tower)] {
            t.validate()?;
            if t.hidden_dim() != self.config.hidden_dim || t.output_dim() != self.config.output_dim {
                return Err(Error::ShapeMismatch(format!(
                    "{name} tower is {}->{}->{}, config says hidden {} output {}",
                    t.input_dim(),
                    t.hidden_dim(),
                    t.output_dim(),
                    self.config.hidden_dim,
                    self.config.output_dim
                )));
            }
        }
        Ok(())
    }
}

/// A trained model with the mean training loss of every epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TripletModel,
    pub loss_trace: Vec<f64>,
}

/// Gradients of the batch loss for both towers (dropout disabled).
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub negatives: Vec<Option<usize>>,
    pub image: TowerGrads,
    pub text: TowerGrads,
}

fn gather(set: &EmbeddingSet, rows: impl ExactSizeIterator<Item = usize>) -> Array2<f64> {
    let n = rows.len();
    let mut out = Array2::zeros((n, set.dim()));
    for (r, src) in rows.enumerate() {
        for (dst, v) in out.row_mut(r).iter_mut().zip(set.row(src)) {
            *dst = *v as f64;
        }
    }
    out
}

/// Train-mode loss and gradients for one batch of `(image, text)` rows.
///
/// `text_ids[r]` identifies the recipe of row `r`; when `negatives` is given
/// it replaces mining, so the loss can be re-evaluated with a fixed selection.
pub fn batch_gradients(
    model: &TripletModel,
    images: ArrayView2<f64>,
    texts: ArrayView2<f64>,
    text_ids: &[usize],
    negatives: Option<&[Option<usize>]>,
) -> Result<BatchGradients> {
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let (img_out, img_cache) = model.image_tower.forward_train(images, 0.0, &mut unused)?;
    let (txt_out, txt_cache) = model.text_tower.forward_train(texts, 0.0, &mut unused)?;
    let (anchors, candidates) = if model.config.text_anchor {
        (txt_out.view(), img_out.view())
    } else {
        (img_out.view(), txt_out.view())
    };
    let bl = batch_triplet_loss(anchors, candidates, text_ids, model.config.margin, negatives)?;
    let (d_img, d_txt) = if model.config.text_anchor {
        (&bl.d_candidate, &bl.d_anchor)
    } else {
        (&bl.d_anchor, &bl.d_candidate)
    };
    Ok(BatchGradients {
        loss: bl.loss,
        image: model.image_tower.backward(&img_cache, d_img.view()),
        text: model.text_tower.backward(&txt_cache, d_txt.view()),
        negatives: bl.negatives,
    })
}

/// Initialises a model from `config.seed` and trains it on `corpus`.
pub fn train_triplet(corpus: &PairedCorpus, config: &TripletConfig) -> Result<TrainOutcome> {
    let model = TripletModel::init(corpus.images().dim(), corpus.texts().dim(), config.clone())?;
    train_from(model, corpus)
}

/// Runs `model.config.epochs` further epochs starting from `model`.
pub fn train_from(mut model: TripletModel, corpus: &PairedCorpus) -> Result<TrainOutcome> {
    let config = model.config.clone();
    config.validate()?;
    model.validate()?;
    if model.image_tower.input_dim() != corpus.images().dim()
        || model.text_tower.input_dim() != corpus.texts().dim()
    {
        return Err(Error::DimensionMismatch {
            expected: model.image_tower.input_dim(),
            found: corpus.images().dim(),
        });
    }
    let n_pairs = corpus.images().len();
    if n_pairs < config.batch_size {
        return Err(Error::InvalidConfig(format!(
            "corpus has {n_pairs} pairs, fewer than the batch size {}",
            config.batch_size
        )));
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(DROPOUT_STREAM);
    let mut adam_image = Adam::new(&model.image_tower.trainable_sizes(), config.learning_rate);
    let mut adam_text = Adam::new(&model.text_tower.trainable_sizes(), config.learning_rate);

    let mut order: Vec<usize> = (0..n_pairs).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let epoch = model.trained_epochs;
        let (update_image, update_text) = if config.alternating {
            (epoch.is_multiple_of(2), !epoch.is_multiple_of(2))
        } else {
            (true, true)
        };
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        // The trailing partial batch is dropped.
        for (batch_idx, batch) in order.chunks_exact(config.batch_size).enumerate() {
            let x_img = gather(corpus.images(), batch.iter().copied());
            let text_rows: Vec<usize> = batch.iter().map(|&i| corpus.text_of_image(i)).collect();
            let x_txt = gather(corpus.texts(), text_rows.iter().copied());

            let (img_out, img_cache) =
                model.image_tower.forward_train(x_img.view(), config.dropout_rate, &mut dropout_rng)?;
            let (txt_out, txt_cache) =
                model.text_tower.forward_train(x_txt.view(), config.dropout_rate, &mut dropout_rng)?;
            let (anchors, candidates) = if config.text_anchor {
                (txt_out.view(), img_out.view())
            } else {
                (img_out.view(), txt_out.view())
            };
            let bl = batch_triplet_loss(anchors, candidates, &text_rows, config.margin, None)
                .map_err(|e| Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    detail: e.to_string(),
                })?;
            if !bl.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    detail: format!("batch loss {}", bl.loss),
                });
            }
            let (d_img, d_txt) = if config.text_anchor {
                (&bl.d_candidate, &bl.d_anchor)
            } else {
                (&bl.d_anchor, &bl.d_candidate)
            };
            if update_image {
                let g = model.image_tower.backward(&img_cache, d_img.view());
                adam_image.step(model.image_tower.trainable_mut(), g.slices());
                model.image_tower.update_running_stats(&img_cache);
            }
            if update_text {
                let g = model.text_tower.backward(&txt_cache, d_txt.view());
                adam_text.step(model.text_tower.trainable_mut(), g.slices());
                model.text_tower.update_running_stats(&txt_cache);
            }
            epoch_loss += bl.loss;
            batches += 1;
        }
        let mean = epoch_loss / batches as f64;
        log::debug!("epoch {epoch}: mean triplet loss {mean:.6}");
        loss_trace.push(mean);
        model.trained_epochs += 1;
    }
    Ok(TrainOutcome { model, loss_trace })
}

/// Eval-mode projection of every row of `set` into the shared space.
pub fn project(model: &TripletModel, set: &EmbeddingSet, modality: Modality) -> Result<EmbeddingSet> {
    let tower = model.tower(modality);
    if set.dim() != tower.input_dim() {
        return Err(Error::DimensionMismatch { expected: tower.input_dim(), found: set.dim() });
    }
    let rows: Vec<usize> = (0..set.len()).collect();
    let chunks: Vec<Vec<f32>> = rows
        .par_chunks(PROJECT_CHUNK)
        .map(|chunk| {
            let x = gather(set, chunk.iter().copied());
            let out = tower.forward_eval(x.view())?;
            let mut flat = Vec::with_capacity(out.len());
            for (r, row) in out.rows().into_iter().enumerate() {
                let start = flat.len();
                flat.extend(row.iter().map(|&v| v as f32));
                if flat[start..].iter().all(|&v| v == 0.0) {
                    return Err(Error::ZeroNormOutput { id: set.id(chunk[r]).to_string() });
                }
            }
            Ok(flat)
        })
        .collect::<Result<_>>()?;
    EmbeddingSet::new(set.ids().to_vec(), tower.output_dim(), chunks.concat())
}
