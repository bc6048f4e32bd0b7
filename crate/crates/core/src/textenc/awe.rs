//! Average word embeddings and their self-supervised trainer.
//!
//! The trainer learns a token embedding table by mean-pooling a document's
//! token vectors and predicting the document's title labels through a
//! linear layer with sigmoid outputs (multi-label binary cross-entropy).
//! Only the table is kept after training.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::Doc;
use crate::embedstore::EmbeddingSet;
use crate::optim::Adam;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OovPolicy {
    /// Ignore unknown tokens; fail only when none remain.
    #[default]
    Skip,
    /// Fail on the first unknown token.
    Error,
}

/// Token vectors of one shared dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabEmbeddings {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    data: Vec<f32>,
    pub oov_policy: OovPolicy,
}

impl VocabEmbeddings {
    pub fn new(tokens: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::MalformedHeader("dimension must be positive".into()));
        }
        if data.len() != tokens.len() * dim {
            return Err(Error::MalformedHeader(format!(
                "{} tokens with dimension {dim} need {} values, got {}",
                tokens.len(),
                tokens.len() * dim,
                data.len()
            )));
        }
        if let Some(p) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: p / dim, col: p % dim });
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (row, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), row).is_some() {
                return Err(Error::DuplicateId { row, id: t.clone() });
            }
        }
        Ok(Self { tokens, index, dim, data, oov_policy: OovPolicy::Skip })
    }

    pub fn with_oov_policy(mut self, policy: OovPolicy) -> Self {
        self.oov_policy = policy;
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.index.get(token).map(|&r| &self.data[r * self.dim..(r + 1) * self.dim])
    }

    /// Writes the `count dim` header line followed by `token v1 ... vdim` lines.
    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{} {}", self.tokens.len(), self.dim)?;
        for (r, t) in self.tokens.iter().enumerate() {
            write!(w, "{t}")?;
            for v in &self.data[r * self.dim..(r + 1) * self.dim] {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::MalformedHeader("empty vector file".into()))??;
        let mut parts = header.split_whitespace();
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::MalformedHeader(format!("expected `count dim`, got `{header}`")))
        };
        let count = parse(parts.next())?;
        let dim = parse(parts.next())?;
        let mut tokens = Vec::with_capacity(count.min(1 << 20));
        let mut data = Vec::with_capacity(count.min(1 << 20) * dim);
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().expect("non-empty line");
            let before = data.len();
            for f in fields {
                let v: f32 = f.parse().map_err(|_| Error::MalformedRow {
                    row,
                    detail: format!("cannot parse `{f}` as a number"),
                })?;
                data.push(v);
            }
            if data.len() - before != dim {
                return Err(Error::RowDimension { row, expected: dim, found: data.len() - before });
            }
            tokens.push(token.to_string());
        }
        if tokens.len() != count {
            return Err(Error::MalformedHeader(format!(
                "header declares {count} vectors, file has {}",
                tokens.len()
            )));
        }
        Self::new(tokens, dim, data)
    }

    pub fn load_text(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_text(BufReader::new(File::open(path)?))
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_text(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Unweighted mean of the document's token vectors.
pub fn awe_encode(vocab: &VocabEmbeddings, doc: &[String]) -> Result<Vec<f32>> {
    let mut sum = vec![0.0f64; vocab.dim];
    let mut n = 0usize;
    for token in doc {
        match vocab.get(token) {
            Some(v) => {
                for (s, &x) in sum.iter_mut().zip(v) {
                    *s += x as f64;
                }
                n += 1;
            }
            None if vocab.oov_policy == OovPolicy::Error => {
                return Err(Error::OovToken(token.clone()))
            }
            None => {}
        }
    }
    if n == 0 {
        return Err(Error::AllTokensOov);
    }
    Ok(sum.into_iter().map(|s| (s / n as f64) as f32).collect())
}

/// Encodes every document (title then body); failures name the document.
pub fn encode_docs_awe(vocab: &VocabEmbeddings, docs: &[Doc]) -> Result<EmbeddingSet> {
    let rows: Vec<Vec<f32>> = docs
        .par_iter()
        .map(|d| {
            awe_encode(vocab, &d.tokens())
                .map_err(|e| Error::Document { id: d.id.clone(), source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    EmbeddingSet::new(docs.iter().map(|d| d.id.clone()).collect(), vocab.dim, rows.concat())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AweConfig {
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for AweConfig {
    fn default() -> Self {
        Self { dim: 300, epochs: 15, batch_size: 128, learning_rate: 0.002, seed: 7 }
    }
}

impl AweConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("dimension and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Embedding table plus the linear-sigmoid label head.
#[derive(Debug, Clone, PartialEq)]
pub struct AweModel {
    pub tokens: Vec<String>,
    /// `vocab x dim`
    pub table: Array2<f64>,
    /// `labels x dim`
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AweGrads {
    pub table: Array2<f64>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

/// `ln(1 + e^z) - y z`, computed without overflow.
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl AweModel {
    /// Seeded init: table and head weights uniform in `+-1/sqrt(dim)`, zero bias.
    pub fn init(tokens: Vec<String>, label_count: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dim as f64).sqrt();
        let table =
            Array2::from_shape_simple_fn((tokens.len(), dim), || rng.random_range(-bound..bound));
        let head_w =
            Array2::from_shape_simple_fn((label_count, dim), || rng.random_range(-bound..bound));
        Self { tokens, table, head_w, head_b: Array1::zeros(label_count) }
    }

    pub fn label_count(&self) -> usize {
        self.head_b.len()
    }

    fn pooled(&self, doc: &[usize]) -> Array1<f64> {
        let mut h = Array1::zeros(self.table.ncols());
        for &t in doc {
            h += &self.table.row(t);
        }
        h / doc.len() as f64
    }

    /// Mean over documents of the label-mean BCE, with its gradients.
    ///
    /// `docs` hold token rows of the table, `labels` the positive label indices.
    pub fn loss_and_grads(&self, docs: &[Vec<usize>], labels: &[Vec<usize>]) -> (f64, AweGrads) {
        let c = self.label_count();
        let mut grads = AweGrads {
            table: Array2::zeros(self.table.raw_dim()),
            head_w: Array2::zeros(self.head_w.raw_dim()),
            head_b: Array1::zeros(c),
        };
        let scale = 1.0 / (docs.len() as f64 * c as f64);
        let mut total = 0.0;
        let mut y = Array1::zeros(c);
        for (doc, pos) in docs.iter().zip(labels) {
            y.fill(0.0);
            for &l in pos {
                y[l] = 1.0;
            }
            let h = self.pooled(doc);
            let z = self.head_w.dot(&h) + &self.head_b;
            let mut dz = Array1::zeros(c);
            for k in 0..c {
                total += bce_with_logit(z[k], y[k]);
                dz[k] = (sigmoid(z[k]) - y[k]) * scale;
            }
            for k in 0..c {
                grads.head_w.row_mut(k).scaled_add(dz[k], &h);
            }
            grads.head_b += &dz;
            let dh = self.head_w.t().dot(&dz) / doc.len() as f64;
            for &t in doc {
                grads.table.row_mut(t).scaled_add(1.0, &dh);
            }
        }
        (total * scale, grads)
    }

    /// The table as `f32` token vectors.
    pub fn vocab(&self) -> VocabEmbeddings {
        let data = self.table.iter().map(|&v| v as f32).collect();
        VocabEmbeddings::new(self.tokens.clone(), self.table.ncols(), data)
            .expect("tokens are unique and entries finite")
    }
}

#[derive(Debug, Clone)]
pub struct AweOutcome {
    pub vocab: VocabEmbeddings,
    /// Document-weighted mean loss of every epoch.
    pub loss_trace: Vec<f64>,
}

/// Trains token vectors to predict each document's labels from its mean-pooled tokens.
///
/// The vocabulary is every distinct token of `docs`, sorted.
pub fn train_awe(
    docs: &[Vec<String>],
    labels: &[Vec<usize>],
    label_count: usize,
    config: &AweConfig,
) -> Result<AweOutcome> {
    config.validate()?;
    if docs.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} documents but {} label lists",
            docs.len(),
            labels.len()
        )));
    }
    if label_count == 0 {
        return Err(Error::InvalidConfig("label count must be positive".into()));
    }
    if let Some(d) = docs.iter().position(|d| d.is_empty()) {
        return Err(Error::InvalidConfig(format!("document {d} has no tokens")));
    }
    if let Some(l) = labels.iter().flatten().find(|&&l| l >= label_count) {
        return Err(Error::InvalidConfig(format!("label index {l} out of range for {label_count}")));
    }
    let mut tokens: Vec<String> = docs.iter().flatten().cloned().collect();
    tokens.sort_unstable();
    tokens.dedup();
    if tokens.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let index: HashMap<&str, usize> = tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let doc_rows: Vec<Vec<usize>> =
        docs.iter().map(|d| d.iter().map(|t| index[t.as_str()]).collect()).collect();

    let mut model = AweModel::init(tokens, label_count, config.dim, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(&[model.table.len(), model.head_w.len(), model.head_b.len()], config.learning_rate);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let bd: Vec<Vec<usize>> = batch.iter().map(|&i| doc_rows[i].clone()).collect();
            let bl: Vec<Vec<usize>> = batch.iter().map(|&i| labels[i].clone()).collect();
            let (loss, g) = model.loss_and_grads(&bd, &bl);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    detail: format!("BCE loss {loss}"),
                });
            }
            adam.step(
                [
                    model.table.as_slice_mut().expect("standard layout"),
                    model.head_w.as_slice_mut().expect("standard layout"),
                    model.head_b.as_slice_mut().expect("standard layout"),
                ],
                [
                    g.table.as_slice().expect("standard layout"),
                    g.head_w.as_slice().expect("standard layout"),
                    g.head_b.as_slice().expect("standard layout"),
                ],
            );
            epoch_loss += loss * batch.len() as f64;
        }
        let mean = epoch_loss / docs.len() as f64;
        log::debug!("epoch {epoch}: mean BCE {mean:.6}");
        loss_trace.push(mean);
    }
    Ok(AweOutcome { vocab: model.vocab(), loss_trace })
}
