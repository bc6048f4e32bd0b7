//! TF-IDF document vectors reduced by randomized truncated SVD.
//!
//! `idf(t) = ln((1 + N) / (1 + df(t))) + 1`, term frequency is the raw count,
//! and each document vector is L2-normalised before projection onto the top
//! right singular directions of the training matrix.
//!
//! Model file `TFI1` (little-endian): magic, `u32 vocab_len`, `u32 reduced_dim`,
//! then per token `u16 len, utf-8 bytes, f64 idf`, then the
//! `vocab_len x reduced_dim` projection as row-major f64.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::Doc;
use crate::embedstore::EmbeddingSet;
use crate::{Error, Result};

pub const TFI1_MAGIC: &[u8; 4] = b"TFI1";

#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfConfig {
    pub reduced_dim: usize,
    /// Extra random directions sampled beyond `reduced_dim`.
    pub oversample: usize,
    pub power_iters: usize,
    pub seed: u64,
}

impl Default for TfIdfConfig {
    fn default() -> Self {
        Self { reduced_dim: 2000, oversample: 10, power_iters: 4, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfModel {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    idf: Vec<f64>,
    /// `vocab x reduced_dim`, orthonormal columns.
    projection: DMatrix<f64>,
}

/// Sparse row: `(term, value)` sorted by term.
type SparseRow = Vec<(usize, f64)>;

fn sparse_times(rows: &[SparseRow], m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), m.ncols());
    for (r, row) in rows.iter().enumerate() {
        for &(t, v) in row {
            for c in 0..m.ncols() {
                out[(r, c)] += v * m[(t, c)];
            }
        }
    }
    out
}

fn sparse_t_times(rows: &[SparseRow], n_terms: usize, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n_terms, m.ncols());
    for (r, row) in rows.iter().enumerate() {
        for &(t, v) in row {
            for c in 0..m.ncols() {
                out[(t, c)] += v * m[(r, c)];
            }
        }
    }
    out
}

/// Modified Gram-Schmidt, applied twice per column; a column that is (numerically)
/// in the span of the previous ones is replaced by a seeded random vector.
fn orthonormalize(mut m: DMatrix<f64>, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    for j in 0..cols {
        let mut attempts = 0;
        loop {
            let original = m.column(j).norm();
            for _ in 0..2 {
                for i in 0..j {
                    let proj = m.column(i).dot(&m.column(j));
                    let ci = m.column(i).clone_owned();
                    m.column_mut(j).axpy(-proj, &ci, 1.0);
                }
            }
            let n = m.column(j).norm();
            if n > 1e-10 * original.max(f64::MIN_POSITIVE) && n > 0.0 {
                m.column_mut(j).scale_mut(1.0 / n);
                break;
            }
            attempts += 1;
            assert!(attempts < 100, "cannot complete an orthonormal basis of {rows} rows");
            for i in 0..rows {
                m[(i, j)] = StandardNormal.sample(rng);
            }
        }
    }
    m
}

impl TfIdfModel {
    /// Fits idf weights and a `reduced_dim`-column projection on tokenized documents.
    pub fn fit(docs: &[Vec<String>], config: &TfIdfConfig) -> Result<Self> {
        if config.reduced_dim == 0 {
            return Err(Error::InvalidConfig("reduced dimension must be positive".into()));
        }
        let mut vocab: Vec<String> = docs.iter().flatten().cloned().collect();
        vocab.sort_unstable();
        vocab.dedup();
        if vocab.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        if config.reduced_dim > vocab.len() {
            return Err(Error::InvalidConfig(format!(
                "reduced dimension {} exceeds vocabulary size {}",
                config.reduced_dim,
                vocab.len()
            )));
        }
        if docs.len() < config.reduced_dim {
            log::warn!(
                "{} documents for {} reduced dimensions; trailing directions are arbitrary",
                docs.len(),
                config.reduced_dim
            );
        }
        let index: HashMap<String, usize> =
            vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let mut df = vec![0usize; vocab.len()];
        for doc in docs {
            let mut seen: Vec<usize> = doc.iter().map(|t| index[t]).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                df[t] += 1;
            }
        }
        let n = docs.len() as f64;
        let idf: Vec<f64> = df.iter().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
        let mut model = Self { vocab, index, idf, projection: DMatrix::zeros(0, 0) };
        let rows: Vec<SparseRow> = docs.iter().filter_map(|d| model.weights(d)).collect();
        model.projection = randomized_right_singular(&rows, model.vocab.len(), config);
        Ok(model)
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn idf(&self, token: &str) -> Option<f64> {
        self.index.get(token).map(|&i| self.idf[i])
    }

    pub fn reduced_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    /// L2-normalised tf-idf weights of the in-vocabulary tokens, or `None`.
    fn weights(&self, doc: &[String]) -> Option<SparseRow> {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for t in doc {
            if let Some(&i) = self.index.get(t) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut row: SparseRow = counts.into_iter().map(|(i, c)| (i, c * self.idf[i])).collect();
        row.sort_unstable_by_key(|&(i, _)| i);
        let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return None;
        }
        for (_, v) in &mut row {
            *v /= norm;
        }
        Some(row)
    }

    /// Reduced vector in `f64`; OOV tokens are ignored.
    pub fn encode_f64(&self, doc: &[String]) -> Result<Vec<f64>> {
        if self.projection.ncols() == 0 {
            return Err(Error::NotFitted);
        }
        let row = self.weights(doc).ok_or(Error::AllTokensOov)?;
        let mut out = vec![0.0; self.reduced_dim()];
        for (t, v) in row {
            for (c, o) in out.iter_mut().enumerate() {
                *o += v * self.projection[(t, c)];
            }
        }
        if out.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroNorm);
        }
        Ok(out)
    }

    pub fn encode(&self, doc: &[String]) -> Result<Vec<f32>> {
        Ok(self.encode_f64(doc)?.into_iter().map(|v| v as f32).collect())
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(TFI1_MAGIC)?;
        let len = u32::try_from(self.vocab.len())
            .map_err(|_| Error::InvalidConfig("vocabulary too large".into()))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(&(self.reduced_dim() as u32).to_le_bytes())?;
        for (t, idf) in self.vocab.iter().zip(&self.idf) {
            let n = u16::try_from(t.len())
                .map_err(|_| Error::InvalidConfig(format!("token longer than 65535 bytes: {t}")))?;
            w.write_all(&n.to_le_bytes())?;
            w.write_all(t.as_bytes())?;
            w.write_all(&idf.to_le_bytes())?;
        }
        for r in 0..self.projection.nrows() {
            for c in 0..self.projection.ncols() {
                w.write_all(&self.projection[(r, c)].to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
            let mut b = [0u8; N];
            r.read_exact(&mut b).map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => Error::MalformedHeader("TF-IDF model truncated".into()),
                _ => Error::Io(e),
            })?;
            Ok(b)
        }
        if &take::<4, _>(&mut r)? != TFI1_MAGIC {
            return Err(Error::MalformedHeader("bad TF-IDF model magic".into()));
        }
        let n = u32::from_le_bytes(take(&mut r)?) as usize;
        let k = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut vocab = Vec::with_capacity(n.min(1 << 20));
        let mut idf = Vec::with_capacity(n.min(1 << 20));
        for row in 0..n {
            let len = u16::from_le_bytes(take(&mut r)?) as usize;
            let mut bytes = vec![0u8; len];
            r.read_exact(&mut bytes)?;
            let t = String::from_utf8(bytes)
                .map_err(|_| Error::MalformedRow { row, detail: "token is not UTF-8".into() })?;
            vocab.push(t);
            idf.push(f64::from_le_bytes(take(&mut r)?));
        }
        let mut projection = DMatrix::zeros(n, k);
        for row in 0..n {
            for c in 0..k {
                projection[(row, c)] = f64::from_le_bytes(take(&mut r)?);
            }
        }
        let index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Self { vocab, index, idf, projection })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

/// Top `config.reduced_dim` right singular vectors of the sparse matrix, as columns.
fn randomized_right_singular(rows: &[SparseRow], n_terms: usize, config: &TfIdfConfig) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let r = config.reduced_dim;
    let l = (r + config.oversample).min(n_terms);
    let omega = DMatrix::from_fn(n_terms, l, |_, _| StandardNormal.sample(&mut rng));

    // Subspace iteration with X^T X: one pass plus `power_iters` refinements.
    // Directions outside the row space of X are completed randomly.
    let mut basis = orthonormalize(omega, &mut rng);
    for _ in 0..=config.power_iters {
        let y = sparse_times(rows, &basis);
        basis = orthonormalize(sparse_t_times(rows, n_terms, &y), &mut rng);
    }
    // Rayleigh-Ritz: eigenvectors of (X V)^T (X V) rotate V onto singular directions.
    let xv = sparse_times(rows, &basis);
    let gram = xv.transpose() * &xv;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut out = DMatrix::zeros(n_terms, r);
    for (c, &k) in order.iter().take(r).enumerate() {
        let v = &basis * eig.eigenvectors.column(k);
        out.set_column(c, &v);
    }
    let mut out = orthonormalize(out, &mut rng);
    // Fix the sign: the largest-magnitude entry of every column is positive.
    for c in 0..r {
        let mut val = 0.0f64;
        for &x in out.column(c).iter() {
            if x.abs() > val.abs() {
                val = x;
            }
        }
        if val < 0.0 {
            out.column_mut(c).neg_mut();
        }
    }
    out
}

/// Encodes every document (title then body); failures name the document.
pub fn encode_docs_tfidf(model: &TfIdfModel, docs: &[Doc]) -> Result<EmbeddingSet> {
    let rows: Vec<Vec<f32>> = docs
        .par_iter()
        .map(|d| {
            model
                .encode(&d.tokens())
                .map_err(|e| Error::Document { id: d.id.clone(), source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    EmbeddingSet::new(docs.iter().map(|d| d.id.clone()).collect(), model.reduced_dim(), rows.concat())
}
