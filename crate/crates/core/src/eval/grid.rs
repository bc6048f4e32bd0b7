//! CkNN over every combination of image and text encoders.

use std::collections::HashSet;

use super::report::align;
use super::{run_pool_eval, EvalProtocol, MetricsReport};
use crate::cknn::{CkNNConfig, CkNNModel};
use crate::embedstore::{join_corpus, EmbeddingSet, PairedCorpus};
use crate::{Error, Result};

/// Embeddings of one encoder, covering train and test items.
#[derive(Debug, Clone)]
pub struct NamedSet {
    pub name: String,
    pub set: EmbeddingSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub image_encoder: String,
    pub text_encoder: String,
    pub report: MetricsReport,
}

/// Cells in image-encoder-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
}

impl GridReport {
    pub fn cell(&self, image_encoder: &str, text_encoder: &str) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.image_encoder == image_encoder && c.text_encoder == text_encoder)
    }

    /// Every repeat of every cell, plus per-cell `mean` and `std` rows.
    pub fn to_tsv(&self) -> String {
        let Some(first) = self.cells.first() else { return String::new() };
        let mut out = format!("# {}\n", first.report.protocol_line());
        out.push_str("image_encoder\ttext_encoder\t");
        out.push_str(&first.report.header().join("\t"));
        out.push('\n');
        for c in &self.cells {
            for row in c.report.rows() {
                out.push_str(&format!("{}\t{}\t{}\n", c.image_encoder, c.text_encoder, row.join("\t")));
            }
        }
        out
    }

    /// One row per cell with the mean over repeats.
    pub fn to_table(&self) -> String {
        let Some(first) = self.cells.first() else { return String::new() };
        let mut header = vec!["image_encoder".to_string(), "text_encoder".to_string()];
        header.extend(first.report.header().into_iter().skip(1));
        let rows: Vec<Vec<String>> = self
            .cells
            .iter()
            .map(|c| {
                let mut row = vec![c.image_encoder.clone(), c.text_encoder.clone()];
                row.extend(c.report.mean.med_r.iter().chain(&c.report.mean.recall).map(|v| format!("{v:.4}")));
                row
            })
            .collect();
        format!("{}\n{}", first.report.protocol_line(), align(&header, &rows))
    }
}

fn common_ids(sets: &[NamedSet]) -> HashSet<&str> {
    let mut it = sets.iter();
    let Some(first) = it.next() else { return HashSet::new() };
    let mut ids: HashSet<&str> = first.set.ids().iter().map(String::as_str).collect();
    for s in it {
        ids.retain(|id| s.set.contains(id));
    }
    ids
}

/// Pairs whose image and text are both in the shared universe.
fn shared_pairs(
    pairs: &[(String, String)],
    images: &HashSet<&str>,
    texts: &HashSet<&str>,
) -> Vec<(String, String)> {
    pairs
        .iter()
        .filter(|(i, t)| images.contains(i.as_str()) && texts.contains(t.as_str()))
        .cloned()
        .collect()
}

/// Rows of `set` named in `keep`, in the set's own order.
fn restrict(set: &EmbeddingSet, keep: &HashSet<&str>) -> EmbeddingSet {
    let rows: Vec<usize> = (0..set.len()).filter(|&r| keep.contains(set.id(r))).collect();
    set.subset(&rows)
}

fn split_corpus(images: &EmbeddingSet, texts: &EmbeddingSet, pairs: &[(String, String)]) -> Result<PairedCorpus> {
    let image_ids: HashSet<&str> = pairs.iter().map(|(i, _)| i.as_str()).collect();
    let text_ids: HashSet<&str> = pairs.iter().map(|(_, t)| t.as_str()).collect();
    join_corpus(restrict(images, &image_ids), restrict(texts, &text_ids), pairs)
}

/// Runs CkNN with `cknn_config` for every (image encoder, text encoder)
/// combination on the ids that every encoder covers.
pub fn grid_compare(
    image_sets: &[NamedSet],
    text_sets: &[NamedSet],
    train_pairs: &[(String, String)],
    test_pairs: &[(String, String)],
    protocol: &EvalProtocol,
    cknn_config: &CkNNConfig,
) -> Result<GridReport> {
    if image_sets.is_empty() || text_sets.is_empty() {
        return Err(Error::InvalidConfig("grid needs at least one image and one text encoder".into()));
    }
    let images = common_ids(image_sets);
    let texts = common_ids(text_sets);
    let train = shared_pairs(train_pairs, &images, &texts);
    let test = shared_pairs(test_pairs, &images, &texts);
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let dropped = train_pairs.len() + test_pairs.len() - train.len() - test.len();
    if dropped > 0 {
        log::info!("{dropped} pairs are not covered by every encoder and were dropped");
    }
    let mut cells = Vec::with_capacity(image_sets.len() * text_sets.len());
    for img in image_sets {
        for txt in text_sets {
            let train_corpus = split_corpus(&img.set, &txt.set, &train)?;
            let test_corpus = split_corpus(&img.set, &txt.set, &test)?;
            let model = CkNNModel::new(train_corpus, *cknn_config)?;
            let report = run_pool_eval(&model, &test_corpus, protocol)?;
            cells.push(GridCell {
                image_encoder: img.name.clone(),
                text_encoder: txt.name.clone(),
                report,
            });
        }
    }
    Ok(GridReport { cells })
}
