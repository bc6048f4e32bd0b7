//! Text-side encoders: tokenizer, title labels, average word embeddings and
//! TF-IDF with truncated SVD.

mod awe;
mod labels;
mod tfidf;

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

pub use awe::{
    awe_encode, encode_docs_awe, train_awe, AweConfig, AweGrads, AweModel, AweOutcome, OovPolicy,
    VocabEmbeddings,
};
pub use labels::{extract_labels, LabelSet};
pub use tfidf::{encode_docs_tfidf, TfIdfConfig, TfIdfModel};

use crate::{Error, Result};

/// Lowercases, splits on every non-alphanumeric character and drops tokens
/// shorter than two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(|t| t.to_lowercase())
        .collect()
}

/// A document from a `doc_id<TAB>title<TAB>body` file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Doc {
    pub id: String,
    pub title: String,
    pub body: String,
}

impl Doc {
    /// Tokens of title followed by body, read as one continuous text.
    pub fn tokens(&self) -> Vec<String> {
        let mut t = tokenize(&self.title);
        t.extend(tokenize(&self.body));
        t
    }
}

/// Reads documents; blank lines and lines starting with `#` are skipped and
/// a missing body is read as empty.
pub fn read_docs<R: BufRead>(r: R) -> Result<Vec<Doc>> {
    let mut docs = Vec::new();
    for (row, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let id = fields.next().unwrap_or_default();
        let Some(title) = fields.next() else {
            return Err(Error::MalformedRow { row, detail: "expected doc_id<TAB>title<TAB>body".into() });
        };
        if id.is_empty() {
            return Err(Error::MalformedRow { row, detail: "empty document id".into() });
        }
        let body = fields.next().unwrap_or_default();
        docs.push(Doc { id: id.to_string(), title: title.to_string(), body: body.to_string() });
    }
    Ok(docs)
}

pub fn load_docs(path: impl AsRef<Path>) -> Result<Vec<Doc>> {
    read_docs(BufReader::new(File::open(path)?))
}
