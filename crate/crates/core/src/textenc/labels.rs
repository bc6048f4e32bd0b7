//! Frequent title unigrams and bigrams used as self-supervision labels.

use std::collections::{BTreeSet, HashMap};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    /// Sorted by document frequency descending, then lexically.
    pub labels: Vec<String>,
    pub frequencies: Vec<usize>,
    pub threshold: usize,
    index: HashMap<String, usize>,
}

/// Distinct unigrams and space-joined bigrams of one title.
fn title_terms(title: &[String]) -> BTreeSet<String> {
    let mut terms: BTreeSet<String> = title.iter().cloned().collect();
    for w in title.windows(2) {
        terms.insert(format!("{} {}", w[0], w[1]));
    }
    terms
}

impl LabelSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// Label indices present in a tokenized title, ascending.
    pub fn labels_of(&self, title: &[String]) -> Vec<usize> {
        let mut out: Vec<usize> = title_terms(title).iter().filter_map(|t| self.position(t)).collect();
        out.sort_unstable();
        out
    }
}

/// Keeps every title unigram and bigram whose document frequency reaches `threshold`.
pub fn extract_labels(titles: &[Vec<String>], threshold: usize) -> Result<LabelSet> {
    if titles.is_empty() {
        return Err(Error::InvalidConfig("label extraction needs at least one title".into()));
    }
    if threshold == 0 {
        return Err(Error::InvalidConfig("label threshold must be positive".into()));
    }
    let mut df: HashMap<String, usize> = HashMap::new();
    for title in titles {
        for term in title_terms(title) {
            *df.entry(term).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = df.into_iter().filter(|(_, f)| *f >= threshold).collect();
    if kept.is_empty() {
        return Err(Error::EmptyLabelSet { threshold });
    }
    kept.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let index = kept.iter().enumerate().map(|(i, (l, _))| (l.clone(), i)).collect();
    let (labels, frequencies) = kept.into_iter().unzip();
    Ok(LabelSet { labels, frequencies, threshold, index })
}
