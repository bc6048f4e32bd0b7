//! Retrieval evaluation: repeated pool ranking, m-way forced choice and
//! encoder grids.
//!
//! Repeat `r` of a protocol draws its pool with seed `seed + r`, so reports
//! are reproducible and independent of the worker count.

mod grid;
mod metrics;
mod rankers;
mod report;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embedstore::PairedCorpus;
use crate::{Error, Modality, Result};

pub use grid::{grid_compare, GridCell, GridReport, NamedSet};
pub use metrics::{best_rank_of_true, compute_metrics, median_rank, rank_of_true, recall_at};
pub use rankers::{CkNNPrepared, DirectRanker, RandomRanker, Ranker, TripletRanker};
pub use report::{MetricsReport, RepeatMetrics, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ImageToText,
    TextToImage,
}

impl Direction {
    pub fn query_modality(self) -> Modality {
        match self {
            Direction::ImageToText => Modality::Image,
            Direction::TextToImage => Modality::Text,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::ImageToText => "image_to_text",
            Direction::TextToImage => "text_to_image",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image_to_text" | "im2txt" => Ok(Direction::ImageToText),
            "text_to_image" | "txt2im" => Ok(Direction::TextToImage),
            other => Err(Error::InvalidConfig(format!("unknown direction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Every query ranks the whole sampled pool.
    PoolRanking,
    /// Every query picks among its true match and `m - 1` random distractors.
    MWay { m: usize },
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalMode::PoolRanking => f.write_str("pool"),
            EvalMode::MWay { m } => write!(f, "{m}-way"),
        }
    }
}

/// What to do when test ids also occur in the ranker's training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverlapPolicy {
    #[default]
    Error,
    Warn,
}

impl FromStr for OverlapPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(OverlapPolicy::Error),
            "warn" => Ok(OverlapPolicy::Warn),
            other => Err(Error::InvalidConfig(format!("unknown overlap policy `{other}`"))),
        }
    }
}

impl fmt::Display for OverlapPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OverlapPolicy::Error => "error",
            OverlapPolicy::Warn => "warn",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalProtocol {
    /// Texts sampled per repeat.
    pub pool_size: usize,
    pub repeats: usize,
    pub direction: Direction,
    pub recall_ranks: Vec<usize>,
    pub seed: u64,
    pub mode: EvalMode,
    /// Use only the first image of every text, as query and as candidate.
    pub dedup_images: bool,
    pub overlap: OverlapPolicy,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            pool_size: 1000,
            repeats: 10,
            direction: Direction::ImageToText,
            recall_ranks: vec![1, 5, 10],
            seed: 7,
            mode: EvalMode::PoolRanking,
            dedup_images: false,
            overlap: OverlapPolicy::Error,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.pool_size == 0 || self.repeats == 0 {
            return Err(Error::InvalidConfig("pool size and repeats must be positive".into()));
        }
        if self.recall_ranks.is_empty() || self.recall_ranks.contains(&0) {
            return Err(Error::InvalidConfig("recall ranks must be a non-empty list of K >= 1".into()));
        }
        if let EvalMode::MWay { m } = self.mode {
            if m == 0 || m > self.pool_size {
                return Err(Error::InvalidConfig(format!(
                    "m-way needs 1 <= m <= pool size, got m = {m}, pool size {}",
                    self.pool_size
                )));
            }
        }
        Ok(())
    }

    fn repeat_rng(&self, repeat: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(repeat as u64))
    }
}

fn check_overlap<R: Ranker>(ranker: &R, corpus: &PairedCorpus, policy: OverlapPolicy) -> Result<()> {
    let train: HashSet<&str> = ranker.training_ids();
    if train.is_empty() {
        return Ok(());
    }
    let count = corpus
        .images()
        .ids()
        .iter()
        .chain(corpus.texts().ids())
        .filter(|id| train.contains(id.as_str()))
        .count();
    if count == 0 {
        return Ok(());
    }
    match policy {
        OverlapPolicy::Error => Err(Error::TrainTestOverlap { count }),
        OverlapPolicy::Warn => {
            log::warn!("{count} test ids also appear in the training data");
            Ok(())
        }
    }
}

/// Query images of one text: all of them, or the first when deduplicating.
fn images_for(corpus: &PairedCorpus, text: usize, dedup: bool) -> &[usize] {
    let all = corpus.images_of_text(text);
    if dedup {
        &all[..1]
    } else {
        all
    }
}

struct Prepared<P> {
    images: P,
    texts: P,
}

fn prepare_both<R: Ranker>(ranker: &R, corpus: &PairedCorpus) -> Result<Prepared<R::Prepared>> {
    let images = ranker.prepare(corpus.images(), Modality::Image)?;
    let texts = ranker.prepare(corpus.texts(), Modality::Text)?;
    ranker.check_compatible(&images, &texts)?;
    Ok(Prepared { images, texts })
}

fn sample_pool(rng: &mut ChaCha8Rng, paired: &[usize], n: usize) -> Vec<usize> {
    let mut picked: Vec<usize> = sample(rng, paired.len(), n).into_iter().map(|i| paired[i]).collect();
    picked.sort_unstable();
    picked
}

/// Ranks of the true match for every query of one pool.
/// Queries scored together, so each candidate row is reused while it is hot in cache.
const QUERY_BLOCK: usize = 32;

/// Scores every query against every candidate and maps each distance row
/// (query order) through `rank`. Each distance comes from the same call an
/// unblocked loop would make, so values do not depend on the blocking.
fn blocked_ranks<R: Ranker>(
    ranker: &R,
    q_set: &R::Prepared,
    queries: &[usize],
    c_set: &R::Prepared,
    candidates: &[usize],
    rank: impl Fn(usize, &[f64]) -> usize + Sync,
) -> Vec<usize> {
    let blocks: Vec<Vec<usize>> = queries
        .par_chunks(QUERY_BLOCK)
        .enumerate()
        .map(|(b, block)| {
            let mut rows = vec![Vec::with_capacity(candidates.len()); block.len()];
            for &c in candidates {
                for (row, &q) in rows.iter_mut().zip(block) {
                    row.push(ranker.distance(q_set, q, c_set, c));
                }
            }
            rows.iter().enumerate().map(|(i, d)| rank(b * QUERY_BLOCK + i, d)).collect()
        })
        .collect();
    blocks.concat()
}

fn pool_ranks<R: Ranker>(
    ranker: &R,
    corpus: &PairedCorpus,
    prep: &Prepared<R::Prepared>,
    texts: &[usize],
    protocol: &EvalProtocol,
) -> Vec<usize> {
    match protocol.direction {
        Direction::ImageToText => {
            let queries: Vec<(usize, usize)> = texts
                .iter()
                .enumerate()
                .flat_map(|(pos, &t)| {
                    images_for(corpus, t, protocol.dedup_images).iter().map(move |&i| (i, pos))
                })
                .collect();
            let rows: Vec<usize> = queries.iter().map(|&(image, _)| image).collect();
            blocked_ranks(ranker, &prep.images, &rows, &prep.texts, texts, |q, d| rank_of_true(d, queries[q].1))
        }
        Direction::TextToImage => {
            let mut candidates = Vec::new();
            let mut owner_positions: Vec<Vec<usize>> = Vec::with_capacity(texts.len());
            for &t in texts {
                let imgs = images_for(corpus, t, protocol.dedup_images);
                owner_positions.push((candidates.len()..candidates.len() + imgs.len()).collect());
                candidates.extend_from_slice(imgs);
            }
            blocked_ranks(ranker, &prep.texts, texts, &prep.images, &candidates, |q, d| {
                best_rank_of_true(d, &owner_positions[q])
            })
        }
    }
}

fn paired_or_too_small(corpus: &PairedCorpus, pool_size: usize) -> Result<Vec<usize>> {
    let paired = corpus.paired_texts();
    if pool_size > paired.len() {
        return Err(Error::PoolTooLarge { requested: pool_size, available: paired.len() });
    }
    Ok(paired)
}

/// Repeated pool ranking (or m-way choice if `protocol.mode` asks for it).
pub fn run_pool_eval<R: Ranker>(
    ranker: &R,
    corpus: &PairedCorpus,
    protocol: &EvalProtocol,
) -> Result<MetricsReport> {
    if let EvalMode::MWay { .. } = protocol.mode {
        return run_mway_eval(ranker, corpus, protocol);
    }
    protocol.validate()?;
    check_overlap(ranker, corpus, protocol.overlap)?;
    let paired = paired_or_too_small(corpus, protocol.pool_size)?;
    let prep = prepare_both(ranker, corpus)?;
    let mut repeats = Vec::with_capacity(protocol.repeats);
    for r in 0..protocol.repeats {
        let mut rng = protocol.repeat_rng(r);
        let texts = sample_pool(&mut rng, &paired, protocol.pool_size);
        let ranks = pool_ranks(ranker, corpus, &prep, &texts, protocol);
        let (med_r, recall) = compute_metrics(&ranks, &protocol.recall_ranks);
        repeats.push(RepeatMetrics { med_r: Some(med_r), recall, queries: ranks.len() });
    }
    Ok(MetricsReport::new(protocol.clone(), repeats))
}

/// One forced-choice query: the query row, its candidate rows and the true position.
struct Choice {
    query: usize,
    candidates: Vec<usize>,
    truth: usize,
}

/// m-way forced choice: R@1 is the share of queries whose true match ranks
/// first among itself and `m - 1` distractors drawn from the same pool.
pub fn run_mway_eval<R: Ranker>(
    ranker: &R,
    corpus: &PairedCorpus,
    protocol: &EvalProtocol,
) -> Result<MetricsReport> {
    let EvalMode::MWay { m } = protocol.mode else {
        return Err(Error::InvalidConfig("m-way evaluation needs mode = m-way".into()));
    };
    protocol.validate()?;
    check_overlap(ranker, corpus, protocol.overlap)?;
    let paired = paired_or_too_small(corpus, protocol.pool_size)?;
    let prep = prepare_both(ranker, corpus)?;
    let mut repeats = Vec::with_capacity(protocol.repeats);
    for r in 0..protocol.repeats {
        let mut rng = protocol.repeat_rng(r);
        let texts = sample_pool(&mut rng, &paired, protocol.pool_size);
        // Draw every choice sequentially so the result does not depend on scheduling.
        let mut choices = Vec::new();
        for (pos, &t) in texts.iter().enumerate() {
            let queries: Vec<usize> = match protocol.direction {
                Direction::ImageToText => images_for(corpus, t, protocol.dedup_images).to_vec(),
                Direction::TextToImage => vec![t],
            };
            for query in queries {
                let distractors: Vec<usize> = sample(&mut rng, texts.len() - 1, m - 1)
                    .into_iter()
                    .map(|j| texts[if j >= pos { j + 1 } else { j }])
                    .collect();
                let truth = rng.random_range(0..m);
                let mut others = distractors.into_iter();
                let candidates: Vec<usize> = (0..m)
                    .map(|slot| {
                        let text = if slot == truth { t } else { others.next().expect("m - 1 distractors") };
                        match protocol.direction {
                            Direction::ImageToText => text,
                            Direction::TextToImage => {
                                let imgs = images_for(corpus, text, protocol.dedup_images);
                                imgs[rng.random_range(0..imgs.len())]
                            }
                        }
                    })
                    .collect();
                choices.push(Choice { query, candidates, truth });
            }
        }
        let (q_set, c_set) = match protocol.direction {
            Direction::ImageToText => (&prep.images, &prep.texts),
            Direction::TextToImage => (&prep.texts, &prep.images),
        };
        let ranks: Vec<usize> = choices
            .par_iter()
            .map(|c| {
                let d: Vec<f64> =
                    c.candidates.iter().map(|&j| ranker.distance(q_set, c.query, c_set, j)).collect();
                rank_of_true(&d, c.truth)
            })
            .collect();
        repeats.push(RepeatMetrics { med_r: None, recall: vec![recall_at(&ranks, 1)], queries: ranks.len() });
    }
    let mut echo = protocol.clone();
    echo.recall_ranks = vec![1];
    Ok(MetricsReport::new(echo, repeats))
}
