//! Exact cosine-distance nearest-neighbour search.
//!
//! Results are sorted by ascending distance; equal distances are ordered by
//! ascending row index in the searched set, so output is identical across
//! platforms and thread counts.

use std::cmp::Ordering;
use std::collections::HashSet;

use rayon::prelude::*;

use crate::embedstore::EmbeddingSet;
use crate::vecmath::{cosine_distance_from_dot, dot_f32, norm_f32};
use crate::{Error, Result};

/// Queries scored together against each stored row in [`batch_top_k`].
const QUERY_BLOCK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Row in the searched set.
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborList {
    pub query_id: Option<String>,
    pub entries: Vec<Neighbor>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|n| n.index).collect()
    }

    /// Ids of the entries, resolved against the set that was searched.
    pub fn ids<'a>(&self, set: &'a EmbeddingSet) -> Vec<&'a str> {
        self.entries.iter().map(|n| set.id(n.index)).collect()
    }
}

/// Total order used for every ranking in the crate: distance, then index.
#[inline]
pub fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Sorts `(distance, index)` pairs and keeps the `k` best.
pub fn select_top_k(mut scored: Vec<(f64, usize)>, k: usize) -> Vec<Neighbor> {
    if k < scored.len() {
        scored.select_nth_unstable_by(k, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    scored.into_iter().map(|(distance, index)| Neighbor { index, distance }).collect()
}

/// `1 - u.v / (|u| |v|)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), found: v.len() });
    }
    let (nu, nv) = (norm_f32(u), norm_f32(v));
    if nu <= 0.0 || nv <= 0.0 || !nu.is_finite() || !nv.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(cosine_distance_from_dot(dot_f32(u, v), nu, nv))
}

fn query_norm(set: &EmbeddingSet, query: &[f32]) -> Result<f64> {
    if query.len() != set.dim() {
        return Err(Error::DimensionMismatch { expected: set.dim(), found: query.len() });
    }
    let n = norm_f32(query);
    if n <= 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(n)
}

/// Cosine distance from `query` to every row of `set`, in row order.
pub fn distances_to_all(set: &EmbeddingSet, query: &[f32]) -> Result<Vec<f64>> {
    let qn = query_norm(set, query)?;
    Ok(set
        .rows()
        .zip(set.norms())
        .map(|(row, &rn)| cosine_distance_from_dot(dot_f32(query, row), qn, rn))
        .collect())
}

/// The `k` rows of `set` nearest to `query`, skipping ids in `exclude`.
pub fn top_k(
    set: &EmbeddingSet,
    query: &[f32],
    k: usize,
    exclude: Option<&HashSet<String>>,
) -> Result<NeighborList> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let qn = query_norm(set, query)?;
    let scored: Vec<(f64, usize)> = set
        .rows()
        .zip(set.norms())
        .enumerate()
        .filter(|(i, _)| exclude.is_none_or(|ex| !ex.contains(set.id(*i))))
        .map(|(i, (row, &rn))| (cosine_distance_from_dot(dot_f32(query, row), qn, rn), i))
        .collect();
    if scored.is_empty() {
        return Err(Error::EmptySearchSet);
    }
    Ok(NeighborList { query_id: None, entries: select_top_k(scored, k) })
}

/// [`top_k`] for every row of `queries`, in query order.
///
/// Queries are processed in blocks on the current rayon pool; each output list
/// is identical to the single-query result.
pub fn batch_top_k(set: &EmbeddingSet, queries: &EmbeddingSet, k: usize) -> Result<Vec<NeighborList>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if queries.dim() != set.dim() {
        return Err(Error::DimensionMismatch { expected: set.dim(), found: queries.dim() });
    }
    if set.is_empty() {
        return Err(Error::EmptySearchSet);
    }
    let n = set.len();
    let blocks: Vec<Vec<NeighborList>> = (0..queries.len())
        .collect::<Vec<_>>()
        .par_chunks(QUERY_BLOCK)
        .map(|block| {
            let mut dists = vec![0.0f64; block.len() * n];
            for (j, (row, &rn)) in set.rows().zip(set.norms()).enumerate() {
                for (b, &q) in block.iter().enumerate() {
                    let d = dot_f32(queries.row(q), row);
                    dists[b * n + j] = cosine_distance_from_dot(d, queries.norm(q), rn);
                }
            }
            block
                .iter()
                .enumerate()
                .map(|(b, &q)| {
                    let scored = dists[b * n..(b + 1) * n]
                        .iter()
                        .enumerate()
                        .map(|(j, &d)| (d, j))
                        .collect();
                    NeighborList {
                        query_id: Some(queries.id(q).to_string()),
                        entries: select_top_k(scored, k),
                    }
                })
                .collect()
        })
        .collect();
    Ok(blocks.into_iter().flatten().collect())
}
