//! Cosine triplet loss with in-batch hard negative mining.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::vecmath::{dot_f64, norm_f64};
use crate::{Error, Result};

fn cosine_distance_checked(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), found: v.len() });
    }
    let (nu, nv) = (norm_f64(u), norm_f64(v));
    if nu <= 0.0 || nv <= 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(1.0 - dot_f64(u, v) / (nu * nv))
}

/// `max(0, d(a, p) - d(a, n) + margin)` with cosine distance `d`.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<f64> {
    let dp = cosine_distance_checked(anchor, positive)?;
    let dn = cosine_distance_checked(anchor, negative)?;
    Ok((dp - dn + margin).max(0.0))
}

fn row_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    let a = a.as_slice().expect("contiguous row");
    let b = b.as_slice().expect("contiguous row");
    cosine_distance_checked(a, b)
}

/// Index of the batch row closest to `anchor` among rows whose text differs
/// from the positive's; ties go to the lowest index.
pub fn mine_hard_negative(
    anchor: ArrayView1<f64>,
    batch: ArrayView2<f64>,
    text_ids: &[usize],
    positive_index: usize,
) -> Result<usize> {
    if batch.nrows() < 2 {
        return Err(Error::BatchTooSmall { rows: batch.nrows() });
    }
    let positive_text = text_ids[positive_index];
    let mut best: Option<(f64, usize)> = None;
    for (j, row) in batch.rows().into_iter().enumerate() {
        if text_ids[j] == positive_text {
            continue;
        }
        let d = row_distance(anchor, row)?;
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, j));
        }
    }
    best.map(|(_, j)| j).ok_or(Error::NoValidNegative { anchor: positive_index })
}

/// Batch-mean triplet loss and its gradients.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    /// Mean over anchors that have a valid negative (0 if none do).
    pub loss: f64,
    /// Mined negative row per anchor.
    pub negatives: Vec<Option<usize>>,
    pub d_anchor: Array2<f64>,
    pub d_candidate: Array2<f64>,
}

/// Gradient of `1 - u.v/(|u||v|)` with respect to `u`.
fn distance_grad(u: &[f64], v: &[f64], out: &mut [f64], scale: f64) {
    let (nu, nv) = (norm_f64(u), norm_f64(v));
    let cos = dot_f64(u, v) / (nu * nv);
    for ((o, &ui), &vi) in out.iter_mut().zip(u).zip(v) {
        *o -= scale * (vi / (nu * nv) - cos * ui / (nu * nu));
    }
}

/// Row `i` of `anchors` is paired with row `i` of `candidates`; negatives are
/// mined from `candidates` unless supplied. Selection is treated as constant
/// when differentiating.
pub fn batch_triplet_loss(
    anchors: ArrayView2<f64>,
    candidates: ArrayView2<f64>,
    text_ids: &[usize],
    margin: f64,
    fixed_negatives: Option<&[Option<usize>]>,
) -> Result<BatchLoss> {
    let b = anchors.nrows();
    if candidates.nrows() != b || text_ids.len() != b {
        return Err(Error::ShapeMismatch(format!(
            "{b} anchors, {} candidates, {} text ids",
            candidates.nrows(),
            text_ids.len()
        )));
    }
    let negatives: Vec<Option<usize>> = match fixed_negatives {
        Some(n) => n.to_vec(),
        None => (0..b)
            .map(|i| match mine_hard_negative(anchors.row(i), candidates, text_ids, i) {
                Ok(j) => Ok(Some(j)),
                Err(Error::NoValidNegative { .. }) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?,
    };
    let active_count = negatives.iter().filter(|n| n.is_some()).count();
    let mut d_anchor = Array2::zeros(anchors.raw_dim());
    let mut d_candidate = Array2::zeros(candidates.raw_dim());
    if active_count == 0 {
        return Ok(BatchLoss { loss: 0.0, negatives, d_anchor, d_candidate });
    }
    let scale = 1.0 / active_count as f64;
    let mut total = 0.0;
    for (i, neg) in negatives.iter().enumerate() {
        let Some(j) = *neg else { continue };
        let a = anchors.row(i);
        let (a, p, n) = (
            a.as_slice().expect("contiguous row"),
            candidates.row(i).to_slice().expect("contiguous row"),
            candidates.row(j).to_slice().expect("contiguous row"),
        );
        let dp = cosine_distance_checked(a, p)?;
        let dn = cosine_distance_checked(a, n)?;
        let hinge = dp - dn + margin;
        if hinge <= 0.0 {
            continue;
        }
        total += hinge;
        // d/da [d(a,p) - d(a,n)]
        let mut ga = vec![0.0; a.len()];
        distance_grad(a, p, &mut ga, 1.0);
        distance_grad(a, n, &mut ga, -1.0);
        for (dst, g) in d_anchor.row_mut(i).iter_mut().zip(&ga) {
            *dst += scale * g;
        }
        let mut gp = vec![0.0; p.len()];
        distance_grad(p, a, &mut gp, 1.0);
        for (dst, g) in d_candidate.row_mut(i).iter_mut().zip(&gp) {
            *dst += scale * g;
        }
        let mut gn = vec![0.0; n.len()];
        distance_grad(n, a, &mut gn, -1.0);
        for (dst, g) in d_candidate.row_mut(j).iter_mut().zip(&gn) {
            *dst += scale * g;
        }
    }
    Ok(BatchLoss { loss: total * scale, negatives, d_anchor, d_candidate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_values() {
        assert_eq!(triplet_loss(&[1.0, 2.0], &[0.5, -1.0], &[0.5, -1.0], 0.3).unwrap(), 0.3);
        assert_eq!(triplet_loss(&[1.0, 0.0], &[2.0, 0.0], &[-1.0, 0.0], 0.3).unwrap(), 0.0);
        assert_eq!(triplet_loss(&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0], 0.3).unwrap(), 0.0);
        assert!(matches!(
            triplet_loss(&[0.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], 0.3),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn mining_small_cases() {
        let batch = array![[1.0, 0.0], [0.9, 0.1]];
        assert_eq!(mine_hard_negative(batch.row(0), batch.view(), &[0, 1], 0).unwrap(), 1);

        // Row 1 duplicates the positive recipe and is the closest; it must be skipped.
        let batch = array![[1.0, 0.0], [1.0, 0.01], [0.0, 1.0], [0.7, 0.7]];
        let anchor = array![1.0, 0.0];
        assert_eq!(mine_hard_negative(anchor.view(), batch.view(), &[5, 5, 6, 7], 0).unwrap(), 3);
        assert!(matches!(
            mine_hard_negative(anchor.view(), batch.view(), &[5, 5, 5, 5], 0),
            Err(Error::NoValidNegative { anchor: 0 })
        ));
    }

    #[test]
    fn mining_matches_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let b = 256;
        let batch = Array2::from_shape_simple_fn((b, 16), || rng.random_range(-1.0..1.0));
        let ids: Vec<usize> = (0..b).map(|_| rng.random_range(0..150)).collect();
        for i in 0..b {
            let a = batch.row(i).mapv(|v| v + 0.05);
            let got = mine_hard_negative(a.view(), batch.view(), &ids, i).unwrap();
            let mut want = (f64::INFINITY, usize::MAX);
            for j in 0..b {
                if ids[j] == ids[i] {
                    continue;
                }
                let r = batch.row(j);
                let dot: f64 = a.iter().zip(r.iter()).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nr = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                let d = 1.0 - dot / (na * nr);
                if d < want.0 {
                    want = (d, j);
                }
            }
            assert_eq!(got, want.1);
            assert_ne!(ids[got], ids[i]);
        }
    }

    #[test]
    fn batch_loss_matches_per_triplet_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let a = Array2::from_shape_simple_fn((6, 5), || rng.random_range(-1.0..1.0));
        let c = Array2::from_shape_simple_fn((6, 5), || rng.random_range(-1.0..1.0));
        let ids = [0, 1, 2, 3, 4, 5];
        let out = batch_triplet_loss(a.view(), c.view(), &ids, 0.5, None).unwrap();
        let mut total = 0.0;
        for i in 0..6 {
            let j = out.negatives[i].unwrap();
            total += triplet_loss(
                a.row(i).as_slice().unwrap(),
                c.row(i).as_slice().unwrap(),
                c.row(j).as_slice().unwrap(),
                0.5,
            )
            .unwrap();
        }
        assert!((out.loss - total / 6.0).abs() < 1e-12);
    }

    #[test]
    fn zero_margin_with_equal_positive_and_negative_is_zero() {
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let c = array![[1.0, 1.0], [1.0, 1.0]];
        let out = batch_triplet_loss(a.view(), c.view(), &[0, 1], 0.0, None).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.d_anchor.iter().all(|&g| g == 0.0));
    }
}
