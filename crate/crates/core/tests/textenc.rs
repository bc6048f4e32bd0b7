mod common;

use std::collections::{BTreeMap, BTreeSet};

use cknn_core::synth::title_corpus;
use cknn_core::textenc::{
    awe_encode, extract_labels, train_awe, AweConfig, AweModel, TfIdfConfig, TfIdfModel, VocabEmbeddings,
};
use common::gradcheck::{awe_check, TOLERANCE};
use common::oracle::{dot, norm};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn label_training_set(n_docs: usize) -> (Vec<Vec<String>>, Vec<Vec<usize>>, usize) {
    let docs = title_corpus(n_docs, 6, 4);
    let titles: Vec<Vec<String>> = docs.iter().map(|d| d.title.clone()).collect();
    let labels = extract_labels(&titles, 5).unwrap();
    let per_doc = titles.iter().map(|t| labels.labels_of(t)).collect();
    (docs.into_iter().map(|d| d.body).collect(), per_doc, labels.len())
}

#[test]
fn labels_match_exhaustive_counting() {
    let docs = title_corpus(300, 10, 9);
    let titles: Vec<Vec<String>> = docs.iter().map(|d| d.title.clone()).collect();
    let mut candidates = BTreeSet::new();
    for t in &titles {
        for w in t {
            candidates.insert(w.clone());
        }
        for w in t.windows(2) {
            candidates.insert(format!("{} {}", w[0], w[1]));
        }
    }
    for threshold in [1, 3, 8, 20] {
        let mut want: Vec<(String, usize)> = Vec::new();
        for c in &candidates {
            let parts: Vec<&str> = c.split(' ').collect();
            let df = titles
                .iter()
                .filter(|t| t.windows(parts.len()).any(|w| w.iter().zip(&parts).all(|(a, b)| a == b)))
                .count();
            if df >= threshold {
                want.push((c.clone(), df));
            }
        }
        want.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let got = extract_labels(&titles, threshold).unwrap();
        let got: Vec<(String, usize)> = got.labels.into_iter().zip(got.frequencies).collect();
        assert_eq!(got, want, "threshold {threshold}");
    }
}

#[test]
fn awe_gradients_match_finite_differences() {
    let worst = awe_check();
    assert!(worst.error <= TOLERANCE, "{worst:?}");
    // Tokens absent from the batch get no gradient.
    let model = AweModel::init(vec!["aa".into(), "bb".into()], 1, 3, 5);
    let (_, g) = model.loss_and_grads(&[vec![0]], &[vec![0]]);
    assert!(g.table.row(1).iter().all(|&v| v == 0.0));
}

#[test]
fn awe_training_loss_is_non_increasing_early() {
    let (docs, labels, c) = label_training_set(400);
    let config = AweConfig { dim: 32, epochs: 5, batch_size: 128, ..AweConfig::default() };
    let out = train_awe(&docs, &labels, c, &config).unwrap();
    for w in out.loss_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-3, "{:?}", out.loss_trace);
    }
    assert!(out.loss_trace[4] < out.loss_trace[0]);
    let again = train_awe(&docs, &labels, c, &config).unwrap();
    assert_eq!(out.vocab, again.vocab);
    assert_eq!(out.loss_trace, again.loss_trace);
}

/// Independent TF-IDF: dense matrix, explicit formula.
fn dense_tfidf(docs: &[Vec<String>]) -> (Vec<String>, Vec<Vec<f64>>) {
    let vocab: Vec<String> = docs.iter().flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let n = docs.len() as f64;
    let mut df = BTreeMap::new();
    for d in docs {
        for t in d.iter().collect::<BTreeSet<_>>() {
            *df.entry(t.clone()).or_insert(0.0) += 1.0;
        }
    }
    let rows = docs
        .iter()
        .map(|d| {
            let mut row: Vec<f64> = vocab
                .iter()
                .map(|t| {
                    let tf = d.iter().filter(|x| *x == t).count() as f64;
                    tf * (((1.0 + n) / (1.0 + df[t])).ln() + 1.0)
                })
                .collect();
            let nr = norm(&row);
            row.iter_mut().for_each(|v| *v /= nr);
            row
        })
        .collect();
    (vocab, rows)
}

#[test]
fn tfidf_top_direction_matches_dense_power_iteration() {
    let docs: Vec<Vec<String>> = title_corpus(50, 4, 21).into_iter().map(|d| d.body).collect();
    let (vocab, x) = dense_tfidf(&docs);
    let model = TfIdfModel::fit(&docs, &TfIdfConfig { reduced_dim: 8, ..TfIdfConfig::default() }).unwrap();
    assert_eq!(model.vocab(), vocab.as_slice());

    // Dominant eigenvector of X^T X by plain power iteration.
    let v_len = vocab.len();
    let mut v = vec![1.0; v_len];
    for _ in 0..2000 {
        let xv: Vec<f64> = x.iter().map(|r| dot(r, &v)).collect();
        let mut next = vec![0.0; v_len];
        for (r, s) in x.iter().zip(&xv) {
            for (n, a) in next.iter_mut().zip(r) {
                *n += a * s;
            }
        }
        let nn = norm(&next);
        v = next.into_iter().map(|a| a / nn).collect();
    }
    let p = model.projection();
    let col0: Vec<f64> = (0..v_len).map(|i| p[(i, 0)]).collect();
    assert!(dot(&col0, &v).abs() >= 0.999, "cosine {}", dot(&col0, &v));

    // Orthonormal columns.
    for a in 0..8 {
        for b in 0..8 {
            let ca: Vec<f64> = (0..v_len).map(|i| p[(i, a)]).collect();
            let cb: Vec<f64> = (0..v_len).map(|i| p[(i, b)]).collect();
            let want = if a == b { 1.0 } else { 0.0 };
            assert!((dot(&ca, &cb) - want).abs() <= 1e-6);
        }
    }

    // Training documents encode to their row of the fitted reduced matrix.
    for (d, row) in docs.iter().zip(&x) {
        let enc = model.encode_f64(d).unwrap();
        for (c, e) in enc.iter().enumerate() {
            let want: f64 = (0..v_len).map(|i| row[i] * p[(i, c)]).sum();
            assert!((e - want).abs() <= 1e-6);
        }
    }
    let common = docs.iter().flatten().find(|t| docs.iter().all(|d| d.contains(t)));
    if let Some(t) = common {
        let min = vocab.iter().map(|v| model.idf(v).unwrap()).fold(f64::INFINITY, f64::min);
        assert_eq!(model.idf(t).unwrap(), min);
    }
}

#[test]
fn idf_is_minimal_for_ubiquitous_tokens() {
    let docs: Vec<Vec<String>> = vec!["salt pepper", "salt sugar", "salt flour pepper"]
        .into_iter()
        .map(|s| s.split(' ').map(String::from).collect())
        .collect();
    let model = TfIdfModel::fit(&docs, &TfIdfConfig { reduced_dim: 2, ..TfIdfConfig::default() }).unwrap();
    assert_eq!(model.idf("salt").unwrap(), 1.0);
    for t in ["pepper", "sugar", "flour"] {
        assert!(model.idf(t).unwrap() > 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn awe_output_lies_in_the_convex_hull(seed in any::<u64>(), n_tokens in 1usize..12, doc_len in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tokens: Vec<String> = (0..n_tokens).map(|i| format!("w{i}")).collect();
        let data: Vec<f32> = (0..n_tokens * 3).map(|_| rng.random_range(-2.0f32..2.0)).collect();
        let vocab = VocabEmbeddings::new(tokens.clone(), 3, data).unwrap();
        let doc: Vec<String> = (0..doc_len).map(|_| tokens[rng.random_range(0..n_tokens)].clone()).collect();
        let out = awe_encode(&vocab, &doc).unwrap();
        let out_norm = out.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        let max_norm = tokens
            .iter()
            .map(|t| vocab.get(t).unwrap().iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        prop_assert!(out_norm <= max_norm + 1e-6);
        let mut shuffled = doc.clone();
        shuffled.reverse();
        let back = awe_encode(&vocab, &shuffled).unwrap();
        for (a, b) in out.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn raising_the_threshold_never_adds_labels(seed in any::<u64>(), t in 1usize..6) {
        let docs = title_corpus(60, 4, seed);
        let titles: Vec<Vec<String>> = docs.into_iter().map(|d| d.title).collect();
        let low = extract_labels(&titles, t).map(|l| l.labels).unwrap_or_default();
        let high = extract_labels(&titles, t + 1).map(|l| l.labels).unwrap_or_default();
        prop_assert!(high.iter().all(|l| low.contains(l)));
    }
}
