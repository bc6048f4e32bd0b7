mod common;

use cknn_core::synth::{generate, SynthSpec};
use cknn_core::triplet::{
    load_checkpoint, mine_hard_negative, project, save_checkpoint, train_triplet, triplet_loss, TripletConfig,
};
use cknn_core::Modality;
use common::gradcheck::{tiny_batch, tiny_model, triplet_check, TOLERANCE};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn image_anchor_gradients_match_finite_differences() {
    let (xi, xt, ids) = tiny_batch(12);
    let worst = triplet_check(&tiny_model(false), xi.view(), xt.view(), &ids);
    assert!(worst.error <= TOLERANCE, "{worst:?}");
}

#[test]
fn text_anchor_gradients_match_finite_differences() {
    let (xi, xt, ids) = tiny_batch(13);
    let worst = triplet_check(&tiny_model(true), xi.view(), xt.view(), &ids);
    assert!(worst.error <= TOLERANCE, "{worst:?}");
}

#[test]
fn unit_values() {
    let a = [0.3, -1.2, 2.0];
    let p = [1.0, 1.0, 0.5];
    assert_eq!(triplet_loss(&a, &p, &p, 0.3).unwrap(), 0.3);
    assert_eq!(triplet_loss(&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0], 0.3).unwrap(), 0.0);
    assert_eq!(triplet_loss(&a, &p, &p, 0.0).unwrap(), 0.0);
}

#[test]
fn checkpoint_file_round_trip_and_eval_equivalence() {
    let spec = SynthSpec { n_classes: 8, items_per_class: 20, latent_dim: 4, image_dim: 9, text_dim: 7, ..SynthSpec::default() };
    let data = generate(&spec).unwrap();
    let config = TripletConfig { output_dim: 8, hidden_dim: 16, batch_size: 16, epochs: 2, ..TripletConfig::default() };
    let model = train_triplet(&data.train, &config).unwrap().model;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tpl");
    save_checkpoint(&model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.trained_epochs, 2);
    let a = project(&model, data.test.images(), Modality::Image).unwrap();
    let b = project(&back, data.test.images(), Modality::Image).unwrap();
    for r in 0..a.len() {
        for (x, y) in a.row(r).iter().zip(b.row(r)) {
            assert!((x - y).abs() <= 1e-4 * (1.0 + x.abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mined_negative_has_a_different_text(seed in any::<u64>(), b in 2usize..40, n_ids in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = Array2::from_shape_simple_fn((b, 5), || rng.random_range(-1.0..1.0));
        let ids: Vec<usize> = (0..b).map(|_| rng.random_range(0..n_ids)).collect();
        let anchor = batch.row(0).mapv(|v| v * 0.5 + 0.1);
        match mine_hard_negative(anchor.view(), batch.view(), &ids, 0) {
            Ok(j) => prop_assert_ne!(ids[j], ids[0]),
            Err(_) => prop_assert!(ids.iter().all(|&i| i == ids[0])),
        }
    }

    #[test]
    fn loss_is_non_negative(seed in any::<u64>(), margin in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = || (0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (a, p, n) = (v(), v(), v());
        if let Ok(l) = triplet_loss(&a, &p, &n, margin) {
            prop_assert!(l >= 0.0);
        }
    }
}
