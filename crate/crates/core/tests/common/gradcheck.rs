//! Central finite differences against the analytic gradients of the triplet
//! head and the AWE trainer.

#![allow(dead_code)]

use cknn_core::textenc::AweModel;
use cknn_core::triplet::{batch_gradients, TowerGrads, TowerParams, TripletConfig, TripletModel};
use cknn_core::Modality;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;
/// Denominator floor for relative errors. Gradients below it (the first
/// bias under batch norm is exactly zero) are compared in absolute terms.
pub const FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Worst error found and where.
#[derive(Debug, Clone, Default)]
pub struct Worst {
    pub error: f64,
    pub at: String,
    pub checked: usize,
}

impl Worst {
    fn record(&mut self, analytic: f64, numeric: f64, at: impl FnOnce() -> String) {
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if e > self.error || self.at.is_empty() {
            self.error = e;
            self.at = format!("{} (analytic {analytic:e}, numeric {numeric:e})", at());
        }
    }
}

/// Input 6 (image) and 7 (text), hidden 5, output 4, batch 8, dropout off.
pub fn tiny_model(text_anchor: bool) -> TripletModel {
    let config = TripletConfig {
        output_dim: 4,
        hidden_dim: 5,
        batch_size: 8,
        dropout_rate: 0.0,
        text_anchor,
        seed: 11,
        ..TripletConfig::default()
    };
    TripletModel::init(6, 7, config).unwrap()
}

/// Rows 2 and 3 share a text id, so mining has to skip a duplicate.
pub fn tiny_batch(seed: u64) -> (Array2<f64>, Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xi = Array2::from_shape_simple_fn((8, 6), || rng.random_range(-1.0..1.0));
    let xt = Array2::from_shape_simple_fn((8, 7), || rng.random_range(-1.0..1.0));
    (xi, xt, vec![0, 1, 2, 2, 3, 4, 5, 6])
}

fn tower_mut(model: &mut TripletModel, modality: Modality) -> &mut TowerParams {
    match modality {
        Modality::Image => &mut model.image_tower,
        Modality::Text => &mut model.text_tower,
    }
}

/// Every trainable parameter of both towers, with the mined negatives held fixed.
pub fn triplet_check(model: &TripletModel, xi: ArrayView2<f64>, xt: ArrayView2<f64>, ids: &[usize]) -> Worst {
    let analytic = batch_gradients(model, xi, xt, ids, None).unwrap();
    assert!(analytic.loss > 0.0, "the check needs active hinges");
    let fixed = analytic.negatives.clone();
    let loss_at = |m: &TripletModel| batch_gradients(m, xi, xt, ids, Some(&fixed)).unwrap().loss;
    let mut worst = Worst::default();
    for (modality, grads) in [(Modality::Image, &analytic.image), (Modality::Text, &analytic.text)] {
        for (p, gp) in TowerGrads::slices(grads).iter().enumerate() {
            for (i, &g) in gp.iter().enumerate() {
                let mut plus = model.clone();
                tower_mut(&mut plus, modality).trainable_mut()[p][i] += STEP;
                let mut minus = model.clone();
                tower_mut(&mut minus, modality).trainable_mut()[p][i] -= STEP;
                let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * STEP);
                worst.record(g, numeric, || format!("{modality} tower buffer {p} entry {i}"));
            }
        }
    }
    worst
}

/// Tiny AWE model: 5 tokens, 3 labels, dim 4, a 3-token document with a
/// repeated token and a second document.
type Buffer = fn(&mut AweModel) -> &mut [f64];

pub fn awe_check() -> Worst {
    let tokens: Vec<String> = ["aa", "bb", "cc", "dd", "ee"].iter().map(|s| s.to_string()).collect();
    let mut model = AweModel::init(tokens, 3, 4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    model.head_b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    let docs = vec![vec![0, 2, 2], vec![1, 3, 4]];
    let labels = vec![vec![0, 2], vec![1]];
    let (_, grads) = model.loss_and_grads(&docs, &labels);
    let loss = |m: &AweModel| m.loss_and_grads(&docs, &labels).0;
    let mut worst = Worst::default();
    let buffers: [(&str, &[f64], Buffer); 3] = [
        ("table", grads.table.as_slice().unwrap(), |m| m.table.as_slice_mut().unwrap()),
        ("head_w", grads.head_w.as_slice().unwrap(), |m| m.head_w.as_slice_mut().unwrap()),
        ("head_b", grads.head_b.as_slice().unwrap(), |m| m.head_b.as_slice_mut().unwrap()),
    ];
    for (name, analytic, get) in buffers {
        for (i, &g) in analytic.iter().enumerate() {
            let mut plus = model.clone();
            get(&mut plus)[i] += STEP;
            let mut minus = model.clone();
            get(&mut minus)[i] -= STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
            worst.record(g, numeric, || format!("{name} entry {i}"));
        }
    }
    worst
}
