//! One-hidden-layer projection tower:
//! linear -> batch norm -> ReLU -> dropout -> linear.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, RngCore};

use crate::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and dropout.
    Train,
    /// Running statistics, no dropout; deterministic.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TowerParams {
    /// `hidden x input`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub bn_gamma: Array1<f64>,
    pub bn_beta: Array1<f64>,
    pub bn_running_mean: Array1<f64>,
    pub bn_running_var: Array1<f64>,
    /// `output x hidden`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Gradients for the trainable parameters (running statistics excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct TowerGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub bn_gamma: Array1<f64>,
    pub bn_beta: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl TowerGrads {
    pub fn slices(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.bn_gamma.as_slice().expect("standard layout"),
            self.bn_beta.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }
}

/// Intermediate values of a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct TowerCache {
    x: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    pre_relu: Array2<f64>,
    dropout_mask: Option<Array2<f64>>,
    hidden: Array2<f64>,
    batch_mean: Array1<f64>,
    batch_var_unbiased: Array1<f64>,
}

fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

fn uniform_vector(len: usize, bound: f64, rng: &mut impl Rng) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || rng.random_range(-bound..bound))
}

impl TowerParams {
    /// Seeded init: weights and biases uniform in `+-1/sqrt(fan_in)`, batch
    /// norm as the identity transform.
    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        let b_in = 1.0 / (input as f64).sqrt();
        let b_hidden = 1.0 / (hidden as f64).sqrt();
        let w1 = uniform_matrix(hidden, input, b_in, rng);
        let b1 = uniform_vector(hidden, b_in, rng);
        let w2 = uniform_matrix(output, hidden, b_hidden, rng);
        let b2 = uniform_vector(output, b_hidden, rng);
        Self {
            w1,
            b1,
            bn_gamma: Array1::ones(hidden),
            bn_beta: Array1::zeros(hidden),
            bn_running_mean: Array1::zeros(hidden),
            bn_running_var: Array1::ones(hidden),
            w2,
            b2,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    /// Checks shapes, finiteness and non-negative running variance.
    pub fn validate(&self) -> Result<()> {
        let h = self.hidden_dim();
        let shapes_ok = self.b1.len() == h
            && self.bn_gamma.len() == h
            && self.bn_beta.len() == h
            && self.bn_running_mean.len() == h
            && self.bn_running_var.len() == h
            && self.w2.ncols() == h
            && self.b2.len() == self.w2.nrows();
        if !shapes_ok {
            return Err(Error::ShapeMismatch("tower parameter shapes are inconsistent".into()));
        }
        let finite = self
            .arrays()
            .iter()
            .all(|a| a.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::ShapeMismatch("tower parameters contain non-finite values".into()));
        }
        if self.bn_running_var.iter().any(|&v| v < 0.0) {
            return Err(Error::ShapeMismatch("negative running variance".into()));
        }
        Ok(())
    }

    /// All eight arrays as flat slices, in checkpoint order.
    pub fn arrays(&self) -> [&[f64]; 8] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.bn_gamma.as_slice().expect("standard layout"),
            self.bn_beta.as_slice().expect("standard layout"),
            self.bn_running_mean.as_slice().expect("standard layout"),
            self.bn_running_var.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    /// Lengths of the buffers returned by [`TowerParams::trainable_mut`].
    pub fn trainable_sizes(&self) -> [usize; 6] {
        [
            self.w1.len(),
            self.b1.len(),
            self.bn_gamma.len(),
            self.bn_beta.len(),
            self.w2.len(),
            self.b2.len(),
        ]
    }

    /// The six trainable arrays, matching [`TowerGrads::slices`].
    pub fn trainable_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.bn_gamma.as_slice_mut().expect("standard layout"),
            self.bn_beta.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), found: x.ncols() });
        }
        Ok(())
    }

    fn first_linear(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w1.t()) + &self.b1
    }

    fn second_linear(&self, h: &Array2<f64>) -> Array2<f64> {
        h.dot(&self.w2.t()) + &self.b2
    }

    /// Deterministic forward pass using running statistics.
    pub fn forward_eval(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut z = self.first_linear(&x);
        let scale: Array1<f64> = Zip::from(&self.bn_gamma)
            .and(&self.bn_running_var)
            .map_collect(|g, v| g / (v + BN_EPS).sqrt());
        let shift: Array1<f64> = Zip::from(&self.bn_beta)
            .and(&self.bn_running_mean)
            .and(&scale)
            .map_collect(|b, m, s| b - m * s);
        for mut row in z.rows_mut() {
            Zip::from(&mut row).and(&scale).and(&shift).for_each(|v, s, t| {
                *v = (*v * s + t).max(0.0);
            });
        }
        Ok(self.second_linear(&z))
    }

    /// Forward pass with batch statistics and inverted dropout; returns the
    /// output and the cache needed by [`TowerParams::backward`].
    pub fn forward_train(
        &self,
        x: ArrayView2<f64>,
        dropout_rate: f64,
        rng: &mut dyn RngCore,
    ) -> Result<(Array2<f64>, TowerCache)> {
        self.check_input(&x)?;
        let b = x.nrows();
        if b < 2 {
            return Err(Error::BatchTooSmall { rows: b });
        }
        let z = self.first_linear(&x);
        let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = &z - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let xhat = &centered * &inv_std;
        let pre_relu = &xhat * &self.bn_gamma + &self.bn_beta;
        let mut hidden = pre_relu.mapv(|v| v.max(0.0));
        let dropout_mask = if dropout_rate > 0.0 {
            let keep = 1.0 / (1.0 - dropout_rate);
            let mask = Array2::from_shape_simple_fn(hidden.raw_dim(), || {
                if rng.random::<f64>() < dropout_rate {
                    0.0
                } else {
                    keep
                }
            });
            hidden *= &mask;
            Some(mask)
        } else {
            None
        };
        let out = self.second_linear(&hidden);
        let unbiased = var.mapv(|v| v * b as f64 / (b as f64 - 1.0));
        let cache = TowerCache {
            x: x.to_owned(),
            xhat,
            inv_std,
            pre_relu,
            dropout_mask,
            hidden,
            batch_mean: mean,
            batch_var_unbiased: unbiased,
        };
        Ok((out, cache))
    }

    /// Gradients of a scalar loss given its gradient w.r.t. the tower output.
    pub fn backward(&self, cache: &TowerCache, d_out: ArrayView2<f64>) -> TowerGrads {
        let b = d_out.nrows() as f64;
        let w2 = d_out.t().dot(&cache.hidden);
        let b2 = d_out.sum_axis(Axis(0));
        let mut d_hidden = d_out.dot(&self.w2);
        if let Some(mask) = &cache.dropout_mask {
            d_hidden *= mask;
        }
        Zip::from(&mut d_hidden).and(&cache.pre_relu).for_each(|d, &y| {
            if y <= 0.0 {
                *d = 0.0;
            }
        });
        let d_pre = d_hidden;
        let bn_gamma = (&d_pre * &cache.xhat).sum_axis(Axis(0));
        let bn_beta = d_pre.sum_axis(Axis(0));
        let d_xhat = &d_pre * &self.bn_gamma;
        let sum_dxhat = d_xhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&d_xhat * &cache.xhat).sum_axis(Axis(0));
        let mut d_z = d_xhat * b - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat;
        d_z *= &cache.inv_std.mapv(|s| s / b);
        let w1 = d_z.t().dot(&cache.x);
        let b1 = d_z.sum_axis(Axis(0));
        TowerGrads { w1, b1, bn_gamma, bn_beta, w2, b2 }
    }

    /// Exponential moving update of the running statistics from a train-mode pass.
    pub fn update_running_stats(&mut self, cache: &TowerCache) {
        Zip::from(&mut self.bn_running_mean).and(&cache.batch_mean).for_each(|r, &m| {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        });
        Zip::from(&mut self.bn_running_var).and(&cache.batch_var_unbiased).for_each(|r, &v| {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        });
    }
}

/// Runs a tower in either mode. `noise` is only consulted for train-mode dropout.
pub fn tower_forward(
    params: &TowerParams,
    x: ArrayView2<f64>,
    mode: Mode,
    dropout_rate: f64,
    noise: &mut dyn RngCore,
) -> Result<Array2<f64>> {
    match mode {
        Mode::Eval => params.forward_eval(x),
        Mode::Train => params.forward_train(x, dropout_rate, noise).map(|(out, _)| out),
    }
}
