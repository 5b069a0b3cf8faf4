//! A small neural stack trained from scratch: a feedforward estimator of the
//! current assignment and a gated recurrent predictor of the next one.

mod estimator;
mod predictor;
mod train;

pub use estimator::{EstimatorConfig, EstimatorModel};
pub use predictor::{PredictorConfig, PredictorModel};
pub use train::{train_estimator, train_predictor, Hyper, Sample, SequenceSample, TrainReport};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assoc::AssignmentMatrix;
use crate::error::{Error, Result};

/// Flat views over every trainable array of a model, in a fixed order.
pub trait Parameters: Clone {
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    /// Same shapes, every parameter zero. Used as a gradient buffer.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

/// Affine layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Dense {
    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn init(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (inp + out) as f64).sqrt();
        Self { w: DMatrix::from_fn(out, inp, |_, _| rng.gen_range(-bound..bound)), b: DVector::zeros(out) }
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.w * x + &self.b
    }

    /// Accumulates `dW += delta x^T`, `db += delta` and returns `W^T delta`.
    pub fn backward(&self, x: &DVector<f64>, delta: &DVector<f64>, grad: &mut Dense) -> DVector<f64> {
        grad.w.ger(1.0, delta, x, 1.0);
        grad.b += delta;
        self.w.tr_mul(delta)
    }

    pub fn slices(&self) -> [&[f64]; 2] {
        [self.w.as_slice(), self.b.as_slice()]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 2] {
        [self.w.as_mut_slice(), self.b.as_mut_slice()]
    }
}

/// Row-wise argmax of a `K x L` score matrix, ties to the lowest AP index.
pub fn round_to_assignment(scores: &DMatrix<f64>) -> AssignmentMatrix {
    let serving = (0..scores.nrows())
        .map(|k| {
            let row = scores.row(k);
            let mut best = 0;
            for l in 1..row.len() {
                if row[l] > row[best] {
                    best = l;
                }
            }
            best
        })
        .collect();
    AssignmentMatrix::new(serving, scores.ncols()).expect("argmax index is always in range")
}

pub(crate) fn scores_matrix(flat: &DVector<f64>, users: usize, aps: usize) -> DMatrix<f64> {
    DMatrix::from_fn(users, aps, |k, l| flat[k * aps + l])
}

/// Mean squared error and its gradient with respect to `pred`.
pub(crate) fn mse(pred: &DVector<f64>, target: &[f64]) -> (f64, DVector<f64>) {
    let n = pred.len() as f64;
    let diff = DVector::from_fn(pred.len(), |i, _| pred[i] - target[i]);
    let loss = diff.norm_squared() / n;
    (loss, diff * (2.0 / n))
}

pub const MODEL_FORMAT: &str = "owc-model";
pub const MODEL_VERSION: u32 = 1;

/// On-disk model: dimensions, seed, config hash and every parameter array in
/// [`Parameters::params`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub users: usize,
    pub aps: usize,
    pub input_dim: usize,
    pub hidden: usize,
    /// Estimator: per-user convolution channels (0 = none). Predictor: window.
    pub extra: usize,
    pub seed: u64,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub params: Vec<Vec<f64>>,
}

impl ModelFile {
    pub(crate) fn check(&self, kind: &str) -> Result<()> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::Format(format!("expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}", self.format, self.version)));
        }
        if self.kind != kind {
            return Err(Error::Format(format!("expected a {kind} model, found {}", self.kind)));
        }
        Ok(())
    }
}

pub(crate) fn load_params<M: Parameters>(model: &mut M, arrays: &[Vec<f64>]) -> Result<()> {
    let mut slots = model.params_mut();
    if slots.len() != arrays.len() {
        return Err(Error::Format(format!("expected {} parameter arrays, found {}", slots.len(), arrays.len())));
    }
    for (i, (slot, src)) in slots.iter_mut().zip(arrays).enumerate() {
        if slot.len() != src.len() {
            return Err(Error::Format(format!("parameter array {i} has {} values, expected {}", src.len(), slot.len())));
        }
        slot.copy_from_slice(src);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    #[test]
    fn rounding_cases() {
        let x = round_to_assignment(&DMatrix::from_row_slice(1, 2, &[0.1, 0.9]));
        assert_eq!(x.serving(), &[1]);
        let x = round_to_assignment(&DMatrix::from_row_slice(2, 3, &[0.5, 0.5, 0.2, 0.3, 0.7, 0.7]));
        assert_eq!(x.serving(), &[0, 1]);
    }

    proptest! {
        #[test]
        fn rounding_yields_one_ap_per_user(k in 1usize..8, l in 1usize..6, seed in 0u64..10_000) {
            use rand::SeedableRng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scores = DMatrix::from_fn(k, l, |_, _| rng.gen_range(-3.0..3.0));
            let x = round_to_assignment(&scores);
            let m = x.to_matrix();
            for row in 0..k {
                prop_assert_eq!(m.row(row).sum(), 1.0);
                let chosen = x.ap_of(row);
                prop_assert!(scores.row(row).iter().all(|&s| s <= scores[(row, chosen)]));
            }
        }
    }
}
