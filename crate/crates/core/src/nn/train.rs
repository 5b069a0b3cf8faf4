use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EstimatorConfig, EstimatorModel, Parameters, PredictorConfig, PredictorModel};
use crate::error::{Error, Result};

/// Mini-batch gradient descent with momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Fraction of groups (scenarios) used for training; the rest validates.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self { epochs: 40, batch_size: 32, learning_rate: 1e-2, momentum: 0.9, train_fraction: 0.9, seed: 1 }
    }
}

/// One estimator example: features of a period and its one-hot label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: Vec<f64>,
    /// Scenario the example came from; the split never separates a group.
    pub group: u64,
}

/// One predictor example: `window` past assignments and the next one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub history: Vec<Vec<f64>>,
    pub label: Vec<f64>,
    pub group: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_mse: Vec<f64>,
    /// Empty when the split leaves no validation group.
    pub val_mse: Vec<f64>,
    pub epochs: usize,
    pub dataset_size: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub split_ratio: f64,
    pub seed: u64,
}

/// Splits sample indices by group: groups are shuffled with `seed` and the
/// first `fraction` of them train.
pub(crate) fn split_by_group(groups: &[u64], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut unique: Vec<u64> = groups.to_vec();
    unique.sort_unstable();
    unique.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_5b11_u64);
    unique.shuffle(&mut rng);
    let mut n_train = (fraction * unique.len() as f64).round() as usize;
    n_train = n_train.clamp(1, unique.len().max(1));
    if fraction < 1.0 && unique.len() > 1 && n_train == unique.len() {
        n_train -= 1;
    }
    let train_groups: std::collections::HashSet<u64> = unique[..n_train].iter().copied().collect();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, g) in groups.iter().enumerate() {
        if train_groups.contains(g) {
            train.push(i);
        } else {
            val.push(i);
        }
    }
    (train, val)
}

fn mean_loss<M, S>(model: &M, samples: &[S], idx: &[usize], loss: &impl Fn(&M, &S) -> Result<f64>) -> Result<f64> {
    let mut acc = 0.0;
    for &i in idx {
        acc += loss(model, &samples[i])?;
    }
    Ok(acc / idx.len().max(1) as f64)
}

fn fit<M: Parameters, S>(
    model: &mut M,
    samples: &[S],
    groups: &[u64],
    hyper: &Hyper,
    loss_grad: impl Fn(&M, &S, &mut M) -> Result<f64>,
    loss: impl Fn(&M, &S) -> Result<f64>,
) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::Training("dataset is empty".into()));
    }
    if hyper.batch_size == 0 || !(hyper.learning_rate > 0.0) || !(0.0..1.0).contains(&hyper.momentum) {
        return Err(Error::Training(format!("invalid hyperparameters {hyper:?}")));
    }
    let (train, val) = split_by_group(groups, hyper.train_fraction, hyper.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut velocity = model.zeros_like();
    let mut order = train.clone();
    let mut report = TrainReport {
        train_mse: Vec::with_capacity(hyper.epochs),
        val_mse: Vec::with_capacity(hyper.epochs),
        epochs: hyper.epochs,
        dataset_size: samples.len(),
        train_size: train.len(),
        val_size: val.len(),
        split_ratio: hyper.train_fraction,
        seed: hyper.seed,
    };
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(hyper.batch_size).enumerate() {
            let mut grad = model.zeros_like();
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += loss_grad(model, &samples[i], &mut grad)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss {batch_loss} at epoch {epoch}, batch {b}")));
            }
            let scale = 1.0 / batch.len() as f64;
            for ((p, g), v) in model.params_mut().into_iter().zip(grad.params()).zip(velocity.params_mut()) {
                for j in 0..p.len() {
                    v[j] = hyper.momentum * v[j] - hyper.learning_rate * g[j] * scale;
                    p[j] += v[j];
                }
            }
        }
        let train_mse = mean_loss(model, samples, &train, &loss)?;
        if !train_mse.is_finite() || !model.is_finite() {
            return Err(Error::Training(format!("training diverged at epoch {epoch} (train MSE {train_mse})")));
        }
        report.train_mse.push(train_mse);
        if !val.is_empty() {
            report.val_mse.push(mean_loss(model, samples, &val, &loss)?);
        }
        log::info!(
            "epoch {epoch}/{} train_mse={train_mse:.6e} val_mse={}",
            hyper.epochs,
            report.val_mse.last().map_or("-".to_string(), |v| format!("{v:.6e}"))
        );
    }
    Ok(report)
}

/// Trains a fresh estimator on `samples`, seeded from `hyper.seed`.
pub fn train_estimator(samples: &[Sample], cfg: EstimatorConfig, hyper: &Hyper) -> Result<(EstimatorModel, TrainReport)> {
    let mut model = EstimatorModel::new(cfg, hyper.seed)?;
    let groups: Vec<u64> = samples.iter().map(|s| s.group).collect();
    let report = fit(
        &mut model,
        samples,
        &groups,
        hyper,
        |m, s, g| m.loss_and_grad(&s.features, &s.label, g),
        |m, s| m.loss(&s.features, &s.label),
    )?;
    Ok((model, report))
}

pub fn train_predictor(samples: &[SequenceSample], cfg: PredictorConfig, hyper: &Hyper) -> Result<(PredictorModel, TrainReport)> {
    let mut model = PredictorModel::new(cfg, hyper.seed)?;
    let groups: Vec<u64> = samples.iter().map(|s| s.group).collect();
    let report = fit(
        &mut model,
        samples,
        &groups,
        hyper,
        |m, s, g| m.loss_and_grad(&s.history, &s.label, g),
        |m, s| m.loss(&s.history, &s.label),
    )?;
    Ok((model, report))
}
