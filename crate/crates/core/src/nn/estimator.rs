use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_params, mse, scores_matrix, Dense, ModelFile, Parameters, MODEL_FORMAT, MODEL_VERSION};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub users: usize,
    pub aps: usize,
    /// Features per user block.
    pub block: usize,
    pub hidden: usize,
    /// Channels of the per-user convolution front end; 0 disables it.
    pub conv_channels: usize,
}

impl EstimatorConfig {
    pub fn input_dim(&self) -> usize {
        self.users * self.block
    }

    fn front_dim(&self) -> usize {
        if self.conv_channels > 0 {
            self.users * self.conv_channels
        } else {
            self.input_dim()
        }
    }
}

/// Feedforward estimator: optional kernel-per-user convolution, two tanh
/// hidden layers, linear `K * L` score head.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorModel {
    cfg: EstimatorConfig,
    seed: u64,
    conv: Option<Dense>,
    h1: Dense,
    h2: Dense,
    out: Dense,
}

struct Cache {
    blocks: Vec<DVector<f64>>,
    conv_act: Vec<DVector<f64>>,
    a0: DVector<f64>,
    a1: DVector<f64>,
    a2: DVector<f64>,
}

fn tanh_grad(delta: &DVector<f64>, act: &DVector<f64>) -> DVector<f64> {
    delta.zip_map(act, |d, a| d * (1.0 - a * a))
}

impl EstimatorModel {
    pub fn new(cfg: EstimatorConfig, seed: u64) -> Result<Self> {
        if cfg.users == 0 || cfg.aps == 0 || cfg.block == 0 || cfg.hidden == 0 {
            return Err(Error::Dimension(format!("invalid estimator dimensions {cfg:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = (cfg.conv_channels > 0).then(|| Dense::init(cfg.conv_channels, cfg.block, &mut rng));
        let h1 = Dense::init(cfg.hidden, cfg.front_dim(), &mut rng);
        let h2 = Dense::init(cfg.hidden, cfg.hidden, &mut rng);
        let out = Dense::init(cfg.users * cfg.aps, cfg.hidden, &mut rng);
        Ok(Self { cfg, seed, conv, h1, h2, out })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn forward_cached(&self, features: &[f64]) -> Result<(DVector<f64>, Cache)> {
        if features.len() != self.cfg.input_dim() {
            return Err(Error::Dimension(format!("estimator expects {} features, got {}", self.cfg.input_dim(), features.len())));
        }
        let b = self.cfg.block;
        let mut blocks = Vec::new();
        let mut conv_act = Vec::new();
        let a0 = match &self.conv {
            Some(conv) => {
                let c = self.cfg.conv_channels;
                let mut a0 = DVector::zeros(self.cfg.users * c);
                for k in 0..self.cfg.users {
                    let xk = DVector::from_column_slice(&features[k * b..(k + 1) * b]);
                    let act = conv.forward(&xk).map(f64::tanh);
                    a0.rows_mut(k * c, c).copy_from(&act);
                    blocks.push(xk);
                    conv_act.push(act);
                }
                a0
            }
            None => DVector::from_column_slice(features),
        };
        let a1 = self.h1.forward(&a0).map(f64::tanh);
        let a2 = self.h2.forward(&a1).map(f64::tanh);
        let out = self.out.forward(&a2);
        Ok((out, Cache { blocks, conv_act, a0, a1, a2 }))
    }

    /// Flat `K * L` scores, row-major by user.
    pub fn forward(&self, features: &[f64]) -> Result<DVector<f64>> {
        Ok(self.forward_cached(features)?.0)
    }

    /// `K x L` score matrix for one feature vector.
    pub fn estimate(&self, features: &[f64]) -> Result<DMatrix<f64>> {
        Ok(scores_matrix(&self.forward(features)?, self.cfg.users, self.cfg.aps))
    }

    /// MSE against `target` and accumulation of its gradient into `grad`.
    pub fn loss_and_grad(&self, features: &[f64], target: &[f64], grad: &mut Self) -> Result<f64> {
        let (out, cache) = self.forward_cached(features)?;
        if target.len() != out.len() {
            return Err(Error::Dimension(format!("target has {} entries, expected {}", target.len(), out.len())));
        }
        let (loss, d_out) = mse(&out, target);
        let d_a2 = self.out.backward(&cache.a2, &d_out, &mut grad.out);
        let d_z2 = tanh_grad(&d_a2, &cache.a2);
        let d_a1 = self.h2.backward(&cache.a1, &d_z2, &mut grad.h2);
        let d_z1 = tanh_grad(&d_a1, &cache.a1);
        let d_a0 = self.h1.backward(&cache.a0, &d_z1, &mut grad.h1);
        if let (Some(conv), Some(gconv)) = (&self.conv, grad.conv.as_mut()) {
            let c = self.cfg.conv_channels;
            for k in 0..self.cfg.users {
                let d = tanh_grad(&d_a0.rows(k * c, c).into_owned(), &cache.conv_act[k]);
                conv.backward(&cache.blocks[k], &d, gconv);
            }
        }
        Ok(loss)
    }

    pub fn loss(&self, features: &[f64], target: &[f64]) -> Result<f64> {
        let out = self.forward(features)?;
        Ok(mse(&out, target).0)
    }

    pub fn to_file(&self, config: serde_json::Value, config_hash: String) -> ModelFile {
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            kind: "estimator".into(),
            users: self.cfg.users,
            aps: self.cfg.aps,
            input_dim: self.cfg.input_dim(),
            hidden: self.cfg.hidden,
            extra: self.cfg.conv_channels,
            seed: self.seed,
            config,
            config_hash,
            params: self.params().iter().map(|p| p.to_vec()).collect(),
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        file.check("estimator")?;
        if file.users == 0 || file.input_dim % file.users != 0 {
            return Err(Error::Format("estimator input dimension is not a whole number of user blocks".into()));
        }
        let cfg = EstimatorConfig {
            users: file.users,
            aps: file.aps,
            block: file.input_dim / file.users,
            hidden: file.hidden,
            conv_channels: file.extra,
        };
        let mut model = Self::new(cfg, file.seed)?;
        load_params(&mut model, &file.params)?;
        Ok(model)
    }
}

impl Parameters for EstimatorModel {
    fn params(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        if let Some(c) = &self.conv {
            v.extend(c.slices());
        }
        v.extend(self.h1.slices());
        v.extend(self.h2.slices());
        v.extend(self.out.slices());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        if let Some(c) = &mut self.conv {
            v.extend(c.slices_mut());
        }
        v.extend(self.h1.slices_mut());
        v.extend(self.h2.slices_mut());
        v.extend(self.out.slices_mut());
        v
    }
}
