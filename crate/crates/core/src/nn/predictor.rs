use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_params, mse, scores_matrix, Dense, ModelFile, Parameters, MODEL_FORMAT, MODEL_VERSION};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub users: usize,
    pub aps: usize,
    pub hidden: usize,
    /// Number of past periods consumed per prediction.
    pub window: usize,
}

impl PredictorConfig {
    pub fn input_dim(&self) -> usize {
        self.users * self.aps
    }
}

/// Single-layer LSTM over the last `window` assignments, linear score head on
/// the final hidden state.
///
/// Gate rows are stacked as input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    cfg: PredictorConfig,
    seed: u64,
    wx: DMatrix<f64>,
    wh: DMatrix<f64>,
    b: DVector<f64>,
    out: Dense,
}

struct Step {
    x: DVector<f64>,
    h_prev: DVector<f64>,
    c_prev: DVector<f64>,
    i: DVector<f64>,
    f: DVector<f64>,
    g: DVector<f64>,
    o: DVector<f64>,
    c: DVector<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl PredictorModel {
    pub fn new(cfg: PredictorConfig, seed: u64) -> Result<Self> {
        if cfg.users == 0 || cfg.aps == 0 || cfg.hidden == 0 || cfg.window == 0 {
            return Err(Error::Dimension(format!("invalid predictor dimensions {cfg:?}")));
        }
        let (h, n) = (cfg.hidden, cfg.input_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bx = (6.0 / (n + h) as f64).sqrt();
        let wx = DMatrix::from_fn(4 * h, n, |_, _| rng.gen_range(-bx..bx));
        let bh = (6.0 / (2 * h) as f64).sqrt();
        let wh = DMatrix::from_fn(4 * h, h, |_, _| rng.gen_range(-bh..bh));
        let out = Dense::init(n, h, &mut rng);
        Ok(Self { cfg, seed, wx, wh, b: DVector::zeros(4 * h), out })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn run(&self, history: &[Vec<f64>]) -> Result<(DVector<f64>, Vec<Step>)> {
        if history.len() != self.cfg.window {
            return Err(Error::Dimension(format!("predictor needs a history of {} periods, got {}", self.cfg.window, history.len())));
        }
        let h = self.cfg.hidden;
        let mut h_t = DVector::zeros(h);
        let mut c_t = DVector::zeros(h);
        let mut steps = Vec::with_capacity(history.len());
        for xt in history {
            if xt.len() != self.cfg.input_dim() {
                return Err(Error::Dimension(format!("history entry has {} values, expected {}", xt.len(), self.cfg.input_dim())));
            }
            let x = DVector::from_column_slice(xt);
            let z = &self.wx * &x + &self.wh * &h_t + &self.b;
            let i = z.rows(0, h).map(sigmoid);
            let f = z.rows(h, h).map(sigmoid);
            let g = z.rows(2 * h, h).map(f64::tanh);
            let o = z.rows(3 * h, h).map(sigmoid);
            let c = f.component_mul(&c_t) + i.component_mul(&g);
            let h_new = o.component_mul(&c.map(f64::tanh));
            steps.push(Step { x, h_prev: h_t, c_prev: c_t, i, f, g, o, c: c.clone() });
            h_t = h_new;
            c_t = c;
        }
        Ok((self.out.forward(&h_t), steps))
    }

    pub fn forward(&self, history: &[Vec<f64>]) -> Result<DVector<f64>> {
        Ok(self.run(history)?.0)
    }

    /// `K x L` scores for the period after the last entry of `history`.
    pub fn predict_next(&self, history: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        Ok(scores_matrix(&self.forward(history)?, self.cfg.users, self.cfg.aps))
    }

    /// MSE against `target`; backpropagates through every step of the window.
    pub fn loss_and_grad(&self, history: &[Vec<f64>], target: &[f64], grad: &mut Self) -> Result<f64> {
        let (out, steps) = self.run(history)?;
        if target.len() != out.len() {
            return Err(Error::Dimension(format!("target has {} entries, expected {}", target.len(), out.len())));
        }
        let (loss, d_out) = mse(&out, target);
        let h = self.cfg.hidden;
        let last = steps.last().expect("window is nonzero");
        let h_last = last.o.component_mul(&last.c.map(f64::tanh));
        let mut dh = self.out.backward(&h_last, &d_out, &mut grad.out);
        let mut dc = DVector::zeros(h);
        for s in steps.iter().rev() {
            let tc = s.c.map(f64::tanh);
            let d_o = dh.component_mul(&tc);
            dc += dh.component_mul(&s.o).component_mul(&tc.map(|t| 1.0 - t * t));
            let mut dz = DVector::zeros(4 * h);
            for j in 0..h {
                let (i, f, g, o) = (s.i[j], s.f[j], s.g[j], s.o[j]);
                dz[j] = dc[j] * g * i * (1.0 - i);
                dz[h + j] = dc[j] * s.c_prev[j] * f * (1.0 - f);
                dz[2 * h + j] = dc[j] * i * (1.0 - g * g);
                dz[3 * h + j] = d_o[j] * o * (1.0 - o);
            }
            grad.wx.ger(1.0, &dz, &s.x, 1.0);
            grad.wh.ger(1.0, &dz, &s.h_prev, 1.0);
            grad.b += &dz;
            dh = self.wh.tr_mul(&dz);
            dc = dc.component_mul(&s.f);
        }
        Ok(loss)
    }

    pub fn loss(&self, history: &[Vec<f64>], target: &[f64]) -> Result<f64> {
        Ok(mse(&self.forward(history)?, target).0)
    }

    pub fn to_file(&self, config: serde_json::Value, config_hash: String) -> ModelFile {
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            kind: "predictor".into(),
            users: self.cfg.users,
            aps: self.cfg.aps,
            input_dim: self.cfg.input_dim(),
            hidden: self.cfg.hidden,
            extra: self.cfg.window,
            seed: self.seed,
            config,
            config_hash,
            params: self.params().iter().map(|p| p.to_vec()).collect(),
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        file.check("predictor")?;
        if file.input_dim != file.users * file.aps {
            return Err(Error::Format("predictor input dimension must equal users * aps".into()));
        }
        let cfg = PredictorConfig { users: file.users, aps: file.aps, hidden: file.hidden, window: file.extra };
        let mut model = Self::new(cfg, file.seed)?;
        load_params(&mut model, &file.params)?;
        Ok(model)
    }
}

impl Parameters for PredictorModel {
    fn params(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![self.wx.as_slice(), self.wh.as_slice(), self.b.as_slice()];
        v.extend(self.out.slices());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![self.wx.as_mut_slice(), self.wh.as_mut_slice(), self.b.as_mut_slice()];
        v.extend(self.out.slices_mut());
        v
    }
}
