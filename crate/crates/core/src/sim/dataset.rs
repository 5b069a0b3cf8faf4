use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc::allocate;
use crate::assoc::{brute_force_assoc, AssignmentMatrix, RateMatrix};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{train_estimator, train_predictor, EstimatorConfig, Hyper, PredictorConfig, Sample, SequenceSample, TrainReport};

use super::network::Network;
use super::online::{prepare, Models};
use super::scenario::{generate_scenario, scenario_seed, Period, Scenario, STREAM_TRAIN};
use super::{deliver, FeatureSpec};

pub const DATASET_FORMAT: &str = "owc-dataset";
pub const DATASET_VERSION: u32 = 1;

/// One period of one scenario with its oracle association and allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub t: usize,
    pub positions: Vec<Vector3<f64>>,
    /// bit/s
    pub demand_min: Vec<f64>,
    /// bit/s
    pub demand_max: Vec<f64>,
    /// Association-independent rates, `K x L` row-major, bit/s.
    pub rates: Vec<f64>,
    /// Serving AP of each user under the exhaustive association.
    pub oracle: Vec<usize>,
    /// Absent when every assignment leaves some user without a link.
    pub oracle_utility: Option<f64>,
    /// Allocated resources under the oracle association, `K x L` row-major.
    pub resources: Vec<f64>,
    /// bit/s
    pub achieved: Vec<f64>,
    /// bit/s
    pub sum_rate: f64,
    pub converged: bool,
    pub infeasible: bool,
    /// The label ignores capacity; set when the minimum demands it places on
    /// some AP exceed that AP's capacity.
    pub capacity_violated: bool,
}

impl Snapshot {
    pub fn rate_matrix(&self, aps: usize) -> Result<RateMatrix> {
        let users = self.positions.len();
        if self.rates.len() != users * aps {
            return Err(Error::Format(format!("snapshot {} has {} rates for {users} users and {aps} APs", self.t, self.rates.len())));
        }
        RateMatrix::new(DMatrix::from_row_slice(users, aps, &self.rates))
    }

    pub fn period(&self) -> Period {
        Period { positions: self.positions.clone(), demand_min: self.demand_min.clone(), demand_max: self.demand_max.clone() }
    }

    pub fn label(&self, aps: usize) -> Result<AssignmentMatrix> {
        AssignmentMatrix::new(self.oracle.clone(), aps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioRecord {
    pub index: usize,
    pub seed: u64,
    /// Chronological.
    pub snapshots: Vec<Snapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub seed: u64,
    pub users: usize,
    pub aps: usize,
    pub lv: usize,
    pub periods: usize,
    pub scenarios: usize,
    pub snapshots: usize,
    pub capacity_violations: usize,
    pub infeasible_periods: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub format: String,
    pub version: u32,
    pub meta: DatasetMeta,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub scenarios: Vec<ScenarioRecord>,
}

impl Dataset {
    /// Checks the header and returns the embedded configuration.
    pub fn run_config(&self) -> Result<RunConfig> {
        if self.format != DATASET_FORMAT || self.version != DATASET_VERSION {
            return Err(Error::Format(format!(
                "expected {DATASET_FORMAT} v{DATASET_VERSION}, found {} v{}",
                self.format, self.version
            )));
        }
        let cfg: RunConfig = serde_json::from_value(self.config.clone())?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Labels every period of `scenario` with the exhaustive association and
/// allocates under it.
pub fn run_offline(net: &Network, cfg: &RunConfig, scenario: &Scenario, index: usize) -> Result<ScenarioRecord> {
    let opts = cfg.alloc.options();
    let mut snapshots = Vec::with_capacity(scenario.periods.len());
    for (t, p) in prepare(net, cfg, scenario)?.into_iter().enumerate() {
        let (x, utility) = brute_force_assoc(&p.label)?;
        let served = net.served_rates(&p.links, &x)?;
        let a = allocate(&x, &served, &p.constraints, &opts)?;
        let achieved = deliver(&a.resources, &served, &p.constraints);
        let capacity_violated = (0..cfg.aps()).any(|l| {
            let need: f64 = (0..x.users()).filter(|&k| x.ap_of(k) == l).map(|k| p.constraints.r_min[k]).sum();
            need > p.constraints.capacity[l]
        });
        let sum_rate = achieved.iter().sum();
        log::info!("offline scenario={index} period={t} sum_rate_bps={sum_rate:.6e} converged={}", a.converged);
        snapshots.push(Snapshot {
            t,
            positions: p.period.positions,
            demand_min: p.period.demand_min,
            demand_max: p.period.demand_max,
            rates: row_major(p.label.matrix()),
            oracle: x.serving().to_vec(),
            oracle_utility: utility.is_finite().then_some(utility),
            resources: row_major(a.resources.matrix()),
            achieved,
            sum_rate,
            converged: a.converged,
            infeasible: a.diagnostics.infeasible,
            capacity_violated,
        });
    }
    Ok(ScenarioRecord { index, seed: scenario.seed, snapshots })
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Enough training scenarios for `nn.dataset_samples` snapshots. Scenarios
/// are labelled in parallel and kept in index order.
pub fn generate_dataset(cfg: &RunConfig) -> Result<Dataset> {
    cfg.validate()?;
    let net = Network::new(cfg)?;
    let periods = cfg.population.periods;
    let n = cfg.nn.dataset_samples.div_ceil(periods);
    let scenarios = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = generate_scenario(cfg, scenario_seed(cfg.seed, STREAM_TRAIN, i))?;
            run_offline(&net, cfg, &s, i)
        })
        .collect::<Result<Vec<_>>>()?;
    let snaps = scenarios.iter().flat_map(|s| &s.snapshots);
    let meta = DatasetMeta {
        seed: cfg.seed,
        users: cfg.population.users,
        aps: cfg.aps(),
        lv: cfg.geometry.lv,
        periods,
        scenarios: n,
        snapshots: n * periods,
        capacity_violations: snaps.clone().filter(|s| s.capacity_violated).count(),
        infeasible_periods: snaps.filter(|s| s.infeasible).count(),
    };
    Ok(Dataset {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        meta,
        config: cfg.to_json(),
        config_hash: cfg.hash(),
        scenarios,
    })
}

/// One estimator example per snapshot; the group is the scenario index.
pub fn estimator_samples(ds: &Dataset, cfg: &RunConfig) -> Result<Vec<Sample>> {
    let spec = FeatureSpec::new(cfg);
    let mut out = Vec::new();
    for s in &ds.scenarios {
        for snap in &s.snapshots {
            let rates = snap.rate_matrix(spec.aps)?;
            out.push(Sample {
                features: spec.build(&rates, &snap.period()),
                label: snap.label(spec.aps)?.one_hot(),
                group: s.index as u64,
            });
        }
    }
    Ok(out)
}

/// Sliding windows of oracle labels: `window` periods in, the next one out.
pub fn predictor_samples(ds: &Dataset, window: usize) -> Result<Vec<SequenceSample>> {
    let aps = ds.meta.aps;
    let mut out = Vec::new();
    for s in &ds.scenarios {
        let labels = s.snapshots.iter().map(|snap| Ok(snap.label(aps)?.one_hot())).collect::<Result<Vec<_>>>()?;
        for t in window..labels.len() {
            out.push(SequenceSample { history: labels[t - window..t].to_vec(), label: labels[t].clone(), group: s.index as u64 });
        }
    }
    Ok(out)
}

pub fn estimator_config(cfg: &RunConfig) -> EstimatorConfig {
    let spec = FeatureSpec::new(cfg);
    EstimatorConfig {
        users: spec.users,
        aps: spec.aps,
        block: spec.block(),
        hidden: cfg.estimator_hidden(),
        conv_channels: cfg.nn.conv_channels,
    }
}

pub fn predictor_config(cfg: &RunConfig) -> PredictorConfig {
    PredictorConfig { users: cfg.population.users, aps: cfg.aps(), hidden: cfg.predictor_hidden(), window: cfg.nn.window }
}

pub fn hyper(cfg: &RunConfig) -> Hyper {
    let n = &cfg.nn;
    Hyper {
        epochs: n.epochs,
        batch_size: n.batch_size,
        learning_rate: n.learning_rate,
        momentum: n.momentum,
        train_fraction: n.train_fraction,
        seed: cfg.seed,
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub models: Models,
    pub estimator_report: TrainReport,
    pub predictor_report: TrainReport,
}

/// Trains both models on `ds` with the hyperparameters of `cfg`.
pub fn train_models(ds: &Dataset, cfg: &RunConfig) -> Result<TrainedModels> {
    let h = hyper(cfg);
    log::info!("training estimator");
    let (estimator, estimator_report) = train_estimator(&estimator_samples(ds, cfg)?, estimator_config(cfg), &h)?;
    log::info!("training predictor");
    let (predictor, predictor_report) = train_predictor(&predictor_samples(ds, cfg.nn.window)?, predictor_config(cfg), &h)?;
    Ok(TrainedModels { models: Models { estimator, predictor }, estimator_report, predictor_report })
}
