//! Discrete-time simulation: scenarios, the offline dataset, the online
//! estimate-predict-allocate loop, baselines and parameter sweeps.

mod dataset;
mod network;
mod online;
mod scenario;
mod sweep;

pub use dataset::{
    estimator_config, estimator_samples, generate_dataset, hyper, predictor_config, predictor_samples, run_offline, train_models, Dataset,
    DatasetMeta, ScenarioRecord, Snapshot, TrainedModels, DATASET_FORMAT, DATASET_VERSION,
};
pub use network::{constraints, Links, Network};
pub use online::{run_all, run_baseline_distance, run_baseline_p2, run_online, run_oracle, scenario_means, Models, Outcome};
pub use scenario::{generate_scenario, scenario_seed, Period, Scenario, STREAM_EVAL, STREAM_TRAIN};
pub use sweep::{spearman, sweep, SweepKind, SweepRow, SweepTable};

use serde::{Deserialize, Serialize};

use crate::alloc::{Constraints, ResourceMatrix};
use crate::assoc::RateMatrix;
use crate::config::RunConfig;

/// Association and allocation strategies compared by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Exhaustive association on the served period, then allocation.
    Oracle,
    /// Estimator and predictor choose the association before the period starts.
    Pipeline,
    /// Every user connected to every AP in view.
    P2,
    /// Nearest AP, full resources, demands ignored.
    Distance,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Oracle, Method::Pipeline, Method::P2, Method::Distance];

    pub fn name(self) -> &'static str {
        match self {
            Method::Oracle => "oracle",
            Method::Pipeline => "pipeline",
            Method::P2 => "p2",
            Method::Distance => "distance",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Estimator input layout. Each user contributes one block: `L` rates
/// relative to the user's best rate on a log scale spanning two decades
/// (zeros when channel features are disabled or the link is dark),
/// `R_min` and `R_max` divided by the largest possible demand, and the
/// position divided by the room size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSpec {
    pub users: usize,
    pub aps: usize,
    pub room_x: f64,
    pub room_y: f64,
    /// bit/s
    pub demand_scale: f64,
    pub channel_features: bool,
}

impl FeatureSpec {
    pub fn new(cfg: &RunConfig) -> Self {
        let p = &cfg.population;
        Self {
            users: p.users,
            aps: cfg.aps(),
            room_x: cfg.geometry.room_x_m,
            room_y: cfg.geometry.room_y_m,
            demand_scale: p.r_min_hi_gbps * p.r_max_ratio_hi * crate::alloc::RATE_UNIT_BPS,
            channel_features: cfg.nn.channel_features,
        }
    }

    pub fn block(&self) -> usize {
        self.aps + 4
    }

    pub fn dim(&self) -> usize {
        self.users * self.block()
    }

    pub fn build(&self, rates: &RateMatrix, period: &Period) -> Vec<f64> {
        let span = 100f64.ln();
        let mut f = Vec::with_capacity(self.dim());
        for k in 0..self.users {
            let best = (0..self.aps).map(|l| rates.get(k, l)).fold(0.0, f64::max);
            for l in 0..self.aps {
                let r = rates.get(k, l);
                f.push(if self.channel_features && r > 0.0 { (1.0 + (r / best).ln() / span).max(0.0) } else { 0.0 });
            }
            f.push((period.demand_min[k] / self.demand_scale).min(1.0));
            f.push((period.demand_max[k] / self.demand_scale).min(1.0));
            f.push((period.positions[k].x / self.room_x).clamp(0.0, 1.0));
            f.push((period.positions[k].y / self.room_y).clamp(0.0, 1.0));
        }
        f
    }
}

/// Rates users actually receive from resources `e`: each user is capped at
/// `R_max`, then any AP whose load still exceeds its capacity scales its
/// links down proportionally.
pub fn deliver(e: &ResourceMatrix, r: &RateMatrix, c: &Constraints) -> Vec<f64> {
    let (users, aps) = (r.users(), r.aps());
    let mut link = nalgebra::DMatrix::from_fn(users, aps, |k, l| e.get(k, l) * r.get(k, l));
    for k in 0..users {
        let total = link.row(k).sum();
        if total > c.r_max[k] {
            link.row_mut(k).scale_mut(c.r_max[k] / total);
        }
    }
    for l in 0..aps {
        let load = link.column(l).sum();
        if load > c.capacity[l] {
            link.column_mut(l).scale_mut(c.capacity[l] / load);
        }
    }
    (0..users).map(|k| link.row(k).sum()).collect()
}
