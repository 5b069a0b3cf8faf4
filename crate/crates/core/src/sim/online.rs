use std::time::Instant;

use crate::alloc::{allocate, solve_p2, AllocOptions, Constraints};
use crate::assoc::{brute_force_assoc, distance_based_assoc, AssignmentMatrix, RateMatrix, BRUTE_FORCE_LIMIT};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{round_to_assignment, EstimatorModel, PredictorModel};

use super::network::{constraints, Links, Network};
use super::scenario::{Period, Scenario};
use super::{deliver, FeatureSpec, Method};

/// Trained estimator and predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub estimator: EstimatorModel,
    pub predictor: PredictorModel,
}

impl Models {
    /// Fails unless both models match the configured users, APs, feature
    /// layout and window.
    pub fn check(&self, cfg: &RunConfig) -> Result<()> {
        let spec = FeatureSpec::new(cfg);
        let e = self.estimator.config();
        let p = self.predictor.config();
        if e.users != spec.users || e.aps != spec.aps || e.block != spec.block() {
            return Err(Error::Dimension(format!(
                "estimator is for {} users, {} APs, block {}; scenario has {} users, {} APs, block {}",
                e.users,
                e.aps,
                e.block,
                spec.users,
                spec.aps,
                spec.block()
            )));
        }
        if p.users != spec.users || p.aps != spec.aps || p.window != cfg.nn.window {
            return Err(Error::Dimension(format!(
                "predictor is for {} users, {} APs, window {}; expected {}, {}, {}",
                p.users, p.aps, p.window, spec.users, spec.aps, cfg.nn.window
            )));
        }
        Ok(())
    }
}

/// Result of one method on one served period.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub period: usize,
    pub method: Method,
    /// bit/s
    pub sum_rate: f64,
    pub user_rates: Vec<f64>,
    /// The allocator converged; always false for the distance baseline,
    /// which does not allocate.
    pub converged: bool,
    pub infeasible: bool,
    /// Empty for full connectivity.
    pub serving: Vec<usize>,
}

pub(crate) struct Prepared {
    pub period: Period,
    pub links: Links,
    pub label: RateMatrix,
    pub constraints: Constraints,
}

pub(crate) fn prepare(net: &Network, cfg: &RunConfig, scenario: &Scenario) -> Result<Vec<Prepared>> {
    scenario
        .periods
        .iter()
        .map(|p| {
            let links = net.links(p)?;
            let label = net.label_rates(&links)?;
            Ok(Prepared { period: p.clone(), constraints: constraints(cfg, p), links, label })
        })
        .collect()
}

/// Allocates under `x` with the rates `x` induces and delivers the result.
pub(crate) fn serve(net: &Network, p: &Prepared, x: &AssignmentMatrix, opts: &AllocOptions, t: usize, method: Method) -> Result<Outcome> {
    let r = net.served_rates(&p.links, x)?;
    let a = allocate(x, &r, &p.constraints, opts)?;
    let user_rates = deliver(&a.resources, &r, &p.constraints);
    Ok(Outcome {
        period: t,
        method,
        sum_rate: user_rates.iter().sum(),
        user_rates,
        converged: a.converged,
        infeasible: a.diagnostics.infeasible,
        serving: x.serving().to_vec(),
    })
}

/// Periods that every method serves: those with a full history window behind them.
fn served_periods(cfg: &RunConfig, n: usize) -> std::ops::Range<usize> {
    cfg.nn.window.min(n)..n
}

fn pipeline_with(
    net: &Network,
    cfg: &RunConfig,
    prepared: &[Prepared],
    mut choose: impl FnMut(usize) -> Result<AssignmentMatrix>,
) -> Result<Vec<Outcome>> {
    let opts = cfg.alloc.options();
    served_periods(cfg, prepared.len())
        .map(|t| {
            let x = choose(t)?;
            serve(net, &prepared[t], &x, &opts, t, Method::Pipeline)
        })
        .collect()
}

fn online(net: &Network, cfg: &RunConfig, prepared: &[Prepared], models: &Models) -> Result<Vec<Outcome>> {
    models.check(cfg)?;
    let spec = FeatureSpec::new(cfg);
    let window = cfg.nn.window;
    // Estimates are computed once per period, when the period's requirements arrive.
    let mut estimates: Vec<Vec<f64>> = Vec::with_capacity(prepared.len());
    for p in prepared {
        let scores = models.estimator.estimate(&spec.build(&p.label, &p.period))?;
        estimates.push(round_to_assignment(&scores).one_hot());
    }
    let started = Instant::now();
    let out = pipeline_with(net, cfg, prepared, |t| Ok(round_to_assignment(&models.predictor.predict_next(&estimates[t - window..t])?)))?;
    if !out.is_empty() {
        log::info!("pipeline latency {:.3} ms per period (prediction and allocation)", started.elapsed().as_secs_f64() * 1e3 / out.len() as f64);
    }
    Ok(out)
}

fn oracle(net: &Network, cfg: &RunConfig, prepared: &[Prepared]) -> Result<Vec<Outcome>> {
    let opts = cfg.alloc.options();
    served_periods(cfg, prepared.len())
        .map(|t| {
            let (x, _) = brute_force_assoc(&prepared[t].label)?;
            serve(net, &prepared[t], &x, &opts, t, Method::Oracle)
        })
        .collect()
}

fn p2(net: &Network, cfg: &RunConfig, prepared: &[Prepared]) -> Result<Vec<Outcome>> {
    let opts = cfg.alloc.options();
    served_periods(cfg, prepared.len())
        .map(|t| {
            let p = &prepared[t];
            let r = net.full_connectivity_rates(&p.links)?;
            let a = solve_p2(&r, &p.constraints, &opts)?;
            let user_rates = deliver(&a.resources, &r, &p.constraints);
            Ok(Outcome {
                period: t,
                method: Method::P2,
                sum_rate: user_rates.iter().sum(),
                user_rates,
                converged: a.converged,
                infeasible: a.diagnostics.infeasible,
                serving: Vec::new(),
            })
        })
        .collect()
}

fn distance(net: &Network, cfg: &RunConfig, prepared: &[Prepared]) -> Result<Vec<Outcome>> {
    let centers = net.ap_centers();
    served_periods(cfg, prepared.len())
        .map(|t| {
            let p = &prepared[t];
            let x = match distance_based_assoc(&p.period.positions, &centers, net.fov_deg()) {
                Ok(x) => x,
                // A user outside every field of view still gets its nearest AP; the link carries nothing.
                Err(Error::Unassigned { .. }) => distance_based_assoc(&p.period.positions, &centers, 90.0 - 1e-9)?,
                Err(e) => return Err(e),
            };
            let r = net.served_rates(&p.links, &x)?;
            let e = crate::alloc::ResourceMatrix::full(&x);
            let user_rates = deliver(&e, &r, &p.constraints);
            Ok(Outcome {
                period: t,
                method: Method::Distance,
                sum_rate: user_rates.iter().sum(),
                user_rates,
                converged: false,
                infeasible: false,
                serving: x.serving().to_vec(),
            })
        })
        .collect()
}

/// Estimate, predict and allocate for every period with a full history window.
pub fn run_online(net: &Network, cfg: &RunConfig, scenario: &Scenario, models: &Models) -> Result<Vec<Outcome>> {
    online(net, cfg, &prepare(net, cfg, scenario)?, models)
}

/// Exhaustive association on the served period itself, then allocation.
pub fn run_oracle(net: &Network, cfg: &RunConfig, scenario: &Scenario) -> Result<Vec<Outcome>> {
    oracle(net, cfg, &prepare(net, cfg, scenario)?)
}

pub fn run_baseline_p2(net: &Network, cfg: &RunConfig, scenario: &Scenario) -> Result<Vec<Outcome>> {
    p2(net, cfg, &prepare(net, cfg, scenario)?)
}

pub fn run_baseline_distance(net: &Network, cfg: &RunConfig, scenario: &Scenario) -> Result<Vec<Outcome>> {
    distance(net, cfg, &prepare(net, cfg, scenario)?)
}

/// Every applicable method on one scenario, in [`Method::ALL`] order. The
/// oracle is skipped when the assignment space exceeds the exhaustive-search
/// limit, the pipeline when no models are given.
pub fn run_all(net: &Network, cfg: &RunConfig, scenario: &Scenario, models: Option<&Models>) -> Result<Vec<Outcome>> {
    let prepared = prepare(net, cfg, scenario)?;
    let mut out = Vec::new();
    let space = (cfg.aps() as f64).powi(cfg.population.users as i32);
    if space <= BRUTE_FORCE_LIMIT as f64 {
        out.extend(oracle(net, cfg, &prepared)?);
    } else {
        log::warn!("skipping the oracle: {space:.3e} assignments exceed the exhaustive-search limit");
    }
    if let Some(m) = models {
        out.extend(online(net, cfg, &prepared, m)?);
    }
    out.extend(p2(net, cfg, &prepared)?);
    out.extend(distance(net, cfg, &prepared)?);
    Ok(out)
}

/// Mean sum rate per method over the served periods of one scenario.
pub fn scenario_means(outcomes: &[Outcome]) -> Vec<(Method, f64)> {
    Method::ALL
        .iter()
        .filter_map(|&m| {
            let v: Vec<f64> = outcomes.iter().filter(|o| o.method == m).map(|o| o.sum_rate).collect();
            (!v.is_empty()).then(|| (m, v.iter().sum::<f64>() / v.len() as f64))
        })
        .collect()
}
