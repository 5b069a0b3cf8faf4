use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};

use super::network::Network;
use super::online::{run_all, scenario_means, Models};
use super::scenario::{generate_scenario, scenario_seed, STREAM_EVAL};
use super::Method;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    BeamWaist,
    Snr,
}

impl SweepKind {
    /// Column value written to result files; carries the unit.
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::BeamWaist => "beam_waist_um",
            SweepKind::Snr => "snr_db",
        }
    }

    pub fn values(self, cfg: &RunConfig) -> &[f64] {
        match self {
            SweepKind::BeamWaist => &cfg.sweep.beam_waist_um,
            SweepKind::Snr => &cfg.sweep.snr_db,
        }
    }

    pub fn apply(self, cfg: &RunConfig, value: f64) -> RunConfig {
        let mut c = cfg.clone();
        match self {
            SweepKind::BeamWaist => c.optics.beam_waist_um = value,
            SweepKind::Snr => c.bia.snr_db = value,
        }
        c
    }
}

/// One line of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep: String,
    pub value: f64,
    pub method: Method,
    /// Mean over scenarios of the per-scenario mean sum rate, bit/s.
    pub mean_sum_rate: f64,
    /// Sample standard deviation across scenarios, bit/s.
    pub std: f64,
}

/// Per-scenario mean sum rates at every sweep value: `points[v][s]` lists
/// `(method, rate)` for value `v` and scenario `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub kind: SweepKind,
    pub values: Vec<f64>,
    pub points: Vec<Vec<Vec<(Method, f64)>>>,
}

impl SweepTable {
    /// Per-scenario rates of `method` at every value: `[scenario][value]`.
    pub fn series(&self, method: Method) -> Vec<Vec<f64>> {
        let n = self.points.first().map_or(0, Vec::len);
        (0..n)
            .map(|s| {
                self.points
                    .iter()
                    .map(|p| p[s].iter().find(|(m, _)| *m == method).map_or(f64::NAN, |&(_, r)| r))
                    .collect()
            })
            .collect()
    }

    pub fn rows(&self) -> Vec<SweepRow> {
        let mut rows = Vec::new();
        for (v, per_scenario) in self.values.iter().zip(&self.points) {
            for m in Method::ALL {
                let xs: Vec<f64> = per_scenario.iter().filter_map(|s| s.iter().find(|(mm, _)| *mm == m).map(|&(_, r)| r)).collect();
                if xs.is_empty() {
                    continue;
                }
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let std = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
                rows.push(SweepRow { sweep: self.kind.name().into(), value: *v, method: m, mean_sum_rate: mean, std });
            }
        }
        rows
    }
}

/// Runs every method on `population.scenarios` evaluation scenarios at each
/// value of the sweep. The scenarios are the same at every value.
pub fn sweep(cfg: &RunConfig, kind: SweepKind, models: Option<&Models>) -> Result<SweepTable> {
    let values = kind.values(cfg).to_vec();
    if values.is_empty() {
        return Err(Error::Config(vec![format!("sweep.{} is empty", kind.name())]));
    }
    let scenarios = (0..cfg.population.scenarios)
        .map(|i| generate_scenario(cfg, scenario_seed(cfg.seed, STREAM_EVAL, i)))
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::with_capacity(values.len());
    for &v in &values {
        let c = kind.apply(cfg, v);
        c.validate()?;
        let net = Network::new(&c)?;
        let per = scenarios
            .par_iter()
            .map(|s| Ok(scenario_means(&run_all(&net, &c, s, models)?)))
            .collect::<Result<Vec<_>>>()?;
        for m in Method::ALL {
            let xs: Vec<f64> = per.iter().filter_map(|s| s.iter().find(|(mm, _)| *mm == m).map(|&(_, r)| r)).collect();
            if !xs.is_empty() {
                log::info!("sweep {}={v} method={m} mean_sum_rate_bps={:.6e}", kind.name(), xs.iter().sum::<f64>() / xs.len() as f64);
            }
        }
        points.push(per);
    }
    Ok(SweepTable { kind, values, points })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; NaN when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        // ranks of y: 1, 2.5, 2.5, 4
        let rho = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 5.0, 5.0, 9.0]);
        assert!((rho - 4.5 / (5.0f64 * 4.5).sqrt()).abs() < 1e-12, "{rho}");
        assert!(spearman(&[1.0, 2.0], &[3.0, 3.0]).is_nan());
    }

    #[test]
    fn single_point_sweep_has_one_row_per_method() {
        let mut cfg = RunConfig::default();
        cfg.population.scenarios = 2;
        cfg.population.periods = 6;
        cfg.sweep.snr_db = vec![10.0];
        let table = sweep(&cfg, SweepKind::Snr, None).unwrap();
        let rows = table.rows();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows.iter().map(|r| r.method).collect::<Vec<_>>(), vec![Method::Oracle, Method::P2, Method::Distance]);
        assert!(rows.iter().all(|r| r.sweep == "snr_db" && r.value == 10.0));
    }

    #[test]
    fn snr_sweep_is_nondecreasing_for_baselines() {
        let mut cfg = RunConfig::default();
        cfg.population.scenarios = 3;
        cfg.population.periods = 6;
        let table = sweep(&cfg, SweepKind::Snr, None).unwrap();
        for m in [Method::Oracle, Method::P2, Method::Distance] {
            for s in table.series(m) {
                for w in s.windows(2) {
                    assert!(w[1] >= w[0] * (1.0 - 1e-3), "{m}: {s:?}");
                }
            }
        }
    }
}
