//! Run configuration: TOML with unit-suffixed keys, validated as a whole.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alloc::{AllocOptions, StepSchedule};
use crate::error::{Error, Result};
use crate::optics::Pointing;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub geometry: Geometry,
    pub population: Population,
    pub optics: Optics,
    pub bia: Bia,
    pub alloc: Alloc,
    pub nn: Nn,
    pub sweep: Sweep,
}

/// Room and ceiling layout. APs sit on a `ap_cols x ap_rows` grid at the
/// centres of equal cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    pub room_x_m: f64,
    pub room_y_m: f64,
    pub room_z_m: f64,
    pub floor_below_ceiling_m: f64,
    pub ap_cols: usize,
    pub ap_rows: usize,
    /// Transmitters per AP.
    pub lv: usize,
    pub tx_spacing_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Population {
    pub users: usize,
    /// Periods per scenario.
    pub periods: usize,
    /// Scenarios evaluated by `simulate` and at each sweep point.
    pub scenarios: usize,
    pub mobility_step_max_m: f64,
    pub r_min_lo_gbps: f64,
    pub r_min_hi_gbps: f64,
    /// `R_max = R_min * U[r_max_ratio_lo, r_max_ratio_hi]`.
    pub r_max_ratio_lo: f64,
    pub r_max_ratio_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Optics {
    pub beam_waist_um: f64,
    pub wavelength_nm: f64,
    pub tx_power_w: f64,
    pub receiver_area_mm2: f64,
    pub photodiodes: usize,
    pub responsivity_a_per_w: f64,
    pub fov_deg: f64,
    pub misalignment_gamma: f64,
    pub alpha_cap: f64,
    pub pointing: Pointing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bia {
    pub bandwidth_ghz: f64,
    /// Per-transmitter SNR of an on-axis link at floor distance with the
    /// reference beam waist; sets the stream power against the unit noise floor.
    pub snr_db: f64,
    pub reference_waist_um: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Alloc {
    pub capacity_gbps: f64,
    pub step_mu: f64,
    pub step_xi: f64,
    pub step_lambda: f64,
    pub schedule: StepSchedule,
    pub preconditioned: bool,
    pub tol: f64,
    pub tol_feas: f64,
    pub max_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Nn {
    /// Estimator examples to generate (one per period).
    pub dataset_samples: usize,
    /// 0 picks `4 K L`.
    pub estimator_hidden: usize,
    /// Per-user convolution channels; 0 disables the front end.
    pub conv_channels: usize,
    /// 0 picks `2 K L`.
    pub predictor_hidden: usize,
    pub window: usize,
    /// Feed the normalized rate matrix to the estimator (requirements and
    /// positions are always fed).
    pub channel_features: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub train_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub beam_waist_um: Vec<f64>,
    pub snr_db: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            geometry: Geometry::default(),
            population: Population::default(),
            optics: Optics::default(),
            bia: Bia::default(),
            alloc: Alloc::default(),
            nn: Nn::default(),
            sweep: Sweep::default(),
        }
    }
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            room_x_m: 4.0,
            room_y_m: 4.0,
            room_z_m: 3.0,
            floor_below_ceiling_m: 2.0,
            ap_cols: 2,
            ap_rows: 2,
            lv: 2,
            tx_spacing_m: 0.05,
        }
    }
}

impl Default for Population {
    fn default() -> Self {
        Self {
            users: 6,
            periods: 12,
            scenarios: 20,
            mobility_step_max_m: 0.5,
            r_min_lo_gbps: 0.5,
            r_min_hi_gbps: 2.0,
            r_max_ratio_lo: 2.0,
            r_max_ratio_hi: 4.0,
        }
    }
}

impl Default for Optics {
    fn default() -> Self {
        Self {
            beam_waist_um: 5.0,
            wavelength_nm: 830.0,
            tx_power_w: 1.0,
            receiver_area_mm2: 15.0,
            photodiodes: 1,
            responsivity_a_per_w: 0.9,
            fov_deg: 45.0,
            misalignment_gamma: 0.3,
            alpha_cap: 1e6,
            pointing: Pointing::Steered,
        }
    }
}

impl Default for Bia {
    fn default() -> Self {
        Self { bandwidth_ghz: 5.0, snr_db: -5.0, reference_waist_um: 5.0 }
    }
}

impl Default for Alloc {
    fn default() -> Self {
        let o = AllocOptions::default();
        Self {
            capacity_gbps: 4.0,
            step_mu: o.step_mu,
            step_xi: o.step_xi,
            step_lambda: o.step_lambda,
            schedule: o.schedule,
            preconditioned: o.preconditioned,
            tol: o.tol,
            tol_feas: o.tol_feas,
            max_iters: o.max_iters,
        }
    }
}

impl Default for Nn {
    fn default() -> Self {
        Self {
            dataset_samples: 5000,
            estimator_hidden: 0,
            conv_channels: 0,
            predictor_hidden: 0,
            window: 4,
            channel_features: true,
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-2,
            momentum: 0.9,
            train_fraction: 0.9,
        }
    }
}

impl Default for Sweep {
    fn default() -> Self {
        Self { beam_waist_um: vec![5.0, 7.5, 10.0, 12.5, 15.0], snr_db: vec![-15.0, -10.0, -5.0, 0.0, 5.0] }
    }
}

impl Alloc {
    pub fn options(&self) -> AllocOptions {
        AllocOptions {
            step_mu: self.step_mu,
            step_xi: self.step_xi,
            step_lambda: self.step_lambda,
            schedule: self.schedule,
            preconditioned: self.preconditioned,
            tol: self.tol,
            tol_feas: self.tol_feas,
            max_iters: self.max_iters,
        }
    }
}

impl RunConfig {
    pub fn aps(&self) -> usize {
        self.geometry.ap_cols * self.geometry.ap_rows
    }

    pub fn estimator_hidden(&self) -> usize {
        match self.nn.estimator_hidden {
            0 => 4 * self.population.users * self.aps(),
            h => h,
        }
    }

    pub fn predictor_hidden(&self) -> usize {
        match self.nn.predictor_hidden {
            0 => 2 * self.population.users * self.aps(),
            h => h,
        }
    }

    /// Parses TOML; missing keys take their defaults, unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        let mut positive = |name: &str, x: f64| {
            if !(x > 0.0 && x.is_finite()) {
                v.push(format!("{name} must be positive and finite (got {x})"));
            }
        };
        let g = &self.geometry;
        positive("geometry.room_x_m", g.room_x_m);
        positive("geometry.room_y_m", g.room_y_m);
        positive("geometry.room_z_m", g.room_z_m);
        positive("geometry.floor_below_ceiling_m", g.floor_below_ceiling_m);
        positive("geometry.tx_spacing_m", g.tx_spacing_m);
        let p = &self.population;
        positive("population.r_min_lo_gbps", p.r_min_lo_gbps);
        positive("population.r_min_hi_gbps", p.r_min_hi_gbps);
        positive("population.r_max_ratio_lo", p.r_max_ratio_lo);
        positive("population.r_max_ratio_hi", p.r_max_ratio_hi);
        let o = &self.optics;
        positive("optics.beam_waist_um", o.beam_waist_um);
        positive("optics.wavelength_nm", o.wavelength_nm);
        positive("optics.tx_power_w", o.tx_power_w);
        positive("optics.receiver_area_mm2", o.receiver_area_mm2);
        positive("optics.responsivity_a_per_w", o.responsivity_a_per_w);
        positive("optics.alpha_cap", o.alpha_cap);
        positive("bia.bandwidth_ghz", self.bia.bandwidth_ghz);
        positive("bia.reference_waist_um", self.bia.reference_waist_um);
        let a = &self.alloc;
        positive("alloc.capacity_gbps", a.capacity_gbps);
        positive("alloc.step_mu", a.step_mu);
        positive("alloc.step_xi", a.step_xi);
        positive("alloc.step_lambda", a.step_lambda);
        positive("alloc.tol", a.tol);
        positive("alloc.tol_feas", a.tol_feas);
        let n = &self.nn;
        positive("nn.learning_rate", n.learning_rate);
        for w in &self.sweep.beam_waist_um {
            positive("sweep.beam_waist_um entries", *w);
        }

        if g.floor_below_ceiling_m > g.room_z_m {
            v.push(format!(
                "geometry.floor_below_ceiling_m ({}) exceeds geometry.room_z_m ({})",
                g.floor_below_ceiling_m, g.room_z_m
            ));
        }
        if g.ap_cols == 0 || g.ap_rows == 0 {
            v.push("geometry.ap_cols and geometry.ap_rows must be at least 1".into());
        }
        if g.lv < 2 {
            v.push(format!("geometry.lv must be at least 2 (got {})", g.lv));
        }
        if p.users == 0 {
            v.push("population.users must be at least 1".into());
        }
        if p.periods < 2 {
            v.push(format!("population.periods must be at least 2 (got {})", p.periods));
        }
        if p.periods <= n.window {
            v.push(format!("population.periods ({}) must exceed nn.window ({})", p.periods, n.window));
        }
        if p.scenarios == 0 {
            v.push("population.scenarios must be at least 1".into());
        }
        if !(p.mobility_step_max_m >= 0.0) {
            v.push(format!("population.mobility_step_max_m must be non-negative (got {})", p.mobility_step_max_m));
        }
        if p.r_min_lo_gbps > p.r_min_hi_gbps {
            v.push("population.r_min_lo_gbps exceeds population.r_min_hi_gbps".into());
        }
        if p.r_max_ratio_lo < 1.0 || p.r_max_ratio_lo > p.r_max_ratio_hi {
            v.push("population.r_max_ratio_lo must satisfy 1 <= lo <= r_max_ratio_hi".into());
        }
        if o.photodiodes == 0 {
            v.push("optics.photodiodes must be at least 1".into());
        }
        if !(o.fov_deg > 0.0 && o.fov_deg < 90.0) {
            v.push(format!("optics.fov_deg must lie in (0, 90) (got {})", o.fov_deg));
        }
        if !(o.misalignment_gamma >= 0.0 && o.misalignment_gamma < 1.0) {
            v.push(format!("optics.misalignment_gamma must lie in [0, 1) (got {})", o.misalignment_gamma));
        }
        if !self.bia.snr_db.is_finite() {
            v.push("bia.snr_db must be finite".into());
        }
        if a.max_iters == 0 {
            v.push("alloc.max_iters must be at least 1".into());
        }
        if n.window == 0 {
            v.push("nn.window must be at least 1".into());
        }
        if n.dataset_samples == 0 {
            v.push("nn.dataset_samples must be at least 1".into());
        }
        if n.epochs == 0 || n.batch_size == 0 {
            v.push("nn.epochs and nn.batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&n.momentum) {
            v.push(format!("nn.momentum must lie in [0, 1) (got {})", n.momentum));
        }
        if !(n.train_fraction > 0.0 && n.train_fraction <= 1.0) {
            v.push(format!("nn.train_fraction must lie in (0, 1] (got {})", n.train_fraction));
        }
        if self.sweep.beam_waist_um.is_empty() || self.sweep.snr_db.is_empty() {
            v.push("sweep.beam_waist_um and sweep.snr_db must be nonempty".into());
        }
        if self.sweep.snr_db.iter().any(|s| !s.is_finite()) {
            v.push("sweep.snr_db entries must be finite".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// Lowercase hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        config_hash(&self.to_json())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config always serializes")
    }
}

/// Hash of a config as embedded in output files.
pub fn config_hash(config: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(config).expect("json value always serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}
