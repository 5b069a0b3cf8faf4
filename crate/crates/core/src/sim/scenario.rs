use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alloc::RATE_UNIT_BPS;
use crate::config::RunConfig;
use crate::error::{Error, Result};

/// Independent seed streams derived from the run seed.
pub const STREAM_TRAIN: u64 = 1;
pub const STREAM_EVAL: u64 = 2;

/// Seed of the `index`-th scenario of `stream`: word `index` of a ChaCha
/// stream keyed by `base`.
pub fn scenario_seed(base: u64, stream: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

/// User positions and demand windows during one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Period {
    pub positions: Vec<Vector3<f64>>,
    /// bit/s
    pub demand_min: Vec<f64>,
    /// bit/s
    pub demand_max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub room: [f64; 3],
    /// Height of the receiver plane above the ground.
    pub floor_z: f64,
    pub periods: Vec<Period>,
}

impl Scenario {
    pub fn users(&self) -> usize {
        self.periods.first().map_or(0, |p| p.positions.len())
    }
}

/// Reflects `v` into `[0, len]`.
fn reflect(mut v: f64, len: f64) -> f64 {
    loop {
        if v < 0.0 {
            v = -v;
        } else if v > len {
            v = 2.0 * len - v;
        } else {
            return v;
        }
    }
}

/// Users start uniformly on the floor and take a bounded random walk:
/// each period a uniform heading and a step length in
/// `[0, mobility_step_max_m]`, reflected at the walls. Demand windows are
/// redrawn every period.
pub fn generate_scenario(cfg: &RunConfig, seed: u64) -> Result<Scenario> {
    let g = &cfg.geometry;
    let p = &cfg.population;
    if !(g.room_x_m > 0.0 && g.room_y_m > 0.0 && g.floor_below_ceiling_m > 0.0 && g.floor_below_ceiling_m <= g.room_z_m) {
        return Err(Error::Config(vec![format!(
            "invalid room geometry {} x {} x {} m with floor {} m below the ceiling",
            g.room_x_m, g.room_y_m, g.room_z_m, g.floor_below_ceiling_m
        )]));
    }
    if p.periods < 2 {
        return Err(Error::Config(vec![format!("population.periods must be at least 2 (got {})", p.periods)]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let floor_z = g.room_z_m - g.floor_below_ceiling_m;
    let mut xy: Vec<(f64, f64)> = (0..p.users).map(|_| (rng.gen_range(0.0..=g.room_x_m), rng.gen_range(0.0..=g.room_y_m))).collect();
    let mut periods = Vec::with_capacity(p.periods);
    for t in 0..p.periods {
        if t > 0 && p.mobility_step_max_m > 0.0 {
            for pos in xy.iter_mut() {
                let step = rng.gen_range(0.0..=p.mobility_step_max_m);
                let heading = rng.gen_range(0.0..2.0 * PI);
                pos.0 = reflect(pos.0 + step * heading.cos(), g.room_x_m);
                pos.1 = reflect(pos.1 + step * heading.sin(), g.room_y_m);
            }
        }
        let mut demand_min = Vec::with_capacity(p.users);
        let mut demand_max = Vec::with_capacity(p.users);
        for _ in 0..p.users {
            let lo = rng.gen_range(p.r_min_lo_gbps..=p.r_min_hi_gbps);
            let ratio = rng.gen_range(p.r_max_ratio_lo..=p.r_max_ratio_hi);
            demand_min.push(lo * RATE_UNIT_BPS);
            demand_max.push(lo * ratio * RATE_UNIT_BPS);
        }
        let positions = xy.iter().map(|&(x, y)| Vector3::new(x, y, floor_z)).collect();
        periods.push(Period { positions, demand_min, demand_max });
    }
    Ok(Scenario { seed, room: [g.room_x_m, g.room_y_m, g.room_z_m], floor_z, periods })
}
