use nalgebra::{DMatrix, Vector3};

use crate::alloc::Constraints;
use crate::alloc::RATE_UNIT_BPS;
use crate::assoc::{AssignmentMatrix, RateMatrix};
use crate::bia::{base_noise_covariance, bia_rate, interference_covariance, BiaConfig};
use crate::config::RunConfig;
use crate::error::Result;
use crate::optics::{self, AccessPoint, BeamParams, ChannelModel, Photodiode, UserState};

use super::scenario::Period;

/// Ceiling APs, receiver model and BIA parameters of one configuration.
///
/// Channel gains are divided by the gain of a reference link (on-axis at
/// floor distance, reference beam waist), so the stream power `p_str` is the
/// reference per-transmitter SNR against the unit noise floor.
#[derive(Debug, Clone)]
pub struct Network {
    aps: Vec<AccessPoint>,
    model: ChannelModel,
    lv: usize,
    p_str: f64,
    bandwidth: f64,
    g_ref: f64,
}

/// Normalized channels and interference ratios of every (user, AP) pair in
/// one period.
#[derive(Debug, Clone)]
pub struct Links {
    users: usize,
    aps: usize,
    /// `users * aps`, index `k * aps + l`.
    gains: Vec<DMatrix<f64>>,
    /// `users * aps * aps`, index `(k * aps + l) * aps + l'`.
    alpha: Vec<f64>,
}

impl Links {
    pub fn users(&self) -> usize {
        self.users
    }

    pub fn aps(&self) -> usize {
        self.aps
    }

    pub fn gain(&self, k: usize, l: usize) -> &DMatrix<f64> {
        &self.gains[k * self.aps + l]
    }

    pub fn covered(&self, k: usize, l: usize) -> bool {
        self.gain(k, l).iter().any(|&g| g > 0.0)
    }

    fn alpha(&self, k: usize, l: usize, other: usize) -> f64 {
        self.alpha[(k * self.aps + l) * self.aps + other]
    }
}

impl Network {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let g = &cfg.geometry;
        let o = &cfg.optics;
        let beam = BeamParams::new(o.beam_waist_um * 1e-6, o.wavelength_nm * 1e-9)?;
        let (dx, dy) = (g.room_x_m / g.ap_cols as f64, g.room_y_m / g.ap_rows as f64);
        let mut aps = Vec::with_capacity(cfg.aps());
        for row in 0..g.ap_rows {
            for col in 0..g.ap_cols {
                let center = Vector3::new((col as f64 + 0.5) * dx, (row as f64 + 0.5) * dy, g.room_z_m);
                aps.push(AccessPoint::with_linear_array(aps.len(), center, g.lv, g.tx_spacing_m, o.tx_power_w, beam)?);
            }
        }
        let photodiode = Photodiode::from_receiver_area(o.receiver_area_mm2 * 1e-6, o.photodiodes, o.responsivity_a_per_w, o.fov_deg)?;
        let model = ChannelModel { photodiode, pointing: o.pointing, misalignment_gamma: o.misalignment_gamma, alpha_cap: o.alpha_cap };
        let ref_beam = BeamParams::new(cfg.bia.reference_waist_um * 1e-6, o.wavelength_nm * 1e-9)?;
        let w_ref = optics::beam_radius(&ref_beam, g.floor_below_ceiling_m)?;
        let g_ref = o.responsivity_a_per_w * optics::received_power(o.tx_power_w, w_ref, photodiode.radius_rm)?;
        let p_str = 10f64.powf(cfg.bia.snr_db / 10.0);
        Ok(Self { aps, model, lv: g.lv, p_str, bandwidth: cfg.bia.bandwidth_ghz * 1e9, g_ref })
    }

    pub fn aps(&self) -> &[AccessPoint] {
        &self.aps
    }

    pub fn ap_centers(&self) -> Vec<Vector3<f64>> {
        self.aps.iter().map(|a| a.center).collect()
    }

    pub fn fov_deg(&self) -> f64 {
        self.model.photodiode.fov_deg
    }

    pub fn links(&self, period: &Period) -> Result<Links> {
        let users = period.positions.len();
        let n = self.aps.len();
        let mut gains = Vec::with_capacity(users * n);
        let mut alpha = vec![0.0; users * n * n];
        for (k, pos) in period.positions.iter().enumerate() {
            let user = UserState {
                id: k,
                position: *pos,
                num_photodiodes: 1,
                demand_min: period.demand_min[k],
                demand_max: period.demand_max[k],
            };
            for l in 0..n {
                let h = optics::channel_gain(&self.aps[l], &user, &self.model)? / self.g_ref;
                let covered = h.iter().any(|&v| v > 0.0);
                gains.push(h);
                if !covered {
                    continue;
                }
                for other in (0..n).filter(|&o| o != l) {
                    alpha[(k * n + l) * n + other] = optics::sir_alpha(&self.aps[l], &self.aps[other], &user, &self.model)?.alpha;
                }
            }
        }
        Ok(Links { users, aps: n, gains, alpha })
    }

    /// Rate of user `k` on AP `l` when the AP's BIA block is shared by
    /// `k_users` users; every other AP in view interferes.
    pub fn rate(&self, links: &Links, k: usize, l: usize, k_users: usize) -> Result<f64> {
        if !links.covered(k, l) {
            return Ok(0.0);
        }
        let cfg = BiaConfig { lv: self.lv, k_users: k_users.max(1), p_str: self.p_str, bandwidth: self.bandwidth };
        let interferers: Vec<(f64, DMatrix<f64>)> = (0..links.aps)
            .filter(|&o| o != l && links.alpha(k, l, o) > 0.0)
            .map(|o| (links.alpha(k, l, o), links.gain(k, o).clone()))
            .collect();
        let r = interference_covariance(&base_noise_covariance(self.lv, cfg.k_users)?, self.p_str, &interferers)?;
        bia_rate(links.gain(k, l), &cfg, &r)
    }

    /// Rates with AP `l`'s block shared by `k_users[l]` users.
    pub fn rate_matrix(&self, links: &Links, k_users: &[usize]) -> Result<RateMatrix> {
        let mut m = DMatrix::zeros(links.users, links.aps);
        for k in 0..links.users {
            for l in 0..links.aps {
                m[(k, l)] = self.rate(links, k, l, k_users[l])?;
            }
        }
        RateMatrix::new(m)
    }

    /// Association-independent rates with every AP shared by all `K` users;
    /// the input of the association oracle and of the estimator features.
    pub fn label_rates(&self, links: &Links) -> Result<RateMatrix> {
        self.rate_matrix(links, &vec![links.users; links.aps])
    }

    /// Rates under association `x`: each AP's block is shared by the users
    /// it actually serves.
    pub fn served_rates(&self, links: &Links, x: &AssignmentMatrix) -> Result<RateMatrix> {
        self.rate_matrix(links, &x.loads())
    }

    /// Rates under full connectivity: every user is associated with every
    /// AP, so each block carries all `K` users whether or not they can see
    /// the AP. Numerically this equals [`Network::label_rates`].
    pub fn full_connectivity_rates(&self, links: &Links) -> Result<RateMatrix> {
        self.label_rates(links)
    }
}

/// Capacity and demand windows of one period, bit/s.
pub fn constraints(cfg: &RunConfig, period: &Period) -> Constraints {
    Constraints {
        capacity: vec![cfg.alloc.capacity_gbps * RATE_UNIT_BPS; cfg.aps()],
        r_min: period.demand_min.clone(),
        r_max: period.demand_max.clone(),
    }
}
