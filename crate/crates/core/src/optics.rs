//! Gaussian-beam propagation and received power for ceiling-mounted VCSEL
//! access points.
//!
//! Every quantity is in SI units: lengths in metres, powers in watts,
//! responsivity in A/W. Channel gains are photocurrents (A) per transmitter.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Gaussian beam of a single VCSEL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamParams {
    pub waist_w0: f64,
    pub wavelength: f64,
}

impl BeamParams {
    pub fn new(waist_w0: f64, wavelength: f64) -> Result<Self> {
        rayleigh_range(waist_w0, wavelength)?;
        Ok(Self { waist_w0, wavelength })
    }

    /// Recomputed on every call so it can never go stale.
    pub fn rayleigh_range(&self) -> f64 {
        PI * self.waist_w0 * self.waist_w0 / self.wavelength
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transmitter {
    pub position: Vector3<f64>,
    pub power_pt: f64,
    pub beam: BeamParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Photodiode {
    pub radius_rm: f64,
    pub responsivity: f64,
    pub fov_deg: f64,
}

impl Photodiode {
    /// Builds a photodiode from its share of the receiver area, `receiver_area / m`.
    pub fn from_receiver_area(receiver_area: f64, m: usize, responsivity: f64, fov_deg: f64) -> Result<Self> {
        if receiver_area <= 0.0 || m == 0 {
            return domain("receiver area and photodiode count must be positive");
        }
        if responsivity <= 0.0 {
            return domain("responsivity must be positive");
        }
        if !(fov_deg > 0.0 && fov_deg < 90.0) {
            return domain("field of view must lie in (0, 90) degrees");
        }
        let area = receiver_area / m as f64;
        Ok(Self { radius_rm: (area / PI).sqrt(), responsivity, fov_deg })
    }

    pub fn area(&self) -> f64 {
        PI * self.radius_rm * self.radius_rm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserState {
    pub id: usize,
    pub position: Vector3<f64>,
    pub num_photodiodes: usize,
    /// Minimum demanded rate, bit/s.
    pub demand_min: f64,
    /// Maximum rate the user can absorb, bit/s.
    pub demand_max: f64,
}

impl UserState {
    pub fn validate(&self) -> Result<()> {
        if !(self.demand_min > 0.0 && self.demand_min <= self.demand_max) {
            return domain(format!(
                "user {}: demand window must satisfy 0 < R_min <= R_max (got {} .. {})",
                self.id, self.demand_min, self.demand_max
            ));
        }
        Ok(())
    }
}

/// A ceiling unit housing `Lv` VCSEL transmitters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub id: usize,
    pub center: Vector3<f64>,
    pub transmitters: Vec<Transmitter>,
}

impl AccessPoint {
    /// Places `lv` identical transmitters on a line along x, `spacing` apart,
    /// centred on `center`.
    pub fn with_linear_array(id: usize, center: Vector3<f64>, lv: usize, spacing: f64, power_pt: f64, beam: BeamParams) -> Result<Self> {
        if lv == 0 {
            return domain("an access point needs at least one transmitter");
        }
        if power_pt <= 0.0 {
            return domain("transmit power must be positive");
        }
        let offset0 = -0.5 * spacing * (lv as f64 - 1.0);
        let transmitters = (0..lv)
            .map(|j| Transmitter {
                position: center + Vector3::new(offset0 + spacing * j as f64, 0.0, 0.0),
                power_pt,
                beam,
            })
            .collect();
        Ok(Self { id, center, transmitters })
    }

    pub fn lv(&self) -> usize {
        self.transmitters.len()
    }
}

/// Direction of each VCSEL's beam axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pointing {
    /// Axes point straight down; the user sees the beam at a lateral offset.
    Fixed,
    /// Axes are steered onto the receiver, which sits on-axis at the slant distance.
    Steered,
}

/// Receiver and mode-construction parameters shared by every link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub photodiode: Photodiode,
    pub pointing: Pointing,
    /// Gain applied to non-aligned transmitters in each detector mode.
    pub misalignment_gamma: f64,
    /// Cap for the interference ratio when the serving AP delivers no power.
    pub alpha_cap: f64,
}

pub fn rayleigh_range(w0: f64, wavelength: f64) -> Result<f64> {
    if !(w0 > 0.0) || !(wavelength > 0.0) {
        return domain(format!("beam waist and wavelength must be positive (got {w0}, {wavelength})"));
    }
    Ok(PI * w0 * w0 / wavelength)
}

/// Beam radius `W_d` at distance `d` along the axis.
pub fn beam_radius(beam: &BeamParams, d: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return domain(format!("propagation distance must be non-negative (got {d})"));
    }
    let ratio = d / beam.rayleigh_range();
    Ok(beam.waist_w0 * (1.0 + ratio * ratio).sqrt())
}

/// Transverse intensity at radial offset `r` for a beam of radius `w_d`.
pub fn intensity(pt: f64, w_d: f64, r: f64) -> Result<f64> {
    if !(w_d > 0.0) {
        return domain(format!("beam radius must be positive (got {w_d})"));
    }
    if !(r >= 0.0) {
        return domain(format!("radial offset must be non-negative (got {r})"));
    }
    Ok(2.0 * pt / (PI * w_d * w_d) * (-2.0 * r * r / (w_d * w_d)).exp())
}

/// Power collected by an on-axis disk of radius `rm`.
pub fn received_power(pt: f64, w_d: f64, rm: f64) -> Result<f64> {
    if !(w_d > 0.0) {
        return domain(format!("beam radius must be positive (got {w_d})"));
    }
    if !(rm >= 0.0) {
        return domain(format!("detector radius must be non-negative (got {rm})"));
    }
    Ok(-pt * (-2.0 * rm * rm / (w_d * w_d)).exp_m1())
}

/// Optical power a photodiode receives from one transmitter.
///
/// Under fixed pointing the disk sits at lateral offset `rho` from the axis:
/// within `2 rm` of the axis the exact on-axis capture is used, beyond it the
/// local intensity times the detector area.
pub fn transmitter_power(tx: &Transmitter, receiver: &Vector3<f64>, pd: &Photodiode, pointing: Pointing) -> Result<f64> {
    let delta = receiver - tx.position;
    match pointing {
        Pointing::Steered => {
            let w_d = beam_radius(&tx.beam, delta.norm())?;
            received_power(tx.power_pt, w_d, pd.radius_rm)
        }
        Pointing::Fixed => {
            let d = -delta.z;
            if d < 0.0 {
                return Ok(0.0);
            }
            let rho = (delta.x * delta.x + delta.y * delta.y).sqrt();
            let w_d = beam_radius(&tx.beam, d)?;
            if rho <= 2.0 * pd.radius_rm {
                received_power(tx.power_pt, w_d, pd.radius_rm)
            } else {
                Ok(intensity(tx.power_pt, w_d, rho)? * pd.area())
            }
        }
    }
}

/// True when the AP lies inside the receiver's field of view (detector normal points up).
pub fn in_field_of_view(ap_center: &Vector3<f64>, receiver: &Vector3<f64>, fov_deg: f64) -> bool {
    let delta = ap_center - receiver;
    let dist = delta.norm();
    if dist == 0.0 || delta.z <= 0.0 {
        return false;
    }
    let cos_angle = delta.z / dist;
    // Small slack so users exactly on the cone boundary count as covered.
    cos_angle >= fov_deg.to_radians().cos() - 1e-12
}

/// Total optical power the user receives from every transmitter of `ap`;
/// zero when the AP is outside the field of view.
pub fn total_received_power(ap: &AccessPoint, user: &UserState, model: &ChannelModel) -> Result<f64> {
    if !in_field_of_view(&ap.center, &user.position, model.photodiode.fov_deg) {
        return Ok(0.0);
    }
    ap.transmitters
        .iter()
        .map(|tx| transmitter_power(tx, &user.position, &model.photodiode, model.pointing))
        .sum()
}

/// `Lv x Lv` channel matrix between `ap` and `user`.
///
/// Row `m` is the channel under detector mode `m`, which aligns with
/// transmitter `m` (gain 1) and sees the others through the misalignment
/// factor. Out-of-coverage users get the zero matrix.
pub fn channel_gain(ap: &AccessPoint, user: &UserState, model: &ChannelModel) -> Result<DMatrix<f64>> {
    let lv = ap.lv();
    if !in_field_of_view(&ap.center, &user.position, model.photodiode.fov_deg) {
        return Ok(DMatrix::zeros(lv, lv));
    }
    let gains = ap
        .transmitters
        .iter()
        .map(|tx| Ok(model.photodiode.responsivity * transmitter_power(tx, &user.position, &model.photodiode, model.pointing)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(DMatrix::from_fn(lv, lv, |m, j| if m == j { gains[j] } else { model.misalignment_gamma * gains[j] }))
}

/// Interference ratio seen by a user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sir {
    pub alpha: f64,
    /// Set when the serving AP delivers no power but the interferer does.
    pub degenerate: bool,
}

/// Ratio of the interferer's received power to the serving AP's received power.
pub fn sir_alpha(serving: &AccessPoint, interferer: &AccessPoint, user: &UserState, model: &ChannelModel) -> Result<Sir> {
    if serving.id == interferer.id {
        return domain("serving and interfering access point must differ");
    }
    let p_int = total_received_power(interferer, user, model)?;
    if p_int == 0.0 {
        return Ok(Sir { alpha: 0.0, degenerate: false });
    }
    let p_serv = total_received_power(serving, user, model)?;
    if p_serv == 0.0 {
        log::warn!(
            "degenerate coverage: user {} receives no power from AP {} but {} W from AP {}; alpha capped at {}",
            user.id, serving.id, p_int, interferer.id, model.alpha_cap
        );
        return Ok(Sir { alpha: model.alpha_cap, degenerate: true });
    }
    Ok(Sir { alpha: (p_int / p_serv).min(model.alpha_cap), degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const LAMBDA: f64 = 830e-9;

    fn beam(w0: f64) -> BeamParams {
        BeamParams::new(w0, LAMBDA).unwrap()
    }

    fn model(pointing: Pointing) -> ChannelModel {
        ChannelModel {
            photodiode: Photodiode::from_receiver_area(15e-6, 1, 0.9, 45.0).unwrap(),
            pointing,
            misalignment_gamma: 0.3,
            alpha_cap: 1e6,
        }
    }

    fn user_at(x: f64, y: f64, z: f64) -> UserState {
        UserState { id: 0, position: Vector3::new(x, y, z), num_photodiodes: 1, demand_min: 1e9, demand_max: 2e9 }
    }

    fn ap_at(id: usize, x: f64, y: f64) -> AccessPoint {
        AccessPoint::with_linear_array(id, Vector3::new(x, y, 3.0), 2, 0.05, 0.01, beam(5e-6)).unwrap()
    }

    // Composite Simpson over the disk, independent of the closed form.
    fn disk_quadrature(pt: f64, w_d: f64, rm: f64) -> f64 {
        let n = 2000;
        let h = rm / n as f64;
        let f = |r: f64| 2.0 * pt / (PI * w_d * w_d) * (-2.0 * r * r / (w_d * w_d)).exp() * 2.0 * PI * r;
        let mut acc = f(0.0) + f(rm);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn rayleigh_range_reference_value() {
        let expected = PI * 5e-6 * 5e-6 / 830e-9;
        assert_relative_eq!(rayleigh_range(5e-6, 830e-9).unwrap(), expected, max_relative = 1e-15);
        assert_relative_eq!(expected, 9.462e-5, max_relative = 1e-3);
        let one = rayleigh_range(3e-6, LAMBDA).unwrap();
        let two = rayleigh_range(6e-6, LAMBDA).unwrap();
        assert_relative_eq!(two, 4.0 * one, max_relative = 1e-14);
        assert!(rayleigh_range(0.0, LAMBDA).is_err());
        assert!(rayleigh_range(5e-6, -1.0).is_err());
    }

    #[test]
    fn beam_radius_values() {
        let b = beam(5e-6);
        assert_eq!(beam_radius(&b, 0.0).unwrap(), 5e-6);
        assert_relative_eq!(beam_radius(&b, b.rayleigh_range()).unwrap(), 5e-6 * 2f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(beam_radius(&b, 2.0).unwrap(), 0.1057, max_relative = 1e-3);
        assert!(beam_radius(&b, -0.1).is_err());
    }

    #[test]
    fn intensity_values() {
        let peak = intensity(1.0, 0.1, 0.0).unwrap();
        assert_relative_eq!(peak, 2.0 / (PI * 0.01), max_relative = 1e-14);
        assert!(intensity(1.0, 0.1, 10.0).unwrap() < 1e-300);
        // 2/(pi 0.01) * exp(-2 * 0.0025 / 0.01) = 63.66198 * exp(-0.5)
        assert_relative_eq!(intensity(1.0, 0.1, 0.05).unwrap(), 63.66197723675813 * 0.6065306597126334, max_relative = 1e-12);
        assert!(intensity(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn received_power_values() {
        assert_eq!(received_power(1.0, 0.1, 0.0).unwrap(), 0.0);
        assert_relative_eq!(received_power(1.0, 0.1, 10.0).unwrap(), 1.0, max_relative = 1e-15);
        let rm = (15e-6 / PI).sqrt();
        assert_relative_eq!(rm, 2.185e-3, max_relative = 1e-3);
        assert_relative_eq!(received_power(1.0, 0.1057, rm).unwrap(), 8.54e-4, max_relative = 1e-3);
        assert!(received_power(1.0, -1.0, rm).is_err());
    }

    #[test]
    fn received_power_matches_quadrature() {
        for &(pt, w_d, rm) in &[(1.0, 0.1057, 2.185e-3), (0.01, 0.035, 0.02), (2.0, 0.5, 0.3)] {
            let exact = received_power(pt, w_d, rm).unwrap();
            assert_relative_eq!(exact, disk_quadrature(pt, w_d, rm), max_relative = 1e-8);
        }
    }

    #[test]
    fn channel_gain_out_of_view_is_zero() {
        let ap = ap_at(0, 0.5, 0.5);
        // lateral 4 m at 2 m depth is ~63 degrees off the normal
        let user = user_at(4.5, 0.5, 1.0);
        for pointing in [Pointing::Fixed, Pointing::Steered] {
            let h = channel_gain(&ap, &user, &model(pointing)).unwrap();
            assert!(h.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn channel_gain_symmetric_position() {
        let ap = ap_at(0, 2.0, 2.0);
        // midway between the two transmitters
        let user = user_at(2.0, 2.3, 1.0);
        for pointing in [Pointing::Fixed, Pointing::Steered] {
            let h = channel_gain(&ap, &user, &model(pointing)).unwrap();
            assert_relative_eq!(h[(0, 0)], h[(1, 1)], max_relative = 1e-9);
            assert_relative_eq!(h[(0, 1)], h[(1, 0)], max_relative = 1e-9);
        }
    }

    #[test]
    fn on_axis_user_has_full_rank_channel() {
        let ap = ap_at(0, 2.0, 2.0);
        let user = user_at(2.0 - 0.025, 2.0, 1.0);
        let h = channel_gain(&ap, &user, &model(Pointing::Fixed)).unwrap();
        assert_eq!(h.rank(1e-12 * h.amax()), 2);
    }

    #[test]
    fn sir_alpha_cases() {
        let m = model(Pointing::Steered);
        let a = ap_at(0, 1.0, 2.5);
        let b = ap_at(1, 4.0, 2.5);
        let far = ap_at(2, 40.0, 2.5);
        let mid = user_at(2.5, 2.5, 1.0);
        assert_relative_eq!(sir_alpha(&a, &b, &mid, &m).unwrap().alpha, 1.0, max_relative = 1e-9);
        assert_eq!(sir_alpha(&a, &far, &mid, &m).unwrap().alpha, 0.0);

        let u = user_at(2.2, 2.5, 1.0);
        let pa: f64 = a.transmitters.iter().map(|t| transmitter_power(t, &u.position, &m.photodiode, m.pointing).unwrap()).sum();
        let pb: f64 = b.transmitters.iter().map(|t| transmitter_power(t, &u.position, &m.photodiode, m.pointing).unwrap()).sum();
        assert_relative_eq!(sir_alpha(&a, &b, &u, &m).unwrap().alpha, pb / pa, max_relative = 1e-12);
        assert!(pb < pa);

        // serving AP out of view, interferer in view
        let degenerate = sir_alpha(&far, &a, &u, &m).unwrap();
        assert!(degenerate.degenerate);
        assert_eq!(degenerate.alpha, 1e6);
        assert!(sir_alpha(&a, &a, &u, &m).is_err());
    }

    proptest! {
        #[test]
        fn beam_radius_increases_and_power_decreases(w0 in 2e-6..20e-6f64, d1 in 0.0..5.0f64, gap in 1e-3..2.0f64) {
            let b = beam(w0);
            let rm = 2e-3;
            let w1 = beam_radius(&b, d1).unwrap();
            let w2 = beam_radius(&b, d1 + gap).unwrap();
            prop_assert!(w2 > w1);
            prop_assert!(received_power(1.0, w2, rm).unwrap() <= received_power(1.0, w1, rm).unwrap());
        }

        #[test]
        fn received_power_increases_with_radius(w_d in 1e-3..1.0f64, rm in 0.0..0.5f64, extra in 1e-4..0.5f64) {
            let p1 = received_power(1.0, w_d, rm).unwrap();
            let p2 = received_power(1.0, w_d, rm + extra).unwrap();
            prop_assert!(p2 >= p1);
            prop_assert!(p2 <= 1.0);
        }
    }

    #[test]
    fn in_coverage_channels_have_full_rank() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let ap = ap_at(0, 2.5, 2.5);
        for pointing in [Pointing::Fixed, Pointing::Steered] {
            let m = model(pointing);
            let mut checked = 0;
            while checked < 1000 {
                let user = match pointing {
                    // fixed beams only reach receivers near the axes
                    Pointing::Fixed => user_at(2.5 + rng.gen_range(-0.3..0.3), 2.5 + rng.gen_range(-0.3..0.3), 1.0),
                    Pointing::Steered => user_at(rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0), 1.0),
                };
                if !in_field_of_view(&ap.center, &user.position, 45.0) {
                    continue;
                }
                let h = channel_gain(&ap, &user, &m).unwrap();
                // Column scaling keeps the rank test independent of the absolute power level.
                let scaled = DMatrix::from_fn(2, 2, |i, j| h[(i, j)] / h[(j, j)]);
                assert_eq!(scaled.rank(1e-9), 2, "{pointing:?} {:?}", user.position);
                checked += 1;
            }
        }
    }
}
