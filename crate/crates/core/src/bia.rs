//! Blind interference alignment: transmission-block combinatorics and the
//! achievable rate of a user served by an access point with `Lv` transmitters.

use nalgebra::DMatrix;

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiaConfig {
    /// Transmitters per access point.
    pub lv: usize,
    /// Users served by the access point.
    pub k_users: usize,
    /// Power per stream, relative to the unit noise floor.
    pub p_str: f64,
    /// Hz.
    pub bandwidth: f64,
}

impl BiaConfig {
    pub fn validate(&self) -> Result<()> {
        check_dims(self.lv, self.k_users)?;
        if !(self.p_str > 0.0) || !(self.bandwidth > 0.0) {
            return domain("stream power and bandwidth must be positive");
        }
        Ok(())
    }
}

/// Exact rational `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn check_dims(lv: usize, k: usize) -> Result<()> {
    if lv < 2 {
        return domain(format!("BIA needs at least two transmitters per AP (got {lv})"));
    }
    if k < 1 {
        return domain("BIA needs at least one user");
    }
    Ok(())
}

/// Fraction of the transmission block carrying one user's alignment blocks.
///
/// `(Lv-1)^(K-1) / ((Lv-1)^K + K (Lv-1)^(K-1))` reduces to `1 / (K + Lv - 1)`.
pub fn alignment_ratio(lv: usize, k: usize) -> Result<Ratio> {
    check_dims(lv, k)?;
    Ok(Ratio { num: 1, den: (k + lv - 1) as u64 })
}

/// Number of time slots in one BIA transmission block.
pub fn block_length(lv: usize, k: usize) -> Result<u64> {
    check_dims(lv, k)?;
    let overflow = || Error::Size(format!("BIA block length overflows for Lv={lv}, K={k}"));
    let base = (lv - 1) as u64;
    let exp_k = u32::try_from(k).map_err(|_| overflow())?;
    let pow_km1 = base.checked_pow(exp_k - 1).ok_or_else(overflow)?;
    let pow_k = pow_km1.checked_mul(base).ok_or_else(overflow)?;
    (k as u64).checked_mul(pow_km1).and_then(|t| t.checked_add(pow_k)).ok_or_else(overflow)
}

/// Noise covariance (symmetric positive definite) after interference subtraction.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCovariance(DMatrix<f64>);

impl NoiseCovariance {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// `diag(K I_{Lv-1}, 1)`.
pub fn base_noise_covariance(lv: usize, k: usize) -> Result<NoiseCovariance> {
    check_dims(lv, k)?;
    let mut m = DMatrix::identity(lv, lv);
    for i in 0..lv - 1 {
        m[(i, i)] = k as f64;
    }
    Ok(NoiseCovariance(m))
}

/// Adds inter-cell interference: `R = base + p_str sum_l' alpha_l' H_l' H_l'^T`.
pub fn interference_covariance(base: &NoiseCovariance, p_str: f64, interferers: &[(f64, DMatrix<f64>)]) -> Result<NoiseCovariance> {
    let n = base.dim();
    let mut r = base.0.clone();
    for (alpha, h) in interferers {
        if !(*alpha >= 0.0) {
            return domain(format!("interference ratio must be non-negative (got {alpha})"));
        }
        if h.shape() != (n, n) {
            return Err(Error::Dimension(format!("interferer channel is {:?}, expected {n}x{n}", h.shape())));
        }
        if *alpha > 0.0 {
            r += (p_str * alpha) * (h * h.transpose());
        }
    }
    let asym = (&r - r.transpose()).amax();
    if asym > 1e-9 * r.amax().max(1.0) {
        return Err(Error::Numerical(format!("interference covariance lost symmetry ({asym:e})")));
    }
    let sym = (&r + r.transpose()) * 0.5;
    Ok(NoiseCovariance(sym))
}

/// Natural-log determinant of a symmetric positive definite matrix, via Cholesky.
pub fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Achievable BIA rate in bit/s:
/// `B * ratio(Lv, K) * log2 det(I + p_str H H^T R^-1)`.
///
/// The determinant is evaluated as `det(R + p_str H H^T) / det(R)`, both
/// factors through Cholesky.
pub fn bia_rate(h: &DMatrix<f64>, cfg: &BiaConfig, r_noise: &NoiseCovariance) -> Result<f64> {
    cfg.validate()?;
    let n = cfg.lv;
    if h.shape() != (n, n) || r_noise.dim() != n {
        return Err(Error::Dimension(format!(
            "channel {:?} and covariance {}x{} must both be {n}x{n}",
            h.shape(),
            r_noise.dim(),
            r_noise.dim()
        )));
    }
    if h.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return domain("channel entries must be finite and non-negative");
    }
    if h.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let signal = r_noise.matrix() + cfg.p_str * (h * h.transpose());
    let nats = log_det_spd(&signal)? - log_det_spd(r_noise.matrix())?;
    let ratio = alignment_ratio(cfg.lv, cfg.k_users)?.value();
    Ok(cfg.bandwidth * ratio * nats.max(0.0) / std::f64::consts::LN_2)
}
