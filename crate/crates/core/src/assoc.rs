//! User association: the proportional-fair objective under uniform resource
//! sharing, its exhaustive solver, and the baseline association rules.

use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::optics::in_field_of_view;

/// Largest assignment space the exhaustive solver will enumerate.
pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

/// Achievable rate (bit/s) of every user (rows) on every access point (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix(DMatrix<f64>);

impl RateMatrix {
    pub fn new(r: DMatrix<f64>) -> Result<Self> {
        if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return domain("rates must be finite and non-negative");
        }
        Ok(Self(r))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        let l = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != l) {
            return Err(Error::Dimension("ragged rate rows".into()));
        }
        Self::new(DMatrix::from_fn(k, l, |i, j| rows[i][j]))
    }

    pub fn users(&self) -> usize {
        self.0.nrows()
    }

    pub fn aps(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, user: usize, ap: usize) -> f64 {
        self.0[(user, ap)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(&self.0 * c)
    }
}

/// Each user attached to exactly one access point.
///
/// Stored as the serving AP index per user, so the one-AP-per-user
/// constraint holds by construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AssignmentMatrix {
    serving: Vec<usize>,
    aps: usize,
}

impl AssignmentMatrix {
    pub fn new(serving: Vec<usize>, aps: usize) -> Result<Self> {
        if let Some((k, &l)) = serving.iter().enumerate().find(|(_, &l)| l >= aps) {
            return Err(Error::Dimension(format!("user {k} assigned to AP {l} but only {aps} APs exist")));
        }
        Ok(Self { serving, aps })
    }

    /// Accepts a binary K x L matrix whose rows each contain a single one.
    pub fn from_binary(x: &DMatrix<f64>) -> Result<Self> {
        let mut serving = Vec::with_capacity(x.nrows());
        for k in 0..x.nrows() {
            let row = x.row(k);
            if row.iter().any(|&v| v != 0.0 && v != 1.0) || row.sum() != 1.0 {
                return domain(format!("row {k} is not a one-hot assignment"));
            }
            serving.push(row.iter().position(|&v| v == 1.0).unwrap());
        }
        Ok(Self { serving, aps: x.ncols() })
    }

    pub fn users(&self) -> usize {
        self.serving.len()
    }

    pub fn aps(&self) -> usize {
        self.aps
    }

    pub fn serving(&self) -> &[usize] {
        &self.serving
    }

    pub fn ap_of(&self, user: usize) -> usize {
        self.serving[user]
    }

    /// Users per access point (`K_l`).
    pub fn loads(&self) -> Vec<usize> {
        let mut loads = vec![0; self.aps];
        for &l in &self.serving {
            loads[l] += 1;
        }
        loads
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.users(), self.aps, |k, l| (self.serving[k] == l) as u8 as f64)
    }

    /// Row-major one-hot encoding.
    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.users() * self.aps];
        for (k, &l) in self.serving.iter().enumerate() {
            v[k * self.aps + l] = 1.0;
        }
        v
    }
}

/// The all-ones indicator of full connectivity, where every user draws
/// from every access point. Deliberately not an [`AssignmentMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct FullConnectivity(DMatrix<f64>);

impl FullConnectivity {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub fn full_connectivity_assignment(users: usize, aps: usize) -> FullConnectivity {
    FullConnectivity(DMatrix::from_element(users, aps, 1.0))
}

/// Sum of `ln(r[k, l(k)] / K_l)` over users, i.e. log-utility with each AP
/// splitting its resources evenly. Returns `-inf` if any user sits on a
/// zero-rate link.
pub fn utility_p3(x: &AssignmentMatrix, r: &RateMatrix) -> Result<f64> {
    if x.users() != r.users() || x.aps() != r.aps() {
        return Err(Error::Dimension(format!(
            "assignment is {}x{} but rates are {}x{}",
            x.users(),
            x.aps(),
            r.users(),
            r.aps()
        )));
    }
    Ok(utility_unchecked(x.serving(), &x.loads(), r))
}

fn utility_unchecked(serving: &[usize], loads: &[usize], r: &RateMatrix) -> f64 {
    let mut u = 0.0;
    for (k, &l) in serving.iter().enumerate() {
        let rate = r.get(k, l);
        if rate <= 0.0 {
            return f64::NEG_INFINITY;
        }
        u += (rate / loads[l] as f64).ln();
    }
    u
}

/// Decodes assignment index `idx` (user 0 most significant, base `aps`).
fn decode(mut idx: u64, users: usize, aps: usize, out: &mut [usize], loads: &mut [usize]) {
    loads.iter_mut().for_each(|c| *c = 0);
    for k in (0..users).rev() {
        let l = (idx % aps as u64) as usize;
        idx /= aps as u64;
        out[k] = l;
        loads[l] += 1;
    }
}

/// Exhaustive maximiser of [`utility_p3`] over all `L^K` assignments.
///
/// Among equal optima the lexicographically smallest serving vector wins.
/// The index space is split across threads; the reduction is a total order on
/// (utility, index), so the result does not depend on the partition.
pub fn brute_force_assoc(r: &RateMatrix) -> Result<(AssignmentMatrix, f64)> {
    let (users, aps) = (r.users(), r.aps());
    if users == 0 || aps == 0 {
        return domain("rate matrix must have at least one user and one AP");
    }
    let total = (aps as u64)
        .checked_pow(users as u32)
        .filter(|&n| n <= BRUTE_FORCE_LIMIT)
        .ok_or_else(|| Error::Size(format!("{aps}^{users} assignments exceed the brute-force limit of {BRUTE_FORCE_LIMIT}; use fewer users or APs")))?;

    const CHUNK: u64 = 1 << 14;
    let chunks = total.div_ceil(CHUNK);
    let best = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut serving = vec![0; users];
            let mut loads = vec![0; aps];
            let mut best = (f64::NEG_INFINITY, u64::MAX);
            for idx in c * CHUNK..((c + 1) * CHUNK).min(total) {
                decode(idx, users, aps, &mut serving, &mut loads);
                let u = utility_unchecked(&serving, &loads, r);
                if u > best.0 || (best.1 == u64::MAX) {
                    best = (u, idx);
                }
            }
            best
        })
        .reduce(|| (f64::NEG_INFINITY, u64::MAX), better);

    let mut serving = vec![0; users];
    let mut loads = vec![0; aps];
    decode(best.1, users, aps, &mut serving, &mut loads);
    Ok((AssignmentMatrix { serving, aps }, best.0))
}

fn better(a: (f64, u64), b: (f64, u64)) -> (f64, u64) {
    if a.1 == u64::MAX {
        return b;
    }
    if b.1 == u64::MAX {
        return a;
    }
    match a.0.partial_cmp(&b.0) {
        Some(std::cmp::Ordering::Greater) => a,
        Some(std::cmp::Ordering::Less) => b,
        _ => if a.1 <= b.1 { a } else { b },
    }
}

/// Nearest access point (Euclidean), ties to the lowest index. Fails if a
/// user has no AP inside its field of view.
pub fn distance_based_assoc(users: &[Vector3<f64>], aps: &[Vector3<f64>], fov_deg: f64) -> Result<AssignmentMatrix> {
    if aps.is_empty() {
        return domain("no access points");
    }
    let mut serving = Vec::with_capacity(users.len());
    for (k, u) in users.iter().enumerate() {
        if !aps.iter().any(|a| in_field_of_view(a, u, fov_deg)) {
            return Err(Error::Unassigned { user: k });
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (l, a) in aps.iter().enumerate() {
            let d = (a - u).norm();
            if d < best_d {
                best = l;
                best_d = d;
            }
        }
        serving.push(best);
    }
    Ok(AssignmentMatrix { serving, aps: aps.len() })
}
