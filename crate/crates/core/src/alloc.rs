//! Resource allocation by dual decomposition.
//!
//! For a fixed association every link solves its own stationarity condition
//! given the current prices; access points price their capacity (`mu`) and
//! users price their rate window (`xi` above, `lambda` below). Prices follow
//! projected subgradient steps. Rates are expressed in Gbit/s inside the loop
//! so the multipliers stay O(1).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assoc::{AssignmentMatrix, RateMatrix};
use crate::error::{domain, Error, Result};

/// Rate unit used inside the dual loop, bit/s.
pub const RATE_UNIT_BPS: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    Constant,
    /// `step / sqrt(i)` at iteration `i`.
    Diminishing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocOptions {
    pub step_mu: f64,
    pub step_xi: f64,
    pub step_lambda: f64,
    pub schedule: StepSchedule,
    /// Divides each multiplier's step by the local curvature of its
    /// constraint, `sum R^2` over the links it prices (Gbit/s units).
    pub preconditioned: bool,
    /// Sup-norm of the multiplier change that counts as converged.
    pub tol: f64,
    /// Relative slack allowed on capacity and rate-window constraints.
    pub tol_feas: f64,
    pub max_iters: usize,
}

impl Default for AllocOptions {
    fn default() -> Self {
        Self {
            step_mu: 0.5,
            step_xi: 0.5,
            step_lambda: 0.5,
            schedule: StepSchedule::Constant,
            preconditioned: true,
            tol: 1e-6,
            tol_feas: 1e-3,
            max_iters: 10_000,
        }
    }
}

impl AllocOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_mu > 0.0 && self.step_xi > 0.0 && self.step_lambda > 0.0) {
            return domain("allocator step sizes must be positive");
        }
        if !(self.tol > 0.0 && self.tol_feas >= 0.0) || self.max_iters == 0 {
            return domain("allocator tolerances must be positive and max_iters nonzero");
        }
        Ok(())
    }

    fn scale(&self, iteration: usize) -> f64 {
        match self.schedule {
            StepSchedule::Constant => 1.0,
            StepSchedule::Diminishing => 1.0 / (iteration as f64).sqrt(),
        }
    }
}

/// Lagrange multipliers, all kept on the non-negative orthant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangeState {
    /// Per-AP link price.
    pub mu: Vec<f64>,
    /// Per-user price on the maximum rate.
    pub xi_max: Vec<f64>,
    /// Per-user price on the minimum rate.
    pub lambda_min: Vec<f64>,
    pub step_mu: f64,
    pub step_xi: f64,
    pub step_lambda: f64,
    pub iteration: usize,
}

impl LagrangeState {
    pub fn new(users: usize, aps: usize, opts: &AllocOptions) -> Self {
        Self {
            mu: vec![0.0; aps],
            xi_max: vec![0.0; users],
            lambda_min: vec![0.0; users],
            step_mu: opts.step_mu,
            step_xi: opts.step_xi,
            step_lambda: opts.step_lambda,
            iteration: 0,
        }
    }
}

/// Fraction of each AP's resources given to each user, `K x L`, in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceMatrix(DMatrix<f64>);

impl ResourceMatrix {
    pub fn zeros(users: usize, aps: usize) -> Self {
        Self(DMatrix::zeros(users, aps))
    }

    pub fn new(e: DMatrix<f64>) -> Result<Self> {
        if e.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return domain("resource fractions must lie in [0, 1]");
        }
        Ok(Self(e))
    }

    /// Uniform share `1 / K_l` on the assigned AP.
    pub fn uniform(x: &AssignmentMatrix) -> Self {
        let loads = x.loads();
        let mut e = DMatrix::zeros(x.users(), x.aps());
        for (k, &l) in x.serving().iter().enumerate() {
            e[(k, l)] = 1.0 / loads[l] as f64;
        }
        Self(e)
    }

    /// Full share on the assigned AP.
    pub fn full(x: &AssignmentMatrix) -> Self {
        Self(x.to_matrix())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn get(&self, user: usize, ap: usize) -> f64 {
        self.0[(user, ap)]
    }
}

/// Maximiser over `e in [0, 1]` of `ln(e r) - (mu + xi - lambda) e r`.
///
/// Stationarity gives `1/e = r (mu + xi - lambda)`, with `r` in Gbit/s; a
/// non-positive price leaves the derivative positive on the whole interval,
/// so `e = 1`.
pub fn stationary_resource(rate: f64, mu: f64, xi: f64, lambda: f64) -> f64 {
    if !(rate > 0.0) {
        log::warn!("stationary_resource called with non-positive rate {rate}; resource set to 0");
        return 0.0;
    }
    let price = mu + xi - lambda;
    if price <= 0.0 {
        return 1.0;
    }
    (1.0 / (rate / RATE_UNIT_BPS * price)).min(1.0)
}

/// `[mu - step (rho - load)]^+`, loads and capacity in bit/s.
pub fn update_mu(mu: f64, step: f64, ap_load: f64, rho: f64) -> f64 {
    (mu - step * (rho - ap_load) / RATE_UNIT_BPS).max(0.0)
}

/// `[xi - step (R_max - R)]^+`.
pub fn update_xi(xi: f64, step: f64, user_rate: f64, r_max: f64) -> f64 {
    (xi - step * (r_max - user_rate) / RATE_UNIT_BPS).max(0.0)
}

/// `[lambda - step (R - R_min)]^+`.
pub fn update_lambda(lambda: f64, step: f64, user_rate: f64, r_min: f64) -> f64 {
    (lambda - step * (user_rate - r_min) / RATE_UNIT_BPS).max(0.0)
}

/// Per-AP capacities and per-user demand windows, bit/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub capacity: Vec<f64>,
    pub r_min: Vec<f64>,
    pub r_max: Vec<f64>,
}

impl Constraints {
    fn check(&self, users: usize, aps: usize) -> Result<()> {
        if self.capacity.len() != aps || self.r_min.len() != users || self.r_max.len() != users {
            return Err(Error::Dimension(format!(
                "constraints sized {}/{}/{} for {aps} APs and {users} users",
                self.capacity.len(),
                self.r_min.len(),
                self.r_max.len()
            )));
        }
        if self.capacity.iter().any(|&c| !(c > 0.0)) {
            return domain("AP capacities must be positive");
        }
        if self.r_min.iter().zip(&self.r_max).any(|(&lo, &hi)| !(lo >= 0.0 && lo <= hi)) {
            return domain("demand windows must satisfy 0 <= R_min <= R_max");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub max_multiplier_change: f64,
    /// Largest relative capacity overshoot, `max_l (load_l - rho_l) / rho_l`.
    pub capacity_violation: f64,
    /// Largest relative breach of any user's `[R_min, R_max]` window.
    pub window_violation: f64,
    /// The demands cannot all be met; minimum rates were relaxed.
    pub infeasible: bool,
    /// Log-utility of the returned allocation (rates in bit/s).
    pub utility: f64,
    /// bit/s.
    pub sum_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub resources: ResourceMatrix,
    pub state: LagrangeState,
    pub converged: bool,
    pub diagnostics: Diagnostics,
}

impl Allocation {
    /// Rate each user receives, summed over its links, bit/s.
    pub fn user_rates(&self, r: &RateMatrix) -> Vec<f64> {
        (0..r.users()).map(|k| (0..r.aps()).map(|l| self.resources.get(k, l) * r.get(k, l)).sum()).collect()
    }
}

#[derive(Clone, Copy)]
struct Link {
    user: usize,
    ap: usize,
    /// Gbit/s
    rate: f64,
}

enum Objective {
    /// `sum_k ln(R_k)`, one link per user.
    PerUser,
    /// `sum_{k,l} ln(e r)` over every active link.
    PerLink,
}

struct Problem {
    users: usize,
    aps: usize,
    links: Vec<Link>,
    capacity: Vec<f64>,
    r_min: Vec<f64>,
    r_max: Vec<f64>,
    objective: Objective,
}

/// Lowers minimum rates that no allocation could meet. Returns true if any
/// were lowered.
fn relax_min_rates(p: &mut Problem) -> bool {
    const MARGIN: f64 = 0.999;
    let mut relaxed = false;
    let mut reach = vec![0.0; p.users];
    for link in &p.links {
        reach[link.user] += link.rate;
    }
    for k in 0..p.users {
        let cap = reach[k] * MARGIN;
        if p.r_min[k] > cap {
            p.r_min[k] = cap;
            relaxed = true;
        }
    }
    match p.objective {
        Objective::PerUser => {
            let mut need = vec![0.0; p.aps];
            for link in &p.links {
                need[link.ap] += p.r_min[link.user];
            }
            for l in 0..p.aps {
                if need[l] > p.capacity[l] * MARGIN {
                    let s = p.capacity[l] * MARGIN / need[l];
                    for link in p.links.iter().filter(|link| link.ap == l) {
                        p.r_min[link.user] *= s;
                    }
                    relaxed = true;
                }
            }
        }
        Objective::PerLink => {
            let need: f64 = p.r_min.iter().sum();
            let cap: f64 = p.capacity.iter().sum::<f64>() * MARGIN;
            if need > cap {
                p.r_min.iter_mut().for_each(|r| *r *= cap / need);
                relaxed = true;
            }
        }
    }
    relaxed
}

struct Primal {
    e: Vec<f64>,
    user_rate: Vec<f64>,
    ap_load: Vec<f64>,
}

fn primal(p: &Problem, s: &LagrangeState) -> Primal {
    let mut user_rate = vec![0.0; p.users];
    let mut ap_load = vec![0.0; p.aps];
    let e = p
        .links
        .iter()
        .map(|link| {
            let e = stationary_resource(link.rate * RATE_UNIT_BPS, s.mu[link.ap], s.xi_max[link.user], s.lambda_min[link.user]);
            user_rate[link.user] += e * link.rate;
            ap_load[link.ap] += e * link.rate;
            e
        })
        .collect();
    Primal { e, user_rate, ap_load }
}

/// Sensitivity of each constraint's left-hand side to its own price: an
/// unclamped link carries `R = 1/price`, so `dR/dprice = -R^2`.
fn curvature(p: &Problem, x: &Primal, enabled: bool) -> (Vec<f64>, Vec<f64>) {
    if !enabled {
        return (vec![1.0; p.aps], vec![1.0; p.users]);
    }
    const FLOOR: f64 = 1e-6;
    let mut ap = vec![FLOOR; p.aps];
    let mut user = vec![FLOOR; p.users];
    for (link, e) in p.links.iter().zip(&x.e) {
        let r = e * link.rate;
        ap[link.ap] += r * r;
        user[link.user] += r * r;
    }
    (ap, user)
}

fn violations(p: &Problem, x: &Primal) -> (f64, f64) {
    let cap = (0..p.aps).map(|l| (x.ap_load[l] - p.capacity[l]) / p.capacity[l]).fold(0.0, f64::max);
    let win = (0..p.users)
        .map(|k| {
            let lo = if p.r_min[k] > 0.0 { (p.r_min[k] - x.user_rate[k]) / p.r_min[k] } else { 0.0 };
            let hi = (x.user_rate[k] - p.r_max[k]) / p.r_max[k];
            lo.max(hi)
        })
        .fold(0.0, f64::max);
    (cap, win)
}

fn solve(mut p: Problem, opts: &AllocOptions) -> Result<(Vec<f64>, LagrangeState, bool, Diagnostics)> {
    opts.validate()?;
    let infeasible = relax_min_rates(&mut p);
    let mut s = LagrangeState::new(p.users, p.aps, opts);
    let mut converged = false;
    let mut change = f64::INFINITY;
    let mut x = primal(&p, &s);
    for i in 1..=opts.max_iters {
        s.iteration = i;
        let scale = opts.scale(i);
        change = 0.0;
        let mut track = |old: &mut f64, new: f64| {
            change = f64::max(change, (new - *old).abs());
            *old = new;
        };
        let (curv_ap, curv_user) = curvature(&p, &x, opts.preconditioned);
        // Jacobi sweep: every update reads the primal of the previous prices.
        for l in 0..p.aps {
            let step = s.step_mu * scale / curv_ap[l];
            let new = update_mu(s.mu[l], step, x.ap_load[l] * RATE_UNIT_BPS, p.capacity[l] * RATE_UNIT_BPS);
            track(&mut s.mu[l], new);
        }
        for k in 0..p.users {
            let rate = x.user_rate[k] * RATE_UNIT_BPS;
            let new = update_xi(s.xi_max[k], s.step_xi * scale / curv_user[k], rate, p.r_max[k] * RATE_UNIT_BPS);
            track(&mut s.xi_max[k], new);
            let new = update_lambda(s.lambda_min[k], s.step_lambda * scale / curv_user[k], rate, p.r_min[k] * RATE_UNIT_BPS);
            track(&mut s.lambda_min[k], new);
        }
        x = primal(&p, &s);
        let (cap, win) = violations(&p, &x);
        if change < opts.tol && cap <= opts.tol_feas && win <= opts.tol_feas {
            converged = true;
            break;
        }
    }
    let (capacity_violation, window_violation) = violations(&p, &x);
    let utility = match p.objective {
        Objective::PerUser => x.user_rate.iter().map(|r| (r * RATE_UNIT_BPS).ln()).sum(),
        Objective::PerLink => p.links.iter().zip(&x.e).map(|(link, e)| (e * link.rate * RATE_UNIT_BPS).ln()).sum(),
    };
    let diagnostics = Diagnostics {
        iterations: s.iteration,
        max_multiplier_change: change,
        capacity_violation,
        window_violation,
        infeasible,
        utility,
        sum_rate: x.user_rate.iter().sum::<f64>() * RATE_UNIT_BPS,
    };
    if infeasible {
        log::info!("demands infeasible; allocation is best effort");
    }
    Ok((x.e, s, converged && !infeasible, diagnostics))
}

fn to_gbps(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x / RATE_UNIT_BPS).collect()
}

fn assemble(users: usize, aps: usize, links: &[Link], e: &[f64]) -> ResourceMatrix {
    let mut m = DMatrix::zeros(users, aps);
    for (link, &e) in links.iter().zip(e) {
        m[(link.user, link.ap)] = e;
    }
    ResourceMatrix(m)
}

/// Allocates resources to users under a fixed association.
///
/// Returns `converged = false` when the iteration budget runs out or the
/// demands are infeasible; the allocation is then best effort.
pub fn allocate(x: &AssignmentMatrix, r: &RateMatrix, c: &Constraints, opts: &AllocOptions) -> Result<Allocation> {
    if x.users() != r.users() || x.aps() != r.aps() {
        return Err(Error::Dimension("assignment and rate matrix disagree".into()));
    }
    c.check(r.users(), r.aps())?;
    let links: Vec<Link> = x
        .serving()
        .iter()
        .enumerate()
        .map(|(user, &ap)| Link { user, ap, rate: r.get(user, ap) / RATE_UNIT_BPS })
        .collect();
    let problem = Problem {
        users: r.users(),
        aps: r.aps(),
        links: links.clone(),
        capacity: to_gbps(&c.capacity),
        r_min: to_gbps(&c.r_min),
        r_max: to_gbps(&c.r_max),
        objective: Objective::PerUser,
    };
    let (e, state, converged, diagnostics) = solve(problem, opts)?;
    Ok(Allocation { resources: assemble(r.users(), r.aps(), &links, &e), state, converged, diagnostics })
}

/// Full-connectivity allocation: every user may draw from every AP that
/// reaches it, with a log term per link. Zero-rate links get no resources.
pub fn solve_p2(r: &RateMatrix, c: &Constraints, opts: &AllocOptions) -> Result<Allocation> {
    c.check(r.users(), r.aps())?;
    let mut links = Vec::new();
    for user in 0..r.users() {
        for ap in 0..r.aps() {
            if r.get(user, ap) > 0.0 {
                links.push(Link { user, ap, rate: r.get(user, ap) / RATE_UNIT_BPS });
            }
        }
    }
    let problem = Problem {
        users: r.users(),
        aps: r.aps(),
        links: links.clone(),
        capacity: to_gbps(&c.capacity),
        r_min: to_gbps(&c.r_min),
        r_max: to_gbps(&c.r_max),
        objective: Objective::PerLink,
    };
    let (e, state, converged, diagnostics) = solve(problem, opts)?;
    Ok(Allocation { resources: assemble(r.users(), r.aps(), &links, &e), state, converged, diagnostics })
}
