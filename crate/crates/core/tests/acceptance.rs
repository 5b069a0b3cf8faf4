//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Failing criteria are reported, not hidden. The process exits non-zero on
//! a failed criterion only when `OWC_ACCEPTANCE_STRICT` is set, so the
//! report can run as part of the ordinary test suite.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use owc_core::alloc::{allocate, AllocOptions, Constraints};
use owc_core::assoc::{brute_force_assoc, AssignmentMatrix, RateMatrix};
use owc_core::bia::{alignment_ratio, base_noise_covariance, block_length};
use owc_core::config::RunConfig;
use owc_core::nn::{EstimatorModel, Parameters, PredictorModel};
use owc_core::optics::{beam_radius, received_power, BeamParams};
use owc_core::sim::{
    estimator_config, generate_dataset, hyper, predictor_config, predictor_samples, spearman, sweep, train_models, Method, Models, SweepKind,
    SweepTable,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(bool, String), String>;

struct Report {
    results: Vec<(u32, bool)>,
}

impl Report {
    fn record(&mut self, id: u32, title: &str, started: Instant, check: Check) {
        let (pass, detail) = check.unwrap_or_else(|e| (false, format!("harness error: {e}")));
        println!("criterion {id:>2} {}: {title}: {detail} [{:.1}s]", if pass { "PASS" } else { "FAIL" }, started.elapsed().as_secs_f64());
        self.results.push((id, pass));
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn bia_structure() -> Check {
    let ratio = alignment_ratio(2, 3).map_err(err)?;
    let len = block_length(2, 3).map_err(err)?;
    let cov = base_noise_covariance(2, 3).map_err(err)?;
    let expected = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
    let pass = ratio.value() == 0.25 && len == 4 && *cov.matrix() == expected;
    Ok((pass, format!("ratio={} block_length={len} covariance diag=({}, {})", ratio.value(), cov.matrix()[(0, 0)], cov.matrix()[(1, 1)])))
}

/// Gaussian intensity integrated over the detector disk in polar
/// coordinates: composite Simpson in radius, midpoint rule in angle.
fn disk_quadrature(pt: f64, w0: f64, wavelength: f64, d: f64, rm: f64) -> f64 {
    let zr = PI * w0 * w0 / wavelength;
    let w = w0 * (1.0 + (d / zr).powi(2)).sqrt();
    let field = |x: f64, y: f64| 2.0 * pt / (PI * w * w) * (-2.0 * (x * x + y * y) / (w * w)).exp();
    // the tail beyond 8 W carries less than exp(-128) of the power
    let r_hi = rm.min(8.0 * w);
    let (nr, nt) = (4000, 64);
    let h = r_hi / nr as f64;
    let ring = |r: f64| -> f64 {
        let dt = 2.0 * PI / nt as f64;
        (0..nt).map(|j| {
            let t = (j as f64 + 0.5) * dt;
            field(r * t.cos(), r * t.sin())
        }).sum::<f64>() * dt * r
    };
    let mut s = ring(0.0) + ring(r_hi);
    for i in 1..nr {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * ring(i as f64 * h);
    }
    s * h / 3.0
}

fn received_power_quadrature() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let pt = rng.gen_range(0.01..2.0);
        let w0 = rng.gen_range(2.0..20.0) * 1e-6;
        let wavelength = rng.gen_range(650.0..1550.0) * 1e-9;
        let d = 10f64.powf(rng.gen_range(-4.0..0.7));
        let rm = rng.gen_range(0.1..5.0) * 1e-3;
        let beam = BeamParams::new(w0, wavelength).map_err(err)?;
        let got = received_power(pt, beam_radius(&beam, d).map_err(err)?, rm).map_err(err)?;
        let want = disk_quadrature(pt, w0, wavelength, d, rm);
        worst = worst.max((got - want).abs() / want);
    }
    Ok((worst < 1e-6, format!("100 tuples, worst relative error {worst:.2e} (limit 1e-6)")))
}

/// Log-utility optimum of one AP's users by successively refined grids over
/// their rates. Points over capacity are scaled back onto the capacity plane.
fn grid_optimum(lo: &[f64], hi: &[f64], capacity: f64) -> f64 {
    let n = lo.len();
    let points = 21usize;
    let (mut a, mut b) = (lo.to_vec(), hi.to_vec());
    let mut best = (f64::NEG_INFINITY, lo.to_vec());
    for _ in 0..15 {
        let total = points.pow(n as u32);
        for idx in 0..total {
            let mut x = vec![0.0; n];
            let mut rest = idx;
            for k in 0..n {
                let step = (rest % points) as f64 / (points - 1) as f64;
                rest /= points;
                x[k] = a[k] + step * (b[k] - a[k]);
            }
            let sum: f64 = x.iter().sum();
            if sum > capacity {
                x.iter_mut().for_each(|v| *v *= capacity / sum);
                if x.iter().zip(lo).any(|(v, l)| v < l) {
                    continue;
                }
            }
            let u: f64 = x.iter().map(|v| v.ln()).sum();
            if u > best.0 {
                best = (u, x);
            }
        }
        for k in 0..n {
            let half = 2.0 * (b[k] - a[k]) / (points - 1) as f64;
            a[k] = (best.1[k] - half).max(lo[k]);
            b[k] = (best.1[k] + half).min(hi[k]);
        }
    }
    best.0
}

fn allocator_vs_grid() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let opts = AllocOptions::default();
    let (mut worst_u, mut worst_c, mut unconverged, mut n) = (0f64, 0f64, 0, 0);
    while n < 50 {
        let users = rng.gen_range(1..=4);
        let aps = rng.gen_range(1..=2);
        let serving: Vec<usize> = (0..users).map(|_| rng.gen_range(0..aps)).collect();
        let rates = DMatrix::from_fn(users, aps, |_, _| rng.gen_range(0.5..5.0) * 1e9);
        let r_min: Vec<f64> = (0..users).map(|_| rng.gen_range(0.1..1.0) * 1e9).collect();
        let r_max: Vec<f64> = r_min.iter().map(|v| v * rng.gen_range(1.5..4.0)).collect();
        let capacity: Vec<f64> = (0..aps).map(|_| rng.gen_range(1.0..6.0) * 1e9).collect();
        let reachable = (0..users).all(|k| r_min[k] <= 0.9 * rates[(k, serving[k])]);
        let fits = (0..aps).all(|l| (0..users).filter(|&k| serving[k] == l).map(|k| r_min[k]).sum::<f64>() <= 0.9 * capacity[l]);
        if !(reachable && fits) {
            continue;
        }
        n += 1;

        let x = AssignmentMatrix::new(serving.clone(), aps).map_err(err)?;
        let r = RateMatrix::new(rates.clone()).map_err(err)?;
        let c = Constraints { capacity: capacity.clone(), r_min: r_min.clone(), r_max: r_max.clone() };
        let a = allocate(&x, &r, &c, &opts).map_err(err)?;
        if !a.converged {
            unconverged += 1;
        }
        let got: Vec<f64> = (0..users).map(|k| a.resources.get(k, serving[k]) * rates[(k, serving[k])]).collect();
        let u_alloc: f64 = got.iter().map(|v| v.ln()).sum();

        let mut u_grid = 0.0;
        for l in 0..aps {
            let on: Vec<usize> = (0..users).filter(|&k| serving[k] == l).collect();
            if on.is_empty() {
                continue;
            }
            let lo: Vec<f64> = on.iter().map(|&k| r_min[k]).collect();
            let hi: Vec<f64> = on.iter().map(|&k| r_max[k].min(rates[(k, l)])).collect();
            u_grid += grid_optimum(&lo, &hi, capacity[l]);
            let load: f64 = on.iter().map(|&k| got[k]).sum();
            worst_c = worst_c.max((load - capacity[l]) / capacity[l]);
        }
        for k in 0..users {
            worst_c = worst_c.max((r_min[k] - got[k]) / r_min[k]).max((got[k] - r_max[k]) / r_max[k]);
            let e = a.resources.get(k, serving[k]);
            worst_c = worst_c.max(e - 1.0).max(-e);
        }
        worst_u = worst_u.max((u_alloc - u_grid).abs());
    }
    let pass = unconverged == 0 && worst_u <= 1e-3 && worst_c <= 1e-3;
    Ok((
        pass,
        format!("50 instances, {unconverged} unconverged, worst |utility gap| {worst_u:.2e}, worst relative constraint violation {worst_c:.2e} (limits 1e-3)"),
    ))
}

/// Lexicographic enumeration keeping the first strictly better assignment.
fn enumerate_best(r: &DMatrix<f64>) -> (Vec<usize>, f64) {
    let (users, aps) = r.shape();
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    let mut cur = vec![0; users];
    loop {
        let mut loads = vec![0usize; aps];
        cur.iter().for_each(|&l| loads[l] += 1);
        let u: f64 = cur.iter().enumerate().map(|(k, &l)| if r[(k, l)] > 0.0 { (r[(k, l)] / loads[l] as f64).ln() } else { f64::NEG_INFINITY }).sum();
        if best.0.is_empty() || u > best.1 {
            best = (cur.clone(), u);
        }
        // increment with the last user as the fastest digit
        let mut k = users;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            cur[k] += 1;
            if cur[k] < aps {
                break;
            }
            cur[k] = 0;
        }
    }
}

fn brute_force_vs_enumerator() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for _ in 0..100 {
        let users = rng.gen_range(1..=4);
        let aps = rng.gen_range(1..=3);
        let mut r = DMatrix::from_fn(users, aps, |_, _| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.1..5.0) * 1e9 });
        for k in 0..users {
            if r.row(k).iter().all(|&v| v == 0.0) {
                r[(k, rng.gen_range(0..aps))] = rng.gen_range(0.1..5.0) * 1e9;
            }
        }
        let (x, u) = brute_force_assoc(&RateMatrix::new(r.clone()).map_err(err)?).map_err(err)?;
        let (serving, want) = enumerate_best(&r);
        if x.serving() != serving.as_slice() || u != want {
            mismatches += 1;
        }
    }
    Ok((mismatches == 0, format!("100 instances, {mismatches} mismatches")))
}

fn worst_gradient_error<M: Parameters>(model: &M, analytic: &M, loss: impl Fn(&M) -> f64) -> (f64, usize) {
    let h = 1e-5;
    let mut probe = model.clone();
    let grads: Vec<Vec<f64>> = analytic.params().iter().map(|p| p.to_vec()).collect();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (a, g) in grads.iter().enumerate() {
        for (j, &an) in g.iter().enumerate() {
            let orig = probe.params()[a][j];
            probe.params_mut()[a][j] = orig + h;
            let up = loss(&probe);
            probe.params_mut()[a][j] = orig - h;
            let down = loss(&probe);
            probe.params_mut()[a][j] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
            count += 1;
        }
    }
    (worst, count)
}

fn one_hot(users: usize, aps: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v = vec![0.0; users * aps];
    for k in 0..users {
        v[k * aps + rng.gen_range(0..aps)] = 1.0;
    }
    v
}

fn gradient_checks() -> Check {
    let cfg = RunConfig::default();
    let (users, aps) = (cfg.population.users, cfg.aps());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let target = one_hot(users, aps, &mut rng);
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;

    for conv in [0, 4] {
        let mut ec = estimator_config(&cfg);
        ec.conv_channels = conv;
        let model = EstimatorModel::new(ec, 7).map_err(err)?;
        let features: Vec<f64> = (0..ec.input_dim()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut grad = model.zeros_like();
        model.loss_and_grad(&features, &target, &mut grad).map_err(err)?;
        let (w, n) = worst_gradient_error(&model, &grad, |m| m.loss(&features, &target).unwrap());
        parts.push(format!("estimator(conv={conv}) {n} params {w:.2e}"));
        worst = worst.max(w);
    }

    let pc = predictor_config(&cfg);
    let model = PredictorModel::new(pc, 7).map_err(err)?;
    let history: Vec<Vec<f64>> = (0..pc.window).map(|_| one_hot(users, aps, &mut rng)).collect();
    let mut grad = model.zeros_like();
    model.loss_and_grad(&history, &target, &mut grad).map_err(err)?;
    let (w, n) = worst_gradient_error(&model, &grad, |m| m.loss(&history, &target).unwrap());
    parts.push(format!("lstm {} steps {n} params {w:.2e}", pc.window));
    worst = worst.max(w);

    Ok((worst < 1e-4 && pc.window >= 3, format!("{} (limit 1e-4)", parts.join(", "))))
}

/// Every epoch after the fifth stays within 5% of the best loss seen since epoch 5.
fn settles(curve: &[f64]) -> bool {
    curve.len() > 5 && (5..curve.len()).all(|i| curve[i] <= 1.05 * curve[4..i].iter().cloned().fold(f64::INFINITY, f64::min))
}

fn dataset_size_trend(cfg: &RunConfig, small_report: &owc_core::nn::TrainReport) -> Check {
    let mut big = cfg.clone();
    big.nn.dataset_samples = 10_000;
    let ds = generate_dataset(&big).map_err(err)?;
    let (_, big_report) = owc_core::nn::train_predictor(&predictor_samples(&ds, big.nn.window).map_err(err)?, predictor_config(&big), &hyper(&big))
        .map_err(err)?;
    let final_of = |r: &owc_core::nn::TrainReport| *r.val_mse.last().unwrap_or(&f64::NAN);
    let (s, b) = (final_of(small_report), final_of(&big_report));
    let shapes = [
        ("5000 train", settles(&small_report.train_mse)),
        ("5000 val", settles(&small_report.val_mse)),
        ("10000 train", settles(&big_report.train_mse)),
        ("10000 val", settles(&big_report.val_mse)),
    ];
    let bad: Vec<&str> = shapes.iter().filter(|s| !s.1).map(|s| s.0).collect();
    Ok((
        b < s && bad.is_empty(),
        format!(
            "lstm final val mse 5000={s:.5} 10000={b:.5} over {} epochs, curves not settling after epoch 5: {}",
            small_report.epochs,
            if bad.is_empty() { "none".into() } else { bad.join(", ") }
        ),
    ))
}

fn mean_curve(t: &SweepTable, m: Method) -> Vec<f64> {
    let s = t.series(m);
    (0..t.values.len()).map(|v| s.iter().map(|row| row[v]).sum::<f64>() / s.len() as f64).collect()
}

fn overall_mean(t: &SweepTable, m: Method) -> f64 {
    let c = mean_curve(t, m);
    c.iter().sum::<f64>() / c.len() as f64
}

fn beam_waist_trend(t: &SweepTable) -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    for m in [Method::Oracle, Method::Pipeline] {
        let rho = spearman(&t.values, &mean_curve(t, m));
        let (xs, ys): (Vec<f64>, Vec<f64>) =
            t.series(m).iter().flat_map(|row| t.values.iter().cloned().zip(row.iter().cloned())).unzip();
        let pooled = spearman(&xs, &ys);
        pass &= rho >= 0.9;
        parts.push(format!("{m} spearman {rho:.3} (pooled {pooled:.3})"));
    }
    let means: Vec<(Method, f64)> = [Method::Pipeline, Method::P2, Method::Distance].iter().map(|&m| (m, overall_mean(t, m))).collect();
    for w in means.windows(2) {
        let ok = w[0].1 >= w[1].1;
        pass &= ok;
        parts.push(format!("{} {:.3e} >= {} {:.3e} {}", w[0].0, w[0].1, w[1].0, w[1].1, if ok { "holds" } else { "does not hold" }));
    }
    Ok((pass, parts.join(", ")))
}

fn pipeline_share(t: &SweepTable, cfg: &RunConfig, ds: &owc_core::sim::Dataset) -> Check {
    let at = t.values.iter().position(|&v| v == cfg.optics.beam_waist_um).ok_or("default beam waist missing from the sweep")?;
    let mean_at = |table: &SweepTable, m: Method, v: usize| {
        let s = table.series(m);
        s.iter().map(|row| row[v]).sum::<f64>() / s.len() as f64
    };
    let ratio = mean_at(t, Method::Pipeline, at) / mean_at(t, Method::Oracle, at);

    let mut blind = cfg.clone();
    blind.nn.channel_features = false;
    blind.sweep.beam_waist_um = vec![cfg.optics.beam_waist_um];
    let trained = train_models(ds, &blind).map_err(err)?;
    let bt = sweep(&blind, SweepKind::BeamWaist, Some(&trained.models)).map_err(err)?;
    let ablation = mean_at(&bt, Method::Pipeline, 0) / mean_at(&bt, Method::Oracle, 0);

    let pass = ratio >= 0.75;
    let note = if ratio >= 0.9 { "meets 90%" } else if ratio >= 0.75 { "below 90%, above the 75% floor" } else { "below the 75% floor" };
    Ok((
        pass,
        format!("{} held-out scenarios, pipeline/oracle {ratio:.4} ({note}), channel_features=false ablation {ablation:.4}", t.series(Method::Oracle).len()),
    ))
}

fn snr_trend(t: &SweepTable) -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    for m in Method::ALL {
        let c = mean_curve(t, m);
        let ok = c.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-3));
        pass &= ok;
        parts.push(format!("{m} {}", if ok { "nondecreasing" } else { "decreases" }));
    }
    let (p, d) = (mean_curve(t, Method::Pipeline), mean_curve(t, Method::Distance));
    let margins: Vec<String> = p.iter().zip(&d).map(|(a, b)| format!("{:+.1}%", 100.0 * (a / b - 1.0))).collect();
    let above = p.iter().zip(&d).all(|(a, b)| a > b);
    pass &= above;
    parts.push(format!("pipeline over distance at {:?} dB: {}", t.values, margins.join(" ")));
    Ok((pass, parts.join(", ")))
}

const DETERMINISM_CONFIG: &str = "seed = 21\n\n[population]\nusers = 4\nperiods = 8\nscenarios = 4\n\n[nn]\ndataset_samples = 400\nepochs = 5\n";

fn cli_chain(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    std::fs::write(dir.join("run.toml"), DETERMINISM_CONFIG).map_err(err)?;
    let models = ["--estimator", "models/estimator.json", "--predictor", "models/predictor.json"];
    let steps: Vec<Vec<&str>> = vec![
        vec!["config", "--out", "default.toml"],
        vec!["gen-dataset", "--config", "run.toml", "--out", "ds.json"],
        vec!["train", "--dataset", "ds.json", "--out", "models"],
        [&["simulate", "--config", "run.toml", "--out", "sim.csv"][..], &models].concat(),
        [&["sweep", "--config", "run.toml", "--sweep", "beam-waist", "--out", "w0.csv"][..], &models].concat(),
        [&["sweep", "--config", "run.toml", "--sweep", "snr", "--out", "snr.csv"][..], &models].concat(),
    ];
    for args in &steps {
        let out = Command::new(env!("CARGO_BIN_EXE_owc")).current_dir(dir).args(["--verbosity", "quiet"]).args(args).output().map_err(err)?;
        if !out.status.success() {
            return Err(format!("{}: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()));
        }
    }
    let files = ["default.toml", "ds.json", "models/estimator.json", "models/predictor.json", "models/train_report.json", "sim.csv", "w0.csv", "snr.csv"];
    files.iter().map(|f| Ok((f.to_string(), std::fs::read(dir.join(f)).map_err(err)?))).collect()
}

fn determinism() -> Check {
    let (a, b) = (tempfile::tempdir().map_err(err)?, tempfile::tempdir().map_err(err)?);
    let (x, y) = (cli_chain(a.path())?, cli_chain(b.path())?);
    let differ: Vec<&str> = x.iter().zip(&y).filter(|(p, q)| p.1 != q.1).map(|(p, _)| p.0.as_str()).collect();
    Ok((
        differ.is_empty(),
        format!("{} outputs of 6 commands compared byte for byte, differing: {}", x.len(), if differ.is_empty() { "none".into() } else { differ.join(", ") }),
    ))
}

fn main() {
    let mut report = Report { results: Vec::new() };
    let t = Instant::now();
    report.record(1, "alignment ratio, block length and noise covariance for Lv=2, K=3", t, bia_structure());
    let t = Instant::now();
    report.record(2, "received power against disk quadrature", t, received_power_quadrature());
    let t = Instant::now();
    report.record(3, "allocator against grid-search optimum", t, allocator_vs_grid());
    let t = Instant::now();
    report.record(4, "exhaustive association against independent enumerator", t, brute_force_vs_enumerator());
    let t = Instant::now();
    report.record(5, "finite-difference gradient checks", t, gradient_checks());

    let cfg = RunConfig::default();
    let t = Instant::now();
    let shared = generate_dataset(&cfg).and_then(|ds| train_models(&ds, &cfg).map(|m| (ds, m))).map_err(err);
    println!("trained shared models on {} snapshots [{:.1}s]", cfg.nn.dataset_samples, t.elapsed().as_secs_f64());

    let t = Instant::now();
    let check = shared.as_ref().map_err(Clone::clone).and_then(|(_, m)| dataset_size_trend(&cfg, &m.predictor_report));
    report.record(6, "larger training set lowers validation loss", t, check);

    let models: Result<&Models, String> = shared.as_ref().map(|(_, m)| &m.models).map_err(Clone::clone);
    let t = Instant::now();
    let w0 = models.clone().and_then(|m| sweep(&cfg, SweepKind::BeamWaist, Some(m)).map_err(err));
    report.record(7, "beam waist sweep trend and method ordering", t, w0.as_ref().map_err(Clone::clone).and_then(beam_waist_trend));
    let t = Instant::now();
    let check = w0.as_ref().map_err(Clone::clone).and_then(|table| {
        let (ds, _) = shared.as_ref().map_err(Clone::clone)?;
        pipeline_share(table, &cfg, ds)
    });
    report.record(8, "pipeline share of the oracle", t, check);
    let t = Instant::now();
    let check = models.and_then(|m| sweep(&cfg, SweepKind::Snr, Some(m)).map_err(err)).and_then(|table| snr_trend(&table));
    report.record(9, "SNR sweep trend", t, check);

    let t = Instant::now();
    report.record(10, "byte-identical reruns", t, determinism());

    let failed: Vec<String> = report.results.iter().filter(|r| !r.1).map(|r| r.0.to_string()).collect();
    println!("acceptance: {}/{} criteria pass{}", report.results.len() - failed.len(), report.results.len(), if failed.is_empty() { String::new() } else { format!(", failing: {}", failed.join(", ")) });
    if !failed.is_empty() && std::env::var_os("OWC_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
