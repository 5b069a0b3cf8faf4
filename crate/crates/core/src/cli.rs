//! Batch command-line front end.
//!
//! Every output file embeds the resolved configuration and its hash; CSV
//! files carry them as `# config:` and `# config_hash:` header lines, JSON
//! files as `config` and `config_hash` fields. `owc verify` recomputes the
//! hash. Failures print one line, `error: CATEGORY: message`, and exit 2.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{config_hash, RunConfig};
use crate::error::Error;
use crate::nn::{EstimatorModel, ModelFile, PredictorModel, TrainReport};
use crate::sim::{
    generate_dataset, generate_scenario, run_all, scenario_seed, sweep, train_models, Dataset, Models, Network, SweepKind, STREAM_EVAL,
};

pub const REPORT_FORMAT: &str = "owc-train-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "owc", version, about = "Association and resource allocation for laser-based optical wireless networks")]
pub struct Cli {
    /// Log detail on stderr.
    #[arg(long, value_enum, default_value_t = Verbosity::Normal, global = true)]
    pub verbosity: Verbosity,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Verbosity {
    Quiet,
    Normal,
    Verbose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepArg {
    BeamWaist,
    Snr,
}

impl From<SweepArg> for SweepKind {
    fn from(s: SweepArg) -> Self {
        match s {
            SweepArg::BeamWaist => SweepKind::BeamWaist,
            SweepArg::Snr => SweepKind::Snr,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the default configuration as TOML.
    Config {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label training scenarios with the exhaustive association.
    GenDataset {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the estimator and predictor on a dataset; writes
    /// `estimator.json`, `predictor.json` and `train_report.json`.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Overrides the training seed of the dataset's configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every method on the evaluation scenarios; one CSV row per period.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, requires = "predictor")]
        estimator: Option<PathBuf>,
        #[arg(long, requires = "estimator")]
        predictor: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the beam waist or the SNR; one CSV row per value and method.
    /// Without models the pipeline rows are omitted.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        sweep: SweepArg,
        #[arg(long, requires = "predictor")]
        estimator: Option<PathBuf>,
        #[arg(long, requires = "estimator")]
        predictor: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute and check the config hash embedded in output files.
    Verify {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

/// A failed command: machine-readable category and a one-line message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub category: &'static str,
    pub message: String,
}

impl Failure {
    fn new(category: &'static str, message: impl Into<String>) -> Self {
        Self { category, message: message.into() }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("IO_ERROR", format!("{}: {e}", path.display()))
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let one_line = self.message.split('\n').map(str::trim).filter(|s| !s.is_empty()).collect::<Vec<_>>().join("; ");
        write!(f, "error: {}: {one_line}", self.category)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let category = match &e {
            Error::Domain(_) | Error::Unassigned { .. } => "DOMAIN",
            Error::Dimension(_) => "DIMENSION_MISMATCH",
            Error::Size(_) => "GUARD_EXCEEDED",
            Error::Numerical(_) => "NUMERICAL",
            Error::Config(_) => "CONFIG_INVALID",
            Error::ConfigParse(_) => "CONFIG_PARSE",
            Error::Training(_) => "TRAINING_FAILED",
            Error::Format(_) | Error::Json(_) => "FORMAT_ERROR",
            Error::Io(_) => "IO_ERROR",
        };
        let message = match e {
            Error::Config(v) => format!("invalid configuration: {}", v.join("; ")),
            other => other.to_string(),
        };
        Self::new(category, message)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let msg: Vec<&str> = text.lines().take_while(|l| !l.starts_with("Usage:")).map(str::trim).filter(|l| !l.is_empty()).collect();
            eprintln!("{}", Failure::new("USAGE", msg.join(" ").trim_start_matches("error: ")));
            return 2;
        }
    };
    init_logging(cli.verbosity);
    match run(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("{f}");
            2
        }
    }
}

fn init_logging(v: Verbosity) {
    let level = match v {
        Verbosity::Quiet => log::LevelFilter::Error,
        Verbosity::Normal => log::LevelFilter::Info,
        Verbosity::Verbose => log::LevelFilter::Debug,
    };
    // A second initialisation (tests calling in-process) is harmless.
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format(|buf, record| writeln!(buf, "owc {} {}", record.level(), record.args()))
        .try_init();
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Config { out } => {
            let text = RunConfig::default().to_toml();
            match out {
                Some(path) => write_file(&path, text.as_bytes(), &[]),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::GenDataset { config, seed, out } => {
            let cfg = resolve_config(config.as_deref(), seed)?;
            guard_inputs(&out, &[config.as_deref()])?;
            log::info!("gen-dataset seed={} config_hash={}", cfg.seed, cfg.hash());
            let ds = generate_dataset(&cfg)?;
            log::info!("dataset snapshots={} scenarios={}", ds.meta.snapshots, ds.meta.scenarios);
            write_json(&out, &ds)
        }
        Command::Train { dataset, seed, out } => train(&dataset, seed, &out),
        Command::Simulate { config, seed, estimator, predictor, out } => {
            let cfg = resolve_config(config.as_deref(), seed)?;
            guard_inputs(&out, &[config.as_deref(), estimator.as_deref(), predictor.as_deref()])?;
            let models = load_models(estimator.as_deref(), predictor.as_deref(), &cfg)?;
            log::info!("simulate seed={} config_hash={}", cfg.seed, cfg.hash());
            simulate(&cfg, models.as_ref(), &out)
        }
        Command::Sweep { config, seed, sweep: kind, estimator, predictor, out } => {
            let cfg = resolve_config(config.as_deref(), seed)?;
            guard_inputs(&out, &[config.as_deref(), estimator.as_deref(), predictor.as_deref()])?;
            let models = load_models(estimator.as_deref(), predictor.as_deref(), &cfg)?;
            log::info!("sweep {} seed={} config_hash={}", SweepKind::from(kind).name(), cfg.seed, cfg.hash());
            let table = sweep(&cfg, kind.into(), models.as_ref())?;
            let mut body = csv::Writer::from_writer(Vec::new());
            body.write_record(["sweep", "value", "method", "mean_sum_rate_bps", "std_bps"]).map_err(csv_failure)?;
            for r in table.rows() {
                body.write_record([r.sweep, r.value.to_string(), r.method.to_string(), r.mean_sum_rate.to_string(), r.std.to_string()])
                    .map_err(csv_failure)?;
            }
            write_csv(&out, &cfg, body)
        }
        Command::Verify { files } => {
            for f in &files {
                let hash = verify_file(f)?;
                println!("ok {} {hash}", f.display());
            }
            Ok(())
        }
    }
}

/// Loads the config (defaults when no path is given) and applies `--seed`.
pub fn resolve_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<RunConfig> {
    let mut cfg = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Failure::new("CONFIG_NOT_FOUND", format!("{}", p.display())),
                _ => Failure::io(p, e),
            })?;
            RunConfig::from_toml(&text)?
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Refuses to write over any input file.
fn guard_inputs(out: &Path, inputs: &[Option<&Path>]) -> CliResult<()> {
    let target = std::fs::canonicalize(out).ok();
    for p in inputs.iter().flatten() {
        if target.is_some() && std::fs::canonicalize(p).ok() == target {
            return Err(Failure::new("IO_ERROR", format!("output {} would overwrite an input", out.display())));
        }
    }
    Ok(())
}

fn load_models(estimator: Option<&Path>, predictor: Option<&Path>, cfg: &RunConfig) -> CliResult<Option<Models>> {
    let (Some(e), Some(p)) = (estimator, predictor) else {
        return Ok(None);
    };
    let models = Models {
        estimator: EstimatorModel::from_file(&read_json::<ModelFile>(e)?)?,
        predictor: PredictorModel::from_file(&read_json::<ModelFile>(p)?)?,
    };
    models.check(cfg)?;
    Ok(Some(models))
}

/// Both training reports with the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainReportFile {
    pub format: String,
    pub version: u32,
    pub dataset_config_hash: String,
    pub estimator: TrainReport,
    pub predictor: TrainReport,
    pub config: serde_json::Value,
    pub config_hash: String,
}

fn train(dataset: &Path, seed: Option<u64>, out: &Path) -> CliResult<()> {
    let ds: Dataset = read_json(dataset)?;
    let mut cfg = ds.run_config()?;
    if config_hash(&ds.config) != ds.config_hash {
        return Err(Failure::new("HASH_MISMATCH", format!("{}: embedded config does not match its hash", dataset.display())));
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    std::fs::create_dir_all(out).map_err(|e| Failure::io(out, e))?;
    let paths = ["estimator.json", "predictor.json", "train_report.json"].map(|n| out.join(n));
    for p in &paths {
        guard_inputs(p, &[Some(dataset)])?;
    }
    log::info!("train seed={} config_hash={}", cfg.seed, cfg.hash());
    let trained = train_models(&ds, &cfg)?;
    let (config, hash) = (cfg.to_json(), cfg.hash());
    write_json(&paths[0], &trained.models.estimator.to_file(config.clone(), hash.clone()))?;
    write_json(&paths[1], &trained.models.predictor.to_file(config.clone(), hash.clone()))?;
    let report = TrainReportFile {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        dataset_config_hash: ds.config_hash.clone(),
        estimator: trained.estimator_report,
        predictor: trained.predictor_report,
        config,
        config_hash: hash,
    };
    write_json(&paths[2], &report)
}

fn simulate(cfg: &RunConfig, models: Option<&Models>, out: &Path) -> CliResult<()> {
    let net = Network::new(cfg)?;
    let per_scenario = (0..cfg.population.scenarios)
        .into_par_iter()
        .map(|i| {
            let s = generate_scenario(cfg, scenario_seed(cfg.seed, STREAM_EVAL, i))?;
            let outcomes = run_all(&net, cfg, &s, models)?;
            log::info!("simulate scenario={i} periods={}", outcomes.len());
            Ok(outcomes)
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let mut body = csv::Writer::from_writer(Vec::new());
    body.write_record(["scenario", "period", "method", "sum_rate_bps", "converged", "infeasible", "serving"]).map_err(csv_failure)?;
    for (i, outcomes) in per_scenario.iter().enumerate() {
        for o in outcomes {
            let serving = o.serving.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
            body.write_record([
                i.to_string(),
                o.period.to_string(),
                o.method.to_string(),
                o.sum_rate.to_string(),
                o.converged.to_string(),
                o.infeasible.to_string(),
                serving,
            ])
            .map_err(csv_failure)?;
        }
    }
    write_csv(out, cfg, body)
}

fn csv_failure(e: csv::Error) -> Failure {
    Failure::new("IO_ERROR", e.to_string())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::new("FORMAT_ERROR", format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::new("FORMAT_ERROR", e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes(), &[])
}

fn write_csv(path: &Path, cfg: &RunConfig, body: csv::Writer<Vec<u8>>) -> CliResult<()> {
    let body = body.into_inner().map_err(|e| Failure::new("IO_ERROR", e.to_string()))?;
    let header = format!("# config: {}\n# config_hash: {}\n", cfg.to_json(), cfg.hash());
    write_file(path, header.as_bytes(), &body)
}

fn write_file(path: &Path, head: &[u8], tail: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    let mut bytes = head.to_vec();
    bytes.extend_from_slice(tail);
    std::fs::write(path, bytes).map_err(|e| Failure::io(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// Checks the embedded config against its hash; returns the hash.
pub fn verify_file(path: &Path) -> CliResult<String> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let (config, claimed) = if text.starts_with("# config:") {
        let mut config = None;
        let mut claimed = None;
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some(rest) = line.strip_prefix("# config: ") {
                config = Some(serde_json::from_str::<serde_json::Value>(rest).map_err(|e| Failure::new("FORMAT_ERROR", e.to_string()))?);
            } else if let Some(rest) = line.strip_prefix("# config_hash: ") {
                claimed = Some(rest.trim().to_string());
            }
        }
        match (config, claimed) {
            (Some(c), Some(h)) => (c, h),
            _ => return Err(Failure::new("FORMAT_ERROR", format!("{}: missing config header", path.display()))),
        }
    } else {
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Failure::new("FORMAT_ERROR", format!("{}: {e}", path.display())))?;
        match (v.get("config"), v.get("config_hash").and_then(|h| h.as_str())) {
            (Some(c), Some(h)) => (c.clone(), h.to_string()),
            _ => return Err(Failure::new("FORMAT_ERROR", format!("{}: no embedded config", path.display()))),
        }
    };
    let actual = config_hash(&config);
    if actual != claimed {
        return Err(Failure::new("HASH_MISMATCH", format!("{}: embedded hash {claimed}, recomputed {actual}", path.display())));
    }
    Ok(actual)
}
