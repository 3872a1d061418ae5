//! Command-line experiment runner.
//!
//! Every command reads an [`ExperimentConfig`] (JSON file and/or flags, flags
//! winning), writes CSV files into the output directory and a `manifest.json`
//! with the resolved configuration, build description, wall time, seed and a
//! SHA-256 digest of each file written. CSV content depends only on the
//! configuration (never on timing or worker count).

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analyze::{fit_exponent, AnalyzeError, Point};
use crate::envmodel::{self, validate_hypothesis_a2, validate_hypothesis_a3, EnvironmentModel, ModelError};
use crate::exec::{with_workers, Execution};
use crate::renewal::{self, check_series_identity, solve_recursion, RenewalError};
use crate::simulate::estimate_tail_from;
use crate::walk::{check_harmonic_identity, estimate_u, ladder_probability, write_prob_csv};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SimulateTail,
    RenewalExact,
    RenewalMc,
    WalkLadder,
    UFunction,
    FitExponent,
    Validate,
    Crosscheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SimulateTail => "simulate-tail",
            Command::RenewalExact => "renewal-exact",
            Command::RenewalMc => "renewal-mc",
            Command::WalkLadder => "walk-ladder",
            Command::UFunction => "u-function",
            Command::FitExponent => "fit-exponent",
            Command::Validate => "validate",
            Command::Crosscheck => "crosscheck",
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            Command::SimulateTail
                | Command::RenewalMc
                | Command::WalkLadder
                | Command::UFunction
                | Command::Crosscheck
        )
    }
}

/// Resolved experiment description; also the JSON config file format.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Option<Command>,
    pub preset: Option<String>,
    /// Explicit model; takes precedence over `preset`.
    pub model: Option<EnvironmentModel>,
    pub n_max: Option<u64>,
    pub n_grid: Option<Vec<u64>>,
    pub replicas: Option<u64>,
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    pub workers: Option<usize>,
    pub sequential: Option<bool>,
    pub output_path: Option<PathBuf>,
    /// Named tolerances: `exact_relative`, `mc_z`, `exponent`, `expected_slope`.
    pub tolerances: BTreeMap<String, f64>,
    pub x_grid: Option<Vec<f64>>,
    pub reflected: Option<bool>,
    /// Input CSV for `fit-exponent`.
    pub input: Option<PathBuf>,
    pub fit_range: Option<(f64, f64)>,
    /// Fixed `W_0` instead of the initial immigration law (exploration only).
    pub initial_size: Option<u64>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no model: give --preset or a model in the config")]
    NoModel,
    #[error("command {0} is stochastic and needs --seed")]
    MissingSeed(&'static str),
    #[error("missing setting: {0}")]
    Missing(&'static str),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Renewal(#[from] RenewalError),
    #[error(transparent)]
    Analyze(#[from] AnalyzeError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("{command} checks failed")]
    CheckFailed { command: &'static str, summary: Value },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::CheckFailed { .. } => 1,
            _ => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            RunError::Model(ModelError::UnknownPreset(_)) => "unknown_preset",
            RunError::Model(_) => "invalid_model",
            RunError::NoModel => "no_model",
            RunError::MissingSeed(_) => "missing_seed",
            RunError::Missing(_) => "missing_setting",
            RunError::Config(_) => "config",
            RunError::Renewal(_) => "renewal",
            RunError::Analyze(_) => "analyze",
            RunError::Io(_) => "io",
            RunError::CheckFailed { .. } => "check_failed",
        }
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        if let RunError::CheckFailed { summary, .. } = self {
            v["summary"] = summary.clone();
        }
        v
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config: ExperimentConfig,
    pub build: String,
    pub version: String,
    pub wall_time_seconds: f64,
    pub seed: Option<u64>,
    pub files: Vec<FileDigest>,
    pub summary: Value,
}

pub const BUILD_DESCRIPTION: &str = match option_env!("BPIRE_GIT_DESCRIBE") {
    Some(d) => d,
    None => "unknown",
};

#[derive(Parser, Debug)]
#[command(name = "bpire", version, about = "Branching processes with immigration in a random environment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// example2, deterministic-critical or stable(alpha,beta)
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicas: Option<u64>,
    #[arg(long)]
    pub n_max: Option<u64>,
    /// Comma-separated n values.
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<u64>>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Run single-threaded without the thread pool.
    #[arg(long)]
    pub sequential: bool,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum CliCommand {
    /// Monte Carlo tail P(ζ > n).
    SimulateTail {
        #[command(flatten)]
        common: CommonArgs,
        /// Start from W_0 = k instead of the initial law (exploration only).
        #[arg(long)]
        initial_size: Option<u64>,
    },
    /// Exact renewal series by enumeration.
    RenewalExact {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Monte Carlo renewal series.
    RenewalMc {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Ladder probabilities P(L_n ≥ 0).
    WalkLadder {
        #[command(flatten)]
        common: CommonArgs,
        /// Use the reflected walk -S.
        #[arg(long)]
        reflected: bool,
    },
    /// Renewal function U of the strict descending ladder heights.
    UFunction {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',')]
        x_grid: Option<Vec<f64>>,
    },
    /// Log-log exponent fit of a CSV series.
    FitExponent {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        lo: Option<f64>,
        #[arg(long)]
        hi: Option<f64>,
        /// Expected slope; reported against the `exponent` tolerance.
        #[arg(long)]
        expected_slope: Option<f64>,
    },
    /// Check the model hypotheses.
    Validate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Enumeration vs recursion vs Monte Carlo for small n.
    Crosscheck {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig, RunError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
}

fn merge_common(cfg: &mut ExperimentConfig, c: CommonArgs) {
    if c.preset.is_some() {
        cfg.preset = c.preset;
        cfg.model = None;
    }
    cfg.seed = c.seed.or(cfg.seed);
    cfg.replicas = c.replicas.or(cfg.replicas);
    cfg.n_max = c.n_max.or(cfg.n_max);
    cfg.n_grid = c.n_grid.or(cfg.n_grid.take());
    cfg.workers = c.workers.or(cfg.workers);
    if c.sequential {
        cfg.sequential = Some(true);
    }
    cfg.output_path = c.out.or(cfg.output_path.take());
}

impl Cli {
    /// Config file (if any) overlaid with the flags.
    pub fn into_config(self) -> Result<ExperimentConfig, RunError> {
        let (command, common) = match &self.command {
            CliCommand::SimulateTail { common, .. } => (Command::SimulateTail, common),
            CliCommand::RenewalExact { common } => (Command::RenewalExact, common),
            CliCommand::RenewalMc { common } => (Command::RenewalMc, common),
            CliCommand::WalkLadder { common, .. } => (Command::WalkLadder, common),
            CliCommand::UFunction { common, .. } => (Command::UFunction, common),
            CliCommand::FitExponent { common, .. } => (Command::FitExponent, common),
            CliCommand::Validate { common } => (Command::Validate, common),
            CliCommand::Crosscheck { common } => (Command::Crosscheck, common),
        };
        let mut cfg = match &common.config {
            Some(p) => load_config(p)?,
            None => ExperimentConfig::default(),
        };
        merge_common(&mut cfg, common.clone());
        cfg.command = Some(command);
        match self.command {
            CliCommand::SimulateTail { initial_size, .. } => {
                cfg.initial_size = initial_size.or(cfg.initial_size);
            }
            CliCommand::WalkLadder { reflected, .. } => {
                if reflected {
                    cfg.reflected = Some(true);
                }
            }
            CliCommand::UFunction { x_grid, .. } => cfg.x_grid = x_grid.or(cfg.x_grid.take()),
            CliCommand::FitExponent {
                input,
                lo,
                hi,
                expected_slope,
                ..
            } => {
                cfg.input = input.or(cfg.input.take());
                if lo.is_some() || hi.is_some() {
                    let (l0, h0) = cfg.fit_range.unwrap_or((100.0, 10_000.0));
                    cfg.fit_range = Some((lo.unwrap_or(l0), hi.unwrap_or(h0)));
                }
                if let Some(s) = expected_slope {
                    cfg.tolerances.insert("expected_slope".into(), s);
                }
            }
            _ => {}
        }
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn resolve_model(&self) -> Result<EnvironmentModel, RunError> {
        if let Some(m) = &self.model {
            m.validate()?;
            return Ok(m.clone());
        }
        let name = self.preset.as_deref().ok_or(RunError::NoModel)?;
        Ok(envmodel::preset(name)?)
    }

    fn tolerance(&self, key: &str, default: f64) -> f64 {
        self.tolerances.get(key).copied().unwrap_or(default)
    }

    fn execution(&self) -> Execution {
        if self.sequential == Some(true) {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    fn n_max_or(&self, default: u64) -> u64 {
        self.n_max.unwrap_or(default)
    }

    fn grid(&self, default_max: u64, from: u64) -> Vec<u64> {
        match &self.n_grid {
            Some(g) => g.clone(),
            None => (from..=self.n_max_or(default_max)).collect(),
        }
    }
}

struct Outputs {
    dir: PathBuf,
    files: Vec<FileDigest>,
}

impl Outputs {
    fn new(dir: PathBuf) -> io::Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Outputs { dir, files: Vec::new() })
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> io::Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        fs::write(self.dir.join(name), &buf)?;
        let digest = Sha256::digest(&buf);
        let sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.files.push(FileDigest {
            path: name.to_string(),
            sha256,
        });
        Ok(())
    }
}

/// Runs the configured command and writes its outputs and manifest.
pub fn run(cfg: &ExperimentConfig) -> Result<Manifest, RunError> {
    let command = cfg.command.ok_or(RunError::Missing("command"))?;
    if command.is_stochastic() && cfg.seed.is_none() {
        return Err(RunError::MissingSeed(command.name()));
    }
    let dir = cfg.output_path.clone().unwrap_or_else(|| PathBuf::from("out"));
    let start = Instant::now();
    let mut out = Outputs::new(dir)?;
    let workers = cfg.workers.unwrap_or(0);
    let result = with_workers(workers, || dispatch(command, cfg, &mut out));
    let (summary, ok) = result?;
    let manifest = Manifest {
        command: command.name().to_string(),
        config: cfg.clone(),
        build: BUILD_DESCRIPTION.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        seed: cfg.seed,
        files: out.files.clone(),
        summary: summary.clone(),
    };
    let path = out.dir.join("manifest.json");
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(io::Error::other)?;
    writeln!(w)?;
    w.flush()?;
    if ok {
        Ok(manifest)
    } else {
        Err(RunError::CheckFailed {
            command: command.name(),
            summary,
        })
    }
}

fn dispatch(command: Command, cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(Value, bool), RunError> {
    let exec = cfg.execution();
    let seed = cfg.seed.unwrap_or(0);
    match command {
        Command::SimulateTail => {
            let model = cfg.resolve_model()?;
            let grid = cfg.grid(1000, 0);
            let replicas = cfg.replicas.unwrap_or(100_000);
            let est = estimate_tail_from(&model, &grid, replicas, seed, exec, cfg.initial_size);
            out.write("tail.csv", |w| est.write_csv(w))?;
            Ok((
                json!({
                    "saturated_fraction": est.saturated_fraction,
                    "warning": est.warning,
                    "off_convention_start": cfg.initial_size.is_some(),
                }),
                true,
            ))
        }
        Command::RenewalExact => {
            let model = cfg.resolve_model()?;
            let n_max = cfg.n_max_or(10) as usize;
            let series = renewal::exact_series(&model, n_max, exec)?;
            out.write("renewal_exact.csv", |w| series.write_csv(w))?;
            let id = check_series_identity(&series, n_max);
            Ok((json!({ "series_identity": id }), true))
        }
        Command::RenewalMc => {
            let model = cfg.resolve_model()?;
            let n_max = cfg.n_max_or(1000) as usize;
            let replicas = cfg.replicas.unwrap_or(100_000);
            let direct = n_max <= renewal::DIRECT_R_LIMIT;
            let series = renewal::mc_series(&model, n_max, replicas, seed, exec, direct);
            out.write("renewal_mc.csv", |w| series.write_csv(w))?;
            let id = direct.then(|| check_series_identity(&series, n_max));
            Ok((json!({ "series_identity": id }), true))
        }
        Command::WalkLadder => {
            let model = cfg.resolve_model()?;
            let grid = cfg.grid(1000, 1);
            let replicas = cfg.replicas.unwrap_or(100_000);
            let reflected = cfg.reflected.unwrap_or(false);
            let est = ladder_probability(&model, &grid, replicas, seed, exec, reflected);
            out.write("ladder.csv", |w| write_prob_csv(w, &est))?;
            Ok((json!({ "reflected": reflected }), true))
        }
        Command::UFunction => {
            let model = cfg.resolve_model()?;
            let x_grid = match &cfg.x_grid {
                Some(g) => g.clone(),
                None => {
                    let a = model
                        .increment_support()
                        .map(|s| s.iter().fold(0.0f64, |m, p| m.max(p.1.abs())))
                        .unwrap_or(1.0);
                    (0..=50).map(|i| a * i as f64 / 10.0).collect()
                }
            };
            let replicas = cfg.replicas.unwrap_or(100_000);
            let n_trunc = cfg.n_max_or(10_000);
            let u = estimate_u(&model, &x_grid, n_trunc, replicas, seed, exec);
            out.write("u_function.csv", |w| u.write_csv(w))?;
            let last = x_grid.last().copied().unwrap_or(0.0);
            let x_check: Vec<f64> = (0..5).map(|i| last * i as f64 / 5.0).collect();
            let harm = check_harmonic_identity(&model, &u, &x_check, replicas, seed);
            out.write("harmonic.csv", |w| {
                writeln!(w, "x,lhs,U,discrepancy,stderr,coverage_ok,pass")?;
                for p in &harm {
                    writeln!(
                        w,
                        "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
                        p.x, p.lhs, p.u, p.discrepancy, p.stderr, p.coverage_ok, p.pass
                    )?;
                }
                Ok(())
            })?;
            Ok((
                json!({
                    "tail_fraction": u.tail_fraction,
                    "tail_flag": u.tail_flag,
                    "harmonic_pass": harm.iter().all(|p| p.pass),
                }),
                true,
            ))
        }
        Command::FitExponent => {
            let input = cfg.input.as_ref().ok_or(RunError::Missing("input"))?;
            let series = read_series(input)?;
            let range = cfg.fit_range.unwrap_or((100.0, 10_000.0));
            let fit = fit_exponent(&series, range)?;
            out.write("fit.csv", |w| {
                writeln!(w, "n_lo,n_hi,slope,stderr")?;
                writeln!(
                    w,
                    "{:.16e},{:.16e},{:.16e},{:.16e}",
                    range.0, range.1, fit.slope, fit.slope_stderr
                )?;
                for l in &fit.local_slopes {
                    writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e}", l.n_lo, l.n_hi, l.slope, l.stderr)?;
                }
                Ok(())
            })?;
            let tol = cfg.tolerance("exponent", 0.1);
            let within = cfg
                .tolerances
                .get("expected_slope")
                .map(|e| (fit.slope - e).abs() <= tol);
            Ok((json!({ "fit": fit, "within_tolerance": within }), within != Some(false)))
        }
        Command::Validate => {
            let model = cfg.resolve_model()?;
            let a2 = validate_hypothesis_a2(&model);
            let a3 = validate_hypothesis_a3(&model);
            let ok = a2.pass && a3.pass;
            let summary = json!({ "a2": a2, "a3": a3 });
            out.write("validate.json", |w| {
                serde_json::to_writer_pretty(&mut *w, &summary).map_err(io::Error::other)?;
                writeln!(w)
            })?;
            Ok((summary, ok))
        }
        Command::Crosscheck => {
            let model = cfg.resolve_model()?;
            let n_max = cfg.n_max_or(8) as usize;
            let replicas = cfg.replicas.unwrap_or(1_000_000);
            let exact = renewal::exact_series(&model, n_max, exec)?;
            let rec = solve_recursion(&exact);
            let grid: Vec<u64> = (1..=n_max as u64).collect();
            let tail = estimate_tail_from(&model, &grid, replicas, seed, exec, None);
            let rel_tol = cfg.tolerance("exact_relative", 1e-10);
            let z = cfg.tolerance("mc_z", 2.576);
            let mut rows = Vec::with_capacity(n_max);
            let mut all_ok = true;
            for n in 1..=n_max {
                let r_enum = exact.r[n - 1];
                let r_rec = rec[n - 1];
                let (mc, se) = tail.at(n as u64).unwrap_or((f64::NAN, f64::NAN));
                let exact_ok = (r_rec - r_enum).abs() <= rel_tol * r_enum.abs();
                let mc_ok = (mc - r_enum).abs() <= z * se.max(f64::MIN_POSITIVE);
                all_ok &= exact_ok && mc_ok;
                rows.push((n, r_enum, r_rec, mc, se, exact_ok, mc_ok));
            }
            out.write("crosscheck.csv", |w| {
                writeln!(w, "n,R_enumeration,R_recursion,R_mc,mc_stderr,exact_ok,mc_ok")?;
                for r in &rows {
                    writeln!(
                        w,
                        "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
                        r.0, r.1, r.2, r.3, r.4, r.5, r.6
                    )?;
                }
                Ok(())
            })?;
            let failures: Vec<usize> = rows.iter().filter(|r| !(r.5 && r.6)).map(|r| r.0).collect();
            Ok((json!({ "pass": all_ok, "failed_n": failures }), all_ok))
        }
    }
}

/// Reads `(n, value, stderr)` from a CSV written by one of the commands. The
/// value column is the first of `survival`, `estimate`, `d`, `U`, `R_recursion`
/// present; the stderr column is `stderr` or `<value>_stderr` (zero if absent).
pub fn read_series(path: &Path) -> Result<Vec<Point>, RunError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| RunError::Config(format!("{}: empty file", path.display())))?
        .split(',')
        .map(str::trim)
        .collect();
    let col = |name: &str| header.iter().position(|h| *h == name);
    let bad = |msg: &str| RunError::Config(format!("{}: {msg}", path.display()));
    let n_col = col("n").or_else(|| col("x")).ok_or_else(|| bad("no n column"))?;
    let value_name = ["survival", "estimate", "d", "U", "R_recursion"]
        .into_iter()
        .find(|c| col(c).is_some())
        .ok_or_else(|| bad("no value column"))?;
    let v_col = col(value_name).expect("found above");
    let se_col = col("stderr").or_else(|| col(&format!("{value_name}_stderr")));
    let mut pts = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let parse = |j: usize| -> Result<f64, RunError> {
            let s = f.get(j).copied().unwrap_or("");
            if s.is_empty() {
                return Ok(f64::NAN);
            }
            s.trim()
                .parse::<f64>()
                .map_err(|_| bad(&format!("line {}: bad number {s:?}", i + 2)))
        };
        let se = match se_col {
            Some(j) => parse(j)?,
            None => 0.0,
        };
        pts.push((parse(n_col)?, parse(v_col)?, se));
    }
    Ok(pts)
}

/// Entry point used by the binary: parses `args`, runs, reports errors as JSON
/// on stderr and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match cli.into_config().and_then(|cfg| run(&cfg)) {
        Ok(m) => {
            println!("{}: wrote {} file(s)", m.command, m.files.len() + 1);
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
