//! The `recursim` command line.
//!
//! Exit codes: 0 on success, 1 on invalid input (bad flags, config or
//! parameters), 2 on runtime failure.

pub mod settings;

pub use settings::{load_config, parse_config, Manifest, Settings};

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::experiments::{self, ExperimentConfig, ExperimentResult, ParamRanges, StudyKind};
use crate::inference::{estimate_all, CloneMode};
use crate::model::ModelParams;
use crate::ode::{solve_ode, OdeOptions};
use crate::seeds::entropy_seed;
use crate::ssa::{run_ssa, RecordingSpec, SimOutcome, StopCaps};

/// Prints a line to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "RECURSIM_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "recursim",
    version,
    about = "Simulate and infer tumor recurrence under therapy"
)]
pub struct Cli {
    /// Print progress and timings to stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one stochastic realization.
    Simulate {
        #[command(flatten)]
        common: CommonFlags,
        #[command(flatten)]
        params: ParamFlags,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        t_max: Option<f64>,
        /// Path points to keep.
        #[arg(long)]
        max_points: Option<usize>,
    },
    /// Solve the deterministic limit and report its recurrence time.
    Ode {
        #[command(flatten)]
        common: CommonFlags,
        #[command(flatten)]
        params: ParamFlags,
        #[arg(long)]
        t_max: Option<f64>,
        /// End the integration at the recurrence time.
        #[arg(long)]
        stop_at_crossing: bool,
    },
    /// Apply the estimators to a saved outcome.json.
    Estimate {
        #[command(flatten)]
        common: CommonFlags,
        /// outcome.json, or a directory containing one.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        mode: Option<CloneMode>,
    },
    /// Stochastic paths against the deterministic limit over several n.
    Convergence(StudyFlags),
    /// Estimator errors over several n.
    Consistency(StudyFlags),
    /// Estimator errors over sampled admissible parameters.
    Robustness(StudyFlags),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Simulate { .. } => "simulate",
            Self::Ode { .. } => "ode",
            Self::Estimate { .. } => "estimate",
            Self::Convergence(_) => "convergence",
            Self::Consistency(_) => "consistency",
            Self::Robustness(_) => "robustness",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonFlags {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default `$RECURSIM_OUT/<command>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write wall-clock timings to timings.json.
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ParamFlags {
    #[arg(long, value_parser = parse_count)]
    pub n: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda0: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub r0: Option<f64>,
    #[arg(long)]
    pub d0: Option<f64>,
    #[arg(long)]
    pub d1: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct StudyFlags {
    #[command(flatten)]
    pub common: CommonFlags,
    #[command(flatten)]
    pub params: ParamFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub mode: Option<CloneMode>,
    /// Replicates per n, or sampled tuples for robustness.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Comma-separated system sizes, e.g. `1e3,1e4,1e5`.
    #[arg(long, value_delimiter = ',', value_parser = parse_count)]
    pub n_list: Option<Vec<u64>>,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub max_points: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long, allow_hyphen_values = true, value_parser = parse_range)]
    pub lambda0_range: Option<[f64; 2]>,
    #[arg(long, value_parser = parse_range)]
    pub lambda1_range: Option<[f64; 2]>,
    #[arg(long, value_parser = parse_range)]
    pub alpha_range: Option<[f64; 2]>,
    #[arg(long, value_parser = parse_range)]
    pub beta_range: Option<[f64; 2]>,
    #[arg(long, value_parser = parse_range)]
    pub k_range: Option<[f64; 2]>,
}

/// Accepts `1000000` as well as `1e6`.
fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a count"))?;
    if v >= 0.0 && v.fract() == 0.0 && v < u64::MAX as f64 {
        Ok(v as u64)
    } else {
        Err(format!("`{s}` is not a nonnegative integer"))
    }
}

/// `lo,hi`.
fn parse_range(s: &str) -> Result<[f64; 2], String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `lo,hi`, got `{s}`"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower bound in `{s}`"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper bound in `{s}`"))?;
    Ok([lo, hi])
}

impl ParamFlags {
    fn settings(&self) -> Settings {
        Settings {
            n: self.n,
            alpha: self.alpha,
            beta: self.beta,
            lambda0: self.lambda0,
            lambda1: self.lambda1,
            r0: self.r0,
            d0: self.d0,
            d1: self.d1,
            k: self.k,
            nu: self.nu,
            ..Settings::default()
        }
    }
}

impl StudyFlags {
    fn settings(&self) -> Settings {
        Settings {
            out: self.common.out.clone(),
            seed: self.seed,
            t_max: self.t_max,
            mode: self.mode,
            replicates: self.replicates,
            n_list: self.n_list.clone(),
            workers: self.workers,
            max_points: self.max_points,
            bins: self.bins,
            lambda0_range: self.lambda0_range,
            lambda1_range: self.lambda1_range,
            alpha_range: self.alpha_range,
            beta_range: self.beta_range,
            k_range: self.k_range,
            ..self.params.settings()
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

/// Layers config file and flags for `command`.
fn layered(config: Option<&Path>, command: &str, flags: Settings) -> Result<Settings> {
    let file = match config {
        Some(path) => load_config(path, command)?,
        None => Settings::default(),
    };
    Ok(file.overlay(flags))
}

/// `--out`, else `$RECURSIM_OUT/<command>`, else `out/<command>`.
pub fn default_out(command: &str) -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
        .join(command)
}

fn resolve_seed(settings: &mut Settings) -> bool {
    match settings.seed {
        Some(_) => false,
        None => {
            settings.seed = Some(entropy_seed());
            true
        }
    }
}

fn checked_params(p: ModelParams) -> Result<ModelParams> {
    let report = p.validate();
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    p.validated()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn digest_files(dir: &Path, names: &[&str]) -> Result<BTreeMap<String, String>> {
    use sha2::{Digest, Sha256};
    let mut out = BTreeMap::new();
    for name in names {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        out.insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
    }
    Ok(out)
}

fn write_timings(dir: &Path, command: &str, started: Instant) -> Result<()> {
    let path = dir.join("timings.json");
    let json = serde_json::json!({
        "command": command,
        "wall_seconds": started.elapsed().as_secs_f64(),
    });
    std::fs::write(&path, serde_json::to_string_pretty(&json)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn run(cli: &Cli) -> Result<()> {
    let started = Instant::now();
    let command = cli.command.name();
    let (common, dir) = match &cli.command {
        Command::Simulate {
            common,
            params,
            seed,
            t_max,
            max_points,
        } => {
            let flags = Settings {
                out: common.out.clone(),
                seed: *seed,
                t_max: *t_max,
                max_points: *max_points,
                ..params.settings()
            };
            let settings = layered(common.config.as_deref(), command, flags)?;
            (common, simulate(settings)?)
        }
        Command::Ode {
            common,
            params,
            t_max,
            stop_at_crossing,
        } => {
            let flags = Settings {
                out: common.out.clone(),
                t_max: *t_max,
                stop_at_crossing: stop_at_crossing.then_some(true),
                ..params.settings()
            };
            let settings = layered(common.config.as_deref(), command, flags)?;
            (common, ode(settings)?)
        }
        Command::Estimate { common, input, mode } => {
            let flags = Settings {
                out: common.out.clone(),
                input: input.clone(),
                mode: *mode,
                ..Settings::default()
            };
            let settings = layered(common.config.as_deref(), command, flags)?;
            (common, estimate(settings)?)
        }
        Command::Convergence(flags) | Command::Consistency(flags) | Command::Robustness(flags) => {
            let kind: StudyKind = command.parse().map_err(Error::Config)?;
            let settings = layered(flags.common.config.as_deref(), command, flags.settings())?;
            (&flags.common, study(kind, settings, cli.verbose)?)
        }
    };
    if common.timings {
        write_timings(&dir, command, started)?;
    }
    if cli.verbose > 0 {
        eprintln!("{command} finished in {:.2} s", started.elapsed().as_secs_f64());
    }
    Ok(())
}

/// Resolved inputs of `simulate`.
pub struct SimulateJob {
    pub params: ModelParams,
    pub seed: u64,
    pub caps: StopCaps,
    pub grid: RecordingSpec,
    pub out: PathBuf,
    pub settings: Settings,
    pub seed_from_entropy: bool,
}

pub fn resolve_simulate(mut settings: Settings) -> Result<SimulateJob> {
    let seed_from_entropy = resolve_seed(&mut settings);
    let params = checked_params(settings.params(1000)?)?;
    let caps = settings
        .t_max
        .map_or_else(|| StopCaps::default_for(&params), StopCaps::until);
    let grid = RecordingSpec {
        max_points: settings.max_points.unwrap_or(RecordingSpec::default().max_points),
    };
    let out = settings.out.clone().unwrap_or_else(|| default_out("simulate"));
    let resolved = Settings {
        seed: settings.seed,
        t_max: Some(caps.t_max),
        max_points: Some(grid.max_points),
        out: Some(out.clone()),
        ..Settings::from_params(&params)
    };
    Ok(SimulateJob {
        params,
        seed: settings.seed.expect("seed resolved"),
        caps,
        grid,
        out,
        settings: resolved,
        seed_from_entropy,
    })
}

fn simulate(settings: Settings) -> Result<PathBuf> {
    let job = resolve_simulate(settings)?;
    let outcome = run_ssa(&job.params, job.seed, job.caps, job.grid)?;
    create_dir(&job.out)?;
    outcome.save(&job.out)?;
    Manifest {
        command: "simulate".into(),
        build_id: experiments::BUILD_ID.into(),
        seed_from_entropy: job.seed_from_entropy,
        config: job.settings,
        config_hash: None,
        outputs: digest_files(&job.out, &["outcome.json", "path.csv"])?,
    }
    .write(&job.out)?;
    let gamma = outcome.gamma_n.map_or_else(|| "none".to_string(), |g| g.to_string());
    say!(
        "termination {:?} gamma_n {gamma} events {} seed {}",
        outcome.termination,
        outcome.event_count,
        outcome.seed
    );
    if let Some(msg) = &outcome.diagnostic {
        eprintln!("note: {msg}");
    }
    Ok(job.out)
}

/// Resolved inputs of `ode`.
pub struct OdeJob {
    pub params: ModelParams,
    pub t_max: f64,
    pub options: OdeOptions,
    pub out: PathBuf,
    pub settings: Settings,
}

pub fn resolve_ode(settings: Settings) -> Result<OdeJob> {
    let params = checked_params(settings.params(1000)?)?;
    let t_max = settings.t_max.unwrap_or_else(|| StopCaps::default_for(&params).t_max);
    let stop = settings.stop_at_crossing.unwrap_or(false);
    let options = OdeOptions {
        stop_at_crossing: stop,
        ..OdeOptions::default()
    };
    let out = settings.out.clone().unwrap_or_else(|| default_out("ode"));
    let resolved = Settings {
        t_max: Some(t_max),
        stop_at_crossing: Some(stop),
        out: Some(out.clone()),
        ..Settings::from_params(&params)
    };
    Ok(OdeJob {
        params,
        t_max,
        options,
        out,
        settings: resolved,
    })
}

fn ode(settings: Settings) -> Result<PathBuf> {
    let job = resolve_ode(settings)?;
    let solution = solve_ode(&job.params, job.t_max, &job.options)?;
    create_dir(&job.out)?;
    solution.save(&job.out)?;
    Manifest {
        command: "ode".into(),
        build_id: experiments::BUILD_ID.into(),
        seed_from_entropy: false,
        config: job.settings,
        config_hash: None,
        outputs: digest_files(&job.out, &["ode.csv", "ode.json"])?,
    }
    .write(&job.out)?;
    match solution.zeta_n {
        Some(z) => say!("zeta_n {z}"),
        None => say!("zeta_n none"),
    }
    Ok(job.out)
}

fn estimate(settings: Settings) -> Result<PathBuf> {
    let input = settings
        .input
        .clone()
        .ok_or_else(|| Error::Config("estimate needs --input <outcome.json>".into()))?;
    let file = if input.is_dir() {
        input.join("outcome.json")
    } else {
        input.clone()
    };
    let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let outcome = SimOutcome::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", file.display())))?;
    let mode = settings.mode.unwrap_or_default();
    let est = estimate_all(&outcome, mode);

    let out = settings.out.clone().unwrap_or_else(|| default_out("estimate"));
    create_dir(&out)?;
    let path = out.join("estimates.json");
    std::fs::write(&path, serde_json::to_string_pretty(&est)? + "\n").map_err(|e| Error::io(&path, e))?;
    Manifest {
        command: "estimate".into(),
        build_id: experiments::BUILD_ID.into(),
        seed_from_entropy: false,
        config: Settings {
            input: Some(input),
            mode: Some(mode),
            out: Some(out.clone()),
            ..Settings::default()
        },
        config_hash: None,
        outputs: digest_files(&out, &["estimates.json"])?,
    }
    .write(&out)?;

    let show = |v: Option<f64>| v.map_or_else(|| "failed".to_string(), |v| v.to_string());
    say!(
        "alpha_hat {} beta_hat {} lambda0_hat {} lambda1_hat {}",
        show(est.alpha_hat),
        show(est.beta_hat),
        show(est.lambda0_hat),
        show(est.lambda1_hat)
    );
    if !est.failures.is_empty() {
        say!("failures {}", est.failures.describe());
    }
    Ok(out)
}

/// Experiment config for `kind` from layered settings, plus the settings
/// echo and whether the seed came from entropy.
pub fn resolve_study(kind: StudyKind, mut settings: Settings) -> Result<(ExperimentConfig, Settings, bool)> {
    let seed_from_entropy = resolve_seed(&mut settings);
    let seed = settings.seed.expect("seed resolved");
    let defaults = match kind {
        StudyKind::Convergence => ExperimentConfig::convergence(seed),
        StudyKind::Consistency => ExperimentConfig::consistency(seed),
        StudyKind::Robustness => ExperimentConfig::robustness(seed),
    };
    let n_list = match (&settings.n_list, settings.n) {
        (Some(list), _) => list.clone(),
        (None, Some(n)) => vec![n],
        (None, None) => defaults.n_list.clone(),
    };
    let params = settings.params(n_list[0])?;
    let default_ranges = ParamRanges::default();
    let cfg = ExperimentConfig {
        params,
        n_list,
        replicates: settings.replicates.unwrap_or(defaults.replicates),
        mode: settings.mode.unwrap_or_default(),
        workers: settings.workers.unwrap_or(defaults.workers),
        t_max: settings.t_max,
        max_points: settings.max_points.unwrap_or(defaults.max_points),
        bins: settings.bins.unwrap_or(defaults.bins),
        ranges: ParamRanges {
            lambda0: settings.lambda0_range.unwrap_or(default_ranges.lambda0),
            lambda1: settings.lambda1_range.unwrap_or(default_ranges.lambda1),
            alpha: settings.alpha_range.unwrap_or(default_ranges.alpha),
            beta: settings.beta_range.unwrap_or(default_ranges.beta),
            k: settings.k_range.unwrap_or(default_ranges.k),
        },
        out_dir: Some(settings.out.clone().unwrap_or_else(|| default_out(kind.name()))),
        ..defaults
    };
    cfg.validate()?;

    let echo = Settings {
        seed: Some(seed),
        t_max: cfg.t_max,
        out: cfg.out_dir.clone(),
        mode: Some(cfg.mode),
        max_points: Some(cfg.max_points),
        n_list: Some(cfg.n_list.clone()),
        replicates: Some(cfg.replicates),
        workers: Some(cfg.workers),
        bins: Some(cfg.bins),
        lambda0_range: Some(cfg.ranges.lambda0),
        lambda1_range: Some(cfg.ranges.lambda1),
        alpha_range: Some(cfg.ranges.alpha),
        beta_range: Some(cfg.ranges.beta),
        k_range: Some(cfg.ranges.k),
        ..Settings::from_params(&cfg.params)
    };
    Ok((cfg, echo, seed_from_entropy))
}

/// Writes a study's data files and manifest into `dir`.
pub fn save_study(result: &ExperimentResult, echo: Settings, seed_from_entropy: bool, dir: &Path) -> Result<()> {
    let outputs = result.save(dir)?.into_iter().collect();
    Manifest {
        command: result.config.kind.name().into(),
        build_id: result.provenance.build_id.clone(),
        seed_from_entropy,
        config: echo,
        config_hash: Some(result.provenance.config_hash.clone()),
        outputs,
    }
    .write(dir)
}

fn study(kind: StudyKind, settings: Settings, verbose: u8) -> Result<PathBuf> {
    let (cfg, echo, seed_from_entropy) = resolve_study(kind, settings)?;
    if verbose > 0 {
        eprintln!(
            "{kind}: n = {:?}, {} replicates, {} workers, seed {}",
            cfg.n_list, cfg.replicates, cfg.workers, cfg.master_seed
        );
    }
    let result = experiments::run_experiment(&cfg)?;
    let dir = cfg.out_dir.clone().expect("out dir resolved");
    save_study(&result, echo, seed_from_entropy, &dir)?;

    for row in &result.aggregates {
        let means: Vec<String> = (0..4)
            .map(|i| row.mean(i).map_or_else(|| "-".to_string(), |m| format!("{m:.4}")))
            .collect();
        let key = match (row.group.as_str(), row.lo) {
            ("n", Some(n)) => format!("n={n}"),
            ("global", _) => "global".to_string(),
            (g, _) => format!("{g}[{}]", row.bin),
        };
        say!("{key} runs {} mean_err {}", row.runs, means.join(" "));
    }
    if let Some(conv) = &result.convergence {
        for s in &conv.summary {
            let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            say!(
                "n={} defined {}/{} median D0 {} D1 {} Dbeta {}",
                s.n,
                s.defined,
                s.runs,
                fmt(s.median_d0),
                fmt(s.median_d1),
                fmt(s.median_d_beta)
            );
        }
    }
    Ok(dir)
}
