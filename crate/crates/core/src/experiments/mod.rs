//! Seeded Monte Carlo studies: trajectory convergence against the
//! deterministic limit, estimator consistency over a list of system sizes,
//! and robustness over randomly sampled admissible parameters.
//!
//! Every replicate gets its own seed derived from the master seed and its
//! `(n, replicate)` or tuple index, so results do not depend on the worker
//! count. Replicates run on a bounded rayon pool and are merged in index
//! order; aggregation is single-threaded.

pub mod output;
mod sampling;
pub mod stats;

pub use output::RUNS_HEADER;
pub use sampling::{
    acceptance_rate, draw, is_admissible, sample_admissible, swept_value, ParamRanges, DRAW_CAP, SWEPT,
};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::inference::{estimate_all, CloneMode, EstimateSet};
use crate::model::ModelParams;
use crate::ode::{solve_ode, OdeOptions, OdeSample};
use crate::seeds::{replicate_seed, rng_from_seed};
use crate::ssa::{run_ssa, PathPoint, RecordingSpec, SimOutcome, StopCaps, Termination};
use stats::{median, summarize, Summary};

/// Identifies the build that produced a result.
pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION"));

/// Pilot draws used to estimate the robustness acceptance rate.
pub const PILOT_DRAWS: usize = 10_000;
/// Robustness aborts below this acceptance rate.
pub const MIN_ACCEPTANCE: f64 = 0.01;

const SAMPLER_STREAM: u64 = u64::MAX;
const PILOT_STREAM: u64 = u64::MAX - 1;
const REPLICATE_BITS: u32 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Convergence,
    Consistency,
    Robustness,
}

impl StudyKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Convergence => "convergence",
            Self::Consistency => "consistency",
            Self::Robustness => "robustness",
        }
    }
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StudyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "convergence" => Ok(Self::Convergence),
            "consistency" => Ok(Self::Consistency),
            "robustness" => Ok(Self::Robustness),
            other => Err(format!("unknown study `{other}`")),
        }
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn default_max_points() -> usize {
    RecordingSpec::default().max_points
}

fn default_bins() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: StudyKind,
    /// Base parameters. `n` is replaced by each entry of `n_list`; for
    /// robustness the swept coordinates are replaced by sampled values.
    pub params: ModelParams,
    /// System sizes. Robustness uses exactly one.
    pub n_list: Vec<u64>,
    /// Replicates per `n`, or sampled tuples for robustness.
    pub replicates: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub mode: CloneMode,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Per-run time cap; defaults to `(20 / lambda1) ln n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    /// Path points kept per convergence replicate.
    #[serde(default = "default_max_points")]
    pub max_points: usize,
    #[serde(default)]
    pub ranges: ParamRanges,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    fn base(kind: StudyKind, params: ModelParams, n_list: Vec<u64>, replicates: usize, master_seed: u64) -> Self {
        Self {
            kind,
            params,
            n_list,
            replicates,
            master_seed,
            mode: CloneMode::default(),
            workers: default_workers(),
            t_max: None,
            max_points: default_max_points(),
            ranges: ParamRanges::default(),
            bins: default_bins(),
            out_dir: None,
        }
    }

    /// Reference parameters, `n` in `{10^3, 10^4, 10^5}`, 10 replicates.
    pub fn convergence(master_seed: u64) -> Self {
        Self::base(
            StudyKind::Convergence,
            ModelParams::reference(1000),
            vec![1_000, 10_000, 100_000],
            10,
            master_seed,
        )
    }

    /// Reference parameters, `n` in `{10^3, ..., 10^6}`, 10 replicates.
    pub fn consistency(master_seed: u64) -> Self {
        Self::base(
            StudyKind::Consistency,
            ModelParams::reference(1000),
            vec![1_000, 10_000, 100_000, 1_000_000],
            10,
            master_seed,
        )
    }

    /// Default sampling ranges at `n = 5 * 10^6`, 200 tuples.
    pub fn robustness(master_seed: u64) -> Self {
        Self::base(
            StudyKind::Robustness,
            ModelParams::reference(5_000_000),
            vec![5_000_000],
            200,
            master_seed,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.replicates >= 1 << REPLICATE_BITS {
            return Err(Error::Config(format!(
                "replicates must be below {}",
                1u64 << REPLICATE_BITS
            )));
        }
        if self.n_list.is_empty() {
            return Err(Error::Config("n list must not be empty".into()));
        }
        if let Some(&n) = self.n_list.iter().find(|&&n| n < 2 || n >= 1 << (64 - REPLICATE_BITS)) {
            return Err(Error::Config(format!("n = {n} is out of range")));
        }
        if let Some(t) = self.t_max {
            if !(t > 0.0) {
                return Err(Error::Config(format!("t_max must be positive (got {t})")));
            }
        }
        if self.bins == 0 {
            return Err(Error::Config("bins must be at least 1".into()));
        }
        match self.kind {
            StudyKind::Robustness => {
                if self.n_list.len() != 1 {
                    return Err(Error::Config("robustness takes a single n".into()));
                }
                self.ranges.validate()?;
            }
            _ => {
                let mut p = self.params.clone();
                for &n in &self.n_list {
                    p.n = n;
                    p.clone().validated()?;
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the JSON echo, ignoring the worker count and output
    /// directory, which do not affect results.
    pub fn hash(&self) -> String {
        let canonical = Self {
            workers: 0,
            out_dir: None,
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    fn caps(&self, p: &ModelParams) -> StopCaps {
        self.t_max.map_or_else(|| StopCaps::default_for(p), StopCaps::until)
    }
}

/// Stream index of replicate `r` at system size `n`. The same `(n, r)` gets
/// the same seed in every study.
fn stream_index(n: u64, replicate: usize) -> u64 {
    (n << REPLICATE_BITS) | replicate as u64
}

/// One replicate, its inputs and what the estimators made of it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub study: StudyKind,
    /// Replicate index within `n`, or tuple index for robustness.
    pub replicate: usize,
    pub seed: u64,
    pub params: ModelParams,
    pub termination: Termination,
    pub gamma_n: Option<f64>,
    pub t_end: f64,
    pub i_n: u64,
    pub z0: u64,
    pub z_beta: u64,
    pub largest: u64,
    pub event_count: u64,
    pub estimates: EstimateSet,
    pub errors: [Option<f64>; 4],
    /// Rejection draws spent on this tuple (robustness only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
}

impl RunRecord {
    fn new(
        study: StudyKind,
        replicate: usize,
        params: ModelParams,
        outcome: &SimOutcome,
        mode: CloneMode,
        draws: Option<usize>,
    ) -> Self {
        let estimates = estimate_all(outcome, mode);
        let errors = relative_errors(&estimates, &params);
        let obs = &outcome.observables;
        Self {
            study,
            replicate,
            seed: outcome.seed,
            params,
            termination: outcome.termination,
            gamma_n: outcome.gamma_n,
            t_end: outcome.t_end,
            i_n: obs.i_n,
            z0: obs.z0,
            z_beta: obs.z_beta,
            largest: obs.largest_clone,
            event_count: outcome.event_count,
            estimates,
            errors,
            draws,
        }
    }

    /// Mean of the four relative errors, when all are present.
    pub fn mean_error(&self) -> Option<f64> {
        let mut sum = 0.0;
        for e in self.errors {
            sum += e?;
        }
        Some(sum / 4.0)
    }
}

/// `|a^ - a|/a`, `|b^ - b|/b`, `|l0^ - l0|/|l0|`, `|l1^ - l1|/l1`; a failed
/// estimate gives `None`.
pub fn relative_errors(est: &EstimateSet, truth: &ModelParams) -> [Option<f64>; 4] {
    let truth = [truth.alpha, truth.beta, truth.lambda0(), truth.lambda1];
    let values = est.values();
    std::array::from_fn(|i| values[i].map(|v| (v - truth[i]).abs() / truth[i].abs()))
}

/// Mean and spread of each relative error over one group of runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    /// `n`, `global`, or the swept parameter the bins refer to.
    pub group: String,
    pub bin: usize,
    /// Bin edges; for `n` rows both equal `n`.
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub runs: usize,
    pub errors: [Option<Summary>; 4],
    /// Runs whose estimate failed, per estimator.
    pub failed: [usize; 4],
    /// Mean over runs of the average of the four errors.
    pub mean_avg: Option<f64>,
}

impl AggregateRow {
    fn from_runs(group: &str, bin: usize, lo: Option<f64>, hi: Option<f64>, runs: &[&RunRecord]) -> Self {
        let errors = std::array::from_fn(|i| {
            let values: Vec<f64> = runs.iter().filter_map(|r| r.errors[i]).collect();
            summarize(&values)
        });
        let failed = std::array::from_fn(|i| runs.iter().filter(|r| r.errors[i].is_none()).count());
        let avgs: Vec<f64> = runs.iter().filter_map(|r| r.mean_error()).collect();
        Self {
            group: group.to_string(),
            bin,
            lo,
            hi,
            runs: runs.len(),
            errors,
            failed,
            mean_avg: stats::mean(&avgs),
        }
    }

    pub fn mean(&self, estimator: usize) -> Option<f64> {
        self.errors[estimator].map(|s| s.mean)
    }
}

/// Equal-width bin of `v` in `[lo, hi]`; values on the upper edge land in
/// the last bin.
pub fn bin_index(v: f64, [lo, hi]: [f64; 2], bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let raw = ((v - lo) / (hi - lo) * bins as f64).floor();
    (raw.max(0.0) as usize).min(bins - 1)
}

/// Aggregate rows of `records` under `cfg`. Pure function of its inputs, so
/// stored aggregates can be recomputed from the per-run records.
pub fn aggregate(cfg: &ExperimentConfig, records: &[RunRecord]) -> Vec<AggregateRow> {
    match cfg.kind {
        StudyKind::Convergence | StudyKind::Consistency => cfg
            .n_list
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let runs: Vec<&RunRecord> = records.iter().filter(|r| r.params.n == n).collect();
                AggregateRow::from_runs("n", i, Some(n as f64), Some(n as f64), &runs)
            })
            .collect(),
        StudyKind::Robustness => {
            let all: Vec<&RunRecord> = records.iter().collect();
            let mut rows = vec![AggregateRow::from_runs("global", 0, None, None, &all)];
            for name in SWEPT {
                let range = cfg.ranges.get(name).expect("swept name");
                let width = (range[1] - range[0]) / cfg.bins as f64;
                for bin in 0..cfg.bins {
                    let runs: Vec<&RunRecord> = records
                        .iter()
                        .filter(|r| {
                            let v = swept_value(&r.params, name).expect("swept name");
                            bin_index(v, range, cfg.bins) == bin
                        })
                        .collect();
                    let lo = range[0] + width * bin as f64;
                    let hi = if bin + 1 == cfg.bins { range[1] } else { lo + width };
                    rows.push(AggregateRow::from_runs(name, bin, Some(lo), Some(hi), &runs));
                }
            }
            rows
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationStatus {
    Defined,
    /// The replicate did not reach recurrence.
    NoRecurrence,
    /// The deterministic solution never reached `n`.
    NoCrossing,
    /// The ODE solve failed at this `n`.
    OdeFailed,
}

impl DeviationStatus {
    pub fn token(&self) -> &'static str {
        match self {
            Self::Defined => "defined",
            Self::NoRecurrence => "no_recurrence",
            Self::NoCrossing => "no_crossing",
            Self::OdeFailed => "ode_failed",
        }
    }
}

/// `D = max |X / y - 1|` over the recorded path up to `gamma_n`, for
/// `X0`, `X1` and `X_beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Deviation {
    pub n: u64,
    pub replicate: usize,
    pub seed: u64,
    pub d0: Option<f64>,
    pub d1: Option<f64>,
    pub d_beta: Option<f64>,
    pub status: DeviationStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviationSummary {
    pub n: u64,
    pub runs: usize,
    pub defined: usize,
    pub median_d0: Option<f64>,
    pub median_d1: Option<f64>,
    pub median_d_beta: Option<f64>,
}

impl DeviationSummary {
    fn from_rows(n: u64, rows: &[&Deviation]) -> Self {
        let pick = |f: fn(&Deviation) -> Option<f64>| median(&rows.iter().filter_map(|d| f(d)).collect::<Vec<_>>());
        Self {
            n,
            runs: rows.len(),
            defined: rows.iter().filter(|d| d.status == DeviationStatus::Defined).count(),
            median_d0: pick(|d| d.d0),
            median_d1: pick(|d| d.d1),
            median_d_beta: pick(|d| d.d_beta),
        }
    }
}

/// Recorded stochastic path of one convergence replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub n: u64,
    pub replicate: usize,
    pub seed: u64,
    pub path: Vec<PathPoint>,
}

/// Deterministic solution at one `n`, in units of `K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdeTrack {
    pub n: u64,
    pub capacity: f64,
    pub zeta_n: Option<f64>,
    pub grid: Vec<OdeSample>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConvergenceData {
    pub deviations: Vec<Deviation>,
    pub summary: Vec<DeviationSummary>,
    pub trajectories: Vec<Trajectory>,
    pub odes: Vec<OdeTrack>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SamplingReport {
    pub pilot_draws: usize,
    pub pilot_rate: f64,
    pub total_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub build_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<AggregateRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceData>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingReport>,
    pub provenance: Provenance,
}

impl ExperimentResult {
    fn new(
        config: ExperimentConfig,
        records: Vec<RunRecord>,
        convergence: Option<ConvergenceData>,
        sampling: Option<SamplingReport>,
    ) -> Self {
        let aggregates = aggregate(&config, &records);
        let provenance = Provenance {
            config_hash: config.hash(),
            build_id: BUILD_ID.to_string(),
        };
        Self {
            config,
            records,
            aggregates,
            convergence,
            sampling,
            provenance,
        }
    }

    /// SHA-256 over every data file the result renders to.
    pub fn content_hash(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for (name, bytes) in self.render()? {
            hasher.update(name.as_bytes());
            hasher.update(&bytes);
        }
        Ok(hex::encode(hasher.finalize()))
    }
}

/// Dispatches on `cfg.kind`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    match cfg.kind {
        StudyKind::Convergence => run_convergence(cfg),
        StudyKind::Consistency => run_consistency(cfg),
        StudyKind::Robustness => run_robustness(cfg),
    }
}

fn expect_kind(cfg: &ExperimentConfig, kind: StudyKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(Error::Config(format!("expected a {kind} config, got {}", cfg.kind)));
    }
    cfg.validate()
}

/// Runs `f` over `items` on a pool of `workers` threads (0 means one per
/// core), keeping input order.
pub fn run_parallel<T, R, F>(workers: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

struct Job {
    replicate: usize,
    params: ModelParams,
    seed: u64,
    draws: Option<usize>,
}

fn size_jobs(cfg: &ExperimentConfig) -> Vec<Job> {
    let mut jobs = Vec::with_capacity(cfg.n_list.len() * cfg.replicates);
    for &n in &cfg.n_list {
        let params = ModelParams {
            n,
            ..cfg.params.clone()
        };
        for replicate in 0..cfg.replicates {
            jobs.push(Job {
                replicate,
                params: params.clone(),
                seed: replicate_seed(cfg.master_seed, stream_index(n, replicate)),
                draws: None,
            });
        }
    }
    jobs
}

fn simulate_jobs(cfg: &ExperimentConfig, jobs: &[Job], grid: RecordingSpec) -> Result<Vec<(RunRecord, SimOutcome)>> {
    run_parallel(cfg.workers, jobs, |job| {
        let outcome = run_ssa(&job.params, job.seed, cfg.caps(&job.params), grid)?;
        let record = RunRecord::new(
            cfg.kind,
            job.replicate,
            job.params.clone(),
            &outcome,
            cfg.mode,
            job.draws,
        );
        Ok((record, outcome))
    })
}

fn max_deviation(
    path: &[PathPoint],
    ode: &crate::ode::OdeSolution,
    capacity: f64,
    select: fn(&PathPoint, &[f64; 3]) -> (u64, f64),
) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for point in path {
        let y = ode.eval(point.t())?;
        let (z, y) = select(point, &y);
        let d = (z as f64 / capacity / y - 1.0).abs();
        worst = Some(worst.map_or(d, |w: f64| w.max(d)));
    }
    worst
}

fn deviation(n: u64, outcome: &SimOutcome, replicate: usize, ode: Result<&crate::ode::OdeSolution, ()>) -> Deviation {
    let mut dev = Deviation {
        n,
        replicate,
        seed: outcome.seed,
        d0: None,
        d1: None,
        d_beta: None,
        status: DeviationStatus::Defined,
    };
    let ode = match ode {
        Ok(ode) => ode,
        Err(()) => {
            dev.status = DeviationStatus::OdeFailed;
            return dev;
        }
    };
    if outcome.termination != Termination::Recurrence {
        dev.status = DeviationStatus::NoRecurrence;
        return dev;
    }
    if ode.zeta_n.is_none() {
        dev.status = DeviationStatus::NoCrossing;
        return dev;
    }
    let capacity = ode.capacity;
    dev.d0 = max_deviation(&outcome.path, ode, capacity, |p, y| (p.z0(), y[0]));
    dev.d1 = max_deviation(&outcome.path, ode, capacity, |p, y| (p.z1(), y[1]));
    dev.d_beta = max_deviation(&outcome.path, ode, capacity, |p, y| (p.z_beta(), y[2]));
    dev
}

/// Replicates of the stochastic model plus one deterministic solution per
/// `n`, with sup-ratio deviations along each recorded path.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    expect_kind(cfg, StudyKind::Convergence)?;
    let jobs = size_jobs(cfg);
    let grid = RecordingSpec {
        max_points: cfg.max_points,
    };
    let results = simulate_jobs(cfg, &jobs, grid)?;

    let mut data = ConvergenceData::default();
    for &n in &cfg.n_list {
        let p = ModelParams {
            n,
            ..cfg.params.clone()
        };
        let horizon = cfg.caps(&p).t_max;
        let runs: Vec<&(RunRecord, SimOutcome)> = results.iter().filter(|(r, _)| r.params.n == n).collect();
        let t_ode = runs.iter().map(|(_, o)| o.t_end).fold(horizon, f64::max);
        let solved = solve_ode(&p, t_ode, &OdeOptions::default());

        let rows: Vec<Deviation> = runs
            .iter()
            .map(|(record, outcome)| deviation(n, outcome, record.replicate, solved.as_ref().map_err(|_| ())))
            .collect();
        data.summary
            .push(DeviationSummary::from_rows(n, &rows.iter().collect::<Vec<_>>()));
        data.deviations.extend(rows);
        data.trajectories
            .extend(runs.iter().map(|(record, outcome)| Trajectory {
                n,
                replicate: record.replicate,
                seed: outcome.seed,
                path: outcome.path.clone(),
            }));
        data.odes.push(match solved {
            Ok(sol) => OdeTrack {
                n,
                capacity: sol.capacity,
                zeta_n: sol.zeta_n,
                grid: sol.grid,
                error: None,
            },
            Err(e) => OdeTrack {
                n,
                capacity: p.carrying_capacity(),
                zeta_n: None,
                grid: Vec::new(),
                error: Some(e.to_string()),
            },
        });
    }

    let records = results.into_iter().map(|(r, _)| r).collect();
    Ok(ExperimentResult::new(cfg.clone(), records, Some(data), None))
}

/// Estimator relative errors per `n`.
pub fn run_consistency(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    expect_kind(cfg, StudyKind::Consistency)?;
    let jobs = size_jobs(cfg);
    let records = simulate_jobs(cfg, &jobs, RecordingSpec::none())?
        .into_iter()
        .map(|(r, _)| r)
        .collect();
    Ok(ExperimentResult::new(cfg.clone(), records, None, None))
}

/// One replicate per sampled admissible tuple, binned by each swept
/// parameter.
pub fn run_robustness(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    expect_kind(cfg, StudyKind::Robustness)?;
    let base = ModelParams {
        n: cfg.n_list[0],
        ..cfg.params.clone()
    };

    let mut pilot = rng_from_seed(replicate_seed(cfg.master_seed, PILOT_STREAM));
    let pilot_rate = acceptance_rate(&mut pilot, &cfg.ranges, &base, PILOT_DRAWS);
    if pilot_rate < MIN_ACCEPTANCE {
        return Err(Error::AcceptanceRate {
            rate: pilot_rate,
            min: MIN_ACCEPTANCE,
        });
    }

    let mut sampler = rng_from_seed(replicate_seed(cfg.master_seed, SAMPLER_STREAM));
    let mut jobs = Vec::with_capacity(cfg.replicates);
    let mut total_draws = 0;
    for replicate in 0..cfg.replicates {
        let (params, draws) = sample_admissible(&mut sampler, &cfg.ranges, &base)?;
        total_draws += draws;
        jobs.push(Job {
            replicate,
            params,
            seed: replicate_seed(cfg.master_seed, replicate as u64),
            draws: Some(draws),
        });
    }

    let records = simulate_jobs(cfg, &jobs, RecordingSpec::none())?
        .into_iter()
        .map(|(r, _)| r)
        .collect();
    let sampling = SamplingReport {
        pilot_draws: PILOT_DRAWS,
        pilot_rate,
        total_draws,
    };
    Ok(ExperimentResult::new(cfg.clone(), records, None, Some(sampling)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::RecurrenceObservables;
    use crate::model::RateFamily;

    #[test]
    fn relative_error_arithmetic() {
        let truth = ModelParams::reference(1000);
        let mut est = EstimateSet::from_observables(RecurrenceObservables::exact(&truth), CloneMode::Tracked);
        for e in relative_errors(&est, &truth) {
            assert!(e.unwrap() < 1e-12);
        }
        est.alpha_hat = Some(0.9);
        est.lambda0_hat = Some(-0.45);
        est.beta_hat = None;
        let errs = relative_errors(&est, &truth);
        assert!((errs[0].unwrap() - 0.125).abs() < 1e-12);
        assert_eq!(errs[1], None);
        assert!((errs[2].unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn bins_cover_the_range() {
        assert_eq!(bin_index(1.5, [1.5, 6.5], 8), 0);
        assert_eq!(bin_index(6.5, [1.5, 6.5], 8), 7);
        assert_eq!(bin_index(4.0, [1.5, 6.5], 8), 4);
        assert_eq!(bin_index(3.0, [3.0, 3.0], 8), 0);
    }

    #[test]
    fn consistency_rows_and_idempotent_aggregation() {
        let cfg = ExperimentConfig {
            n_list: vec![500, 1000],
            replicates: 3,
            workers: 2,
            ..ExperimentConfig::consistency(11)
        };
        let res = run_consistency(&cfg).unwrap();
        assert_eq!(res.records.len(), 6);
        assert_eq!(res.aggregates.len(), 2);
        assert_eq!(res.aggregates[1].lo, Some(1000.0));
        assert_eq!(aggregate(&res.config, &res.records), res.aggregates);
        let again = run_consistency(&cfg).unwrap();
        assert_eq!(res.content_hash().unwrap(), again.content_hash().unwrap());
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let one = ExperimentConfig {
            n_list: vec![300],
            replicates: 4,
            workers: 1,
            ..ExperimentConfig::consistency(3)
        };
        let four = ExperimentConfig {
            workers: 4,
            ..one.clone()
        };
        let a = run_consistency(&one).unwrap();
        let b = run_consistency(&four).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.content_hash().unwrap(), b.content_hash().unwrap());
        assert_eq!(a.provenance.config_hash, b.provenance.config_hash);
    }

    #[test]
    fn degenerate_convergence_flags_deviation() {
        let params = ModelParams {
            r0: 0.0,
            d0: 0.0,
            d1: 0.0,
            mutation_override: Some(0.0),
            rate_family: RateFamily::Tabulated {
                knots: vec![(0.0, 0.0)],
            },
            ..ModelParams::reference(1000)
        };
        let cfg = ExperimentConfig {
            params,
            n_list: vec![1000],
            replicates: 1,
            workers: 1,
            t_max: Some(5.0),
            ..ExperimentConfig::convergence(1)
        };
        // bypasses validate(), which rejects lambda0 = 0
        let jobs = size_jobs(&cfg);
        let results = simulate_jobs(&cfg, &jobs, RecordingSpec::default()).unwrap();
        let (_, outcome) = &results[0];
        assert_eq!(outcome.termination, Termination::TimeCap);
        let p = ModelParams {
            n: 1000,
            ..cfg.params.clone()
        };
        let sol = solve_ode(&p, 5.0, &OdeOptions::default()).unwrap();
        let dev = deviation(1000, outcome, 0, Ok(&sol));
        assert_eq!(dev.status, DeviationStatus::NoRecurrence);
        assert_eq!(dev.d1, None);
    }

    #[test]
    fn robustness_aborts_on_empty_admissible_set() {
        let cfg = ExperimentConfig {
            n_list: vec![1000],
            replicates: 2,
            ranges: ParamRanges {
                lambda0: [-0.5, -0.5],
                lambda1: [0.1, 0.1],
                beta: [0.1, 0.2],
                ..ParamRanges::default()
            },
            ..ExperimentConfig::robustness(4)
        };
        match run_robustness(&cfg) {
            Err(Error::AcceptanceRate { rate, .. }) => assert_eq!(rate, 0.0),
            other => panic!("expected acceptance-rate abort, got {other:?}"),
        }
    }

    #[test]
    fn robustness_bins_every_run_once() {
        let cfg = ExperimentConfig {
            n_list: vec![2000],
            replicates: 6,
            workers: 2,
            ..ExperimentConfig::robustness(8)
        };
        let res = run_robustness(&cfg).unwrap();
        assert_eq!(res.aggregates.len(), 1 + SWEPT.len() * cfg.bins);
        assert_eq!(res.aggregates[0].runs, 6);
        for name in SWEPT {
            let total: usize = res.aggregates.iter().filter(|r| r.group == name).map(|r| r.runs).sum();
            assert_eq!(total, 6, "{name}");
        }
        assert!(res.records.iter().all(|r| is_admissible(&r.params)));
        assert_eq!(aggregate(&res.config, &res.records), res.aggregates);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let cfg = ExperimentConfig::consistency(1);
        assert!(matches!(run_robustness(&cfg), Err(Error::Config(_))));
        let bad = ExperimentConfig { replicates: 0, ..cfg };
        assert!(bad.validate().is_err());
    }
}
