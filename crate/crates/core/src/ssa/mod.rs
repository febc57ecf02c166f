//! Exact event-driven simulation of the sensitive/resistant process.
//!
//! Each step draws an exponential waiting time from the total event rate and
//! then one event with probability proportional to its rate:
//!
//! | event              | rate                    | effect                       |
//! |--------------------|-------------------------|------------------------------|
//! | sensitive birth    | `Z0 * r0`               | `Z0 += 1`                    |
//! | sensitive death    | `Z0 * d0`               | `Z0 -= 1`                    |
//! | mutation           | `Z0 * n^-alpha`         | new resistant clone of one   |
//! | resistant birth    | `Z1 * f(Z0/K, Z1/K)`    | `+1` in a size-weighted clone |
//! | resistant death    | `Z1 * d1`               | `-1` in a size-weighted clone |
//!
//! The pre-existing resistant lineage `Z_beta` is kept apart from the
//! mutation-derived clones in the [`CloneLedger`]; `Z1 = Z_beta + ledger`.
//! The birth rate is re-evaluated after every event.

mod ledger;

pub use ledger::{CloneId, CloneLedger};

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelParams, RateFunction};
use crate::seeds::{rng_from_seed, SimRng};

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// Resistant population reached `n`.
    Recurrence,
    /// No cells left.
    Extinction,
    /// Time or event budget exhausted.
    TimeCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopCaps {
    pub t_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_events: Option<u64>,
}

impl StopCaps {
    /// `(20 / lambda1) * ln n`, far beyond the recurrence time scale.
    pub fn default_for(p: &ModelParams) -> Self {
        Self {
            t_max: 20.0 / p.lambda1 * p.n_f64().ln(),
            max_events: None,
        }
    }

    pub fn until(t_max: f64) -> Self {
        Self {
            t_max,
            max_events: None,
        }
    }
}

/// Path recording budget. Samples are taken every `stride` events, with the
/// stride doubling whenever the buffer would exceed `max_points`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordingSpec {
    pub max_points: usize,
}

impl Default for RecordingSpec {
    fn default() -> Self {
        Self { max_points: 1000 }
    }
}

impl RecordingSpec {
    pub fn none() -> Self {
        Self { max_points: 0 }
    }
}

/// One recorded point `(t, Z0, Z1, Z_beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint(pub f64, pub u64, pub u64, pub u64);

impl PathPoint {
    pub fn t(&self) -> f64 {
        self.0
    }
    pub fn z0(&self) -> u64 {
        self.1
    }
    pub fn z1(&self) -> u64 {
        self.2
    }
    pub fn z_beta(&self) -> u64 {
        self.3
    }
}

/// Observables at the stopping time (the recurrence time when
/// `termination == Recurrence`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observables {
    #[serde(rename = "Z0")]
    pub z0: u64,
    #[serde(rename = "Z1")]
    pub z1: u64,
    #[serde(rename = "Z_beta")]
    pub z_beta: u64,
    /// Largest resistant clone, the pre-existing lineage included.
    pub largest_clone: u64,
    /// Surviving mutation-derived clones.
    #[serde(rename = "I_n")]
    pub i_n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub termination: Termination,
    pub gamma_n: Option<f64>,
    pub observables: Observables,
    pub path: Vec<PathPoint>,
    pub seed: u64,
    pub event_count: u64,
    pub n: u64,
    /// Time at which the run stopped (`t_max` for a time cap).
    pub t_end: f64,
    pub founded_clones: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl SimOutcome {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// SHA-256 of the JSON encoding.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("outcome serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn write_path_csv(&self, out: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["t", "Z0", "Z1", "Zbeta"])?;
        for p in &self.path {
            wtr.write_record([
                p.t().to_string(),
                p.z0().to_string(),
                p.z1().to_string(),
                p.z_beta().to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("path.csv", e))?;
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let json_path = dir.join("outcome.json");
        std::fs::write(&json_path, self.to_json()? + "\n").map_err(|e| Error::io(&json_path, e))?;
        let csv_path = dir.join("path.csv");
        let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        self.write_path_csv(std::io::BufWriter::new(file))
    }
}

/// A single sampled event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    SensBirth,
    SensDeath,
    Mutation,
    ResBirthPre,
    ResBirthClone(CloneId),
    ResDeathPre,
    ResDeathClone(CloneId),
}

/// Per-category rates in the current state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRates {
    pub sens_birth: f64,
    pub sens_death: f64,
    pub mutation: f64,
    pub res_birth: f64,
    pub res_death: f64,
}

impl EventRates {
    pub fn total(&self) -> f64 {
        self.sens_birth + self.sens_death + self.mutation + self.res_birth + self.res_death
    }
}

/// Mutable state of one run. Confined to a single thread.
#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub z0: u64,
    pub z_beta: u64,
    pub ledger: CloneLedger,
    pub event_count: u64,
    z1: u64,
    rng: SimRng,
}

impl SimState {
    pub fn initial(p: &ModelParams, seed: u64) -> Self {
        let z_beta = p.initial_resistant();
        Self {
            t: 0.0,
            z0: p.n,
            z_beta,
            ledger: CloneLedger::new(),
            event_count: 0,
            z1: z_beta,
            rng: rng_from_seed(seed),
        }
    }

    /// Builds a state from explicit counts, for tests and exploration.
    pub fn from_counts(z0: u64, z_beta: u64, clone_sizes: &[u64], seed: u64) -> Self {
        let mut ledger = CloneLedger::new();
        for &size in clone_sizes {
            let id = ledger.add_clone();
            ledger.update(id, size as i64 - 1);
        }
        let z1 = z_beta + ledger.total_cells();
        Self {
            t: 0.0,
            z0,
            z_beta,
            ledger,
            event_count: 0,
            z1,
            rng: rng_from_seed(seed),
        }
    }

    pub fn z1(&self) -> u64 {
        self.z1
    }

    pub fn rng(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    pub fn rates(&self, p: &ModelParams, f: &RateFunction, mu: f64, capacity: f64) -> EventRates {
        let z0 = self.z0 as f64;
        let z1 = self.z1 as f64;
        let birth = f.at_occupancy((z0 + z1) / capacity);
        EventRates {
            sens_birth: z0 * p.r0,
            sens_death: z0 * p.d0,
            mutation: z0 * mu,
            res_birth: z1 * birth,
            res_death: z1 * p.d1,
        }
    }

    fn point(&self) -> PathPoint {
        PathPoint(self.t, self.z0, self.z1, self.z_beta)
    }

    fn apply(&mut self, event: EventKind) {
        match event {
            EventKind::SensBirth => self.z0 += 1,
            EventKind::SensDeath => self.z0 -= 1,
            EventKind::Mutation => {
                self.ledger.add_clone();
                self.z1 += 1;
            }
            EventKind::ResBirthPre => {
                self.z_beta += 1;
                self.z1 += 1;
            }
            EventKind::ResBirthClone(id) => {
                self.ledger.update(id, 1);
                self.z1 += 1;
            }
            EventKind::ResDeathPre => {
                self.z_beta -= 1;
                self.z1 -= 1;
            }
            EventKind::ResDeathClone(id) => {
                self.ledger.update(id, -1);
                self.z1 -= 1;
            }
        }
    }

    fn conserved(&self) -> bool {
        self.z1 == self.z_beta + self.ledger.total_cells()
    }
}

/// Picks the resistant cell an event acts on: the pre-existing lineage with
/// probability `Z_beta / Z1`, otherwise a ledger clone weighted by size.
fn pick_resistant(state: &mut SimState) -> Option<CloneId> {
    let cell = state.rng.random_range(0..state.z1);
    if cell < state.z_beta {
        None
    } else {
        Some(state.ledger.locate(cell - state.z_beta))
    }
}

/// Draws the next event given category rates. Requires `rates.total() > 0`.
pub fn sample_event(state: &mut SimState, rates: &EventRates) -> EventKind {
    let total = rates.total();
    debug_assert!(total > 0.0);
    let mut u = state.rng.random::<f64>() * total;
    let categories = [
        rates.sens_birth,
        rates.sens_death,
        rates.mutation,
        rates.res_birth,
        rates.res_death,
    ];
    // last category with positive rate absorbs rounding at the top end
    let mut chosen = categories.iter().rposition(|&r| r > 0.0).unwrap_or(4);
    for (idx, &rate) in categories.iter().enumerate() {
        if u < rate {
            chosen = idx;
            break;
        }
        u -= rate;
    }
    match chosen {
        0 => EventKind::SensBirth,
        1 => EventKind::SensDeath,
        2 => EventKind::Mutation,
        3 => match pick_resistant(state) {
            None => EventKind::ResBirthPre,
            Some(id) => EventKind::ResBirthClone(id),
        },
        _ => match pick_resistant(state) {
            None => EventKind::ResDeathPre,
            Some(id) => EventKind::ResDeathClone(id),
        },
    }
}

struct PathRecorder {
    max_points: usize,
    stride: u64,
    points: Vec<PathPoint>,
    last_event: u64,
}

impl PathRecorder {
    fn new(spec: RecordingSpec) -> Self {
        Self {
            max_points: spec.max_points,
            stride: 1,
            points: Vec::with_capacity(spec.max_points.min(1 << 16) + 1),
            last_event: 0,
        }
    }

    #[inline]
    fn observe(&mut self, event_count: u64, point: impl FnOnce() -> PathPoint) {
        if self.max_points == 0 || event_count % self.stride != 0 {
            return;
        }
        self.points.push(point());
        self.last_event = event_count;
        if self.points.len() > self.max_points {
            let mut keep = 0;
            for i in (0..self.points.len()).step_by(2) {
                self.points[keep] = self.points[i];
                keep += 1;
            }
            self.points.truncate(keep);
            self.stride *= 2;
        }
    }

    fn finish(mut self, event_count: u64, last: PathPoint) -> Vec<PathPoint> {
        if self.max_points == 0 {
            return Vec::new();
        }
        if self.points.is_empty() || self.last_event != event_count || last != *self.points.last().unwrap() {
            if self.points.len() >= self.max_points {
                self.points.pop();
            }
            self.points.push(last);
        }
        self.points
    }
}

/// Simulates one realization until recurrence, extinction or a cap.
///
/// The parameters are not re-validated here; callers that accept user input
/// should run [`ModelParams::validate`] first. Structurally broken input
/// (negative rates, non-positive `t_max`) is still rejected.
pub fn run_ssa(p: &ModelParams, seed: u64, caps: StopCaps, grid: RecordingSpec) -> Result<SimOutcome> {
    if !(caps.t_max > 0.0) {
        return Err(Error::Config(format!("t_max must be positive (got {})", caps.t_max)));
    }
    for (name, rate) in [
        ("r0", p.r0),
        ("d0", p.d0),
        ("d1", p.d1),
        ("mutation", p.mutation_rate()),
    ] {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::Config(format!("{name} must be finite and nonnegative")));
        }
    }
    if p.n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }

    let f = p.rate_function();
    let mu = p.mutation_rate();
    let capacity = p.carrying_capacity();
    let target = p.n;
    let max_events = caps.max_events.unwrap_or(u64::MAX);

    let mut state = SimState::initial(p, seed);
    let mut recorder = PathRecorder::new(grid);
    recorder.observe(0, || state.point());

    let mut diagnostic = None;
    let termination = loop {
        if state.z1 >= target {
            break Termination::Recurrence;
        }
        if state.z0 == 0 && state.z1 == 0 {
            break Termination::Extinction;
        }
        if state.event_count >= max_events {
            diagnostic = Some(format!("event cap of {max_events} reached"));
            break Termination::TimeCap;
        }
        let rates = state.rates(p, &f, mu, capacity);
        let total = rates.total();
        if !(total > 0.0) {
            // frozen state: nothing can happen before the cap
            state.t = caps.t_max;
            break Termination::TimeCap;
        }
        let wait: f64 = state.rng.sample::<f64, _>(Exp1) / total;
        let t_next = state.t + wait;
        if t_next >= caps.t_max {
            state.t = caps.t_max;
            break Termination::TimeCap;
        }
        state.t = t_next;
        let event = sample_event(&mut state, &rates);
        state.apply(event);
        state.event_count += 1;

        debug_assert!(
            state.conserved(),
            "Z1 != Z_beta + ledger at event {}",
            state.event_count
        );
        if state.event_count & 0xFFFF == 0 {
            assert!(
                state.conserved(),
                "Z1 != Z_beta + ledger at event {}",
                state.event_count
            );
        }
        recorder.observe(state.event_count, || state.point());
    };

    if termination == Termination::Recurrence {
        assert_eq!(state.z1, target, "recurrence must be hit exactly by a unit jump");
    }

    let observables = Observables {
        z0: state.z0,
        z1: state.z1,
        z_beta: state.z_beta,
        largest_clone: state.z_beta.max(state.ledger.largest_clone()),
        i_n: state.ledger.surviving_clones() as u64,
    };
    let last = state.point();
    Ok(SimOutcome {
        termination,
        gamma_n: (termination == Termination::Recurrence).then_some(state.t),
        observables,
        path: recorder.finish(state.event_count, last),
        seed,
        event_count: state.event_count,
        n: p.n,
        t_end: state.t,
        founded_clones: state.ledger.founded_clones() as u64,
        diagnostic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RateFamily;

    fn frozen_params() -> ModelParams {
        ModelParams {
            r0: 0.0,
            d0: 0.0,
            d1: 0.0,
            mutation_override: Some(0.0),
            rate_family: RateFamily::Tabulated {
                knots: vec![(0.0, 0.0)],
            },
            ..ModelParams::reference(1000)
        }
    }

    #[test]
    fn all_rates_zero_hits_time_cap_unchanged() {
        let p = frozen_params();
        let out = run_ssa(&p, 1, StopCaps::until(5.0), RecordingSpec::default()).unwrap();
        assert_eq!(out.termination, Termination::TimeCap);
        assert_eq!(out.t_end, 5.0);
        assert_eq!(out.event_count, 0);
        assert_eq!(out.observables.z0, 1000);
        assert_eq!(out.observables.z1, 32);
        assert_eq!(out.gamma_n, None);
    }

    #[test]
    fn only_pre_existing_events_without_sensitive_or_clones() {
        let p = ModelParams::reference(1000);
        let f = p.rate_function();
        let mut state = SimState::from_counts(0, 5, &[], 3);
        let rates = state.rates(&p, &f, p.mutation_rate(), p.carrying_capacity());
        assert_eq!(rates.sens_birth + rates.sens_death + rates.mutation, 0.0);
        for _ in 0..1000 {
            let ev = sample_event(&mut state, &rates);
            assert!(matches!(ev, EventKind::ResBirthPre | EventKind::ResDeathPre), "{ev:?}");
        }
    }

    #[test]
    fn weighted_clone_choice_three_to_one() {
        let p = ModelParams::reference(1000);
        let f = p.rate_function();
        let mut state = SimState::from_counts(0, 0, &[3, 1], 11);
        let rates = state.rates(&p, &f, p.mutation_rate(), p.carrying_capacity());
        let draws = 40_000;
        let mut first = 0;
        for _ in 0..draws {
            match sample_event(&mut state, &rates) {
                EventKind::ResBirthClone(0) | EventKind::ResDeathClone(0) => first += 1,
                EventKind::ResBirthClone(1) | EventKind::ResDeathClone(1) => {}
                other => panic!("unexpected {other:?}"),
            }
        }
        let frac = first as f64 / draws as f64;
        // binomial sd is about 0.0022
        assert!((frac - 0.75).abs() < 0.01, "{frac}");
    }

    #[test]
    fn counters_and_conservation_hold() {
        let p = ModelParams::reference(1000);
        let out = run_ssa(&p, 9, StopCaps::default_for(&p), RecordingSpec::default()).unwrap();
        assert_eq!(out.termination, Termination::Recurrence);
        assert_eq!(out.observables.z1, 1000);
        assert!(out.path.len() <= 1000);
        for w in out.path.windows(2) {
            assert!(w[1].t() > w[0].t());
        }
        assert!(out.observables.i_n <= out.founded_clones);
        assert_eq!(out.path.last().unwrap().z1(), 1000);
        assert_eq!(out.path[0], PathPoint(0.0, 1000, 32, 32));
    }

    #[test]
    fn same_seed_same_outcome() {
        let p = ModelParams::reference(2000);
        let caps = StopCaps::default_for(&p);
        let a = run_ssa(&p, 77, caps, RecordingSpec::default()).unwrap();
        let b = run_ssa(&p, 77, caps, RecordingSpec::default()).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        let c = run_ssa(&p, 78, caps, RecordingSpec::default()).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn event_cap_reports_diagnostic() {
        let p = ModelParams::reference(1000);
        let caps = StopCaps {
            t_max: 100.0,
            max_events: Some(50),
        };
        let out = run_ssa(&p, 1, caps, RecordingSpec::none()).unwrap();
        assert_eq!(out.termination, Termination::TimeCap);
        assert_eq!(out.event_count, 50);
        assert!(out.diagnostic.unwrap().contains("event cap"));
        assert!(out.path.is_empty());
    }

    #[test]
    fn rejects_nonpositive_horizon() {
        let p = ModelParams::reference(1000);
        assert!(run_ssa(&p, 1, StopCaps::until(0.0), RecordingSpec::none()).is_err());
    }

    #[test]
    fn path_recording_respects_budget() {
        let p = ModelParams::reference(5000);
        for max_points in [2, 7, 64] {
            let out = run_ssa(&p, 4, StopCaps::default_for(&p), RecordingSpec { max_points }).unwrap();
            assert!(out.path.len() <= max_points, "{} > {max_points}", out.path.len());
            assert_eq!(out.path.last().unwrap().t(), out.t_end);
        }
    }

    #[test]
    fn outcome_json_roundtrip() {
        let p = ModelParams::reference(1000);
        let out = run_ssa(&p, 2, StopCaps::default_for(&p), RecordingSpec { max_points: 20 }).unwrap();
        let back = SimOutcome::from_json(&out.to_json().unwrap()).unwrap();
        assert_eq!(out, back);
        let v: serde_json::Value = serde_json::from_str(&out.to_json().unwrap()).unwrap();
        for key in ["termination", "gamma_n", "observables", "path", "seed", "event_count"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        for key in ["Z0", "Z_beta", "largest_clone", "I_n"] {
            assert!(v["observables"].get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["path"][0].as_array().unwrap().len(), 4);
    }
}
