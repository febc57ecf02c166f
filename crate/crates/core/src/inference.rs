//! Estimators of `(alpha, beta, lambda0, lambda1)` from observables at the
//! recurrence time `gamma_n`:
//!
//! ```text
//! alpha_hat   = 1 - ln I_n / ln n
//! beta_hat    = 1 - alpha_hat - ln ln(n / Z_beta) / ln n
//! lambda0_hat = ln(Z0 / n) / gamma_n
//! lambda1_hat = (1 - beta_hat) ln n / gamma_n
//! ```
//!
//! Natural logarithms throughout. Failures are values, not panics, so that
//! batch studies can count them as censored observations.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::ModelParams;
use crate::ssa::{SimOutcome, Termination};

/// Reason an estimator could not be evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateFailure {
    NoRecurrence,
    NoSurvivingClones,
    PreExistingExtinct,
    DoubleLogUndefined,
    SensitiveExtinct,
    /// An upstream estimator in the chain failed.
    Upstream,
    BadInput,
}

impl fmt::Display for EstimateFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NoRecurrence => "no recurrence observed",
            Self::NoSurvivingClones => "no surviving clones",
            Self::PreExistingExtinct => "pre-existing clone extinct",
            Self::DoubleLogUndefined => "double log undefined (n/Z_beta <= 1)",
            Self::SensitiveExtinct => "sensitive extinct at recurrence",
            Self::Upstream => "upstream estimate failed",
            Self::BadInput => "invalid input (need n >= 3, gamma_n > 0)",
        })
    }
}

impl EstimateFailure {
    /// Short token used in CSV `failures` columns.
    pub fn token(&self) -> &'static str {
        match self {
            Self::NoRecurrence => "no_recurrence",
            Self::NoSurvivingClones => "no_surviving_clones",
            Self::PreExistingExtinct => "pre_existing_extinct",
            Self::DoubleLogUndefined => "double_log_undefined",
            Self::SensitiveExtinct => "sensitive_extinct",
            Self::Upstream => "upstream",
            Self::BadInput => "bad_input",
        }
    }
}

pub type Estimate = Result<f64, EstimateFailure>;

fn bad(x: f64) -> bool {
    !x.is_finite()
}

pub fn estimate_alpha(i_n: f64, n: f64) -> Estimate {
    if bad(n) || bad(i_n) || n < 2.0 {
        return Err(EstimateFailure::BadInput);
    }
    if i_n <= 0.0 {
        return Err(EstimateFailure::NoSurvivingClones);
    }
    Ok(1.0 - i_n.ln() / n.ln())
}

pub fn estimate_beta(alpha_hat: f64, z_beta: f64, n: f64) -> Estimate {
    if bad(n) || bad(z_beta) || bad(alpha_hat) || n < 3.0 {
        return Err(EstimateFailure::BadInput);
    }
    if z_beta <= 0.0 {
        return Err(EstimateFailure::PreExistingExtinct);
    }
    if z_beta >= n {
        return Err(EstimateFailure::DoubleLogUndefined);
    }
    Ok(1.0 - alpha_hat - (n / z_beta).ln().ln() / n.ln())
}

pub fn estimate_lambda0(z0: f64, gamma_n: f64, n: f64) -> Estimate {
    if bad(z0) || bad(n) || !(gamma_n > 0.0 && gamma_n.is_finite()) || n <= 0.0 {
        return Err(EstimateFailure::BadInput);
    }
    if z0 <= 0.0 {
        return Err(EstimateFailure::SensitiveExtinct);
    }
    Ok((z0 / n).ln() / gamma_n)
}

pub fn estimate_lambda1(beta_hat: f64, gamma_n: f64, n: f64) -> Estimate {
    if bad(beta_hat) || bad(n) || !(gamma_n > 0.0 && gamma_n.is_finite()) || n < 2.0 {
        return Err(EstimateFailure::BadInput);
    }
    Ok((1.0 - beta_hat) * n.ln() / gamma_n)
}

/// Which resistant-clone size feeds `beta_hat`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloneMode {
    /// The tracked pre-existing clone `Z_beta`.
    #[default]
    Tracked,
    /// The largest resistant clone, observable without lineage tracking.
    Largest,
}

impl std::str::FromStr for CloneMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tracked" => Ok(Self::Tracked),
            "largest" => Ok(Self::Largest),
            other => Err(format!("unknown mode `{other}` (expected tracked or largest)")),
        }
    }
}

/// Observables at recurrence consumed by the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
///
/// Counts are carried as reals so that exact synthetic values can be fed
/// through the same estimators.
pub struct RecurrenceObservables {
    pub n: f64,
    pub gamma_n: f64,
    pub i_n: f64,
    pub z0: f64,
    /// Clone size used for `beta_hat` (tracked or largest, per mode).
    pub z_beta: f64,
}

impl RecurrenceObservables {
    /// Observables the estimators invert exactly:
    /// `gamma = (1 - beta) ln n / lambda1`, `I = n^(1 - alpha)`,
    /// `Z_beta = n exp(-n^(1 - alpha - beta))`, `Z0 = n exp(lambda0 gamma)`.
    pub fn exact(p: &ModelParams) -> Self {
        let n = p.n_f64();
        let gamma_n = (1.0 - p.beta) * n.ln() / p.lambda1;
        Self {
            n,
            gamma_n,
            i_n: n.powf(1.0 - p.alpha),
            z0: n * (p.lambda0() * gamma_n).exp(),
            z_beta: n * (-n.powf(1.0 - p.alpha - p.beta)).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSet {
    pub alpha_hat: Option<f64>,
    pub beta_hat: Option<f64>,
    pub lambda0_hat: Option<f64>,
    pub lambda1_hat: Option<f64>,
    pub failures: Failures,
    pub mode: CloneMode,
    pub inputs: Option<RecurrenceObservables>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failures {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<EstimateFailure>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<EstimateFailure>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<EstimateFailure>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<EstimateFailure>,
}

impl Failures {
    pub fn is_empty(&self) -> bool {
        self.alpha.is_none() && self.beta.is_none() && self.lambda0.is_none() && self.lambda1.is_none()
    }

    /// `name:reason` pairs joined by `;`, empty when nothing failed.
    pub fn describe(&self) -> String {
        [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda0", self.lambda0),
            ("lambda1", self.lambda1),
        ]
        .into_iter()
        .filter_map(|(name, f)| f.map(|f| format!("{name}:{}", f.token())))
        .collect::<Vec<_>>()
        .join(";")
    }
}

fn split(est: Estimate) -> (Option<f64>, Option<EstimateFailure>) {
    match est {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e)),
    }
}

impl EstimateSet {
    /// All four estimators failed for the same reason.
    pub fn failed(reason: EstimateFailure, mode: CloneMode) -> Self {
        Self {
            alpha_hat: None,
            beta_hat: None,
            lambda0_hat: None,
            lambda1_hat: None,
            failures: Failures {
                alpha: Some(reason),
                beta: Some(reason),
                lambda0: Some(reason),
                lambda1: Some(reason),
            },
            mode,
            inputs: None,
        }
    }

    /// Chains the four estimators. `beta_hat` needs `alpha_hat`, and
    /// `lambda1_hat` needs `beta_hat`.
    pub fn from_observables(obs: RecurrenceObservables, mode: CloneMode) -> Self {
        let alpha = estimate_alpha(obs.i_n, obs.n);
        let beta = match alpha {
            Ok(a) => estimate_beta(a, obs.z_beta, obs.n),
            Err(_) => Err(EstimateFailure::Upstream),
        };
        let lambda1 = match beta {
            Ok(b) => estimate_lambda1(b, obs.gamma_n, obs.n),
            Err(_) => Err(EstimateFailure::Upstream),
        };
        let lambda0 = estimate_lambda0(obs.z0, obs.gamma_n, obs.n);

        let (alpha_hat, fa) = split(alpha);
        let (beta_hat, fb) = split(beta);
        let (lambda0_hat, f0) = split(lambda0);
        let (lambda1_hat, f1) = split(lambda1);
        Self {
            alpha_hat,
            beta_hat,
            lambda0_hat,
            lambda1_hat,
            failures: Failures {
                alpha: fa,
                beta: fb,
                lambda0: f0,
                lambda1: f1,
            },
            mode,
            inputs: Some(obs),
        }
    }

    pub fn values(&self) -> [Option<f64>; 4] {
        [self.alpha_hat, self.beta_hat, self.lambda0_hat, self.lambda1_hat]
    }
}

/// Observables of a finished run under `mode`, if it reached recurrence.
pub fn observables_from(outcome: &SimOutcome, mode: CloneMode) -> Option<RecurrenceObservables> {
    if outcome.termination != Termination::Recurrence {
        return None;
    }
    let obs = &outcome.observables;
    let z_beta = match mode {
        CloneMode::Tracked => obs.z_beta,
        CloneMode::Largest => obs.largest_clone,
    };
    Some(RecurrenceObservables {
        n: outcome.n as f64,
        gamma_n: outcome.gamma_n?,
        i_n: obs.i_n as f64,
        z0: obs.z0 as f64,
        z_beta: z_beta as f64,
    })
}

pub fn estimate_all(outcome: &SimOutcome, mode: CloneMode) -> EstimateSet {
    match observables_from(outcome, mode) {
        Some(obs) => EstimateSet::from_observables(obs, mode),
        None => EstimateSet::failed(EstimateFailure::NoRecurrence, mode),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssa::{Observables, SimOutcome};

    fn outcome(termination: Termination, gamma: Option<f64>, obs: Observables, n: u64) -> SimOutcome {
        SimOutcome {
            termination,
            gamma_n: gamma,
            observables: obs,
            path: Vec::new(),
            seed: 0,
            event_count: 0,
            n,
            t_end: gamma.unwrap_or(1.0),
            founded_clones: obs.i_n,
            diagnostic: None,
        }
    }

    #[test]
    fn alpha_cases() {
        assert_eq!(estimate_alpha(1.0, 1000.0).unwrap(), 1.0);
        let a = estimate_alpha(16.0, 1e6).unwrap();
        assert!((a - 0.7993).abs() < 1e-4, "{a}");
        assert_eq!(estimate_alpha(0.0, 1000.0), Err(EstimateFailure::NoSurvivingClones));
    }

    #[test]
    fn beta_cases() {
        let n: f64 = 1e6;
        // n / Z_beta = e makes the double log vanish
        let b = estimate_beta(0.8, n / std::f64::consts::E, n).unwrap();
        assert!((b - 0.2).abs() < 1e-12, "{b}");
        assert_eq!(estimate_beta(0.8, 0.0, n), Err(EstimateFailure::PreExistingExtinct));
        assert_eq!(estimate_beta(0.8, n, n), Err(EstimateFailure::DoubleLogUndefined));
        assert_eq!(estimate_beta(0.8, 2.0 * n, n), Err(EstimateFailure::DoubleLogUndefined));
    }

    #[test]
    fn lambda0_cases() {
        assert_eq!(estimate_lambda0(1000.0, 3.0, 1000.0).unwrap(), 0.0);
        let z0 = (1000.0 * (-0.5f64 * 2.0).exp()).round();
        let l = estimate_lambda0(z0, 2.0, 1000.0).unwrap();
        assert!((l + 0.5).abs() < 1e-3, "{l}");
        assert_eq!(
            estimate_lambda0(0.0, 2.0, 1000.0),
            Err(EstimateFailure::SensitiveExtinct)
        );
        assert_eq!(estimate_lambda0(10.0, 0.0, 1000.0), Err(EstimateFailure::BadInput));
    }

    #[test]
    fn lambda1_cases() {
        let n: f64 = 1e6;
        let gamma = 0.5 * n.ln() / 0.5;
        assert!((estimate_lambda1(0.5, gamma, n).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(estimate_lambda1(1.0, gamma, n).unwrap(), 0.0);
    }

    #[test]
    fn composite_trivial_case() {
        let n: f64 = 1e6;
        let obs = RecurrenceObservables {
            n,
            gamma_n: 1.0,
            i_n: 1.0,
            z0: n,
            z_beta: n / std::f64::consts::E,
        };
        let est = EstimateSet::from_observables(obs, CloneMode::Tracked);
        assert_eq!(est.alpha_hat, Some(1.0));
        assert!(est.beta_hat.unwrap().abs() < 1e-12);
        assert_eq!(est.lambda0_hat, Some(0.0));
        assert!((est.lambda1_hat.unwrap() - n.ln()).abs() < 1e-10);
        assert!(est.failures.is_empty());
        assert_eq!(est.failures.describe(), "");
    }

    #[test]
    fn exact_observables_round_trip() {
        let p = ModelParams::reference(1_000_000);
        let est = EstimateSet::from_observables(RecurrenceObservables::exact(&p), CloneMode::Tracked);
        let truth = [p.alpha, p.beta, p.lambda0(), p.lambda1];
        for (got, want) in est.values().into_iter().zip(truth) {
            assert!((got.unwrap() - want).abs() < 1e-12, "{got:?} vs {want}");
        }
    }

    #[test]
    fn extinction_fails_everything() {
        let obs = Observables {
            z0: 0,
            z1: 0,
            z_beta: 0,
            largest_clone: 0,
            i_n: 0,
        };
        let est = estimate_all(&outcome(Termination::Extinction, None, obs, 1000), CloneMode::Tracked);
        assert_eq!(est.values(), [None; 4]);
        assert_eq!(est.failures.alpha, Some(EstimateFailure::NoRecurrence));
        assert_eq!(est.failures.lambda1, Some(EstimateFailure::NoRecurrence));
        assert_eq!(EstimateFailure::NoRecurrence.to_string(), "no recurrence observed");
    }

    #[test]
    fn chain_propagates_failures() {
        let obs = RecurrenceObservables {
            n: 1000.0,
            gamma_n: 5.0,
            i_n: 0.0,
            z0: 10.0,
            z_beta: 100.0,
        };
        let est = EstimateSet::from_observables(obs, CloneMode::Tracked);
        assert_eq!(est.alpha_hat, None);
        assert_eq!(est.beta_hat, None);
        assert_eq!(est.lambda1_hat, None);
        assert!(est.lambda0_hat.is_some());
        assert_eq!(est.failures.beta, Some(EstimateFailure::Upstream));
        assert_eq!(
            est.failures.describe(),
            "alpha:no_surviving_clones;beta:upstream;lambda1:upstream"
        );
    }

    #[test]
    fn largest_mode_reads_largest_clone() {
        let obs = Observables {
            z0: 20,
            z1: 1000,
            z_beta: 600,
            largest_clone: 700,
            i_n: 3,
        };
        let out = outcome(Termination::Recurrence, Some(7.0), obs, 1000);
        let tracked = observables_from(&out, CloneMode::Tracked).unwrap();
        let largest = observables_from(&out, CloneMode::Largest).unwrap();
        assert_eq!(tracked.z_beta, 600.0);
        assert_eq!(largest.z_beta, 700.0);
        assert_eq!("largest".parse::<CloneMode>().unwrap(), CloneMode::Largest);
        assert!("biggest".parse::<CloneMode>().is_err());
    }
}
