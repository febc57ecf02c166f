//! Model parameters, the density-dependent resistant birth rate, and
//! structural validation.
//!
//! All rates are per cell per unit time. Population sizes are normalized by
//! the carrying capacity `K = k * n` wherever the birth rate is evaluated.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::DomainError;

/// Shape of the resistant birth rate as a function of total occupancy
/// `s = x0 + x1` (cells divided by `K`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RateFamily {
    /// `max(0, lambda1 * (1 - s^nu) + d1)`.
    #[default]
    GeneralizedLogistic,
    /// Piecewise-linear table of `(s, f)` knots, constant beyond both ends.
    Tabulated { knots: Vec<(f64, f64)> },
}

/// Resistant birth rate `f(x0, x1)`, depending on its arguments only through
/// their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFunction {
    family: RateFamily,
    lambda1: f64,
    d1: f64,
    nu: f64,
}

impl RateFunction {
    pub fn generalized_logistic(lambda1: f64, d1: f64, nu: f64) -> Self {
        Self {
            family: RateFamily::GeneralizedLogistic,
            lambda1,
            d1,
            nu,
        }
    }

    /// Builds a tabulated rate. Knots must be sorted by strictly increasing
    /// occupancy, start at `s = 0`, and carry finite, nonnegative,
    /// non-increasing rates.
    pub fn tabulated(knots: Vec<(f64, f64)>, d1: f64) -> Result<Self, DomainError> {
        check_knots(&knots)?;
        let lambda1 = knots[0].1 - d1;
        Ok(Self {
            family: RateFamily::Tabulated { knots },
            lambda1,
            d1,
            nu: 1.0,
        })
    }

    pub fn family(&self) -> &RateFamily {
        &self.family
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn d1(&self) -> f64 {
        self.d1
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Birth rate at normalized populations `(x0, x1)`.
    pub fn eval(&self, x0: f64, x1: f64) -> Result<f64, DomainError> {
        check_occupancy(x0, x1)?;
        Ok(self.at_occupancy(x0 + x1))
    }

    /// Net resistant growth rate `f(x0, x1) - d1`.
    pub fn net_growth(&self, x0: f64, x1: f64) -> Result<f64, DomainError> {
        check_occupancy(x0, x1)?;
        Ok(self.net_at_occupancy(x0 + x1))
    }

    /// Net growth at total occupancy. For the logistic family this returns
    /// the unclamped excess `lambda1 * (1 - s^nu)` (or `-d1` once the birth
    /// rate clamps), so `net + d1` reproduces the birth rate bit for bit.
    #[inline]
    pub fn net_at_occupancy(&self, s: f64) -> f64 {
        match &self.family {
            RateFamily::GeneralizedLogistic => {
                let excess = self.lambda1 * (1.0 - self.crowding(s));
                if excess + self.d1 < 0.0 {
                    -self.d1
                } else {
                    excess
                }
            }
            RateFamily::Tabulated { knots } => interpolate(knots, s) - self.d1,
        }
    }

    #[inline]
    fn crowding(&self, s: f64) -> f64 {
        if self.nu == 1.0 {
            s
        } else {
            s.powf(self.nu)
        }
    }

    /// Birth rate at total occupancy `s >= 0`. Unchecked hot-path variant of
    /// [`RateFunction::eval`].
    #[inline]
    pub fn at_occupancy(&self, s: f64) -> f64 {
        match &self.family {
            RateFamily::GeneralizedLogistic => (self.lambda1 * (1.0 - self.crowding(s)) + self.d1).max(0.0),
            RateFamily::Tabulated { knots } => interpolate(knots, s),
        }
    }
}

fn check_occupancy(x0: f64, x1: f64) -> Result<(), DomainError> {
    if !(x0 >= 0.0 && x1 >= 0.0) || !x0.is_finite() || !x1.is_finite() {
        return Err(DomainError::NegativeOccupancy { x0, x1 });
    }
    Ok(())
}

fn check_knots(knots: &[(f64, f64)]) -> Result<(), DomainError> {
    let first = knots.first().ok_or(DomainError::EmptyTable)?;
    if first.0 != 0.0 {
        return Err(DomainError::BadTable("first knot must sit at s = 0".into()));
    }
    for &(s, f) in knots {
        if !s.is_finite() || !f.is_finite() || f < 0.0 {
            return Err(DomainError::BadTable(format!(
                "knot ({s}, {f}) must be finite with nonnegative rate"
            )));
        }
    }
    for pair in knots.windows(2) {
        let ((s0, f0), (s1, f1)) = (pair[0], pair[1]);
        if s1 <= s0 {
            return Err(DomainError::BadTable("knots must increase in s".into()));
        }
        if f1 > f0 {
            return Err(DomainError::BadTable("rate must be non-increasing in occupancy".into()));
        }
    }
    Ok(())
}

fn interpolate(knots: &[(f64, f64)], s: f64) -> f64 {
    let idx = knots.partition_point(|&(ks, _)| ks <= s);
    if idx == 0 {
        return knots[0].1;
    }
    if idx == knots.len() {
        return knots[idx - 1].1;
    }
    let (s0, f0) = knots[idx - 1];
    let (s1, f1) = knots[idx];
    f0 + (f1 - f0) * (s - s0) / (s1 - s0)
}

/// Full parameter set of the two-type model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Initial sensitive population.
    pub n: u64,
    /// Initial resistant count is `n^beta`.
    pub beta: f64,
    /// Per-cell mutation rate is `n^-alpha`.
    pub alpha: f64,
    pub r0: f64,
    pub d0: f64,
    pub d1: f64,
    /// Intrinsic resistant net growth rate; `r1 = lambda1 + d1`.
    pub lambda1: f64,
    /// Carrying capacity multiplier, `K = k * n`.
    pub k: f64,
    pub nu: f64,
    #[serde(default, skip_serializing_if = "is_default_family")]
    pub rate_family: RateFamily,
    /// Replaces `n^-alpha` when set. Used for degenerate and closed-form checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation_override: Option<f64>,
}

fn is_default_family(family: &RateFamily) -> bool {
    *family == RateFamily::GeneralizedLogistic
}

impl ModelParams {
    pub const DEFAULT_R0: f64 = 0.5;
    pub const DEFAULT_D0: f64 = 1.0;
    pub const DEFAULT_D1: f64 = 0.5;

    /// Reference parameter point: alpha 0.8, beta 0.5, lambda0 -0.5,
    /// lambda1 0.5, k 3, plain logistic.
    pub fn reference(n: u64) -> Self {
        Self {
            n,
            beta: 0.5,
            alpha: 0.8,
            r0: Self::DEFAULT_R0,
            d0: Self::DEFAULT_D0,
            d1: Self::DEFAULT_D1,
            lambda1: 0.5,
            k: 3.0,
            nu: 1.0,
            rate_family: RateFamily::GeneralizedLogistic,
            mutation_override: None,
        }
    }

    /// Sets `r0` so that `r0 - d0 = lambda0`, keeping `d0`.
    pub fn with_lambda0(mut self, lambda0: f64) -> Self {
        self.r0 = self.d0 + lambda0;
        self
    }

    pub fn lambda0(&self) -> f64 {
        self.r0 - self.d0
    }

    pub fn r1(&self) -> f64 {
        self.lambda1 + self.d1
    }

    pub fn n_f64(&self) -> f64 {
        self.n as f64
    }

    pub fn carrying_capacity(&self) -> f64 {
        self.k * self.n_f64()
    }

    /// Per sensitive cell mutation rate.
    pub fn mutation_rate(&self) -> f64 {
        self.mutation_override.unwrap_or_else(|| self.n_f64().powf(-self.alpha))
    }

    /// Real-valued initial resistant size `n^beta`, as used by the ODE.
    pub fn initial_resistant_real(&self) -> f64 {
        self.n_f64().powf(self.beta)
    }

    /// Integer initial resistant count for the stochastic model: `n^beta`
    /// rounded, at least one cell.
    pub fn initial_resistant(&self) -> u64 {
        (self.initial_resistant_real().round() as u64).max(1)
    }

    pub fn rate_function(&self) -> RateFunction {
        match &self.rate_family {
            RateFamily::GeneralizedLogistic => RateFunction::generalized_logistic(self.lambda1, self.d1, self.nu),
            RateFamily::Tabulated { knots } => RateFunction {
                family: RateFamily::Tabulated { knots: knots.clone() },
                lambda1: self.lambda1,
                d1: self.d1,
                nu: self.nu,
            },
        }
    }

    /// `beta > 1 + lambda1 / lambda0`: sensitive cells persist at recurrence.
    pub fn cond_persistence(&self) -> bool {
        self.beta > 1.0 + self.lambda1 / self.lambda0()
    }

    /// `alpha + beta > 1`: mutation-driven fluctuations stay below the
    /// pre-existing clone's scale.
    pub fn cond_stability(&self) -> bool {
        self.alpha + self.beta > 1.0
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let lambda0 = self.lambda0();

        let rates = [
            ("r0", self.r0),
            ("d0", self.d0),
            ("d1", self.d1),
            ("lambda1", self.lambda1),
            ("k", self.k),
            ("nu", self.nu),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ];
        for (name, value) in rates {
            if !value.is_finite() {
                violations.push(Violation::NotFinite(name));
            }
        }
        for (name, value) in [("r0", self.r0), ("d0", self.d0), ("d1", self.d1)] {
            if value < 0.0 {
                violations.push(Violation::NegativeRate(name, value));
            }
        }
        if self.n < 2 {
            violations.push(Violation::PopulationTooSmall(self.n));
        }
        if lambda0.is_nan() || lambda0 >= 0.0 {
            violations.push(Violation::NonNegativeLambda0(lambda0));
        }
        if self.lambda1.is_nan() || self.lambda1 <= 0.0 {
            violations.push(Violation::NonPositiveLambda1(self.lambda1));
        }
        if self.k.is_nan() || self.k <= 1.0 {
            violations.push(Violation::CapacityTooSmall(self.k));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            violations.push(Violation::AlphaOutOfRange(self.alpha));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            violations.push(Violation::BetaOutOfRange(self.beta));
        }
        if self.nu.is_nan() || self.nu < 1.0 {
            violations.push(Violation::NuTooSmall(self.nu));
        }
        if let Some(mu) = self.mutation_override {
            if !(mu >= 0.0 && mu.is_finite()) {
                violations.push(Violation::NegativeRate("mutation_override", mu));
            }
        }
        if let RateFamily::Tabulated { knots } = &self.rate_family {
            if let Err(err) = check_knots(knots) {
                violations.push(Violation::BadRateTable(err.to_string()));
            }
        }

        let cond_persistence = self.cond_persistence();
        let cond_stability = self.cond_stability();
        let mut warnings = Vec::new();
        if !cond_persistence {
            warnings.push(Warning::PersistenceConditionFails {
                beta: self.beta,
                bound: 1.0 + self.lambda1 / lambda0,
            });
        }
        if !cond_stability {
            warnings.push(Warning::StabilityConditionFails {
                sum: self.alpha + self.beta,
            });
        }

        ValidationReport {
            violations,
            warnings,
            cond_persistence,
            cond_stability,
        }
    }

    /// Returns the parameters unchanged if no hard rule is violated.
    pub fn validated(self) -> Result<Self, crate::Error> {
        let report = self.validate();
        if report.is_valid() {
            Ok(self)
        } else {
            Err(crate::Error::InvalidParams(report.violations))
        }
    }
}

/// Hard rule broken by a parameter set. Simulation is refused.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonNegativeLambda0(f64),
    NonPositiveLambda1(f64),
    CapacityTooSmall(f64),
    AlphaOutOfRange(f64),
    BetaOutOfRange(f64),
    NuTooSmall(f64),
    NegativeRate(&'static str, f64),
    NotFinite(&'static str),
    PopulationTooSmall(u64),
    BadRateTable(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonNegativeLambda0(v) => {
                write!(f, "lambda0 must be negative (r0 - d0 = {v})")
            }
            Self::NonPositiveLambda1(v) => write!(f, "lambda1 must be positive (got {v})"),
            Self::CapacityTooSmall(v) => write!(f, "k must exceed 1 (got {v})"),
            Self::AlphaOutOfRange(v) => write!(f, "alpha must lie in (0, 1) (got {v})"),
            Self::BetaOutOfRange(v) => write!(f, "beta must lie in (0, 1) (got {v})"),
            Self::NuTooSmall(v) => write!(f, "nu must be at least 1 (got {v})"),
            Self::NegativeRate(name, v) => write!(f, "{name} must be nonnegative (got {v})"),
            Self::NotFinite(name) => write!(f, "{name} must be finite"),
            Self::PopulationTooSmall(n) => write!(f, "n must be at least 2 (got {n})"),
            Self::BadRateTable(msg) => write!(f, "invalid rate table: {msg}"),
        }
    }
}

/// Theorem hypothesis that does not hold. Simulation is still permitted.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    PersistenceConditionFails { beta: f64, bound: f64 },
    StabilityConditionFails { sum: f64 },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PersistenceConditionFails { beta, bound } => write!(
                f,
                "beta = {beta} does not exceed 1 + lambda1/lambda0 = {bound}; \
                 sensitive cells may be extinct at recurrence"
            ),
            Self::StabilityConditionFails { sum } => write!(
                f,
                "alpha + beta = {sum} does not exceed 1; convergence guarantees do not apply"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Warning>,
    pub cond_persistence: bool,
    pub cond_stability: bool,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logistic() -> RateFunction {
        RateFunction::generalized_logistic(0.5, 0.5, 1.0)
    }

    #[test]
    fn reference_point_is_valid_with_both_conditions() {
        let p = ModelParams::reference(1000);
        assert_eq!(p.lambda0(), -0.5);
        let report = p.validate();
        assert!(report.is_valid(), "{:?}", report.violations);
        assert!(report.cond_persistence);
        assert!(report.cond_stability);
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn positive_lambda0_is_rejected() {
        let mut p = ModelParams::reference(1000);
        p.r0 = 1.0;
        p.d0 = 0.5;
        let report = p.validate();
        assert_eq!(report.violations, vec![Violation::NonNegativeLambda0(0.5)]);
        assert!(report.violations[0].to_string().contains("lambda0 must be negative"));
        assert!(p.validated().is_err());
    }

    #[test]
    fn weak_mutation_exponent_only_warns() {
        let mut p = ModelParams::reference(1000);
        p.alpha = 0.3;
        let report = p.validate();
        assert!(report.is_valid());
        assert!(!report.cond_stability);
        assert!(report.cond_persistence);
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn each_hard_rule_names_itself() {
        let base = ModelParams::reference(1000);
        let cases: Vec<(ModelParams, &str)> = vec![
            (ModelParams { k: 1.0, ..base.clone() }, "k must exceed 1"),
            (
                ModelParams {
                    alpha: 1.0,
                    ..base.clone()
                },
                "alpha",
            ),
            (
                ModelParams {
                    beta: 0.0,
                    ..base.clone()
                },
                "beta",
            ),
            (
                ModelParams {
                    nu: 0.5,
                    ..base.clone()
                },
                "nu",
            ),
            (
                ModelParams {
                    lambda1: 0.0,
                    ..base.clone()
                },
                "lambda1",
            ),
            (ModelParams { n: 1, ..base.clone() }, "n must be"),
        ];
        for (p, needle) in cases {
            let report = p.validate();
            assert_eq!(report.violations.len(), 1, "{needle}: {:?}", report.violations);
            assert!(report.violations[0].to_string().contains(needle));
        }
    }

    #[test]
    fn rate_boundary_values() {
        let f = logistic();
        assert_eq!(f.eval(0.0, 0.0).unwrap(), 1.0);
        assert_eq!(f.eval(0.5, 0.5).unwrap(), 0.5);
        // raw value 0.5 * (1 - 3) + 0.5 = -0.5 is clamped
        assert_eq!(f.eval(2.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn net_growth_values() {
        let f = logistic();
        assert_eq!(f.net_growth(0.0, 0.0).unwrap(), 0.5);
        assert_eq!(f.net_growth(0.5, 0.5).unwrap(), 0.0);
        assert_eq!(f.net_growth(2.0, 1.0).unwrap(), -0.5);
    }

    #[test]
    fn negative_occupancy_is_a_domain_error() {
        let f = logistic();
        assert!(matches!(f.eval(-0.1, 0.0), Err(DomainError::NegativeOccupancy { .. })));
        assert!(f.net_growth(0.0, f64::NAN).is_err());
    }

    #[test]
    fn tabulated_rates_interpolate_and_clamp() {
        let f = RateFunction::tabulated(vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.0)], 0.5).unwrap();
        assert_eq!(f.eval(0.0, 0.0).unwrap(), 1.0);
        assert_eq!(f.eval(0.25, 0.25).unwrap(), 0.75);
        assert_eq!(f.eval(1.5, 0.0).unwrap(), 0.25);
        assert_eq!(f.eval(5.0, 5.0).unwrap(), 0.0);
        assert_eq!(f.lambda1(), 0.5);
    }

    #[test]
    fn tabulated_rejects_increasing_rates() {
        assert!(RateFunction::tabulated(vec![(0.0, 0.5), (1.0, 0.6)], 0.5).is_err());
        assert!(RateFunction::tabulated(vec![], 0.5).is_err());
        assert!(RateFunction::tabulated(vec![(0.1, 0.5)], 0.5).is_err());
    }

    #[test]
    fn initial_resistant_rounds_with_floor_of_one() {
        assert_eq!(ModelParams::reference(1000).initial_resistant(), 32);
        assert_eq!(ModelParams::reference(1_000_000).initial_resistant(), 1000);
        let p = ModelParams {
            beta: 0.01,
            ..ModelParams::reference(2)
        };
        assert_eq!(p.initial_resistant(), 1);
    }
}
