//! Rejection sampling of admissible parameter tuples for the robustness study.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Draws per tuple before giving up.
pub const DRAW_CAP: usize = 10_000;

/// Closed intervals `[lo, hi]` for the swept coordinates. A collapsed
/// interval pins the coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub lambda0: [f64; 2],
    pub lambda1: [f64; 2],
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub k: [f64; 2],
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            lambda0: [-0.9, -0.1],
            lambda1: [0.1, 0.9],
            alpha: [0.5, 0.9],
            beta: [0.1, 0.9],
            k: [1.5, 6.5],
        }
    }
}

/// Swept parameter names, in binning order.
pub const SWEPT: [&str; 5] = ["lambda0", "lambda1", "alpha", "beta", "k"];

impl ParamRanges {
    /// All ranges collapsed onto the values of `p`.
    pub fn point(p: &ModelParams) -> Self {
        Self {
            lambda0: [p.lambda0(); 2],
            lambda1: [p.lambda1; 2],
            alpha: [p.alpha; 2],
            beta: [p.beta; 2],
            k: [p.k; 2],
        }
    }

    pub fn get(&self, name: &str) -> Option<[f64; 2]> {
        match name {
            "lambda0" => Some(self.lambda0),
            "lambda1" => Some(self.lambda1),
            "alpha" => Some(self.alpha),
            "beta" => Some(self.beta),
            "k" => Some(self.k),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for name in SWEPT {
            let [lo, hi] = self.get(name).expect("swept name");
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!(
                    "range for {name} must satisfy lo <= hi (got [{lo}, {hi}])"
                )));
            }
        }
        Ok(())
    }
}

/// Value of a swept coordinate in `p`.
pub fn swept_value(p: &ModelParams, name: &str) -> Option<f64> {
    match name {
        "lambda0" => Some(p.lambda0()),
        "lambda1" => Some(p.lambda1),
        "alpha" => Some(p.alpha),
        "beta" => Some(p.beta),
        "k" => Some(p.k),
        _ => None,
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// One unconditioned draw. `base` supplies `n`, `d0`, `d1`, `nu` and the
/// rate family; `r0` is set to `d0 + lambda0`.
pub fn draw<R: Rng + ?Sized>(rng: &mut R, ranges: &ParamRanges, base: &ModelParams) -> ModelParams {
    let lambda0 = uniform(rng, ranges.lambda0);
    let lambda1 = uniform(rng, ranges.lambda1);
    let alpha = uniform(rng, ranges.alpha);
    let beta = uniform(rng, ranges.beta);
    let k = uniform(rng, ranges.k);
    ModelParams {
        lambda1,
        alpha,
        beta,
        k,
        ..base.clone()
    }
    .with_lambda0(lambda0)
}

/// Both consistency conditions hold and no hard rule is broken.
pub fn is_admissible(p: &ModelParams) -> bool {
    p.cond_persistence() && p.cond_stability() && p.validate().is_valid()
}

/// Draws until an admissible tuple appears. Returns it with the number of
/// draws used.
pub fn sample_admissible<R: Rng + ?Sized>(
    rng: &mut R,
    ranges: &ParamRanges,
    base: &ModelParams,
) -> Result<(ModelParams, usize)> {
    for draws in 1..=DRAW_CAP {
        let p = draw(rng, ranges, base);
        if is_admissible(&p) {
            return Ok((p, draws));
        }
    }
    Err(Error::DrawCapExceeded(DRAW_CAP))
}

/// Fraction of `draws` unconditioned draws that are admissible.
pub fn acceptance_rate<R: Rng + ?Sized>(rng: &mut R, ranges: &ParamRanges, base: &ModelParams, draws: usize) -> f64 {
    let accepted = (0..draws).filter(|_| is_admissible(&draw(rng, ranges, base))).count();
    accepted as f64 / draws as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_from_seed;

    #[test]
    fn collapsed_ranges_return_the_point() {
        let base = ModelParams::reference(1000);
        let (p, draws) = sample_admissible(&mut rng_from_seed(1), &ParamRanges::point(&base), &base).unwrap();
        assert_eq!(draws, 1);
        assert_eq!(p.alpha, base.alpha);
        assert_eq!(p.beta, base.beta);
        assert_eq!(p.k, base.k);
        assert_eq!(p.lambda1, base.lambda1);
        assert!((p.lambda0() - base.lambda0()).abs() < 1e-15);
    }

    #[test]
    fn persistence_bound_can_be_vacuous() {
        // lambda0 = -0.1, lambda1 = 0.9 gives beta > -8
        let base = ModelParams::reference(1000);
        let ranges = ParamRanges {
            lambda0: [-0.1, -0.1],
            lambda1: [0.9, 0.9],
            ..ParamRanges::default()
        };
        let mut rng = rng_from_seed(5);
        for _ in 0..2000 {
            let p = draw(&mut rng, &ranges, &base);
            assert!(p.cond_persistence());
            assert_eq!(is_admissible(&p), p.alpha + p.beta > 1.0);
        }
    }

    #[test]
    fn empty_admissible_set_hits_the_cap() {
        // beta <= 0.2 < 1 + lambda1 / lambda0 = 0.8 always
        let base = ModelParams::reference(1000);
        let ranges = ParamRanges {
            lambda0: [-0.5, -0.5],
            lambda1: [0.1, 0.1],
            beta: [0.1, 0.2],
            ..ParamRanges::default()
        };
        let res = sample_admissible(&mut rng_from_seed(2), &ranges, &base);
        assert!(matches!(res, Err(Error::DrawCapExceeded(DRAW_CAP))));
        assert_eq!(acceptance_rate(&mut rng_from_seed(3), &ranges, &base, 1000), 0.0);
    }

    #[test]
    fn draws_stay_in_range() {
        let base = ModelParams::reference(1000);
        let ranges = ParamRanges::default();
        let mut rng = rng_from_seed(9);
        for _ in 0..1000 {
            let (p, _) = sample_admissible(&mut rng, &ranges, &base).unwrap();
            for name in SWEPT {
                let [lo, hi] = ranges.get(name).unwrap();
                let v = swept_value(&p, name).unwrap();
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12, "{name} = {v}");
            }
            assert!(p.beta > 1.0 + p.lambda1 / p.lambda0());
            assert!(p.alpha + p.beta > 1.0);
        }
    }

    #[test]
    fn inverted_range_is_rejected() {
        let ranges = ParamRanges {
            k: [3.0, 2.0],
            ..ParamRanges::default()
        };
        assert!(ranges.validate().is_err());
        assert!(ParamRanges::default().validate().is_ok());
    }
}
