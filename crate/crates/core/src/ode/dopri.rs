//! Dormand-Prince 5(4) with step-size control and the 4th order continuous
//! extension for dense output.

use serde::Serialize;

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// difference between the 5th and embedded 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

/// One accepted step with its dense-output coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment<const N: usize> {
    pub t0: f64,
    pub h: f64,
    pub cont: [[f64; N]; 5],
}

impl<const N: usize> Segment<N> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn start(&self) -> [f64; N] {
        self.cont[0]
    }

    pub fn end(&self) -> [f64; N] {
        std::array::from_fn(|i| self.cont[0][i] + self.cont[1][i])
    }

    /// Interpolated state at `t` within `[t0, t0 + h]`.
    pub fn eval(&self, t: f64) -> [f64; N] {
        let theta = (t - self.t0) / self.h;
        let theta1 = 1.0 - theta;
        let c = &self.cont;
        std::array::from_fn(|i| c[0][i] + theta * (c[1][i] + theta1 * (c[2][i] + theta * (c[3][i] + theta1 * c[4][i]))))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Stats {
    pub steps: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

pub enum Flow {
    Continue,
    Stop,
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    std::array::from_fn(|i| y[i] + h * terms.iter().map(|(a, k)| a * k[i]).sum::<f64>())
}

fn error_norm<const N: usize>(err: &[f64; N], y0: &[f64; N], y1: &[f64; N], s: &Settings) -> f64 {
    let sum: f64 = (0..N)
        .map(|i| {
            let scale = s.atol + s.rtol * y0[i].abs().max(y1[i].abs());
            (err[i] / scale).powi(2)
        })
        .sum();
    (sum / N as f64).sqrt()
}

/// Starting step size after Hairer, Norsett and Wanner (II.4).
fn initial_step<const N: usize, F>(rhs: &F, t0: f64, y0: &[f64; N], f0: &[f64; N], s: &Settings) -> f64
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let scale: [f64; N] = std::array::from_fn(|i| s.atol + s.rtol * y0[i].abs());
    let rms = |v: &[f64; N]| ((0..N).map(|i| (v[i] / scale[i]).powi(2)).sum::<f64>() / N as f64).sqrt();
    let d0 = rms(y0);
    let d1 = rms(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(s.h_max);
    let y1 = axpy(y0, h0, &[(1.0, f0)]);
    let f1 = rhs(t0 + h0, &y1);
    let diff: [f64; N] = std::array::from_fn(|i| f1[i] - f0[i]);
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    (100.0 * h0).min(h1).min(s.h_max)
}

/// Integrates `y' = rhs(t, y)` from `t0` to `t_end`, handing every accepted
/// step to `on_step`.
pub fn integrate<const N: usize, F, S>(
    rhs: F,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    settings: &Settings,
    mut on_step: S,
) -> Result<Stats>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    S: FnMut(&Segment<N>) -> Result<Flow>,
{
    let mut stats = Stats::default();
    let mut t = t0;
    let mut y = y0;
    let mut k1 = rhs(t, &y);
    stats.rhs_evals += 1;
    let mut h = initial_step(&rhs, t, &y, &k1, settings);
    stats.rhs_evals += 1;
    let mut err_old: f64 = 1e-4;
    let mut rejected_last = false;

    while t < t_end {
        if stats.steps >= settings.max_steps {
            return Err(Error::TooManySteps(settings.max_steps));
        }
        if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(Error::StepSizeUnderflow { t, h });
        }
        let last = t + 1.01 * h >= t_end;
        if last {
            h = t_end - t;
        }
        stats.steps += 1;

        let k2 = rhs(t + C2 * h, &axpy(&y, h, &[(A21, &k1)]));
        let k3 = rhs(t + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]));
        let k4 = rhs(t + C4 * h, &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = rhs(
            t + C5 * h,
            &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let k6 = rhs(
            t + h,
            &axpy(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
        );
        let y_new = axpy(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let k7 = rhs(t + h, &y_new);
        stats.rhs_evals += 6;

        let err_vec: [f64; N] =
            std::array::from_fn(|i| h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]));
        let err = error_norm(&err_vec, &y, &y_new, settings);

        if err <= 1.0 {
            let mut cont = [[0.0; N]; 5];
            for i in 0..N {
                let diff = y_new[i] - y[i];
                let bspl = h * k1[i] - diff;
                cont[0][i] = y[i];
                cont[1][i] = diff;
                cont[2][i] = bspl;
                cont[3][i] = diff - h * k7[i] - bspl;
                cont[4][i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            }
            let segment = Segment { t0: t, h, cont };
            stats.accepted += 1;
            t = if last { t_end } else { t + h };
            y = y_new;
            k1 = k7;

            if let Flow::Stop = on_step(&segment)? {
                break;
            }

            // PI step-size control
            let err = err.max(1e-10);
            let mut fac = err.powf(0.2 - 0.75 * BETA) / err_old.powf(BETA) / SAFETY;
            fac = fac.clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = h / fac;
            if rejected_last {
                h_new = h_new.min(h);
            }
            err_old = err.max(1e-4);
            rejected_last = false;
            h = h_new.min(settings.h_max);
        } else {
            stats.rejected += 1;
            rejected_last = true;
            let fac = (err.powf(0.2) / SAFETY).min(1.0 / FAC_MIN);
            h /= fac;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> Settings {
        Settings {
            rtol: 1e-10,
            atol: 1e-12,
            h_max: f64::INFINITY,
            max_steps: 100_000,
        }
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let mut last = [1.0];
        let stats = integrate(
            |_, y: &[f64; 1]| [-0.7 * y[0]],
            0.0,
            [1.0],
            5.0,
            &settings(),
            |seg| {
                last = seg.end();
                Ok(Flow::Continue)
            },
        )
        .unwrap();
        assert!(((last[0] - (-3.5f64).exp()) / (-3.5f64).exp()).abs() < 1e-8);
        assert!(stats.accepted > 0);
    }

    #[test]
    fn dense_output_tracks_harmonic_oscillator() {
        let mut worst: f64 = 0.0;
        integrate(
            |_, y: &[f64; 2]| [y[1], -y[0]],
            0.0,
            [0.0, 1.0],
            10.0,
            &settings(),
            |seg| {
                for j in 0..=10 {
                    let t = seg.t0 + seg.h * j as f64 / 10.0;
                    let y = seg.eval(t);
                    worst = worst.max((y[0] - t.sin()).abs());
                }
                Ok(Flow::Continue)
            },
        )
        .unwrap();
        assert!(worst < 1e-7, "{worst}");
    }

    #[test]
    fn dense_output_hits_step_ends() {
        integrate(
            |t, _: &[f64; 1]| [t.cos()],
            0.0,
            [0.0],
            3.0,
            &settings(),
            |seg| {
                let end = seg.end();
                assert!((seg.eval(seg.t1())[0] - end[0]).abs() < 1e-14);
                assert_eq!(seg.eval(seg.t0)[0], seg.start()[0]);
                Ok(Flow::Continue)
            },
        )
        .unwrap();
    }

    #[test]
    fn step_cap_is_an_error() {
        let s = Settings {
            max_steps: 3,
            ..settings()
        };
        let res = integrate(|_, y: &[f64; 1]| [y[0]], 0.0, [1.0], 100.0, &s, |_| Ok(Flow::Continue));
        assert!(matches!(res, Err(Error::TooManySteps(3))));
    }
}
