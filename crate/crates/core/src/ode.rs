//! Dormand–Prince 5(4) integration with dense output on a uniform sample grid.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationConfig {
    pub t0: f64,
    pub t_end: f64,
    /// Spacing of the returned samples.
    pub dt_sample: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    /// Upper bound on the internal step; `None` leaves it unbounded.
    pub max_step: Option<f64>,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            t0: 0.0,
            t_end: 5.0,
            dt_sample: 0.01,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_steps: 1_000_000,
            max_step: None,
        }
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t0.is_finite() && self.t_end.is_finite() && self.t_end > self.t0) {
            return Err(Error::Config(format!(
                "need t_end > t0, got [{}, {}]",
                self.t0, self.t_end
            )));
        }
        if !(self.dt_sample > 0.0 && self.dt_sample.is_finite()) {
            return Err(Error::Config(format!(
                "dt_sample must be > 0, got {}",
                self.dt_sample
            )));
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::Config("tolerances must be > 0".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be >= 1".into()));
        }
        if let Some(h) = self.max_step {
            if h.is_nan() || h <= 0.0 {
                return Err(Error::Config(format!("max_step must be > 0, got {h}")));
            }
        }
        Ok(())
    }

    /// `floor((t_end - t0) / dt) + 1`, tolerant to the representation error
    /// of `dt` (5 / 0.01 gives 501, not 500).
    pub fn sample_count(&self) -> usize {
        let ratio = (self.t_end - self.t0) / self.dt_sample;
        (ratio * (1.0 + 1e-12)).floor() as usize + 1
    }

    pub fn sample_time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt_sample
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// States sampled on the uniform grid, one column per sample.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.nrows()
    }
}

// Dormand & Prince (1980) tableau.
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

// 5th minus embedded 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// continuous extension
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], cfg: &IntegrationConfig) -> f64 {
    let n = err.len();
    let sum: f64 = (0..n)
        .map(|i| {
            let sc = cfg.abs_tol + cfg.rel_tol * y0[i].abs().max(y1[i].abs());
            (err[i] / sc).powi(2)
        })
        .sum();
    (sum / n.max(1) as f64).sqrt()
}

fn initial_step<F>(
    f: &mut F,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    cfg: &IntegrationConfig,
    span: f64,
) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let sc: Vec<f64> = y0
        .iter()
        .map(|y| cfg.abs_tol + cfg.rel_tol * y.abs())
        .collect();
    let rms = |v: &[f64]| -> f64 {
        (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt()
    };
    let d0 = rms(y0);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, d)| y + h0 * d).collect();
    let mut f1 = vec![0.0; n];
    f(t0 + h0, &y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Integrates `dx/dt = f(t, x)` from `x0` and samples the solution at
/// `t0 + k dt_sample` through the 4th-order Dormand–Prince interpolant.
///
/// `f` writes the derivative into its third argument.
pub fn integrate<F>(mut f: F, x0: &[f64], cfg: &IntegrationConfig) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    cfg.validate()?;
    let n = x0.len();
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("initial state"));
    }
    let m = cfg.sample_count();
    let times: Vec<f64> = (0..m).map(|k| cfg.sample_time(k)).collect();
    let t_final = times[m - 1].max(cfg.t_end);
    let mut states = DMatrix::zeros(n, m);
    states.column_mut(0).copy_from_slice(x0);
    let mut stats = StepStats::default();

    let mut y = x0.to_vec();
    let mut k1 = vec![0.0; n];
    f(cfg.t0, &y, &mut k1);
    stats.evaluations += 1;
    if !k1.iter().all(|v| v.is_finite()) {
        return Err(Error::Integration {
            t: cfg.t0,
            reason: "non-finite derivative at initial state".into(),
        });
    }
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];

    let span = t_final - cfg.t0;
    let h_max = cfg.max_step.unwrap_or(span).min(span);
    let mut t = cfg.t0;
    let mut h = initial_step(&mut f, t, &y, &k1, cfg, span).min(h_max);
    stats.evaluations += 1;
    let mut next_sample = 1;
    let mut last_rejected = false;

    while next_sample < m {
        if stats.accepted + stats.rejected >= cfg.max_steps {
            return Err(Error::Integration {
                t,
                reason: format!("exceeded max_steps = {}", cfg.max_steps),
            });
        }
        let mut last = false;
        if t + h >= t_final || t + 1.01 * h >= t_final {
            h = t_final - t;
            last = true;
        }
        if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(Error::Integration {
                t,
                reason: format!("step size underflow (h = {h:e})"),
            });
        }

        for i in 0..n {
            stage[i] = y[i] + h * A21 * k1[i];
        }
        f(t + C2 * h, &stage, &mut k2);
        for i in 0..n {
            stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, &stage, &mut k3);
        for i in 0..n {
            stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, &stage, &mut k4);
        for i in 0..n {
            stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, &stage, &mut k5);
        for i in 0..n {
            stage[i] =
                y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + h, &stage, &mut k6);
        for i in 0..n {
            y_new[i] =
                y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t + h, &y_new, &mut k7);
        stats.evaluations += 6;
        for i in 0..n {
            err[i] =
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let en = error_norm(&err, &y, &y_new, cfg);
        let finite = en.is_finite() && k7.iter().all(|v| v.is_finite());

        if finite && en <= 1.0 {
            stats.accepted += 1;
            let t_new = if last { t_final } else { t + h };
            // emit samples in (t, t_new]
            while next_sample < m && times[next_sample] <= t_new {
                let ts = times[next_sample];
                let mut col = states.column_mut(next_sample);
                if ts == t_new {
                    col.copy_from_slice(&y_new);
                } else {
                    let theta = (ts - t) / h;
                    let theta1 = 1.0 - theta;
                    for i in 0..n {
                        let ydiff = y_new[i] - y[i];
                        let bspl = h * k1[i] - ydiff;
                        let r4 = ydiff - h * k7[i] - bspl;
                        let r5 = h
                            * (D1 * k1[i]
                                + D3 * k3[i]
                                + D4 * k4[i]
                                + D5 * k5[i]
                                + D6 * k6[i]
                                + D7 * k7[i]);
                        col[i] =
                            y[i] + theta * (ydiff + theta1 * (bspl + theta * (r4 + theta1 * r5)));
                    }
                }
                next_sample += 1;
            }
            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            let mut factor = if en == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * en.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            if last_rejected {
                factor = factor.min(1.0);
            }
            last_rejected = false;
            h = (h * factor).min(h_max);
        } else {
            stats.rejected += 1;
            last_rejected = true;
            let factor = if finite {
                (SAFETY * en.powf(-0.2)).clamp(MIN_FACTOR, 1.0)
            } else {
                MIN_FACTOR
            };
            h *= factor;
        }
    }

    Ok(Trajectory {
        times,
        states,
        stats,
    })
}
