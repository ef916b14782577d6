//! Trajectory comparison: relative errors, generator averages and timing.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::io;
use crate::library::{LibrarySpec, TrigTerms};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Delta,
    Omega,
    All,
}

fn block_rows(n: usize, block: Block) -> std::ops::Range<usize> {
    match block {
        Block::Delta => 0..n / 2,
        Block::Omega => n / 2..n,
        Block::All => 0..n,
    }
}

/// `||truth_b - estimate_b||_F / ||truth_b||_F` over the whole window.
pub fn relative_error(truth: &DMatrix<f64>, estimate: &DMatrix<f64>, block: Block) -> Result<f64> {
    check_dim("estimate rows", truth.nrows(), estimate.nrows())?;
    check_dim("estimate columns", truth.ncols(), estimate.ncols())?;
    if block != Block::All && !truth.nrows().is_multiple_of(2) {
        return Err(Error::invalid(
            "trajectory",
            "delta/omega blocks need an even row count",
        ));
    }
    let rows = block_rows(truth.nrows(), block);
    let (mut num, mut den) = (0.0, 0.0);
    for i in rows {
        for k in 0..truth.ncols() {
            let t = truth[(i, k)];
            num += (t - estimate[(i, k)]).powi(2);
            den += t * t;
        }
    }
    if den == 0.0 {
        return Err(Error::Numerical("truth block has zero norm".into()));
    }
    Ok((num / den).sqrt())
}

/// Mean over generators at every sample: `(avg delta(t), avg omega(t))`.
pub fn average_series(traj: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = traj.nrows();
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::invalid(
            "trajectory",
            format!("need an even row count, got {n}"),
        ));
    }
    let g = n / 2;
    let mean = |rows: std::ops::Range<usize>| -> Vec<f64> {
        (0..traj.ncols())
            .map(|k| rows.clone().map(|i| traj[(i, k)]).sum::<f64>() / g as f64)
            .collect()
    };
    Ok((mean(0..g), mean(g..n)))
}

/// Runs `f` and returns its result with the elapsed wall-clock seconds.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub err_delta: f64,
    pub err_omega: f64,
    /// Wall-clock times vary run to run, so they are optional and omitted
    /// from the deterministic copy of the report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fom_time_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rom_time_s: Option<f64>,
    /// Latent rank, or the full state dimension for full-state models.
    pub r: usize,
    pub lambda: f64,
    pub poly_order: usize,
    pub trig: TrigTerms,
    pub normalization: String,
    #[serde(skip)]
    pub series: ErrorSeries,
}

impl EvaluationReport {
    /// Errors and averaged curves of `estimate` against `truth`.
    pub fn compare(
        times: &[f64],
        truth: &DMatrix<f64>,
        estimate: &DMatrix<f64>,
        r: usize,
        lambda: f64,
        library: &LibrarySpec,
    ) -> Result<Self> {
        let series = ErrorSeries::new(times, truth, estimate)?;
        Ok(Self {
            err_delta: relative_error(truth, estimate, Block::Delta)?,
            err_omega: relative_error(truth, estimate, Block::Omega)?,
            fom_time_s: None,
            rom_time_s: None,
            r,
            lambda,
            poly_order: library.poly_order,
            trig: library.trig,
            normalization: NORMALIZATION.into(),
            series,
        })
    }

    pub fn without_timing(&self) -> Self {
        Self {
            fom_time_s: None,
            rom_time_s: None,
            ..self.clone()
        }
    }
}

/// Per-sample curves for plotting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorSeries {
    pub times: Vec<f64>,
    pub avg_delta_true: Vec<f64>,
    pub avg_delta_est: Vec<f64>,
    pub avg_omega_true: Vec<f64>,
    pub avg_omega_est: Vec<f64>,
}

impl ErrorSeries {
    pub fn new(times: &[f64], truth: &DMatrix<f64>, estimate: &DMatrix<f64>) -> Result<Self> {
        check_dim("times vs truth columns", truth.ncols(), times.len())?;
        check_dim("estimate shape", truth.len(), estimate.len())?;
        let (dt, wt) = average_series(truth)?;
        let (de, we) = average_series(estimate)?;
        Ok(Self {
            times: times.to_vec(),
            avg_delta_true: dt,
            avg_delta_est: de,
            avg_omega_true: wt,
            avg_omega_est: we,
        })
    }

    /// `t, avg_delta_true, avg_delta_est, avg_domega_true, avg_domega_est`.
    pub fn write_averages_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<f64>> = (0..self.times.len())
            .map(|k| {
                vec![
                    self.times[k],
                    self.avg_delta_true[k],
                    self.avg_delta_est[k],
                    self.avg_omega_true[k],
                    self.avg_omega_est[k],
                ]
            })
            .collect();
        io::write_table(
            path,
            &[
                "t",
                "avg_delta_true",
                "avg_delta_est",
                "avg_domega_true",
                "avg_domega_est",
            ],
            &rows,
        )
    }

    /// `t, err_delta, err_omega`: absolute error of the averaged curves.
    pub fn write_errors_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<f64>> = (0..self.times.len())
            .map(|k| {
                vec![
                    self.times[k],
                    (self.avg_delta_true[k] - self.avg_delta_est[k]).abs(),
                    (self.avg_omega_true[k] - self.avg_omega_est[k]).abs(),
                ]
            })
            .collect();
        io::write_table(path, &["t", "err_delta", "err_omega"], &rows)
    }
}

pub const NORMALIZATION: &str =
    "frobenius norm of the error block over the full window divided by that of the true block";
