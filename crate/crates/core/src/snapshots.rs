//! State and derivative snapshot matrices.
//!
//! Columns are time samples; rows are the stacked `[delta; omega]` state.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::exec::Parallelism;
use crate::grid_model::EffectiveNetwork;
use crate::io;
use crate::ode::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    /// Right-hand side evaluated at each stored state.
    #[default]
    Exact,
    /// Second-order central differences, one-sided at the ends.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    ExactDerivatives,
    FiniteDifference,
    Noisy {
        sigma_rel: f64,
        seed: u64,
    },
    /// Read from disk; origin unknown.
    Loaded,
}

#[derive(Debug, Clone)]
pub struct SnapshotSet {
    times: Vec<f64>,
    x: DMatrix<f64>,
    xdot: DMatrix<f64>,
    provenance: Provenance,
}

impl SnapshotSet {
    pub fn new(
        times: Vec<f64>,
        x: DMatrix<f64>,
        xdot: DMatrix<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        check_dim("snapshot columns vs times", times.len(), x.ncols())?;
        check_dim("derivative columns vs times", times.len(), xdot.ncols())?;
        check_dim("derivative rows", x.nrows(), xdot.nrows())?;
        if !x.nrows().is_multiple_of(2) {
            return Err(Error::invalid(
                "snapshot rows",
                format!("expected an even [delta; omega] stack, got {}", x.nrows()),
            ));
        }
        if !x
            .iter()
            .chain(xdot.iter())
            .chain(&times)
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite("snapshot set"));
        }
        Ok(Self {
            times,
            x,
            xdot,
            provenance,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `n x m` states.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// `n x m` time derivatives.
    pub fn xdot(&self) -> &DMatrix<f64> {
        &self.xdot
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn state_dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn uniform_step(times: &[f64]) -> Result<f64> {
    let m = times.len();
    let dt = (times[m - 1] - times[0]) / (m - 1) as f64;
    let tol = 1e-9 * dt.abs().max(1e-300);
    for (k, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > tol.max(1e-12 * w[1].abs()) {
            return Err(Error::invalid(
                "times",
                format!("sampling is not uniform at index {}", k + 1),
            ));
        }
    }
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::invalid("times", "must be strictly increasing"));
    }
    Ok(dt)
}

/// Differentiates each row of `x` along its columns with uniform spacing `dt`.
pub fn finite_difference(x: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    let m = x.ncols();
    if m < 3 {
        return Err(Error::invalid(
            "snapshots",
            format!("finite differences need at least 3 samples, got {m}"),
        ));
    }
    let inv = 1.0 / (2.0 * dt);
    let mut d = DMatrix::zeros(x.nrows(), m);
    for r in 0..x.nrows() {
        d[(r, 0)] = (-3.0 * x[(r, 0)] + 4.0 * x[(r, 1)] - x[(r, 2)]) * inv;
        for k in 1..m - 1 {
            d[(r, k)] = (x[(r, k + 1)] - x[(r, k - 1)]) * inv;
        }
        d[(r, m - 1)] = (3.0 * x[(r, m - 1)] - 4.0 * x[(r, m - 2)] + x[(r, m - 3)]) * inv;
    }
    Ok(d)
}

/// Builds the snapshot pair from a trajectory of a generic vector field.
pub fn assemble_with_field<F>(
    traj: &Trajectory,
    field: F,
    mode: DerivativeMode,
    par: Parallelism,
) -> Result<SnapshotSet>
where
    F: Fn(&[f64], &mut [f64]) + Sync + Send,
{
    let x = traj.states.clone();
    let n = x.nrows();
    let (xdot, provenance) = match mode {
        DerivativeMode::Exact => {
            let cols = par.map_range(x.ncols(), |k| {
                let mut dx = vec![0.0; n];
                field(x.column(k).as_slice(), &mut dx);
                dx
            });
            let mut xdot = DMatrix::zeros(n, x.ncols());
            for (k, c) in cols.iter().enumerate() {
                xdot.column_mut(k).copy_from_slice(c);
            }
            (xdot, Provenance::ExactDerivatives)
        }
        DerivativeMode::FiniteDifference => {
            if traj.len() < 3 {
                return Err(Error::invalid(
                    "trajectory",
                    format!(
                        "finite differences need at least 3 samples, got {}",
                        traj.len()
                    ),
                ));
            }
            let dt = uniform_step(&traj.times)?;
            (finite_difference(&x, dt)?, Provenance::FiniteDifference)
        }
    };
    SnapshotSet::new(traj.times.clone(), x, xdot, provenance)
}

/// Builds `X` and `Xdot` from a simulated grid trajectory.
pub fn assemble(
    traj: &Trajectory,
    net: &EffectiveNetwork,
    mode: DerivativeMode,
) -> Result<SnapshotSet> {
    assemble_par(traj, net, mode, Parallelism::default())
}

pub fn assemble_par(
    traj: &Trajectory,
    net: &EffectiveNetwork,
    mode: DerivativeMode,
    par: Parallelism,
) -> Result<SnapshotSet> {
    check_dim("trajectory state dimension", net.state_dim(), traj.dim())?;
    assemble_with_field(traj, |x, dx| net.rhs(x, dx), mode, par)
}

fn row_std(x: &DMatrix<f64>, r: usize) -> f64 {
    let m = x.ncols() as f64;
    let row = x.row(r);
    let mean = row.sum() / m;
    (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt()
}

/// Adds zero-mean Gaussian noise to every row of `X` with standard deviation
/// `sigma_rel` times that row's standard deviation, then recomputes `Xdot`
/// from the noisy states by finite differences.
pub fn add_noise(s: &SnapshotSet, sigma_rel: f64, seed: u64) -> Result<SnapshotSet> {
    if !(sigma_rel >= 0.0 && sigma_rel.is_finite()) {
        return Err(Error::Config(format!(
            "sigma_rel must be >= 0, got {sigma_rel}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = s.x.clone();
    for r in 0..x.nrows() {
        let sd = sigma_rel * row_std(&s.x, r);
        for k in 0..x.ncols() {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[(r, k)] += sd * z;
        }
    }
    let dt = uniform_step(&s.times)?;
    let xdot = finite_difference(&x, dt)?;
    SnapshotSet::new(
        s.times.clone(),
        x,
        xdot,
        Provenance::Noisy { sigma_rel, seed },
    )
}

fn state_header(prefix_delta: &str, prefix_omega: &str, n_g: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n_g).map(|i| format!("{prefix_delta}_{i}")));
    h.extend((1..=n_g).map(|i| format!("{prefix_omega}_{i}")));
    h
}

/// Writes `X` to `states_path` (`t, delta_1.., omega_1..`) and `Xdot` to
/// `derivs_path` (`t, ddelta_1.., domega_1..`).
pub fn write_csv(s: &SnapshotSet, states_path: &Path, derivs_path: &Path) -> Result<()> {
    let n_g = s.state_dim() / 2;
    io::write_time_series(
        states_path,
        &state_header("delta", "omega", n_g),
        &s.times,
        &s.x,
    )?;
    io::write_time_series(
        derivs_path,
        &state_header("ddelta", "domega", n_g),
        &s.times,
        &s.xdot,
    )
}

/// Writes a bare state trajectory with the snapshot header.
pub fn write_states_csv(path: &Path, times: &[f64], x: &DMatrix<f64>) -> Result<()> {
    io::write_time_series(
        path,
        &state_header("delta", "omega", x.nrows() / 2),
        times,
        x,
    )
}

/// Reads a state CSV written by [`write_csv`] or [`write_states_csv`].
pub fn read_states_csv(path: &Path) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (header, times, x) = io::read_time_series(path)?;
    let n_g = x.nrows() / 2;
    if !x.nrows().is_multiple_of(2) || header != state_header("delta", "omega", n_g) {
        return Err(Error::parse(
            path,
            "expected header t, delta_1..delta_n, omega_1..omega_n",
        ));
    }
    Ok((times, x))
}

pub fn read_csv(states_path: &Path, derivs_path: &Path) -> Result<SnapshotSet> {
    let (times, x) = read_states_csv(states_path)?;
    let (header, t2, xdot) = io::read_time_series(derivs_path)?;
    if header != state_header("ddelta", "domega", x.nrows() / 2) {
        return Err(Error::parse(
            derivs_path,
            "expected header t, ddelta_1..ddelta_n, domega_1..domega_n",
        ));
    }
    if t2 != times {
        return Err(Error::parse(
            derivs_path,
            "time column differs from the state file",
        ));
    }
    SnapshotSet::new(times, x, xdot, Provenance::Loaded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_model::{generate_synthetic, ParameterRanges, Topology};
    use crate::ode::{integrate, IntegrationConfig, StepStats};
    use proptest::prelude::*;

    fn traj_from(times: Vec<f64>, states: DMatrix<f64>) -> Trajectory {
        Trajectory {
            times,
            states,
            stats: StepStats::default(),
        }
    }

    fn three_gen_snapshots(mode: DerivativeMode) -> (EffectiveNetwork, SnapshotSet) {
        let syn = generate_synthetic(3, Topology::Ring, 7, &ParameterRanges::default()).unwrap();
        let mut x0 = syn.equilibrium.to_stacked();
        x0[0] += 0.1;
        x0[1] -= 0.05;
        let traj = integrate(
            |_, x: &[f64], dx: &mut [f64]| syn.network.rhs(x, dx),
            &x0,
            &IntegrationConfig::default(),
        )
        .unwrap();
        let s = assemble(&traj, &syn.network, mode).unwrap();
        (syn.network, s)
    }

    #[test]
    fn constant_trajectory_has_zero_fd_derivative() {
        let times: Vec<f64> = (0..10).map(|k| k as f64 * 0.01).collect();
        let x = DMatrix::from_element(4, 10, 0.7);
        let s = assemble_with_field(
            &traj_from(times, x),
            |_, _| unreachable!(),
            DerivativeMode::FiniteDifference,
            Parallelism::Sequential,
        )
        .unwrap();
        assert!(s.xdot().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn quadratic_is_exact_under_second_order_stencil() {
        let times: Vec<f64> = (0..50).map(|k| k as f64 * 0.01).collect();
        let x = DMatrix::from_fn(2, 50, |_, k| times[k] * times[k]);
        let d = finite_difference(&x, 0.01).unwrap();
        for k in 0..50 {
            assert!((d[(0, k)] - 2.0 * times[k]).abs() < 1e-11, "k = {k}");
        }
    }

    #[test]
    fn too_few_samples_for_fd() {
        let times = vec![0.0, 0.01];
        let x = DMatrix::zeros(2, 2);
        let r = assemble_with_field(
            &traj_from(times, x),
            |_, _| {},
            DerivativeMode::FiniteDifference,
            Parallelism::Sequential,
        );
        assert!(r.is_err());
    }

    #[test]
    fn exact_mode_matches_vector_field() {
        let (net, s) = three_gen_snapshots(DerivativeMode::Exact);
        let mut dx = vec![0.0; 6];
        for k in 0..s.len() {
            net.rhs(s.x().column(k).as_slice(), &mut dx);
            for (i, d) in dx.iter().enumerate() {
                assert!((s.xdot()[(i, k)] - d).abs() <= 1e-14 * d.abs().max(1.0));
            }
        }
    }

    #[test]
    fn exact_and_fd_agree_to_second_order() {
        let (_, exact) = three_gen_snapshots(DerivativeMode::Exact);
        let (_, fd) = three_gen_snapshots(DerivativeMode::FiniteDifference);
        let dt = 0.01;
        // oracle for |x'''|: central differences of the exact derivative twice
        let xddot = finite_difference(exact.xdot(), dt).unwrap();
        let x3 = finite_difference(&xddot, dt).unwrap();
        let max_x3 = x3.amax();
        // the one-sided end stencils carry a 1/3 instead of 1/6 error constant
        let bound = 10.0 * dt * dt * max_x3;
        let disc = (exact.xdot() - fd.xdot()).amax();
        assert!(disc < bound, "discrepancy {disc} vs bound {bound}");
        assert!(disc > 0.0);
    }

    #[test]
    fn zero_noise_keeps_states() {
        let (_, s) = three_gen_snapshots(DerivativeMode::Exact);
        let n = add_noise(&s, 0.0, 1).unwrap();
        assert_eq!(n.x(), s.x());
        assert_eq!(
            n.provenance(),
            Provenance::Noisy {
                sigma_rel: 0.0,
                seed: 1
            }
        );
    }

    #[test]
    fn noise_is_deterministic_and_scaled() {
        let (_, s) = three_gen_snapshots(DerivativeMode::Exact);
        let a = add_noise(&s, 0.01, 42).unwrap();
        let b = add_noise(&s, 0.01, 42).unwrap();
        assert_eq!(a.x(), b.x());
        assert_eq!(a.xdot(), b.xdot());
        let diff = a.x() - s.x();
        for r in 0..s.state_dim() {
            let target = 0.01 * row_std(s.x(), r);
            let got = row_std(&diff, r);
            assert!(
                (got / target - 1.0).abs() < 0.2,
                "row {r}: {got} vs {target}"
            );
        }
    }

    #[test]
    fn csv_round_trip() {
        let (_, s) = three_gen_snapshots(DerivativeMode::Exact);
        let dir = tempfile::tempdir().unwrap();
        let (ps, pd) = (dir.path().join("x.csv"), dir.path().join("dx.csv"));
        write_csv(&s, &ps, &pd).unwrap();
        let header = std::fs::read_to_string(&ps).unwrap();
        assert!(header.starts_with("t,delta_1,delta_2,delta_3,omega_1,omega_2,omega_3\n"));
        let back = read_csv(&ps, &pd).unwrap();
        assert_eq!(back.x(), s.x());
        assert_eq!(back.xdot(), s.xdot());
        assert_eq!(back.times(), s.times());
    }

    #[test]
    fn parallel_exact_assembly_matches_sequential() {
        let syn = generate_synthetic(10, Topology::Ring, 3, &ParameterRanges::default()).unwrap();
        let traj = integrate(
            |_, x: &[f64], dx: &mut [f64]| syn.network.rhs(x, dx),
            &{
                let mut x0 = syn.equilibrium.to_stacked();
                x0[2] += 0.1;
                x0
            },
            &IntegrationConfig::default(),
        )
        .unwrap();
        let a = assemble_par(
            &traj,
            &syn.network,
            DerivativeMode::Exact,
            Parallelism::Sequential,
        )
        .unwrap();
        let b = assemble_par(
            &traj,
            &syn.network,
            DerivativeMode::Exact,
            Parallelism::Rayon,
        )
        .unwrap();
        assert_eq!(a.xdot(), b.xdot());
    }

    proptest! {
        #[test]
        fn finite_difference_is_linear(
            a in -5.0f64..5.0, b in -5.0f64..5.0,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x1 = DMatrix::from_fn(3, 20, |_, _| rng.random_range(-1.0..1.0));
            let x2 = DMatrix::from_fn(3, 20, |_, _| rng.random_range(-1.0..1.0));
            let lhs = finite_difference(&(&x1 * a + &x2 * b), 0.01).unwrap();
            let rhs = finite_difference(&x1, 0.01).unwrap() * a + finite_difference(&x2, 0.01).unwrap() * b;
            let scale = lhs.amax().max(1.0);
            prop_assert!((&lhs - rhs).amax() <= 1e-12 * scale);
        }
    }
}
