//! SVD-based reduction of snapshot data to latent coordinates.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::io;
use crate::snapshots::SnapshotSet;

pub const DEFAULT_ENERGY: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RankCriterion {
    /// Smallest rank whose cumulative squared singular values reach this
    /// fraction of the total.
    Energy(f64),
    FixedRank(usize),
}

impl Default for RankCriterion {
    fn default() -> Self {
        RankCriterion::Energy(DEFAULT_ENERGY)
    }
}

/// Leading left singular vectors of the snapshot matrix.
#[derive(Debug, Clone)]
pub struct ReducedBasis {
    phi: DMatrix<f64>,
    singular_values: Vec<f64>,
    energy_captured: f64,
    center: Option<DVector<f64>>,
}

impl ReducedBasis {
    /// Assembles a basis from stored parts; `phi` must have orthonormal columns.
    pub fn from_parts(
        phi: DMatrix<f64>,
        singular_values: Vec<f64>,
        center: Option<DVector<f64>>,
    ) -> Result<Self> {
        let r = phi.ncols();
        if r == 0 || r > phi.nrows() {
            return Err(Error::invalid(
                "basis",
                format!("rank {r} invalid for {} rows", phi.nrows()),
            ));
        }
        if let Some(c) = &center {
            check_dim("basis center length", phi.nrows(), c.len())?;
        }
        let gram = phi.transpose() * &phi;
        let dev = (gram - DMatrix::<f64>::identity(r, r)).amax();
        if dev.is_nan() || dev > 1e-8 {
            return Err(Error::invalid(
                "basis",
                format!("columns not orthonormal (deviation {dev:.2e})"),
            ));
        }
        let energy_captured = cumulative_energy(&singular_values)
            .get(r - 1)
            .copied()
            .unwrap_or(f64::NAN);
        Ok(Self {
            phi,
            singular_values,
            energy_captured,
            center,
        })
    }

    /// `n x r` basis.
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn rank(&self) -> usize {
        self.phi.ncols()
    }

    pub fn state_dim(&self) -> usize {
        self.phi.nrows()
    }

    pub fn energy_captured(&self) -> f64 {
        self.energy_captured
    }

    pub fn center(&self) -> Option<&DVector<f64>> {
        self.center.as_ref()
    }

    /// `z = Phi^T (x - center)`.
    pub fn project_state(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("state length", self.state_dim(), x.len())?;
        let mut v = DVector::from_column_slice(x);
        if let Some(c) = &self.center {
            v -= c;
        }
        Ok((self.phi.tr_mul(&v)).as_slice().to_vec())
    }

    pub fn project_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("snapshot rows", self.state_dim(), x.nrows())?;
        let mut z = self.phi.tr_mul(x);
        if let Some(c) = &self.center {
            let shift = self.phi.tr_mul(c);
            for mut col in z.column_iter_mut() {
                col -= &shift;
            }
        }
        Ok(z)
    }
}

/// Fraction of total squared singular values captured by the first `k + 1`.
pub fn cumulative_energy(sigma: &[f64]) -> Vec<f64> {
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    let mut acc = 0.0;
    sigma
        .iter()
        .map(|s| {
            acc += s * s;
            if total > 0.0 {
                acc / total
            } else {
                0.0
            }
        })
        .collect()
}

fn select_rank(sigma: &[f64], criterion: RankCriterion) -> Result<usize> {
    let k = sigma.len();
    match criterion {
        RankCriterion::FixedRank(r) => {
            if r == 0 {
                return Err(Error::Config("fixed rank must be >= 1".into()));
            }
            Ok(r.min(k))
        }
        RankCriterion::Energy(tau) => {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(Error::Config(format!(
                    "energy threshold must be in (0, 1], got {tau}"
                )));
            }
            let cum = cumulative_energy(sigma);
            Ok(cum
                .iter()
                .position(|&e| e >= tau)
                .map(|i| i + 1)
                .unwrap_or(k))
        }
    }
}

/// Truncated SVD of `x` (`n x m`). With `center`, the row means are removed
/// first and stored in the basis.
pub fn compute_basis_from_matrix(
    x: &DMatrix<f64>,
    criterion: RankCriterion,
    center: bool,
) -> Result<ReducedBasis> {
    let (n, m) = x.shape();
    if m < 2 {
        return Err(Error::invalid(
            "snapshots",
            format!("need at least 2 samples, got {m}"),
        ));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("snapshot matrix"));
    }
    let mut data = x.clone();
    let mean = if center {
        let mu = x.column_mean();
        for mut col in data.column_iter_mut() {
            col -= &mu;
        }
        Some(mu)
    } else {
        None
    };
    if data.amax() == 0.0 {
        return Err(Error::Numerical(
            "snapshot matrix is identically zero; no basis".into(),
        ));
    }
    let svd = data.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
    let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    let r = select_rank(&sigma, criterion)?;
    debug_assert!(r <= n.min(m));

    let mut phi = u.columns(0, r).into_owned();
    for mut col in phi.column_iter_mut() {
        let (imax, _) = col.iter().enumerate().fold((0, -1.0), |(bi, bv), (i, v)| {
            if v.abs() > bv {
                (i, v.abs())
            } else {
                (bi, bv)
            }
        });
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
    let energy_captured = cumulative_energy(&sigma)[r - 1];
    Ok(ReducedBasis {
        phi,
        singular_values: sigma,
        energy_captured,
        center: mean,
    })
}

pub fn compute_basis(
    s: &SnapshotSet,
    criterion: RankCriterion,
    center: bool,
) -> Result<ReducedBasis> {
    compute_basis_from_matrix(s.x(), criterion, center)
}

#[derive(Debug, Clone)]
pub struct LatentSnapshotSet {
    pub times: Vec<f64>,
    /// `r x m` latent states.
    pub z: DMatrix<f64>,
    /// `r x m` latent derivatives.
    pub zdot: DMatrix<f64>,
}

/// `Z = Phi^T X`, `Zdot = Phi^T Xdot`.
pub fn project(s: &SnapshotSet, b: &ReducedBasis) -> Result<LatentSnapshotSet> {
    check_dim("snapshot state dimension", b.state_dim(), s.state_dim())?;
    Ok(LatentSnapshotSet {
        times: s.times().to_vec(),
        z: b.project_matrix(s.x())?,
        zdot: b.phi.tr_mul(s.xdot()),
    })
}

/// Back-projects latent states: `X_hat = Phi Z (+ center)`.
pub fn reconstruct(z: &DMatrix<f64>, b: &ReducedBasis) -> Result<DMatrix<f64>> {
    check_dim("latent rows", b.rank(), z.nrows())?;
    let mut x = &b.phi * z;
    if let Some(c) = &b.center {
        for mut col in x.column_iter_mut() {
            col += c;
        }
    }
    Ok(x)
}

/// `index, sigma, cumulative_energy` rows, 1-based index.
pub fn write_spectrum_csv(path: &Path, sigma: &[f64]) -> Result<()> {
    let cum = cumulative_energy(sigma);
    let rows: Vec<Vec<f64>> = sigma
        .iter()
        .zip(&cum)
        .enumerate()
        .map(|(i, (s, c))| vec![(i + 1) as f64, *s, *c])
        .collect();
    io::write_table(path, &["index", "sigma", "cumulative_energy"], &rows)
}

pub fn read_spectrum_csv(path: &Path) -> Result<Vec<f64>> {
    let (header, rows) = io::read_table(path)?;
    if header != ["index", "sigma", "cumulative_energy"] {
        return Err(Error::parse(
            path,
            "expected header index, sigma, cumulative_energy",
        ));
    }
    Ok(rows.iter().map(|r| r[1]).collect())
}

/// One row per state component: `phi_1..phi_r` and, when centered, `center`.
pub fn write_basis_csv(path: &Path, b: &ReducedBasis) -> Result<()> {
    let mut header: Vec<String> = (1..=b.rank()).map(|j| format!("phi_{j}")).collect();
    if b.center.is_some() {
        header.push("center".into());
    }
    let rows: Vec<Vec<f64>> = (0..b.state_dim())
        .map(|i| {
            let mut row: Vec<f64> = b.phi.row(i).iter().copied().collect();
            if let Some(c) = &b.center {
                row.push(c[i]);
            }
            row
        })
        .collect();
    io::write_table(path, &header, &rows)
}

pub fn read_basis_csv(path: &Path, singular_values: Vec<f64>) -> Result<ReducedBasis> {
    let (header, rows) = io::read_table(path)?;
    let centered = header.last().map(String::as_str) == Some("center");
    let r = header.len() - usize::from(centered);
    for (j, h) in header.iter().take(r).enumerate() {
        if *h != format!("phi_{}", j + 1) {
            return Err(Error::parse(path, format!("unexpected column {h:?}")));
        }
    }
    let n = rows.len();
    let phi = DMatrix::from_fn(n, r, |i, j| rows[i][j]);
    let center = centered.then(|| DVector::from_fn(n, |i, _| rows[i][r]));
    ReducedBasis::from_parts(phi, singular_values, center)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snapshots::Provenance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0))
    }

    fn snapshot(x: DMatrix<f64>) -> SnapshotSet {
        let m = x.ncols();
        let xdot = DMatrix::zeros(x.nrows(), m);
        SnapshotSet::new(
            (0..m).map(|k| k as f64).collect(),
            x,
            xdot,
            Provenance::Loaded,
        )
        .unwrap()
    }

    #[test]
    fn rank_one_data() {
        let u = DVector::from_vec(vec![0.6, 0.8, 0.0, 0.0]);
        let v = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let x = &u * v.transpose() * 5.0;
        let b = compute_basis_from_matrix(&x, RankCriterion::Energy(0.999), false).unwrap();
        assert_eq!(b.rank(), 1);
        assert!((b.singular_values()[0] - 5.0).abs() < 1e-12);
        assert!(b.singular_values()[1..].iter().all(|s| s.abs() < 1e-12));
        // sign convention: largest entry positive
        assert!((b.phi()[(1, 0)] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn flat_spectrum_keeps_everything() {
        let x = DMatrix::<f64>::identity(4, 4) * 3.0;
        let b = compute_basis_from_matrix(&x, RankCriterion::Energy(0.999), false).unwrap();
        assert_eq!(b.rank(), 4);
        assert!((b.energy_captured() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fixed_rank_is_clamped() {
        let x = random_matrix(6, 4, 1);
        let b = compute_basis_from_matrix(&x, RankCriterion::FixedRank(10), false).unwrap();
        assert_eq!(b.rank(), 4);
        assert!(compute_basis_from_matrix(&x, RankCriterion::FixedRank(0), false).is_err());
    }

    #[test]
    fn zero_data_has_no_basis() {
        let x = DMatrix::zeros(4, 10);
        assert!(compute_basis_from_matrix(&x, RankCriterion::default(), false).is_err());
    }

    #[test]
    fn full_rank_is_lossless() {
        let x = random_matrix(6, 500, 2);
        let b = compute_basis_from_matrix(&x, RankCriterion::FixedRank(6), false).unwrap();
        let s = snapshot(x.clone());
        let z = project(&s, &b).unwrap();
        let back = reconstruct(&z.z, &b).unwrap();
        assert!((back - &x).norm() < 1e-10);
    }

    #[test]
    fn pythagoras_for_projection() {
        let x = random_matrix(6, 500, 3);
        let b = compute_basis_from_matrix(&x, RankCriterion::FixedRank(3), false).unwrap();
        let xr = reconstruct(&b.project_matrix(&x).unwrap(), &b).unwrap();
        let lhs = (&x - &xr).norm_squared() + xr.norm_squared();
        assert!((lhs - x.norm_squared()).abs() < 1e-8);
    }

    #[test]
    fn projection_of_in_span_data_is_lossless() {
        let basis = random_matrix(6, 2, 4).qr().q();
        let coeffs = random_matrix(2, 30, 5);
        let x = &basis * coeffs;
        let b = compute_basis_from_matrix(&x, RankCriterion::FixedRank(2), false).unwrap();
        let xr = reconstruct(&b.project_matrix(&x).unwrap(), &b).unwrap();
        assert!((xr - x).norm() < 1e-10);
    }

    #[test]
    fn truncation_error_matches_tail_energy() {
        let x = random_matrix(8, 60, 6);
        for r in 1..8 {
            let b = compute_basis_from_matrix(&x, RankCriterion::FixedRank(r), false).unwrap();
            let err = (reconstruct(&b.project_matrix(&x).unwrap(), &b).unwrap() - &x).norm();
            let tail: f64 = b.singular_values()[r..]
                .iter()
                .map(|s| s * s)
                .sum::<f64>()
                .sqrt();
            assert!((err - tail).abs() < 1e-8, "r = {r}");
        }
    }

    #[test]
    fn monotone_energy_and_error() {
        let x = random_matrix(8, 60, 7);
        let mut prev_e = 0.0;
        let mut prev_err = f64::INFINITY;
        for r in 1..=8 {
            let b = compute_basis_from_matrix(&x, RankCriterion::FixedRank(r), false).unwrap();
            let err = (reconstruct(&b.project_matrix(&x).unwrap(), &b).unwrap() - &x).norm();
            assert!(b.energy_captured() >= prev_e);
            assert!(err <= prev_err + 1e-12);
            prev_e = b.energy_captured();
            prev_err = err;
        }
    }

    #[test]
    fn reconstruct_zero_and_idempotence() {
        let x = random_matrix(6, 40, 8);
        let b = compute_basis_from_matrix(&x, RankCriterion::FixedRank(3), false).unwrap();
        assert_eq!(
            reconstruct(&DMatrix::zeros(3, 5), &b).unwrap(),
            DMatrix::zeros(6, 5)
        );
        let z = random_matrix(3, 5, 9);
        let again = b.project_matrix(&reconstruct(&z, &b).unwrap()).unwrap();
        assert!((again - z).amax() < 1e-10);
        assert!(reconstruct(&DMatrix::zeros(2, 5), &b).is_err());
    }

    #[test]
    fn centered_basis_round_trip() {
        let mut x = random_matrix(4, 30, 10);
        for mut col in x.column_iter_mut() {
            col.add_scalar_mut(5.0);
        }
        let b = compute_basis_from_matrix(&x, RankCriterion::FixedRank(4), true).unwrap();
        assert!(b.center().is_some());
        let back = reconstruct(&b.project_matrix(&x).unwrap(), &b).unwrap();
        assert!((back - &x).amax() < 1e-10);
    }

    #[test]
    fn csv_round_trips() {
        let x = random_matrix(6, 40, 11);
        let b = compute_basis_from_matrix(&x, RankCriterion::FixedRank(3), false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (pb, ps) = (dir.path().join("basis.csv"), dir.path().join("spec.csv"));
        write_basis_csv(&pb, &b).unwrap();
        write_spectrum_csv(&ps, b.singular_values()).unwrap();
        let sigma = read_spectrum_csv(&ps).unwrap();
        assert_eq!(sigma, b.singular_values());
        let back = read_basis_csv(&pb, sigma).unwrap();
        assert_eq!(back.phi(), b.phi());
        assert_eq!(back.energy_captured(), b.energy_captured());
    }
}
