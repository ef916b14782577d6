//! Sequential thresholded least squares (STLSQ) and the identified models it
//! produces.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::exec::Parallelism;
use crate::grid_model::EffectiveNetwork;
use crate::library::{CandidateLibrary, Coordinates, FunctionLibrary, LibrarySpec, Term};
use crate::ode::{integrate, IntegrationConfig, Trajectory};
use crate::reduction::{self, ReducedBasis};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionConfig {
    /// Coefficients with magnitude below this are pruned.
    pub lambda: f64,
    pub max_iters: usize,
    /// Solve on unit-norm columns and rescale the coefficients afterwards.
    pub normalize_columns: bool,
    /// Singular values below `rank_tolerance * sigma_max` are treated as zero.
    pub rank_tolerance: f64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            lambda: 0.001,
            max_iters: 10,
            normalize_columns: true,
            rank_tolerance: 1e-12,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(self.rank_tolerance >= 0.0 && self.rank_tolerance < 1.0) {
            return Err(Error::Config(format!(
                "rank_tolerance must be in [0, 1), got {}",
                self.rank_tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitDiagnostics {
    /// Least-squares passes per coordinate.
    pub iterations: Vec<usize>,
    /// Coordinates whose active set emptied out.
    pub empty_coordinates: Vec<usize>,
    /// Coordinates that hit `max_iters` before the active set settled.
    pub unconverged: Vec<usize>,
}

/// A sparse model `dx/dt = Xi^T theta(x)`; latent when a basis is attached.
#[derive(Debug, Clone)]
pub struct SparseModel {
    xi: DMatrix<f64>,
    library: FunctionLibrary,
    lambda: f64,
    basis: Option<ReducedBasis>,
    diagnostics: FitDiagnostics,
    active_terms: Vec<usize>,
}

fn active_terms(xi: &DMatrix<f64>) -> Vec<usize> {
    (0..xi.nrows())
        .filter(|&j| xi.row(j).iter().any(|&v| v != 0.0))
        .collect()
}

impl SparseModel {
    /// Wraps a coefficient matrix (`p x d`) for `library`.
    pub fn from_coefficients(
        xi: DMatrix<f64>,
        library: FunctionLibrary,
        lambda: f64,
    ) -> Result<Self> {
        check_dim("coefficient rows", library.len(), xi.nrows())?;
        check_dim("coefficient columns", library.dim(), xi.ncols())?;
        if !xi.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("coefficients"));
        }
        Ok(Self {
            active_terms: active_terms(&xi),
            xi,
            library,
            lambda,
            basis: None,
            diagnostics: FitDiagnostics::default(),
        })
    }

    /// Attaches the basis the latent coordinates live in.
    pub fn with_basis(mut self, basis: ReducedBasis) -> Result<Self> {
        check_dim(
            "basis rank vs model dimension",
            self.coordinate_dim(),
            basis.rank(),
        )?;
        self.basis = Some(basis);
        Ok(self)
    }

    pub fn xi(&self) -> &DMatrix<f64> {
        &self.xi
    }

    pub fn library(&self) -> &FunctionLibrary {
        &self.library
    }

    pub fn library_spec(&self) -> &LibrarySpec {
        self.library.spec()
    }

    pub fn descriptors(&self) -> Vec<String> {
        self.library.descriptors()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn basis(&self) -> Option<&ReducedBasis> {
        self.basis.as_ref()
    }

    pub fn coordinate_dim(&self) -> usize {
        self.library.dim()
    }

    pub fn diagnostics(&self) -> &FitDiagnostics {
        &self.diagnostics
    }

    pub fn nonzero_count(&self) -> usize {
        self.xi.iter().filter(|&&v| v != 0.0).count()
    }

    /// `support()[k][j]` is true when term `j` is active in equation `k`.
    pub fn support(&self) -> Vec<Vec<bool>> {
        (0..self.xi.ncols())
            .map(|k| self.xi.column(k).iter().map(|&v| v != 0.0).collect())
            .collect()
    }

    /// Row index of the given term, if the library contains it.
    pub fn term_index(&self, term: &Term) -> Option<usize> {
        self.library.terms().iter().position(|t| t == term)
    }

    /// No dimension checks; `theta` is scratch of library length.
    pub fn derivative_into(&self, state: &[f64], theta: &mut [f64], out: &mut [f64]) {
        let f = self.library.spec().trig_frequency;
        let terms = self.library.terms();
        out.fill(0.0);
        for &j in &self.active_terms {
            theta[j] = match &terms[j] {
                Term::Constant => 1.0,
                Term::Monomial(idx) => idx.iter().map(|&i| state[i]).product(),
                Term::Sin(i) => (f * state[*i]).sin(),
                Term::Cos(i) => (f * state[*i]).cos(),
                Term::SinDiff(i, k) => (f * (state[*i] - state[*k])).sin(),
                Term::CosDiff(i, k) => (f * (state[*i] - state[*k])).cos(),
            };
        }
        for (k, o) in out.iter_mut().enumerate() {
            let col = self.xi.column(k);
            *o = self.active_terms.iter().map(|&j| theta[j] * col[j]).sum();
        }
    }

    pub fn predict_derivative(&self, state: &[f64]) -> Result<Vec<f64>> {
        check_dim("model state dimension", self.coordinate_dim(), state.len())?;
        let mut theta = vec![0.0; self.library.len()];
        let mut out = vec![0.0; self.coordinate_dim()];
        self.derivative_into(state, &mut theta, &mut out);
        Ok(out)
    }
}

fn solve_group(
    theta: &DMatrix<f64>,
    scale: &[f64],
    active: &[usize],
    rhs: &DMatrix<f64>,
    rank_tolerance: f64,
) -> Result<DMatrix<f64>> {
    let m = theta.nrows();
    let sub = DMatrix::from_fn(m, active.len(), |k, a| {
        theta[(k, active[a])] / scale[active[a]]
    });
    let svd = sub.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (rank_tolerance * smax).max(f64::MIN_POSITIVE);
    let mut w = svd
        .solve(rhs, eps)
        .map_err(|e| Error::Numerical(format!("least squares: {e}")))?;
    for (a, mut row) in w.row_iter_mut().enumerate() {
        row /= scale[active[a]];
    }
    Ok(w)
}

/// Runs STLSQ independently for every column of `derivatives` (`m x d`).
///
/// Coordinates that share an active set share one factorization per pass.
pub fn fit(
    lib: &CandidateLibrary,
    derivatives: &DMatrix<f64>,
    cfg: &RegressionConfig,
) -> Result<SparseModel> {
    fit_with(lib, derivatives, cfg, None, Parallelism::default())
}

/// [`fit`] with an optional initial support (`initial[k][j]`) and an
/// explicit execution mode.
pub fn fit_with(
    lib: &CandidateLibrary,
    derivatives: &DMatrix<f64>,
    cfg: &RegressionConfig,
    initial: Option<&[Vec<bool>]>,
    par: Parallelism,
) -> Result<SparseModel> {
    cfg.validate()?;
    let (m, p) = lib.theta.shape();
    check_dim("derivative rows vs library rows", m, derivatives.nrows())?;
    let d = derivatives.ncols();
    check_dim(
        "library dimension vs derivative columns",
        lib.layout.dim(),
        d,
    )?;
    if !lib.theta.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("library matrix"));
    }
    if !derivatives.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("derivative matrix"));
    }

    let scale: Vec<f64> = if cfg.normalize_columns {
        lib.column_norms
            .iter()
            .map(|&n| if n > 0.0 { n } else { 1.0 })
            .collect()
    } else {
        vec![1.0; p]
    };
    let usable: Vec<bool> = lib.column_norms.iter().map(|&n| n > 0.0).collect();

    let mut active: Vec<Vec<usize>> = (0..d)
        .map(|k| {
            (0..p)
                .filter(|&j| usable[j] && initial.is_none_or(|s| s[k][j]))
                .collect()
        })
        .collect();
    let mut xi = DMatrix::zeros(p, d);
    let mut done = vec![false; d];
    let mut diag = FitDiagnostics {
        iterations: vec![0; d],
        ..Default::default()
    };

    for _ in 0..cfg.max_iters {
        let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
        for k in 0..d {
            if !done[k] {
                if active[k].is_empty() {
                    done[k] = true;
                } else {
                    groups.entry(active[k].clone()).or_default().push(k);
                }
            }
        }
        if groups.is_empty() {
            break;
        }
        let groups: Vec<(Vec<usize>, Vec<usize>)> = groups.into_iter().collect();
        let solutions = par.map_range(groups.len(), |g| {
            let (cols, coords) = &groups[g];
            let rhs = DMatrix::from_fn(m, coords.len(), |i, c| derivatives[(i, coords[c])]);
            solve_group(&lib.theta, &scale, cols, &rhs, cfg.rank_tolerance)
        });
        for ((cols, coords), sol) in groups.iter().zip(solutions) {
            let sol = sol?;
            for (c, &k) in coords.iter().enumerate() {
                diag.iterations[k] += 1;
                xi.column_mut(k).fill(0.0);
                for (a, &j) in cols.iter().enumerate() {
                    xi[(j, k)] = sol[(a, c)];
                }
                let kept: Vec<usize> = cols
                    .iter()
                    .copied()
                    .filter(|&j| xi[(j, k)].abs() >= cfg.lambda)
                    .collect();
                if kept.len() == cols.len() {
                    done[k] = true;
                } else {
                    active[k] = kept;
                }
            }
        }
    }

    // enforce the threshold on anything left mid-iteration
    for k in 0..d {
        if !done[k] {
            diag.unconverged.push(k);
        }
        for j in 0..p {
            if xi[(j, k)].abs() < cfg.lambda {
                xi[(j, k)] = 0.0;
            }
        }
        if xi.column(k).iter().all(|&v| v == 0.0) && derivatives.column(k).iter().any(|&v| v != 0.0)
        {
            diag.empty_coordinates.push(k);
            warn!("coordinate {k}: every candidate was pruned");
        }
    }

    let mut model = SparseModel::from_coefficients(xi, lib.layout.clone(), cfg.lambda)?;
    model.diagnostics = diag;
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct ModelSimulation {
    /// Trajectory in the model's own coordinates.
    pub coordinates: Trajectory,
    /// `Phi Z(t)` for latent models.
    pub full_state: Option<DMatrix<f64>>,
}

/// Integrates the identified model from `z0`; latent models also return the
/// back-projected full state.
pub fn simulate_model(
    model: &SparseModel,
    z0: &[f64],
    cfg: &IntegrationConfig,
) -> Result<ModelSimulation> {
    check_dim("initial condition", model.coordinate_dim(), z0.len())?;
    let mut theta = vec![0.0; model.library.len()];
    let coordinates = integrate(
        |_, z: &[f64], dz: &mut [f64]| model.derivative_into(z, &mut theta, dz),
        z0,
        cfg,
    )?;
    let full_state = model
        .basis
        .as_ref()
        .map(|b| reduction::reconstruct(&coordinates.states, b))
        .transpose()?;
    Ok(ModelSimulation {
        coordinates,
        full_state,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InertiaRoute {
    /// From the constant term and the known injection `F_i`.
    Injection,
    /// From the `sin(delta_i - delta_j)` term of the strongest neighbour.
    Coupling { neighbor: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum HdEstimate {
    Recovered {
        h: f64,
        d: f64,
        route: InertiaRoute,
        /// False when the damping term was pruned and `d` is reported as 0.
        damping_in_support: bool,
    },
    Unrecoverable {
        reason: String,
    },
}

impl HdEstimate {
    pub fn h(&self) -> Option<f64> {
        match self {
            HdEstimate::Recovered { h, .. } => Some(*h),
            _ => None,
        }
    }

    pub fn d(&self) -> Option<f64> {
        match self {
            HdEstimate::Recovered { d, .. } => Some(*d),
            _ => None,
        }
    }
}

/// Reads per-generator inertia and damping off a full-state model, given
/// the known `F`, `K`, `gamma` and `omega_R` of `net` (its `H` and `D` are
/// not used).
///
/// Equation `omega_i` carries the constant `omega_R F_i / (2 H_i)`, the
/// linear term `-D_i / (2 H_i) omega_i`, and the trig term
/// `-omega_R K_ij cos(gamma_ij) / (2 H_i) sin(delta_i - delta_j)`.
pub fn estimate_hd(model: &SparseModel, net: &EffectiveNetwork) -> Result<Vec<HdEstimate>> {
    if model.library.kind() != Coordinates::FullState || model.basis.is_some() {
        return Err(Error::Config(
            "inertia/damping extraction needs a full-state model".into(),
        ));
    }
    let n = net.n_g();
    check_dim("model dimension vs 2 n_g", 2 * n, model.coordinate_dim())?;
    let wr = net.omega_r();
    let constant = model.term_index(&Term::Constant);

    let estimates = (0..n)
        .map(|i| {
            let eq = n + i;
            let coef = |row: Option<usize>| row.map(|r| model.xi[(r, eq)]).unwrap_or(0.0);
            let c0 = coef(constant);
            let f_i = net.f()[i];
            let (h, route) = if c0 != 0.0 && f_i != 0.0 {
                (wr * f_i / (2.0 * c0), InertiaRoute::Injection)
            } else {
                let neighbor = (0..n)
                    .filter(|&j| j != i && net.k()[(i, j)] > 0.0)
                    .max_by(|&a, &b| net.k()[(i, a)].total_cmp(&net.k()[(i, b)]).then(b.cmp(&a)));
                let Some(j) = neighbor else {
                    return HdEstimate::Unrecoverable {
                        reason: "no injection term and no coupled neighbour".into(),
                    };
                };
                let s = coef(model.term_index(&Term::SinDiff(i.min(j), i.max(j))));
                let kc = net.k()[(i, j)] * net.gamma()[(i, j)].cos();
                if s == 0.0 || kc == 0.0 {
                    return HdEstimate::Unrecoverable {
                        reason: format!("coupling term to generator {j} not in support"),
                    };
                }
                (
                    wr * kc / (2.0 * s.abs()),
                    InertiaRoute::Coupling { neighbor: j },
                )
            };
            if !(h.is_finite() && h > 0.0) {
                return HdEstimate::Unrecoverable {
                    reason: format!("implied inertia {h} is not positive"),
                };
            }
            let c_omega = coef(model.term_index(&Term::Monomial(vec![n + i])));
            HdEstimate::Recovered {
                h,
                d: -2.0 * h * c_omega,
                route,
                damping_in_support: c_omega != 0.0,
            }
        })
        .collect();
    Ok(estimates)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisFiles {
    /// `Phi_r` columns, relative to the model file.
    pub phi: String,
    /// Singular-value spectrum, relative to the model file.
    pub spectrum: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    coordinates: Coordinates,
    coordinate_dim: usize,
    library_spec: LibrarySpec,
    descriptors: Vec<String>,
    lambda: f64,
    shape: (usize, usize),
    coefficients: Vec<(usize, usize, f64)>,
    basis: Option<BasisFiles>,
}

/// Writes `<stem>.json` into `dir`, plus `<stem>_basis.csv` and
/// `<stem>_spectrum.csv` for latent models.
pub fn save_model(model: &SparseModel, dir: &Path, stem: &str) -> Result<()> {
    let basis = match &model.basis {
        Some(b) => {
            let files = BasisFiles {
                phi: format!("{stem}_basis.csv"),
                spectrum: format!("{stem}_spectrum.csv"),
            };
            reduction::write_basis_csv(&dir.join(&files.phi), b)?;
            reduction::write_spectrum_csv(&dir.join(&files.spectrum), b.singular_values())?;
            Some(files)
        }
        None => None,
    };
    let (p, d) = model.xi.shape();
    let coefficients = (0..p)
        .flat_map(|j| (0..d).map(move |k| (j, k)))
        .map(|(j, k)| (j, k, model.xi[(j, k)]))
        .collect();
    let file = ModelFile {
        coordinates: model.library.kind(),
        coordinate_dim: model.coordinate_dim(),
        library_spec: *model.library.spec(),
        descriptors: model.descriptors(),
        lambda: model.lambda,
        shape: (p, d),
        coefficients,
        basis,
    };
    let path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&file).expect("model serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_model(path: &Path) -> Result<SparseModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
    let library = FunctionLibrary::new(file.library_spec, file.coordinates, file.coordinate_dim)?;
    if library.descriptors() != file.descriptors {
        return Err(Error::parse(
            path,
            "descriptors do not match the library specification",
        ));
    }
    if file.shape != (library.len(), library.dim()) {
        return Err(Error::parse(
            path,
            format!("shape {:?} does not match the library", file.shape),
        ));
    }
    let mut xi = DMatrix::zeros(file.shape.0, file.shape.1);
    for &(j, k, v) in &file.coefficients {
        if j >= file.shape.0 || k >= file.shape.1 {
            return Err(Error::parse(
                path,
                format!("coefficient ({j}, {k}) out of range"),
            ));
        }
        xi[(j, k)] = v;
    }
    let model = SparseModel::from_coefficients(xi, library, file.lambda)?;
    match file.basis {
        Some(files) => {
            let dir = path.parent().unwrap_or(Path::new("."));
            let sigma = reduction::read_spectrum_csv(&dir.join(&files.spectrum))?;
            let basis = reduction::read_basis_csv(&dir.join(&files.phi), sigma)?;
            model.with_basis(basis)
        }
        None => Ok(model),
    }
}
