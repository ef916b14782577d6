//! Effective-network swing-equation model.
//!
//! Each generator `i` obeys
//!
//! ```text
//! d(delta_i)/dt = omega_i
//! d(omega_i)/dt = omega_R / (2 H_i) * (F_i - D_i / omega_R * omega_i
//!                 - sum_{j != i} K_ij sin(delta_i - delta_j - gamma_ij))
//! ```
//!
//! where `omega_i` is the deviation from the reference frequency `omega_R`.
//! States are stacked as `[delta_1..delta_n, omega_1..omega_n]`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const DEFAULT_OMEGA_R: f64 = 2.0 * PI * 60.0;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Link {
    j: usize,
    k: f64,
    gamma: f64,
}

/// Physical parameters of a Kron-reduced network of `n_g` coupled generators.
///
/// Coupling is stored densely; a neighbor list is derived at construction so
/// the vector field costs O(edges).
#[derive(Debug, Clone)]
pub struct EffectiveNetwork {
    omega_r: f64,
    h: Vec<f64>,
    d: Vec<f64>,
    f: Vec<f64>,
    k: DMatrix<f64>,
    gamma: DMatrix<f64>,
    links: Vec<Vec<Link>>,
}

impl PartialEq for EffectiveNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.omega_r.to_bits() == other.omega_r.to_bits()
            && bits_eq(&self.h, &other.h)
            && bits_eq(&self.d, &other.d)
            && bits_eq(&self.f, &other.f)
            && bits_eq(self.k.as_slice(), other.k.as_slice())
            && bits_eq(self.gamma.as_slice(), other.gamma.as_slice())
    }
}

fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

impl EffectiveNetwork {
    /// Validates every invariant. `k` and `gamma` are `n_g x n_g`; their
    /// diagonals are ignored and zeroed. An entry `(i, j)` belongs to the
    /// coupling pattern iff `K_ij > 0`, and `gamma_ij` must be zero outside it.
    pub fn new(
        omega_r: f64,
        h: Vec<f64>,
        d: Vec<f64>,
        f: Vec<f64>,
        mut k: DMatrix<f64>,
        mut gamma: DMatrix<f64>,
    ) -> Result<Self> {
        let n = h.len();
        if n == 0 {
            return Err(Error::invalid(
                "n_g",
                "network needs at least one generator",
            ));
        }
        if !(omega_r.is_finite() && omega_r > 0.0) {
            return Err(Error::invalid(
                "omega_R",
                format!("must be positive, got {omega_r}"),
            ));
        }
        check_dim("D length", n, d.len())?;
        check_dim("F length", n, f.len())?;
        check_dim("K rows", n, k.nrows())?;
        check_dim("K columns", n, k.ncols())?;
        check_dim("gamma rows", n, gamma.nrows())?;
        check_dim("gamma columns", n, gamma.ncols())?;
        for (i, &hi) in h.iter().enumerate() {
            if !(hi.is_finite() && hi > 0.0) {
                return Err(Error::invalid(
                    format!("H[{i}]"),
                    format!("must be > 0, got {hi}"),
                ));
            }
        }
        for (i, &di) in d.iter().enumerate() {
            if !(di.is_finite() && di >= 0.0) {
                return Err(Error::invalid(
                    format!("D[{i}]"),
                    format!("must be >= 0, got {di}"),
                ));
            }
        }
        for (i, &fi) in f.iter().enumerate() {
            if !fi.is_finite() {
                return Err(Error::invalid(format!("F[{i}]"), "must be finite"));
            }
        }
        let mut links = vec![Vec::new(); n];
        for i in 0..n {
            k[(i, i)] = 0.0;
            gamma[(i, i)] = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (kij, gij) = (k[(i, j)], gamma[(i, j)]);
                if !(kij.is_finite() && kij >= 0.0) {
                    return Err(Error::invalid(
                        format!("K[{i}][{j}]"),
                        format!("must be finite and >= 0, got {kij}"),
                    ));
                }
                if !gij.is_finite() {
                    return Err(Error::invalid(format!("gamma[{i}][{j}]"), "must be finite"));
                }
                if kij == 0.0 && gij != 0.0 {
                    return Err(Error::invalid(
                        format!("gamma[{i}][{j}]"),
                        "sparsity pattern differs from K (phase shift on an absent coupling)",
                    ));
                }
                if kij > 0.0 {
                    links[i].push(Link {
                        j,
                        k: kij,
                        gamma: gij,
                    });
                }
            }
        }
        Ok(Self {
            omega_r,
            h,
            d,
            f,
            k,
            gamma,
            links,
        })
    }

    pub fn n_g(&self) -> usize {
        self.h.len()
    }

    /// Length of the stacked state `[delta; omega]`.
    pub fn state_dim(&self) -> usize {
        2 * self.n_g()
    }

    pub fn omega_r(&self) -> f64 {
        self.omega_r
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    /// Number of directed couplings `(i, j)` with `K_ij > 0`.
    pub fn coupling_count(&self) -> usize {
        self.links.iter().map(Vec::len).sum()
    }

    /// Writes the derivative of the stacked state `x` into `dx`. Both slices
    /// must have length `2 n_g`; no checks are made, use [`vector_field`]
    /// for a validated call.
    pub fn rhs(&self, x: &[f64], dx: &mut [f64]) {
        let n = self.n_g();
        let (delta, omega) = x.split_at(n);
        let (ddelta, domega) = dx.split_at_mut(n);
        ddelta.copy_from_slice(omega);
        for i in 0..n {
            let mut coupling = 0.0;
            for link in &self.links[i] {
                coupling += link.k * (delta[i] - delta[link.j] - link.gamma).sin();
            }
            let drive = self.f[i] - self.d[i] / self.omega_r * omega[i] - coupling;
            domega[i] = self.omega_r / (2.0 * self.h[i]) * drive;
        }
    }

    /// Electrical power drawn by generator `i` at angles `delta`.
    fn coupling_power(&self, i: usize, delta: &[f64]) -> f64 {
        self.links[i]
            .iter()
            .map(|l| l.k * (delta[i] - delta[l.j] - l.gamma).sin())
            .sum()
    }

    /// Finds a frequency-synchronous operating point: angles with
    /// `delta_0 = 0` (then shifted to zero mean) and a common frequency
    /// deviation `omega_s` such that every `d(omega_i)/dt = 0`.
    ///
    /// Damped Newton iteration from `delta = 0, omega_s = 0`.
    pub fn find_equilibrium(&self) -> Result<GridState> {
        let n = self.n_g();
        // unknowns: delta_1..delta_{n-1}, omega_s
        let mut delta = vec![0.0; n];
        let mut omega_s = 0.0;
        let residual = |delta: &[f64], omega_s: f64| -> DVector<f64> {
            DVector::from_fn(n, |i, _| {
                self.f[i] - self.d[i] / self.omega_r * omega_s - self.coupling_power(i, delta)
            })
        };
        let mut g = residual(&delta, omega_s);
        let scale = 1.0 + self.f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for _ in 0..100 {
            if g.amax() <= 1e-13 * scale {
                break;
            }
            let mut jac = DMatrix::zeros(n, n);
            for i in 0..n {
                for l in &self.links[i] {
                    let c = l.k * (delta[i] - delta[l.j] - l.gamma).cos();
                    jac[(i, i)] -= c;
                    jac[(i, l.j)] += c;
                }
            }
            // column 0 (delta_0 is pinned) is replaced by d/d(omega_s)
            for i in 0..n {
                jac[(i, 0)] = -self.d[i] / self.omega_r;
            }
            let rhs = -&g;
            let step = match jac.clone().lu().solve(&rhs) {
                Some(s) if s.iter().all(|v| v.is_finite()) => s,
                _ => jac
                    .svd(true, true)
                    .solve(&rhs, 1e-12)
                    .map_err(|e| Error::Numerical(format!("equilibrium solve: {e}")))?,
            };
            let g_norm = g.norm();
            let mut alpha = 1.0;
            loop {
                let mut trial = delta.clone();
                for i in 1..n {
                    trial[i] += alpha * step[i];
                }
                let trial_omega = omega_s + alpha * step[0];
                let g_trial = residual(&trial, trial_omega);
                if g_trial.norm() < g_norm || alpha < 1e-6 {
                    delta = trial;
                    omega_s = trial_omega;
                    g = g_trial;
                    break;
                }
                alpha *= 0.5;
            }
        }
        if g.amax().is_nan() || g.amax() > 1e-9 * scale {
            return Err(Error::Numerical(format!(
                "no synchronous equilibrium found (residual {:.3e})",
                g.amax()
            )));
        }
        let mean = delta.iter().sum::<f64>() / n as f64;
        delta.iter_mut().for_each(|v| *v -= mean);
        Ok(GridState {
            delta,
            omega: vec![omega_s; n],
        })
    }
}

/// Rotor angles and frequency deviations of every generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub delta: Vec<f64>,
    pub omega: Vec<f64>,
}

impl GridState {
    pub fn zeros(n_g: usize) -> Self {
        Self {
            delta: vec![0.0; n_g],
            omega: vec![0.0; n_g],
        }
    }

    /// Splits a stacked `[delta; omega]` vector.
    pub fn from_stacked(x: &[f64]) -> Result<Self> {
        if !x.len().is_multiple_of(2) {
            return Err(Error::Dimension {
                context: "stacked state (must be even)",
                expected: x.len() + 1,
                actual: x.len(),
            });
        }
        let (delta, omega) = x.split_at(x.len() / 2);
        Ok(Self {
            delta: delta.to_vec(),
            omega: omega.to_vec(),
        })
    }

    pub fn to_stacked(&self) -> Vec<f64> {
        let mut x = self.delta.clone();
        x.extend_from_slice(&self.omega);
        x
    }

    pub fn n_g(&self) -> usize {
        self.delta.len()
    }
}

/// Evaluates the swing-equation right-hand side. The returned state holds
/// `(d delta/dt, d omega/dt)`.
pub fn vector_field(net: &EffectiveNetwork, state: &GridState) -> Result<GridState> {
    check_dim("state delta length", net.n_g(), state.delta.len())?;
    check_dim("state omega length", net.n_g(), state.omega.len())?;
    if !state
        .delta
        .iter()
        .chain(&state.omega)
        .all(|v| v.is_finite())
    {
        return Err(Error::NonFinite("grid state"));
    }
    let x = state.to_stacked();
    let mut dx = vec![0.0; x.len()];
    net.rhs(&x, &mut dx);
    if !dx.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("vector field output"));
    }
    GridState::from_stacked(&dx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Topology {
    /// Each generator coupled to its two ring neighbours.
    Ring,
    /// Random spanning tree plus independent edges with the given probability.
    RandomSparse { density: f64 },
}

/// Closed sampling intervals `[lo, hi]` for synthetic networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParameterRanges {
    pub h: (f64, f64),
    pub d: (f64, f64),
    pub k: (f64, f64),
    pub gamma: (f64, f64),
    /// Target equilibrium angles.
    pub delta_star: (f64, f64),
    pub omega_r: f64,
}

impl Default for ParameterRanges {
    fn default() -> Self {
        Self {
            h: (2.0, 6.0),
            d: (0.5, 2.0),
            k: (0.5, 2.0),
            gamma: (0.0, 0.3),
            delta_star: (-0.5, 0.5),
            omega_r: DEFAULT_OMEGA_R,
        }
    }
}

impl ParameterRanges {
    fn validate(&self) -> Result<()> {
        let named = [
            ("H", self.h),
            ("D", self.d),
            ("K", self.k),
            ("gamma", self.gamma),
            ("delta_star", self.delta_star),
        ];
        for (name, (lo, hi)) in named {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!(
                    "range for {name} is infeasible: [{lo}, {hi}]"
                )));
            }
        }
        if self.h.0 <= 0.0 {
            return Err(Error::Config(format!(
                "H lower bound must be > 0, got {}",
                self.h.0
            )));
        }
        if self.d.0 < 0.0 || self.k.0 < 0.0 {
            return Err(Error::Config("D and K lower bounds must be >= 0".into()));
        }
        if !(self.omega_r.is_finite() && self.omega_r > 0.0) {
            return Err(Error::Config(format!(
                "omega_R must be > 0, got {}",
                self.omega_r
            )));
        }
        Ok(())
    }
}

/// A generated network together with the operating point it was balanced on.
#[derive(Debug, Clone)]
pub struct SyntheticNetwork {
    pub network: EffectiveNetwork,
    pub equilibrium: GridState,
}

fn sample(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws a random network and balances `F` so that `(delta*, 0)` is an
/// exact equilibrium: `F_i = sum_j K_ij sin(delta*_i - delta*_j - gamma_ij)`.
///
/// Couplings and phase shifts are symmetric.
pub fn generate_synthetic(
    n_g: usize,
    topology: Topology,
    seed: u64,
    ranges: &ParameterRanges,
) -> Result<SyntheticNetwork> {
    if n_g == 0 {
        return Err(Error::Config("n_g must be >= 1".into()));
    }
    if let Topology::RandomSparse { density } = topology {
        if !(density > 0.0 && density <= 1.0) {
            return Err(Error::Config(format!(
                "density must be in (0, 1], got {density}"
            )));
        }
    }
    ranges.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h: Vec<f64> = (0..n_g).map(|_| sample(&mut rng, ranges.h)).collect();
    let d: Vec<f64> = (0..n_g).map(|_| sample(&mut rng, ranges.d)).collect();
    let delta_star: Vec<f64> = (0..n_g)
        .map(|_| sample(&mut rng, ranges.delta_star))
        .collect();

    let mut edges = Vec::new();
    match topology {
        Topology::Ring => {
            if n_g == 2 {
                edges.push((0, 1));
            } else if n_g > 2 {
                edges.extend((0..n_g).map(|i| (i.min((i + 1) % n_g), i.max((i + 1) % n_g))));
            }
        }
        Topology::RandomSparse { density } => {
            let mut adjacent = vec![false; n_g * n_g];
            for i in 1..n_g {
                let j = rng.random_range(0..i);
                adjacent[j * n_g + i] = true;
            }
            for i in 0..n_g {
                for j in i + 1..n_g {
                    if rng.random::<f64>() < density {
                        adjacent[i * n_g + j] = true;
                    }
                }
            }
            for i in 0..n_g {
                for j in i + 1..n_g {
                    if adjacent[i * n_g + j] {
                        edges.push((i, j));
                    }
                }
            }
        }
    }

    let mut k = DMatrix::zeros(n_g, n_g);
    let mut gamma = DMatrix::zeros(n_g, n_g);
    for &(i, j) in &edges {
        let kij = sample(&mut rng, ranges.k);
        let gij = sample(&mut rng, ranges.gamma);
        if kij > 0.0 {
            k[(i, j)] = kij;
            k[(j, i)] = kij;
            gamma[(i, j)] = gij;
            gamma[(j, i)] = gij;
        }
    }

    let f: Vec<f64> = (0..n_g)
        .map(|i| {
            (0..n_g)
                .filter(|&j| j != i && k[(i, j)] > 0.0)
                .map(|j| k[(i, j)] * (delta_star[i] - delta_star[j] - gamma[(i, j)]).sin())
                .sum()
        })
        .collect();

    let network = EffectiveNetwork::new(ranges.omega_r, h, d, f, k, gamma)?;
    Ok(SyntheticNetwork {
        network,
        equilibrium: GridState {
            delta: delta_star,
            omega: vec![0.0; n_g],
        },
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CouplingEntry {
    i: usize,
    j: usize,
    #[serde(rename = "K")]
    k: f64,
    gamma: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    n_g: usize,
    #[serde(rename = "omega_R")]
    omega_r: f64,
    #[serde(rename = "H")]
    h: Vec<f64>,
    #[serde(rename = "D")]
    d: Vec<f64>,
    #[serde(rename = "F")]
    f: Vec<f64>,
    coupling: Vec<CouplingEntry>,
}

fn check_len(field: &str, n: usize, v: &[f64]) -> Result<()> {
    if v.len() != n {
        return Err(Error::invalid(
            field,
            format!("expected {n} entries, got {}", v.len()),
        ));
    }
    Ok(())
}

impl NetworkFile {
    fn into_network(self) -> Result<EffectiveNetwork> {
        let n = self.n_g;
        check_len("H", n, &self.h)?;
        check_len("D", n, &self.d)?;
        check_len("F", n, &self.f)?;
        let mut k = DMatrix::zeros(n, n);
        let mut gamma = DMatrix::zeros(n, n);
        let mut seen = vec![false; n * n];
        for (idx, c) in self.coupling.iter().enumerate() {
            let field = format!("coupling[{idx}]");
            if c.i >= n || c.j >= n {
                return Err(Error::invalid(
                    field,
                    format!("index out of range for n_g = {n}"),
                ));
            }
            if c.i == c.j {
                return Err(Error::invalid(field, "self-coupling (i == j)"));
            }
            if std::mem::replace(&mut seen[c.i * n + c.j], true) {
                return Err(Error::invalid(
                    field,
                    format!("duplicate pair ({}, {})", c.i, c.j),
                ));
            }
            if c.k == 0.0 && c.gamma != 0.0 {
                return Err(Error::invalid(
                    field,
                    "K/gamma sparsity mismatch: gamma set on a zero coupling",
                ));
            }
            k[(c.i, c.j)] = c.k;
            gamma[(c.i, c.j)] = c.gamma;
        }
        EffectiveNetwork::new(self.omega_r, self.h, self.d, self.f, k, gamma)
    }

    fn from_network(net: &EffectiveNetwork) -> Self {
        let n = net.n_g();
        let mut coupling = Vec::new();
        for i in 0..n {
            for l in &net.links[i] {
                coupling.push(CouplingEntry {
                    i,
                    j: l.j,
                    k: l.k,
                    gamma: l.gamma,
                });
            }
        }
        Self {
            n_g: n,
            omega_r: net.omega_r,
            h: net.h.clone(),
            d: net.d.clone(),
            f: net.f.clone(),
            coupling,
        }
    }
}

pub fn network_to_json(net: &EffectiveNetwork) -> String {
    serde_json::to_string_pretty(&NetworkFile::from_network(net)).expect("network serializes")
}

pub fn network_from_json(text: &str) -> Result<EffectiveNetwork> {
    let file: NetworkFile =
        serde_json::from_str(text).map_err(|e| Error::invalid("network file", e.to_string()))?;
    file.into_network()
}

pub fn load_network(path: impl AsRef<Path>) -> Result<EffectiveNetwork> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: NetworkFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    file.into_network()
}

pub fn save_network(net: &EffectiveNetwork, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, network_to_json(net) + "\n").map_err(|e| Error::io(path, e))
}
