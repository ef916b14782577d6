//! Candidate-function libraries over full-state or latent coordinates.
//!
//! Column order is fixed: the constant, degree-1 terms in coordinate order,
//! higher-degree monomials graded and lexicographic within each degree
//! (`x1², x1·x2, .., x2², ..`), then all sines followed by all cosines.

use serde::{Deserialize, Serialize};

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::exec::Parallelism;

pub const MAX_POLY_ORDER: usize = 5;
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrigTerms {
    #[default]
    None,
    /// `sin(f x_i)` and `cos(f x_i)`.
    PerCoordinate,
    /// `sin(f (x_i - x_j))` and `cos(f (x_i - x_j))` for `i < j`.
    PairwiseDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LibrarySpec {
    pub poly_order: usize,
    pub include_constant: bool,
    pub trig: TrigTerms,
    pub trig_frequency: f64,
    /// Refuse to allocate a library matrix larger than this many bytes.
    pub memory_budget_bytes: usize,
}

impl Default for LibrarySpec {
    fn default() -> Self {
        Self {
            poly_order: 1,
            include_constant: true,
            trig: TrigTerms::None,
            trig_frequency: 1.0,
            memory_budget_bytes: DEFAULT_MEMORY_BUDGET,
        }
    }
}

impl LibrarySpec {
    pub fn validate(&self) -> Result<()> {
        if self.poly_order > MAX_POLY_ORDER {
            return Err(Error::Config(format!(
                "poly_order {} exceeds the limit of {MAX_POLY_ORDER}",
                self.poly_order
            )));
        }
        if !self.include_constant && self.poly_order == 0 && self.trig == TrigTerms::None {
            return Err(Error::Config("library has no terms enabled".into()));
        }
        if self.trig != TrigTerms::None
            && !(self.trig_frequency.is_finite() && self.trig_frequency != 0.0)
        {
            return Err(Error::Config(format!(
                "trig_frequency must be finite and nonzero, got {}",
                self.trig_frequency
            )));
        }
        Ok(())
    }
}

/// What the coordinates are; decides labels and where trig terms apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinates {
    /// Labelled `x1..xd`, trig on every coordinate.
    Generic,
    /// Labelled `z1..zd`, trig on every coordinate.
    Latent,
    /// Stacked `[delta; omega]` labelled `x1..xd`, trig only on the first
    /// half (the angles).
    FullState,
}

impl Coordinates {
    fn prefix(self) -> &'static str {
        match self {
            Coordinates::Latent => "z",
            _ => "x",
        }
    }

    fn trig_dim(self, d: usize) -> usize {
        match self {
            Coordinates::FullState => d / 2,
            _ => d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Constant,
    /// Nondecreasing coordinate indices, one per factor.
    Monomial(Vec<usize>),
    Sin(usize),
    Cos(usize),
    SinDiff(usize, usize),
    CosDiff(usize, usize),
}

fn superscript(p: usize) -> &'static str {
    ["", "", "²", "³", "⁴", "⁵"][p]
}

fn fmt_freq(f: f64, arg: String, wrap: bool) -> String {
    if f == 1.0 {
        arg
    } else if wrap {
        format!("{f}·({arg})")
    } else {
        format!("{f}·{arg}")
    }
}

impl Term {
    fn label(&self, prefix: &str, freq: f64) -> String {
        let var = |i: usize| format!("{prefix}{}", i + 1);
        match self {
            Term::Constant => "1".into(),
            Term::Monomial(idx) => {
                let mut parts = Vec::new();
                let mut k = 0;
                while k < idx.len() {
                    let mut e = 1;
                    while k + e < idx.len() && idx[k + e] == idx[k] {
                        e += 1;
                    }
                    parts.push(format!("{}{}", var(idx[k]), superscript(e)));
                    k += e;
                }
                parts.join("·")
            }
            Term::Sin(i) => format!("sin({})", fmt_freq(freq, var(*i), false)),
            Term::Cos(i) => format!("cos({})", fmt_freq(freq, var(*i), false)),
            Term::SinDiff(i, j) => format!(
                "sin({})",
                fmt_freq(freq, format!("{}−{}", var(*i), var(*j)), true)
            ),
            Term::CosDiff(i, j) => format!(
                "cos({})",
                fmt_freq(freq, format!("{}−{}", var(*i), var(*j)), true)
            ),
        }
    }

    #[inline]
    fn eval(&self, x: &[f64], freq: f64) -> f64 {
        match self {
            Term::Constant => 1.0,
            Term::Monomial(idx) => idx.iter().map(|&i| x[i]).product(),
            Term::Sin(i) => (freq * x[*i]).sin(),
            Term::Cos(i) => (freq * x[*i]).cos(),
            Term::SinDiff(i, j) => (freq * (x[*i] - x[*j])).sin(),
            Term::CosDiff(i, j) => (freq * (x[*i] - x[*j])).cos(),
        }
    }
}

/// Number of monomials of total degree at most `p` in `d` variables,
/// `C(d + p, p)`, or `None` on overflow.
pub fn monomial_count(d: usize, p: usize) -> Option<usize> {
    let mut c: u128 = 1;
    for i in 1..=p as u128 {
        c = c.checked_mul(d as u128 + i)? / i;
    }
    usize::try_from(c).ok()
}

fn trig_count(spec: &LibrarySpec, kind: Coordinates, d: usize) -> usize {
    let t = kind.trig_dim(d);
    match spec.trig {
        TrigTerms::None => 0,
        TrigTerms::PerCoordinate => 2 * t,
        TrigTerms::PairwiseDifference => t * t.saturating_sub(1),
    }
}

/// Column count without enumerating terms.
pub fn candidate_count(spec: &LibrarySpec, kind: Coordinates, d: usize) -> Option<usize> {
    let poly = monomial_count(d, spec.poly_order)? - usize::from(!spec.include_constant);
    poly.checked_add(trig_count(spec, kind, d))
}

/// Nondecreasing index tuples of length `deg` over `0..d`, in lexicographic order.
fn monomials_of_degree(d: usize, deg: usize, out: &mut Vec<Term>) {
    fn rec(d: usize, deg: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Term>) {
        if cur.len() == deg {
            out.push(Term::Monomial(cur.clone()));
            return;
        }
        for i in start..d {
            cur.push(i);
            rec(d, deg, i, cur, out);
            cur.pop();
        }
    }
    rec(d, deg, 0, &mut Vec::with_capacity(deg), out);
}

/// The ordered term list of a library over `d` coordinates.
#[derive(Debug, Clone)]
pub struct FunctionLibrary {
    spec: LibrarySpec,
    kind: Coordinates,
    dim: usize,
    terms: Vec<Term>,
}

impl FunctionLibrary {
    pub fn new(spec: LibrarySpec, kind: Coordinates, dim: usize) -> Result<Self> {
        spec.validate()?;
        if dim == 0 {
            return Err(Error::Config(
                "library needs at least one coordinate".into(),
            ));
        }
        if kind == Coordinates::FullState && !dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "full-state coordinates must be even, got {dim}"
            )));
        }
        let count = candidate_count(&spec, kind, dim).unwrap_or(usize::MAX);
        let row_bytes = count.saturating_mul(std::mem::size_of::<f64>());
        if row_bytes > spec.memory_budget_bytes {
            return Err(Error::LibraryTooLarge {
                rows: 1,
                columns: count,
                bytes: row_bytes,
                budget: spec.memory_budget_bytes,
            });
        }
        let mut terms = Vec::with_capacity(count);
        if spec.include_constant {
            terms.push(Term::Constant);
        }
        for deg in 1..=spec.poly_order {
            monomials_of_degree(dim, deg, &mut terms);
        }
        let t = kind.trig_dim(dim);
        match spec.trig {
            TrigTerms::None => {}
            TrigTerms::PerCoordinate => {
                terms.extend((0..t).map(Term::Sin));
                terms.extend((0..t).map(Term::Cos));
            }
            TrigTerms::PairwiseDifference => {
                let pairs: Vec<(usize, usize)> = (0..t)
                    .flat_map(|i| (i + 1..t).map(move |j| (i, j)))
                    .collect();
                terms.extend(pairs.iter().map(|&(i, j)| Term::SinDiff(i, j)));
                terms.extend(pairs.iter().map(|&(i, j)| Term::CosDiff(i, j)));
            }
        }
        if terms.is_empty() {
            return Err(Error::Config("library has no terms".into()));
        }
        Ok(Self {
            spec,
            kind,
            dim,
            terms,
        })
    }

    pub fn spec(&self) -> &LibrarySpec {
        &self.spec
    }

    pub fn kind(&self) -> Coordinates {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn descriptors(&self) -> Vec<String> {
        self.terms
            .iter()
            .map(|t| t.label(self.kind.prefix(), self.spec.trig_frequency))
            .collect()
    }

    /// Candidate values at one state; `out` has one slot per term.
    pub fn evaluate_into(&self, x: &[f64], out: &mut [f64]) {
        let f = self.spec.trig_frequency;
        for (o, t) in out.iter_mut().zip(&self.terms) {
            *o = t.eval(x, f);
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("library input dimension", self.dim, x.len())?;
        let mut out = vec![0.0; self.len()];
        self.evaluate_into(x, &mut out);
        Ok(out)
    }

    /// Evaluates every candidate on every column of `data` (`d x m`).
    /// Row `k` of the result corresponds to snapshot `k`.
    pub fn build(&self, data: &DMatrix<f64>, par: Parallelism) -> Result<CandidateLibrary> {
        check_dim("library input rows", self.dim, data.nrows())?;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("library input data"));
        }
        let m = data.ncols();
        let p = self.len();
        let bytes = m
            .saturating_mul(p)
            .saturating_mul(std::mem::size_of::<f64>());
        if bytes > self.spec.memory_budget_bytes {
            return Err(Error::LibraryTooLarge {
                rows: m,
                columns: p,
                bytes,
                budget: self.spec.memory_budget_bytes,
            });
        }
        // row-major access to snapshot k is data.column(k)
        let freq = self.spec.trig_frequency;
        let columns = par.map_range(p, |j| {
            let term = &self.terms[j];
            (0..m)
                .map(|k| term.eval(data.column(k).as_slice(), freq))
                .collect::<Vec<f64>>()
        });
        let mut theta = DMatrix::zeros(m, p);
        for (j, col) in columns.iter().enumerate() {
            theta.column_mut(j).copy_from_slice(col);
        }
        let column_norms = (0..p).map(|j| theta.column(j).norm()).collect();
        Ok(CandidateLibrary {
            theta,
            descriptors: self.descriptors(),
            column_norms,
            layout: self.clone(),
        })
    }
}

/// An evaluated library: `m x p` matrix plus one label per column.
#[derive(Debug, Clone)]
pub struct CandidateLibrary {
    pub theta: DMatrix<f64>,
    pub descriptors: Vec<String>,
    /// 2-norm of each column of `theta`.
    pub column_norms: Vec<f64>,
    /// The term list that produced the columns.
    pub layout: FunctionLibrary,
}

impl CandidateLibrary {
    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.theta.nrows()
    }
}

/// Builds the library for `data` (`d x m`) with the rayon default.
pub fn build(
    data: &DMatrix<f64>,
    spec: &LibrarySpec,
    kind: Coordinates,
) -> Result<CandidateLibrary> {
    FunctionLibrary::new(*spec, kind, data.nrows())?.build(data, Parallelism::default())
}
