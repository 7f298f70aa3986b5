//! Convex quadratic programs in standard form
//!
//! ```text
//!     minimize    1/2 x'Px + q'x
//!     subject to  Ax  = b
//!                 Gx <= h
//! ```
//!
//! Every game solve in the crate is assembled as a [`QpProblem`] and handed
//! to [`solve_qp`]. A solution is reported optimal only after its KKT
//! residuals have been recomputed here and found within tolerance, whatever
//! the backend claims.

mod backend;
mod sparse;

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sparse::SparseMatrix;

/// Smallest eigenvalue of `P` still accepted as positive semidefinite.
pub const PSD_TOL: f64 = -1e-9;
/// Ridge added to `P` before solving.
pub const DEFAULT_REGULARIZATION: f64 = 1e-9;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 20_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("P is not symmetric: |P[{row},{col}] - P[{col},{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },
    #[error("P is not positive semidefinite: eigenvalue {0:e}")]
    NotPsd(f64),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    p: SparseMatrix,
    q: Vec<f64>,
    a: SparseMatrix,
    b: Vec<f64>,
    g: SparseMatrix,
    h: Vec<f64>,
}

impl QpProblem {
    /// Builds and validates a problem. `p` must hold the full symmetric
    /// matrix (both triangles).
    pub fn new(
        p: SparseMatrix,
        q: Vec<f64>,
        a: SparseMatrix,
        b: Vec<f64>,
        g: SparseMatrix,
        h: Vec<f64>,
    ) -> Result<Self, QpError> {
        let n = q.len();
        if p.nrows() != n || p.ncols() != n {
            return Err(QpError::Dimension(format!(
                "P is {}x{}, q has {n} entries",
                p.nrows(),
                p.ncols()
            )));
        }
        if a.ncols() != n || a.nrows() != b.len() {
            return Err(QpError::Dimension(format!(
                "A is {}x{}, b has {} entries, n = {n}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if g.ncols() != n || g.nrows() != h.len() {
            return Err(QpError::Dimension(format!(
                "G is {}x{}, h has {} entries, n = {n}",
                g.nrows(),
                g.ncols(),
                h.len()
            )));
        }
        for (name, ok) in [
            ("P", p.is_finite()),
            ("q", q.iter().all(|v| v.is_finite())),
            ("A", a.is_finite()),
            ("b", b.iter().all(|v| v.is_finite())),
            ("G", g.is_finite()),
            ("h", h.iter().all(|v| v.is_finite())),
        ] {
            if !ok {
                return Err(QpError::NonFinite(name));
            }
        }
        check_symmetric(&p)?;
        check_psd(&p)?;
        Ok(Self { p, q, a, b, g, h })
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.h.len()
    }

    pub fn p(&self) -> &SparseMatrix {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn a(&self) -> &SparseMatrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn g(&self) -> &SparseMatrix {
        &self.g
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let px = self.p.mul_vec(x);
        0.5 * dot(x, &px) + dot(&self.q, x)
    }

    /// The same problem with `P` replaced by `P + shift * I`.
    pub fn regularized(&self, shift: f64) -> Self {
        let mut out = self.clone();
        if shift != 0.0 {
            out.p = out.p.add_diagonal(shift);
        }
        out
    }

    /// The same problem without inequality row `row`.
    pub fn without_inequality(&self, row: usize) -> Self {
        let mut out = self.clone();
        out.g = self.g.without_row(row);
        out.h.remove(row);
        out
    }

    /// Writes the problem with dense row-major matrices, for offline
    /// inspection.
    pub fn dump_json(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Dense<'a> {
            n: usize,
            p: Vec<Vec<f64>>,
            q: &'a [f64],
            a: Vec<Vec<f64>>,
            b: &'a [f64],
            g: Vec<Vec<f64>>,
            h: &'a [f64],
        }
        let dense = Dense {
            n: self.num_vars(),
            p: self.p.to_dense_rows(),
            q: &self.q,
            a: self.a.to_dense_rows(),
            b: &self.b,
            g: self.g.to_dense_rows(),
            h: &self.h,
        };
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &dense).map_err(std::io::Error::other)
    }
}

fn check_symmetric(p: &SparseMatrix) -> Result<(), QpError> {
    let entries = p.entry_map();
    for (&(row, col), &v) in &entries {
        let mirror = entries.get(&(col, row)).copied().unwrap_or(0.0);
        let gap = (v - mirror).abs();
        if gap > 1e-12 * v.abs().max(1.0) {
            return Err(QpError::NotSymmetric { row, col, gap });
        }
    }
    Ok(())
}

/// Exact PSD test, done per connected component of the sparsity graph of
/// `P` so that block-structured game matrices stay cheap.
fn check_psd(p: &SparseMatrix) -> Result<(), QpError> {
    let n = p.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let entries = p.entry_map();
    for &(r, c) in entries.keys() {
        let (a, b) = (find(&mut parent, r), find(&mut parent, c));
        if a != b {
            parent[a] = b;
        }
    }
    let mut components: HashMap<usize, Vec<usize>> = HashMap::new();
    for &(r, _) in entries.keys() {
        let root = find(&mut parent, r);
        components.entry(root).or_default().push(r);
    }
    for members in components.values_mut() {
        members.sort_unstable();
        members.dedup();
        let local: HashMap<usize, usize> =
            members.iter().enumerate().map(|(k, &g)| (g, k)).collect();
        let m = members.len();
        if m == 1 {
            let v = entries
                .get(&(members[0], members[0]))
                .copied()
                .unwrap_or(0.0);
            if v < PSD_TOL {
                return Err(QpError::NotPsd(v));
            }
            continue;
        }
        let mut dense = DMatrix::<f64>::zeros(m, m);
        for (&(r, c), &v) in &entries {
            if let (Some(&lr), Some(&lc)) = (local.get(&r), local.get(&c)) {
                dense[(lr, lc)] = v;
            }
        }
        let min = dense
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min < PSD_TOL {
            return Err(QpError::NotPsd(min));
        }
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

/// Max-norms of the four KKT conditions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    pub primal_eq: f64,
    pub primal_ineq: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal_eq
            .max(self.primal_ineq)
            .max(self.dual)
            .max(self.complementarity)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub status: QpStatus,
    pub x: Vec<f64>,
    /// Multipliers of `Ax = b`.
    pub y: Vec<f64>,
    /// Multipliers of `Gx <= h` (non-negative).
    pub z: Vec<f64>,
    pub residuals: KktResiduals,
    pub iterations: usize,
}

/// KKT residuals of a candidate primal-dual point:
/// `(|Ax - b|, |max(Gx - h, 0)|, |Px + q + A'y + G'z|, |z .* max(h - Gx, 0)|)`.
pub fn kkt_residuals(
    problem: &QpProblem,
    x: &[f64],
    y: &[f64],
    z: &[f64],
) -> Result<KktResiduals, QpError> {
    let n = problem.num_vars();
    if x.len() != n || y.len() != problem.num_eq() || z.len() != problem.num_ineq() {
        return Err(QpError::Dimension(format!(
            "x/y/z have {}/{}/{} entries, expected {n}/{}/{}",
            x.len(),
            y.len(),
            z.len(),
            problem.num_eq(),
            problem.num_ineq()
        )));
    }
    let ax = problem.a.mul_vec(x);
    let gx = problem.g.mul_vec(x);
    let primal_eq = max_abs(ax.iter().zip(&problem.b).map(|(l, r)| l - r));
    let primal_ineq = max_abs(gx.iter().zip(&problem.h).map(|(l, r)| (l - r).max(0.0)));
    let mut stationarity = problem.p.mul_vec(x);
    for (s, qi) in stationarity.iter_mut().zip(&problem.q) {
        *s += qi;
    }
    problem.a.mul_t_vec_add(y, &mut stationarity);
    problem.g.mul_t_vec_add(z, &mut stationarity);
    let dual = max_abs(stationarity);
    let complementarity = max_abs(
        gx.iter()
            .zip(&problem.h)
            .zip(z)
            .map(|((l, r), zi)| zi * (r - l).max(0.0)),
    );
    Ok(KktResiduals {
        primal_eq,
        primal_ineq,
        dual,
        complementarity,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub regularization: f64,
    /// Ruiz equilibration of the data before the interior-point iterations.
    pub equilibrate: bool,
    /// Hand the variables to the backend in reverse order. The problem is
    /// unchanged; only the pivoting sequence of the factorization differs.
    pub reverse_order: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            regularization: DEFAULT_REGULARIZATION,
            equilibrate: true,
            reverse_order: false,
        }
    }
}

/// Solves `problem` to KKT residuals within `tol`.
pub fn solve_qp(problem: &QpProblem, tol: f64, max_iter: usize) -> QpSolution {
    solve_qp_with(
        problem,
        &QpSettings {
            tol,
            max_iter,
            ..QpSettings::default()
        },
    )
}

pub fn solve_qp_with(problem: &QpProblem, settings: &QpSettings) -> QpSolution {
    let solved = problem.regularized(settings.regularization);
    backend::solve(&solved, settings)
}

/// Incremental assembly of a [`QpProblem`] by named rows.
#[derive(Debug, Clone, Default)]
pub struct QpBuilder {
    n: usize,
    p: Vec<(usize, usize, f64)>,
    q: Vec<f64>,
    a: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
    g: Vec<(usize, usize, f64)>,
    h: Vec<f64>,
}

impl QpBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            q: vec![0.0; n],
            ..Self::default()
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    /// Adds `coef * x_i * x_j` to the objective `1/2 x'Px` form, i.e. for
    /// `i == j` the term is `1/2 coef x_i^2`.
    pub fn add_quadratic(&mut self, i: usize, j: usize, coef: f64) {
        if coef == 0.0 {
            return;
        }
        if i == j {
            self.p.push((i, i, coef));
        } else {
            self.p.push((i, j, coef));
            self.p.push((j, i, coef));
        }
    }

    /// Adds `weight * x_i^2` to the objective.
    pub fn add_square(&mut self, i: usize, weight: f64) {
        self.add_quadratic(i, i, 2.0 * weight);
    }

    pub fn add_linear(&mut self, i: usize, coef: f64) {
        self.q[i] += coef;
    }

    pub fn add_eq(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let row = self.b.len();
        self.a.extend(
            terms
                .iter()
                .filter(|t| t.1 != 0.0)
                .map(|&(c, v)| (row, c, v)),
        );
        self.b.push(rhs);
    }

    pub fn add_le(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let row = self.h.len();
        self.g.extend(
            terms
                .iter()
                .filter(|t| t.1 != 0.0)
                .map(|&(c, v)| (row, c, v)),
        );
        self.h.push(rhs);
    }

    pub fn add_upper_bound(&mut self, i: usize, bound: f64) {
        self.add_le(&[(i, 1.0)], bound);
    }

    pub fn add_lower_bound(&mut self, i: usize, bound: f64) {
        self.add_le(&[(i, -1.0)], -bound);
    }

    pub fn build(self) -> Result<QpProblem, QpError> {
        let n = self.n;
        QpProblem::new(
            SparseMatrix::from_triplets(n, n, self.p),
            self.q,
            SparseMatrix::from_triplets(self.b.len(), n, self.a),
            self.b,
            SparseMatrix::from_triplets(self.h.len(), n, self.g),
            self.h,
        )
    }
}
