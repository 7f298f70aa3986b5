//! Interior-point backend (Clarabel). The result is re-checked against our
//! own KKT residuals before it is called optimal.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use super::{
    kkt_residuals, KktResiduals, QpProblem, QpSettings, QpSolution, QpStatus, SparseMatrix,
};

/// Interior-point methods rarely need more than a few dozen iterations;
/// larger budgets only matter for ill-conditioned instances.
const MAX_IPM_ITER: usize = 500;

fn csc(
    rows: usize,
    cols: usize,
    parts: &[(&SparseMatrix, usize)],
    perm: &[usize],
) -> CscMatrix<f64> {
    let mut ri = Vec::new();
    let mut ci = Vec::new();
    let mut vals = Vec::new();
    for (m, offset) in parts {
        for &(r, c, v) in m.triplets() {
            ri.push(r + offset);
            ci.push(perm[c]);
            vals.push(v);
        }
    }
    CscMatrix::new_from_triplets(rows, cols, ri, ci, vals)
}

fn csc_square(m: &SparseMatrix, perm: &[usize]) -> CscMatrix<f64> {
    let mut ri = Vec::new();
    let mut ci = Vec::new();
    let mut vals = Vec::new();
    for &(r, c, v) in m.triplets() {
        let (r, c) = (perm[r], perm[c]);
        // Clarabel reads the upper triangle only.
        if r <= c {
            ri.push(r);
            ci.push(c);
            vals.push(v);
        }
    }
    CscMatrix::new_from_triplets(m.nrows(), m.ncols(), ri, ci, vals)
}

pub(super) fn solve(problem: &QpProblem, settings: &QpSettings) -> QpSolution {
    let n = problem.num_vars();
    let me = problem.num_eq();
    let mi = problem.num_ineq();

    // perm[original] = position handed to the backend
    let perm: Vec<usize> = if settings.reverse_order {
        (0..n).rev().collect()
    } else {
        (0..n).collect()
    };
    let mut q = vec![0.0; n];
    for (i, &v) in problem.q().iter().enumerate() {
        q[perm[i]] = v;
    }
    let p = csc_square(problem.p(), &perm);
    let a = csc(me + mi, n, &[(problem.a(), 0), (problem.g(), me)], &perm);
    let b: Vec<f64> = problem.b().iter().chain(problem.h()).copied().collect();
    let mut cones = Vec::new();
    if me > 0 {
        cones.push(SupportedConeT::ZeroConeT(me));
    }
    if mi > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(mi));
    }

    let tight = (settings.tol * 1e-2).max(1e-13);
    let backend_settings = DefaultSettings {
        max_iter: settings.max_iter.min(MAX_IPM_ITER) as u32,
        verbose: false,
        tol_feas: tight,
        tol_gap_abs: tight,
        tol_gap_rel: tight,
        tol_ktratio: 1e-8,
        equilibrate_enable: settings.equilibrate,
        presolve_enable: false,
        static_regularization_constant: if settings.reverse_order { 1e-9 } else { 1e-8 },
        ..DefaultSettings::default()
    };

    let failed = |status| QpSolution {
        status,
        x: vec![0.0; n],
        y: vec![0.0; me],
        z: vec![0.0; mi],
        residuals: KktResiduals {
            primal_eq: f64::INFINITY,
            primal_ineq: f64::INFINITY,
            dual: f64::INFINITY,
            complementarity: f64::INFINITY,
        },
        iterations: 0,
    };
    let mut solver = match DefaultSolver::new(&p, &q, &a, &b, &cones, backend_settings) {
        Ok(s) => s,
        Err(_) => return failed(QpStatus::MaxIter),
    };
    solver.solve();
    let sol = &solver.solution;

    let x: Vec<f64> = (0..n).map(|i| sol.x[perm[i]]).collect();
    let y = sol.z[..me].to_vec();
    let z: Vec<f64> = sol.z[me..].iter().map(|v| v.max(0.0)).collect();
    let residuals = kkt_residuals(problem, &x, &y, &z).expect("dimensions match by construction");
    let certified = residuals.within(settings.tol) && x.iter().all(|v| v.is_finite());
    let status = if certified {
        QpStatus::Optimal
    } else {
        match sol.status {
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                QpStatus::Infeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                QpStatus::Unbounded
            }
            _ => QpStatus::MaxIter,
        }
    };
    QpSolution {
        status,
        x,
        y,
        z,
        residuals,
        iterations: sol.iterations as usize,
    }
}
