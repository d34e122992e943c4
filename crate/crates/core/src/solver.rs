//! Linear solves, the classic Newton-Raphson iteration, and the hybrid variant
//! seeded by a displacement predictor.

use nalgebra::DVector;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::CscMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fem::{FemSystem, StiffnessMatrix};

/// Lower bound on the residual scale so that `f^e = 0` still has a tolerance.
pub const FORCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LinearSolver {
    /// Sparse Cholesky factorization.
    #[default]
    #[serde(rename = "direct")]
    DirectSymmetric,
    /// Jacobi-preconditioned conjugate gradients.
    #[serde(rename = "cg")]
    ConjugateGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Relative residual tolerance: stop when `‖R‖ < eps · max(‖f^e‖, FORCE_FLOOR)`.
    pub eps: f64,
    /// Absolute step tolerance in meters.
    pub eta: f64,
    pub max_iters: usize,
    pub linear_solver: LinearSolver,
}

impl SolverConfig {
    /// Defaults with the step tolerance tied to the characteristic length.
    pub fn for_length(length: f64) -> Self {
        Self {
            eps: 1e-6,
            eta: 1e-9 * length,
            max_iters: 30,
            linear_solver: LinearSolver::DirectSymmetric,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eta > 0.0 && self.max_iters >= 1) {
            return Err(Error::InvalidArgument(format!(
                "solver config needs eps > 0, eta > 0, max_iters >= 1 (got {:?})",
                self
            )));
        }
        Ok(())
    }

    pub fn tolerance(&self, f_ext: &DVector<f64>) -> f64 {
        self.eps * f_ext.norm().max(FORCE_FLOOR)
    }
}

/// What the hybrid solver did with the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictionOutcome {
    /// Classic solve, no predictor involved.
    NotApplicable,
    /// The prediction met the tolerance and was returned directly.
    EarlyExit,
    /// The prediction replaced the first Newton iterate.
    Fallback,
    /// The first Newton iterate was at least as good as the prediction.
    Discarded,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub u: DVector<f64>,
    /// Number of linear solves performed.
    pub iterations: usize,
    /// `‖R‖` before the first iteration and after each one.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub prediction_used: PredictionOutcome,
    /// `‖R(u_p)‖` when a predictor was consulted.
    pub prediction_residual: Option<f64>,
}

/// Solves `K x = rhs` for a reduced (nonsingular) stiffness matrix.
pub fn solve_linear(k: &StiffnessMatrix, rhs: &DVector<f64>, solver: LinearSolver) -> Result<DVector<f64>> {
    check_len(k.nrows(), rhs.len())?;
    if k.nrows() == 0 {
        return Err(Error::LinearSolve("empty system: every dof is fixed".into()));
    }
    if !rhs.iter().all(|v| v.is_finite()) {
        return Err(Error::LinearSolve("right-hand side has non-finite entries".into()));
    }
    match solver {
        LinearSolver::DirectSymmetric => solve_cholesky(k, rhs),
        LinearSolver::ConjugateGradient => solve_cg(k, rhs),
    }
}

/// Sparse Cholesky, with a dense LU fallback for tangents that lose
/// definiteness away from the rest state.
fn solve_cholesky(k: &StiffnessMatrix, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let csc = CscMatrix::from(k.csr());
    match CscCholesky::factor(&csc) {
        Ok(chol) => Ok(chol.solve(rhs).column(0).into_owned()),
        Err(e) => {
            log::debug!("Cholesky factorization failed ({e:?}); retrying with dense LU");
            solve_dense_lu(k, rhs)
        }
    }
}

const DIRECT_RESIDUAL_TOL: f64 = 1e-10;

fn solve_dense_lu(k: &StiffnessMatrix, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let x = k
        .to_dense()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::LinearSolve("stiffness matrix is singular".into()))?;
    let res = (k.mul_vec(&x) - rhs).norm();
    if !(res <= DIRECT_RESIDUAL_TOL * rhs.norm().max(f64::MIN_POSITIVE)) {
        return Err(Error::LinearSolve(format!(
            "LU solve inaccurate: residual {res:e} for right-hand side norm {:e}",
            rhs.norm()
        )));
    }
    Ok(x)
}

const CG_RELATIVE_TOL: f64 = 1e-9;

fn solve_cg(k: &StiffnessMatrix, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let n = rhs.len();
    let mut inv_diag = DVector::zeros(n);
    for (i, row) in k.csr().row_iter().enumerate() {
        let d = row
            .col_indices()
            .iter()
            .zip(row.values())
            .find(|(&j, _)| j == i)
            .map(|(_, &v)| v)
            .unwrap_or(0.0);
        if !(d > 0.0) {
            return Err(Error::LinearSolve(format!("non-positive diagonal entry {d} at row {i}")));
        }
        inv_diag[i] = 1.0 / d;
    }
    let b_norm = rhs.norm();
    let mut x = DVector::zeros(n);
    if b_norm == 0.0 {
        return Ok(x);
    }
    let target = CG_RELATIVE_TOL * b_norm;
    let mut r = rhs.clone();
    let mut z = r.component_mul(&inv_diag);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for _ in 0..n {
        let kp = k.mul_vec(&p);
        let pkp = p.dot(&kp);
        if !(pkp > 0.0) {
            return Err(Error::LinearSolve("matrix is not positive definite".into()));
        }
        let alpha = rz / pkp;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &kp, 1.0);
        if r.norm() <= target {
            return Ok(x);
        }
        z = r.component_mul(&inv_diag);
        let rz_next = r.dot(&z);
        p = &z + &p * (rz_next / rz);
        rz = rz_next;
    }
    Err(Error::LinearSolve(format!(
        "conjugate gradients did not converge in {n} iterations (residual {:e}, target {:e})",
        r.norm(),
        target
    )))
}

/// One Newton step from `u`: solve `K(u) δ = −R(u)` on the free dofs.
fn newton_step(system: &FemSystem, u: &DVector<f64>, r: &DVector<f64>, config: &SolverConfig) -> Result<DVector<f64>> {
    let k = system.reduced_tangent(u)?;
    let rhs = -system.reduce_vector(r)?;
    let delta = solve_linear(&k, &rhs, config.linear_solver)?;
    system.expand(&delta)
}

/// Classic Newton-Raphson from `u⁰ = 0`.
pub fn newton_raphson(system: &FemSystem, f_ext: &DVector<f64>, config: &SolverConfig) -> Result<SolveResult> {
    newton_loop(system, f_ext, config, None)
}

/// Newton-Raphson seeded by a predictor.
///
/// The prediction is returned directly if it already meets the tolerance.
/// Otherwise the classic iteration runs from zero and its first iterate is
/// replaced by the prediction when the prediction has a strictly smaller
/// residual.
pub fn hybrid_newton_raphson<P>(
    system: &FemSystem,
    f_ext: &DVector<f64>,
    mut predictor: P,
    config: &SolverConfig,
) -> Result<SolveResult>
where
    P: FnMut(&DVector<f64>) -> DVector<f64>,
{
    config.validate()?;
    check_len(system.num_dofs(), f_ext.len())?;
    let tol = config.tolerance(f_ext);
    // R(u⁰) = −f^e since f^i(0) = 0; the predictor consumes f^e itself.
    let mut u_p = predictor(f_ext);
    check_len(system.num_dofs(), u_p.len())?;
    system.zero_fixed(&mut u_p);
    let r_p = system.residual(&u_p, f_ext).map(|r| r.norm()).unwrap_or(f64::INFINITY);
    let r_p = if r_p.is_finite() { r_p } else { f64::INFINITY };
    if r_p < tol {
        return Ok(SolveResult {
            u: u_p,
            iterations: 0,
            residual_history: vec![r_p],
            converged: true,
            prediction_used: PredictionOutcome::EarlyExit,
            prediction_residual: Some(r_p),
        });
    }
    let mut result = newton_loop(system, f_ext, config, Some((u_p, r_p)))?;
    result.prediction_residual = Some(r_p);
    Ok(result)
}

fn newton_loop(
    system: &FemSystem,
    f_ext: &DVector<f64>,
    config: &SolverConfig,
    prediction: Option<(DVector<f64>, f64)>,
) -> Result<SolveResult> {
    config.validate()?;
    check_len(system.num_dofs(), f_ext.len())?;
    let tol = config.tolerance(f_ext);
    let mut outcome = if prediction.is_some() {
        PredictionOutcome::Discarded
    } else {
        PredictionOutcome::NotApplicable
    };
    let mut prediction = prediction;

    let mut u = DVector::zeros(system.num_dofs());
    let mut r = system.residual(&u, f_ext)?;
    let mut r_norm = r.norm();
    let mut history = vec![r_norm];
    let mut iterations = 0;
    let mut converged = r_norm < tol;

    while !converged && iterations < config.max_iters {
        let delta = newton_step(system, &u, &r, config)?;
        u += &delta;
        iterations += 1;
        r = system.residual(&u, f_ext)?;
        r_norm = r.norm();
        if let Some((u_p, r_p)) = prediction.take() {
            // strict inequality: ties keep the Newton iterate
            if r_norm > r_p {
                u = u_p;
                r = system.residual(&u, f_ext)?;
                r_norm = r.norm();
                outcome = PredictionOutcome::Fallback;
            }
        }
        history.push(r_norm);
        converged = r_norm < tol || delta.norm() < config.eta;
    }

    Ok(SolveResult {
        u,
        iterations,
        residual_history: history,
        converged,
        prediction_used: outcome,
        prediction_residual: None,
    })
}
