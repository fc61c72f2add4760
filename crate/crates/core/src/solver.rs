//! Convex least squares over the probability simplex, optionally intersected
//! with a homogeneous linear subspace (`eq * theta = 0`).
//!
//! Two primal active-set strategies share one contract. Without equality
//! constraints the solver works on the support (the few coordinates allowed
//! to be positive), in the style of Lawson-Hanson non-negative least squares
//! with the sum-to-one row carried in each subproblem. With equality
//! constraints the feasible affine set is parametrized by an orthonormal
//! nullspace basis and the active set tracks the bound constraints in the
//! reduced coordinates, which stays cheap when the constrained subspace is
//! low-dimensional.
//!
//! Every solve returns a [`SolveCertificate`] whose KKT residual is measured
//! on the returned point from the raw problem data (primal feasibility, dual
//! feasibility, stationarity, complementarity), so optimality can be audited
//! independently of the algorithm that produced it.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Weights on the probability simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    theta: Vec<f64>,
}

impl WeightVector {
    /// Accepts a vector within floating-point dust of the simplex: entries at
    /// least -1e-10 and sum within 1e-8 of one. Negative dust is clamped to
    /// zero and the vector renormalized.
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidParameter("weight vector must be non-empty".into()));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("weights must be finite".into()));
        }
        if let Some(&bad) = theta.iter().find(|&&v| v < -1e-10) {
            return Err(Error::InvalidParameter(format!("weight {bad} below -1e-10")));
        }
        let sum: f64 = theta.iter().sum();
        if (sum - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidParameter(format!("weights sum to {sum}, not 1")));
        }
        let mut theta = theta;
        for v in theta.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let clamped_sum: f64 = theta.iter().sum();
        for v in theta.iter_mut() {
            *v /= clamped_sum;
        }
        Ok(Self { theta })
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn get(&self, d: usize) -> f64 {
        self.theta[d]
    }
}

/// Solver exit report. `objective` is `(1/rows) * ||target - design*theta||^2`
/// and `kkt_residual` is the largest violation among primal feasibility,
/// stationarity, dual feasibility and complementarity at the returned point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveCertificate {
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub feasible: bool,
}

/// Homogeneous equality constraint on the weights.
#[derive(Clone, Debug, PartialEq)]
pub enum EqConstraint {
    /// Explicit rows to annihilate: `rows * theta = 0`.
    Rows(DMatrix<f64>),
    /// The same constraint given by an orthonormal basis of its nullspace:
    /// feasible weights lie in the column span of `basis`. This avoids an
    /// O(D^3) nullspace factorization when the caller already has the basis.
    SubspaceBasis(DMatrix<f64>),
}

/// Least-squares problem over the simplex with optional equality constraints.
#[derive(Clone, Debug)]
pub struct SimplexLsProblem {
    design: DMatrix<f64>,
    target: DVector<f64>,
    eq: Option<EqConstraint>,
    gram: DMatrix<f64>,
    gtarget: DVector<f64>,
}

impl SimplexLsProblem {
    pub fn new(design: DMatrix<f64>, target: DVector<f64>) -> Result<Self> {
        if design.nrows() == 0 || design.ncols() == 0 {
            return Err(Error::InvalidParameter("design must be non-empty".into()));
        }
        if design.nrows() != target.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows, target has {}",
                design.nrows(),
                target.len()
            )));
        }
        if design.iter().chain(target.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("design and target must be finite".into()));
        }
        let gram = design.transpose() * &design;
        let gtarget = design.transpose() * &target;
        Ok(Self { design, target, eq: None, gram, gtarget })
    }

    /// Adds explicit constraint rows `eq * theta = 0`.
    pub fn with_eq_rows(mut self, eq: DMatrix<f64>) -> Result<Self> {
        if eq.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "eq has {} columns, problem has {}",
                eq.ncols(),
                self.dim()
            )));
        }
        if eq.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("eq must be finite".into()));
        }
        self.eq = Some(EqConstraint::Rows(eq));
        Ok(self)
    }

    /// Constrains the weights to the column span of an orthonormal `basis`.
    pub fn with_subspace_constraint(mut self, basis: DMatrix<f64>) -> Result<Self> {
        if basis.nrows() != self.dim() || basis.ncols() == 0 || basis.ncols() > self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "basis is {}x{}, problem dimension is {}",
                basis.nrows(),
                basis.ncols(),
                self.dim()
            )));
        }
        let gramb = basis.transpose() * &basis;
        let mut ortho_err = 0.0f64;
        for i in 0..gramb.nrows() {
            for j in 0..gramb.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                ortho_err = ortho_err.max((gramb[(i, j)] - want).abs());
            }
        }
        if ortho_err > 1e-8 {
            return Err(Error::InvalidParameter(format!(
                "subspace basis is not orthonormal (deviation {ortho_err:.3e})"
            )));
        }
        self.eq = Some(EqConstraint::SubspaceBasis(basis));
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.design.nrows()
    }

    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    pub fn eq(&self) -> Option<&EqConstraint> {
        self.eq.as_ref()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    pub(crate) fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }
}

/// Multiplier bookkeeping handed from a strategy to the certificate.
enum CertParts {
    /// Support active set: positive coordinates and the sum-constraint
    /// multiplier estimate.
    Support { support: Vec<usize>, mu: f64 },
    /// Reduced active set: orthonormal basis of the feasible directions and
    /// bound multipliers on the active coordinates.
    Reduced { nbasis: DMatrix<f64>, lambda: Vec<(usize, f64)> },
}

struct StrategyExit {
    theta: DVector<f64>,
    parts: CertParts,
    iterations: usize,
}

/// Minimizes `(1/rows) * ||target - design*theta||^2` over the simplex,
/// intersected with the equality constraints when present.
///
/// Errors with [`Error::Infeasible`] when the constraints exclude the whole
/// simplex and [`Error::NonConvergence`] when the iteration budget is
/// exhausted before the KKT residual reaches `tol`.
pub fn solve(problem: &SimplexLsProblem, tol: f64) -> Result<(WeightVector, SolveCertificate)> {
    solve_with(problem, problem.eq.as_ref(), tol)
}

/// As [`solve`] but with the equality constraint supplied separately, so one
/// prepared problem can be solved under several constraints without cloning
/// its design and Gram matrices.
pub(crate) fn solve_with(
    problem: &SimplexLsProblem,
    eq: Option<&EqConstraint>,
    tol: f64,
) -> Result<(WeightVector, SolveCertificate)> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let exit = match eq {
        None => solve_support(problem, tol)?,
        Some(EqConstraint::SubspaceBasis(basis)) => solve_reduced(problem, basis, tol)?,
        Some(EqConstraint::Rows(rows)) => {
            match nullspace_basis(rows) {
                Some(basis) => solve_reduced(problem, &basis, tol)?,
                // Rank-zero constraint rows restrict nothing.
                None => solve_support(problem, tol)?,
            }
        }
    };

    let weights = WeightVector::new(exit.theta.iter().copied().collect())?;
    let theta = DVector::from_column_slice(weights.as_slice());
    let cert = certificate(problem, eq, &theta, &exit.parts, exit.iterations, tol);
    Ok((weights, cert))
}

/// Smallest Euclidean norm of `eq * theta` over the simplex, computed by
/// running the simplex solver on `eq` itself with a zero target. Zero (within
/// 1e-10) exactly when the constraints intersect the simplex.
pub fn feasibility_gap(eq: &DMatrix<f64>, dim: usize) -> Result<f64> {
    if eq.ncols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "eq has {} columns, expected {dim}",
            eq.ncols()
        )));
    }
    if eq.nrows() == 0 {
        return Ok(0.0);
    }
    let problem = SimplexLsProblem::new(eq.clone(), DVector::zeros(eq.nrows()))?;
    let (weights, _) = solve(&problem, 1e-10)?;
    let theta = DVector::from_column_slice(weights.as_slice());
    Ok((eq * theta).norm())
}

/// Orthonormal basis of the nullspace of `rows`, or `None` when the rows have
/// numerical rank zero. Built from the eigendecomposition of `rows^T rows`.
fn nullspace_basis(rows: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = rows.ncols();
    let rtr = rows.transpose() * rows;
    let eig = nalgebra::SymmetricEigen::new(rtr);
    let lam_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if lam_max <= 0.0 {
        return None;
    }
    // sigma_i = sqrt(lambda_i); rank cut at sigma > sigma_max * 1e-12
    let cut = lam_max * 1e-24;
    let null_cols: Vec<usize> = (0..d).filter(|&i| eig.eigenvalues[i] <= cut).collect();
    if null_cols.len() == d {
        return None;
    }
    let mut basis = DMatrix::zeros(d, null_cols.len());
    for (j, &c) in null_cols.iter().enumerate() {
        basis.set_column(j, &eig.eigenvectors.column(c));
    }
    Some(basis)
}

/// Square linear solve with an LU fast path and a minimum-norm SVD fallback
/// for (near-)singular systems.
fn solve_square(k: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    if let Some(x) = k.clone().lu().solve(rhs) {
        let resid = (k * &x - rhs).amax();
        if resid.is_finite() && resid <= 1e-9 * rhs.amax().max(1.0) {
            return x;
        }
    }
    let svd = k.clone().svd(true, true);
    let eps = svd.singular_values.amax() * 1e-13;
    svd.solve(rhs, eps.max(f64::MIN_POSITIVE))
        .map(|m| DVector::from_column_slice(m.as_slice()))
        .unwrap_or_else(|_| DVector::zeros(k.ncols()))
}

/// Gradient `(2/rows) * (G theta - b)` where `theta` is supported on
/// `support`; costs O(dim * |support|).
fn gradient_on_support(
    gram: &DMatrix<f64>,
    gtarget: &DVector<f64>,
    rows: usize,
    support: &[usize],
    theta: &DVector<f64>,
) -> DVector<f64> {
    let mut g = -gtarget.clone();
    for &j in support {
        let w = theta[j];
        if w != 0.0 {
            g.axpy(w, &gram.column(j).clone_owned(), 1.0);
        }
    }
    g *= 2.0 / rows as f64;
    g
}

/// Support active set for the unconstrained-in-subspace case: grow the
/// support one coordinate at a time, solving the sum-constrained normal
/// equations exactly on the current support.
fn solve_support(problem: &SimplexLsProblem, tol: f64) -> Result<StrategyExit> {
    let d = problem.dim();
    let rows = problem.rows();
    let gram = &problem.gram;
    let gtarget = &problem.gtarget;

    // Start at the vertex with the smallest objective.
    let start = (0..d)
        .min_by(|&a, &b| {
            let fa = gram[(a, a)] - 2.0 * gtarget[a];
            let fb = gram[(b, b)] - 2.0 * gtarget[b];
            fa.partial_cmp(&fb).unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("non-empty dimension");

    let mut support: Vec<usize> = vec![start];
    let mut in_support = vec![false; d];
    in_support[start] = true;
    let mut theta = DVector::zeros(d);
    theta[start] = 1.0;

    let budget = 100 * d.max(1);
    let mut iterations = 0usize;
    let mut restarted = false;
    let mut since_restart = 0usize;

    loop {
        iterations += 1;
        since_restart += 1;
        if since_restart > budget {
            if restarted {
                let g = gradient_on_support(gram, gtarget, rows, &support, &theta);
                let mu = -support.iter().map(|&j| g[j]).sum::<f64>() / support.len() as f64;
                let worst = (0..d)
                    .filter(|i| !in_support[*i])
                    .map(|i| g[i] + mu)
                    .fold(f64::INFINITY, f64::min);
                return Err(Error::NonConvergence {
                    iterations,
                    kkt_residual: (-worst).max(0.0),
                });
            }
            // Diagnostic restart: rebuild the support from the current point.
            restarted = true;
            since_restart = 0;
            support = (0..d).filter(|&i| theta[i] > 1e-12).collect();
            if support.is_empty() {
                support.push(start);
            }
            in_support.iter_mut().for_each(|v| *v = false);
            for &j in &support {
                in_support[j] = true;
            }
        }

        // Equality-constrained subproblem on the support.
        let s = support.len();
        let mut kkt = DMatrix::zeros(s + 1, s + 1);
        let mut rhs = DVector::zeros(s + 1);
        for (a, &ia) in support.iter().enumerate() {
            for (b, &ib) in support.iter().enumerate() {
                kkt[(a, b)] = gram[(ia, ib)];
            }
            kkt[(a, s)] = 1.0;
            kkt[(s, a)] = 1.0;
            rhs[a] = gtarget[ia];
        }
        rhs[s] = 1.0;
        let sol = solve_square(&kkt, &rhs);
        let cand: Vec<f64> = (0..s).map(|i| sol[i]).collect();

        let min_cand = cand.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_cand >= -1e-12 {
            // Accept the exact subproblem solution.
            theta.fill(0.0);
            for (i, &j) in support.iter().enumerate() {
                theta[j] = cand[i].max(0.0);
            }
            let g = gradient_on_support(gram, gtarget, rows, &support, &theta);
            let mu = -support.iter().map(|&j| g[j]).sum::<f64>() / s as f64;
            let (mut worst, mut worst_idx) = (f64::INFINITY, usize::MAX);
            for i in 0..d {
                if !in_support[i] {
                    let slack = g[i] + mu;
                    if slack < worst {
                        worst = slack;
                        worst_idx = i;
                    }
                }
            }
            if worst_idx == usize::MAX || worst >= -0.5 * tol {
                return Ok(StrategyExit {
                    theta,
                    parts: CertParts::Support { support, mu },
                    iterations,
                });
            }
            support.push(worst_idx);
            in_support[worst_idx] = true;
            continue;
        }

        // Step toward the candidate until the first coordinate hits zero,
        // then drop it from the support.
        let (mut alpha, mut drop_pos) = (f64::INFINITY, usize::MAX);
        for (i, &j) in support.iter().enumerate() {
            if cand[i] < theta[j] {
                let a = theta[j] / (theta[j] - cand[i]);
                if cand[i] < 0.0 && a < alpha {
                    alpha = a;
                    drop_pos = i;
                }
            }
        }
        if drop_pos == usize::MAX {
            // Should be unreachable: some candidate was negative.
            return Err(Error::NonConvergence { iterations, kkt_residual: f64::NAN });
        }
        for (i, &j) in support.iter().enumerate() {
            theta[j] += alpha * (cand[i] - theta[j]);
            if theta[j] < 1e-14 {
                theta[j] = 0.0;
            }
        }
        let dropped = support.remove(drop_pos);
        in_support[dropped] = false;
        theta[dropped] = 0.0;
    }
}

/// Reduced active set: parametrize the affine feasible set
/// `{theta in span(basis), 1'theta = 1}` as `theta = t + N u` with orthonormal
/// `N`, then run a bound active set on the coordinates in `u`-space.
fn solve_reduced(problem: &SimplexLsProblem, basis: &DMatrix<f64>, tol: f64) -> Result<StrategyExit> {
    let d = problem.dim();
    let rows = problem.rows();
    let gram = &problem.gram;
    let gtarget = &problem.gtarget;
    let q0 = basis.ncols();

    // Particular point with unit coordinate sum, and feasible directions.
    let w = basis.transpose() * DVector::from_element(d, 1.0);
    let wnorm = w.norm();
    if wnorm <= 1e-12 * (d as f64).sqrt() {
        // The subspace is orthogonal to the all-ones vector, so no point in
        // it can sum to one.
        return Err(Error::Infeasible { gap: 1.0 });
    }
    let t = basis * (&w / (wnorm * wnorm));
    let nbasis = basis * householder_complement(&w);
    let m = nbasis.ncols();
    debug_assert_eq!(m, q0 - 1);

    if m == 0 {
        let min_t = t.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_t < -1e-10 {
            return Err(Error::Infeasible { gap: -min_t });
        }
        return Ok(StrategyExit {
            theta: t,
            parts: CertParts::Reduced { nbasis, lambda: Vec::new() },
            iterations: 1,
        });
    }

    // Reduced quadratic data: f(t + N u) up to a constant.
    let gn = gram * &nbasis; // D x m
    let hu = nbasis.transpose() * &gn * (2.0 / rows as f64); // m x m
    let gu0 = (nbasis.transpose() * (gram * &t - gtarget)) * (2.0 / rows as f64); // m

    let mut u = DVector::<f64>::zeros(m);
    let mut theta = &t + &nbasis * &u;
    let mut iterations = 0usize;

    // Phase 1: Gauss-Newton on the squared bound violations.
    let violation = |th: &DVector<f64>| -> f64 {
        th.iter().map(|&v| if v < 0.0 { v * v } else { 0.0 }).sum::<f64>()
    };
    let mut psi = violation(&theta);
    for _ in 0..200 {
        iterations += 1;
        let viol: Vec<usize> = (0..d).filter(|&i| theta[i] < -1e-13).collect();
        if viol.is_empty() {
            break;
        }
        let mut av = DMatrix::zeros(viol.len(), m);
        let mut rv = DVector::zeros(viol.len());
        for (r, &i) in viol.iter().enumerate() {
            av.set_row(r, &nbasis.row(i));
            rv[r] = -theta[i];
        }
        let mut ata = av.transpose() * &av;
        let ridge = 1e-12 * (1.0 + ata.diagonal().amax());
        for i in 0..m {
            ata[(i, i)] += ridge;
        }
        let du = solve_square(&ata, &(av.transpose() * rv));
        // Backtracking on the violation measure.
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let u_try = &u + &du * step;
            let th_try = &t + &nbasis * &u_try;
            let psi_try = violation(&th_try);
            if psi_try < psi * (1.0 - 1e-12) {
                u = u_try;
                theta = th_try;
                psi = psi_try;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if psi.sqrt() > 1e-10 {
        return Err(Error::Infeasible { gap: psi.sqrt() });
    }

    // Phase 2: bound active set in the reduced coordinates.
    let mut working: Vec<usize> = Vec::new();
    let budget = 100 * d.max(m) + 10 * m;
    loop {
        iterations += 1;
        if iterations > budget {
            return Err(Error::NonConvergence { iterations, kkt_residual: f64::NAN });
        }

        let gu = &hu * &u + &gu0;
        let nw = working.len();
        let mut kkt = DMatrix::zeros(m + nw, m + nw);
        let mut rhs = DVector::zeros(m + nw);
        kkt.view_mut((0, 0), (m, m)).copy_from(&hu);
        for (r, &i) in working.iter().enumerate() {
            for c in 0..m {
                kkt[(m + r, c)] = nbasis[(i, c)];
                kkt[(c, m + r)] = nbasis[(i, c)];
            }
        }
        rhs.rows_mut(0, m).copy_from(&(-&gu));
        let sol = solve_square(&kkt, &rhs);
        let du = sol.rows(0, m).clone_owned();
        let lam_eq: Vec<f64> = (0..nw).map(|r| sol[m + r]).collect();

        if du.amax() <= 1e-12 * (1.0 + u.amax()) {
            // Stationary on the working set; check bound multipliers.
            let lambda: Vec<f64> = lam_eq.iter().map(|&v| -v).collect();
            let (mut worst, mut worst_pos) = (f64::INFINITY, usize::MAX);
            for (rpos, &l) in lambda.iter().enumerate() {
                if l < worst {
                    worst = l;
                    worst_pos = rpos;
                }
            }
            if worst_pos == usize::MAX || worst >= -0.5 * tol {
                let lam_pairs: Vec<(usize, f64)> =
                    working.iter().copied().zip(lambda).collect();
                for &i in &working {
                    theta[i] = 0.0;
                }
                return Ok(StrategyExit {
                    theta,
                    parts: CertParts::Reduced { nbasis, lambda: lam_pairs },
                    iterations,
                });
            }
            working.remove(worst_pos);
            continue;
        }

        // Ratio test against the inactive bounds.
        let steps = &nbasis * &du; // change of every theta coordinate
        let mut alpha = 1.0f64;
        let mut blocker = usize::MAX;
        for i in 0..d {
            if working.contains(&i) {
                continue;
            }
            let s = steps[i];
            if s < -1e-15 {
                let a = theta[i].max(0.0) / (-s);
                if a < alpha {
                    alpha = a;
                    blocker = i;
                }
            }
        }
        u.axpy(alpha, &du, 1.0);
        theta = &t + &nbasis * &u;
        for &i in &working {
            theta[i] = 0.0;
        }
        if blocker != usize::MAX && alpha < 1.0 {
            theta[blocker] = 0.0;
            working.push(blocker);
        }
    }
}

/// Orthonormal basis of the hyperplane orthogonal to `w`, as the trailing
/// columns of the Householder reflector mapping `e_1` onto `w / ||w||`.
fn householder_complement(w: &DVector<f64>) -> DMatrix<f64> {
    let q = w.len();
    let wn = w.norm();
    let mut v = w.clone();
    let s = if v[0] >= 0.0 { -wn } else { wn };
    v[0] -= s;
    let vn2 = v.norm_squared();
    let mut out = DMatrix::zeros(q, q.saturating_sub(1));
    for col in 1..q {
        let scale = if vn2 > 0.0 { 2.0 * v[col] / vn2 } else { 0.0 };
        for r in 0..q {
            let e = if r == col { 1.0 } else { 0.0 };
            out[(r, col - 1)] = e - scale * v[r];
        }
    }
    out
}

/// KKT residual of `theta` measured from the raw problem data, using the
/// strategy's multiplier bookkeeping.
fn certificate(
    problem: &SimplexLsProblem,
    eq: Option<&EqConstraint>,
    theta: &DVector<f64>,
    parts: &CertParts,
    iterations: usize,
    tol: f64,
) -> SolveCertificate {
    let rows = problem.rows() as f64;
    let resid = &problem.target - &problem.design * theta;
    let objective = resid.norm_squared() / rows;

    let g = (&problem.gram * theta - &problem.gtarget) * (2.0 / rows);

    let sum_err = (theta.sum() - 1.0).abs();
    let min_theta = theta.iter().cloned().fold(f64::INFINITY, f64::min);
    let eq_violation = match eq {
        None => 0.0,
        Some(EqConstraint::Rows(rows_mat)) => (rows_mat * theta).amax(),
        Some(EqConstraint::SubspaceBasis(basis)) => {
            // ||eq * theta||_inf <= || (I - B B') theta ||_2 for orthonormal
            // complement rows.
            (theta - basis * (basis.transpose() * theta)).norm()
        }
    };
    let primal = sum_err.max((-min_theta).max(0.0)).max(eq_violation);

    let (stationarity, dual, complementarity) = match parts {
        CertParts::Support { support, mu } => {
            let mut stat = 0.0f64;
            let mut comp = 0.0f64;
            for &j in support {
                stat = stat.max((g[j] + mu).abs());
                comp = comp.max((theta[j] * (g[j] + mu)).abs());
            }
            let mut dual = 0.0f64;
            let in_support: Vec<bool> = {
                let mut v = vec![false; theta.len()];
                for &j in support {
                    v[j] = true;
                }
                v
            };
            for i in 0..theta.len() {
                if !in_support[i] {
                    dual = dual.max(-(g[i] + mu));
                    comp = comp.max((theta[i] * (g[i] + mu)).abs());
                }
            }
            (stat, dual.max(0.0), comp)
        }
        CertParts::Reduced { nbasis, lambda } => {
            let mut gl = g.clone();
            for &(i, l) in lambda {
                gl[i] -= l;
            }
            let stat = if nbasis.ncols() == 0 {
                0.0
            } else {
                (nbasis.transpose() * gl).amax()
            };
            let mut dual = 0.0f64;
            let mut comp = 0.0f64;
            for &(i, l) in lambda {
                dual = dual.max(-l);
                comp = comp.max((theta[i] * l).abs());
            }
            (stat, dual.max(0.0), comp)
        }
    };

    let kkt_residual = primal.max(stationarity).max(dual).max(complementarity);
    SolveCertificate {
        objective,
        kkt_residual,
        iterations,
        feasible: primal <= 10.0 * tol,
    }
}
