//! The fixed-grid mixing-distribution estimator: least squares of one-hot
//! choices on grid-point choice probabilities, constrained to the simplex,
//! plus a variance-reducing variant constrained to the span of the leading
//! right singular directions of the design. CDF and quantile functionals of
//! the fitted discrete measure live here too.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kernels::{logit_choice_prob_into, ChoiceDataset};
use crate::solver::{EqConstraint, SimplexLsProblem, SolveCertificate, WeightVector};
use nalgebra::{DMatrix, DVector};

/// A fitted discrete mixing measure over the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub weights: WeightVector,
    pub grid: Grid,
    /// Fitted regression errors, one per (individual, inside good) row.
    pub residuals: DVector<f64>,
    pub certificate: SolveCertificate,
    /// Number of retained singular directions, for regularized fits only.
    /// Can exceed the requested order when feasibility required escalation.
    pub effective_p: Option<usize>,
}

impl FitResult {
    /// Export view: grid, weights, and solve diagnostics.
    pub fn to_json(&self) -> serde_json::Value {
        let points: Vec<Vec<f64>> = (0..self.grid.len())
            .map(|d| self.grid.point(d).to_vec())
            .collect();
        serde_json::json!({
            "grid": {
                "points": points,
                "bounds": self.grid.spec().bounds,
            },
            "weights": self.weights.as_slice(),
            "objective": self.certificate.objective,
            "kkt_residual": self.certificate.kkt_residual,
            "effective_p": self.effective_p,
        })
    }
}

/// Builds the regression: one row per (individual, inside good) pair in
/// individual-major order (an `nJ x D` design), one column per grid point,
/// each entry the logit choice probability of that inside good at that grid
/// point. The target is the matching one-hot choice indicator, identically
/// zero across an individual's rows when the outside good was chosen.
///
/// The outside good contributes no row: its indicator is determined by the
/// inside ones, and stacking it would only duplicate that information.
pub fn build_design(data: &ChoiceDataset, grid: &Grid) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if grid.dim() != data.chars() {
        return Err(Error::DimensionMismatch(format!(
            "grid dimension {} differs from data characteristics {}",
            grid.dim(),
            data.chars()
        )));
    }
    let n = data.len();
    let inside = data.products();
    let d = grid.len();
    let mut design = DMatrix::zeros(n * inside, d);
    let mut target = DVector::zeros(n * inside);
    let mut probs = vec![0.0; inside + 1];
    for i in 0..n {
        let block = data.covariates(i);
        for col in 0..d {
            logit_choice_prob_into(&block, grid.point(col), None, &mut probs)?;
            for (jj, &p) in probs.iter().skip(1).enumerate() {
                design[(i * inside + jj, col)] = p;
            }
        }
        if data.choice(i) >= 1 {
            target[i * inside + (data.choice(i) as usize - 1)] = 1.0;
        }
    }
    Ok((design, target))
}

/// Plain fixed-grid fit: simplex-constrained least squares.
pub fn fit_fixed_grid(data: &ChoiceDataset, grid: &Grid) -> Result<FitResult> {
    let problem = prepare(data, grid)?;
    fit_plain_prepared(&problem, grid)
}

/// Regularized fit: the weights are additionally constrained to the span of
/// the `p` leading right singular directions of the design matrix (the
/// trailing directions are annihilated). If that span misses the simplex the
/// order is escalated one direction at a time until feasible; the order
/// actually used is recorded as `effective_p`.
pub fn fit_pcr(data: &ChoiceDataset, grid: &Grid, p: usize) -> Result<FitResult> {
    let problem = prepare(data, grid)?;
    fit_pcr_prepared(&problem, grid, p)
}

/// Builds the regression problem once so both estimators can share it.
pub(crate) fn prepare(data: &ChoiceDataset, grid: &Grid) -> Result<SimplexLsProblem> {
    let (design, target) = build_design(data, grid)?;
    SimplexLsProblem::new(design, target)
}

pub(crate) fn fit_plain_prepared(problem: &SimplexLsProblem, grid: &Grid) -> Result<FitResult> {
    let (weights, certificate) = crate::solver::solve_with(problem, None, 1e-8)?;
    Ok(assemble(problem, grid, weights, certificate, None))
}

pub(crate) fn fit_pcr_prepared(
    problem: &SimplexLsProblem,
    grid: &Grid,
    p: usize,
) -> Result<FitResult> {
    let d = grid.len();
    if p == 0 || p > d {
        return Err(Error::InvalidParameter(format!(
            "retained order must lie in 1..={d}, got {p}"
        )));
    }
    if p == d {
        let (weights, certificate) = crate::solver::solve_with(problem, None, 1e-8)?;
        return Ok(assemble(problem, grid, weights, certificate, Some(d)));
    }

    // Right singular directions of the design, via its Gram matrix.
    let eig = nalgebra::SymmetricEigen::new(problem.gram().clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    for p_eff in p..=d {
        if p_eff == d {
            let (weights, certificate) = crate::solver::solve_with(problem, None, 1e-8)?;
            return Ok(assemble(problem, grid, weights, certificate, Some(d)));
        }
        let mut basis = DMatrix::zeros(d, p_eff);
        for (c, &idx) in order.iter().take(p_eff).enumerate() {
            basis.set_column(c, &eig.eigenvectors.column(idx));
        }
        let eq = EqConstraint::SubspaceBasis(basis);
        match crate::solver::solve_with(problem, Some(&eq), 1e-8) {
            Ok((weights, certificate)) => {
                return Ok(assemble(problem, grid, weights, certificate, Some(p_eff)))
            }
            Err(Error::Infeasible { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!("escalation reaches p = D which is always feasible");
}

fn assemble(
    problem: &SimplexLsProblem,
    grid: &Grid,
    weights: WeightVector,
    certificate: SolveCertificate,
    effective_p: Option<usize>,
) -> FitResult {
    let theta = DVector::from_column_slice(weights.as_slice());
    let residuals = problem.target() - problem.design() * theta;
    FitResult {
        weights,
        grid: grid.clone(),
        residuals,
        certificate,
        effective_p,
    }
}

/// CDF of the fitted measure at `a`: total weight of grid points dominated
/// componentwise by `a` (boundary inclusive).
pub fn cdf_at(fit: &FitResult, a: &[f64]) -> f64 {
    assert_eq!(a.len(), fit.grid.dim(), "evaluation point dimension mismatch");
    let mut total = 0.0;
    for d in 0..fit.grid.len() {
        let p = fit.grid.point(d);
        if p.iter().zip(a).all(|(x, bound)| x <= bound) {
            total += fit.weights.get(d);
        }
    }
    total
}

/// Quantile of the fitted marginal on `coord` (1-based): the smallest grid
/// value at which the marginal CDF reaches `tau`. No interpolation between
/// atoms; the estimator is a discrete measure.
pub fn marginal_quantile(fit: &FitResult, coord: usize, tau: f64) -> Result<f64> {
    if coord == 0 || coord > fit.grid.dim() {
        return Err(Error::InvalidParameter(format!(
            "coordinate must lie in 1..={}, got {coord}",
            fit.grid.dim()
        )));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidParameter(format!("quantile level must lie in (0,1), got {tau}")));
    }
    let c = coord - 1;
    let mut atoms: Vec<(f64, f64)> = (0..fit.grid.len())
        .map(|d| (fit.grid.point(d)[c], fit.weights.get(d)))
        .collect();
    atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));

    let mut cum = 0.0;
    let mut idx = 0;
    while idx < atoms.len() {
        let value = atoms[idx].0;
        // fold in every atom sharing this coordinate value
        while idx < atoms.len() && atoms[idx].0 == value {
            cum += atoms[idx].1;
            idx += 1;
        }
        if cum >= tau {
            return Ok(value);
        }
    }
    Ok(atoms.last().expect("grid is non-empty").0)
}
