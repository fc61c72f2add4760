//! Ill-posedness diagnostics: the expected Gram matrix of the kernel over
//! grid-point pairs, its minimum eigenvalue, the implied ill-posedness
//! measure, and singular-value spectra.
//!
//! The Gram expectation has no closed form, so it is estimated by Monte
//! Carlo over draws of the conditioning variable. With a shared draw sample
//! and nested grids the Gram of the smaller grid is a principal submatrix of
//! the larger one, which forces the minimum eigenvalue to be nonincreasing
//! in the grid size.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kernels::{duration_kernel, logit_choice_prob_into, CovariateBlock, DurationPoint};
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Kernel whose Gram structure is being probed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    /// Multinomial logit choice probabilities; draws are uniform covariates.
    Logit { products: usize, chars: usize },
    /// Two-spell first-passage duration kernel; draws are uniform spell pairs
    /// on `(0, t_max]`. Grid points are (drift, barrier) with barrier > 0.
    Duration { t_max: f64 },
}

impl KernelKind {
    pub fn tag(&self) -> &'static str {
        match self {
            KernelKind::Logit { .. } => "logit",
            KernelKind::Duration { .. } => "duration",
        }
    }

    fn feature_dim(&self) -> usize {
        match self {
            KernelKind::Logit { products, .. } => products + 1,
            KernelKind::Duration { .. } => 1,
        }
    }

    fn validate(&self, grid: &Grid) -> Result<()> {
        match self {
            KernelKind::Logit { products, chars } => {
                if *products == 0 || *chars == 0 {
                    return Err(Error::InvalidParameter("logit kernel needs products >= 1, chars >= 1".into()));
                }
                if grid.dim() != *chars {
                    return Err(Error::DimensionMismatch(format!(
                        "grid dimension {} differs from kernel characteristics {chars}",
                        grid.dim()
                    )));
                }
            }
            KernelKind::Duration { t_max } => {
                if t_max.is_nan() || *t_max <= 0.0 {
                    return Err(Error::InvalidParameter("duration kernel needs t_max > 0".into()));
                }
                if grid.dim() != 2 {
                    return Err(Error::DimensionMismatch(format!(
                        "duration kernel needs (drift, barrier) grids, got dimension {}",
                        grid.dim()
                    )));
                }
                for d in 0..grid.len() {
                    if grid.point(d)[1] <= 0.0 {
                        return Err(Error::InvalidParameter(format!(
                            "duration grid point {d} has non-positive barrier"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Monte Carlo estimate of the kernel Gram matrix over the grid: entry
/// `(d1, d2)` averages the feature inner product of grid points `d1` and
/// `d2` over `x_draws` draws of the conditioning variable. Symmetric
/// positive semidefinite by construction.
pub fn gram_matrix<R: Rng + ?Sized>(
    grid: &Grid,
    kernel: &KernelKind,
    x_draws: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if x_draws == 0 {
        return Err(Error::InvalidParameter("need at least one draw".into()));
    }
    kernel.validate(grid)?;
    let d = grid.len();
    let fdim = kernel.feature_dim();
    let chunk = 256usize;

    let mut psi = DMatrix::<f64>::zeros(d, d);
    let mut feats = DMatrix::<f64>::zeros(d, fdim * chunk);
    let mut buf = vec![0.0; fdim];
    let mut done = 0usize;
    while done < x_draws {
        let batch = chunk.min(x_draws - done);
        for t in 0..batch {
            match kernel {
                KernelKind::Logit { products, chars } => {
                    let x: Vec<f64> = (0..products * chars).map(|_| rng.gen::<f64>()).collect();
                    let block = CovariateBlock::new(*products, *chars, x)?;
                    for row in 0..d {
                        logit_choice_prob_into(&block, grid.point(row), None, &mut buf)?;
                        for (f, &v) in buf.iter().enumerate() {
                            feats[(row, t * fdim + f)] = v;
                        }
                    }
                }
                KernelKind::Duration { t_max } => {
                    let t1 = (1.0 - rng.gen::<f64>()) * t_max;
                    let t2 = (1.0 - rng.gen::<f64>()) * t_max;
                    for row in 0..d {
                        let p = grid.point(row);
                        let point = DurationPoint::new(p[0], p[1])?;
                        feats[(row, t * fdim)] = duration_kernel(t1, t2, point)?;
                    }
                }
            }
        }
        let view = feats.columns(0, batch * fdim);
        psi.gemm(1.0, &view, &view.transpose(), 1.0);
        done += batch;
    }
    psi /= x_draws as f64;
    Ok(psi)
}

/// Smallest eigenvalue of a symmetric matrix, clamped to zero when it is
/// within -1e-12 of zero. Inputs asymmetric beyond 1e-10 are rejected.
pub fn min_eigenvalue(psi: &DMatrix<f64>) -> Result<f64> {
    if psi.nrows() != psi.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{}",
            psi.nrows(),
            psi.ncols()
        )));
    }
    let mut asym = 0.0f64;
    for i in 0..psi.nrows() {
        for j in (i + 1)..psi.ncols() {
            asym = asym.max((psi[(i, j)] - psi[(j, i)]).abs());
        }
    }
    if asym > 1e-10 {
        return Err(Error::Asymmetric(asym));
    }
    let sym = (psi + psi.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if (-1e-12..0.0).contains(&min) {
        Ok(0.0)
    } else {
        Ok(min)
    }
}

/// Ill-posedness measure `xi_min^(-1/2)`; infinite when the minimum
/// eigenvalue is numerically zero.
pub fn ill_posedness(psi: &DMatrix<f64>) -> Result<f64> {
    Ok(tau_from_xi(min_eigenvalue(psi)?))
}

pub(crate) fn tau_from_xi(xi: f64) -> f64 {
    if xi <= 1e-300 {
        f64::INFINITY
    } else {
        1.0 / xi.sqrt()
    }
}

/// All singular values of a design matrix, sorted nonincreasing.
pub fn singular_spectrum(design: &DMatrix<f64>) -> Vec<f64> {
    let svd = design.clone().svd(false, false);
    let mut vals: Vec<f64> = svd.singular_values.iter().copied().collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    vals
}

/// Least-squares slope of `ln sigma_k` against `k` over the numerically
/// nonzero part of the spectrum; `None` without at least two usable values.
pub fn log_spectrum_slope(spectrum: &[f64]) -> Option<f64> {
    let smax = spectrum.first().copied().unwrap_or(0.0);
    if smax <= 0.0 {
        return None;
    }
    let pts: Vec<(f64, f64)> = spectrum
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > smax * 1e-13)
        .map(|(k, &s)| ((k + 1) as f64, s.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

/// Full diagnostics bundle for one kernel and grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub kernel_tag: String,
    pub mc_draws: usize,
    /// Monte Carlo Gram matrix, row-major.
    pub psi: Vec<Vec<f64>>,
    pub xi_min: f64,
    /// `None` encodes an infinite ill-posedness measure.
    pub tau_d: Option<f64>,
    /// Singular values implied by the Gram spectrum, nonincreasing.
    pub spectrum: Vec<f64>,
    pub log_spectrum_slope: Option<f64>,
}

impl DiagnosticsReport {
    /// Two-column CSV `k,sigma_k` of the spectrum.
    pub fn spectrum_csv(&self) -> String {
        let mut out = String::from("k,sigma_k\n");
        for (k, s) in self.spectrum.iter().enumerate() {
            out.push_str(&format!("{},{}\n", k + 1, s));
        }
        out
    }

    pub fn tau_d_value(&self) -> f64 {
        self.tau_d.unwrap_or(f64::INFINITY)
    }
}

/// Runs the full diagnostic: Gram estimate, minimum eigenvalue,
/// ill-posedness, and the spectrum implied by the Gram eigenvalues (the
/// singular values of the draw-normalized feature matrix).
pub fn diagnose<R: Rng + ?Sized>(
    grid: &Grid,
    kernel: &KernelKind,
    x_draws: usize,
    rng: &mut R,
) -> Result<DiagnosticsReport> {
    let psi = gram_matrix(grid, kernel, x_draws, rng)?;
    let eig = nalgebra::SymmetricEigen::new((&psi + psi.transpose()) * 0.5);
    let mut lams: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    lams.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let min = lams.last().copied().unwrap_or(0.0);
    let xi_min = if (-1e-12..0.0).contains(&min) { 0.0 } else { min };
    let spectrum: Vec<f64> = lams.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let tau = tau_from_xi(xi_min);
    let slope = log_spectrum_slope(&spectrum);
    Ok(DiagnosticsReport {
        kernel_tag: kernel.tag().to_string(),
        mc_draws: x_draws,
        psi: (0..psi.nrows())
            .map(|i| psi.row(i).iter().copied().collect())
            .collect(),
        xi_min,
        tau_d: if tau.is_finite() { Some(tau) } else { None },
        spectrum,
        log_spectrum_slope: slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{halton_grid, Grid, GridSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaChaRng;

    fn rng(seed: u64) -> ChaChaRng {
        ChaChaRng::seed_from_u64(seed)
    }

    fn grid_from(points: &[[f64; 2]]) -> Grid {
        let flat: Vec<f64> = points.iter().flatten().copied().collect();
        let spec = GridSpec::new(points.len(), vec![(-1e9, 1e9), (-1e9, 1e9)]).unwrap();
        Grid::from_parts_for_tests(flat, spec)
    }

    #[test]
    fn gram_origin_point_is_exactly_quarter() {
        // Four outcomes at probability 1/4 each give sum of squares 0.25
        // regardless of the covariate draw.
        let grid = grid_from(&[[0.0, 0.0]]);
        let kernel = KernelKind::Logit { products: 3, chars: 2 };
        let psi = gram_matrix(&grid, &kernel, 100, &mut rng(1)).unwrap();
        assert!((psi[(0, 0)] - 0.25).abs() < 1e-14);
        assert!((min_eigenvalue(&psi).unwrap() - 0.25).abs() < 1e-14);
        assert!((ill_posedness(&psi).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_grid_point_gives_singular_gram() {
        let grid = grid_from(&[[1.0, -0.5], [1.0, -0.5]]);
        let kernel = KernelKind::Logit { products: 3, chars: 2 };
        let psi = gram_matrix(&grid, &kernel, 200, &mut rng(2)).unwrap();
        assert!((psi[(0, 0)] - psi[(0, 1)]).abs() < 1e-15);
        let xi = min_eigenvalue(&psi).unwrap();
        assert!(xi.abs() < 1e-10);
        assert!(ill_posedness(&psi).unwrap().is_infinite());
    }

    #[test]
    fn gram_entries_bounded_for_logit() {
        let grid = halton_grid(&GridSpec::default_box(12, 2).unwrap()).unwrap();
        let kernel = KernelKind::Logit { products: 3, chars: 2 };
        let psi = gram_matrix(&grid, &kernel, 500, &mut rng(3)).unwrap();
        for v in psi.iter() {
            assert!(*v > 0.0 && *v <= 1.0, "entry {v}");
        }
        // symmetry within accumulation dust
        for i in 0..12 {
            for j in 0..12 {
                assert!((psi[(i, j)] - psi[(j, i)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_two_point_regression_value() {
        // Frozen from a seeded high-draw run of this generator.
        let grid = grid_from(&[[0.0, 0.0], [5.0, 5.0]]);
        let kernel = KernelKind::Logit { products: 3, chars: 2 };
        let psi = gram_matrix(&grid, &kernel, 100_000, &mut rng(777)).unwrap();
        assert!((psi[(0, 0)] - 0.25).abs() < 1e-13);
        // The origin row is uniform over outcomes, so the inner product with
        // any other point collapses to 0.25 exactly; the Monte Carlo average
        // can only deviate by accumulation dust.
        assert!(
            (psi[(0, 1)] - 0.25).abs() < 1e-12,
            "off-diagonal drifted: {}",
            psi[(0, 1)]
        );
    }

    #[test]
    fn min_eigenvalue_basics() {
        assert_eq!(min_eigenvalue(&DMatrix::identity(3, 3)).unwrap(), 1.0);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.5]));
        assert_eq!(min_eigenvalue(&d).unwrap(), 0.5);
        let mut bad = DMatrix::identity(2, 2);
        bad[(0, 1)] = 1e-3;
        assert!(matches!(min_eigenvalue(&bad), Err(Error::Asymmetric(_))));
    }

    #[test]
    fn ill_posedness_identity_and_quarter() {
        assert_eq!(ill_posedness(&DMatrix::identity(4, 4)).unwrap(), 1.0);
        let quarter = DMatrix::from_element(1, 1, 0.25);
        assert_eq!(ill_posedness(&quarter).unwrap(), 2.0);
        assert!((tau_from_xi(0.0)).is_infinite());
    }

    #[test]
    fn singular_spectrum_identity_and_rank_one() {
        let spec = singular_spectrum(&DMatrix::identity(4, 4));
        for v in &spec {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let rank1 = DMatrix::from_fn(5, 3, |r, c| ((r + 1) * (c + 1)) as f64);
        let spec = singular_spectrum(&rank1);
        assert!(spec[0] > 0.0);
        for v in &spec[1..] {
            assert!(*v <= 1e-10 * spec[0]);
        }
    }

    #[test]
    fn interlacing_on_nested_grids_with_shared_draws() {
        let kernel = KernelKind::Logit { products: 3, chars: 2 };
        let grid = halton_grid(&GridSpec::default_box(40, 2).unwrap()).unwrap();
        let psi40 = gram_matrix(&grid, &kernel, 400, &mut rng(5)).unwrap();
        let xi = |d: usize| min_eigenvalue(&psi40.view((0, 0), (d, d)).clone_owned()).unwrap();
        let (x5, x15, x40) = (xi(5), xi(15), xi(40));
        assert!(x40 <= x15 + 1e-12, "{x40} vs {x15}");
        assert!(x15 <= x5 + 1e-12, "{x15} vs {x5}");
    }

    #[test]
    fn gram_eigenvalues_match_scaled_design_singular_values() {
        // Build the Gram by accumulation and, from the identical draw
        // sequence, the stacked feature matrix scaled by 1/sqrt(draws); the
        // Gram eigenvalues must equal the squared singular values.
        let kernel = KernelKind::Logit { products: 3, chars: 2 };
        let grid = halton_grid(&GridSpec::default_box(10, 2).unwrap()).unwrap();
        let draws = 300usize;
        let psi = gram_matrix(&grid, &kernel, draws, &mut rng(9)).unwrap();

        let mut r = rng(9);
        let mut design = DMatrix::zeros(4 * draws, 10);
        let mut buf = vec![0.0; 4];
        for t in 0..draws {
            let x: Vec<f64> = (0..6).map(|_| r.gen::<f64>()).collect();
            let block = CovariateBlock::new(3, 2, x).unwrap();
            for d in 0..10 {
                logit_choice_prob_into(&block, grid.point(d), None, &mut buf).unwrap();
                for (f, &v) in buf.iter().enumerate() {
                    design[(t * 4 + f, d)] = v;
                }
            }
        }
        design /= (draws as f64).sqrt();
        let sv = singular_spectrum(&design);
        let eig = nalgebra::SymmetricEigen::new(psi);
        let mut lams: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        lams.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (l, s) in lams.iter().zip(&sv) {
            assert!((l - s * s).abs() <= 1e-8 * lams[0], "{l} vs {}", s * s);
        }
    }

    #[test]
    fn spectrum_regression_for_moderate_design() {
        // Frozen from a seeded run: spectrum of the (n=1000, D=100) logit
        // regression design, leading values and a mid-spectrum one, plus the
        // fitted log-decay slope.
        use crate::estimator::build_design;
        use crate::kernels::{simulate_dataset, Dgp};
        let mut r = crate::mc::replication_rng(883, 0);
        let data = simulate_dataset(&Dgp::default(), 1000, 3, 2, &mut r).unwrap();
        let grid = halton_grid(&GridSpec::default_box(100, 2).unwrap()).unwrap();
        let (design, _) = build_design(&data, &grid).unwrap();
        let spec = singular_spectrum(&design);
        let frozen_head = [
            140.65101054854375,
            71.24473651834045,
            50.34785264539361,
            18.108983236396792,
            13.80515869110733,
            9.338231758967206,
            6.228972951055581,
            5.759184048389884,
        ];
        for (got, want) in spec.iter().zip(frozen_head) {
            assert!((got - want).abs() <= 1e-8 * frozen_head[0], "{got} vs {want}");
        }
        assert!((spec[31] - 8.852051572207001e-2).abs() <= 1e-9);
        let slope = log_spectrum_slope(&spec).unwrap();
        assert!((slope - (-0.12962505745914107)).abs() <= 1e-9, "{slope}");
    }

    #[test]
    fn ill_posedness_times_sqrt_xi_is_one() {
        let grid = halton_grid(&GridSpec::default_box(8, 2).unwrap()).unwrap();
        let kernel = KernelKind::Logit { products: 3, chars: 2 };
        let psi = gram_matrix(&grid, &kernel, 300, &mut rng(11)).unwrap();
        let xi = min_eigenvalue(&psi).unwrap();
        let tau = ill_posedness(&psi).unwrap();
        if tau.is_finite() {
            assert!((tau * xi.sqrt() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn duration_kernel_report_is_finite() {
        let spec = GridSpec::new(9, vec![(0.5, 2.0), (0.5, 2.0)]).unwrap();
        let grid = halton_grid(&spec).unwrap();
        let kernel = KernelKind::Duration { t_max: 5.0 };
        let report = diagnose(&grid, &kernel, 2000, &mut rng(13)).unwrap();
        assert_eq!(report.kernel_tag, "duration");
        assert!(report.xi_min.is_finite());
        assert!(report.spectrum.iter().all(|s| s.is_finite()));
        assert!(report.spectrum.windows(2).all(|w| w[0] >= w[1]));
        // Frozen smoke values from this seeded configuration.
        assert!(
            (report.spectrum[0] - DURATION_SIGMA1_FROZEN).abs() < 1e-9,
            "leading singular value drifted: {}",
            report.spectrum[0]
        );
    }

    // Tabulated once from the seeded run above.
    const DURATION_SIGMA1_FROZEN: f64 = 0.41910910604309237;

    #[test]
    fn duration_kernel_rejects_bad_grids() {
        let spec = GridSpec::new(4, vec![(0.5, 2.0), (-1.0, 2.0)]).unwrap();
        let grid = halton_grid(&spec).unwrap();
        let kernel = KernelKind::Duration { t_max: 5.0 };
        assert!(gram_matrix(&grid, &kernel, 10, &mut rng(1)).is_err());
    }

    #[test]
    fn report_serializes_and_renders_spectrum_csv() {
        let grid = grid_from(&[[0.0, 0.0]]);
        let kernel = KernelKind::Logit { products: 3, chars: 2 };
        let report = diagnose(&grid, &kernel, 50, &mut rng(15)).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"kernel_tag\":\"logit\""));
        let csv = report.spectrum_csv();
        assert!(csv.starts_with("k,sigma_k\n1,0.5"));
        assert!((report.tau_d_value() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn log_slope_of_geometric_decay_is_log_ratio() {
        let spec: Vec<f64> = (0..20).map(|k| 3.0 * 0.5f64.powi(k)).collect();
        let slope = log_spectrum_slope(&spec).unwrap();
        assert!((slope - 0.5f64.ln()).abs() < 1e-12);
    }
}
