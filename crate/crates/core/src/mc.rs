//! Monte Carlo harness: runs replicated simulation cells, fits both
//! estimators on each replication, and aggregates the CDF and quantile loss
//! metrics over a fixed evaluation lattice.
//!
//! Replication streams are counter-based: one cipher key per cell seed, one
//! stream per replication index. Replications are embarrassingly parallel
//! and aggregation always walks them in replication order, so results are
//! bit-identical regardless of worker count or scheduling.

use crate::error::{Error, Result};
use crate::estimator::{self, cdf_at, marginal_quantile, FitResult};
use crate::grid::{halton_grid, GridSpec};
use crate::kernels::{simulate_dataset, Dgp, GaussianMixtureDgp};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;

/// One experiment cell: a sample size / grid size pair with its replication
/// count, regularization order, seed, and quantile levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McCell {
    pub n: usize,
    pub d: usize,
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    pub seed: u64,
    #[serde(default = "default_quantile_levels")]
    pub quantile_levels: Vec<f64>,
    /// Retain per-replication solve records in the result.
    #[serde(default)]
    pub keep_replications: bool,
}

fn default_p() -> usize {
    5
}

fn default_m() -> usize {
    500
}

fn default_quantile_levels() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}

impl McCell {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.m == 0 {
            return Err(Error::InvalidParameter("cell counts must be positive".into()));
        }
        if self.p == 0 || self.p > self.d {
            return Err(Error::InvalidParameter(format!(
                "retained order must lie in 1..={}, got {}",
                self.d, self.p
            )));
        }
        if self.quantile_levels.is_empty()
            || self.quantile_levels.iter().any(|t| !(*t > 0.0 && *t < 1.0))
        {
            return Err(Error::InvalidParameter("quantile levels must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// Equally spaced evaluation lattice over a box, endpoints included, rows in
/// lexicographic order.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalLattice {
    points: Vec<f64>,
    dim: usize,
    per_dim: usize,
}

impl EvalLattice {
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, l: usize) -> &[f64] {
        &self.points[l * self.dim..(l + 1) * self.dim]
    }
}

/// Builds the lattice with `per_dim` points per dimension at spacing
/// `(hi - lo) / (per_dim - 1)`.
pub fn eval_lattice(bounds: &[(f64, f64)], per_dim: usize) -> Result<EvalLattice> {
    if per_dim < 2 {
        return Err(Error::InvalidParameter("need at least two points per dimension".into()));
    }
    if bounds.is_empty() {
        return Err(Error::InvalidParameter("need at least one dimension".into()));
    }
    for &(lo, hi) in bounds {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::InvalidParameter(format!("bad bounds ({lo}, {hi})")));
        }
    }
    let dim = bounds.len();
    let total = per_dim.pow(dim as u32);
    let mut points = Vec::with_capacity(total * dim);
    let mut idx = vec![0usize; dim];
    loop {
        for (k, &(lo, hi)) in bounds.iter().enumerate() {
            let step = (hi - lo) / (per_dim - 1) as f64;
            points.push(lo + idx[k] as f64 * step);
        }
        // odometer with the last dimension fastest, so rows sort
        // lexicographically
        let mut k = dim;
        loop {
            if k == 0 {
                return Ok(EvalLattice { points, dim, per_dim });
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < per_dim {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Mean absolute deviation of the replicated CDFs from the truth, averaged
/// over replications and lattice points.
pub fn integrated_abs_bias(per_rep_cdfs: &[Vec<f64>], truth: &[f64]) -> Result<f64> {
    check_metric_shapes(per_rep_cdfs, truth)?;
    let (m, l) = (per_rep_cdfs.len(), truth.len());
    let mut total = 0.0;
    for rep in per_rep_cdfs {
        for (a, b) in rep.iter().zip(truth) {
            total += (a - b).abs();
        }
    }
    Ok(total / (m * l) as f64)
}

/// Integrated absolute bias of the replication-mean CDF: average the fitted
/// CDFs over replications first, then integrate the absolute deviation from
/// the truth over the lattice. Unlike [`integrated_abs_bias`] this lets
/// replication noise cancel, isolating the systematic error.
pub fn integrated_mean_bias(per_rep_cdfs: &[Vec<f64>], truth: &[f64]) -> Result<f64> {
    check_metric_shapes(per_rep_cdfs, truth)?;
    let (m, l) = (per_rep_cdfs.len(), truth.len());
    let mut total = 0.0;
    for j in 0..l {
        let mean: f64 = per_rep_cdfs.iter().map(|rep| rep[j]).sum::<f64>() / m as f64;
        total += (mean - truth[j]).abs();
    }
    Ok(total / l as f64)
}

/// Root mean squared deviation of the replicated CDFs from the truth.
pub fn integrated_rmse(per_rep_cdfs: &[Vec<f64>], truth: &[f64]) -> Result<f64> {
    check_metric_shapes(per_rep_cdfs, truth)?;
    let (m, l) = (per_rep_cdfs.len(), truth.len());
    let mut total = 0.0;
    for rep in per_rep_cdfs {
        for (a, b) in rep.iter().zip(truth) {
            total += (a - b) * (a - b);
        }
    }
    Ok((total / (m * l) as f64).sqrt())
}

fn check_metric_shapes(per_rep_cdfs: &[Vec<f64>], truth: &[f64]) -> Result<()> {
    if per_rep_cdfs.is_empty() || truth.is_empty() {
        return Err(Error::DimensionMismatch("metrics need at least one replication and one point".into()));
    }
    if let Some(bad) = per_rep_cdfs.iter().find(|r| r.len() != truth.len()) {
        return Err(Error::DimensionMismatch(format!(
            "replication has {} values, truth has {}",
            bad.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Root mean squared error of replicated quantile estimates about the truth.
pub fn quantile_rmse(per_rep_quantiles: &[f64], truth: f64) -> Result<f64> {
    if per_rep_quantiles.is_empty() {
        return Err(Error::InvalidParameter("need at least one replication".into()));
    }
    let m = per_rep_quantiles.len() as f64;
    let total: f64 = per_rep_quantiles.iter().map(|q| (q - truth) * (q - truth)).sum();
    Ok((total / m).sqrt())
}

/// Which estimator a metric refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Plain,
    Pcr,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorKind::Plain => write!(f, "plain"),
            EstimatorKind::Pcr => write!(f, "pcr"),
        }
    }
}

/// One quantile RMSE entry, keyed by estimator, coordinate, and level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileRmse {
    pub estimator: EstimatorKind,
    pub coord: usize,
    pub tau: f64,
    pub rmse: f64,
}

/// Per-replication solve record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub m: usize,
    pub objective_plain: f64,
    pub objective_pcr: f64,
    pub kkt_plain: f64,
    pub kkt_pcr: f64,
    pub effective_p: usize,
    pub error: Option<String>,
}

/// Aggregated losses for one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: McCell,
    pub replications_ok: usize,
    /// Integrated absolute bias of the replication-mean CDF.
    pub bias_plain: f64,
    pub bias_pcr: f64,
    pub rmse_plain: f64,
    pub rmse_pcr: f64,
    /// Replication-averaged integrated absolute error of the CDF.
    pub mae_plain: f64,
    pub mae_pcr: f64,
    pub quantile_rmse: Vec<QuantileRmse>,
    pub replications: Option<Vec<RepRecord>>,
}

impl CellResult {
    pub fn quantile_rmse_for(&self, estimator: EstimatorKind, coord: usize, tau: f64) -> Option<f64> {
        self.quantile_rmse
            .iter()
            .find(|q| q.estimator == estimator && q.coord == coord && q.tau == tau)
            .map(|q| q.rmse)
    }
}

/// Experiment-wide configuration shared by every cell: the choice setting,
/// the data generating process, the grid box, and the evaluation lattice
/// with the exact CDF precomputed on it.
#[derive(Clone, Debug)]
pub struct McContext {
    pub products: usize,
    pub chars: usize,
    pub dgp: GaussianMixtureDgp,
    pub bounds: Vec<(f64, f64)>,
    pub lattice: EvalLattice,
    truth_cdf: Vec<f64>,
}

impl McContext {
    pub fn new(
        products: usize,
        chars: usize,
        dgp: GaussianMixtureDgp,
        bounds: Vec<(f64, f64)>,
        eval_per_dim: usize,
    ) -> Result<Self> {
        dgp.validate()?;
        if chars != 2 {
            return Err(Error::InvalidParameter(
                "the mixture DGP draws two-dimensional heterogeneity".into(),
            ));
        }
        if products == 0 {
            return Err(Error::InvalidParameter("need at least one inside good".into()));
        }
        if bounds.len() != chars {
            return Err(Error::DimensionMismatch(format!(
                "{} bounds for {} characteristics",
                bounds.len(),
                chars
            )));
        }
        let lattice = eval_lattice(&bounds, eval_per_dim)?;
        let mut truth_cdf = Vec::with_capacity(lattice.len());
        for l in 0..lattice.len() {
            let p = lattice.point(l);
            truth_cdf.push(dgp.true_cdf([p[0], p[1]])?);
        }
        Ok(Self { products, chars, dgp, bounds, lattice, truth_cdf })
    }

    /// Default experiment: three inside goods, two characteristics, the
    /// default mixture, the [-5,5]^2 box, and an 11x11 lattice.
    pub fn default_study() -> Result<Self> {
        Self::new(3, 2, GaussianMixtureDgp::default(), vec![(-5.0, 5.0); 2], 11)
    }

    pub fn truth_cdf(&self) -> &[f64] {
        &self.truth_cdf
    }
}

/// SplitMix64 step, used to expand a cell seed into a cipher key.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based replication stream: a pure function of `(seed, rep)`, so
/// any execution order reproduces identical draws.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(rep as u64);
    rng
}

struct RepOutcome {
    cdf_plain: Vec<f64>,
    cdf_pcr: Vec<f64>,
    q_plain: Vec<f64>,
    q_pcr: Vec<f64>,
    record: RepRecord,
}

fn run_replication(cell: &McCell, ctx: &McContext, grid: &crate::grid::Grid, rep: usize) -> Result<RepOutcome> {
    let mut rng = replication_rng(cell.seed, rep);
    let dgp = Dgp::GaussianMixture(ctx.dgp.clone());
    let data = simulate_dataset(&dgp, cell.n, ctx.products, ctx.chars, &mut rng)?;
    let problem = estimator::prepare(&data, grid)?;
    let plain = estimator::fit_plain_prepared(&problem, grid)?;
    let pcr = estimator::fit_pcr_prepared(&problem, grid, cell.p)?;

    let eval = |fit: &FitResult| -> Vec<f64> {
        (0..ctx.lattice.len()).map(|l| cdf_at(fit, ctx.lattice.point(l))).collect()
    };
    let cdf_plain = eval(&plain);
    let cdf_pcr = eval(&pcr);

    let mut q_plain = Vec::with_capacity(ctx.chars * cell.quantile_levels.len());
    let mut q_pcr = Vec::with_capacity(ctx.chars * cell.quantile_levels.len());
    for coord in 1..=ctx.chars {
        for &tau in &cell.quantile_levels {
            q_plain.push(marginal_quantile(&plain, coord, tau)?);
            q_pcr.push(marginal_quantile(&pcr, coord, tau)?);
        }
    }

    Ok(RepOutcome {
        cdf_plain,
        cdf_pcr,
        q_plain,
        q_pcr,
        record: RepRecord {
            m: rep,
            objective_plain: plain.certificate.objective,
            objective_pcr: pcr.certificate.objective,
            kkt_plain: plain.certificate.kkt_residual,
            kkt_pcr: pcr.certificate.kkt_residual,
            effective_p: pcr.effective_p.unwrap_or(cell.p),
            error: None,
        },
    })
}

/// Runs one cell: `m` independent replications, both fits per replication on
/// the same dataset and the cell's fixed Halton grid, and the aggregated
/// loss metrics. Errors with [`Error::CellFailed`] when more than 1% of
/// replications fail.
pub fn run_cell(cell: &McCell, ctx: &McContext) -> Result<CellResult> {
    cell.validate()?;
    let grid = halton_grid(&GridSpec::new(cell.d, ctx.bounds.clone())?)?;

    let outcomes: Vec<(usize, std::result::Result<RepOutcome, String>)> = (1..=cell.m)
        .into_par_iter()
        .map(|rep| {
            let out = run_replication(cell, ctx, &grid, rep).map_err(|e| e.to_string());
            (rep, out)
        })
        .collect();

    let failed = outcomes.iter().filter(|(_, o)| o.is_err()).count();
    if failed * 100 > cell.m {
        return Err(Error::CellFailed { failed, total: cell.m });
    }

    // Aggregation walks replications in index order.
    let mut cdf_plain = Vec::with_capacity(cell.m - failed);
    let mut cdf_pcr = Vec::with_capacity(cell.m - failed);
    let mut q_plain: Vec<Vec<f64>> = Vec::new();
    let mut q_pcr: Vec<Vec<f64>> = Vec::new();
    let mut records = Vec::with_capacity(cell.m);
    for (rep, outcome) in outcomes {
        match outcome {
            Ok(out) => {
                cdf_plain.push(out.cdf_plain);
                cdf_pcr.push(out.cdf_pcr);
                q_plain.push(out.q_plain);
                q_pcr.push(out.q_pcr);
                records.push(out.record);
            }
            Err(msg) => records.push(RepRecord {
                m: rep,
                objective_plain: f64::NAN,
                objective_pcr: f64::NAN,
                kkt_plain: f64::NAN,
                kkt_pcr: f64::NAN,
                effective_p: cell.p,
                error: Some(msg),
            }),
        }
    }

    let truth = ctx.truth_cdf();
    let bias_plain = integrated_mean_bias(&cdf_plain, truth)?;
    let bias_pcr = integrated_mean_bias(&cdf_pcr, truth)?;
    let rmse_plain = integrated_rmse(&cdf_plain, truth)?;
    let rmse_pcr = integrated_rmse(&cdf_pcr, truth)?;
    let mae_plain = integrated_abs_bias(&cdf_plain, truth)?;
    let mae_pcr = integrated_abs_bias(&cdf_pcr, truth)?;

    let mut quantiles = Vec::new();
    let mut key = 0usize;
    for coord in 1..=ctx.chars {
        for &tau in &cell.quantile_levels {
            let truth_q = ctx.dgp.marginal_quantile(coord, tau)?;
            for (kind, store) in
                [(EstimatorKind::Plain, &q_plain), (EstimatorKind::Pcr, &q_pcr)]
            {
                let series: Vec<f64> = store.iter().map(|r| r[key]).collect();
                quantiles.push(QuantileRmse {
                    estimator: kind,
                    coord,
                    tau,
                    rmse: quantile_rmse(&series, truth_q)?,
                });
            }
            key += 1;
        }
    }
    quantiles.sort_by(|a, b| {
        a.estimator
            .cmp(&b.estimator)
            .then(a.coord.cmp(&b.coord))
            .then(a.tau.partial_cmp(&b.tau).unwrap_or(std::cmp::Ordering::Equal))
    });

    Ok(CellResult {
        cell: cell.clone(),
        replications_ok: cell.m - failed,
        bias_plain,
        bias_pcr,
        rmse_plain,
        rmse_pcr,
        mae_plain,
        mae_pcr,
        quantile_rmse: quantiles,
        replications: if cell.keep_replications { Some(records) } else { None },
    })
}

/// Outcome of a full schedule: per-cell results in input order plus any
/// failed cells with their error messages.
#[derive(Clone, Debug)]
pub struct TableOutcome {
    pub results: Vec<CellResult>,
    pub failures: Vec<(McCell, String)>,
}

/// Runs every cell of a schedule in input order.
pub fn run_table(cells: &[McCell], ctx: &McContext) -> TableOutcome {
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for cell in cells {
        match run_cell(cell, ctx) {
            Ok(res) => results.push(res),
            Err(e) => failures.push((cell.clone(), e.to_string())),
        }
    }
    TableOutcome { results, failures }
}

fn format_tau(tau: f64) -> String {
    format!("{tau}")
}

/// CSV rendering: one row per cell, full-precision metric columns, quantile
/// columns keyed estimator/coordinate/level in stable order.
pub fn render_csv(results: &[CellResult]) -> String {
    let mut labels: Vec<(EstimatorKind, usize, f64)> = Vec::new();
    for res in results {
        for q in &res.quantile_rmse {
            if !labels
                .iter()
                .any(|l| l.0 == q.estimator && l.1 == q.coord && l.2 == q.tau)
            {
                labels.push((q.estimator, q.coord, q.tau));
            }
        }
    }
    labels.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.partial_cmp(&b.2).unwrap_or(std::cmp::Ordering::Equal))
    });

    let mut out = String::from("n,D,p,M,seed,bias_plain,bias_pcr,rmse_plain,rmse_pcr");
    for (est, coord, tau) in &labels {
        out.push_str(&format!(",qrmse_{est}_c{coord}_t{}", format_tau(*tau)));
    }
    out.push('\n');
    for res in results {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}",
            res.cell.n,
            res.cell.d,
            res.cell.p,
            res.cell.m,
            res.cell.seed,
            res.bias_plain,
            res.bias_pcr,
            res.rmse_plain,
            res.rmse_pcr
        ));
        for (est, coord, tau) in &labels {
            match res.quantile_rmse_for(*est, *coord, *tau) {
                Some(v) => out.push_str(&format!(",{v}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Fixed-width text rendering: a CDF-loss block followed by one quantile
/// block per level.
pub fn render_text(results: &[CellResult]) -> String {
    let mut out = String::new();
    out.push_str("CDF loss\n");
    out.push_str(&format!(
        "{:>6} {:>6} {:>12} {:>12} {:>12} {:>12}\n",
        "n", "D", "bias_plain", "bias_pcr", "rmse_plain", "rmse_pcr"
    ));
    for res in results {
        out.push_str(&format!(
            "{:>6} {:>6} {:>12.4} {:>12.4} {:>12.4} {:>12.4}\n",
            res.cell.n, res.cell.d, res.bias_plain, res.bias_pcr, res.rmse_plain, res.rmse_pcr
        ));
    }

    let mut taus: Vec<f64> = Vec::new();
    for res in results {
        for q in &res.quantile_rmse {
            if !taus.contains(&q.tau) {
                taus.push(q.tau);
            }
        }
    }
    taus.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));

    for tau in taus {
        out.push_str(&format!("\nquantile RMSE, tau = {tau}\n"));
        out.push_str(&format!(
            "{:>6} {:>6} {:>10} {:>10} {:>10} {:>10}\n",
            "n", "D", "q1_plain", "q1_pcr", "q2_plain", "q2_pcr"
        ));
        for res in results {
            let get = |est, coord| {
                res.quantile_rmse_for(est, coord, tau)
                    .map(|v| format!("{v:>10.4}"))
                    .unwrap_or_else(|| format!("{:>10}", "-"))
            };
            out.push_str(&format!(
                "{:>6} {:>6} {} {} {} {}\n",
                res.cell.n,
                res.cell.d,
                get(EstimatorKind::Plain, 1),
                get(EstimatorKind::Pcr, 1),
                get(EstimatorKind::Plain, 2),
                get(EstimatorKind::Pcr, 2),
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_cell(m: usize) -> McCell {
        McCell {
            n: 40,
            d: 6,
            p: 3,
            m,
            seed: 99,
            quantile_levels: vec![0.25, 0.5, 0.75],
            keep_replications: true,
        }
    }

    #[test]
    fn lattice_is_121_points_with_unit_spacing() {
        let lat = eval_lattice(&[(-5.0, 5.0), (-5.0, 5.0)], 11).unwrap();
        assert_eq!(lat.len(), 121);
        assert_eq!(lat.point(0), &[-5.0, -5.0]);
        assert_eq!(lat.point(1), &[-5.0, -4.0]);
        assert_eq!(lat.point(11), &[-4.0, -5.0]);
        assert_eq!(lat.point(120), &[5.0, 5.0]);
        // lexicographic ordering
        for l in 1..lat.len() {
            let (a, b) = (lat.point(l - 1), lat.point(l));
            assert!(a[0] < b[0] || (a[0] == b[0] && a[1] < b[1]));
        }
    }

    #[test]
    fn lattice_two_points_is_the_endpoints() {
        let lat = eval_lattice(&[(0.0, 1.0)], 2).unwrap();
        assert_eq!(lat.len(), 2);
        assert_eq!(lat.point(0), &[0.0]);
        assert_eq!(lat.point(1), &[1.0]);
        assert!(eval_lattice(&[(0.0, 1.0)], 1).is_err());
    }

    #[test]
    fn metric_trivial_values() {
        let truth = vec![0.5];
        assert_eq!(integrated_abs_bias(&[vec![0.5]], &truth).unwrap(), 0.0);
        assert_eq!(integrated_abs_bias(&[vec![0.3]], &truth).unwrap(), 0.2);
        assert_eq!(integrated_rmse(&[vec![0.3]], &truth).unwrap(), 0.2);
        assert_eq!(quantile_rmse(&[1.0, 1.0], 1.0).unwrap(), 0.0);
        assert_eq!(quantile_rmse(&[0.0, 2.0], 1.0).unwrap(), 1.0);
    }

    #[test]
    fn mean_bias_cancels_symmetric_noise() {
        let truth = vec![0.5, 0.5];
        let reps = vec![vec![0.7, 0.3], vec![0.3, 0.7]];
        assert_eq!(integrated_mean_bias(&reps, &truth).unwrap(), 0.0);
        assert!((integrated_abs_bias(&reps, &truth).unwrap() - 0.2).abs() < 1e-15);
        // single replication: both notions coincide
        let one = vec![vec![0.3, 0.6]];
        assert_eq!(
            integrated_mean_bias(&one, &truth).unwrap(),
            integrated_abs_bias(&one, &truth).unwrap()
        );
    }

    #[test]
    fn metrics_match_direct_recomputation() {
        let mut r = ChaCha8Rng::seed_from_u64(321);
        let truth: Vec<f64> = (0..4).map(|_| r.gen::<f64>()).collect();
        let reps: Vec<Vec<f64>> =
            (0..3).map(|_| (0..4).map(|_| r.gen::<f64>()).collect()).collect();
        let mut abs = 0.0;
        let mut sq = 0.0;
        for rep in &reps {
            for (a, b) in rep.iter().zip(&truth) {
                abs += (a - b).abs();
                sq += (a - b) * (a - b);
            }
        }
        let want_bias = abs / 12.0;
        let want_rmse = (sq / 12.0).sqrt();
        assert!((integrated_abs_bias(&reps, &truth).unwrap() - want_bias).abs() < 1e-12);
        assert!((integrated_rmse(&reps, &truth).unwrap() - want_rmse).abs() < 1e-12);
        assert!(integrated_abs_bias(&reps, &truth[..3]).is_err());

        let qs: Vec<f64> = (0..5).map(|_| r.gen::<f64>()).collect();
        let truth_q = 0.4;
        let want: f64 =
            (qs.iter().map(|q| (q - truth_q) * (q - truth_q)).sum::<f64>() / 5.0).sqrt();
        assert!((quantile_rmse(&qs, truth_q).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn replication_rng_is_counter_based() {
        let mut a = replication_rng(7, 3);
        let mut b = replication_rng(7, 3);
        let mut c = replication_rng(7, 4);
        let (xa, xb, xc) = (a.gen::<u64>(), b.gen::<u64>(), c.gen::<u64>());
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn degenerate_single_replication_cell_runs() {
        let ctx = McContext::default_study().unwrap();
        let res = run_cell(&tiny_cell(1), &ctx).unwrap();
        assert_eq!(res.replications_ok, 1);
        for v in [res.bias_plain, res.bias_pcr, res.rmse_plain, res.rmse_pcr] {
            assert!(v.is_finite() && v >= 0.0);
        }
        assert_eq!(res.quantile_rmse.len(), 12);
    }

    #[test]
    fn cell_results_are_deterministic() {
        let ctx = McContext::default_study().unwrap();
        let a = run_cell(&tiny_cell(6), &ctx).unwrap();
        let b = run_cell(&tiny_cell(6), &ctx).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pcr_objective_dominates_plain_per_replication() {
        let ctx = McContext::default_study().unwrap();
        let res = run_cell(&tiny_cell(8), &ctx).unwrap();
        for rec in res.replications.as_ref().unwrap() {
            assert!(rec.error.is_none());
            assert!(rec.objective_pcr >= rec.objective_plain - 1e-12);
            assert!(rec.kkt_plain <= 1e-8);
            assert!(rec.kkt_pcr <= 1e-8);
        }
    }

    #[test]
    fn cdf_inputs_and_quantiles_stay_in_range() {
        let ctx = McContext::default_study().unwrap();
        let cell = tiny_cell(4);
        let grid = halton_grid(&GridSpec::new(cell.d, ctx.bounds.clone()).unwrap()).unwrap();
        for rep in 1..=cell.m {
            let out = run_replication(&cell, &ctx, &grid, rep).unwrap();
            for v in out.cdf_plain.iter().chain(&out.cdf_pcr) {
                assert!((0.0..=1.0 + 1e-12).contains(v));
            }
            for q in out.q_plain.iter().chain(&out.q_pcr) {
                assert!((-5.0..=5.0).contains(q));
            }
        }
    }

    #[test]
    fn csv_rendering_is_stable_and_headers_only_when_empty() {
        let ctx = McContext::default_study().unwrap();
        let res = run_cell(&tiny_cell(2), &ctx).unwrap();
        let a = render_csv(std::slice::from_ref(&res));
        let b = render_csv(&[res]);
        assert_eq!(a, b);
        assert!(a.starts_with("n,D,p,M,seed,bias_plain,bias_pcr,rmse_plain,rmse_pcr,qrmse_plain_c1_t0.25"));
        let empty = render_csv(&[]);
        assert_eq!(empty, "n,D,p,M,seed,bias_plain,bias_pcr,rmse_plain,rmse_pcr\n");
        assert_eq!(empty.lines().count(), 1);
    }

    #[test]
    fn text_rendering_contains_blocks() {
        let ctx = McContext::default_study().unwrap();
        let res = run_cell(&tiny_cell(2), &ctx).unwrap();
        let text = render_text(&[res]);
        assert!(text.contains("CDF loss"));
        assert!(text.contains("quantile RMSE, tau = 0.5"));
    }

    #[test]
    fn run_table_preserves_order_and_reports_failures() {
        let ctx = McContext::default_study().unwrap();
        let mut bad = tiny_cell(1);
        bad.p = 0; // invalid: validation failure surfaces as a cell failure
        let cells = vec![tiny_cell(1), bad];
        let outcome = run_table(&cells, &ctx);
        assert_eq!(outcome.results.len(), 1);
        assert_eq!(outcome.failures.len(), 1);
    }
}
