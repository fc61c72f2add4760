//! Conditional choice-probability and density kernels, plus the simulation
//! data-generating process with its exact CDF and quantile oracles.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};
use std::io::{BufRead, Write};

/// Product characteristics for one choice situation: `products` inside goods,
/// each described by `chars` characteristics, stored row-major. The outside
/// good (alternative 0) has all characteristics fixed at zero and is not
/// stored.
#[derive(Clone, Debug, PartialEq)]
pub struct CovariateBlock {
    products: usize,
    chars: usize,
    x: Vec<f64>,
}

impl CovariateBlock {
    pub fn new(products: usize, chars: usize, x: Vec<f64>) -> Result<Self> {
        if products == 0 || chars == 0 {
            return Err(Error::InvalidParameter(
                "need at least one product and one characteristic".into(),
            ));
        }
        if x.len() != products * chars {
            return Err(Error::DimensionMismatch(format!(
                "expected {}x{} = {} covariate entries, got {}",
                products,
                chars,
                products * chars,
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("covariates must be finite".into()));
        }
        Ok(Self { products, chars, x })
    }

    pub fn products(&self) -> usize {
        self.products
    }

    pub fn chars(&self) -> usize {
        self.chars
    }

    /// Characteristics of inside good `j` (0-based over the J inside goods).
    pub fn row(&self, j: usize) -> &[f64] {
        &self.x[j * self.chars..(j + 1) * self.chars]
    }
}

/// Multinomial logit choice probabilities at one heterogeneity point:
/// `P(j) = exp(x_j'alpha) / (1 + sum_l exp(x_l'alpha))` for the inside goods
/// and `P(0) = 1 / (1 + sum_l exp(x_l'alpha))` for the outside good.
///
/// Returns a `(J+1)`-vector ordered `(P(0), P(1), ..., P(J))`. Utilities are
/// shifted by their maximum before exponentiating, so inner products up to
/// around 700 in absolute value do not overflow.
pub fn logit_choice_prob(x: &CovariateBlock, alpha: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.products() + 1];
    logit_choice_prob_into(x, alpha, None, &mut out)?;
    Ok(out)
}

/// Allocation-free variant of [`logit_choice_prob`] with optional
/// per-inside-good intercepts (defaulting to zero when `None`).
pub fn logit_choice_prob_into(
    x: &CovariateBlock,
    alpha: &[f64],
    intercepts: Option<&[f64]>,
    out: &mut [f64],
) -> Result<()> {
    let j = x.products();
    if alpha.len() != x.chars() {
        return Err(Error::DimensionMismatch(format!(
            "alpha has {} entries, covariates have {} characteristics",
            alpha.len(),
            x.chars()
        )));
    }
    if out.len() != j + 1 {
        return Err(Error::DimensionMismatch(format!(
            "output buffer has {} entries, need {}",
            out.len(),
            j + 1
        )));
    }
    if let Some(d) = intercepts {
        if d.len() != j {
            return Err(Error::DimensionMismatch(format!(
                "{} intercepts for {} inside goods",
                d.len(),
                j
            )));
        }
    }
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("alpha must be finite".into()));
    }

    // Utility of the outside good is normalized to zero.
    out[0] = 0.0;
    let mut umax = 0.0f64;
    for jj in 0..j {
        let row = x.row(jj);
        let mut u: f64 = row.iter().zip(alpha).map(|(a, b)| a * b).sum();
        if let Some(d) = intercepts {
            u += d[jj];
        }
        out[jj + 1] = u;
        if u > umax {
            umax = u;
        }
    }
    let mut den = 0.0;
    for v in out.iter_mut() {
        *v = (*v - umax).exp();
        den += *v;
    }
    for v in out.iter_mut() {
        *v /= den;
    }
    Ok(())
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Standard bivariate normal CDF `P(X <= h, Y <= k)` under correlation `rho`,
/// computed by adaptive quadrature of the correlation-parameter integral
///
/// ```text
/// phi2(h, k; rho) = Phi(h) Phi(k) + integral_0^rho f(h, k; t) dt,
/// ```
///
/// where `f` is the bivariate normal density at `(h, k)` with correlation t.
/// Absolute accuracy is held well below 1e-7.
pub fn bvn_cdf(h: f64, k: f64, rho: f64) -> Result<f64> {
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "correlation must lie in (-1, 1), got {rho}"
        )));
    }
    if h.is_nan() || k.is_nan() {
        return Err(Error::InvalidParameter("bvn_cdf arguments must not be NaN".into()));
    }
    if h == f64::NEG_INFINITY || k == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if h == f64::INFINITY {
        return Ok(norm_cdf(k));
    }
    if k == f64::INFINITY {
        return Ok(norm_cdf(h));
    }
    let base = norm_cdf(h) * norm_cdf(k);
    if rho == 0.0 {
        return Ok(base);
    }
    let density = |t: f64| {
        let om = 1.0 - t * t;
        (-(h * h - 2.0 * t * h * k + k * k) / (2.0 * om)).exp() / (2.0 * PI * om.sqrt())
    };
    let integral = adaptive_simpson(&density, 0.0, rho, 1e-11, 45, 4);
    Ok((base + integral).clamp(0.0, 1.0))
}

/// Adaptive Simpson quadrature on `[a, b]` to absolute tolerance `eps`.
/// The first `force` recursion levels always split, so narrow features are
/// not missed by an initial coarse agreement.
pub(crate) fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    eps: f64,
    depth: u32,
    force: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, eps, depth, force)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
    force: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || (force == 0 && delta.abs() <= 15.0 * eps) {
        left + right + delta / 15.0
    } else {
        let fnext = force.saturating_sub(1);
        simpson_step(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1, fnext)
            + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1, fnext)
    }
}

/// Two-component bivariate Gaussian mixture generating the random
/// coefficients in the simulation experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMixtureDgp {
    pub weights: [f64; 2],
    pub means: [[f64; 2]; 2],
    pub cov: [[f64; 2]; 2],
}

impl Default for GaussianMixtureDgp {
    /// Equal-weight mixture with means (-2.2, -2.2) and (1.3, 1.3) and shared
    /// covariance [[0.8, 0.15], [0.15, 0.8]].
    fn default() -> Self {
        Self {
            weights: [0.5, 0.5],
            means: [[-2.2, -2.2], [1.3, 1.3]],
            cov: [[0.8, 0.15], [0.15, 0.8]],
        }
    }
}

impl GaussianMixtureDgp {
    pub fn validate(&self) -> Result<()> {
        let flat = self
            .weights
            .iter()
            .chain(self.means.iter().flatten())
            .chain(self.cov.iter().flatten());
        if flat.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("DGP parameters must be finite".into()));
        }
        if self.weights.iter().any(|&w| w < 0.0) || (self.weights[0] + self.weights[1] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(
                "mixture weights must be nonnegative and sum to one".into(),
            ));
        }
        if (self.cov[0][1] - self.cov[1][0]).abs() > 1e-12 {
            return Err(Error::InvalidParameter("covariance must be symmetric".into()));
        }
        let det = self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[1][0];
        if self.cov[0][0] <= 0.0 || det <= 0.0 {
            return Err(Error::InvalidParameter("covariance must be positive definite".into()));
        }
        Ok(())
    }

    /// Lower Cholesky factor (l11, l21, l22) of the shared covariance.
    fn chol(&self) -> (f64, f64, f64) {
        let l11 = self.cov[0][0].sqrt();
        let l21 = self.cov[1][0] / l11;
        let l22 = (self.cov[1][1] - l21 * l21).sqrt();
        (l11, l21, l22)
    }

    /// Draw one heterogeneity point: Bernoulli component choice, then a
    /// correlated Gaussian via the Cholesky factor.
    pub fn sample_alpha<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let comp = usize::from(rng.gen::<f64>() >= self.weights[0]);
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let (l11, l21, l22) = self.chol();
        [
            self.means[comp][0] + l11 * z1,
            self.means[comp][1] + l21 * z1 + l22 * z2,
        ]
    }

    /// Exact CDF of the mixture at `a`, as the weighted sum of the two
    /// component bivariate normal CDFs.
    pub fn true_cdf(&self, a: [f64; 2]) -> Result<f64> {
        let (s1, s2) = (self.cov[0][0].sqrt(), self.cov[1][1].sqrt());
        let rho = self.cov[0][1] / (s1 * s2);
        let mut total = 0.0;
        for comp in 0..2 {
            let h = (a[0] - self.means[comp][0]) / s1;
            let k = (a[1] - self.means[comp][1]) / s2;
            total += self.weights[comp] * bvn_cdf(h, k, rho)?;
        }
        Ok(total)
    }

    /// Exact marginal CDF of coordinate `coord` (1-based) at `q`.
    pub fn marginal_cdf(&self, coord: usize, q: f64) -> Result<f64> {
        let c = self.coord_index(coord)?;
        let s = self.cov[c][c].sqrt();
        Ok(self.weights[0] * norm_cdf((q - self.means[0][c]) / s)
            + self.weights[1] * norm_cdf((q - self.means[1][c]) / s))
    }

    /// Exact marginal quantile of coordinate `coord` at level `tau`, found by
    /// bisection on the marginal CDF to residual below 1e-10. Levels outside
    /// `[1e-6, 1 - 1e-6]` are rejected.
    pub fn marginal_quantile(&self, coord: usize, tau: f64) -> Result<f64> {
        self.coord_index(coord)?;
        if !(1e-6..=1.0 - 1e-6).contains(&tau) {
            return Err(Error::InvalidParameter(format!(
                "quantile level {tau} outside [1e-6, 1-1e-6]"
            )));
        }
        let (mut lo, mut hi) = (-100.0f64, 100.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.marginal_cdf(coord, mid)? < tau {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 * hi.abs().max(1.0) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn coord_index(&self, coord: usize) -> Result<usize> {
        if coord == 1 || coord == 2 {
            Ok(coord - 1)
        } else {
            Err(Error::InvalidParameter(format!("coordinate must be 1 or 2, got {coord}")))
        }
    }
}

/// Law of the random coefficients used when simulating datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dgp {
    GaussianMixture(GaussianMixtureDgp),
    /// Degenerate law putting all mass on one point; useful for calibration
    /// checks where the fitted weights should concentrate.
    PointMass { alpha: Vec<f64> },
}

impl Default for Dgp {
    fn default() -> Self {
        Dgp::GaussianMixture(GaussianMixtureDgp::default())
    }
}

impl Dgp {
    pub fn validate(&self) -> Result<()> {
        match self {
            Dgp::GaussianMixture(g) => g.validate(),
            Dgp::PointMass { alpha } => {
                if alpha.is_empty() || alpha.iter().any(|v| !v.is_finite()) {
                    Err(Error::InvalidParameter("point mass must be finite and non-empty".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Dgp::GaussianMixture(_) => 2,
            Dgp::PointMass { alpha } => alpha.len(),
        }
    }

    pub fn sample_alpha<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Dgp::GaussianMixture(g) => g.sample_alpha(rng).to_vec(),
            Dgp::PointMass { alpha } => alpha.clone(),
        }
    }
}

/// A simulated or imported choice panel: `n` individuals, each with `J x K`
/// covariates and one observed choice in `{0, ..., J}` (0 = outside good).
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiceDataset {
    n: usize,
    products: usize,
    chars: usize,
    x: Vec<f64>,
    y: Vec<u32>,
}

impl ChoiceDataset {
    pub fn new(n: usize, products: usize, chars: usize, x: Vec<f64>, y: Vec<u32>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("dataset must have at least one row".into()));
        }
        if x.len() != n * products * chars || y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "need {} covariates and {} choices, got {} and {}",
                n * products * chars,
                n,
                x.len(),
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("covariates must be finite".into()));
        }
        if let Some(bad) = y.iter().find(|&&c| c as usize > products) {
            return Err(Error::InvalidParameter(format!(
                "choice {bad} out of range 0..={products}"
            )));
        }
        Ok(Self { n, products, chars, x, y })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn products(&self) -> usize {
        self.products
    }

    pub fn chars(&self) -> usize {
        self.chars
    }

    pub fn choice(&self, i: usize) -> u32 {
        self.y[i]
    }

    /// Covariate block of individual `i`.
    pub fn covariates(&self, i: usize) -> CovariateBlock {
        let stride = self.products * self.chars;
        CovariateBlock {
            products: self.products,
            chars: self.chars,
            x: self.x[i * stride..(i + 1) * stride].to_vec(),
        }
    }

    /// Writes the dataset as CSV with header `id,y,x_1_1,...,x_J_K`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("id,y");
        for j in 1..=self.products {
            for k in 1..=self.chars {
                header.push_str(&format!(",x_{j}_{k}"));
            }
        }
        writeln!(w, "{header}")?;
        let stride = self.products * self.chars;
        for i in 0..self.n {
            let mut line = format!("{},{}", i + 1, self.y[i]);
            for v in &self.x[i * stride..(i + 1) * stride] {
                line.push_str(&format!(",{v}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Parses a dataset from CSV in the [`write_csv`](Self::write_csv) layout.
    /// Errors carry the 1-based line number of the offending row.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or(Error::Csv { line: 1, msg: "missing header".into() })??;
        let cols: Vec<&str> = header.trim_end().split(',').collect();
        if cols.len() < 3 || cols[0] != "id" || cols[1] != "y" {
            return Err(Error::Csv { line: 1, msg: "header must start with id,y,x_1_1".into() });
        }
        // Infer J and K from the last covariate column name x_J_K.
        let last = cols[cols.len() - 1];
        let parts: Vec<&str> = last.split('_').collect();
        let (products, chars) = match parts.as_slice() {
            ["x", j, k] => (
                j.parse::<usize>().map_err(|_| Error::Csv { line: 1, msg: format!("bad column {last}") })?,
                k.parse::<usize>().map_err(|_| Error::Csv { line: 1, msg: format!("bad column {last}") })?,
            ),
            _ => return Err(Error::Csv { line: 1, msg: format!("bad covariate column {last}") }),
        };
        if cols.len() != 2 + products * chars {
            return Err(Error::Csv {
                line: 1,
                msg: format!("expected {} columns, found {}", 2 + products * chars, cols.len()),
            });
        }

        let mut x = Vec::new();
        let mut y = Vec::new();
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim_end().split(',').collect();
            if fields.len() != cols.len() {
                return Err(Error::Csv {
                    line: lineno,
                    msg: format!("expected {} fields, found {}", cols.len(), fields.len()),
                });
            }
            let choice: u32 = fields[1]
                .parse()
                .map_err(|_| Error::Csv { line: lineno, msg: format!("bad choice `{}`", fields[1]) })?;
            if choice as usize > products {
                return Err(Error::Csv {
                    line: lineno,
                    msg: format!("choice {choice} out of range 0..={products}"),
                });
            }
            y.push(choice);
            for f in &fields[2..] {
                let v: f64 = f
                    .parse()
                    .map_err(|_| Error::Csv { line: lineno, msg: format!("bad covariate `{f}`") })?;
                if !v.is_finite() {
                    return Err(Error::Csv { line: lineno, msg: format!("non-finite covariate `{f}`") });
                }
                x.push(v);
            }
        }
        let n = y.len();
        ChoiceDataset::new(n, products, chars, x, y)
    }
}

/// Simulates a choice panel: covariates i.i.d. Uniform[0,1], heterogeneity
/// drawn from `dgp`, and the observed choice drawn from the logit
/// probabilities at the individual's draw.
///
/// Per individual the stream is consumed in a fixed order (heterogeneity,
/// covariates, choice), so identical streams reproduce identical datasets.
pub fn simulate_dataset<R: Rng + ?Sized>(
    dgp: &Dgp,
    n: usize,
    products: usize,
    chars: usize,
    rng: &mut R,
) -> Result<ChoiceDataset> {
    dgp.validate()?;
    if n == 0 {
        return Err(Error::InvalidParameter("need n >= 1".into()));
    }
    if dgp.dim() != chars {
        return Err(Error::DimensionMismatch(format!(
            "DGP draws {}-dimensional heterogeneity, dataset has {} characteristics",
            dgp.dim(),
            chars
        )));
    }
    let mut x = Vec::with_capacity(n * products * chars);
    let mut y = Vec::with_capacity(n);
    let mut probs = vec![0.0; products + 1];
    for _ in 0..n {
        let alpha = dgp.sample_alpha(rng);
        let start = x.len();
        for _ in 0..products * chars {
            x.push(rng.gen::<f64>());
        }
        let block = CovariateBlock::new(products, chars, x[start..].to_vec())?;
        logit_choice_prob_into(&block, &alpha, None, &mut probs)?;
        let u = rng.gen::<f64>();
        let mut cum = 0.0;
        let mut choice = products as u32;
        for (j, p) in probs.iter().enumerate() {
            cum += p;
            if u < cum {
                choice = j as u32;
                break;
            }
        }
        y.push(choice);
    }
    ChoiceDataset::new(n, products, chars, x, y)
}

/// Heterogeneity point of the two-spell duration model: a drift and a
/// positive barrier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationPoint {
    pub drift: f64,
    pub barrier: f64,
}

impl DurationPoint {
    pub fn new(drift: f64, barrier: f64) -> Result<Self> {
        if !drift.is_finite() || !barrier.is_finite() || barrier <= 0.0 {
            return Err(Error::InvalidParameter(
                "duration point needs finite drift and positive barrier".into(),
            ));
        }
        Ok(Self { drift, barrier })
    }
}

/// First-passage density of a Brownian motion with drift through a positive
/// barrier, normalized so it integrates to one over positive drift:
/// `barrier / sqrt(2 pi t^3) * exp(-(drift*t - barrier)^2 / (2t))`.
pub fn duration_spell_density(t: f64, p: DurationPoint) -> Result<f64> {
    if t.is_nan() || t <= 0.0 {
        return Err(Error::InvalidParameter(format!("spell length must be positive, got {t}")));
    }
    let dev = p.drift * t - p.barrier;
    Ok(p.barrier / ((2.0 * PI).sqrt() * t.powf(1.5)) * (-dev * dev / (2.0 * t)).exp())
}

/// Joint kernel for two independent spells at one heterogeneity point: the
/// product of the two per-spell first-passage densities.
pub fn duration_kernel(t1: f64, t2: f64, p: DurationPoint) -> Result<f64> {
    Ok(duration_spell_density(t1, p)? * duration_spell_density(t2, p)?)
}
