//! Shared test oracles, independent of the library's solve path.

use nalgebra::{DMatrix, DVector};

/// Exhaustive minimum of `||target - design*theta||^2 / rows` over the
/// simplex lattice `{theta : theta_i = k_i/steps}`, for up to four
/// dimensions. Residuals are updated incrementally along the innermost walk
/// and refreshed at every outer change to keep rounding drift negligible.
pub fn brute_force_simplex_objective(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    steps: usize,
) -> f64 {
    let d = design.ncols();
    let rows = design.nrows();
    assert!((1..=4).contains(&d), "oracle supports 1..=4 columns");
    let cols: Vec<Vec<f64>> = (0..d).map(|c| design.column(c).iter().copied().collect()) .collect();
    let y: Vec<f64> = target.iter().copied().collect();
    let s = steps as f64;

    let norm2 = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let mut best = f64::INFINITY;

    match d {
        1 => {
            let r: Vec<f64> = (0..rows).map(|i| y[i] - cols[0][i]).collect();
            best = norm2(&r);
        }
        2 => {
            // theta = (k/steps, 1 - k/steps); walk k upward.
            let mut r: Vec<f64> = (0..rows).map(|i| y[i] - cols[1][i]).collect();
            let step: Vec<f64> = (0..rows).map(|i| (cols[1][i] - cols[0][i]) / s).collect();
            for k in 0..=steps {
                if k > 0 {
                    for i in 0..rows {
                        r[i] += step[i];
                    }
                }
                let obj = norm2(&r);
                if obj < best {
                    best = obj;
                }
            }
        }
        3 => {
            for k1 in 0..=steps {
                let rem = steps - k1;
                // start at k2 = 0, k3 = rem; refresh per k1
                let mut r: Vec<f64> = (0..rows)
                    .map(|i| y[i] - k1 as f64 / s * cols[0][i] - rem as f64 / s * cols[2][i])
                    .collect();
                let step: Vec<f64> = (0..rows).map(|i| (cols[2][i] - cols[1][i]) / s).collect();
                for k2 in 0..=rem {
                    if k2 > 0 {
                        for i in 0..rows {
                            r[i] += step[i];
                        }
                    }
                    let obj = norm2(&r);
                    if obj < best {
                        best = obj;
                    }
                }
            }
        }
        4 => {
            for k1 in 0..=steps {
                let rem1 = steps - k1;
                let base1: Vec<f64> =
                    (0..rows).map(|i| y[i] - k1 as f64 / s * cols[0][i]).collect();
                for k2 in 0..=rem1 {
                    let rem2 = rem1 - k2;
                    // start at k3 = 0, k4 = rem2; refresh per k2
                    let mut r: Vec<f64> = (0..rows)
                        .map(|i| {
                            base1[i] - k2 as f64 / s * cols[1][i] - rem2 as f64 / s * cols[3][i]
                        })
                        .collect();
                    let step: Vec<f64> =
                        (0..rows).map(|i| (cols[3][i] - cols[2][i]) / s).collect();
                    for k3 in 0..=rem2 {
                        if k3 > 0 {
                            for i in 0..rows {
                                r[i] += step[i];
                            }
                        }
                        let obj = norm2(&r);
                        if obj < best {
                            best = obj;
                        }
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    best / rows as f64
}
