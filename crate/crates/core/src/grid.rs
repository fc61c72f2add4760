//! Deterministic quasi-random support grids.
//!
//! Grids are unscrambled Halton sequences (indexing from 1, dimension `k`
//! using the `k`-th prime) mapped affinely onto a bounding box. Prefixes are
//! nested: the first `D'` points of a size-`D` grid equal the size-`D'` grid.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;

const PRIMES: [u32; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Requested grid shape: point count and per-dimension bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub points: usize,
    pub bounds: Vec<(f64, f64)>,
}

impl GridSpec {
    pub fn new(points: usize, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if points == 0 {
            return Err(Error::InvalidParameter("grid needs at least one point".into()));
        }
        if bounds.is_empty() {
            return Err(Error::InvalidParameter("grid needs at least one dimension".into()));
        }
        for &(lo, hi) in &bounds {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::InvalidParameter(format!("bad bounds ({lo}, {hi})")));
            }
        }
        Ok(Self { points, bounds })
    }

    /// `points` grid points on the box `[-5, 5]^dim`.
    pub fn default_box(points: usize, dim: usize) -> Result<Self> {
        Self::new(points, vec![(-5.0, 5.0); dim])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }
}

/// A realized support grid: `points x dim` values, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<f64>,
    spec: GridSpec,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.spec.points
    }

    pub fn is_empty(&self) -> bool {
        self.spec.points == 0
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Support point `d` (0-based).
    pub fn point(&self, d: usize) -> &[f64] {
        let k = self.dim();
        &self.points[d * k..(d + 1) * k]
    }

    /// Builds a grid with explicit points, bypassing the Halton construction.
    #[cfg(test)]
    pub(crate) fn from_parts_for_tests(points: Vec<f64>, spec: GridSpec) -> Grid {
        assert_eq!(points.len(), spec.points * spec.dim());
        Grid { points, spec }
    }

    /// Writes the grid as CSV with header `d,alpha_1,...,alpha_K`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("d");
        for k in 1..=self.dim() {
            header.push_str(&format!(",alpha_{k}"));
        }
        writeln!(w, "{header}")?;
        for d in 0..self.len() {
            let mut line = format!("{}", d + 1);
            for v in self.point(d) {
                line.push_str(&format!(",{v}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Van der Corput radical inverse: the base-`base` digits of `index`
/// reflected about the radix point. `index` starts at 1.
pub fn radical_inverse(index: u64, base: u32) -> Result<f64> {
    if index == 0 {
        return Err(Error::InvalidParameter("radical inverse is indexed from 1".into()));
    }
    if base < 2 {
        return Err(Error::InvalidParameter(format!("base must be at least 2, got {base}")));
    }
    let b = base as u64;
    let mut i = index;
    let mut inv = 0.0f64;
    let mut scale = 1.0 / base as f64;
    while i > 0 {
        inv += (i % b) as f64 * scale;
        scale /= base as f64;
        i /= b;
    }
    Ok(inv)
}

/// Builds the Halton grid for `spec`: point `d`, dimension `k` is
/// `lo_k + radical_inverse(d, prime_k) * (hi_k - lo_k)` for `d = 1..=D`.
/// No scrambling, leap, or burn-in, so grids with a common spec are nested.
pub fn halton_grid(spec: &GridSpec) -> Result<Grid> {
    let k = spec.dim();
    if k > PRIMES.len() {
        return Err(Error::InvalidParameter(format!(
            "halton grid supports up to {} dimensions, got {k}",
            PRIMES.len()
        )));
    }
    let mut points = Vec::with_capacity(spec.points * k);
    for d in 1..=spec.points as u64 {
        for (dim, &(lo, hi)) in spec.bounds.iter().enumerate() {
            let u = radical_inverse(d, PRIMES[dim])?;
            points.push(lo + u * (hi - lo));
        }
    }
    Ok(Grid { points, spec: spec.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radical_inverse_base2_prefix() {
        assert_eq!(radical_inverse(1, 2).unwrap(), 0.5);
        assert_eq!(radical_inverse(2, 2).unwrap(), 0.25);
        assert_eq!(radical_inverse(3, 2).unwrap(), 0.75);
        // binary 101 reversed -> .101
        assert_eq!(radical_inverse(5, 2).unwrap(), 0.625);
    }

    #[test]
    fn radical_inverse_base3() {
        assert_eq!(radical_inverse(1, 3).unwrap(), 1.0 / 3.0);
        assert_eq!(radical_inverse(2, 3).unwrap(), 2.0 / 3.0);
        assert_eq!(radical_inverse(3, 3).unwrap(), 1.0 / 9.0);
    }

    #[test]
    fn radical_inverse_rejects_index_zero() {
        assert!(radical_inverse(0, 2).is_err());
    }

    #[test]
    fn single_point_grid_matches_hand_value() {
        let spec = GridSpec::default_box(1, 2).unwrap();
        let grid = halton_grid(&spec).unwrap();
        let p = grid.point(0);
        assert!((p[0] - 0.0).abs() < 1e-15);
        assert!((p[1] - (-5.0 + 10.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn grids_are_nested_prefixes() {
        let small = halton_grid(&GridSpec::default_box(25, 2).unwrap()).unwrap();
        let large = halton_grid(&GridSpec::default_box(500, 2).unwrap()).unwrap();
        for d in 0..small.len() {
            assert_eq!(small.point(d), large.point(d), "row {d} differs");
        }
    }

    #[test]
    fn all_points_inside_bounds_and_distinct() {
        let grid = halton_grid(&GridSpec::default_box(500, 2).unwrap()).unwrap();
        for d in 0..grid.len() {
            for v in grid.point(d) {
                assert!((-5.0..=5.0).contains(v));
            }
        }
        for a in 0..grid.len() {
            for b in (a + 1)..grid.len() {
                assert_ne!(grid.point(a), grid.point(b), "rows {a} and {b} coincide");
            }
        }
    }

    #[test]
    fn identical_specs_give_bit_identical_grids() {
        let spec = GridSpec::new(64, vec![(-5.0, 5.0), (0.0, 2.0)]).unwrap();
        let a = halton_grid(&spec).unwrap();
        let b = halton_grid(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_limit_enforced() {
        assert!(halton_grid(&GridSpec::default_box(4, 9).unwrap()).is_err());
        assert!(halton_grid(&GridSpec::default_box(4, 8).unwrap()).is_ok());
    }

    #[test]
    fn csv_export_shape() {
        let grid = halton_grid(&GridSpec::default_box(3, 2).unwrap()).unwrap();
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "d,alpha_1,alpha_2");
        assert!(lines[1].starts_with("1,0,"));
    }
}
