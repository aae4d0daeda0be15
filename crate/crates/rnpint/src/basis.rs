//! Centered B-spline expansions of raw covariates.
//!
//! Knot placement always uses the pooled covariate range across datasets so
//! that a single basis underlies every dataset's design block; centering is
//! then applied per dataset. Equality of coefficient vectors across datasets
//! is only meaningful against a shared basis, which is why the knots are
//! pooled even though centering is not. Per-dataset centering shifts each
//! dataset's effective basis by a constant, so functions reported as common
//! may still differ across datasets by a vertical offset.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};

/// Configuration of the covariate expansion.
///
/// `inner_knots + degree + 1` basis functions span the knot vector; the
/// default (cubic, 2 interior knots) gives a 6-dimensional expansion. In
/// parametric mode the expansion is the identity map and the dimension is 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisConfig {
    pub degree: usize,
    pub inner_knots: usize,
    pub parametric: bool,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            degree: 3,
            inner_knots: 2,
            parametric: false,
        }
    }
}

impl BasisConfig {
    pub fn parametric() -> Self {
        Self {
            degree: 3,
            inner_knots: 0,
            parametric: true,
        }
    }

    /// Cubic basis with the given number of equally spaced interior knots.
    pub fn with_inner_knots(inner_knots: usize) -> Self {
        Self {
            degree: 3,
            inner_knots,
            parametric: false,
        }
    }

    /// Number of columns in the expansion of one covariate.
    pub fn dim(&self) -> usize {
        if self.parametric {
            1
        } else {
            self.inner_knots + self.degree + 1
        }
    }
}

/// Equally spaced interior knots strictly between the pooled min and max,
/// with boundary knots repeated `degree + 1` times at each end.
pub fn build_knots(x_pooled: &[f64], config: &BasisConfig) -> Result<Vec<f64>> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in x_pooled {
        min = min.min(v);
        max = max.max(v);
    }
    if x_pooled.is_empty() || !min.is_finite() || !max.is_finite() || max <= min {
        return Err(Error::DegenerateCovariate {
            name: String::new(),
        });
    }
    let d = config.degree;
    let m = config.inner_knots;
    let mut knots = Vec::with_capacity(m + 2 * (d + 1));
    knots.extend(std::iter::repeat(min).take(d + 1));
    let h = (max - min) / (m as f64 + 1.0);
    for i in 1..=m {
        knots.push(min + h * i as f64);
    }
    knots.extend(std::iter::repeat(max).take(d + 1));
    Ok(knots)
}

/// Evaluate the normalized B-spline row at `x` (clamped into the knot range)
/// and write the full row of `dim` basis values into `row`.
fn bspline_row(knots: &[f64], degree: usize, x: f64, row: &mut [f64]) {
    let n_basis = knots.len() - degree - 1;
    debug_assert_eq!(row.len(), n_basis);
    row.fill(0.0);

    let lo = knots[degree];
    let hi = knots[knots.len() - degree - 1];
    let x = x.clamp(lo, hi);

    // Knot span index: largest i with knots[i] <= x, capped so the right
    // boundary maps to the final non-degenerate interval.
    let mut span = degree;
    let max_span = n_basis - 1;
    while span < max_span && x >= knots[span + 1] {
        span += 1;
    }

    // Triangular recurrence (de Boor); computes the degree+1 non-vanishing
    // basis values at x.
    let mut vals = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    vals[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { vals[r] / denom };
            vals[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        vals[j] = saved;
    }
    for (i, &v) in vals.iter().enumerate() {
        row[span - degree + i] = v;
    }
}

/// Expand a covariate vector into its n x dim design block (uncentred).
///
/// Values outside the knot range are clamped to the boundary. In parametric
/// mode this is the identity map into an n x 1 matrix.
pub fn expand(x: &[f64], knots: &[f64], config: &BasisConfig) -> Array2<f64> {
    let n = x.len();
    if config.parametric {
        let lo = knots.first().copied().unwrap_or(f64::NEG_INFINITY);
        let hi = knots.last().copied().unwrap_or(f64::INFINITY);
        let mut out = Array2::zeros((n, 1));
        for (i, &v) in x.iter().enumerate() {
            out[[i, 0]] = v.clamp(lo, hi);
        }
        return out;
    }
    let dim = knots.len() - config.degree - 1;
    let mut out = Array2::zeros((n, dim));
    for (i, &v) in x.iter().enumerate() {
        let row = out.row_mut(i).into_slice().expect("contiguous row");
        bspline_row(knots, config.degree, v, row);
    }
    out
}

/// Subtract column means in place; returns the means for prediction-time
/// reuse. Requires at least two rows.
pub fn center(block: &mut Array2<f64>) -> Result<Array1<f64>> {
    let n = block.nrows();
    if n < 2 {
        return Err(Error::TooFewRows(n));
    }
    let means = block
        .mean_axis(ndarray::Axis(0))
        .expect("nonempty block has column means");
    for mut row in block.rows_mut() {
        for (v, &m) in row.iter_mut().zip(means.iter()) {
            *v -= m;
        }
    }
    Ok(means)
}

/// Shared basis of a fitted problem: pooled knots per covariate plus the
/// per-(dataset, covariate) column means subtracted at training time.
#[derive(Debug, Clone)]
pub struct BasisExpansion {
    pub config: BasisConfig,
    /// One knot vector per covariate, shared across datasets.
    pub knots: Vec<Vec<f64>>,
    /// `means[m][j]` are the column means of dataset m's block for covariate j.
    pub means: Vec<Vec<Array1<f64>>>,
}

impl BasisExpansion {
    /// Build pooled knots and the centered design blocks for every dataset.
    /// Returns the expansion plus, per dataset, one block per covariate.
    pub fn build(
        covariates: &[Array2<f64>],
        names: &[String],
        config: &BasisConfig,
    ) -> Result<(Self, Vec<Vec<Array2<f64>>>)> {
        let p = covariates
            .first()
            .map(|x| x.ncols())
            .ok_or(Error::NoDatasets)?;
        let mut knots = Vec::with_capacity(p);
        for j in 0..p {
            let pooled: Vec<f64> = covariates
                .iter()
                .flat_map(|x| x.column(j).to_vec())
                .collect();
            let k = build_knots(&pooled, config).map_err(|e| match e {
                Error::DegenerateCovariate { .. } => Error::DegenerateCovariate {
                    name: names.get(j).cloned().unwrap_or_else(|| format!("x{}", j + 1)),
                },
                other => other,
            })?;
            knots.push(k);
        }
        let mut means = Vec::with_capacity(covariates.len());
        let mut blocks = Vec::with_capacity(covariates.len());
        for x in covariates {
            let mut ds_means = Vec::with_capacity(p);
            let mut ds_blocks = Vec::with_capacity(p);
            for j in 0..p {
                let col = x.column(j).to_vec();
                let mut block = expand(&col, &knots[j], config);
                let mu = center(&mut block)?;
                ds_means.push(mu);
                ds_blocks.push(block);
            }
            means.push(ds_means);
            blocks.push(ds_blocks);
        }
        Ok((
            Self {
                config: *config,
                knots,
                means,
            },
            blocks,
        ))
    }

    /// Expand new values of covariate j for dataset m using the training
    /// knots and training column means.
    pub fn expand_new(&self, m: usize, j: usize, x: &[f64]) -> Array2<f64> {
        let mut block = expand(x, &self.knots[j], &self.config);
        let mu = &self.means[m][j];
        for mut row in block.rows_mut() {
            for (v, &c) in row.iter_mut().zip(mu.iter()) {
                *v -= c;
            }
        }
        block
    }

    pub fn dim(&self) -> usize {
        self.config.dim()
    }

    /// Pooled covariate range recorded in the knot vector.
    pub fn range(&self, j: usize) -> (f64, f64) {
        let k = &self.knots[j];
        (k[0], k[k.len() - 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn knots_equally_spaced() {
        let cfg = BasisConfig::with_inner_knots(6);
        let x = vec![0.0, 0.25, 0.5, 1.0];
        let knots = build_knots(&x, &cfg).unwrap();
        // 4 boundary copies on each side, interior at i/7
        assert_eq!(knots.len(), 6 + 8);
        for i in 1..=6 {
            assert_abs_diff_eq!(knots[3 + i], i as f64 / 7.0, epsilon = 1e-12);
        }
        assert_eq!(&knots[..4], &[0.0; 4]);
        assert_eq!(&knots[knots.len() - 4..], &[1.0; 4]);
    }

    #[test]
    fn no_inner_knots_leaves_boundaries_only() {
        let cfg = BasisConfig::with_inner_knots(0);
        let knots = build_knots(&[-2.0, 2.0], &cfg).unwrap();
        assert_eq!(knots.len(), 8);
        assert!(knots[..4].iter().all(|&k| k == -2.0));
        assert!(knots[4..].iter().all(|&k| k == 2.0));
    }

    #[test]
    fn constant_covariate_is_degenerate() {
        let cfg = BasisConfig::default();
        assert!(matches!(
            build_knots(&[1.0, 1.0, 1.0], &cfg),
            Err(Error::DegenerateCovariate { .. })
        ));
    }

    #[test]
    fn knots_shared_across_datasets() {
        let cfg = BasisConfig::default();
        let xs = vec![
            array![[-3.0], [0.0]],
            array![[1.0], [2.0]],
            array![[3.0], [-1.0]],
        ];
        let names = vec!["x1".to_string()];
        let (exp, blocks) = BasisExpansion::build(&xs, &names, &cfg).unwrap();
        assert_eq!(exp.knots.len(), 1);
        assert_eq!(exp.knots[0][0], -3.0);
        assert_eq!(*exp.knots[0].last().unwrap(), 3.0);
        assert_eq!(blocks.len(), 3);
        // same knot vector regardless of dataset membership
        assert_eq!(exp.range(0), (-3.0, 3.0));
    }

    #[test]
    fn partition_of_unity_before_centering() {
        let cfg = BasisConfig::default();
        let knots = build_knots(&[0.0, 1.0], &cfg).unwrap();
        let xs: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        let block = expand(&xs, &knots, &cfg);
        assert_eq!(block.ncols(), cfg.dim());
        for row in block.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn partition_of_unity_many_inner_knots() {
        let cfg = BasisConfig::with_inner_knots(6);
        let knots = build_knots(&[-2.0, 5.0], &cfg).unwrap();
        assert_eq!(cfg.dim(), 10);
        let xs: Vec<f64> = (0..200).map(|i| -2.0 + 7.0 * i as f64 / 199.0).collect();
        let block = expand(&xs, &knots, &cfg);
        assert_eq!(block.ncols(), 10);
        for row in block.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn parametric_mode_is_identity() {
        let cfg = BasisConfig::parametric();
        let knots = vec![0.0, 4.0];
        let block = expand(&[1.0, 2.0, 3.0], &knots, &cfg);
        assert_eq!(block, array![[1.0], [2.0], [3.0]]);
    }

    #[test]
    fn expand_shape_contract() {
        let cfg = BasisConfig::default();
        assert_eq!(cfg.dim(), 6);
        let knots = build_knots(&[0.0, 1.0], &cfg).unwrap();
        let xs: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let block = expand(&xs, &knots, &cfg);
        assert_eq!(block.dim(), (100, 6));
    }

    #[test]
    fn out_of_range_clamps_to_boundary() {
        let cfg = BasisConfig::default();
        let knots = build_knots(&[0.0, 1.0], &cfg).unwrap();
        let block = expand(&[-5.0, 0.0, 1.0, 7.0], &knots, &cfg);
        for k in 0..cfg.dim() {
            assert_eq!(block[[0, k]], block[[1, k]]);
            assert_eq!(block[[2, k]], block[[3, k]]);
        }
    }

    #[test]
    fn center_small_example() {
        let mut block = array![[1.0], [2.0], [3.0]];
        let mu = center(&mut block).unwrap();
        assert_eq!(block, array![[-1.0], [0.0], [1.0]]);
        assert_eq!(mu[0], 2.0);
    }

    #[test]
    fn center_is_idempotent() {
        let mut block = array![[-1.0, 0.5], [0.0, -1.0], [1.0, 0.5]];
        let before = block.clone();
        let mu = center(&mut block).unwrap();
        assert_eq!(block, before);
        assert_eq!(mu, array![0.0, 0.0]);
    }

    #[test]
    fn center_rejects_single_row() {
        let mut block = array![[1.0, 2.0]];
        assert!(matches!(center(&mut block), Err(Error::TooFewRows(1))));
    }

    #[test]
    fn centered_column_means_vanish() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let cfg = BasisConfig::default();
        let xs: Vec<f64> = (0..100).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let knots = build_knots(&xs, &cfg).unwrap();
        let mut block = expand(&xs, &knots, &cfg);
        center(&mut block).unwrap();
        for col in block.columns() {
            assert!(col.mean().unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn expand_is_deterministic() {
        let cfg = BasisConfig::default();
        let xs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let knots = build_knots(&xs, &cfg).unwrap();
        let a = expand(&xs, &knots, &cfg);
        let b = expand(&xs, &knots, &cfg);
        assert_eq!(a, b);
    }
}
