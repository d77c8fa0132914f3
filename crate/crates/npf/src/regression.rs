//! Least-squares machinery for conditional expectations: tensor-product
//! polynomial features on standardized states, and a deterministic ridge
//! solver with a minimum-norm fallback for rank-deficient unregularized
//! systems.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NpfError, Result};

/// Knobs of the backward regression solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionConfig {
    /// Total degree of the tensor-product monomial basis.
    pub basis_degree: usize,
    pub ridge: f64,
    pub picard_iters: usize,
    pub picard_tol: f64,
    /// Optional a priori clamp on regressed continuation values.
    pub clamp_bound: Option<f64>,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            basis_degree: 3,
            ridge: 1e-8,
            picard_iters: 3,
            picard_tol: 1e-10,
            clamp_bound: None,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ridge < 0.0 {
            return Err(NpfError::invalid("regression.ridge must be >= 0"));
        }
        if self.picard_iters == 0 {
            return Err(NpfError::invalid("regression.picard_iters must be >= 1"));
        }
        if !(self.picard_tol > 0.0) {
            return Err(NpfError::invalid("regression.picard_tol must be > 0"));
        }
        if let Some(c) = self.clamp_bound {
            if !(c > 0.0) {
                return Err(NpfError::invalid("regression.clamp_bound must be > 0"));
            }
        }
        Ok(())
    }
}

/// Monomials `prod_j xhat_j^(a_j)` over all multi-indices of total degree
/// at most `degree`, on coordinates standardized by an ensemble mean and
/// standard deviation.
#[derive(Debug, Clone)]
pub struct PolynomialBasis {
    dim: usize,
    exponents: Vec<Vec<u32>>,
    shift: Vec<f64>,
    scale: Vec<f64>,
}

impl PolynomialBasis {
    /// Fits the standardization to an ensemble of points provided through
    /// an accessor, then fixes the monomial set.
    pub fn fit<'a, F>(n_points: usize, dim: usize, degree: usize, point: F) -> Self
    where
        F: Fn(usize) -> &'a [f64],
    {
        assert!(n_points > 0);
        let mut shift = vec![0.0; dim];
        let mut scale = vec![1.0; dim];
        for j in 0..dim {
            let mut sum = 0.0;
            for p in 0..n_points {
                sum += point(p)[j];
            }
            let mean = sum / n_points as f64;
            let mut ss = 0.0;
            for p in 0..n_points {
                let d = point(p)[j] - mean;
                ss += d * d;
            }
            let std = (ss / n_points as f64).sqrt();
            shift[j] = mean;
            // degenerate coordinates (all paths share the value) pass through
            scale[j] = if std > 1e-12 { std } else { 1.0 };
        }
        PolynomialBasis {
            dim,
            exponents: multi_indices(dim, degree),
            shift,
            scale,
        }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    /// Evaluates all basis functions at `x` into `out` (length `len()`).
    /// The first entry is always the constant 1.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.exponents.len());
        let mut xhat = [0.0f64; 8];
        let xhat = if self.dim <= 8 {
            for j in 0..self.dim {
                xhat[j] = (x[j] - self.shift[j]) / self.scale[j];
            }
            &xhat[..self.dim]
        } else {
            unreachable!("spatial dimension is small by construction")
        };
        for (b, expo) in out.iter_mut().zip(&self.exponents) {
            let mut v = 1.0;
            for (j, &e) in expo.iter().enumerate() {
                for _ in 0..e {
                    v *= xhat[j];
                }
            }
            *b = v;
        }
    }
}

/// Multi-indices of total degree <= `degree`, graded lexicographic, the
/// zero index (constant) first.
fn multi_indices(dim: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for total in 0..=degree as u32 {
        let mut current = vec![0u32; dim];
        gen_fixed_total(dim, total, 0, &mut current, &mut out);
    }
    out
}

fn gen_fixed_total(
    dim: usize,
    remaining: u32,
    coord: usize,
    current: &mut Vec<u32>,
    out: &mut Vec<Vec<u32>>,
) {
    if coord == dim - 1 {
        current[coord] = remaining;
        out.push(current.clone());
        return;
    }
    for e in (0..=remaining).rev() {
        current[coord] = e;
        gen_fixed_total(dim, remaining - e, coord + 1, current, out);
    }
    current[coord] = 0;
}

/// Result of a least-squares fit: coefficient matrix (`n_basis x q`) plus
/// any conditioning warning raised along the way.
#[derive(Debug, Clone)]
pub struct RegressionFit {
    pub coeffs: DMatrix<f64>,
    pub warning: Option<String>,
}

impl RegressionFit {
    /// Prediction for one feature row into `out` (length q).
    pub fn predict_into(&self, features: &[f64], out: &mut [f64]) {
        debug_assert_eq!(features.len(), self.coeffs.nrows());
        debug_assert_eq!(out.len(), self.coeffs.ncols());
        for (q, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (b, f) in features.iter().enumerate() {
                acc += self.coeffs[(b, q)] * f;
            }
            *o = acc;
        }
    }
}

/// Ridge least squares: minimizes `|F c - Y|^2 + ridge |c|^2` column by
/// column, via the normal equations. With `ridge = 0` and a rank-deficient
/// system it falls back to the minimum-norm solution and flags it.
pub fn regress(features: &DMatrix<f64>, targets: &DMatrix<f64>, ridge: f64) -> Result<RegressionFit> {
    if features.nrows() != targets.nrows() {
        return Err(NpfError::DimensionMismatch {
            context: "regression rows",
            expected: features.nrows(),
            got: targets.nrows(),
        });
    }
    if ridge < 0.0 {
        return Err(NpfError::invalid("ridge must be >= 0"));
    }
    if features.iter().any(|v| !v.is_finite()) || targets.iter().any(|v| !v.is_finite()) {
        return Err(NpfError::invalid("regression inputs must be finite"));
    }
    let n_basis = features.ncols();

    if ridge == 0.0 {
        // unregularized: solve through the SVD so exact rank deficiency
        // yields the minimum-norm solution instead of a noise-pivot one
        let svd = features.clone().svd(true, true);
        let s_max = svd.singular_values.iter().fold(0.0f64, |a, &s| a.max(s));
        let cutoff = if s_max > 0.0 { 1e-12 * s_max } else { f64::MIN_POSITIVE };
        let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
        let mut coeffs = DMatrix::zeros(n_basis, targets.ncols());
        for q in 0..targets.ncols() {
            let col = DVector::from_column_slice(targets.column(q).as_slice());
            let sol = svd
                .solve(&col, cutoff)
                .map_err(|e| NpfError::invalid(format!("svd solve failed: {e}")))?;
            coeffs.set_column(q, &sol);
        }
        let warning = (rank < n_basis).then(|| {
            format!("rank-deficient system (rank {rank} of {n_basis}) at ridge = 0; used minimum-norm solution")
        });
        return Ok(RegressionFit { coeffs, warning });
    }

    let gram_base = features.transpose() * features;
    let rhs = features.transpose() * targets;

    // escalate the ridge until the normal equations factor
    let mut boosted = ridge;
    for attempt in 0..8 {
        let mut gram = gram_base.clone();
        for i in 0..n_basis {
            gram[(i, i)] += boosted;
        }
        if let Some(chol) = gram.cholesky() {
            let coeffs = chol.solve(&rhs);
            let warning = (attempt > 0).then(|| {
                format!("normal equations numerically singular; ridge escalated to {boosted:e}")
            });
            return Ok(RegressionFit { coeffs, warning });
        }
        boosted *= 100.0;
    }
    Err(NpfError::invalid(
        "regression failed: normal equations singular at all ridge levels",
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multi_index_counts() {
        // C(degree + dim, dim)
        assert_eq!(multi_indices(1, 3).len(), 4);
        assert_eq!(multi_indices(2, 3).len(), 10);
        assert_eq!(multi_indices(3, 3).len(), 20);
        assert_eq!(multi_indices(2, 0).len(), 1);
        // constant first
        assert_eq!(multi_indices(3, 2)[0], vec![0, 0, 0]);
    }

    fn vandermonde(xs: &[f64], degree: usize) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), degree + 1, |i, j| xs[i].powi(j as i32))
    }

    #[test]
    fn recovers_exact_linear_model() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let features = vandermonde(&xs, 2);
        let targets = DMatrix::from_fn(xs.len(), 1, |i, _| 2.0 + 3.0 * xs[i]);
        let fit = regress(&features, &targets, 0.0).unwrap();
        assert!((fit.coeffs[(0, 0)] - 2.0).abs() < 1e-10);
        assert!((fit.coeffs[(1, 0)] - 3.0).abs() < 1e-10);
        assert!(fit.coeffs[(2, 0)].abs() < 1e-10);
        assert!(fit.warning.is_none());
    }

    #[test]
    fn zero_targets_give_zero_coefficients() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let features = vandermonde(&xs, 2);
        let targets = DMatrix::zeros(10, 2);
        let fit = regress(&features, &targets, 1e-8).unwrap();
        assert!(fit.coeffs.iter().all(|&c| c == 0.0));
    }

    // Independent oracle: directly assembled normal equations solved by
    // Gaussian elimination, no shared code with `regress`.
    fn normal_equations_oracle(features: &DMatrix<f64>, targets: &[f64]) -> Vec<f64> {
        let n = features.nrows();
        let b = features.ncols();
        let mut a = vec![vec![0.0; b + 1]; b];
        for r in 0..b {
            for c in 0..b {
                let mut s = 0.0;
                for i in 0..n {
                    s += features[(i, r)] * features[(i, c)];
                }
                a[r][c] = s;
            }
            let mut s = 0.0;
            for i in 0..n {
                s += features[(i, r)] * targets[i];
            }
            a[r][b] = s;
        }
        for col in 0..b {
            let piv = (col..b).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            for row in 0..b {
                if row != col {
                    let fac = a[row][col] / a[col][col];
                    for c in col..=b {
                        a[row][c] -= fac * a[col][c];
                    }
                }
            }
        }
        (0..b).map(|r| a[r][b] / a[r][r]).collect()
    }

    #[test]
    fn projection_preserves_means_and_matches_oracle() {
        // x uniform on [0,1], targets x^2, basis {1, x}
        let xs: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        let features = vandermonde(&xs, 1);
        let t: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let targets = DMatrix::from_fn(xs.len(), 1, |i, _| t[i]);
        let fit = regress(&features, &targets, 0.0).unwrap();

        let oracle = normal_equations_oracle(&features, &t);
        assert!((fit.coeffs[(0, 0)] - oracle[0]).abs() < 1e-10);
        assert!((fit.coeffs[(1, 0)] - oracle[1]).abs() < 1e-10);

        let fitted_mean: f64 = xs
            .iter()
            .map(|&x| fit.coeffs[(0, 0)] + fit.coeffs[(1, 0)] * x)
            .sum::<f64>()
            / xs.len() as f64;
        let target_mean: f64 = t.iter().sum::<f64>() / t.len() as f64;
        assert!((fitted_mean - target_mean).abs() < 1e-12);
    }

    #[test]
    fn rank_deficiency_at_zero_ridge_uses_minimum_norm() {
        // duplicated column: infinitely many minimizers
        let features = DMatrix::from_fn(20, 2, |i, _| i as f64 / 19.0);
        let targets = DMatrix::from_fn(20, 1, |i, _| 2.0 * (i as f64 / 19.0));
        let fit = regress(&features, &targets, 0.0).unwrap();
        assert!(fit.warning.is_some());
        // minimum-norm splits the weight evenly
        assert!((fit.coeffs[(0, 0)] - 1.0).abs() < 1e-8);
        assert!((fit.coeffs[(1, 0)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn basis_standardizes_and_leads_with_constant() {
        let pts = [[0.0, 10.0], [1.0, 20.0], [2.0, 30.0], [3.0, 40.0]];
        let basis = PolynomialBasis::fit(4, 2, 2, |p| &pts[p][..]);
        assert_eq!(basis.len(), 6);
        let mut row = vec![0.0; 6];
        basis.eval_into(&pts[0], &mut row);
        assert_eq!(row[0], 1.0);
        // standardized coordinates are O(1)
        assert!(row.iter().all(|v| v.abs() <= 3.0));
    }

    #[test]
    fn degenerate_coordinate_passes_through() {
        let pts = [[5.0], [5.0], [5.0]];
        let basis = PolynomialBasis::fit(3, 1, 2, |p| &pts[p][..]);
        let mut row = vec![0.0; 3];
        basis.eval_into(&[5.0], &mut row);
        assert_eq!(row, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn config_validation() {
        assert!(RegressionConfig::default().validate().is_ok());
        let c = RegressionConfig {
            picard_iters: 0,
            ..RegressionConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RegressionConfig {
            ridge: -1.0,
            ..RegressionConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
