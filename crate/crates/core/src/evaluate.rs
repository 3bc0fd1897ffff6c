//! Test-set metrics for a fitted sequence of directions.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{CovOps, Dataset};
use crate::deflation::DeflationState;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, solve_lower, solve_lower_transpose, symmetric_eigen};
use crate::scalar::Real;
use crate::solver::rayleigh;

/// Quotient of each direction on the test data, after deflating the test
/// matrix by all earlier directions. The denominator always uses the
/// undeflated test data.
pub fn test_deflated_correlation<T: Real>(test: &Dataset<T>, betas: &[Array1<T>]) -> Result<Vec<f64>> {
    if betas.is_empty() {
        return Err(Error::InvalidConfig("no directions to evaluate".into()));
    }
    for b in betas {
        test.layout().check_dim(b.len())?;
    }
    let mut state = DeflationState::new(test.x());
    let mut out = Vec::with_capacity(betas.len());
    for (k, beta) in betas.iter().enumerate() {
        if k > 0 {
            state.deflate(betas[k - 1].view())?;
        }
        let value = if k == 0 {
            rayleigh(&CovOps::new(test), beta.view())?
        } else {
            rayleigh(&CovOps::deflated(state.x_tilde.view(), test)?, beta.view())?
        };
        out.push(value.as_f64());
    }
    Ok(out)
}

/// Which estimated scores each true projection is regressed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionMode {
    /// All estimated scores jointly.
    #[default]
    Joint,
    /// Only the estimate with the same index.
    Single,
}

/// Residual variance fractions, one per true direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub values: Vec<f64>,
    /// Set when a regression design was rank deficient and solved by
    /// pseudo-inverse.
    pub pseudo_inverse: bool,
}

/// `Var(Z_ℓ − Ẑ fit) / Var(Z_ℓ)` for `Z_ℓ = X ξ_ℓ`, regressing on the
/// estimated scores `Xβ̂_k` plus an intercept.
///
/// `xi` holds one true direction per column. In [`RegressionMode::Single`]
/// a true direction without a matching estimate is regressed on the
/// intercept alone and gets residual 1.
pub fn projection_residual<T: Real>(
    test: &Dataset<T>,
    xi: ArrayView2<f64>,
    betas: &[Array1<T>],
    mode: RegressionMode,
) -> Result<Residuals> {
    let layout = test.layout();
    layout.check_dim(xi.nrows())?;
    for b in betas {
        layout.check_dim(b.len())?;
    }
    let x = test.x().mapv(|v| v.as_f64());
    let z_true = x.dot(&xi);
    let z_hat: Vec<Array1<f64>> = betas.iter().map(|b| x.dot(&b.mapv(|v| v.as_f64()))).collect();
    let mut pseudo = false;
    let mut values = Vec::with_capacity(xi.ncols());
    for (l, z) in z_true.axis_iter(Axis(1)).enumerate() {
        let regressors: Vec<ArrayView1<f64>> = match mode {
            RegressionMode::Joint => z_hat.iter().map(|v| v.view()).collect(),
            RegressionMode::Single => z_hat.get(l).map(|v| vec![v.view()]).unwrap_or_default(),
        };
        let (resid, flagged) = residual_fraction(z, &regressors)?;
        pseudo |= flagged;
        values.push(resid);
    }
    if pseudo {
        log::warn!("rank-deficient regressors; residuals computed with a pseudo-inverse");
    }
    Ok(Residuals {
        values,
        pseudo_inverse: pseudo,
    })
}

/// Least squares of centered `z` on centered regressors, returned as the
/// residual sum of squares over the total.
fn residual_fraction(z: ArrayView1<f64>, regressors: &[ArrayView1<f64>]) -> Result<(f64, bool)> {
    let n = z.len();
    let zc = &z - z.mean().unwrap_or(0.0);
    let total = zc.dot(&zc);
    if !(total > 0.0) {
        return Err(Error::DegenerateScore(total.sqrt()));
    }
    if regressors.is_empty() {
        return Ok((1.0, false));
    }
    let k = regressors.len();
    let mut design = Array2::zeros((n, k));
    for (j, r) in regressors.iter().enumerate() {
        let m = r.mean().unwrap_or(0.0);
        design.column_mut(j).assign(&r.mapv(|v| v - m));
    }
    let gram = design.t().dot(&design);
    let rhs = design.t().dot(&zc);
    let scale = gram.diag().iter().fold(0.0f64, |m, &v| m.max(v));
    let (coef, flagged) = match cholesky(gram.view()) {
        Ok(l) if well_conditioned(&l, scale) => {
            (solve_lower_transpose(l.view(), solve_lower(l.view(), rhs.view()).view()), false)
        }
        _ => (pseudo_solve(&gram, &rhs, scale)?, true),
    };
    let fitted = design.dot(&coef);
    let resid = &zc - &fitted;
    Ok((resid.dot(&resid) / total, flagged))
}

fn well_conditioned(l: &Array2<f64>, scale: f64) -> bool {
    l.diag().iter().all(|&d| d * d > 1e-12 * scale)
}

fn pseudo_solve(gram: &Array2<f64>, rhs: &Array1<f64>, scale: f64) -> Result<Array1<f64>> {
    let eig = symmetric_eigen(gram.view())?;
    let cutoff = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut coef = Array1::zeros(rhs.len());
    for (i, &lam) in eig.values.iter().enumerate() {
        if lam > cutoff {
            let v = eig.vectors.column(i);
            coef.scaled_add(v.dot(rhs) / lam, &v);
        }
    }
    Ok(coef)
}

/// Mean, standard deviation (denominator `r − 1`) and standard error over
/// repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub count: usize,
}

/// Summary of the finite values in `values`.
pub fn summarize(values: &[f64]) -> Summary {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let count = finite.len();
    if count == 0 {
        return Summary {
            mean: f64::NAN,
            sd: f64::NAN,
            se: f64::NAN,
            count,
        };
    }
    let mean = finite.iter().sum::<f64>() / count as f64;
    let sd = if count > 1 {
        (finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary {
        mean,
        sd,
        se: sd / (count as f64).sqrt(),
        count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BlockLayout;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, p), |_| StandardNormal.sample(&mut rng))
    }

    fn dataset(x: Array2<f64>, blocks: Vec<usize>) -> Dataset<f64> {
        Dataset::standardize(x.view(), BlockLayout::new(blocks).unwrap(), true).unwrap()
    }

    #[test]
    fn first_value_is_plain_quotient() {
        let ds = dataset(gaussian(100, 6, 1), vec![3, 3]);
        let beta = array![0.5, 0.5, 0.0, 0.5, 0.5, 0.0];
        let got = test_deflated_correlation(&ds, &[beta.clone()]).unwrap();
        let want = rayleigh(&ds.cov_ops(), beta.view()).unwrap();
        assert_eq!(got, vec![want]);
    }

    #[test]
    fn single_block_direction_scores_one() {
        let ds = dataset(gaussian(200, 6, 2), vec![3, 3]);
        let beta = array![0.6, 0.8, 0.0, 0.0, 0.0, 0.0];
        let got = test_deflated_correlation(&ds, &[beta]).unwrap();
        assert!((got[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn later_values_use_deflated_numerator() {
        let ds = dataset(gaussian(80, 6, 3), vec![2, 2, 2]);
        let b1 = array![0.5, 0.0, 0.5, 0.0, 0.5, 0.5];
        let b2 = array![0.0, 0.6, 0.0, 0.8, 0.0, 0.0];
        let got = test_deflated_correlation(&ds, &[b1.clone(), b2.clone()]).unwrap();
        let mut st = DeflationState::new(ds.x());
        st.deflate(b1.view()).unwrap();
        let ops = CovOps::deflated(st.x_tilde.view(), &ds).unwrap();
        assert_eq!(got[1], rayleigh(&ops, b2.view()).unwrap());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let ds = dataset(gaussian(20, 4, 4), vec![2, 2]);
        assert!(matches!(
            test_deflated_correlation(&ds, &[array![1.0, 0.0, 0.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn exact_estimate_leaves_no_residual() {
        let ds = dataset(gaussian(50, 4, 5), vec![2, 2]);
        let xi = array![[0.5], [0.5], [0.5], [0.5]];
        let r = projection_residual(&ds, xi.view(), &[xi.column(0).to_owned()], RegressionMode::Joint)
            .unwrap();
        assert!(r.values[0].abs() < 1e-10);
        assert!(!r.pseudo_inverse);
    }

    #[test]
    fn unrelated_estimate_leaves_everything() {
        let ds = dataset(gaussian(4000, 4, 6), vec![2, 2]);
        let xi = array![[1.0], [0.0], [0.0], [0.0]];
        let beta = array![0.0, 1.0, 0.0, 0.0];
        let r = projection_residual(&ds, xi.view(), &[beta], RegressionMode::Joint).unwrap();
        assert!((r.values[0] - 1.0).abs() < 0.05);
    }

    #[test]
    fn duplicate_regressors_use_pseudo_inverse() {
        let ds = dataset(gaussian(60, 4, 7), vec![2, 2]);
        let xi = array![[0.3], [0.4], [0.5], [0.1]];
        let b = array![0.5, 0.5, 0.5, 0.5];
        let r = projection_residual(&ds, xi.view(), &[b.clone(), b.clone()], RegressionMode::Joint)
            .unwrap();
        let single = projection_residual(&ds, xi.view(), &[b], RegressionMode::Joint).unwrap();
        assert!(r.pseudo_inverse);
        assert!((r.values[0] - single.values[0]).abs() < 1e-10);
    }

    #[test]
    fn single_mode_pairs_by_index() {
        let ds = dataset(gaussian(100, 4, 8), vec![2, 2]);
        let xi = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]];
        let betas = [array![0.0, 1.0, 0.0, 0.0], array![1.0, 0.0, 0.0, 0.0]];
        let joint = projection_residual(&ds, xi.view(), &betas, RegressionMode::Joint).unwrap();
        let single = projection_residual(&ds, xi.view(), &betas, RegressionMode::Single).unwrap();
        assert!(joint.values.iter().all(|v| v.abs() < 1e-10));
        assert!(single.values.iter().all(|v| *v > 0.5));
    }

    #[test]
    fn residuals_lie_in_unit_interval() {
        let ds = dataset(gaussian(40, 6, 9), vec![3, 3]);
        let xi = gaussian(6, 3, 10);
        let betas: Vec<Array1<f64>> = gaussian(2, 6, 11).rows().into_iter().map(|r| r.to_owned()).collect();
        let r = projection_residual(&ds, xi.view(), &betas, RegressionMode::Joint).unwrap();
        assert!(r.values.iter().all(|&v| (0.0..=1.0 + 1e-8).contains(&v)));
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&[1.0, 2.0, 3.0, f64::NAN]);
        assert_eq!(s.count, 3);
        assert!((s.mean - 2.0).abs() < 1e-15);
        assert!((s.sd - 1.0).abs() < 1e-15);
        assert!((s.se - 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }
}
