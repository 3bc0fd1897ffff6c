//! Sequential directions by deflating the data matrix.
//!
//! After direction `β` is estimated, the aggregated score `Z̃ = X̃β` is
//! projected out of the current data, `X̃' = (I − Z̃Z̃ᵀ/‖Z̃‖²) X̃`, and the
//! next direction is fitted with `X̃'ᵀX̃'/n` in the numerator while the
//! denominator keeps the block-diagonal covariance of the original data.
//! The equivalent covariance recursion, [`schur_deflate_cov`], is provided
//! for dense checks.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::data::{column_major, Dataset};
use crate::error::{Error, Result};
use crate::init::{init_direction, InitConfig};
use crate::scalar::Real;
use crate::solver::{estimate_direction_with, DirectionEstimate, FoldStart, Problem, SolverConfig};

/// Deflated quotients below `1 + EARLY_STOP_MARGIN` end the sequence.
pub const EARLY_STOP_MARGIN: f64 = 1e-3;

const MIN_SCORE_NORM: f64 = 1e-12;

/// Current deflated data and the directions removed so far.
#[derive(Debug, Clone)]
pub struct DeflationState<T> {
    /// Column-major `n x p`.
    pub x_tilde: Array2<T>,
    /// `(β_k, Z̃_k)` in deflation order.
    pub history: Vec<(Array1<T>, Array1<T>)>,
}

impl<T: Real> DeflationState<T> {
    pub fn new(x: ArrayView2<T>) -> Self {
        Self {
            x_tilde: column_major(x),
            history: Vec::new(),
        }
    }

    /// Projects `Z̃ = X̃β` out of the data and records it.
    pub fn deflate(&mut self, beta: ArrayView1<T>) -> Result<()> {
        if beta.len() != self.x_tilde.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.x_tilde.ncols(),
                found: beta.len(),
            });
        }
        let mut z = Array1::zeros(self.x_tilde.nrows());
        for (j, &b) in beta.iter().enumerate() {
            if b != T::zero() {
                z.scaled_add(b, &self.x_tilde.column(j));
            }
        }
        let zz = z.dot(&z);
        if !(zz.sqrt().as_f64() >= MIN_SCORE_NORM) {
            return Err(Error::DegenerateScore(zz.sqrt().as_f64()));
        }
        for mut col in self.x_tilde.columns_mut() {
            let w = col.dot(&z) / zz;
            col.scaled_add(-w, &z);
        }
        self.history.push((beta.to_owned(), z));
        Ok(())
    }
}

/// Functional form of [`DeflationState::deflate`].
pub fn deflate_data<T: Real>(mut state: DeflationState<T>, beta: ArrayView1<T>) -> Result<DeflationState<T>> {
    state.deflate(beta)?;
    Ok(state)
}

/// `Σ̃ − Σ̃ββᵀΣ̃ / (βᵀΣ̃β)`.
pub fn schur_deflate_cov<T: Real>(sigma: ArrayView2<T>, beta: ArrayView1<T>) -> Result<Array2<T>> {
    let p = sigma.nrows();
    if sigma.ncols() != p || beta.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: if sigma.ncols() != p { sigma.ncols() } else { beta.len() },
        });
    }
    let sb = sigma.dot(&beta);
    let q = beta.dot(&sb);
    let scale = beta.dot(&beta) * sigma.diag().iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    if !(q > T::tol(1e-14) * scale) {
        return Err(Error::DegenerateQuadraticForm(q.as_f64()));
    }
    let mut out = sigma.to_owned();
    for i in 0..p {
        for j in 0..p {
            out[[i, j]] -= sb[i] * sb[j] / q;
        }
    }
    Ok(out)
}

/// Directions from [`fit_sequential`] with the matching deflation history.
#[derive(Debug, Clone)]
pub struct SequentialFit<T> {
    pub directions: Vec<DirectionEstimate<T>>,
    pub state: DeflationState<T>,
}

/// Estimates up to `k` directions, each started from the screening
/// initializer on the current deflated problem.
pub fn fit_sequential<T: Real>(
    ds: &Dataset<T>,
    k: usize,
    config: &SolverConfig,
    init: &InitConfig,
) -> Result<SequentialFit<T>> {
    fit_sequential_with_starts(ds, k, config, init, &[])
}

/// As [`fit_sequential`], but direction `i` starts from `starts[i]` when
/// given.
///
/// The sequence stops early, with a warning, when a direction after the
/// first reaches a quotient below `1 + EARLY_STOP_MARGIN`; that direction
/// is not returned.
pub fn fit_sequential_with_starts<T: Real>(
    ds: &Dataset<T>,
    k: usize,
    config: &SolverConfig,
    init: &InitConfig,
    starts: &[Array1<T>],
) -> Result<SequentialFit<T>> {
    if k == 0 {
        return Err(Error::InvalidConfig("number of directions must be at least 1".into()));
    }
    let mut state = DeflationState::new(ds.x());
    let mut directions: Vec<DirectionEstimate<T>> = Vec::with_capacity(k);
    for i in 0..k {
        if i > 0 {
            state.deflate(directions[i - 1].beta.view())?;
        }
        let problem = if i == 0 {
            Problem::new(ds)
        } else {
            Problem::deflated(state.x_tilde.view(), ds)?
        };
        let (beta0, start) = match starts.get(i) {
            Some(b) => (b.clone(), FoldStart::Shared),
            None => (init_direction(&problem, init)?.beta, FoldStart::Rescreen(init)),
        };
        let est = estimate_direction_with(&problem, beta0.view(), config, start)?;
        if i > 0 && est.r_hat.as_f64() < 1.0 + EARLY_STOP_MARGIN {
            log::warn!(
                "direction {} reached quotient {:.6}; no cross-block signal left, stopping",
                i + 1,
                est.r_hat.as_f64()
            );
            break;
        }
        log::info!("direction {}: quotient {:.6}", i + 1, est.r_hat.as_f64());
        directions.push(est);
    }
    Ok(SequentialFit { directions, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{covariance, BlockLayout};
    use crate::linalg::min_eigenvalue;
    use crate::solver::fit_leading;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, p), |_| StandardNormal.sample(&mut rng))
    }

    fn unit(p: usize, seed: u64) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Array1<f64> = Array1::from_shape_fn(p, |_| StandardNormal.sample(&mut rng));
        let n = v.dot(&v).sqrt();
        v / n
    }

    #[test]
    fn empty_history_keeps_data() {
        let x = gaussian(10, 4, 1);
        let st = DeflationState::new(x.view());
        assert_eq!(st.x_tilde, x);
        assert!(st.history.is_empty());
    }

    #[test]
    fn deflated_data_annihilates_score() {
        let x = gaussian(30, 5, 2);
        let beta = unit(5, 3);
        let st = deflate_data(DeflationState::new(x.view()), beta.view()).unwrap();
        let z = &st.history[0].1;
        let w = st.x_tilde.t().dot(z);
        assert!(w.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn repeated_direction_is_degenerate() {
        let x = gaussian(30, 5, 4);
        let beta = unit(5, 5);
        let st = deflate_data(DeflationState::new(x.view()), beta.view()).unwrap();
        assert!(matches!(deflate_data(st, beta.view()), Err(Error::DegenerateScore(_))));
    }

    #[test]
    fn schur_on_identity() {
        let out = schur_deflate_cov(Array2::<f64>::eye(3).view(), array![1.0, 0.0, 0.0].view()).unwrap();
        assert_eq!(out, Array2::from_diag(&array![0.0, 1.0, 1.0]));
    }

    #[test]
    fn schur_annihilates_and_stays_psd() {
        let x = gaussian(40, 6, 6);
        let sigma = covariance(x.view());
        let beta = unit(6, 7);
        let out = schur_deflate_cov(sigma.view(), beta.view()).unwrap();
        assert!(out.dot(&beta).iter().all(|v| v.abs() < 1e-10));
        assert!(min_eigenvalue(out.view()).unwrap() >= -1e-10);
    }

    #[test]
    fn schur_rejects_null_direction() {
        let sigma = Array2::from_diag(&array![0.0, 1.0]);
        assert!(matches!(
            schur_deflate_cov(sigma.view(), array![1.0, 0.0].view()),
            Err(Error::DegenerateQuadraticForm(_))
        ));
    }

    #[test]
    fn data_and_schur_recursions_agree() {
        let x = gaussian(50, 6, 8);
        let n = 50.0;
        let mut st = DeflationState::new(x.view());
        let mut sigma = covariance(x.view());
        for k in 0..3 {
            let beta = unit(6, 20 + k);
            st.deflate(beta.view()).unwrap();
            sigma = schur_deflate_cov(sigma.view(), beta.view()).unwrap();
            let dense = st.x_tilde.t().dot(&st.x_tilde) / n;
            for (a, b) in dense.iter().zip(sigma.iter()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn single_direction_matches_leading_fit() {
        let x = gaussian(80, 9, 9);
        let ds = Dataset::standardize(x.view(), BlockLayout::new(vec![3, 3, 3]).unwrap(), true).unwrap();
        let config = SolverConfig::default();
        let init = InitConfig::default();
        let fit = fit_sequential(&ds, 1, &config, &init).unwrap();
        assert_eq!(fit.directions.len(), 1);
        let beta0 = init_direction(&Problem::new(&ds), &init).unwrap().beta;
        let traj = fit_leading(&ds.cov_ops(), beta0.view(), &config, 80).unwrap();
        assert_eq!(fit.directions[0].trajectory.iterates, traj.iterates);
    }

    #[test]
    fn zero_directions_rejected() {
        let x = gaussian(20, 4, 10);
        let ds = Dataset::standardize(x.view(), BlockLayout::new(vec![2, 2]).unwrap(), true).unwrap();
        assert!(fit_sequential(&ds, 0, &SolverConfig::default(), &InitConfig::default()).is_err());
    }
}
