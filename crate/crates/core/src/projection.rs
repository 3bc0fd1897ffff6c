//! Euclidean projection onto the intersection of the unit sphere and an
//! l1 ball, `{β : ‖β‖₂ = 1, ‖β‖₁ ≤ L}`.
//!
//! Away from ties the minimizer is a soft-thresholded copy of the target,
//! renormalized, with the threshold `c` chosen as the smallest value whose
//! l1/l2 ratio [`zeta`] is at most `L`. The ratio is continuous and
//! non-increasing in `c`, so `c` is found by bisection. When the largest
//! magnitudes are tied down to rank `⌈L²⌉` soft-thresholding cannot hit the
//! bound and any non-negative unit vector with l1 norm `L` spread over the
//! tied entries is optimal; we return a deterministic symmetric one.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::scalar::Real;

const BISECTION_TOL: f64 = 1e-12;
const BISECTION_MAX_ITERS: usize = 200;
const TIE_RTOL: f64 = 1e-12;

/// Output of [`project_l1_sphere`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult<T> {
    pub beta: Array1<T>,
    /// Soft-threshold level; zero for pure normalization and in the tie case.
    pub threshold: T,
    /// Set when the top magnitudes were tied and the symmetric rule was used.
    pub tie_case: bool,
}

/// `‖[|θ| − c]₊‖₁ / ‖[|θ| − c]₊‖₂`.
pub fn zeta<T: Real>(theta: ArrayView1<T>, c: T) -> Result<T> {
    let max = theta.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    if !(c < max) || c < T::zero() {
        return Err(Error::DegenerateThreshold {
            c: c.as_f64(),
            max: max.as_f64(),
        });
    }
    Ok(zeta_unchecked(theta.iter().map(|x| x.abs()), c))
}

fn zeta_unchecked<T: Real>(mags: impl Iterator<Item = T>, c: T) -> T {
    let (l1, l2sq) = mags.fold((T::zero(), T::zero()), |(s1, s2), a| {
        let r = a - c;
        if r > T::zero() {
            (s1 + r, s2 + r * r)
        } else {
            (s1, s2)
        }
    });
    l1 / l2sq.sqrt()
}

/// ζ on magnitudes sorted in decreasing order; stops at the first entry
/// that is thresholded away.
fn zeta_sorted<T: Real>(sorted: &[T], c: T) -> T {
    zeta_unchecked(sorted.iter().copied().take_while(|&a| a > c), c)
}

/// Projects `theta` onto `{‖β‖₂ = 1, ‖β‖₁ ≤ bound}`.
pub fn project_l1_sphere<T: Real>(theta: ArrayView1<T>, bound: T) -> Result<ProjectionResult<T>> {
    let p = theta.len();
    let max_bound = T::from_count(p).sqrt();
    if !(bound >= T::one()) || bound > max_bound * (T::one() + T::tol(TIE_RTOL)) {
        return Err(Error::InvalidBound {
            bound: bound.as_f64(),
            max: max_bound.as_f64(),
        });
    }
    let l2 = theta.dot(&theta).sqrt();
    if !(l2 > T::zero()) {
        return Err(Error::ZeroTarget);
    }
    let l1 = theta.iter().fold(T::zero(), |s, x| s + x.abs());
    if l1 / l2 <= bound {
        return Ok(ProjectionResult {
            beta: theta.mapv(|x| x / l2),
            threshold: T::zero(),
            tie_case: false,
        });
    }

    let mut sorted: Vec<T> = theta.iter().map(|x| x.abs()).collect();
    sorted.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let top = sorted[0];
    let rank = tie_rank(bound, p);
    if top - sorted[rank - 1] <= T::tol(TIE_RTOL) * top {
        return Ok(ProjectionResult {
            beta: symmetric_tie_solution(theta, bound, top),
            threshold: T::zero(),
            tie_case: true,
        });
    }

    // ζ(lo) > bound always; ζ(hi) ≤ bound (as a limit when hi = top)
    let mut lo = T::zero();
    let mut hi = if sorted.len() > 1 && sorted[1] < top {
        sorted[1]
    } else {
        top
    };
    let tol = T::tol(BISECTION_TOL) * top;
    for _ in 0..BISECTION_MAX_ITERS {
        if hi - lo <= tol {
            break;
        }
        let mid = (lo + hi) * T::lit(0.5);
        if zeta_sorted(&sorted, mid) <= bound {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let c = hi;
    let mut beta = theta.mapv(|x| {
        let r = x.abs() - c;
        if r > T::zero() {
            x.signum() * r
        } else {
            T::zero()
        }
    });
    let norm = beta.dot(&beta).sqrt();
    beta /= norm;
    Ok(ProjectionResult {
        beta,
        threshold: c,
        tie_case: false,
    })
}

/// `⌈L²⌉` clamped to `[1, p]`, guarding against `L²` landing a rounding
/// error above an integer (e.g. `L = √2`).
fn tie_rank<T: Real>(bound: T, p: usize) -> usize {
    let sq = bound * bound;
    let rank = (sq - sq * T::lit(1e-10)).ceil().to_usize().unwrap_or(p);
    rank.clamp(1, p)
}

/// Non-negative unit vector with l1 norm `bound`, supported on the entries
/// tied at the largest magnitude: weight `a` on the first `k = ⌊L²⌋` of them
/// (by index) and a smaller weight `b` on the next one, signed like `theta`.
fn symmetric_tie_solution<T: Real>(theta: ArrayView1<T>, bound: T, top: T) -> Array1<T> {
    let sq = bound * bound;
    let nearest = sq.round();
    let (k, a, b) = if (sq - nearest).abs() <= T::lit(1e-10) * sq {
        let k = nearest.to_usize().unwrap_or(1).max(1);
        (k, T::one() / T::from_count(k).sqrt(), T::zero())
    } else {
        let k = sq.floor().to_usize().unwrap_or(1).max(1);
        let kf = T::from_count(k);
        // k a + b = L and k a² + b² = 1, taking the larger root for a
        let disc = (kf * (kf + T::one() - sq)).max(T::zero());
        let a = (bound * kf + disc.sqrt()) / (kf + kf * kf);
        let b = (bound - kf * a).max(T::zero());
        (k, a, b)
    };
    let cutoff = top * (T::one() - T::tol(TIE_RTOL));
    let mut beta = Array1::zeros(theta.len());
    let mut used = 0;
    for (j, &x) in theta.iter().enumerate() {
        if x.abs() < cutoff {
            continue;
        }
        let w = match used {
            u if u < k => a,
            u if u == k => b,
            _ => break,
        };
        beta[j] = x.signum() * w;
        used += 1;
    }
    beta
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn l1(v: &Array1<f64>) -> f64 {
        v.iter().map(|x| x.abs()).sum()
    }

    fn l2(v: &Array1<f64>) -> f64 {
        v.dot(v).sqrt()
    }

    #[test]
    fn zeta_equal_entries() {
        let z = zeta(array![1.0f64, 1.0].view(), 0.0).unwrap();
        assert!((z - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zeta_two_survivors() {
        // (2.5 + 0.5) / sqrt(6.25 + 0.25)
        let z = zeta(array![3.0f64, 1.0].view(), 0.5).unwrap();
        assert!((z - 3.0 / 6.5f64.sqrt()).abs() < 1e-15);
        assert!((z - 1.1767).abs() < 1e-4);
    }

    #[test]
    fn zeta_single_survivor() {
        assert_eq!(zeta(array![3.0f64, 1.0].view(), 2.0).unwrap(), 1.0);
    }

    #[test]
    fn zeta_rejects_threshold_at_max() {
        let err = zeta(array![3.0f64, -1.0].view(), 3.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateThreshold { .. }));
    }

    #[test]
    fn feasible_target_is_only_normalized() {
        let res = project_l1_sphere(array![0.6f64, 0.8, 0.0].view(), 3f64.sqrt()).unwrap();
        assert_eq!(res.threshold, 0.0);
        assert!(!res.tie_case);
        assert!((&res.beta - &array![0.6f64, 0.8, 0.0]).iter().all(|e| e.abs() < 1e-15));
    }

    #[test]
    fn symmetric_tie_at_sqrt_two() {
        let res = project_l1_sphere(array![2.0f64, 2.0, 1.0].view(), 2f64.sqrt()).unwrap();
        assert!(res.tie_case);
        let h = 0.5f64.sqrt();
        assert!((&res.beta - &array![h, h, 0.0]).iter().all(|e| e.abs() < 1e-15));
    }

    #[test]
    fn soft_threshold_root() {
        // (4 - 2c)² = 1.44((3 - c)² + (1 - c)²), smaller root
        let (qa, qb, qc): (f64, f64, f64) = (4.0 - 2.88, -16.0 + 11.52, 16.0 - 14.4);
        let root = (-qb - (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa);
        assert!((root - 0.39644).abs() < 1e-5);
        let res = project_l1_sphere(array![3.0f64, 1.0, 0.0].view(), 1.2).unwrap();
        assert!(!res.tie_case);
        assert!((res.threshold - root).abs() < 1e-10);
        assert!((res.beta[0] - 0.97416).abs() < 1e-5);
        assert!((res.beta[1] - 0.22583).abs() < 1e-5);
        assert_eq!(res.beta[2], 0.0);
        assert!((l1(&res.beta) - 1.2).abs() < 1e-6);
    }

    #[test]
    fn unit_bound_picks_single_coordinate() {
        let res = project_l1_sphere(array![0.5f64, -2.0, 1.0].view(), 1.0).unwrap();
        assert_eq!(res.beta, array![0.0f64, -1.0, 0.0]);
    }

    #[test]
    fn tie_with_fractional_bound_spreads_mass() {
        let theta = array![-1.0f64, 1.0, 1.0, 0.2];
        let bound = 1.5;
        let res = project_l1_sphere(theta.view(), bound).unwrap();
        assert!(res.tie_case);
        assert!((l2(&res.beta) - 1.0).abs() < 1e-12);
        assert!((l1(&res.beta) - bound).abs() < 1e-12);
        // two full weights, one partial weight, nothing below the tie
        assert!(res.beta[0] < 0.0 && res.beta[1] > 0.0);
        assert!((res.beta[0].abs() - res.beta[1]).abs() < 1e-15);
        assert!(res.beta[2] > 0.0 && res.beta[2] < res.beta[1]);
        assert_eq!(res.beta[3], 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            project_l1_sphere(array![0.0f64, 0.0].view(), 1.0),
            Err(Error::ZeroTarget)
        ));
        assert!(matches!(
            project_l1_sphere(array![1.0f64, 0.0].view(), 0.9),
            Err(Error::InvalidBound { .. })
        ));
        assert!(matches!(
            project_l1_sphere(array![1.0f64, 0.0].view(), 1.5),
            Err(Error::InvalidBound { .. })
        ));
    }

    #[test]
    fn sqrt_p_bound_accepted_despite_rounding() {
        let theta = array![1.0f64, 1.0, 1.0, 0.5, 0.25];
        let res = project_l1_sphere(theta.view(), 5f64.sqrt()).unwrap();
        assert!((l2(&res.beta) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn thresholded_entries_are_exact_zeros() {
        let theta = array![0.9f64, -0.7, 0.3, 0.1, -0.05];
        let res = project_l1_sphere(theta.view(), 1.3).unwrap();
        for (j, &t) in theta.iter().enumerate() {
            if t.abs() <= res.threshold {
                assert_eq!(res.beta[j], 0.0);
            } else {
                assert_eq!(res.beta[j].signum(), t.signum());
            }
        }
    }

    #[test]
    fn works_in_single_precision() {
        let res = project_l1_sphere(array![3.0f32, 1.0, 0.0].view(), 1.2).unwrap();
        assert!((res.beta[0] - 0.97416).abs() < 1e-4);
    }
}
