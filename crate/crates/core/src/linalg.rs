//! Small dense linear algebra: Cholesky factorization, symmetric
//! eigendecomposition (Householder tridiagonalization followed by implicit
//! QL), and the symmetric-definite generalized eigenproblem by whitening.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Lower-triangular `L` with `L Lᵀ = a`.
pub fn cholesky<T: Real>(a: ArrayView2<T>) -> Result<Array2<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.ncols(),
        });
    }
    let mut l = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag = diag - l[[j, k]] * l[[j, k]];
        }
        if !(diag > T::zero()) {
            return Err(Error::CholeskyFailure(j));
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s = s - l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower<T: Real>(l: ArrayView2<T>, b: ArrayView1<T>) -> Array1<T> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s = s - l[[i, k]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_lower_transpose<T: Real>(l: ArrayView2<T>, b: ArrayView1<T>) -> Array1<T> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s = s - l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Eigenpairs of a symmetric matrix, eigenvalues sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    pub values: Array1<T>,
    /// Eigenvectors as columns, ordered like `values`.
    pub vectors: Array2<T>,
}

/// Symmetric eigendecomposition. Only the lower triangle is assumed valid
/// after symmetrization, so slightly asymmetric input is averaged first.
pub fn symmetric_eigen<T: Real>(a: ArrayView2<T>) -> Result<SymmetricEigen<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.ncols(),
        });
    }
    if n == 0 {
        return Ok(SymmetricEigen {
            values: Array1::zeros(0),
            vectors: Array2::zeros((0, 0)),
        });
    }
    let half = T::lit(0.5);
    let mut v = Array2::from_shape_fn((n, n), |(i, j)| (a[[i, j]] + a[[j, i]]) * half);
    let mut d = Array1::zeros(n);
    let mut e = Array1::zeros(n);
    tridiagonalize(&mut v, &mut d, &mut e);
    tridiagonal_ql(&mut v, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].partial_cmp(&d[i]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| d[i]).collect();
    let vectors = v.select(Axis(1), &order);
    Ok(SymmetricEigen { values, vectors })
}

/// Householder reduction to tridiagonal form; on exit `v` holds the
/// accumulated orthogonal transform, `d` the diagonal and `e` the
/// subdiagonal in `e[1..]`.
fn tridiagonalize<T: Real>(v: &mut Array2<T>, d: &mut Array1<T>, e: &mut Array1<T>) {
    let n = v.nrows();
    let zero = T::zero();
    for j in 0..n {
        d[j] = v[[n - 1, j]];
    }
    for i in (1..n).rev() {
        let mut scale = zero;
        let mut h = zero;
        for k in 0..i {
            scale = scale + d[k].abs();
        }
        if scale == zero {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[[i - 1, j]];
                v[[i, j]] = zero;
                v[[j, i]] = zero;
            }
        } else {
            for k in 0..i {
                d[k] = d[k] / scale;
                h = h + d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > zero {
                g = -g;
            }
            e[i] = scale * g;
            h = h - f * g;
            d[i - 1] = f - g;
            for j in 0..i {
                e[j] = zero;
            }
            for j in 0..i {
                f = d[j];
                v[[j, i]] = f;
                g = e[j] + v[[j, j]] * f;
                for k in j + 1..i {
                    g = g + v[[k, j]] * d[k];
                    e[k] = e[k] + v[[k, j]] * f;
                }
                e[j] = g;
            }
            f = zero;
            for j in 0..i {
                e[j] = e[j] / h;
                f = f + e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] = e[j] - hh * d[j];
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                for k in j..i {
                    v[[k, j]] = v[[k, j]] - (f * e[k] + g * d[k]);
                }
                d[j] = v[[i - 1, j]];
                v[[i, j]] = zero;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v[[n - 1, i]] = v[[i, i]];
        v[[i, i]] = T::one();
        let h = d[i + 1];
        if h != zero {
            for k in 0..=i {
                d[k] = v[[k, i + 1]] / h;
            }
            for j in 0..=i {
                let mut g = zero;
                for k in 0..=i {
                    g = g + v[[k, i + 1]] * v[[k, j]];
                }
                for k in 0..=i {
                    v[[k, j]] = v[[k, j]] - g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[[k, i + 1]] = zero;
        }
    }
    for j in 0..n {
        d[j] = v[[n - 1, j]];
        v[[n - 1, j]] = zero;
    }
    v[[n - 1, n - 1]] = T::one();
    e[0] = zero;
}

/// Implicit QL iterations on the tridiagonal matrix from [`tridiagonalize`].
fn tridiagonal_ql<T: Real>(v: &mut Array2<T>, d: &mut Array1<T>, e: &mut Array1<T>) -> Result<()> {
    let n = v.nrows();
    let zero = T::zero();
    let one = T::one();
    let two = T::lit(2.0);
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = zero;

    let mut f = zero;
    let mut tst1 = zero;
    let eps = T::epsilon();
    let max_sweeps = 60 * n.max(1);
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > max_sweeps || !tst1.is_finite() {
                    return Err(Error::NoConvergence("symmetric eigensolver"));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(one);
                if p < zero {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for i in l + 2..n {
                    d[i] = d[i] - h;
                }
                f = f + h;

                p = d[m];
                let mut c = one;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = zero;
                let mut s2 = zero;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let h = v[[k, i + 1]];
                        v[[k, i + 1]] = s * v[[k, i]] + c * h;
                        v[[k, i]] = c * v[[k, i]] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if !(e[l].abs() > eps * tst1) {
                    break;
                }
            }
        }
        d[l] = d[l] + f;
        e[l] = zero;
    }
    Ok(())
}

/// Generalized eigenpairs of `a v = λ b v` with `b` positive definite.
///
/// Eigenvectors are returned as columns normalized to unit Euclidean norm
/// (not `b`-norm), in decreasing order of `λ`.
pub fn generalized_eigen<T: Real>(a: ArrayView2<T>, b: ArrayView2<T>) -> Result<SymmetricEigen<T>> {
    let n = a.nrows();
    if a.dim() != (n, n) || b.dim() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: b.nrows(),
        });
    }
    let l = cholesky(b)?;
    // C = L⁻¹ A L⁻ᵀ, built as L⁻¹ (L⁻¹ A)ᵀ using symmetry of A
    let mut y = Array2::zeros((n, n));
    for j in 0..n {
        y.column_mut(j).assign(&solve_lower(l.view(), a.column(j)));
    }
    let yt = y.t().to_owned();
    let mut c = Array2::zeros((n, n));
    for j in 0..n {
        c.column_mut(j).assign(&solve_lower(l.view(), yt.column(j)));
    }
    let eig = symmetric_eigen(c.view())?;
    let mut vectors = Array2::zeros((n, n));
    for k in 0..n {
        let mut v = solve_lower_transpose(l.view(), eig.vectors.column(k));
        let norm = v.dot(&v).sqrt();
        if norm > T::zero() {
            v /= norm;
        }
        vectors.column_mut(k).assign(&v);
    }
    Ok(SymmetricEigen {
        values: eig.values,
        vectors,
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<T: Real>(a: ArrayView2<T>) -> Result<T> {
    let eig = symmetric_eigen(a)?;
    Ok(eig.values.iter().copied().fold(T::infinity(), T::min))
}

/// Flips `v` so its first entry that is not negligible is positive.
pub fn canonical_sign<T: Real>(v: &mut Array1<T>) {
    let scale = v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    let cutoff = scale * T::tol(1e-12);
    if let Some(first) = v.iter().copied().find(|x| x.abs() > cutoff) {
        if first < T::zero() {
            v.mapv_inplace(|x| -x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let g = Array2::from_shape_fn((n + 3, n), |_| rng.random_range(-1.0..1.0));
        g.t().dot(&g) + Array2::<f64>::eye(n) * 0.1
    }

    #[test]
    fn cholesky_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_spd(7, &mut rng);
        let l = cholesky(a.view()).unwrap();
        let back = l.dot(&l.t());
        assert!((&back - &a).iter().all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0f64, 2.0], [2.0, 1.0]];
        assert!(matches!(cholesky(a.view()), Err(Error::CholeskyFailure(1))));
    }

    #[test]
    fn triangular_solves() {
        let l = array![[2.0f64, 0.0, 0.0], [1.0, 3.0, 0.0], [-1.0, 0.5, 1.5]];
        let b = array![1.0f64, 2.0, 3.0];
        let x = solve_lower(l.view(), b.view());
        assert!((&l.dot(&x) - &b).iter().all(|e| e.abs() < 1e-14));
        let y = solve_lower_transpose(l.view(), b.view());
        assert!((&l.t().dot(&y) - &b).iter().all(|e| e.abs() < 1e-14));
    }

    #[test]
    fn symmetric_eigen_diagonalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for n in [1, 2, 5, 17] {
            let a = random_spd(n, &mut rng) - Array2::<f64>::eye(n) * 2.0;
            let eig = symmetric_eigen(a.view()).unwrap();
            let v = &eig.vectors;
            let vtv = v.t().dot(v);
            assert!((&vtv - &Array2::<f64>::eye(n)).iter().all(|e| e.abs() < 1e-10));
            let recon = v.dot(&Array2::from_diag(&eig.values)).dot(&v.t());
            assert!((&recon - &a).iter().all(|e| e.abs() < 1e-10));
            assert!(eig.values.windows(2).into_iter().all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn known_two_by_two_spectrum() {
        let a = array![[2.0f64, 1.0], [1.0, 2.0]];
        let eig = symmetric_eigen(a.view()).unwrap();
        assert!((eig.values[0] - 3.0).abs() < 1e-14);
        assert!((eig.values[1] - 1.0).abs() < 1e-14);
        let v0 = eig.vectors.column(0);
        assert!((v0[0].abs() - 0.5f64.sqrt()).abs() < 1e-14);
        assert!((v0[0] - v0[1]).abs() < 1e-14);
    }

    #[test]
    fn generalized_pairs_satisfy_equation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_spd(6, &mut rng);
        let b = random_spd(6, &mut rng);
        let eig = generalized_eigen(a.view(), b.view()).unwrap();
        for k in 0..6 {
            let v = eig.vectors.column(k);
            let lhs = a.dot(&v);
            let rhs = b.dot(&v) * eig.values[k];
            assert!((&lhs - &rhs).iter().all(|e| e.abs() < 1e-9));
        }
    }

    #[test]
    fn canonical_sign_makes_leading_entry_positive() {
        let mut v = array![0.0f64, -0.3, 0.4];
        canonical_sign(&mut v);
        assert_eq!(v, array![0.0f64, 0.3, -0.4]);
    }
}
