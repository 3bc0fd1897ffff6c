//! Block-structured datasets and the covariance operators built on them.
//!
//! The solver never needs the p x p covariance itself, only its action on a
//! vector. [`CovOps`] provides `Σ̂v = XᵀXv/n` and the block-diagonal
//! restriction `Λ̂v` as two matrix-vector products per block, which keeps the
//! cost of one proximal step at O(np). For sparse `v` the covariance columns
//! on its support are computed once and cached, dropping the cost to
//! O(p nnz).

use std::cell::RefCell;
use std::collections::HashMap;
use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, ShapeBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Partition of `p` features into `D >= 2` contiguous blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    #[serde(rename = "blocks")]
    block_sizes: Vec<usize>,
    #[serde(skip)]
    offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn new(block_sizes: Vec<usize>) -> Result<Self> {
        if block_sizes.len() < 2 {
            return Err(Error::InvalidLayout(format!(
                "need at least 2 blocks, got {}",
                block_sizes.len()
            )));
        }
        if let Some(d) = block_sizes.iter().position(|&p| p == 0) {
            return Err(Error::InvalidLayout(format!("block {d} is empty")));
        }
        let mut offsets = Vec::with_capacity(block_sizes.len() + 1);
        offsets.push(0);
        for &p in &block_sizes {
            offsets.push(offsets.last().unwrap() + p);
        }
        Ok(Self {
            block_sizes,
            offsets,
        })
    }

    /// `D` blocks of `p_d` features each.
    pub fn uniform(num_blocks: usize, block_size: usize) -> Result<Self> {
        Self::new(vec![block_size; num_blocks])
    }

    pub fn num_blocks(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn num_features(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    /// Feature index range of block `d`.
    pub fn range(&self, d: usize) -> Range<usize> {
        self.offsets[d]..self.offsets[d + 1]
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.num_blocks()).map(|d| self.range(d))
    }

    /// Block containing feature `j`.
    pub fn block_of(&self, j: usize) -> usize {
        debug_assert!(j < self.num_features());
        self.offsets.partition_point(|&o| o <= j) - 1
    }

    pub(crate) fn check_dim(&self, found: usize) -> Result<()> {
        let expected = self.num_features();
        if found != expected {
            return Err(Error::DimensionMismatch { expected, found });
        }
        Ok(())
    }
}

/// Column means and scales used to standardize a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats<T> {
    pub means: Array1<T>,
    pub scales: Array1<T>,
}

impl<T: Real> ColumnStats<T> {
    /// Applies `(x - mean) / scale` column-wise to `raw`.
    pub fn transform(&self, raw: ArrayView2<T>) -> Result<Array2<T>> {
        let p = self.means.len();
        if raw.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: raw.ncols(),
            });
        }
        let mut out = column_major(raw);
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, sd) = (self.means[j], self.scales[j]);
            col.mapv_inplace(|v| (v - m) / sd);
        }
        Ok(out)
    }
}

/// An `n x p` sample matrix together with its block structure.
///
/// The matrix is stored column-major so that per-feature columns are
/// contiguous; every covariance operator is built from column slices.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    x: Array2<T>,
    layout: BlockLayout,
    stats: Option<ColumnStats<T>>,
}

impl<T: Real> Dataset<T> {
    /// Wraps an already-prepared matrix (no centering or scaling applied).
    pub fn new(x: Array2<T>, layout: BlockLayout) -> Result<Self> {
        layout.check_dim(x.ncols())?;
        if x.nrows() < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                found: x.nrows(),
            });
        }
        let x = if x.t().is_standard_layout() {
            x
        } else {
            column_major(x.view())
        };
        Ok(Self {
            x,
            layout,
            stats: None,
        })
    }

    /// Centers every column and, if `scale` is set, rescales it to unit
    /// sample variance (denominator `n - 1`).
    pub fn standardize(raw: ArrayView2<T>, layout: BlockLayout, scale: bool) -> Result<Self> {
        layout.check_dim(raw.ncols())?;
        let n = raw.nrows();
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, found: n });
        }
        let nf = T::from_count(n);
        let mut means = Array1::zeros(raw.ncols());
        let mut scales = Array1::ones(raw.ncols());
        for (j, col) in raw.axis_iter(Axis(1)).enumerate() {
            let mean = col.sum() / nf;
            let ss = col.iter().fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean));
            let sd = (ss / (nf - T::one())).sqrt();
            let spread = col.iter().fold(T::zero(), |acc, &v| acc.max((v - mean).abs()));
            if !(spread > T::tol(1e-12) * mean.abs().max(T::one())) {
                return Err(Error::ConstantColumn(j));
            }
            means[j] = mean;
            if scale {
                scales[j] = sd;
            }
        }
        let stats = ColumnStats { means, scales };
        let x = stats.transform(raw)?;
        Ok(Self {
            x,
            layout,
            stats: Some(stats),
        })
    }

    /// Transforms held-out rows with this dataset's training statistics.
    pub fn apply_standardization(&self, raw: ArrayView2<T>) -> Result<Self> {
        let x = match &self.stats {
            Some(stats) => stats.transform(raw)?,
            None => {
                self.layout.check_dim(raw.ncols())?;
                column_major(raw)
            }
        };
        Ok(Self {
            x,
            layout: self.layout.clone(),
            stats: self.stats.clone(),
        })
    }

    pub fn x(&self) -> ArrayView2<'_, T> {
        self.x.view()
    }

    pub fn into_matrix(self) -> Array2<T> {
        self.x
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn stats(&self) -> Option<&ColumnStats<T>> {
        self.stats.as_ref()
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_standardized(&self) -> bool {
        self.stats.is_some()
    }

    /// Rows selected by `idx`, keeping layout and statistics.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            x: column_major(self.x.select(Axis(0), idx).view()),
            layout: self.layout.clone(),
            stats: self.stats.clone(),
        }
    }

    pub fn cov_ops(&self) -> CovOps<'_, T> {
        CovOps::new(self)
    }

    /// Per-block scores `Z_d = X_[d] beta_[d] / sqrt(n)`, an `n x D` matrix.
    pub fn block_scores(&self, beta: ArrayView1<T>) -> Result<Array2<T>> {
        self.layout.check_dim(beta.len())?;
        let n = self.n_samples();
        let inv_sqrt_n = T::one() / T::from_count(n).sqrt();
        let mut z = Array2::zeros((n, self.layout.num_blocks()));
        for (d, r) in self.layout.ranges().enumerate() {
            let mut col = z.column_mut(d);
            sparse_mat_vec(self.x.slice(s![.., r.clone()]), beta.slice(s![r]), &mut col);
            col *= inv_sqrt_n;
        }
        Ok(z)
    }
}

/// Copies a matrix into column-major storage.
pub(crate) fn column_major<T: Real>(a: ArrayView2<T>) -> Array2<T> {
    let mut out = Array2::zeros(a.raw_dim().f());
    out.assign(&a);
    out
}

/// Dense empirical covariance `XᵀX / n`.
pub fn covariance<T: Real>(x: ArrayView2<T>) -> Array2<T> {
    let n = T::from_count(x.nrows());
    let mut c = x.t().dot(&x);
    c /= n;
    c
}

/// `out = X v`, skipping zero entries of `v`.
pub(crate) fn sparse_mat_vec<T: Real>(
    x: ArrayView2<T>,
    v: ArrayView1<T>,
    out: &mut ndarray::ArrayViewMut1<T>,
) {
    out.fill(T::zero());
    for (j, &vj) in v.iter().enumerate() {
        if vj != T::zero() {
            out.scaled_add(vj, &x.column(j));
        }
    }
}

/// `Xᵀ z` computed column by column.
pub(crate) fn mat_t_vec<T: Real>(x: ArrayView2<T>, z: ArrayView1<T>) -> Array1<T> {
    x.columns().into_iter().map(|c| c.dot(&z)).collect()
}

/// Action of the numerator covariance `Σ̂` and its block-diagonal part `Λ̂`.
pub trait CovOperator<T: Real> {
    fn layout(&self) -> &BlockLayout;

    fn dim(&self) -> usize {
        self.layout().num_features()
    }

    fn sigma_apply(&self, v: ArrayView1<T>) -> Result<Array1<T>>;

    fn lambda_apply(&self, v: ArrayView1<T>) -> Result<Array1<T>>;

    /// `(Σ̂v, Λ̂v)`; implementations may share work between the two.
    fn apply_both(&self, v: ArrayView1<T>) -> Result<(Array1<T>, Array1<T>)> {
        Ok((self.sigma_apply(v)?, self.lambda_apply(v)?))
    }
}

/// How [`CovOps`] evaluates products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovMode {
    #[default]
    MatrixFree,
    /// Materialize `Σ̂` and `Λ̂`; intended for small `p`.
    Dense,
}

/// Covariance operators backed by data matrices.
///
/// The numerator `Σ̂` comes from `numer` and the block-diagonal denominator
/// `Λ̂` from `denom`. They coincide for an ordinary dataset and differ after
/// deflation, where only the numerator is replaced.
#[derive(Debug, Clone)]
pub struct CovOps<'a, T> {
    numer: ArrayView2<'a, T>,
    denom: ArrayView2<'a, T>,
    layout: &'a BlockLayout,
    shared: bool,
    dense: Option<DenseCov<T>>,
    /// Feature `j` -> (`Σ̂e_j`, own-block part of `Λ̂e_j`).
    columns: RefCell<HashMap<usize, (Array1<T>, Array1<T>)>>,
}

/// Upper bound on cached scalars (two columns per feature).
const COLUMN_CACHE_SCALARS: usize = 1 << 24;

impl<'a, T: Real> CovOps<'a, T> {
    pub fn new(ds: &'a Dataset<T>) -> Self {
        Self {
            numer: ds.x(),
            denom: ds.x(),
            layout: ds.layout(),
            shared: true,
            dense: None,
            columns: RefCell::default(),
        }
    }

    /// Numerator from a deflated matrix, denominator from the original data.
    pub fn deflated(numer: ArrayView2<'a, T>, original: &'a Dataset<T>) -> Result<Self> {
        if numer.dim() != original.x().dim() {
            return Err(Error::DimensionMismatch {
                expected: original.n_samples() * original.n_features(),
                found: numer.len(),
            });
        }
        Ok(Self {
            numer,
            denom: original.x(),
            layout: original.layout(),
            shared: false,
            dense: None,
            columns: RefCell::default(),
        })
    }

    pub fn with_mode(mut self, mode: CovMode) -> Self {
        self.dense = match mode {
            CovMode::MatrixFree => None,
            CovMode::Dense => Some(self.to_dense()),
        };
        self
    }

    pub fn mode(&self) -> CovMode {
        if self.dense.is_some() {
            CovMode::Dense
        } else {
            CovMode::MatrixFree
        }
    }

    pub fn n_samples(&self) -> usize {
        self.numer.nrows()
    }

    pub fn numer(&self) -> ArrayView2<'a, T> {
        self.numer
    }

    pub fn denom(&self) -> ArrayView2<'a, T> {
        self.denom
    }

    /// Materialized `(Σ̂, Λ̂)`.
    pub fn to_dense(&self) -> DenseCov<T> {
        let sigma = covariance(self.numer);
        let p = self.layout.num_features();
        let mut lambda = Array2::zeros((p, p));
        for r in self.layout.ranges() {
            let block = covariance(self.denom.slice(s![.., r.clone()]));
            lambda.slice_mut(s![r.clone(), r]).assign(&block);
        }
        DenseCov {
            sigma,
            lambda,
            layout: self.layout.clone(),
        }
    }

    fn inv_n(&self) -> T {
        T::one() / T::from_count(self.numer.nrows())
    }

    /// Per-block denominator scores `X_[d] v_[d]` stacked as columns.
    fn denom_block_scores(&self, v: ArrayView1<T>) -> Array2<T> {
        let n = self.denom.nrows();
        let mut z = Array2::zeros((n, self.layout.num_blocks()).f());
        for (d, r) in self.layout.ranges().enumerate() {
            sparse_mat_vec(
                self.denom.slice(s![.., r.clone()]),
                v.slice(s![r]),
                &mut z.column_mut(d),
            );
        }
        z
    }

    fn lambda_from_scores(&self, z: &Array2<T>) -> Array1<T> {
        let inv_n = self.inv_n();
        let mut out = Array1::zeros(self.layout.num_features());
        for (d, r) in self.layout.ranges().enumerate() {
            let part = mat_t_vec(self.denom.slice(s![.., r.clone()]), z.column(d));
            out.slice_mut(s![r]).assign(&(part * inv_n));
        }
        out
    }

    /// `(Σ̂v, Λ̂v)` from cached columns on `support`, filling missing ones
    /// with one matrix product.
    fn apply_cached(&self, v: ArrayView1<T>, support: &[usize]) -> (Array1<T>, Array1<T>) {
        let p = self.layout.num_features();
        let inv_n = self.inv_n();
        let mut cache = self.columns.borrow_mut();
        let mut missing: Vec<usize> = support.iter().copied().filter(|j| !cache.contains_key(j)).collect();
        if (cache.len() + missing.len()) * 2 * p > COLUMN_CACHE_SCALARS {
            cache.clear();
            missing = support.to_vec();
        }
        if !missing.is_empty() {
            let cols = self.numer.t().dot(&self.numer.select(Axis(1), &missing)) * inv_n;
            for (k, &j) in missing.iter().enumerate() {
                let r = self.layout.range(self.layout.block_of(j));
                let lam = if self.shared {
                    cols.slice(s![r, k]).to_owned()
                } else {
                    self.denom.slice(s![.., r]).t().dot(&self.denom.column(j)) * inv_n
                };
                cache.insert(j, (cols.column(k).to_owned(), lam));
            }
        }
        let (mut sigma, mut lambda) = (Array1::zeros(p), Array1::zeros(p));
        for &j in support {
            let (sc, lc) = &cache[&j];
            sigma.scaled_add(v[j], sc);
            let r = self.layout.range(self.layout.block_of(j));
            lambda.slice_mut(s![r]).scaled_add(v[j], lc);
        }
        (sigma, lambda)
    }

    fn sigma_free(&self, v: ArrayView1<T>) -> Array1<T> {
        let mut xv = Array1::zeros(self.numer.nrows());
        sparse_mat_vec(self.numer, v, &mut xv.view_mut());
        mat_t_vec(self.numer, xv.view()) * self.inv_n()
    }
}

impl<T: Real> CovOperator<T> for CovOps<'_, T> {
    fn layout(&self) -> &BlockLayout {
        self.layout
    }

    fn sigma_apply(&self, v: ArrayView1<T>) -> Result<Array1<T>> {
        self.layout.check_dim(v.len())?;
        if let Some(dense) = &self.dense {
            return dense.sigma_apply(v);
        }
        Ok(self.sigma_free(v))
    }

    fn lambda_apply(&self, v: ArrayView1<T>) -> Result<Array1<T>> {
        self.layout.check_dim(v.len())?;
        if let Some(dense) = &self.dense {
            return dense.lambda_apply(v);
        }
        let z = self.denom_block_scores(v);
        Ok(self.lambda_from_scores(&z))
    }

    fn apply_both(&self, v: ArrayView1<T>) -> Result<(Array1<T>, Array1<T>)> {
        self.layout.check_dim(v.len())?;
        if let Some(dense) = &self.dense {
            return dense.apply_both(v);
        }
        let support: Vec<usize> = v.iter().enumerate().filter(|(_, x)| **x != T::zero()).map(|(j, _)| j).collect();
        // sparse iterates reuse covariance columns across steps
        if support.len() * 8 <= self.numer.nrows() {
            return Ok(self.apply_cached(v, &support));
        }
        let z = self.denom_block_scores(v);
        let lambda = self.lambda_from_scores(&z);
        let sigma = if self.shared {
            // Xv is the sum of the block scores
            let xv = z.sum_axis(Axis(1));
            mat_t_vec(self.numer, xv.view()) * self.inv_n()
        } else {
            self.sigma_free(v)
        };
        Ok((sigma, lambda))
    }
}

/// Explicit `(Σ̂, Λ̂)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCov<T> {
    pub sigma: Array2<T>,
    pub lambda: Array2<T>,
    layout: BlockLayout,
}

impl<T: Real> DenseCov<T> {
    /// Both matrices must be `p x p`; `lambda` is used as given.
    pub fn new(sigma: Array2<T>, lambda: Array2<T>, layout: BlockLayout) -> Result<Self> {
        let p = layout.num_features();
        for m in [&sigma, &lambda] {
            if m.dim() != (p, p) {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: m.nrows().max(m.ncols()),
                });
            }
        }
        Ok(Self {
            sigma,
            lambda,
            layout,
        })
    }

    /// Uses the block-diagonal part of `sigma` as `Λ̂`.
    pub fn from_sigma(sigma: Array2<T>, layout: BlockLayout) -> Result<Self> {
        let p = layout.num_features();
        if sigma.dim() != (p, p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: sigma.nrows(),
            });
        }
        let mut lambda = Array2::zeros((p, p));
        for r in layout.ranges() {
            lambda
                .slice_mut(s![r.clone(), r.clone()])
                .assign(&sigma.slice(s![r.clone(), r]));
        }
        Self::new(sigma, lambda, layout)
    }
}

impl<T: Real> CovOperator<T> for DenseCov<T> {
    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn sigma_apply(&self, v: ArrayView1<T>) -> Result<Array1<T>> {
        self.layout.check_dim(v.len())?;
        Ok(self.sigma.dot(&v))
    }

    fn lambda_apply(&self, v: ArrayView1<T>) -> Result<Array1<T>> {
        self.layout.check_dim(v.len())?;
        Ok(self.lambda.dot(&v))
    }
}
