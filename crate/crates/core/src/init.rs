//! Screening initializer.
//!
//! 1. Soft-threshold the cross-block part of `Σ̂` so that only the `m²`
//!    largest off-diagonal entries (counting both triangles) survive, with
//!    `m = ⌈n / ln p⌉`.
//! 2. In every block keep the features whose thresholded rows have the
//!    largest norm over the other blocks.
//! 3. Solve the dense generalized eigenproblem on the kept set with the
//!    denominator shrunk towards its diagonal by the Schäfer–Strimmer
//!    intensity.
//!
//! Cross-block products are formed one block pair at a time and only the
//! surviving entries are retained, so `Σ̂` is never materialized.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::covariance;
use crate::error::{Error, Result};
use crate::linalg::{canonical_sign, generalized_eigen};
use crate::scalar::Real;
use crate::solver::Problem;

/// Screening budgets. Unset sizes are derived from `n`, `p` and `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// Divisor `K` in the per-block budget `⌈n / (K D)⌉`.
    pub k_budget: usize,
    /// `m`, where `m²` thresholded entries are kept; default `⌈n / ln p⌉`.
    pub max_kept_entries: Option<usize>,
    /// Features kept per block; default `⌈n / (K D)⌉`.
    pub per_block_keep: Option<usize>,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            k_budget: 4,
            max_kept_entries: None,
            per_block_keep: None,
        }
    }
}

impl InitConfig {
    pub fn resolve_m(&self, n: usize, p: usize) -> usize {
        self.max_kept_entries
            .unwrap_or_else(|| (n as f64 / (p as f64).ln()).ceil() as usize)
            .max(1)
    }

    pub fn resolve_per_block(&self, n: usize, num_blocks: usize) -> usize {
        self.per_block_keep
            .unwrap_or_else(|| n.div_ceil(self.k_budget.max(1) * num_blocks))
            .max(1)
    }
}

/// Features kept by [`screen_features`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenedSet {
    /// Sorted feature indices.
    pub indices: Vec<usize>,
    pub per_block: Vec<usize>,
    /// Soft-threshold level applied to `|Σ̂_jℓ|`.
    pub threshold: f64,
    /// Set when every thresholded score was zero and features were ranked
    /// by marginal variance instead.
    pub fallback: bool,
}

impl ScreenedSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Clone, Copy)]
struct Entry {
    mag: f64,
    j: usize,
    l: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.mag
            .total_cmp(&other.mag)
            .then_with(|| other.j.cmp(&self.j))
            .then_with(|| other.l.cmp(&self.l))
    }
}

/// Selects features with strong thresholded cross-block covariance.
///
/// Within each block features are ranked by the norm of their thresholded
/// cross-block row, ties broken by the unthresholded norm and then by
/// index, so exactly `min(per_block_keep, p_d)` features are kept per block.
pub fn screen_features<T: Real>(problem: &Problem<'_, T>, cfg: &InitConfig) -> Result<ScreenedSet> {
    let x = problem.numer;
    let layout = problem.data.layout();
    let (n, p) = x.dim();
    let m = cfg.resolve_m(n, p);
    let keep = cfg.resolve_per_block(n, layout.num_blocks());
    let ranges: Vec<_> = layout.ranges().collect();

    // entries are stored once per unordered pair, so m² matrix entries are
    // ⌈m² / 2⌉ pairs
    let budget = (m * m).div_ceil(2);
    let mut heap: BinaryHeap<Reverse<Entry>> = BinaryHeap::with_capacity(budget + 1);
    let mut raw_norm = vec![0.0f64; p];
    for (a, ra) in ranges.iter().enumerate() {
        for rb in ranges.iter().skip(a + 1) {
            let cross = cross_covariance(x.slice(s![.., ra.clone()]), x.slice(s![.., rb.clone()]));
            for ((i, k), v) in cross.indexed_iter() {
                let (j, l) = (ra.start + i, rb.start + k);
                let mag = v.as_f64().abs();
                raw_norm[j] += mag * mag;
                raw_norm[l] += mag * mag;
                let entry = Entry { mag, j, l };
                if heap.len() < budget {
                    heap.push(Reverse(entry));
                } else if let Some(Reverse(min)) = heap.peek() {
                    if entry > *min {
                        heap.pop();
                        heap.push(Reverse(entry));
                    }
                }
            }
        }
    }
    let total_pairs: usize = {
        let sizes = layout.block_sizes();
        let sum: usize = sizes.iter().sum();
        (sum * sum - sizes.iter().map(|s| s * s).sum::<usize>()) / 2
    };
    let threshold = if budget >= total_pairs {
        0.0
    } else {
        heap.peek().map_or(0.0, |Reverse(e)| e.mag)
    };
    let mut score = vec![0.0f64; p];
    for Reverse(e) in heap.iter() {
        let r = e.mag - threshold;
        if r > 0.0 {
            score[e.j] += r * r;
            score[e.l] += r * r;
        }
    }

    let fallback = score.iter().all(|&s| s == 0.0);
    let variance: Vec<f64> = if fallback {
        log::warn!("screening scores are all zero; ranking features by marginal variance");
        x.columns()
            .into_iter()
            .map(|c| c.dot(&c).as_f64() / n as f64)
            .collect()
    } else {
        Vec::new()
    };

    let mut indices = Vec::new();
    let mut per_block = Vec::with_capacity(ranges.len());
    for r in &ranges {
        let mut feats: Vec<usize> = r.clone().collect();
        if fallback {
            feats.sort_by(|&i, &j| variance[j].total_cmp(&variance[i]).then(i.cmp(&j)));
        } else {
            feats.sort_by(|&i, &j| {
                score[j]
                    .total_cmp(&score[i])
                    .then(raw_norm[j].total_cmp(&raw_norm[i]))
                    .then(i.cmp(&j))
            });
        }
        feats.truncate(keep);
        per_block.push(feats.len());
        indices.extend(feats);
    }
    indices.sort_unstable();
    if indices.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok(ScreenedSet {
        indices,
        per_block,
        threshold,
        fallback,
    })
}

fn cross_covariance<T: Real>(a: ArrayView2<T>, b: ArrayView2<T>) -> Array2<T> {
    let n = T::from_count(a.nrows());
    let mut c = a.t().dot(&b);
    c /= n;
    c
}

/// Schäfer–Strimmer shrinkage intensity towards the diagonal, computed over
/// the off-diagonal pairs of `subset` and clipped to `[0, 1]`.
///
/// The numerator estimates `Σ Var(Σ̂_jℓ)` as `n / (n − 1)³ Σ_k (w_kjℓ − w̄_jℓ)²`
/// with `w_kjℓ` the centered cross-products; the denominator is `Σ Σ̂_jℓ²`.
/// A vanishing denominator yields full shrinkage.
pub fn shrinkage_intensity<T: Real>(x: ArrayView2<T>, subset: &[usize]) -> Result<f64> {
    let n = x.nrows();
    if subset.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "shrinkage needs at least 2 features, got {}",
            subset.len()
        )));
    }
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, found: n });
    }
    let xs = x.select(Axis(1), subset).mapv(|v| v.as_f64());
    let means = xs.mean_axis(Axis(0)).expect("n >= 3");
    let centered = &xs - &means;
    let nf = n as f64;
    let w_bar = centered.t().dot(&centered) / nf;
    let sq = centered.mapv(|v| v * v);
    let w_sq = sq.t().dot(&sq);
    let k = subset.len();
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..k {
        for l in 0..k {
            if j == l {
                continue;
            }
            let ss = (w_sq[[j, l]] - nf * w_bar[[j, l]] * w_bar[[j, l]]).max(0.0);
            num += nf / (nf - 1.0).powi(3) * ss;
            den += w_bar[[j, l]] * w_bar[[j, l]];
        }
    }
    if !(den > f64::MIN_POSITIVE) {
        return Ok(1.0);
    }
    Ok((num / den).clamp(0.0, 1.0))
}

/// Result of [`init_direction`].
#[derive(Debug, Clone)]
pub struct Initialization<T> {
    /// Unit vector supported on the screened set.
    pub beta: Array1<T>,
    pub screened: ScreenedSet,
    /// Shrinkage intensity actually used.
    pub tau: f64,
}

/// Leading generalized eigenvector of `(Σ̂_SS, (1 − τ)Λ̂_SS + τ diag(Λ̂_SS))`
/// on the screened set, embedded in `p` dimensions.
pub fn init_direction<T: Real>(problem: &Problem<'_, T>, cfg: &InitConfig) -> Result<Initialization<T>> {
    let screened = screen_features(problem, cfg)?;
    let tau = if screened.len() >= 2 && problem.n_samples() >= 3 {
        shrinkage_intensity(problem.data.x(), &screened.indices)?
    } else {
        1.0
    };
    let beta = match screened_eigenvector(problem, &screened.indices, tau) {
        Ok(b) => (b, tau),
        Err(Error::CholeskyFailure(_)) if tau < 1.0 => {
            log::warn!("shrunk denominator is singular at tau = {tau}; retrying with tau = 1");
            (screened_eigenvector(problem, &screened.indices, 1.0)?, 1.0)
        }
        Err(e) => return Err(e),
    };
    Ok(Initialization {
        beta: beta.0,
        screened,
        tau: beta.1,
    })
}

/// Unit leading generalized eigenvector on `subset` for a fixed `tau`.
pub fn screened_eigenvector<T: Real>(problem: &Problem<'_, T>, subset: &[usize], tau: f64) -> Result<Array1<T>> {
    let layout = problem.data.layout();
    let sigma = covariance(problem.numer.select(Axis(1), subset).view());
    let full_lambda = covariance(problem.data.x().select(Axis(1), subset).view());
    let k = subset.len();
    let tau_t = T::lit(tau);
    let keep = T::one() - tau_t;
    let lambda = Array2::from_shape_fn((k, k), |(a, b)| {
        if a == b {
            full_lambda[[a, a]]
        } else if layout.block_of(subset[a]) == layout.block_of(subset[b]) {
            keep * full_lambda[[a, b]]
        } else {
            T::zero()
        }
    });
    let eig = generalized_eigen(sigma.view(), lambda.view())?;
    let mut beta = Array1::zeros(layout.num_features());
    for (a, &j) in subset.iter().enumerate() {
        beta[j] = eig.vectors[[a, 0]];
    }
    let norm = beta.dot(&beta).sqrt();
    if !(norm > T::zero()) {
        return Err(Error::ZeroTarget);
    }
    beta /= norm;
    canonical_sign(&mut beta);
    Ok(beta)
}
