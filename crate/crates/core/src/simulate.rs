//! Gaussian multi-block data with known canonical directions.
//!
//! Each block `d` has within-block covariance `Λ_d` and loadings `U_d`
//! (`p_d x K`, s-sparse, `U_dᵀΛ_dU_d = I`). Informative blocks are coupled
//! through `Σ_[d][d'] = Λ_d U_d Γ U_d'ᵀ Λ_d'` with `Γ = diag(ρ̃)`. In
//! scenario A only the first two blocks are informative, in scenario B all
//! of them are.
//!
//! Rows are drawn from the factorization
//! `Σ = blockdiag(Λ_d − Λ_dU_dΓU_dᵀΛ_d) + W (J ⊗ Γ) Wᵀ`, `W = blockdiag(Λ_dU_d)`:
//! independent per-block noise plus one latent vector `g ~ N(0, I_K)` shared
//! by the informative blocks. Only `p_d x p_d` factorizations are needed.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, ShapeBuilder};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{BlockLayout, Dataset};
use crate::error::{Error, Result};
use crate::linalg::cholesky;

/// Number of test rows drawn alongside the training rows.
pub const DEFAULT_TEST_ROWS: usize = 2000;

const MAX_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Only blocks 1 and 2 are correlated.
    A,
    /// All blocks are correlated.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovFamily {
    Identity,
    /// Three spikes of size 5 on a random orthonormal basis, rescaled to
    /// unit diagonal.
    Spiked,
    /// `0.3^|i-j|`.
    Toeplitz,
}

/// How the sparse supports of the `K` loading columns are drawn in a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportMode {
    /// One support of size `s` for all columns; needs `s ≥ K`.
    Shared,
    /// A separate support of size `s` per column.
    #[default]
    Independent,
}

macro_rules! parse_enum {
    ($ty:ty, $($name:literal => $variant:expr),+) => {
        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    other => Err(Error::Parse(format!(
                        "unknown {} '{}'", stringify!($ty), other
                    ))),
                }
            }
        }
    };
}

parse_enum!(Scenario, "a" => Scenario::A, "b" => Scenario::B);
parse_enum!(CovFamily, "identity" => CovFamily::Identity, "spiked" => CovFamily::Spiked, "toeplitz" => CovFamily::Toeplitz);
parse_enum!(SupportMode, "shared" => SupportMode::Shared, "independent" => SupportMode::Independent);

impl fmt::Display for CovFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovFamily::Identity => "identity",
            CovFamily::Spiked => "spiked",
            CovFamily::Toeplitz => "toeplitz",
        })
    }
}

/// Full description of one simulated design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub cov_family: CovFamily,
    pub num_blocks: usize,
    pub block_size: usize,
    pub k_true: usize,
    pub n: usize,
    pub n_test: usize,
    /// Per-block, per-column sparsity.
    pub s: usize,
    /// Strictly decreasing values in `(0, 1)`.
    pub rho_tilde: Vec<f64>,
    pub support: SupportMode,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Defaults: 4 blocks of 500 features, 3 directions with
    /// `ρ̃_k = 0.9 − (k − 1)/5`, 2000 test rows.
    pub fn new(scenario: Scenario, cov_family: CovFamily, n: usize, s: usize, seed: u64) -> Self {
        let k_true = 3;
        Self {
            scenario,
            cov_family,
            num_blocks: 4,
            block_size: 500,
            k_true,
            n,
            n_test: DEFAULT_TEST_ROWS,
            s,
            rho_tilde: default_rho_tilde(k_true),
            support: SupportMode::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if self.num_blocks < 2 {
            return bad(format!("need at least 2 blocks, got {}", self.num_blocks));
        }
        if self.block_size == 0 || self.k_true == 0 {
            return bad("block size and number of directions must be positive".into());
        }
        if self.s == 0 || self.s > self.block_size {
            return bad(format!("sparsity s = {} must lie in [1, {}]", self.s, self.block_size));
        }
        if self.support == SupportMode::Shared && self.s < self.k_true {
            return bad(format!(
                "shared support of size {} cannot hold {} orthonormal columns",
                self.s, self.k_true
            ));
        }
        if self.support == SupportMode::Independent && self.k_true > self.block_size {
            return bad(format!("{} directions exceed block size {}", self.k_true, self.block_size));
        }
        if self.rho_tilde.len() != self.k_true {
            return bad(format!(
                "expected {} coupling values, got {}",
                self.k_true,
                self.rho_tilde.len()
            ));
        }
        let decreasing = self.rho_tilde.windows(2).all(|w| w[0] > w[1]);
        if !decreasing || !self.rho_tilde.iter().all(|&r| r > 0.0 && r < 1.0) {
            return bad(format!("coupling values must decrease within (0, 1): {:?}", self.rho_tilde));
        }
        if self.n < 2 || self.n_test < 2 {
            return bad("need at least 2 training and 2 test rows".into());
        }
        Ok(())
    }

    pub fn layout(&self) -> BlockLayout {
        BlockLayout::uniform(self.num_blocks, self.block_size).expect("validated spec")
    }

    pub fn informative_blocks(&self) -> usize {
        match self.scenario {
            Scenario::A => 2,
            Scenario::B => self.num_blocks,
        }
    }

    /// `1 + (D_inf − 1) ρ̃_k` for `D_inf` informative blocks.
    pub fn population_rho(&self) -> Vec<f64> {
        let m = (self.informative_blocks() - 1) as f64;
        self.rho_tilde.iter().map(|r| 1.0 + m * r).collect()
    }
}

/// `ρ̃_k = 0.9 − (k − 1)/5`.
pub fn default_rho_tilde(k_true: usize) -> Vec<f64> {
    (0..k_true).map(|k| 0.9 - k as f64 / 5.0).collect()
}

/// Population quantities of a simulated design.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub layout: BlockLayout,
    /// `p x K` loadings, zero in non-informative blocks.
    pub u: Array2<f64>,
    /// `p x K` unit-norm canonical directions.
    pub xi: Array2<f64>,
    pub rho: Vec<f64>,
    pub rho_tilde: Vec<f64>,
    pub lambda_blocks: Vec<Array2<f64>>,
    pub informative: usize,
    /// `support[d][k]`: nonzero rows of column `k` of `U_d`, block-local.
    pub support: Vec<Vec<Vec<usize>>>,
}

impl GroundTruth {
    /// Dense block-diagonal `Λ`.
    pub fn lambda(&self) -> Array2<f64> {
        let p = self.layout.num_features();
        let mut out = Array2::zeros((p, p));
        for (r, lam) in self.layout.ranges().zip(&self.lambda_blocks) {
            out.slice_mut(s![r.clone(), r]).assign(lam);
        }
        out
    }

    /// Dense population covariance `Σ`.
    pub fn sigma(&self) -> Array2<f64> {
        let mut out = self.lambda();
        let ranges: Vec<_> = self.layout.ranges().collect();
        let lu: Vec<Array2<f64>> = (0..self.informative)
            .map(|d| self.lambda_blocks[d].dot(&self.u.slice(s![ranges[d].clone(), ..])))
            .collect();
        let gamma = Array2::from_diag(&Array1::from(self.rho_tilde.clone()));
        for a in 0..self.informative {
            for b in 0..self.informative {
                if a != b {
                    let block = lu[a].dot(&gamma).dot(&lu[b].t());
                    out.slice_mut(s![ranges[a].clone(), ranges[b].clone()]).assign(&block);
                }
            }
        }
        out
    }
}

/// Simulated training data, test data and ground truth. Data are raw
/// (not standardized).
#[derive(Debug, Clone)]
pub struct Simulation {
    pub train: Dataset<f64>,
    pub test: Dataset<f64>,
    pub truth: GroundTruth,
    /// Stream id of the attempt that succeeded.
    pub stream: u64,
}

/// Within-block covariance of the given family.
pub fn build_lambda<R: Rng + ?Sized>(family: CovFamily, p_d: usize, rng: &mut R) -> Array2<f64> {
    match family {
        CovFamily::Identity => Array2::eye(p_d),
        CovFamily::Toeplitz => Array2::from_shape_fn((p_d, p_d), |(i, j)| 0.3f64.powi(i.abs_diff(j) as i32)),
        CovFamily::Spiked => {
            let spikes = p_d.min(3);
            let raw = Array2::from_shape_fn((p_d, spikes), |_| StandardNormal.sample(rng));
            let basis = gram_schmidt(raw.view(), None).expect("gaussian columns are independent");
            let mut lam = Array2::eye(p_d);
            for k in 0..spikes {
                let u = basis.column(k);
                for i in 0..p_d {
                    for j in 0..p_d {
                        lam[[i, j]] += 5.0 * u[i] * u[j];
                    }
                }
            }
            let scale: Array1<f64> = lam.diag().mapv(|v: f64| 1.0 / v.sqrt());
            for ((i, j), v) in lam.indexed_iter_mut() {
                *v *= scale[i] * scale[j];
            }
            lam
        }
    }
}

/// Orthonormalizes columns in the inner product `⟨a, b⟩ = aᵀMb` (`M = I`
/// when `None`), with one re-orthogonalization pass. Returns `None` when a
/// column is numerically dependent on the previous ones.
fn gram_schmidt(a: ArrayView2<f64>, metric: Option<&Array2<f64>>) -> Option<Array2<f64>> {
    let apply = |v: &Array1<f64>| match metric {
        Some(m) => m.dot(v),
        None => v.clone(),
    };
    let mut out = a.to_owned();
    for k in 0..a.ncols() {
        let mut v = out.column(k).to_owned();
        let start = apply(&v).dot(&v).sqrt();
        for _ in 0..2 {
            let mv = apply(&v);
            for j in 0..k {
                let q = out.column(j);
                let c = q.dot(&mv);
                v.scaled_add(-c, &q);
            }
        }
        let norm = apply(&v).dot(&v).sqrt();
        if !(norm > 1e-8 * start) {
            return None;
        }
        out.column_mut(k).assign(&(v / norm));
    }
    Some(out)
}

struct BlockSampler {
    /// Cholesky factor of `Λ_d`, `None` for the identity.
    chol: Option<Array2<f64>>,
    /// `V = CᵀU_d` (orthonormal columns), informative blocks only.
    v: Option<Array2<f64>>,
    /// `Λ_d U_d Γ^{1/2}`.
    latent: Option<Array2<f64>>,
}

impl BlockSampler {
    /// Maps standard normal noise `e` (`n x p_d`) and latent `g` (`n x K`)
    /// to block rows with covariance `Λ_d − Λ_dU_dΓU_dᵀΛ_d` from `e` and
    /// `Λ_dU_dΓU_d'ᵀΛ_d'` across blocks from `g`.
    ///
    /// With `C` the Cholesky factor of `Λ_d` and `V = CᵀU_d`, the noise
    /// factor is `C (I − V D Vᵀ)` where `D = I − (I − Γ)^{1/2}`.
    fn transform(&self, mut e: Array2<f64>, g: ArrayView2<f64>, shrink: &Array1<f64>) -> Array2<f64> {
        if let Some(v) = &self.v {
            let mut proj = e.dot(v);
            for mut row in proj.rows_mut() {
                row *= shrink;
            }
            e = e - proj.dot(&v.t());
        }
        let mut x = match &self.chol {
            Some(c) => e.dot(&c.t()),
            None => e,
        };
        if let Some(l) = &self.latent {
            x = x + g.dot(&l.t());
        }
        x
    }
}

/// Draws one simulated data set on stream `stream` of the spec's seed.
///
/// If the sparse loadings of an attempt are degenerate (for instance two
/// independent size-1 supports that coincide) the draw is repeated on a
/// fresh sub-stream, up to 10 times.
pub fn generate(spec: &ScenarioSpec, stream: u64) -> Result<Simulation> {
    spec.validate()?;
    for attempt in 0..MAX_ATTEMPTS {
        let sub = stream
            .checked_mul(MAX_ATTEMPTS as u64)
            .and_then(|v| v.checked_add(attempt as u64))
            .ok_or_else(|| Error::InvalidScenario(format!("stream id {stream} too large")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(sub);
        match try_generate(spec, &mut rng) {
            Ok((train, test, truth)) => {
                return Ok(Simulation {
                    train,
                    test,
                    truth,
                    stream: sub,
                })
            }
            Err(Error::NotPsd(_)) | Err(Error::CholeskyFailure(_)) => {
                log::debug!("simulation attempt {attempt} degenerate; redrawing");
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::NotPsd(MAX_ATTEMPTS))
}

type Draw = (Dataset<f64>, Dataset<f64>, GroundTruth);

fn try_generate(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Result<Draw> {
    let layout = spec.layout();
    let (pd, k, big_d) = (spec.block_size, spec.k_true, spec.num_blocks);
    let informative = spec.informative_blocks();
    let p = layout.num_features();

    let lambda_blocks: Vec<Array2<f64>> = (0..big_d)
        .map(|_| build_lambda(spec.cov_family, pd, rng))
        .collect();

    let mut u = Array2::zeros((p, k));
    let mut support = Vec::with_capacity(big_d);
    for (d, lam) in lambda_blocks.iter().enumerate().take(informative) {
        let supp: Vec<Vec<usize>> = match spec.support {
            SupportMode::Shared => {
                let mut idx = sample(rng, pd, spec.s).into_vec();
                idx.sort_unstable();
                vec![idx; k]
            }
            SupportMode::Independent => (0..k)
                .map(|_| {
                    let mut idx = sample(rng, pd, spec.s).into_vec();
                    idx.sort_unstable();
                    idx
                })
                .collect(),
        };
        let mut raw = Array2::zeros((pd, k));
        for (c, idx) in supp.iter().enumerate() {
            for &i in idx {
                raw[[i, c]] = StandardNormal.sample(rng);
            }
        }
        let metric = (spec.cov_family != CovFamily::Identity).then_some(lam);
        let ud = gram_schmidt(raw.view(), metric).ok_or(Error::NotPsd(d))?;
        let r = layout.range(d);
        u.slice_mut(s![r, ..]).assign(&ud);
        support.push(supp);
    }
    support.resize(big_d, Vec::new());

    let mut xi = u.clone();
    for mut col in xi.columns_mut() {
        let norm = col.dot(&col).sqrt();
        col /= norm;
    }
    let truth = GroundTruth {
        layout: layout.clone(),
        u,
        xi,
        rho: spec.population_rho(),
        rho_tilde: spec.rho_tilde.clone(),
        lambda_blocks,
        informative,
        support,
    };

    let samplers = block_samplers(&truth, spec.cov_family)?;
    let shrink: Array1<f64> = spec.rho_tilde.iter().map(|r| 1.0 - (1.0 - r).sqrt()).collect();
    let train = draw_rows(&truth, &samplers, &shrink, spec.n, rng);
    let test = draw_rows(&truth, &samplers, &shrink, spec.n_test, rng);
    Ok((
        Dataset::new(train, layout.clone())?,
        Dataset::new(test, layout)?,
        truth,
    ))
}

fn block_samplers(truth: &GroundTruth, family: CovFamily) -> Result<Vec<BlockSampler>> {
    let sqrt_gamma: Array1<f64> = truth.rho_tilde.iter().map(|r| r.sqrt()).collect();
    truth
        .layout
        .ranges()
        .zip(&truth.lambda_blocks)
        .enumerate()
        .map(|(d, (r, lam))| {
            let chol = match family {
                CovFamily::Identity => None,
                _ => Some(cholesky(lam.view())?),
            };
            if d >= truth.informative {
                return Ok(BlockSampler {
                    chol,
                    v: None,
                    latent: None,
                });
            }
            let ud = truth.u.slice(s![r, ..]);
            let v = match &chol {
                Some(c) => c.t().dot(&ud),
                None => ud.to_owned(),
            };
            let mut latent = lam.dot(&ud);
            for mut row in latent.rows_mut() {
                row *= &sqrt_gamma;
            }
            Ok(BlockSampler {
                chol,
                v: Some(v),
                latent: Some(latent),
            })
        })
        .collect()
}

fn draw_rows(
    truth: &GroundTruth,
    samplers: &[BlockSampler],
    shrink: &Array1<f64>,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let p = truth.layout.num_features();
    let k = truth.rho_tilde.len();
    let g: Array2<f64> = Array2::from_shape_fn((n, k), |_| StandardNormal.sample(rng));
    let mut x = Array2::zeros((n, p).f());
    for (r, sampler) in truth.layout.ranges().zip(samplers) {
        let e: Array2<f64> = Array2::from_shape_fn((n, r.len()), |_| StandardNormal.sample(rng));
        let block = sampler.transform(e, g.view(), shrink);
        x.slice_mut(s![.., r]).assign(&block);
    }
    x
}

/// `ξᵀΣξ / ξᵀΛξ` for every column of `xi`, in dense arithmetic.
pub fn population_quotients(truth: &GroundTruth) -> Vec<f64> {
    let sigma = truth.sigma();
    let lambda = truth.lambda();
    truth
        .xi
        .axis_iter(Axis(1))
        .map(|v| v.dot(&sigma.dot(&v)) / v.dot(&lambda.dot(&v)))
        .collect()
}
