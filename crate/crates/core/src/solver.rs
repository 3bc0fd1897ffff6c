//! Proximal gradient ascent of the Rayleigh quotient under a decaying l1
//! bound, and selection of one iterate from the resulting path.

use std::io::Write;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{column_major, CovOperator, CovOps, Dataset};
use crate::error::{Error, Result};
use crate::init::{init_direction, InitConfig};
use crate::projection::project_l1_sphere;
use crate::scalar::Real;

/// How the reported iterate is picked from a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selection {
    /// Maximize `f_t − τ ρ̂ √(ln p / n) (‖β_t‖₁ + c₂‖β_t‖₁² / L₀)`.
    Penalized { tau: f64, c2: f64 },
    /// Maximize the mean held-out quotient over contiguous folds.
    CrossValidation { folds: usize },
    LastIterate,
}

impl Default for Selection {
    fn default() -> Self {
        Selection::Penalized { tau: 1.0, c2: 1.0 }
    }
}

/// Step size, l1 bound schedule and stopping rules.
///
/// `l0` and `decay` are data dependent when left unset; see
/// [`SolverConfig::schedule`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub eta: f64,
    pub l0: Option<f64>,
    pub l_inf: f64,
    pub decay: Option<f64>,
    pub max_iters: usize,
    pub selection: Selection,
    pub tol: f64,
    /// Number of times `eta` may be halved when a step overshoots.
    pub max_step_halvings: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            l0: None,
            l_inf: 1.0,
            decay: None,
            max_iters: 1000,
            selection: Selection::default(),
            tol: 1e-8,
            max_step_halvings: 5,
        }
    }
}

impl SolverConfig {
    /// Resolves the bound schedule for `p` features, `n` samples and an
    /// initial direction with l1 norm `beta0_l1`.
    ///
    /// Defaults: `L₀ = min(√p, ⌈‖β₀‖₁⌉)` and
    /// `decay = 1 − min(0.1, 0.5 √(ln p / n))`.
    pub fn schedule(&self, p: usize, n: usize, beta0_l1: f64) -> Result<BoundSchedule> {
        let sqrt_p = (p as f64).sqrt();
        let l0 = self
            .l0
            .unwrap_or_else(|| sqrt_p.min((beta0_l1 - 1e-9).ceil()).max(self.l_inf));
        let decay = self
            .decay
            .unwrap_or_else(|| 1.0 - (0.5 * ((p as f64).ln() / n as f64).sqrt()).min(0.1));
        let sched = BoundSchedule {
            l0,
            l_inf: self.l_inf,
            decay,
        };
        sched.validate(p)?;
        if !(self.eta > 0.0) {
            return Err(Error::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        Ok(sched)
    }
}

/// `L_t = L∞ + decay^t (L₀ − L∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSchedule {
    pub l0: f64,
    pub l_inf: f64,
    pub decay: f64,
}

impl BoundSchedule {
    pub fn validate(&self, p: usize) -> Result<()> {
        let sqrt_p = (p as f64).sqrt();
        if !(self.l_inf >= 1.0 && self.l0 >= self.l_inf && self.l0 <= sqrt_p * (1.0 + 1e-12)) {
            return Err(Error::InvalidConfig(format!(
                "need sqrt(p) = {sqrt_p} >= L0 = {} >= L_inf = {} >= 1",
                self.l0, self.l_inf
            )));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decay must lie in (0, 1), got {}",
                self.decay
            )));
        }
        Ok(())
    }

    pub fn bound(&self, t: usize) -> f64 {
        let t = i32::try_from(t).unwrap_or(i32::MAX);
        self.l_inf + self.decay.powi(t) * (self.l0 - self.l_inf)
    }
}

/// `L∞ + decay^t (L₀ − L∞)`.
pub fn bound_schedule(schedule: &BoundSchedule, t: usize) -> f64 {
    schedule.bound(t)
}

/// One recorded iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate<T> {
    pub t: usize,
    pub beta: Array1<T>,
    pub f: T,
    pub l1: T,
    pub bound: T,
}

/// Full path of iterates produced by [`fit_leading`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub iterates: Vec<Iterate<T>>,
    pub schedule: BoundSchedule,
    /// Step size in effect at the end of the run.
    pub eta: f64,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }

    pub fn last(&self) -> Option<&Iterate<T>> {
        self.iterates.last()
    }

    /// Writes `t,f_t,l1_t,L_t` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "f_t", "l1_t", "L_t"])?;
        for it in &self.iterates {
            w.write_record([
                it.t.to_string(),
                it.f.as_f64().to_string(),
                it.l1.as_f64().to_string(),
                it.bound.as_f64().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One estimated direction.
#[derive(Debug, Clone)]
pub struct DirectionEstimate<T> {
    pub beta: Array1<T>,
    /// Achieved quotient on the data the direction was fitted to.
    pub r_hat: T,
    /// `n x D` per-block scores `X_[d] β_[d] / √n`.
    pub scores: Array2<T>,
    pub selected_iter: usize,
    pub trajectory: Trajectory<T>,
}

fn l1_norm<T: Real>(v: ArrayView1<T>) -> T {
    v.iter().fold(T::zero(), |s, x| s + x.abs())
}

fn quotient<T: Real>(beta: ArrayView1<T>, sigma_beta: &Array1<T>, lambda_beta: &Array1<T>) -> Result<T> {
    let num = beta.dot(sigma_beta);
    let den = beta.dot(lambda_beta);
    let scale = beta.dot(&beta);
    if !(scale > T::zero()) || !(den > T::tol(1e-14) * scale) {
        return Err(Error::DegenerateDenominator(den.as_f64()));
    }
    Ok(num / den)
}

/// `βᵀΣ̂β / βᵀΛ̂β`.
pub fn rayleigh<T: Real, O: CovOperator<T>>(ops: &O, beta: ArrayView1<T>) -> Result<T> {
    let (sb, lb) = ops.apply_both(beta)?;
    quotient(beta, &sb, &lb)
}

/// Gradient of the Rayleigh quotient, `(2 / βᵀΛ̂β)(Σ̂β − f(β) Λ̂β)`.
pub fn gradient<T: Real, O: CovOperator<T>>(ops: &O, beta: ArrayView1<T>) -> Result<Array1<T>> {
    let (sb, lb) = ops.apply_both(beta)?;
    let f = quotient(beta, &sb, &lb)?;
    let den = beta.dot(&lb);
    let scale = T::lit(2.0) / den;
    Ok((sb - &(lb * f)) * scale)
}

/// Current iterate with the products needed for the next step.
struct State<T> {
    beta: Array1<T>,
    sigma_beta: Array1<T>,
    lambda_beta: Array1<T>,
    f: T,
}

impl<T: Real> State<T> {
    fn new<O: CovOperator<T>>(ops: &O, beta: Array1<T>) -> Result<Self> {
        let (sigma_beta, lambda_beta) = ops.apply_both(beta.view())?;
        let f = quotient(beta.view(), &sigma_beta, &lambda_beta)?;
        Ok(Self {
            beta,
            sigma_beta,
            lambda_beta,
            f,
        })
    }

    /// Proximal target `β + (η / f)(Σ̂ − fΛ̂)β`.
    fn target(&self, eta: T) -> Array1<T> {
        let step = eta / self.f;
        let mut theta = self.beta.clone();
        theta.scaled_add(step, &self.sigma_beta);
        theta.scaled_add(-step * self.f, &self.lambda_beta);
        theta
    }
}

/// One proximal update: gradient step to the proximal target, then
/// projection onto `{‖β‖₂ = 1, ‖β‖₁ ≤ bound}`.
pub fn proximal_step<T: Real, O: CovOperator<T>>(
    ops: &O,
    beta: ArrayView1<T>,
    eta: T,
    bound: T,
) -> Result<Array1<T>> {
    let state = State::new(ops, beta.to_owned())?;
    if !(state.f > T::zero()) {
        return Err(Error::DegenerateDenominator(state.f.as_f64()));
    }
    Ok(project_l1_sphere(state.target(eta).view(), bound)?.beta)
}

/// Runs the proximal iterations from `beta0`, recording every iterate.
///
/// The bound for step `t + 1` is `schedule.bound(t + 1)`. The loop ends
/// after `max_iters` steps, or once the bound has reached `L∞` (within
/// `tol`) and the objective changes by less than `tol`. When a step lowers
/// the objective by more than `tol` below what projecting the current
/// iterate alone would give, the step is retried with `η / 2`, at most
/// `max_step_halvings` times over the run.
pub fn fit_leading<T: Real, O: CovOperator<T>>(
    ops: &O,
    beta0: ArrayView1<T>,
    config: &SolverConfig,
    n_samples: usize,
) -> Result<Trajectory<T>> {
    let p = ops.dim();
    if beta0.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: beta0.len(),
        });
    }
    let norm = beta0.dot(&beta0).sqrt();
    if !(norm > T::zero()) {
        return Err(Error::ZeroTarget);
    }
    let beta0 = beta0.mapv(|x| x / norm);
    let l1_0 = l1_norm(beta0.view()).as_f64();
    let schedule = config.schedule(p, n_samples, l1_0)?;
    fit_with_schedule(ops, beta0, config, schedule)
}

pub(crate) fn fit_with_schedule<T: Real, O: CovOperator<T>>(
    ops: &O,
    beta0: Array1<T>,
    config: &SolverConfig,
    schedule: BoundSchedule,
) -> Result<Trajectory<T>> {
    let l1_0 = l1_norm(beta0.view());
    if l1_0.as_f64() > schedule.l0 + 1e-8 {
        return Err(Error::InfeasibleStart {
            l1: l1_0.as_f64(),
            bound: schedule.l0,
        });
    }
    let tol = T::lit(config.tol);
    let mut eta = T::lit(config.eta);
    let mut halvings_left = config.max_step_halvings;

    let mut state = State::new(ops, beta0)?;
    let mut iterates = vec![Iterate {
        t: 0,
        beta: state.beta.clone(),
        f: state.f,
        l1: l1_0,
        bound: T::lit(schedule.l0),
    }];

    for t in 0..config.max_iters {
        if !(state.f > T::zero()) {
            return Err(Error::DegenerateDenominator(state.f.as_f64()));
        }
        let bound_f64 = schedule.bound(t + 1).min(schedule.l0);
        let bound = T::lit(bound_f64);
        let next = loop {
            let proj = project_l1_sphere(state.target(eta).view(), bound)?;
            let cand = State::new(ops, proj.beta)?;
            if cand.f < state.f - tol && halvings_left > 0 {
                let baseline = project_l1_sphere(state.beta.view(), bound)?;
                let base_f = rayleigh(ops, baseline.beta.view())?;
                if cand.f < base_f - tol {
                    eta = eta * T::lit(0.5);
                    halvings_left -= 1;
                    log::debug!("step overshoot at t={t}; eta -> {}", eta.as_f64());
                    continue;
                }
            }
            break cand;
        };
        let delta = (next.f - state.f).abs();
        state = next;
        iterates.push(Iterate {
            t: t + 1,
            beta: state.beta.clone(),
            f: state.f,
            l1: l1_norm(state.beta.view()),
            bound,
        });
        if delta < tol && bound_f64 - schedule.l_inf <= config.tol {
            break;
        }
    }
    Ok(Trajectory {
        iterates,
        schedule,
        eta: eta.as_f64(),
    })
}

/// Index maximizing the penalized objective, with `ρ̂ = max_t f_t` standing
/// in for the population coefficient. Ties go to the later iterate.
pub fn select_penalized<T: Real>(traj: &Trajectory<T>, tau: f64, c2: f64, n: usize) -> Result<usize> {
    let first = traj.iterates.first().ok_or(Error::EmptyTrajectory)?;
    let p = first.beta.len() as f64;
    let rho_hat = traj
        .iterates
        .iter()
        .map(|it| it.f.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let weight = tau * rho_hat * (p.ln() / n as f64).sqrt();
    let l0 = traj.schedule.l0;
    let mut best = (0, f64::NEG_INFINITY);
    for (i, it) in traj.iterates.iter().enumerate() {
        let l1 = it.l1.as_f64();
        let score = it.f.as_f64() - weight * (l1 + c2 * l1 * l1 / l0);
        if score >= best.1 {
            best = (i, score);
        }
    }
    Ok(best.0)
}

/// Numerator rows and denominator dataset of one fitting problem.
///
/// For an ordinary dataset both come from the same matrix; after deflation
/// the numerator is the deflated matrix and the denominator stays the
/// original data.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a, T> {
    pub numer: ArrayView2<'a, T>,
    pub data: &'a Dataset<T>,
    shared: bool,
}

impl<'a, T: Real> Problem<'a, T> {
    pub fn new(data: &'a Dataset<T>) -> Self {
        Self {
            numer: data.x(),
            data,
            shared: true,
        }
    }

    pub fn deflated(numer: ArrayView2<'a, T>, data: &'a Dataset<T>) -> Result<Self> {
        if numer.dim() != data.x().dim() {
            return Err(Error::DimensionMismatch {
                expected: data.n_features(),
                found: numer.ncols(),
            });
        }
        Ok(Self {
            numer,
            data,
            shared: false,
        })
    }

    pub fn ops(&self) -> CovOps<'a, T> {
        if self.shared {
            CovOps::new(self.data)
        } else {
            CovOps::deflated(self.numer, self.data).expect("dimensions checked at construction")
        }
    }

    pub fn n_samples(&self) -> usize {
        self.data.n_samples()
    }
}

/// Owned row subset of a [`Problem`].
struct ProblemRows<T> {
    numer: Option<Array2<T>>,
    data: Dataset<T>,
}

impl<T: Real> ProblemRows<T> {
    fn take(problem: &Problem<'_, T>, rows: &[usize]) -> Self {
        let data = problem.data.select_rows(rows);
        let numer = (!problem.shared).then(|| column_major(problem.numer.select(Axis(0), rows).view()));
        Self { numer, data }
    }

    fn problem(&self) -> Problem<'_, T> {
        match &self.numer {
            Some(numer) => Problem::deflated(numer.view(), &self.data).expect("same row subset"),
            None => Problem::new(&self.data),
        }
    }
}

/// Cross-validated iterate choice, with the mean held-out quotient per `t`.
#[derive(Debug, Clone)]
pub struct CvSelection {
    pub index: usize,
    pub scores: Vec<f64>,
}

/// Start vector of each cross-validation refit.
#[derive(Debug, Clone, Copy)]
pub enum FoldStart<'a> {
    /// Reuse `beta0` on every fold. Only sound when `beta0` was not
    /// computed from the rows being held out.
    Shared,
    /// Rerun screening initialization on each training split.
    Rescreen(&'a InitConfig),
}

/// Refits on each training split with a shared schedule and picks the
/// iteration with the largest mean held-out quotient over `horizon`
/// iterations. Folds are contiguous row ranges; a fold trajectory that
/// stops early is extended with its final iterate.
pub fn select_cv<T: Real>(
    problem: &Problem<'_, T>,
    beta0: ArrayView1<T>,
    config: &SolverConfig,
    schedule: BoundSchedule,
    folds: usize,
    horizon: usize,
    start: FoldStart<'_>,
) -> Result<CvSelection> {
    let n = problem.n_samples();
    if folds < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {folds}")));
    }
    if n < 2 * folds {
        return Err(Error::TooFewSamples {
            needed: 2 * folds,
            found: n,
        });
    }
    let horizon = horizon.max(1);
    let mut totals = vec![0.0; horizon];
    let mut counts = vec![0usize; horizon];
    let capped = SolverConfig {
        max_iters: horizon - 1,
        ..config.clone()
    };
    for k in 0..folds {
        let (lo, hi) = (k * n / folds, (k + 1) * n / folds);
        let train: Vec<usize> = (0..lo).chain(hi..n).collect();
        let test: Vec<usize> = (lo..hi).collect();
        let train_rows = ProblemRows::take(problem, &train);
        let test_rows = ProblemRows::take(problem, &test);
        let train_problem = train_rows.problem();
        let test_problem = test_rows.problem();
        let fold_beta0 = match start {
            FoldStart::Shared => beta0.to_owned(),
            FoldStart::Rescreen(init) => {
                let b = init_direction(&train_problem, init)?.beta;
                if l1_norm(b.view()).as_f64() > schedule.l0 {
                    project_l1_sphere(b.view(), T::lit(schedule.l0))?.beta
                } else {
                    b
                }
            }
        };
        let traj = fit_with_schedule(&train_problem.ops(), fold_beta0, &capped, schedule)?;
        let test_ops = test_problem.ops();
        let mut last = f64::NAN;
        for t in 0..horizon {
            if let Some(it) = traj.iterates.get(t) {
                last = match rayleigh(&test_ops, it.beta.view()) {
                    Ok(v) => v.as_f64(),
                    Err(Error::DegenerateDenominator(_)) => f64::NAN,
                    Err(e) => return Err(e),
                };
            }
            if last.is_finite() {
                totals[t] += last;
                counts[t] += 1;
            }
        }
    }
    let scores: Vec<f64> = totals
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { f64::NEG_INFINITY })
        .collect();
    let mut index = 0;
    for (t, &s) in scores.iter().enumerate() {
        if s >= scores[index] {
            index = t;
        }
    }
    Ok(CvSelection { index, scores })
}

/// Fits one direction on `problem` and applies the configured selection.
/// Cross-validation reuses `beta0` on every fold; see
/// [`estimate_direction_with`] for starts computed from the data.
pub fn estimate_direction<T: Real>(
    problem: &Problem<'_, T>,
    beta0: ArrayView1<T>,
    config: &SolverConfig,
) -> Result<DirectionEstimate<T>> {
    estimate_direction_with(problem, beta0, config, FoldStart::Shared)
}

/// [`estimate_direction`] with an explicit fold start for cross-validation.
pub fn estimate_direction_with<T: Real>(
    problem: &Problem<'_, T>,
    beta0: ArrayView1<T>,
    config: &SolverConfig,
    start: FoldStart<'_>,
) -> Result<DirectionEstimate<T>> {
    let ops = problem.ops();
    let n = problem.n_samples();
    let traj = fit_leading(&ops, beta0, config, n)?;
    let selected = match config.selection {
        Selection::Penalized { tau, c2 } => select_penalized(&traj, tau, c2, n)?,
        Selection::LastIterate => traj.len() - 1,
        Selection::CrossValidation { folds } => {
            let beta0 = &traj.iterates[0].beta;
            select_cv(problem, beta0.view(), config, traj.schedule, folds, traj.len(), start)?.index
        }
    };
    let beta = traj.iterates[selected].beta.clone();
    let r_hat = traj.iterates[selected].f;
    let scores = numerator_scores(problem, beta.view());
    Ok(DirectionEstimate {
        beta,
        r_hat,
        scores,
        selected_iter: selected,
        trajectory: traj,
    })
}

fn numerator_scores<T: Real>(problem: &Problem<'_, T>, beta: ArrayView1<T>) -> Array2<T> {
    let layout = problem.data.layout();
    let n = problem.n_samples();
    let inv_sqrt_n = T::one() / T::from_count(n).sqrt();
    let mut z = Array2::zeros((n, layout.num_blocks()));
    for (d, r) in layout.ranges().enumerate() {
        let block = problem.numer.slice(s![.., r.clone()]);
        let zd = block.dot(&beta.slice(s![r])) * inv_sqrt_n;
        z.column_mut(d).assign(&zd);
    }
    z
}
