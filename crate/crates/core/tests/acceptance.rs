//! Acceptance checks. Each test writes one `PASS`/`FAIL` line to stderr
//! (bypassing output capture) and then asserts.
//!
//! Simulation runs use 20 repetitions of n = 1000 with four blocks of 500
//! features, fitted with step size 1 and 5-fold cross-validated iterate
//! selection.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use mscca::data::covariance;
use mscca::linalg::generalized_eigen;
use mscca::{
    fit_sequential, generate, gradient, project_l1_sphere, projection_residual, rayleigh,
    schur_deflate_cov, summarize, test_deflated_correlation, zeta, BlockLayout, CovFamily, Dataset,
    DeflationState, DenseCov, InitConfig, RegressionMode, Scenario, ScenarioSpec, Selection,
    SolverConfig,
};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const REPS: u64 = 20;
const SEED: u64 = 2024;

fn report(name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "[{tag}] {name}: {detail}");
}

fn fit_config() -> SolverConfig {
    SolverConfig {
        eta: 1.0,
        selection: Selection::CrossValidation { folds: 5 },
        ..SolverConfig::default()
    }
}

struct Run {
    /// `corr[k][rep]`
    corr: Vec<Vec<f64>>,
    resid: Vec<Vec<f64>>,
    elapsed: Duration,
}

impl Run {
    fn mean_corr(&self, k: usize) -> f64 {
        summarize(&self.corr[k]).mean
    }
}

fn run_scenario(scenario: Scenario, s: usize, k: usize) -> Run {
    let start = Instant::now();
    let spec = ScenarioSpec::new(scenario, CovFamily::Identity, 1000, s, SEED);
    let config = fit_config();
    let mut corr = vec![Vec::new(); k];
    let mut resid = vec![Vec::new(); k];
    for rep in 0..REPS {
        let sim = generate(&spec, rep).unwrap();
        let train = Dataset::standardize(sim.train.x(), spec.layout(), true).unwrap();
        let test = train.apply_standardization(sim.test.x()).unwrap();
        let fit = fit_sequential(&train, k, &config, &InitConfig::default()).unwrap();
        let betas: Vec<Array1<f64>> = fit.directions.iter().map(|d| d.beta.clone()).collect();
        let c = test_deflated_correlation(&test, &betas).unwrap();
        let r = projection_residual(&test, sim.truth.xi.view(), &betas, RegressionMode::Joint).unwrap();
        for i in 0..k {
            corr[i].push(c.get(i).copied().unwrap_or(f64::NAN));
            resid[i].push(r.values[i]);
        }
    }
    Run {
        corr,
        resid,
        elapsed: start.elapsed(),
    }
}

fn scenario_b_s1() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| run_scenario(Scenario::B, 1, 2))
}

#[test]
fn criterion_1_scenario_b_two_directions() {
    let run = scenario_b_s1();
    let (d1, d2) = (run.mean_corr(0), run.mean_corr(1));
    let secs = run.elapsed.as_secs_f64();
    let pass = d1 >= 3.55 && d2 >= 2.90 && secs <= 600.0;
    report(
        "scenario B identity (1000,1), 20 reps: test deflated correlation",
        pass,
        &format!(
            "direction 1 mean {d1:.4} (sd {:.4}, need >= 3.55), direction 2 mean {d2:.4} (sd {:.4}, need >= 2.90), runtime {secs:.1} s (need <= 600 s)",
            summarize(&run.corr[0]).sd,
            summarize(&run.corr[1]).sd
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_scenario_a_first_direction() {
    let run = run_scenario(Scenario::A, 1, 1);
    let d1 = run.mean_corr(0);
    let pass = d1 >= 1.75;
    report(
        "scenario A identity (1000,1), 20 reps: test correlation",
        pass,
        &format!("direction 1 mean {d1:.4} (sd {:.4}, need >= 1.75)", summarize(&run.corr[0]).sd),
    );
    assert!(pass);
}

#[test]
fn criterion_3_scenario_b_projection_residual() {
    let run = scenario_b_s1();
    let r = summarize(&run.resid[0]);
    let pass = r.mean <= 1e-2;
    report(
        "scenario B identity (1000,1), 20 reps: projection residual",
        pass,
        &format!("direction 1 mean {:.3e} (sd {:.3e}, need <= 1e-2)", r.mean, r.sd),
    );
    assert!(pass);
}

#[test]
fn criterion_4_monotone_in_sparsity() {
    let m1 = scenario_b_s1().mean_corr(0);
    let m5 = run_scenario(Scenario::B, 5, 1).mean_corr(0);
    let m15 = run_scenario(Scenario::B, 15, 1).mean_corr(0);
    let pass = m5 <= m1 + 0.02 && m15 <= m5 + 0.02;
    report(
        "scenario B identity n=1000: direction 1 correlation non-increasing in s (slack 0.02)",
        pass,
        &format!("s=1 {m1:.4}, s=5 {m5:.4}, s=15 {m15:.4}"),
    );
    assert!(pass);
}

fn unit_gaussian(rng: &mut ChaCha8Rng, p: usize) -> Array1<f64> {
    let v: Array1<f64> = Array1::from_shape_fn(p, |_| StandardNormal.sample(rng));
    let n = v.dot(&v).sqrt();
    v / n
}

fn l1(v: &Array1<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Random unit vector with at most `k` nonzeros.
fn sparse_unit(rng: &mut ChaCha8Rng, p: usize, k: usize) -> Array1<f64> {
    let idx = rand::seq::index::sample(rng, p, k.clamp(1, p));
    let mut v = Array1::<f64>::zeros(p);
    for i in idx {
        v[i] = StandardNormal.sample(rng);
    }
    let n = v.dot(&v).sqrt();
    v / n
}

#[test]
fn criterion_5_projection_optimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let samples = 100_000;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_l2 = 0.0f64;
    let mut worst_l1 = f64::NEG_INFINITY;
    let mut ties = 0;
    for inst in 0..1000 {
        let p = rng.random_range(2..=8);
        let mut theta: Array1<f64> = Array1::from_shape_fn(p, |_| StandardNormal.sample(&mut rng));
        if inst % 10 == 0 {
            // tied top magnitudes
            let m = theta[0].abs().max(0.5);
            let k = rng.random_range(2..=p);
            for j in 0..k {
                theta[j] = if rng.random_bool(0.5) { m } else { -m };
            }
        }
        let bound = rng.random_range(1.0..=(p as f64).sqrt());
        let res = project_l1_sphere(theta.view(), bound).unwrap();
        ties += usize::from(res.tie_case);
        let beta = res.beta;
        worst_l2 = worst_l2.max((beta.dot(&beta).sqrt() - 1.0).abs());
        worst_l1 = worst_l1.max(l1(&beta) - bound);

        let value = beta.dot(&theta);
        let max_support = (bound * bound).floor() as usize;
        let mut best = f64::NEG_INFINITY;
        for i in 0..samples {
            let cand = match i % 3 {
                0 => {
                    let k = rng.random_range(1..=max_support.max(1));
                    sparse_unit(&mut rng, p, k)
                }
                1 => unit_gaussian(&mut rng, p),
                _ => {
                    let scale = 10f64.powf(rng.random_range(-6.0..-1.0));
                    let noise = unit_gaussian(&mut rng, p) * scale;
                    let v = &beta + &noise;
                    let n = v.dot(&v).sqrt();
                    v / n
                }
            };
            if l1(&cand) <= bound {
                best = best.max(cand.dot(&theta));
            }
        }
        worst_gap = worst_gap.max(best - value);
    }

    let mut zeta_violations = 0;
    for _ in 0..1000 {
        let p = rng.random_range(2..=8);
        let theta: Array1<f64> = Array1::from_shape_fn(p, |_| StandardNormal.sample(&mut rng));
        let max = theta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let a = rng.random_range(0.0..max);
        let b = rng.random_range(0.0..max);
        let (c1, c2) = if a < b { (a, b) } else { (b, a) };
        let (z1, z2) = (zeta(theta.view(), c1).unwrap(), zeta(theta.view(), c2).unwrap());
        if z2 > z1 * (1.0 + 1e-12) {
            zeta_violations += 1;
        }
    }

    let pass = worst_gap <= 1e-6 && worst_l2 <= 1e-8 && worst_l1 <= 1e-8 && zeta_violations == 0;
    report(
        "projection optimality, 1000 instances p <= 8 against 1e5 feasible samples",
        pass,
        &format!(
            "worst objective excess of a sample {worst_gap:.2e} (need <= 1e-6), worst | ||b||2 - 1 | {worst_l2:.2e}, worst ||b||1 - L {worst_l1:.2e} (need <= 1e-8), {ties} tie cases, zeta monotonicity violations {zeta_violations}/1000"
        ),
    );
    assert!(pass);
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Data with `d` blocks of `pd` features sharing one latent factor per
/// direction, so that generalized eigenvalues are well separated.
fn coupled_data(rng: &mut ChaCha8Rng, n: usize, d: usize, pd: usize, strengths: &[f64]) -> Array2<f64> {
    let p = d * pd;
    let loadings: Vec<Array1<f64>> = strengths.iter().map(|_| unit_gaussian(rng, p)).collect();
    let mut x = Array2::from_shape_fn((n, p), |_| StandardNormal.sample(rng));
    for (load, &w) in loadings.iter().zip(strengths) {
        for mut row in x.rows_mut() {
            let g: f64 = StandardNormal.sample(rng);
            row.scaled_add(w * g, load);
        }
    }
    x
}

#[test]
fn criterion_6_deflation_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut worst_equiv = 0.0f64;
    let mut worst_psd = 0.0f64;
    let mut worst_annihilation = 0.0f64;
    for _ in 0..200 {
        let p = rng.random_range(2..=20);
        let k = rng.random_range(1..=4.min(p));
        let n = rng.random_range(p + 5..=p + 60);
        let x = Array2::from_shape_fn((n, p), |_| StandardNormal.sample(&mut rng));
        let mut state = DeflationState::new(x.view());
        let mut sigma = covariance(x.view());
        let mut used: Vec<Array1<f64>> = Vec::new();
        for _ in 0..k {
            let beta = unit_gaussian(&mut rng, p);
            state.deflate(beta.view()).unwrap();
            sigma = schur_deflate_cov(sigma.view(), beta.view()).unwrap();
            used.push(beta);
            let dense = state.x_tilde.t().dot(&state.x_tilde) / n as f64;
            worst_equiv = worst_equiv.max(max_abs_diff(&dense, &sigma));
            let min_eig = mscca::linalg::min_eigenvalue(sigma.view()).unwrap();
            worst_psd = worst_psd.max(-min_eig);
            for b in &used {
                let r = sigma.dot(b);
                worst_annihilation = worst_annihilation.max(r.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            }
        }
    }

    // deflated leading direction against the next generalized eigenvector,
    // on instances with a relative eigengap of at least 5%
    let mut worst_vec = 0.0f64;
    let mut checked = 0;
    for inst in 0..20 {
        let d = 2 + inst % 3;
        let pd = (8 / d).max(2);
        let p = d * pd;
        let x = coupled_data(&mut rng, 400, d, pd, &[3.0, 1.5, 0.5]);
        let layout = BlockLayout::uniform(d, pd).unwrap();
        let ds = Dataset::standardize(x.view(), layout.clone(), true).unwrap();
        let dense = DenseCov::from_sigma(covariance(ds.x()), layout).unwrap();
        let oracle = generalized_eigen(dense.sigma.view(), dense.lambda.view()).unwrap();
        let sqrt_p = (p as f64).sqrt();
        let config = SolverConfig {
            eta: 1.0,
            l0: Some(sqrt_p),
            l_inf: sqrt_p,
            decay: Some(0.5),
            max_iters: 20_000,
            tol: 1e-300,
            selection: Selection::LastIterate,
            ..SolverConfig::default()
        };
        // only directions whose eigenvalue is separated from the next one
        let vals = &oracle.values;
        let k = (0..3).take_while(|&i| vals[i] - vals[i + 1] >= 0.05 * vals[i]).count();
        if k == 0 {
            continue;
        }
        let fit = fit_sequential(&ds, k, &config, &InitConfig::default()).unwrap();
        for (i, dir) in fit.directions.iter().enumerate() {
            let v = oracle.vectors.column(i);
            let plus = (&dir.beta - &v).mapv(|e| e * e).sum().sqrt();
            let minus = (&dir.beta + &v).mapv(|e| e * e).sum().sqrt();
            worst_vec = worst_vec.max(plus.min(minus));
            checked += 1;
        }
    }

    let pass = worst_equiv <= 1e-10 && worst_psd <= 1e-10 && worst_annihilation <= 1e-8 && worst_vec <= 1e-6;
    report(
        "deflation: data recursion vs covariance recursion (200 instances p <= 20, K <= 4) and deflated directions vs generalized eigenvectors (p <= 8)",
        pass,
        &format!(
            "max entry difference {worst_equiv:.2e} (need <= 1e-10), most negative eigenvalue {:.2e}, max |S b| {worst_annihilation:.2e}, worst eigenvector distance {worst_vec:.2e} over {checked} directions (need <= 1e-6)",
            -worst_psd
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_gradient_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(2..=4);
        let sizes: Vec<usize> = (0..d).map(|_| rng.random_range(1..=5)).collect();
        let layout = BlockLayout::new(sizes).unwrap();
        let p = layout.num_features();
        let n = p + 20;
        let x = Array2::from_shape_fn((n, p), |_| StandardNormal.sample(&mut rng));
        let ops = DenseCov::from_sigma(covariance(x.view()), layout).unwrap();
        let beta: Array1<f64> = Array1::from_shape_fn(p, |_| StandardNormal.sample(&mut rng));
        let g = gradient(&ops, beta.view()).unwrap();
        let h = 1e-6;
        let mut fd = Array1::zeros(p);
        for j in 0..p {
            let (mut up, mut down) = (beta.clone(), beta.clone());
            up[j] += h;
            down[j] -= h;
            fd[j] = (rayleigh(&ops, up.view()).unwrap() - rayleigh(&ops, down.view()).unwrap()) / (2.0 * h);
        }
        let err = (&g - &fd).mapv(|e| e * e).sum().sqrt() / g.dot(&g).sqrt();
        worst = worst.max(err);
    }
    let pass = worst <= 1e-5;
    report(
        "gradient vs central finite differences, 100 dense instances",
        pass,
        &format!("worst relative error {worst:.2e} (need <= 1e-5)"),
    );
    assert!(pass);
}
