//! Numerical checks of two matrix inequalities that would imply sample-wise
//! monotonicity of optimally tuned ridge with a general penalty `λβᵀQβ`.
//!
//! With `G(n) = λ²E[(XᵀX + λQ)⁻²]` and `H(n) = E[tr(M⁻¹XᵀXM⁻¹)]` the
//! conditions are
//!
//! ```text
//! (1)  G(n) − G(n+1) ⪰ 0
//! (2)  (G(n) − G(n+1)) − (H(n) − H(n+1)) · G'(n)/H'(n) ⪰ 0
//! ```
//!
//! Both are estimated with the `n`-row design being the first rows of the
//! `(n+1)`-row design, and judged against their Monte Carlo error.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::general::{gh_sample, GHSample};
use crate::linalg;
use crate::problem::standard_gaussian;
use crate::stats::{accumulate_trials, CoMoments, MeanVar, Merge};
use crate::stream::{rng_for, trial_seed, Purpose};
use crate::tuner::{default_upper_bound, minimize_over_lambda, LambdaSearchResult, TunerOptions};

/// Trial count used when none is configured and `d <= DEFAULT_TRIALS_MAX_DIM`.
pub const DEFAULT_TRIALS: usize = 100_000;

/// Largest dimension that gets the full default trial count.
pub const DEFAULT_TRIALS_MAX_DIM: usize = 12;

/// Default trial count for dimension `d`, with a warning when it had to be
/// scaled down. Each trial costs O(d^3), so the count shrinks as
/// `DEFAULT_TRIALS * (12 / d)^3`, floored at 1000.
pub fn default_trials(d: usize) -> (usize, Option<String>) {
    if d <= DEFAULT_TRIALS_MAX_DIM {
        return (DEFAULT_TRIALS, None);
    }
    let ratio = DEFAULT_TRIALS_MAX_DIM as f64 / d as f64;
    let trials = ((DEFAULT_TRIALS as f64 * ratio.powi(3)) as usize).max(1000);
    let warning = format!(
        "d = {d} exceeds {DEFAULT_TRIALS_MAX_DIM}: default trials reduced from {DEFAULT_TRIALS} to {trials}, verdicts are less sensitive"
    );
    (trials, Some(warning))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Holds,
    Violated,
    Inconclusive,
}

impl Verdict {
    /// `holds` when `min ≥ −3 se`, `violated` when additionally
    /// `|min| > 10 se`, otherwise `inconclusive`.
    pub fn classify(min_eigenvalue: f64, std_error: f64) -> Self {
        if min_eigenvalue >= -3.0 * std_error {
            Verdict::Holds
        } else if min_eigenvalue.abs() > 10.0 * std_error {
            Verdict::Violated
        } else {
            Verdict::Inconclusive
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Holds => "holds",
            Verdict::Violated => "violated",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Instance {
    pub n: usize,
    pub d: usize,
    pub q_diag: Vec<f64>,
    pub lambda: f64,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PSDReport {
    pub min_eigenvalue: f64,
    /// Bound on the error of `min_eigenvalue`: the Frobenius norm of the
    /// entrywise standard errors, plus a rounding floor.
    pub std_error: f64,
    pub verdict: Verdict,
    pub instance: Instance,
    /// `H(n) − H(n+1)` and its standard error, reported by condition two.
    pub h_difference: Option<(f64, f64)>,
    /// `H'(n)` and its standard error, reported by condition two.
    pub h_derivative: Option<(f64, f64)>,
}

/// How the `(n+1)`-row design relates to the `n`-row one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coupling {
    /// Shared first `n` rows.
    Shared,
    /// Independent draws.
    Independent,
}

fn check_instance(q_diag: &[f64], lambda: f64, trials: usize) -> Result<()> {
    if q_diag.is_empty() {
        return Err(Error::param("q", "dimension must be at least 1"));
    }
    if let Some((index, &value)) = q_diag
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
    {
        return Err(Error::NotPositiveDefinite { index, value });
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::NonPositiveLambda(lambda));
    }
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    Ok(())
}

/// Per-entry co-moments of `(ΔG, G', ΔH, H')`.
#[derive(Clone, Debug)]
struct PairAcc {
    entries: Vec<CoMoments<4>>,
    g_n: Vec<MeanVar>,
}

impl Merge for PairAcc {
    fn merge(&mut self, other: &Self) {
        self.entries.merge(&other.entries);
        self.g_n.merge(&other.g_n);
    }
}

/// Coupled statistics of the `(n, n+1)` pair.
#[derive(Clone, Debug)]
pub struct PairStatistics {
    pub n: usize,
    pub lambda: f64,
    pub trials: usize,
    pub seed: u64,
    q_diag: Vec<f64>,
    entries: Vec<CoMoments<4>>,
    g_scale: f64,
}

fn draw_pair(
    n: usize,
    q: &DMatrix<f64>,
    lambda: f64,
    seed: u64,
    coupling: Coupling,
) -> (GHSample, GHSample) {
    let d = q.nrows();
    let big = standard_gaussian(n + 1, d, seed);
    let small = match coupling {
        Coupling::Shared => big.rows(0, n).into_owned(),
        Coupling::Independent => standard_gaussian(n, d, seed ^ 0x5bd1_e995_5bd1_e995),
    };
    let a = gh_sample(&small, q, lambda).expect("positive definite for λ > 0");
    let b = gh_sample(&big, q, lambda).expect("positive definite for λ > 0");
    (a, b)
}

pub fn pair_statistics(
    n: usize,
    q_diag: &[f64],
    lambda: f64,
    trials: usize,
    seed: u64,
    coupling: Coupling,
) -> Result<PairStatistics> {
    check_instance(q_diag, lambda, trials)?;
    let d = q_diag.len();
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(q_diag));
    let acc = accumulate_trials(
        trials,
        || PairAcc {
            entries: vec![CoMoments::default(); d * d],
            g_n: vec![MeanVar::new(); d * d],
        },
        |acc, t| {
            let (a, b) = draw_pair(n, &q, lambda, trial_seed(seed, t), coupling);
            let dh = a.h - b.h;
            for k in 0..d * d {
                acc.entries[k].push([a.g[k] - b.g[k], a.dg[k], dh, a.dh]);
                acc.g_n[k].push(a.g[k]);
            }
        },
    );
    let g_scale = acc.g_n.iter().map(|m| m.mean().abs()).fold(0.0, f64::max);
    Ok(PairStatistics {
        n,
        lambda,
        trials,
        seed,
        q_diag: q_diag.to_vec(),
        entries: acc.entries,
        g_scale,
    })
}

impl PairStatistics {
    fn d(&self) -> usize {
        self.q_diag.len()
    }

    fn instance(&self) -> Instance {
        Instance {
            n: self.n,
            d: self.d(),
            q_diag: self.q_diag.clone(),
            lambda: self.lambda,
            trials: self.trials,
            seed: self.seed,
        }
    }

    /// Mean of `G(n) − G(n+1)`.
    pub fn g_difference(&self) -> DMatrix<f64> {
        let d = self.d();
        linalg::symmetrize(&DMatrix::from_iterator(
            d,
            d,
            self.entries.iter().map(|c| c.mean()[0]),
        ))
    }

    pub fn g_difference_se(&self) -> DMatrix<f64> {
        let d = self.d();
        DMatrix::from_iterator(
            d,
            d,
            self.entries
                .iter()
                .map(|c| c.linear_std_error(&[1.0, 0.0, 0.0, 0.0])),
        )
    }

    /// `(mean, se)` of `H(n) − H(n+1)`.
    pub fn h_difference(&self) -> (f64, f64) {
        let c = &self.entries[0];
        (c.mean()[2], c.linear_std_error(&[0.0, 0.0, 1.0, 0.0]))
    }

    /// `(mean, se)` of `H'(n)`.
    pub fn h_derivative(&self) -> (f64, f64) {
        let c = &self.entries[0];
        (c.mean()[3], c.linear_std_error(&[0.0, 0.0, 0.0, 1.0]))
    }

    /// Condition two matrix and its entrywise delta-method errors.
    pub fn combined(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.d();
        let (dh, _) = self.h_difference();
        let (hp, _) = self.h_derivative();
        let value = DMatrix::from_iterator(
            d,
            d,
            self.entries.iter().map(|c| {
                let m = c.mean();
                m[0] - dh * m[1] / hp
            }),
        );
        let se = DMatrix::from_iterator(
            d,
            d,
            self.entries.iter().map(|c| {
                let m = c.mean();
                c.linear_std_error(&[1.0, -dh / hp, -m[1] / hp, dh * m[1] / (hp * hp)])
            }),
        );
        (linalg::symmetrize(&value), se)
    }

    fn report(&self, matrix: &DMatrix<f64>, entry_se: &DMatrix<f64>) -> PSDReport {
        let floor =
            64.0 * f64::EPSILON * self.d() as f64 * self.g_scale.max(linalg::max_abs(matrix));
        let std_error = entry_se.norm() + floor;
        let min_eigenvalue = linalg::min_eigenvalue(matrix);
        PSDReport {
            min_eigenvalue,
            std_error,
            verdict: Verdict::classify(min_eigenvalue, std_error),
            instance: self.instance(),
            h_difference: None,
            h_derivative: None,
        }
    }

    pub fn condition_one(&self) -> PSDReport {
        self.report(&self.g_difference(), &self.g_difference_se())
    }

    pub fn condition_two(&self) -> PSDReport {
        let (hp, hp_se) = self.h_derivative();
        let (matrix, se) = self.combined();
        let mut report = self.report(&matrix, &se);
        if !(hp.abs() > 3.0 * hp_se) {
            report.verdict = Verdict::Inconclusive;
        }
        report.h_difference = Some(self.h_difference());
        report.h_derivative = Some((hp, hp_se));
        report
    }
}

/// Tests `G(n) ⪰ G(n+1)`.
pub fn condition_one(
    n: usize,
    q_diag: &[f64],
    lambda: f64,
    trials: usize,
    seed: u64,
) -> Result<PSDReport> {
    Ok(pair_statistics(n, q_diag, lambda, trials, seed, Coupling::Shared)?.condition_one())
}

/// Tests the derivative-weighted combination.
pub fn condition_two(
    n: usize,
    q_diag: &[f64],
    lambda: f64,
    trials: usize,
    seed: u64,
) -> Result<PSDReport> {
    Ok(pair_statistics(n, q_diag, lambda, trials, seed, Coupling::Shared)?.condition_two())
}

/// One `(n, d, Q)` configuration of the verification battery.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatteryInstance {
    pub n: usize,
    pub d: usize,
    pub q_diag: Vec<f64>,
}

pub const BATTERY_LAMBDAS: [f64; 3] = [0.1, 1.0, 10.0];

/// `count` random instances: `n, d` uniform in `2..=12`, diagonal entries of
/// `Q` log-uniform in `[0.1, 10]`.
pub fn battery_instances(count: usize, seed: u64) -> Vec<BatteryInstance> {
    let mut rng = rng_for(seed, Purpose::Instance);
    (0..count)
        .map(|_| {
            let n = rng.random_range(2..=12);
            let d = rng.random_range(2..=12);
            let q_diag = (0..d)
                .map(|_| 10f64.powf(rng.random_range(-1.0..=1.0)))
                .collect();
            BatteryInstance { n, d, q_diag }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct BatteryRow {
    pub instance: usize,
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub q_diag: String,
    pub condition: u8,
    pub min_eigenvalue: f64,
    pub std_error: f64,
    pub verdict: Verdict,
}

/// Runs both conditions on every instance at every `λ`.
pub fn run_battery(
    instances: &[BatteryInstance],
    lambdas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<BatteryRow>> {
    let mut rows = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        for (j, &lambda) in lambdas.iter().enumerate() {
            let sub = trial_seed(seed, (i * lambdas.len() + j) as u64);
            let stats =
                pair_statistics(inst.n, &inst.q_diag, lambda, trials, sub, Coupling::Shared)?;
            let q_diag = inst
                .q_diag
                .iter()
                .map(|v| format!("{v:.6}"))
                .collect::<Vec<_>>()
                .join(";");
            for (condition, report) in [(1, stats.condition_one()), (2, stats.condition_two())] {
                rows.push(BatteryRow {
                    instance: i,
                    n: inst.n,
                    d: inst.d,
                    lambda,
                    q_diag: q_diag.clone(),
                    condition,
                    min_eigenvalue: report.min_eigenvalue,
                    std_error: report.std_error,
                    verdict: report.verdict,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_battery_csv(rows: &[BatteryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// One draw in the eigenbasis of `Q^{-1/2}XᵀXQ^{-1/2} = W diag(μ) Wᵀ`, with
/// `a = WᵀQ^{1/2}β*` and `K = WᵀQ⁻¹W`. Then the bias term is
/// `Σᵢⱼ aᵢaⱼKᵢⱼ gᵢgⱼ` with `gᵢ = λ/(μᵢ + λ)` and the variance term is
/// `Σᵢ Kᵢᵢ μᵢ/(μᵢ + λ)²`.
#[derive(Clone, Debug)]
struct SpectralDraw {
    mu: Vec<f64>,
    a: DVector<f64>,
    k: DMatrix<f64>,
    cutoff: f64,
}

impl SpectralDraw {
    fn new(x: &DMatrix<f64>, q_sqrt_inv: &DVector<f64>, q_sqrt_beta: &DVector<f64>) -> Self {
        let d = q_sqrt_inv.len();
        let mut b = x.transpose() * x;
        for i in 0..d {
            for j in 0..d {
                b[(i, j)] *= q_sqrt_inv[i] * q_sqrt_inv[j];
            }
        }
        let (mu, w) = linalg::sorted_eigen(&b);
        let mu: Vec<f64> = mu.iter().map(|v| v.max(0.0)).collect();
        let a = w.transpose() * q_sqrt_beta;
        let scaled = DMatrix::from_fn(d, d, |r, c| w[(r, c)] * q_sqrt_inv[r]);
        let k = scaled.transpose() * &scaled;
        let top = mu.iter().copied().fold(0.0, f64::max);
        Self {
            mu,
            a,
            k,
            cutoff: 1e-10 * top.max(1e-300),
        }
    }

    fn is_zero(&self, i: usize) -> bool {
        self.mu[i] <= self.cutoff
    }

    /// `(bias, variance, bias', variance')`.
    fn parts(&self, lambda: f64) -> [f64; 4] {
        let d = self.mu.len();
        let mut g = vec![0.0; d];
        let mut gp = vec![0.0; d];
        let mut var = 0.0;
        let mut var_p = 0.0;
        for i in 0..d {
            let m = self.mu[i];
            if lambda == 0.0 {
                g[i] = if self.is_zero(i) { 1.0 } else { 0.0 };
                gp[i] = if self.is_zero(i) { 0.0 } else { 1.0 / m };
                var += if self.is_zero(i) {
                    0.0
                } else {
                    self.k[(i, i)] / m
                };
                var_p += if self.is_zero(i) {
                    0.0
                } else {
                    -2.0 * self.k[(i, i)] / (m * m)
                };
            } else if lambda.is_infinite() {
                g[i] = 1.0;
            } else {
                let s = m + lambda;
                g[i] = lambda / s;
                gp[i] = m / (s * s);
                var += self.k[(i, i)] * m / (s * s);
                var_p += -2.0 * self.k[(i, i)] * m / (s * s * s);
            }
        }
        let mut bias = 0.0;
        let mut bias_p = 0.0;
        for i in 0..d {
            for j in 0..d {
                let w = self.a[i] * self.a[j] * self.k[(i, j)];
                bias += w * g[i] * g[j];
                bias_p += w * (gp[i] * g[j] + g[i] * gp[j]);
            }
        }
        [bias, var, bias_p, var_p]
    }
}

/// Risk curves at `n` and `n + 1` on shared designs, for tuning `λ`.
#[derive(Clone, Debug)]
pub struct CoupledCurves {
    pub n: usize,
    sigma_sq: f64,
    null_risk: f64,
    draws: Vec<(SpectralDraw, SpectralDraw)>,
}

impl CoupledCurves {
    pub fn draw(
        n: usize,
        q_diag: &[f64],
        beta_star: &DVector<f64>,
        sigma: f64,
        trials: usize,
        seed: u64,
    ) -> Result<Self> {
        check_instance(q_diag, 1.0, trials)?;
        if beta_star.len() != q_diag.len() {
            return Err(Error::DimensionMismatch(format!(
                "beta_star has length {} but Q has dimension {}",
                beta_star.len(),
                q_diag.len()
            )));
        }
        let d = q_diag.len();
        let q_sqrt_inv = DVector::from_iterator(d, q_diag.iter().map(|q| 1.0 / q.sqrt()));
        let q_sqrt_beta = DVector::from_iterator(
            d,
            q_diag
                .iter()
                .zip(beta_star.iter())
                .map(|(q, b)| q.sqrt() * b),
        );
        let draws = crate::stats::map_trials(trials, |t| {
            let x = standard_gaussian(n + 1, d, trial_seed(seed, t));
            let small = SpectralDraw::new(&x.rows(0, n).into_owned(), &q_sqrt_inv, &q_sqrt_beta);
            let big = SpectralDraw::new(&x, &q_sqrt_inv, &q_sqrt_beta);
            (small, big)
        });
        Ok(Self {
            n,
            sigma_sq: sigma * sigma,
            null_risk: beta_star.norm_squared() + sigma * sigma,
            draws,
        })
    }

    pub fn null_risk(&self) -> f64 {
        self.null_risk
    }

    fn risk_of(&self, p: [f64; 4]) -> f64 {
        p[0] + self.sigma_sq * p[1] + self.sigma_sq
    }

    /// Mean risk at `n` (`next = false`) or `n + 1`.
    pub fn risk(&self, lambda: f64, next: bool) -> f64 {
        let total: f64 = self
            .draws
            .iter()
            .map(|(a, b)| self.risk_of(if next { b } else { a }.parts(lambda)))
            .sum();
        total / self.draws.len() as f64
    }

    /// `(mean, se)` of `R(n) − R(n+1)` at `λ`.
    pub fn step(&self, lambda: f64) -> (f64, f64) {
        let mut m = MeanVar::new();
        for (a, b) in &self.draws {
            m.push(self.risk_of(a.parts(lambda)) - self.risk_of(b.parts(lambda)));
        }
        (m.mean(), m.std_error())
    }

    /// `(mean, se)` of each of `bias'`, `variance'` and `bias' + σ²variance'`
    /// at `n`.
    pub fn derivatives(&self, lambda: f64) -> [(f64, f64); 3] {
        let mut acc = [MeanVar::new(); 3];
        for (a, _) in &self.draws {
            let p = a.parts(lambda);
            acc[0].push(p[2]);
            acc[1].push(p[3]);
            acc[2].push(p[2] + self.sigma_sq * p[3]);
        }
        acc.map(|m| (m.mean(), m.std_error()))
    }
}

/// Where the tuned `λ` landed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimumCase {
    /// Null estimator optimal.
    Infinite,
    Interior,
    /// `λ = 0` (or the lower end of the range) optimal.
    Boundary,
}

#[derive(Clone, Debug, Serialize)]
pub struct ImplicationReport {
    pub n: usize,
    pub search: LambdaSearchResult,
    pub case: OptimumCase,
    pub risk_n: f64,
    pub risk_next: f64,
    /// `R(n) − R(n+1)` at the tuned `λ` and its paired standard error.
    pub step: f64,
    pub step_se: f64,
    /// `bias' + σ² variance'` at the tuned `λ`.
    pub first_order_residual: f64,
    pub first_order_se: f64,
    /// `−bias'/variance'`, the noise level at which the tuned `λ` is
    /// stationary; compare with `σ²`.
    pub noise_bound: f64,
    pub sigma_sq: f64,
}

impl ImplicationReport {
    /// `R(n) ≥ R(n+1) − k·se`.
    pub fn monotone_within(&self, k: f64) -> bool {
        self.step >= -k * self.step_se
    }
}

/// Tunes `λ` for `n` samples and checks that the same `λ` does no worse
/// with `n + 1` samples.
pub fn implication_check(
    n: usize,
    q_diag: &[f64],
    beta_star: &DVector<f64>,
    sigma: f64,
    lambda_range: Option<(f64, f64)>,
    trials: usize,
    seed: u64,
) -> Result<ImplicationReport> {
    let curves = CoupledCurves::draw(n, q_diag, beta_star, sigma, trials, seed)?;
    implication_from_curves(&curves, q_diag.len(), beta_star.norm(), sigma, lambda_range)
}

pub fn implication_from_curves(
    curves: &CoupledCurves,
    d: usize,
    beta_norm: f64,
    sigma: f64,
    lambda_range: Option<(f64, f64)>,
) -> Result<ImplicationReport> {
    let (lo, hi) = lambda_range.unwrap_or((0.0, default_upper_bound(d, sigma, beta_norm)));
    let options = TunerOptions::default().with_null_risk(curves.null_risk());
    let search = minimize_over_lambda(|l| curves.risk(l, false), lo, hi, options)?;
    let lambda = search.lambda_opt;
    let case = if lambda.is_infinite() || lambda >= hi {
        OptimumCase::Infinite
    } else if lambda <= lo {
        OptimumCase::Boundary
    } else {
        OptimumCase::Interior
    };
    let (step, step_se) = curves.step(lambda);
    let [(bias_p, _), (var_p, _), (resid, resid_se)] = curves.derivatives(lambda);
    Ok(ImplicationReport {
        n: curves.n,
        search,
        case,
        risk_n: curves.risk(lambda, false),
        risk_next: curves.risk(lambda, true),
        step,
        step_se,
        first_order_residual: resid,
        first_order_se: resid_se,
        noise_bound: if var_p != 0.0 {
            -bias_p / var_p
        } else {
            f64::INFINITY
        },
        sigma_sq: sigma * sigma,
    })
}
