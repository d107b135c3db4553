//! Risk of generalized ridge regression under anisotropic Gaussian
//! covariates.
//!
//! The estimator is `β̂ = argmin ‖Xβ − y‖² + λ βᵀMβ = (XᵀX + λM)⁻¹Xᵀy` and
//! its risk `‖β̂ − β*‖²_Σ + σ²`. Substituting `X = ZΣ^{1/2}` with `Z`
//! isotropic turns the problem into one with truth `Σ^{1/2}β*` and penalty
//! matrix `Σ^{-1/2}MΣ^{-1/2}`, so `M = Σ` reduces to plain isotropic ridge.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::{responses_unchecked, standard_gaussian, GaussianProblem};
use crate::spectrum::RANK_TOL;
use crate::stats::{accumulate_trials, map_trials, EstimateFlags, MeanVar, Merge, RiskEstimate};
use crate::stream::trial_seed;

/// Condition numbers above this are flagged on estimates.
pub const ILL_CONDITIONED: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegularizerKind {
    Identity,
    /// `M = Σ`, the penalty that makes the problem isotropic.
    Covariance,
    InverseCovariance,
    Custom,
}

/// Penalty `λ βᵀMβ`.
#[derive(Clone, Debug)]
pub struct RegularizerSpec {
    pub matrix: DMatrix<f64>,
    pub kind: RegularizerKind,
}

impl RegularizerSpec {
    pub fn identity(d: usize) -> Self {
        Self {
            matrix: DMatrix::identity(d, d),
            kind: RegularizerKind::Identity,
        }
    }

    pub fn covariance(problem: &GaussianProblem) -> Self {
        Self {
            matrix: problem.covariance().clone(),
            kind: RegularizerKind::Covariance,
        }
    }

    pub fn inverse_covariance(problem: &GaussianProblem) -> Result<Self> {
        let inv = linalg::spectral_map(problem.covariance(), |v| 1.0 / v);
        Ok(Self {
            matrix: inv,
            kind: RegularizerKind::InverseCovariance,
        })
    }

    pub fn custom(matrix: DMatrix<f64>) -> Result<Self> {
        linalg::check_positive_semidefinite(&matrix)?;
        Ok(Self {
            matrix: linalg::symmetrize(&matrix),
            kind: RegularizerKind::Custom,
        })
    }

    pub fn d(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Fitted coefficients plus numerical diagnostics.
#[derive(Clone, Debug)]
pub struct RidgeFit {
    pub beta: DVector<f64>,
    pub flags: EstimateFlags,
}

/// `(XᵀX + λM)⁻¹Xᵀy`. At `λ = 0` this is the `λ → 0⁺` limit
/// `M^{-1/2}(XM^{-1/2})⁺y` for positive definite `M`, and the minimum-norm
/// least-squares solution otherwise.
pub fn fit_ridge(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    penalty: &DMatrix<f64>,
) -> Result<RidgeFit> {
    let d = x.ncols();
    if y.len() != x.nrows() || penalty.shape() != (d, d) {
        return Err(Error::DimensionMismatch(format!(
            "design {}x{}, responses {}, penalty {}x{}",
            x.nrows(),
            d,
            y.len(),
            penalty.nrows(),
            penalty.ncols()
        )));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::NegativeLambda(lambda));
    }
    let rhs = x.transpose() * y;
    let mut flags = EstimateFlags::default();
    if lambda > 0.0 {
        let system = linalg::symmetrize(&(x.transpose() * x + penalty * lambda));
        if let Some((chol, cond)) = linalg::cholesky_with_condition(system.clone()) {
            flags.ill_conditioned = cond > ILL_CONDITIONED;
            return Ok(RidgeFit {
                beta: chol.solve(&rhs),
                flags,
            });
        }
        flags.pseudoinverse_limit = true;
        let (sol, _) = linalg::pinv_solve(
            &system,
            &DMatrix::from_column_slice(d, 1, rhs.as_slice()),
            1e-12,
        );
        return Ok(RidgeFit {
            beta: sol.column(0).into_owned(),
            flags,
        });
    }
    let y_mat = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let beta = if linalg::min_eigenvalue(penalty) > 0.0 && !linalg::is_identity(penalty) {
        let r = linalg::sym_inv_sqrt(penalty);
        let (sol, rank) = linalg::pinv_solve(&(x * &r), &y_mat, RANK_TOL);
        flags.pseudoinverse_limit = rank < d;
        r * sol.column(0)
    } else {
        let (sol, rank) = linalg::pinv_solve(x, &y_mat, RANK_TOL);
        flags.pseudoinverse_limit = rank < d;
        sol.column(0).into_owned()
    };
    Ok(RidgeFit { beta, flags })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::NegativeLambda(lambda));
    }
    Ok(())
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    Ok(())
}

fn check_regularizer(problem: &GaussianProblem, reg: &RegularizerSpec) -> Result<()> {
    if reg.d() != problem.d() {
        return Err(Error::DimensionMismatch(format!(
            "regularizer is {}x{} but the problem has d={}",
            reg.d(),
            reg.d(),
            problem.d()
        )));
    }
    Ok(())
}

/// Quantities shared by every trial once the problem and penalty are fixed.
#[derive(Clone, Debug)]
struct Whitening {
    /// `M^{-1/2}`, or `None` when `M = I`.
    r: Option<DMatrix<f64>>,
    /// `M^{-1/2} Σ M^{-1/2}`.
    rsr: DMatrix<f64>,
    /// `M^{-1/2} Σ β*`.
    rsb: DVector<f64>,
    /// `β*ᵀΣβ*`.
    bb: f64,
    /// Condition number of `M`.
    penalty_cond: f64,
}

impl Whitening {
    fn new(problem: &GaussianProblem, penalty: &DMatrix<f64>) -> Option<Self> {
        let (values, _) = linalg::sorted_eigen(penalty);
        let lo = values[0];
        if !(lo > 0.0) {
            return None;
        }
        let penalty_cond = values[values.len() - 1] / lo;
        let sigma = problem.covariance();
        let sb = sigma * problem.beta_star();
        let bb = problem.beta_star().dot(&sb);
        if linalg::is_identity(penalty) {
            return Some(Self {
                r: None,
                rsr: sigma.clone(),
                rsb: sb,
                bb,
                penalty_cond,
            });
        }
        let r = linalg::sym_inv_sqrt(penalty);
        let rsr = linalg::symmetrize(&(&r * sigma * &r));
        let rsb = &r * sb;
        Some(Self {
            r: Some(r),
            rsr,
            rsb,
            bb,
            penalty_cond,
        })
    }
}

/// One draw `(X, y)` reduced to the thin SVD of `XM^{-1/2} = UΓVᵀ`, after
/// which the risk at any `λ` costs `O(k²)` with `k = min(n, d)`.
#[derive(Clone, Debug)]
pub struct TrialSystem {
    n: usize,
    d: usize,
    gammas: Vec<f64>,
    /// `Uᵀy`.
    c: DVector<f64>,
    /// `VᵀM^{-1/2}ΣM^{-1/2}V`.
    k: DMatrix<f64>,
    /// `VᵀM^{-1/2}Σβ*`.
    h: DVector<f64>,
    bb: f64,
    /// `‖y‖² − ‖Uᵀy‖²`, the part of `y` outside the column space.
    residual_sq: f64,
    penalty_cond: f64,
}

impl TrialSystem {
    fn build(w: &Whitening, x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let (n, d) = x.shape();
        if n == 0 {
            return Self {
                n,
                d,
                gammas: Vec::new(),
                c: DVector::zeros(0),
                k: DMatrix::zeros(0, 0),
                h: DVector::zeros(0),
                bb: w.bb,
                residual_sq: 0.0,
                penalty_cond: w.penalty_cond,
            };
        }
        let xw = match &w.r {
            None => x.clone(),
            Some(r) => x * r,
        };
        let svd = xw.svd(true, true);
        let u = svd.u.expect("u requested");
        let v = svd.v_t.expect("v_t requested").transpose();
        let gammas: Vec<f64> = svd.singular_values.iter().map(|g| g.max(0.0)).collect();
        let c = u.transpose() * y;
        let k = linalg::symmetrize(&(v.transpose() * &w.rsr * &v));
        let h = v.transpose() * &w.rsb;
        let residual_sq = (y.norm_squared() - c.norm_squared()).max(0.0);
        Self {
            n,
            d,
            gammas,
            c,
            k,
            h,
            bb: w.bb,
            residual_sq,
            penalty_cond: w.penalty_cond,
        }
    }

    /// Shrinkage factors `γᵢ/(γᵢ² + λ)`, with the `λ → 0⁺` limit at zero.
    fn factors(&self, lambda: f64) -> (Vec<f64>, EstimateFlags) {
        let mut flags = EstimateFlags::default();
        let top = self.gammas.iter().copied().fold(0.0_f64, f64::max);
        let bottom = if self.gammas.len() < self.d {
            0.0
        } else {
            self.gammas.iter().copied().fold(f64::INFINITY, f64::min)
        };
        if lambda == 0.0 {
            let cutoff = RANK_TOL * top;
            let f = self
                .gammas
                .iter()
                .map(|&g| if g > cutoff { 1.0 / g } else { 0.0 })
                .collect::<Vec<_>>();
            let rank = self.gammas.iter().filter(|&&g| g > cutoff).count();
            flags.pseudoinverse_limit = rank < self.d;
            if rank == self.d && self.d > 0 {
                flags.ill_conditioned =
                    (top / bottom).powi(2) * self.penalty_cond > ILL_CONDITIONED;
            }
            (f, flags)
        } else {
            let cond = (top * top + lambda) / (bottom * bottom + lambda) * self.penalty_cond;
            flags.ill_conditioned = cond > ILL_CONDITIONED;
            (
                self.gammas.iter().map(|&g| g / (g * g + lambda)).collect(),
                flags,
            )
        }
    }

    /// Excess risk `‖β̂ − β*‖²_Σ` at `λ`.
    pub fn excess_risk(&self, lambda: f64) -> (f64, EstimateFlags) {
        if lambda.is_infinite() {
            return (self.bb, EstimateFlags::default());
        }
        let (f, flags) = self.factors(lambda);
        let s = DVector::from_iterator(f.len(), f.iter().zip(self.c.iter()).map(|(a, b)| a * b));
        let quad = s.dot(&(&self.k * &s));
        ((quad - 2.0 * s.dot(&self.h) + self.bb).max(0.0), flags)
    }

    /// Mean squared training residual `‖Xβ̂ − y‖²/n` at `λ`.
    pub fn train_mse(&self, lambda: f64) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        if lambda.is_infinite() {
            return (self.residual_sq + self.c.norm_squared()) / self.n as f64;
        }
        let (f, _) = self.factors(lambda);
        let inside: f64 = self
            .gammas
            .iter()
            .zip(&f)
            .zip(self.c.iter())
            .map(|((g, fi), ci)| (g * fi - 1.0).powi(2) * ci * ci)
            .sum();
        (inside + self.residual_sq) / self.n as f64
    }
}

/// Per-trial excess risk and train error by direct solve, used when `M` is
/// singular.
fn direct_trial(
    problem: &GaussianProblem,
    penalty: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<(f64, f64, EstimateFlags)> {
    if lambda.is_infinite() {
        let bb = problem.null_risk() - problem.sigma().powi(2);
        let train = if x.nrows() == 0 {
            0.0
        } else {
            y.norm_squared() / x.nrows() as f64
        };
        return Ok((bb, train, EstimateFlags::default()));
    }
    let fit = fit_ridge(x, y, lambda, penalty)?;
    let excess = problem.population_risk(&fit.beta) - problem.sigma().powi(2);
    let train = if x.nrows() == 0 {
        0.0
    } else {
        (x * &fit.beta - y).norm_squared() / x.nrows() as f64
    };
    Ok((excess, train, fit.flags))
}

#[derive(Clone, Debug, Default)]
struct RiskAcc {
    risk: MeanVar,
    train: MeanVar,
    flags: EstimateFlags,
}

impl Merge for RiskAcc {
    fn merge(&mut self, other: &Self) {
        self.risk.merge(&other.risk);
        self.train.merge(&other.train);
        self.flags = self.flags.union(other.flags);
    }
}

impl Merge for Vec<RiskAcc> {
    fn merge(&mut self, other: &Self) {
        for (a, b) in self.iter_mut().zip(other) {
            a.merge(b);
        }
    }
}

impl Merge for Vec<Vec<RiskAcc>> {
    fn merge(&mut self, other: &Self) {
        for (a, b) in self.iter_mut().zip(other) {
            a.merge(b);
        }
    }
}

/// Test risk and mean training error at one `(n, λ)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GeneralRisk {
    pub test: RiskEstimate,
    pub train: RiskEstimate,
}

fn finish(acc: &RiskAcc, lambda: f64, sigma_sq: f64) -> GeneralRisk {
    GeneralRisk {
        test: RiskEstimate::from_moments(&acc.risk, lambda)
            .with_offset(sigma_sq)
            .with_flags(acc.flags),
        train: RiskEstimate::from_moments(&acc.train, lambda).with_flags(acc.flags),
    }
}

/// Monte Carlo estimate of `E[‖β̂ − β*‖²_Σ] + σ²` for the `M`-penalized
/// estimator, `λ = 0` meaning the `λ → 0⁺` limit.
pub fn mc_risk_general(
    problem: &GaussianProblem,
    n: usize,
    lambda: f64,
    regularizer: &RegularizerSpec,
    trials: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    let sweep = sweep_general(problem, regularizer, &[n], &[lambda], trials, seed)?;
    Ok(sweep.risks[0][0].test)
}

/// Risks over sample sizes and ridge parameters with common random numbers:
/// the `n`-row draw is the prefix of the largest one.
#[derive(Clone, Debug, Serialize)]
pub struct GeneralSweep {
    pub ns: Vec<usize>,
    pub lambdas: Vec<f64>,
    /// `risks[i][j]` at `ns[i]`, `lambdas[j]`.
    pub risks: Vec<Vec<GeneralRisk>>,
}

pub fn sweep_general(
    problem: &GaussianProblem,
    regularizer: &RegularizerSpec,
    ns: &[usize],
    lambdas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<GeneralSweep> {
    check_trials(trials)?;
    check_regularizer(problem, regularizer)?;
    for &l in lambdas {
        check_lambda(l)?;
    }
    let n_max = ns.iter().copied().max().unwrap_or(0);
    let whitening = Whitening::new(problem, &regularizer.matrix);
    let failure = std::sync::Mutex::new(None);
    let acc = accumulate_trials(
        trials,
        || vec![vec![RiskAcc::default(); lambdas.len()]; ns.len()],
        |acc, t| {
            let ts = trial_seed(seed, t);
            let x_all = problem.sample_design(n_max, ts);
            let y_all = responses_unchecked(&x_all, problem.beta_star(), problem.sigma(), ts);
            for (i, &n) in ns.iter().enumerate() {
                let x = x_all.rows(0, n).into_owned();
                let y = y_all.rows(0, n).into_owned();
                match &whitening {
                    Some(w) => {
                        let sys = TrialSystem::build(w, &x, &y);
                        for (j, &l) in lambdas.iter().enumerate() {
                            let (risk, flags) = sys.excess_risk(l);
                            let cell = &mut acc[i][j];
                            cell.risk.push(risk);
                            cell.train.push(sys.train_mse(l));
                            cell.flags = cell.flags.union(flags);
                        }
                    }
                    None => {
                        for (j, &l) in lambdas.iter().enumerate() {
                            match direct_trial(problem, &regularizer.matrix, &x, &y, l) {
                                Ok((risk, train, flags)) => {
                                    let cell = &mut acc[i][j];
                                    cell.risk.push(risk);
                                    cell.train.push(train);
                                    cell.flags = cell.flags.union(flags);
                                }
                                Err(e) => {
                                    failure.lock().expect("poisoned").get_or_insert(e);
                                }
                            }
                        }
                    }
                }
            }
        },
    );
    if let Some(e) = failure.into_inner().expect("poisoned") {
        return Err(e);
    }
    let s2 = problem.sigma().powi(2);
    let risks = acc
        .iter()
        .map(|row| {
            row.iter()
                .zip(lambdas)
                .map(|(a, &l)| finish(a, l, s2))
                .collect()
        })
        .collect();
    Ok(GeneralSweep {
        ns: ns.to_vec(),
        lambdas: lambdas.to_vec(),
        risks,
    })
}

/// Trial systems for one sample size, kept so that risk curves over `λ`
/// can be evaluated with common random numbers (e.g. by a λ tuner).
#[derive(Clone, Debug)]
pub struct GeneralBank {
    pub n: usize,
    sigma_sq: f64,
    null_excess: f64,
    systems: Vec<TrialSystem>,
}

impl GeneralBank {
    /// Requires a positive definite penalty.
    pub fn draw(
        problem: &GaussianProblem,
        regularizer: &RegularizerSpec,
        n: usize,
        trials: usize,
        seed: u64,
    ) -> Result<Self> {
        check_trials(trials)?;
        check_regularizer(problem, regularizer)?;
        let w = Whitening::new(problem, &regularizer.matrix).ok_or_else(|| {
            Error::param(
                "regularizer",
                "a positive definite penalty is required for cached risk curves",
            )
        })?;
        let systems = map_trials(trials, |t| {
            let ts = trial_seed(seed, t);
            let x = problem.sample_design(n, ts);
            let y = responses_unchecked(&x, problem.beta_star(), problem.sigma(), ts);
            TrialSystem::build(&w, &x, &y)
        });
        Ok(Self {
            n,
            sigma_sq: problem.sigma().powi(2),
            null_excess: w.bb,
            systems,
        })
    }

    pub fn trials(&self) -> usize {
        self.systems.len()
    }

    pub fn null_risk(&self) -> f64 {
        self.null_excess + self.sigma_sq
    }

    pub fn risk(&self, lambda: f64) -> GeneralRisk {
        let mut acc = RiskAcc::default();
        for sys in &self.systems {
            let (r, flags) = sys.excess_risk(lambda);
            acc.risk.push(r);
            acc.train.push(sys.train_mse(lambda));
            acc.flags = acc.flags.union(flags);
        }
        finish(&acc, lambda, self.sigma_sq)
    }

    /// Per-trial test risks at `λ`, in trial order.
    pub fn per_trial_risk(&self, lambda: f64) -> Vec<f64> {
        self.systems
            .iter()
            .map(|s| s.excess_risk(lambda).0 + self.sigma_sq)
            .collect()
    }
}

/// Monte Carlo estimate of `G = λ²E[M⁻²]`, `H = E[tr(M⁻¹XᵀXM⁻¹)]` and their
/// λ-derivatives for `M = XᵀX + λQ`, `X` an `n × d` standard Gaussian.
#[derive(Clone, Debug, Serialize)]
pub struct GHEstimate {
    pub n: usize,
    pub lambda: f64,
    #[serde(skip)]
    pub q: DMatrix<f64>,
    #[serde(skip)]
    pub g: DMatrix<f64>,
    #[serde(skip)]
    pub g_se: DMatrix<f64>,
    pub h: f64,
    pub h_se: f64,
    #[serde(skip)]
    pub dg: DMatrix<f64>,
    #[serde(skip)]
    pub dg_se: DMatrix<f64>,
    pub dh: f64,
    pub dh_se: f64,
    pub trials: usize,
    pub flags: EstimateFlags,
}

impl GHEstimate {
    pub fn d(&self) -> usize {
        self.q.nrows()
    }

    /// Largest entrywise standard error of `G`.
    pub fn g_se_max(&self) -> f64 {
        linalg::max_abs(&self.g_se)
    }

    pub fn dg_se_max(&self) -> f64 {
        linalg::max_abs(&self.dg_se)
    }
}

/// Per-draw `G`, `dG/dλ`, `H`, `dH/dλ`.
#[derive(Clone, Debug)]
pub struct GHSample {
    pub g: DMatrix<f64>,
    pub dg: DMatrix<f64>,
    pub h: f64,
    pub dh: f64,
    pub cond: f64,
}

/// Analytic per-draw quantities. `None` if `XᵀX + λQ` is not numerically
/// positive definite.
pub fn gh_sample(x: &DMatrix<f64>, q: &DMatrix<f64>, lambda: f64) -> Option<GHSample> {
    let a = x.transpose() * x;
    let (chol, cond) = linalg::cholesky_with_condition(linalg::symmetrize(&(&a + q * lambda)))?;
    let minv = linalg::symmetrize(&chol.inverse());
    let m2 = &minv * &minv;
    let minv_q = &minv * q;
    let g = &m2 * (lambda * lambda);
    let cross = &minv_q * &m2;
    let dg = &m2 * (2.0 * lambda) - (&cross + cross.transpose()) * (lambda * lambda);
    let mam = &minv * &a * &minv;
    let h = mam.trace();
    let dh = -2.0 * (&mam * &minv_q).trace();
    Some(GHSample {
        g: linalg::symmetrize(&g),
        dg: linalg::symmetrize(&dg),
        h,
        dh,
        cond,
    })
}

pub(crate) fn check_q(q: &DMatrix<f64>, lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::NonPositiveLambda(lambda));
    }
    linalg::check_positive_definite(q)
}

#[derive(Clone, Debug)]
struct GHAcc {
    g: Vec<MeanVar>,
    dg: Vec<MeanVar>,
    h: MeanVar,
    dh: MeanVar,
    flags: EstimateFlags,
}

impl GHAcc {
    fn new(d: usize) -> Self {
        Self {
            g: vec![MeanVar::new(); d * d],
            dg: vec![MeanVar::new(); d * d],
            h: MeanVar::new(),
            dh: MeanVar::new(),
            flags: EstimateFlags::default(),
        }
    }

    fn push(&mut self, s: &GHSample) {
        for (acc, v) in self.g.iter_mut().zip(s.g.iter()) {
            acc.push(*v);
        }
        for (acc, v) in self.dg.iter_mut().zip(s.dg.iter()) {
            acc.push(*v);
        }
        self.h.push(s.h);
        self.dh.push(s.dh);
        self.flags.ill_conditioned |= s.cond > ILL_CONDITIONED;
    }
}

impl Merge for GHAcc {
    fn merge(&mut self, other: &Self) {
        self.g.merge(&other.g);
        self.dg.merge(&other.dg);
        self.h.merge(&other.h);
        self.dh.merge(&other.dh);
        self.flags = self.flags.union(other.flags);
    }
}

pub fn estimate_gh(
    n: usize,
    q: &DMatrix<f64>,
    lambda: f64,
    trials: usize,
    seed: u64,
) -> Result<GHEstimate> {
    check_trials(trials)?;
    check_q(q, lambda)?;
    let d = q.nrows();
    let q = linalg::symmetrize(q);
    let acc = accumulate_trials(
        trials,
        || GHAcc::new(d),
        |acc, t| {
            let x = standard_gaussian(n, d, trial_seed(seed, t));
            let s = gh_sample(&x, &q, lambda).expect("XᵀX + λQ is positive definite for λ > 0");
            acc.push(&s);
        },
    );
    let mat = |v: &[MeanVar], f: fn(&MeanVar) -> f64| DMatrix::from_iterator(d, d, v.iter().map(f));
    Ok(GHEstimate {
        n,
        lambda,
        g: linalg::symmetrize(&mat(&acc.g, MeanVar::mean)),
        g_se: mat(&acc.g, MeanVar::std_error),
        h: acc.h.mean(),
        h_se: acc.h.std_error(),
        dg: linalg::symmetrize(&mat(&acc.dg, MeanVar::mean)),
        dg_se: mat(&acc.dg, MeanVar::std_error),
        dh: acc.dh.mean(),
        dh_se: acc.dh.std_error(),
        trials,
        flags: acc.flags,
        q,
    })
}

/// `R̄ = (Qβ*)ᵀG(Qβ*) + σ²H + σ²`. The standard error is the worst case
/// over correlations between entries, `Σ|wᵢwⱼ|seᵢⱼ + σ²se_H`.
pub fn risk_from_gh(gh: &GHEstimate, beta_star: &DVector<f64>, sigma: f64) -> Result<RiskEstimate> {
    if beta_star.len() != gh.d() {
        return Err(Error::DimensionMismatch(format!(
            "beta_star has length {} but G is {}x{}",
            beta_star.len(),
            gh.d(),
            gh.d()
        )));
    }
    let w = &gh.q * beta_star;
    let s2 = sigma * sigma;
    let mean = w.dot(&(&gh.g * &w)) + s2 * gh.h + s2;
    let mut se = s2 * gh.h_se;
    for i in 0..w.len() {
        for j in 0..w.len() {
            se += (w[i] * w[j]).abs() * gh.g_se[(i, j)];
        }
    }
    Ok(RiskEstimate {
        mean,
        std_error: se,
        trials: gh.trials,
        lambda: gh.lambda,
        flags: gh.flags,
    })
}

/// `d/dλ R̄ = (Qβ*)ᵀ(dG/dλ)(Qβ*) + σ² dH/dλ`.
pub fn risk_derivative_from_gh(gh: &GHEstimate, beta_star: &DVector<f64>, sigma: f64) -> f64 {
    let w = &gh.q * beta_star;
    w.dot(&(&gh.dg * &w)) + sigma * sigma * gh.dh
}

/// An anisotropic problem rewritten in isotropic coordinates.
#[derive(Clone, Debug)]
pub struct IsotropicReduction {
    /// `x ~ N(0, I)` with truth `Σ^{1/2}β*` and the same noise.
    pub problem: GaussianProblem,
    /// `Σ^{-1/2}MΣ^{-1/2}`.
    pub regularizer: RegularizerSpec,
    /// `Σ^{1/2}`, mapping isotropic covariates `z` to `x = Σ^{1/2}z`.
    pub sqrt_covariance: DMatrix<f64>,
    /// `Σ^{-1/2}`, mapping isotropic coefficients back: `β = Σ^{-1/2}z`.
    pub inv_sqrt_covariance: DMatrix<f64>,
}

pub fn reduce_to_isotropic(
    problem: &GaussianProblem,
    regularizer: &RegularizerSpec,
) -> Result<IsotropicReduction> {
    check_regularizer(problem, regularizer)?;
    let cov = problem.covariance();
    let sqrt = linalg::sym_sqrt(cov);
    let inv_sqrt = linalg::sym_inv_sqrt(cov);
    let truth = &sqrt * problem.beta_star();
    let iso = GaussianProblem::isotropic(truth, problem.sigma())?;
    let matrix = linalg::symmetrize(&(&inv_sqrt * &regularizer.matrix * &inv_sqrt));
    let kind = if linalg::max_abs(&(&matrix - DMatrix::identity(cov.nrows(), cov.nrows()))) < 1e-12
    {
        RegularizerKind::Identity
    } else {
        RegularizerKind::Custom
    };
    Ok(IsotropicReduction {
        problem: iso,
        regularizer: RegularizerSpec { matrix, kind },
        sqrt_covariance: sqrt,
        inv_sqrt_covariance: inv_sqrt,
    })
}

/// Population risks of the original and reduced estimators on one coupled
/// draw: isotropic `Z`, `X = ZΣ^{1/2}`, shared noise.
pub fn coupled_reduction_risks(
    problem: &GaussianProblem,
    regularizer: &RegularizerSpec,
    n: usize,
    lambda: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    check_lambda(lambda)?;
    let red = reduce_to_isotropic(problem, regularizer)?;
    let z = standard_gaussian(n, problem.d(), seed);
    let x = &z * &red.sqrt_covariance;
    let y = responses_unchecked(&z, red.problem.beta_star(), problem.sigma(), seed);
    let original = fit_ridge(&x, &y, lambda, &regularizer.matrix)?;
    let reduced = fit_ridge(&z, &y, lambda, &red.regularizer.matrix)?;
    Ok((
        problem.population_risk(&original.beta),
        red.problem.population_risk(&reduced.beta),
    ))
}

/// `dσ²/(β*ᵀΣβ*)`, the optimal λ for the `M = Σ` penalty.
pub fn adaptive_optimal_lambda(problem: &GaussianProblem) -> f64 {
    let bb = problem.null_risk() - problem.sigma().powi(2);
    if bb == 0.0 {
        return f64::INFINITY;
    }
    problem.d() as f64 * problem.sigma().powi(2) / bb
}

/// Risk of ridge with the covariance-adapted penalty `λ βᵀΣβ`.
pub fn adaptive_risk(
    problem: &GaussianProblem,
    n: usize,
    lambda: f64,
    trials: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    mc_risk_general(
        problem,
        n,
        lambda,
        &RegularizerSpec::covariance(problem),
        trials,
        seed,
    )
}
