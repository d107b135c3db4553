//! Regression problem distributions and seeded samplers.
//!
//! All samplers are pure functions of their arguments. See [`crate::stream`]
//! for how seeds map to random streams.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::stream::{rng_for, Purpose};

/// `x ~ N(0, Σ)`, `y = ⟨x, β*⟩ + N(0, σ²)`.
#[derive(Clone, Debug)]
pub struct GaussianProblem {
    covariance: DMatrix<f64>,
    beta_star: DVector<f64>,
    sigma: f64,
    /// Lower Cholesky factor of the covariance; `None` for identity.
    factor: Option<DMatrix<f64>>,
}

impl GaussianProblem {
    pub fn new(covariance: DMatrix<f64>, beta_star: DVector<f64>, sigma: f64) -> Result<Self> {
        if beta_star.is_empty() {
            return Err(Error::param("beta_star", "dimension must be at least 1"));
        }
        if covariance.nrows() != beta_star.len() || covariance.ncols() != beta_star.len() {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {}x{} but beta_star has length {}",
                covariance.nrows(),
                covariance.ncols(),
                beta_star.len()
            )));
        }
        check_sigma(sigma)?;
        if beta_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("beta_star", "entries must be finite"));
        }
        linalg::check_positive_definite(&covariance)?;
        let factor = if linalg::is_identity(&covariance) {
            None
        } else {
            let chol = nalgebra::Cholesky::new(linalg::symmetrize(&covariance))
                .ok_or_else(|| Error::param("covariance", "Cholesky factorization failed"))?;
            Some(chol.unpack())
        };
        Ok(Self {
            covariance,
            beta_star,
            sigma,
            factor,
        })
    }

    pub fn isotropic(beta_star: DVector<f64>, sigma: f64) -> Result<Self> {
        let d = beta_star.len();
        Self::new(DMatrix::identity(d, d), beta_star, sigma)
    }

    pub fn d(&self) -> usize {
        self.beta_star.len()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn beta_star(&self) -> &DVector<f64> {
        &self.beta_star
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn is_isotropic(&self) -> bool {
        self.factor.is_none()
    }

    /// Risk of the null estimator `β̂ = 0`: `β*ᵀΣβ* + σ²`.
    pub fn null_risk(&self) -> f64 {
        self.beta_star.dot(&(&self.covariance * &self.beta_star)) + self.sigma * self.sigma
    }

    /// Population risk `‖β̂ − β*‖²_Σ + σ²`.
    pub fn population_risk(&self, beta_hat: &DVector<f64>) -> f64 {
        let e = beta_hat - &self.beta_star;
        e.dot(&(&self.covariance * &e)) + self.sigma * self.sigma
    }

    pub fn sample_design(&self, n: usize, seed: u64) -> DMatrix<f64> {
        let z = standard_gaussian(n, self.d(), seed);
        match &self.factor {
            None => z,
            Some(l) => z * l.transpose(),
        }
    }

    pub fn sample_batch(&self, n: usize, seed: u64) -> SampleBatch {
        let design = self.sample_design(n, seed);
        let responses = responses_unchecked(&design, &self.beta_star, self.sigma, seed);
        SampleBatch {
            design,
            responses,
            seed,
        }
    }
}

/// Ambient-space problem for the random-projection model:
/// `x ~ N(0, I_p)`, `y = ⟨x, θ⟩ + N(0, σ²)`.
#[derive(Clone, Debug)]
pub struct ProjectionProblem {
    theta: DVector<f64>,
    sigma: f64,
}

impl ProjectionProblem {
    pub fn new(theta: DVector<f64>, sigma: f64) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::param(
                "theta",
                "ambient dimension must be at least 1",
            ));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("theta", "entries must be finite"));
        }
        check_sigma(sigma)?;
        Ok(Self { theta, sigma })
    }

    /// `θ = ‖θ‖ e₁`; every risk depends on `θ` only through its norm.
    pub fn with_norm(p: usize, theta_norm: f64, sigma: f64) -> Result<Self> {
        if p == 0 {
            return Err(Error::param("p", "ambient dimension must be at least 1"));
        }
        let mut theta = DVector::zeros(p);
        theta[0] = theta_norm;
        Self::new(theta, sigma)
    }

    pub fn p(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn theta_norm(&self) -> f64 {
        self.theta.norm()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn check_model_size(&self, d: usize) -> Result<()> {
        if d == 0 || d > self.p() {
            return Err(Error::param(
                "d",
                format!("model size must be in 1..={}, got {d}", self.p()),
            ));
        }
        Ok(())
    }
}

/// One draw of `n` labelled samples.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub design: DMatrix<f64>,
    pub responses: DVector<f64>,
    pub seed: u64,
}

impl SampleBatch {
    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn d(&self) -> usize {
        self.design.ncols()
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::param(
            "sigma",
            format!("noise level must be finite and >= 0, got {sigma}"),
        ));
    }
    Ok(())
}

/// `n × d` matrix of i.i.d. N(0, 1) entries, filled row by row so that the
/// first `k` rows do not depend on `n`.
pub fn standard_gaussian(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_for(seed, Purpose::Design);
    DMatrix::from_row_iterator(n, d, (0..n * d).map(|_| StandardNormal.sample(&mut rng)))
}

/// Rows i.i.d. `N(0, Σ)`.
pub fn sample_design(
    n: usize,
    d: usize,
    covariance: &DMatrix<f64>,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if d == 0 {
        return Err(Error::param("d", "dimension must be at least 1"));
    }
    if covariance.nrows() != d || covariance.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {}x{}, expected {d}x{d}",
            covariance.nrows(),
            covariance.ncols()
        )));
    }
    let problem = GaussianProblem::new(covariance.clone(), DVector::zeros(d), 0.0)?;
    Ok(problem.sample_design(n, seed))
}

/// `y = Xβ* + η`, `η ~ N(0, σ² I)`.
pub fn sample_responses(
    design: &DMatrix<f64>,
    beta_star: &DVector<f64>,
    sigma: f64,
    seed: u64,
) -> Result<DVector<f64>> {
    if design.ncols() != beta_star.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns but beta_star has length {}",
            design.ncols(),
            beta_star.len()
        )));
    }
    check_sigma(sigma)?;
    Ok(responses_unchecked(design, beta_star, sigma, seed))
}

pub(crate) fn responses_unchecked(
    design: &DMatrix<f64>,
    beta_star: &DVector<f64>,
    sigma: f64,
    seed: u64,
) -> DVector<f64> {
    let mut y = design * beta_star;
    if sigma > 0.0 {
        let mut rng = rng_for(seed, Purpose::Noise);
        for v in y.iter_mut() {
            let eta: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * eta;
        }
    }
    y
}

/// Haar-distributed `d × p` matrix with orthonormal rows.
///
/// Orthonormalizes a Gaussian matrix by QR and flips column signs so the
/// triangular factor has a positive diagonal.
pub fn sample_orthonormal(d: usize, p: usize, seed: u64) -> Result<DMatrix<f64>> {
    if d == 0 || d > p {
        return Err(Error::param(
            "d",
            format!("need 1 <= d <= p, got d={d}, p={p}"),
        ));
    }
    let mut rng = rng_for(seed, Purpose::Projection);
    let g = DMatrix::<f64>::from_fn(p, d, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_batch() {
        let x = sample_design(0, 3, &DMatrix::identity(3, 3), 7).unwrap();
        assert_eq!(x.shape(), (0, 3));
    }

    #[test]
    fn design_is_deterministic() {
        let s = DMatrix::identity(2, 2);
        assert_eq!(
            sample_design(2, 2, &s, 11).unwrap(),
            sample_design(2, 2, &s, 11).unwrap()
        );
        assert_ne!(
            sample_design(2, 2, &s, 11).unwrap(),
            sample_design(2, 2, &s, 12).unwrap()
        );
    }

    #[test]
    fn design_rows_are_prefix_stable() {
        let a = standard_gaussian(5, 3, 99);
        let b = standard_gaussian(6, 3, 99);
        assert_eq!(a, b.rows(0, 5).into_owned());
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = sample_design(3, 2, &s, 1).unwrap_err();
        assert!(
            matches!(err, Error::NotPositiveDefinite { index: 0, .. }),
            "{err}"
        );
        assert!(err.to_string().contains("eigenvalue 0"));
    }

    #[test]
    fn sample_covariance_close_to_target() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 1.0]));
        let n = 100_000;
        let x = sample_design(n, 2, &s, 2024).unwrap();
        let emp = x.transpose() * &x / n as f64;
        for i in 0..2 {
            for j in 0..2 {
                let target = s[(i, j)];
                let tol = 0.05 * s[(i, i)].max(s[(j, j)]).max(target.abs());
                assert!(
                    (emp[(i, j)] - target).abs() < tol,
                    "({i},{j}) {}",
                    emp[(i, j)]
                );
            }
        }
    }

    #[test]
    fn isotropic_moments_rotation_invariant() {
        // E[(uᵀx)²] = 1 and E[(uᵀx)⁴] = 3 for any unit u.
        let n = 100_000;
        let x = standard_gaussian(n, 3, 5);
        for u in [
            DVector::from_vec(vec![1.0, 0.0, 0.0]),
            DVector::from_vec(vec![1.0, 1.0, 1.0]).normalize(),
            DVector::from_vec(vec![0.3, -0.9, 0.1]).normalize(),
        ] {
            let proj = &x * &u;
            let m2 = proj.iter().map(|v| v * v).sum::<f64>() / n as f64;
            let m4 = proj.iter().map(|v| v.powi(4)).sum::<f64>() / n as f64;
            assert!((m2 - 1.0).abs() < 0.02, "m2 {m2}");
            assert!((m4 - 3.0).abs() < 0.1, "m4 {m4}");
        }
    }

    #[test]
    fn noiseless_responses_are_exact() {
        let x = standard_gaussian(4, 2, 3);
        let beta = DVector::from_vec(vec![1.5, -2.0]);
        let y = sample_responses(&x, &beta, 0.0, 8).unwrap();
        assert_eq!(y, &x * &beta);
    }

    #[test]
    fn response_noise_variance() {
        let n = 100_000;
        let x = standard_gaussian(n, 2, 3);
        let y = sample_responses(&x, &DVector::zeros(2), 1.0, 8).unwrap();
        let mean = y.sum() / n as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 1.0).abs() < 0.05, "var {var}");
        assert_eq!(y, sample_responses(&x, &DVector::zeros(2), 1.0, 8).unwrap());
    }

    #[test]
    fn responses_dimension_mismatch() {
        let x = standard_gaussian(4, 2, 3);
        assert!(sample_responses(&x, &DVector::zeros(3), 1.0, 0).is_err());
    }

    #[test]
    fn orthonormal_rows() {
        for (d, p, seed) in [(1, 3, 0), (3, 3, 1), (5, 10, 2), (10, 40, 3)] {
            let proj = sample_orthonormal(d, p, seed).unwrap();
            let gram = &proj * proj.transpose();
            let resid = linalg::max_abs(&(gram - DMatrix::identity(d, d)));
            assert!(resid < 1e-10, "residual {resid}");
        }
        let sq = sample_orthonormal(4, 4, 9).unwrap();
        assert!((sq.determinant().abs() - 1.0).abs() < 1e-10);
        let row = sample_orthonormal(1, 3, 9).unwrap();
        assert!((row.norm() - 1.0).abs() < 1e-12);
        assert!(sample_orthonormal(4, 3, 0).is_err());
    }

    #[test]
    fn projected_norm_expectation() {
        // E‖Pθ‖² = (d/p)‖θ‖² for Haar P.
        let (d, p, trials) = (5, 10, 10_000);
        let mut theta = DVector::zeros(p);
        theta[2] = 1.0;
        let mut acc = crate::stats::MeanVar::new();
        for t in 0..trials {
            let proj = sample_orthonormal(d, p, crate::stream::trial_seed(17, t)).unwrap();
            acc.push((&proj * &theta).norm_squared());
        }
        assert!(
            (acc.mean() - 0.5).abs() < 3.0 * acc.std_error(),
            "{} ± {}",
            acc.mean(),
            acc.std_error()
        );
    }
}
