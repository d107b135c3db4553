//! Random ReLU features followed by multi-output ridge regression on
//! one-hot class targets.

pub mod idx;

use nalgebra::DMatrix;
use rand::seq::index;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::spectrum::RANK_TOL;
use crate::stats::{EstimateFlags, MeanVar};
use crate::stream::{rng_for, trial_seed, Purpose};

pub use idx::{load_idx_dataset, load_idx_files, DatasetSplit};

/// Labelled inputs in `[−1, 1]^d`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub inputs: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub one_hot: DMatrix<f64>,
    pub classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(
        inputs: DMatrix<f64>,
        labels: Vec<usize>,
        classes: usize,
        name: &str,
    ) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::param(
                "labels",
                format!("label {bad} outside 0..{classes}"),
            ));
        }
        if inputs.iter().any(|v| !(v.abs() <= 1.0 + 1e-9)) {
            return Err(Error::param("inputs", "entries must lie in [-1, 1]"));
        }
        let mut one_hot = DMatrix::zeros(labels.len(), classes);
        for (i, &l) in labels.iter().enumerate() {
            one_hot[(i, l)] = 1.0;
        }
        Ok(Self {
            inputs,
            labels,
            one_hot,
            classes,
            name: name.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Rows at the given indices, in that order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let inputs = self.inputs.select_rows(rows);
        let labels: Vec<usize> = rows.iter().map(|&r| self.labels[r]).collect();
        Dataset {
            one_hot: self.one_hot.select_rows(rows),
            inputs,
            labels,
            classes: self.classes,
            name: self.name.clone(),
        }
    }

    /// `n` rows drawn uniformly without replacement.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n > self.len() {
            return Err(Error::param(
                "n",
                format!("cannot draw {n} of {} rows", self.len()),
            ));
        }
        let mut rng = rng_for(seed, Purpose::Subsample);
        let mut rows = index::sample(&mut rng, self.len(), n).into_vec();
        rows.sort_unstable();
        Ok(self.select(&rows))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Ten-class Gaussian mixture in `[−1, 1]^784`, used when no real dataset
/// is available. Class means have entries uniform in `±SYNTHETIC_SPREAD`
/// and each input adds `N(0, SYNTHETIC_NOISE²)` noise per pixel before
/// clipping; labels are balanced.
pub const SYNTHETIC_SPREAD: f64 = 0.2;
pub const SYNTHETIC_NOISE: f64 = 0.6;

pub fn synthetic_dataset(n_train: usize, n_test: usize, seed: u64) -> Result<DatasetSplit> {
    const D: usize = 784;
    const C: usize = 10;
    let mut rng = rng_for(seed, Purpose::Instance);
    let unif = rand_distr::Uniform::new_inclusive(-SYNTHETIC_SPREAD, SYNTHETIC_SPREAD)
        .expect("valid range");
    let means: Vec<Vec<f64>> = (0..C)
        .map(|_| (0..D).map(|_| unif.sample(&mut rng)).collect())
        .collect();
    let noise = Normal::new(0.0, SYNTHETIC_NOISE).expect("valid sd");
    let mut make = |n: usize, name: &str| {
        let labels: Vec<usize> = (0..n).map(|i| i % C).collect();
        let inputs = DMatrix::from_fn(n, D, |_, _| 0.0);
        let mut inputs = inputs;
        for (i, &l) in labels.iter().enumerate() {
            for j in 0..D {
                inputs[(i, j)] = (means[l][j] + noise.sample(&mut rng)).clamp(-1.0, 1.0);
            }
        }
        Dataset::new(inputs, labels, C, name)
    };
    let train = make(n_train, "synthetic-train")?;
    let test = make(n_test, "synthetic-test")?;
    Ok(DatasetSplit { train, test })
}

/// Variance of the entries of the feature matrix `W`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureScale {
    /// Variance `1/√d`.
    InvSqrtDim,
    /// Variance `1/d`.
    InvDim,
}

impl FeatureScale {
    pub fn std_dev(&self, d: usize) -> f64 {
        match self {
            FeatureScale::InvSqrtDim => (d as f64).powf(-0.25),
            FeatureScale::InvDim => (d as f64).powf(-0.5),
        }
    }
}

/// `D × d` Gaussian feature matrix, filled row by row so the first `k`
/// rows do not depend on `D`.
pub fn sample_feature_matrix(
    features: usize,
    d: usize,
    scale: FeatureScale,
    seed: u64,
) -> DMatrix<f64> {
    let mut rng = rng_for(seed, Purpose::Features);
    let sd = scale.std_dev(d);
    DMatrix::from_row_iterator(
        features,
        d,
        (0..features * d).map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        }),
    )
}

/// `max(0, XWᵀ)`.
pub fn relu_embed(inputs: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if inputs.ncols() != w.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "inputs have {} columns but W has {}",
            inputs.ncols(),
            w.ncols()
        )));
    }
    Ok((inputs * w.transpose()).map(|v| v.max(0.0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Primal,
    Dual,
    Pseudoinverse,
}

#[derive(Clone, Debug)]
pub struct MultiFit {
    pub weights: DMatrix<f64>,
    pub solver: Solver,
    pub flags: EstimateFlags,
}

/// `(ΦᵀΦ + λI)⁻¹ΦᵀY` through the `D × D` system.
pub fn fit_primal(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
) -> Option<(DMatrix<f64>, f64)> {
    let d = features.ncols();
    let system = features.transpose() * features + DMatrix::identity(d, d) * lambda;
    let (chol, cond) = linalg::cholesky_with_condition(linalg::symmetrize(&system))?;
    Some((chol.solve(&(features.transpose() * targets)), cond))
}

/// `Φᵀ(ΦΦᵀ + λI)⁻¹Y` through the `n × n` system.
pub fn fit_dual(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
) -> Option<(DMatrix<f64>, f64)> {
    let n = features.nrows();
    let system = features * features.transpose() + DMatrix::identity(n, n) * lambda;
    let (chol, cond) = linalg::cholesky_with_condition(linalg::symmetrize(&system))?;
    Some((features.transpose() * chol.solve(targets), cond))
}

/// Ridge with one column of weights per target column. Uses the smaller of
/// the primal and dual systems; `λ = 0` and failed factorizations fall back
/// to the minimum-norm least-squares solution.
pub fn fit_ridge_multi(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
) -> Result<MultiFit> {
    if features.nrows() != targets.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows but {} target rows",
            features.nrows(),
            targets.nrows()
        )));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::NegativeLambda(lambda));
    }
    let (n, d) = features.shape();
    let mut flags = EstimateFlags::default();
    if lambda > 0.0 {
        let (attempt, solver) = if d <= n {
            (fit_primal(features, targets, lambda), Solver::Primal)
        } else {
            (fit_dual(features, targets, lambda), Solver::Dual)
        };
        if let Some((weights, cond)) = attempt {
            flags.ill_conditioned = cond > 1e12;
            return Ok(MultiFit {
                weights,
                solver,
                flags,
            });
        }
    }
    let (weights, rank) = linalg::pinv_solve(features, targets, RANK_TOL);
    flags.pseudoinverse_limit = rank < d;
    Ok(MultiFit {
        weights,
        solver: Solver::Pseudoinverse,
        flags,
    })
}

#[derive(Clone, Debug)]
pub struct FeatureModel {
    pub w: DMatrix<f64>,
    pub lambda: f64,
    pub weights: DMatrix<f64>,
}

impl FeatureModel {
    pub fn fit(train: &Dataset, w: DMatrix<f64>, lambda: f64) -> Result<Self> {
        let phi = relu_embed(&train.inputs, &w)?;
        let fit = fit_ridge_multi(&phi, &train.one_hot, lambda)?;
        Ok(Self {
            w,
            lambda,
            weights: fit.weights,
        })
    }

    pub fn features(&self) -> usize {
        self.w.nrows()
    }

    pub fn predict(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(relu_embed(inputs, &self.w)? * &self.weights)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub classification_error: f64,
    /// Mean over rows of `‖ŷ − y‖²`.
    pub mse: f64,
}

/// Index of the largest entry, lowest index on ties.
fn argmax(row: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn score(predictions: &DMatrix<f64>, data: &Dataset) -> Evaluation {
    let n = data.len();
    if n == 0 {
        return Evaluation {
            classification_error: 0.0,
            mse: 0.0,
        };
    }
    let mut wrong = 0usize;
    for (i, &label) in data.labels.iter().enumerate() {
        if argmax(predictions.row(i).iter().copied()) != label {
            wrong += 1;
        }
    }
    Evaluation {
        classification_error: wrong as f64 / n as f64,
        mse: (predictions - &data.one_hot).norm_squared() / n as f64,
    }
}

pub fn eval_classifier(model: &FeatureModel, data: &Dataset) -> Result<Evaluation> {
    Ok(score(&model.predict(&data.inputs)?, data))
}

/// Averages over repeated feature draws and training subsamples.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SweepPoint {
    pub n: usize,
    pub features: usize,
    pub lambda: f64,
    pub test_error: f64,
    pub test_error_se: f64,
    pub test_mse: f64,
    pub test_mse_se: f64,
    pub train_error: f64,
    pub train_mse: f64,
    pub repeats: usize,
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub ns: Vec<usize>,
    pub features: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub scale: FeatureScale,
    pub repeats: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Default)]
struct PointAcc {
    test_error: MeanVar,
    test_mse: MeanVar,
    train_error: MeanVar,
    train_mse: MeanVar,
}

/// Evaluates every `(n, D, λ)` combination. Each `(n, D)` pair needs one
/// thin SVD of the training features, after which each `λ` is cheap. Within
/// a repeat, smaller feature counts use the leading rows of one `W`, and
/// all `D` share the same training subsample.
pub fn relu_sweep(train: &Dataset, test: &Dataset, spec: &SweepSpec) -> Result<Vec<SweepPoint>> {
    if spec.repeats == 0 {
        return Err(Error::param("repeats", "must be at least 1"));
    }
    if spec.ns.is_empty() || spec.features.is_empty() || spec.lambdas.is_empty() {
        return Err(Error::param(
            "grid",
            "n, feature and lambda grids must be non-empty",
        ));
    }
    if let Some(&l) = spec.lambdas.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::NegativeLambda(l));
    }
    let d_max = *spec.features.iter().max().expect("non-empty");
    let nl = spec.lambdas.len();
    let mut acc = vec![PointAcc::default(); spec.ns.len() * spec.features.len() * nl];
    for r in 0..spec.repeats {
        let rseed = trial_seed(spec.seed, r as u64);
        let w_all = sample_feature_matrix(d_max, train.dim(), spec.scale, rseed);
        for (i, &n) in spec.ns.iter().enumerate() {
            let sub = train.subsample(n, trial_seed(rseed, i as u64))?;
            for (j, &dd) in spec.features.iter().enumerate() {
                let w = w_all.rows(0, dd).into_owned();
                let phi = relu_embed(&sub.inputs, &w)?;
                let phi_test = relu_embed(&test.inputs, &w)?;
                let evals = evaluate_lambdas(&phi, &sub, &phi_test, test, &spec.lambdas);
                for (k, (tr, te)) in evals.into_iter().enumerate() {
                    let a = &mut acc[(i * spec.features.len() + j) * nl + k];
                    a.test_error.push(te.classification_error);
                    a.test_mse.push(te.mse);
                    a.train_error.push(tr.classification_error);
                    a.train_mse.push(tr.mse);
                }
            }
        }
    }
    let mut out = Vec::with_capacity(acc.len());
    for (i, &n) in spec.ns.iter().enumerate() {
        for (j, &dd) in spec.features.iter().enumerate() {
            for (k, &l) in spec.lambdas.iter().enumerate() {
                let a = &acc[(i * spec.features.len() + j) * nl + k];
                out.push(SweepPoint {
                    n,
                    features: dd,
                    lambda: l,
                    test_error: a.test_error.mean(),
                    test_error_se: a.test_error.std_error(),
                    test_mse: a.test_mse.mean(),
                    test_mse_se: a.test_mse.std_error(),
                    train_error: a.train_error.mean(),
                    train_mse: a.train_mse.mean(),
                    repeats: spec.repeats,
                });
            }
        }
    }
    Ok(out)
}

/// Train and test scores for each `λ` from one thin SVD `Φ = UΓVᵀ`.
fn evaluate_lambdas(
    phi: &DMatrix<f64>,
    train: &Dataset,
    phi_test: &DMatrix<f64>,
    test: &Dataset,
    lambdas: &[f64],
) -> Vec<(Evaluation, Evaluation)> {
    let svd = phi.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v_t requested").transpose();
    let gammas = svd.singular_values;
    let top = gammas.iter().copied().fold(0.0, f64::max);
    let z = u.transpose() * &train.one_hot;
    let p_test = phi_test * &v;
    lambdas
        .iter()
        .map(|&l| {
            let f: Vec<f64> = gammas
                .iter()
                .map(|&g| {
                    if l == 0.0 {
                        if g > RANK_TOL * top {
                            1.0 / g
                        } else {
                            0.0
                        }
                    } else {
                        g / (g * g + l)
                    }
                })
                .collect();
            let mut fz = z.clone();
            let mut gfz = z.clone();
            for (r, (&fi, &g)) in f.iter().zip(gammas.iter()).enumerate() {
                fz.row_mut(r).scale_mut(fi);
                gfz.row_mut(r).scale_mut(fi * g);
            }
            let train_pred = &u * gfz;
            let test_pred = &p_test * fz;
            (score(&train_pred, train), score(&test_pred, test))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_split() -> DatasetSplit {
        synthetic_dataset(120, 200, 3).unwrap()
    }

    #[test]
    fn relu_zeroes_negatives() {
        let x = DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 0.5]);
        let phi = relu_embed(&x, &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(phi.as_slice(), &[1.0, 0.0, 0.5]);
        let zero = relu_embed(&DMatrix::zeros(2, 3), &DMatrix::identity(3, 3)).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_of_activations_vanish() {
        let split = small_split();
        let w = sample_feature_matrix(1000, 784, FeatureScale::InvSqrtDim, 1);
        let phi = relu_embed(&split.train.inputs, &w).unwrap();
        let zeros = phi.iter().filter(|&&v| v == 0.0).count() as f64 / phi.len() as f64;
        assert!((zeros - 0.5).abs() < 0.02, "{zeros}");
    }

    #[test]
    fn feature_scale_variants() {
        assert!((FeatureScale::InvSqrtDim.std_dev(16) - 0.5).abs() < 1e-15);
        assert!((FeatureScale::InvDim.std_dev(16) - 0.25).abs() < 1e-15);
        let w = sample_feature_matrix(3, 4, FeatureScale::InvDim, 2);
        let big = sample_feature_matrix(5, 4, FeatureScale::InvDim, 2);
        assert_eq!(w, big.rows(0, 3).into_owned());
    }

    #[test]
    fn orthonormal_least_squares() {
        let q = crate::problem::sample_orthonormal(3, 6, 4)
            .unwrap()
            .transpose();
        let y = DMatrix::from_fn(6, 2, |i, j| (i + 2 * j) as f64);
        let fit = fit_ridge_multi(&q, &y, 0.0).unwrap();
        assert!(linalg::max_abs(&(fit.weights - q.transpose() * &y)) < 1e-12);
    }

    #[test]
    fn huge_lambda_shrinks_to_zero() {
        let phi = DMatrix::from_fn(10, 4, |i, j| ((i * 7 + j * 3) % 5) as f64);
        let y = DMatrix::from_element(10, 2, 1.0);
        let fit = fit_ridge_multi(&phi, &y, 1e14).unwrap();
        assert!(linalg::max_abs(&fit.weights) < 1e-10);
    }

    #[test]
    fn primal_and_dual_agree() {
        let phi = crate::problem::standard_gaussian(50, 80, 6);
        let y = crate::problem::standard_gaussian(50, 10, 7);
        let (p, _) = fit_primal(&phi, &y, 0.1).unwrap();
        let (d, _) = fit_dual(&phi, &y, 0.1).unwrap();
        assert!(linalg::max_abs(&(&p - &d)) < 1e-8 * linalg::max_abs(&p).max(1.0));
        assert_eq!(fit_ridge_multi(&phi, &y, 0.1).unwrap().solver, Solver::Dual);
        let tall = crate::problem::standard_gaussian(80, 50, 8);
        let y2 = crate::problem::standard_gaussian(80, 3, 9);
        assert_eq!(
            fit_ridge_multi(&tall, &y2, 0.1).unwrap().solver,
            Solver::Primal
        );
    }

    #[test]
    fn zero_weights_on_balanced_data() {
        let split = small_split();
        let model = FeatureModel {
            w: DMatrix::zeros(5, 784),
            lambda: 1.0,
            weights: DMatrix::zeros(5, 10),
        };
        let e = eval_classifier(&model, &split.test).unwrap();
        assert!((e.classification_error - 0.9).abs() < 1e-12);
        assert!((e.mse - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let split = small_split();
        let e = score(&split.test.one_hot, &split.test);
        assert_eq!(e.classification_error, 0.0);
        assert_eq!(e.mse, 0.0);
    }

    #[test]
    fn square_system_interpolates() {
        let split = small_split();
        let w = sample_feature_matrix(120, 784, FeatureScale::InvSqrtDim, 2);
        let model = FeatureModel::fit(&split.train, w, 1e-8).unwrap();
        let e = eval_classifier(&model, &split.train).unwrap();
        assert!(e.mse < 1e-6, "{}", e.mse);
    }

    #[test]
    fn sweep_matches_direct_fit() {
        let split = small_split();
        let spec = SweepSpec {
            ns: vec![60],
            features: vec![30, 90],
            lambdas: vec![0.0, 0.5],
            scale: FeatureScale::InvSqrtDim,
            repeats: 1,
            seed: 5,
        };
        let pts = relu_sweep(&split.train, &split.test, &spec).unwrap();
        assert_eq!(pts.len(), 4);
        let rseed = trial_seed(5, 0);
        let sub = split.train.subsample(60, trial_seed(rseed, 0)).unwrap();
        let w = sample_feature_matrix(90, 784, FeatureScale::InvSqrtDim, rseed);
        let model = FeatureModel::fit(&sub, w, 0.5).unwrap();
        let direct = eval_classifier(&model, &split.test).unwrap();
        let p = pts
            .iter()
            .find(|p| p.features == 90 && p.lambda == 0.5)
            .unwrap();
        assert!((p.test_mse - direct.mse).abs() < 1e-8);
        assert!((p.test_error - direct.classification_error).abs() < 1e-12);
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(DMatrix::from_element(1, 2, 1.5), vec![0], 10, "x").is_err());
        assert!(Dataset::new(DMatrix::zeros(1, 2), vec![10], 10, "x").is_err());
        let split = small_split();
        assert_eq!(split.test.class_counts(), vec![20; 10]);
        let sub = split.train.subsample(30, 1).unwrap();
        assert_eq!(sub.len(), 30);
        assert!(split.train.subsample(1000, 1).is_err());
    }
}
