//! Cross-validation, out-of-fold stacking and the Bayesian ridge head.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::gbm::{self, BoostedModel, TrainConfig};
use crate::rng::{Purpose, SplitRng};

pub const STACK_FORMAT: &str = "valuekit-stacking-model";
pub const STACK_VERSION: u32 = 1;

const EPS: f64 = 1e-9;

/// Assignment of rows to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub assignment: Vec<usize>,
}

/// Shuffles `0..n` with the fold stream of `seed` and cuts it into `k`
/// contiguous chunks; the first `n % k` chunks get one extra row.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k-fold needs 2 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SplitRng::new(seed, Purpose::Folds, 0).shuffle(&mut order);
    let mut assignment = vec![0; n];
    let (base, extra) = (n / k, n % k);
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &row in &order[pos..pos + size] {
            assignment[row] = fold;
        }
        pos += size;
    }
    Ok(FoldPlan {
        n,
        k,
        seed,
        assignment,
    })
}

impl FoldPlan {
    /// Plan from an explicit assignment; every fold must be non-empty.
    pub fn from_assignment(k: usize, seed: u64, assignment: Vec<usize>) -> Result<FoldPlan> {
        let plan = FoldPlan {
            n: assignment.len(),
            k,
            seed,
            assignment,
        };
        plan.check(plan.n)?;
        Ok(plan)
    }

    pub fn check(&self, n_rows: usize) -> Result<()> {
        if self.n != n_rows || self.assignment.len() != n_rows {
            return Err(Error::LengthMismatch {
                left: self.n,
                right: n_rows,
            });
        }
        if self.k < 2 {
            return Err(Error::InvalidArgument("fold plan needs k >= 2".into()));
        }
        let sizes = self.sizes();
        if sizes.len() != self.k
            || sizes.contains(&0)
            || self.assignment.iter().any(|&f| f >= self.k)
        {
            return Err(Error::InvalidArgument(
                "fold plan has an empty or out-of-range fold".into(),
            ));
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            if let Some(s) = sizes.get_mut(f) {
                *s += 1;
            }
        }
        sizes
    }

    /// Held-out rows of `fold`, ascending.
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n)
            .filter(|&r| self.assignment[r] == fold)
            .collect()
    }

    /// Training rows for `fold`, ascending.
    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n)
            .filter(|&r| self.assignment[r] != fold)
            .collect()
    }
}

pub fn rmse(obs: &[f64], pred: &[f64]) -> Result<f64> {
    if obs.is_empty() {
        return Err(Error::Empty("rmse of an empty vector".into()));
    }
    if obs.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: obs.len(),
            right: pred.len(),
        });
    }
    let sse: f64 = obs.iter().zip(pred).map(|(o, p)| (o - p) * (o - p)).sum();
    Ok((sse / obs.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScores {
    pub fold_rmse: Vec<f64>,
    pub mean_rmse: f64,
}

impl CvScores {
    pub fn from_folds(fold_rmse: Vec<f64>) -> CvScores {
        let mean_rmse = fold_rmse.iter().sum::<f64>() / fold_rmse.len() as f64;
        CvScores {
            fold_rmse,
            mean_rmse,
        }
    }
}

fn pick(y: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&r| y[r]).collect()
}

fn check_inputs(matrix: &FeatureMatrix, y: &[f64], plan: &FoldPlan) -> Result<()> {
    if matrix.n_rows() != y.len() {
        return Err(Error::LengthMismatch {
            left: matrix.n_rows(),
            right: y.len(),
        });
    }
    plan.check(matrix.n_rows())
}

pub fn cross_validate(
    matrix: &FeatureMatrix,
    y: &[f64],
    config: &TrainConfig,
    plan: &FoldPlan,
) -> Result<CvScores> {
    check_inputs(matrix, y, plan)?;
    let scores = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let train = plan.train_rows(fold);
            let test = plan.test_rows(fold);
            let model = gbm::train(&matrix.select_rows(&train), &pick(y, &train), config)?;
            rmse(&pick(y, &test), &model.predict(&matrix.select_rows(&test))?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CvScores::from_folds(scores))
}

/// Out-of-fold predictions together with the fold instances that made them.
#[derive(Debug, Clone)]
pub struct OofResult {
    /// `predictions[i][m]`: base `m` on row `i`, from the instance that did
    /// not see row `i`'s fold.
    pub predictions: Vec<Vec<f64>>,
    /// `fold_models[m][f]`: base `m` trained without fold `f`.
    pub fold_models: Vec<Vec<BoostedModel>>,
}

impl OofResult {
    pub fn column(&self, m: usize) -> Vec<f64> {
        self.predictions.iter().map(|row| row[m]).collect()
    }
}

pub fn oof_predictions(
    matrix: &FeatureMatrix,
    y: &[f64],
    configs: &[TrainConfig],
    plan: &FoldPlan,
) -> Result<OofResult> {
    check_inputs(matrix, y, plan)?;
    if configs.is_empty() {
        return Err(Error::InvalidArgument(
            "stacking needs at least one base model".into(),
        ));
    }
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|m| (0..plan.k).map(move |f| (m, f)))
        .collect();
    let fitted = jobs
        .par_iter()
        .map(|&(m, fold)| {
            let train = plan.train_rows(fold);
            let test = plan.test_rows(fold);
            let model = gbm::train(&matrix.select_rows(&train), &pick(y, &train), &configs[m])?;
            let pred = model.predict(&matrix.select_rows(&test))?;
            Ok((model, test, pred))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut predictions = vec![vec![f64::NAN; configs.len()]; matrix.n_rows()];
    let mut fold_models: Vec<Vec<BoostedModel>> = vec![Vec::with_capacity(plan.k); configs.len()];
    for (&(m, _), (model, test, pred)) in jobs.iter().zip(fitted) {
        for (r, p) in test.into_iter().zip(pred) {
            predictions[r][m] = p;
        }
        fold_models[m].push(model);
    }
    Ok(OofResult {
        predictions,
        fold_models,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RidgeParams {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RidgeParams {
    fn default() -> Self {
        RidgeParams {
            tol: 1e-6,
            max_iter: 300,
        }
    }
}

/// Linear head fitted on centered data; `intercept` restores the means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Noise precision.
    pub alpha: f64,
    /// Weight precision.
    pub lambda: f64,
    pub n_iter: usize,
    pub converged: bool,
}

impl RidgeFit {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

struct Centered {
    x: DMatrix<f64>,
    y: DVector<f64>,
    x_mean: DVector<f64>,
    y_mean: f64,
}

fn center(x: &[Vec<f64>], y: &[f64]) -> Result<Centered> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "ridge fit needs at least 2 rows".into(),
        ));
    }
    if y.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: y.len(),
        });
    }
    let p = x[0].len();
    if x.iter().any(|row| row.len() != p) {
        return Err(Error::InvalidArgument("ragged design matrix".into()));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ridge input".into()));
    }
    let mut xm = DMatrix::from_fn(n, p, |i, j| x[i][j]);
    let x_mean = DVector::from_fn(p, |j, _| {
        gbm::stable_mean(&x.iter().map(|r| r[j]).collect::<Vec<_>>())
    });
    let y_mean = gbm::stable_mean(y);
    for j in 0..p {
        for i in 0..n {
            xm[(i, j)] -= x_mean[j];
        }
    }
    let yv = DVector::from_fn(n, |i, _| y[i] - y_mean);
    Ok(Centered {
        x: xm,
        y: yv,
        x_mean,
        y_mean,
    })
}

struct Posterior {
    sigma: DMatrix<f64>,
    mean: DVector<f64>,
}

fn posterior(xtx: &DMatrix<f64>, xty: &DVector<f64>, alpha: f64, lambda: f64) -> Result<Posterior> {
    let p = xtx.nrows();
    let precision = DMatrix::identity(p, p) * lambda + xtx * alpha;
    let sigma = precision
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("ridge system is not positive definite".into()))?
        .inverse();
    let mean = &sigma * xty * alpha;
    Ok(Posterior { sigma, mean })
}

fn finish(
    c: &Centered,
    mean: &DVector<f64>,
    alpha: f64,
    lambda: f64,
    n_iter: usize,
    converged: bool,
) -> Result<RidgeFit> {
    if mean.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("ridge weights".into()));
    }
    Ok(RidgeFit {
        weights: mean.iter().copied().collect(),
        intercept: c.y_mean - c.x_mean.dot(mean),
        alpha,
        lambda,
        n_iter,
        converged,
    })
}

/// Posterior mean for fixed precisions `alpha` (noise) and `lambda` (weights).
pub fn ridge_fixed(x: &[Vec<f64>], y: &[f64], alpha: f64, lambda: f64) -> Result<RidgeFit> {
    if !(alpha > 0.0 && lambda > 0.0) {
        return Err(Error::InvalidArgument("precisions must be positive".into()));
    }
    let c = center(x, y)?;
    let xtx = c.x.transpose() * &c.x;
    let xty = c.x.transpose() * &c.y;
    let post = posterior(&xtx, &xty, alpha, lambda)?;
    finish(&c, &post.mean, alpha, lambda, 0, true)
}

/// Evidence maximization for Bayesian ridge regression. Each iteration
/// updates, in order, the posterior covariance and mean, the effective
/// number of parameters, then the weight and noise precisions.
pub fn bayesian_ridge_fit(x: &[Vec<f64>], y: &[f64], params: &RidgeParams) -> Result<RidgeFit> {
    let c = center(x, y)?;
    let n = c.x.nrows() as f64;
    let p = c.x.ncols() as f64;
    let xtx = c.x.transpose() * &c.x;
    let xty = c.x.transpose() * &c.y;
    let var_y = c.y.norm_squared() / n;
    let mut alpha = 1.0 / (var_y + EPS);
    let mut lambda = 1.0;
    let mut converged = false;
    let mut n_iter = 0;
    while n_iter < params.max_iter {
        n_iter += 1;
        let post = posterior(&xtx, &xty, alpha, lambda)?;
        let gamma = p - lambda * post.sigma.trace();
        let sse = (&c.y - &c.x * &post.mean).norm_squared();
        let lambda_new = (gamma + EPS) / (post.mean.norm_squared() + EPS);
        let alpha_new = (n - gamma + EPS) / (sse + EPS);
        let done = ((lambda_new - lambda) / lambda).abs() < params.tol
            && ((alpha_new - alpha) / alpha).abs() < params.tol;
        lambda = lambda_new;
        alpha = alpha_new;
        if done {
            converged = true;
            break;
        }
    }
    let post = posterior(&xtx, &xty, alpha, lambda)?;
    finish(&c, &post.mean, alpha, lambda, n_iter, converged)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingModel {
    pub format: String,
    pub version: u32,
    pub feature_names: Vec<String>,
    pub base_configs: Vec<TrainConfig>,
    pub fold_plan: FoldPlan,
    pub ridge_params: RidgeParams,
    pub head: RidgeFit,
    /// `fold_models[m][f]`: base `m` trained without fold `f`.
    pub fold_models: Vec<Vec<BoostedModel>>,
    /// Bases retrained on every row; these feed the head at inference.
    pub full_models: Vec<BoostedModel>,
}

pub fn fit_stacking(
    matrix: &FeatureMatrix,
    y: &[f64],
    configs: &[TrainConfig],
    plan: &FoldPlan,
    params: &RidgeParams,
) -> Result<StackingModel> {
    let oof = oof_predictions(matrix, y, configs, plan)?;
    fit_stacking_from_oof(matrix, y, configs, plan, params, oof)
}

/// Completes a stack from already computed out-of-fold predictions.
pub fn fit_stacking_from_oof(
    matrix: &FeatureMatrix,
    y: &[f64],
    configs: &[TrainConfig],
    plan: &FoldPlan,
    params: &RidgeParams,
    oof: OofResult,
) -> Result<StackingModel> {
    let head = bayesian_ridge_fit(&oof.predictions, y, params)?;
    let full_models = configs
        .par_iter()
        .map(|c| gbm::train(matrix, y, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(StackingModel {
        format: STACK_FORMAT.to_string(),
        version: STACK_VERSION,
        feature_names: matrix.feature_names().to_vec(),
        base_configs: configs.to_vec(),
        fold_plan: plan.clone(),
        ridge_params: *params,
        head,
        fold_models: oof.fold_models,
        full_models,
    })
}

impl StackingModel {
    /// Full-data base predictions, one row per matrix row.
    pub fn base_predictions(&self, matrix: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        let columns = self
            .full_models
            .iter()
            .map(|m| m.predict(matrix))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..matrix.n_rows())
            .map(|r| columns.iter().map(|c| c[r]).collect())
            .collect())
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_json(bytes: &[u8]) -> Result<StackingModel> {
        let model: StackingModel = serde_json::from_slice(bytes)?;
        if model.format != STACK_FORMAT || model.version != STACK_VERSION {
            return Err(Error::Model(format!(
                "unsupported model {} v{}",
                model.format, model.version
            )));
        }
        if model.head.weights.len() != model.full_models.len() {
            return Err(Error::Model(
                "head width differs from the number of bases".into(),
            ));
        }
        for m in model
            .full_models
            .iter()
            .chain(model.fold_models.iter().flatten())
        {
            m.check()?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<StackingModel> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        StackingModel::from_json(&bytes)
    }
}

pub fn predict_stacking(model: &StackingModel, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
    Ok(model
        .base_predictions(matrix)?
        .iter()
        .map(|row| model.head.predict_row(row))
        .collect())
}

/// Cross-validated scores of every base and of the stack, from one set of
/// out-of-fold predictions. The stack's score on fold `f` comes from a head
/// fitted only on out-of-fold rows outside `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingScores {
    pub bases: Vec<CvScores>,
    pub stacking: CvScores,
}

pub fn score_oof(
    oof: &OofResult,
    y: &[f64],
    plan: &FoldPlan,
    params: &RidgeParams,
) -> Result<StackingScores> {
    let n_bases = oof.fold_models.len();
    let mut bases = Vec::with_capacity(n_bases);
    for m in 0..n_bases {
        let column = oof.column(m);
        let folds = (0..plan.k)
            .map(|f| {
                let test = plan.test_rows(f);
                rmse(&pick(y, &test), &pick(&column, &test))
            })
            .collect::<Result<Vec<_>>>()?;
        bases.push(CvScores::from_folds(folds));
    }
    let stacking = (0..plan.k)
        .map(|f| {
            let train = plan.train_rows(f);
            let test = plan.test_rows(f);
            let x: Vec<Vec<f64>> = train.iter().map(|&r| oof.predictions[r].clone()).collect();
            let head = bayesian_ridge_fit(&x, &pick(y, &train), params)?;
            let pred: Vec<f64> = test
                .iter()
                .map(|&r| head.predict_row(&oof.predictions[r]))
                .collect();
            rmse(&pick(y, &test), &pred)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StackingScores {
        bases,
        stacking: CvScores::from_folds(stacking),
    })
}
