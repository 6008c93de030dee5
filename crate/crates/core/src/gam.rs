//! Gaussian additive model fitting by penalized least squares, GCV-based
//! smoothing-parameter selection, effective degrees of freedom and deviance
//! metrics.
//!
//! The design matrix is `[1 | B_1 | ... | B_J]` with one centered spline
//! block per continuous feature and a single unpenalized column per binary
//! feature. Coefficients solve
//!
//! ```text
//! min ||y - a - sum B_j b_j||^2 + sum lambda_j b_j' S_j b_j
//! ```
//!
//! via a Cholesky factorization of the penalized normal system. All
//! smoothing-parameter search happens on cached cross-product matrices, so
//! each lambda candidate costs O(p^3) independent of the row count.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{mean, sample_sd, ColumnKind, Dataset, ScalingParams};
use crate::spline::{build_smooth, basis_row, KnotVector, SmoothDesign};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GamConfig {
    /// Number of B-spline basis functions per continuous feature.
    pub basis_size: usize,
    /// Log-spaced candidate grid for the smoothing parameters.
    pub lambda_grid: Vec<f64>,
    /// Full coordinate-descent sweeps over the features.
    pub sweeps: usize,
    /// Row cap for the lambda search; larger training sets are subsampled
    /// (stratified by label) for the search and refit in full at the end.
    pub subsample_cap: usize,
    pub subsample_seed: u64,
}

impl Default for GamConfig {
    fn default() -> Self {
        GamConfig {
            basis_size: 10,
            lambda_grid: (-6..=6).map(|e| 10f64.powi(e)).collect(),
            sweeps: 2,
            subsample_cap: 5000,
            subsample_seed: 0x5EED,
        }
    }
}

/// Design of one additive term over the training rows.
#[derive(Debug, Clone)]
pub enum TermDesign {
    Smooth(SmoothDesign),
    Linear { feature: String, values: Vec<f64> },
}

impl TermDesign {
    pub fn feature(&self) -> &str {
        match self {
            TermDesign::Smooth(s) => &s.feature,
            TermDesign::Linear { feature, .. } => feature,
        }
    }

    fn width(&self) -> usize {
        match self {
            TermDesign::Smooth(s) => s.basis.ncols(),
            TermDesign::Linear { .. } => 1,
        }
    }
}

/// Build per-feature term designs from a standardized dataset. Binary
/// columns become single linear columns; continuous columns get a centered
/// cubic spline block.
pub fn build_terms(d: &Dataset, features: &[String], basis_size: usize) -> Result<Vec<TermDesign>> {
    let mut terms = Vec::with_capacity(features.len());
    for name in features {
        let col = d
            .column(name)
            .ok_or_else(|| Error::Config(format!("unknown feature '{name}'")))?;
        let term = match col.kind {
            ColumnKind::Binary => TermDesign::Linear {
                feature: name.clone(),
                values: col.values.clone(),
            },
            ColumnKind::Continuous => TermDesign::Smooth(build_smooth(name, &col.values, basis_size)?),
        };
        terms.push(term);
    }
    Ok(terms)
}

/// One coefficient block of a fitted model, carrying everything needed to
/// evaluate the term on new inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum FittedTerm {
    Smooth {
        feature: String,
        knots: KnotVector,
        /// k x (k-1) centering transform.
        transform: DMatrix<f64>,
        coefs: Vec<f64>,
        lambda: f64,
        edf: f64,
        /// sd of the term's contribution over the training rows.
        train_shape_sd: f64,
    },
    Linear {
        feature: String,
        coef: f64,
        edf: f64,
        train_shape_sd: f64,
    },
}

impl FittedTerm {
    pub fn feature(&self) -> &str {
        match self {
            FittedTerm::Smooth { feature, .. } => feature,
            FittedTerm::Linear { feature, .. } => feature,
        }
    }

    pub fn edf(&self) -> f64 {
        match self {
            FittedTerm::Smooth { edf, .. } => *edf,
            FittedTerm::Linear { edf, .. } => *edf,
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            FittedTerm::Smooth { lambda, .. } => *lambda,
            FittedTerm::Linear { .. } => 0.0,
        }
    }

    pub fn train_shape_sd(&self) -> f64 {
        match self {
            FittedTerm::Smooth { train_shape_sd, .. } => *train_shape_sd,
            FittedTerm::Linear { train_shape_sd, .. } => *train_shape_sd,
        }
    }

    /// Term contribution for a vector of (standardized) feature values.
    pub fn eval(&self, xs: &[f64]) -> Vec<f64> {
        match self {
            FittedTerm::Smooth {
                knots,
                transform,
                coefs,
                ..
            } => {
                let beta = DVector::from_vec(coefs.clone());
                xs.iter()
                    .map(|&x| {
                        let row = DVector::from_vec(basis_row(knots, x));
                        (transform.transpose() * row).dot(&beta)
                    })
                    .collect()
            }
            FittedTerm::Linear { coef, .. } => xs.iter().map(|&x| coef * x).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedGam {
    pub intercept: f64,
    pub terms: Vec<FittedTerm>,
    pub total_edf: f64,
    pub rss: f64,
    pub train_d2: f64,
    pub gcv: f64,
    pub n_train: usize,
    pub train_fitted_sd: f64,
    pub scaling: ScalingParams,
    pub basis_size: usize,
}

/// Fit diagnostics on one evaluation set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitMetrics {
    pub deviance: f64,
    pub null_deviance: f64,
    /// None when the evaluation labels have zero variance.
    pub d2: Option<f64>,
    pub edf_total: f64,
    pub gcv: f64,
}

/// Feature shape f_j evaluated on an even grid over the training range.
/// The grid axis is reported in original (de-standardized) units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureShape {
    pub feature: String,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub train_shape_sd: f64,
}

struct Block {
    offset: usize,
    size: usize,
    penalty: Option<DMatrix<f64>>,
}

/// Cross-product cache of the penalized normal system.
struct NormalSystem {
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    n: usize,
}

struct Assembly {
    x: DMatrix<f64>,
    blocks: Vec<Block>,
}

fn assemble(terms: &[TermDesign], n: usize) -> Assembly {
    let p = 1 + terms.iter().map(|t| t.width()).sum::<usize>();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        x[(i, 0)] = 1.0;
    }
    let mut blocks = Vec::with_capacity(terms.len());
    let mut offset = 1;
    for t in terms {
        match t {
            TermDesign::Smooth(s) => {
                let w = s.basis.ncols();
                x.view_mut((0, offset), (n, w)).copy_from(&s.basis);
                blocks.push(Block {
                    offset,
                    size: w,
                    penalty: Some(s.penalty.clone()),
                });
                offset += w;
            }
            TermDesign::Linear { values, .. } => {
                for i in 0..n {
                    x[(i, offset)] = values[i];
                }
                blocks.push(Block {
                    offset,
                    size: 1,
                    penalty: None,
                });
                offset += 1;
            }
        }
    }
    Assembly { x, blocks }
}

fn cross_products(x: &DMatrix<f64>, y: &[f64]) -> NormalSystem {
    let yv = DVector::from_column_slice(y);
    NormalSystem {
        gram: x.transpose() * x,
        xty: x.transpose() * &yv,
        yty: yv.dot(&yv),
        n: y.len(),
    }
}

fn cross_products_rows(x: &DMatrix<f64>, y: &[f64], rows: &[usize]) -> NormalSystem {
    let p = x.ncols();
    let mut xs = DMatrix::zeros(rows.len(), p);
    for (r, &i) in rows.iter().enumerate() {
        xs.row_mut(r).copy_from(&x.row(i));
    }
    let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    cross_products(&xs, &ys)
}

struct Solution {
    beta: DVector<f64>,
    per_block_edf: Vec<f64>,
    total_edf: f64,
    gcv: f64,
}

/// Solve the penalized normal equations for one lambda vector and compute
/// per-block effective degrees of freedom from the identity
/// `A^{-1} X'X = I - A^{-1} L`, whose diagonal is exactly 1 on every
/// unpenalized column.
fn solve_penalized(
    sys: &NormalSystem,
    blocks: &[Block],
    terms: &[TermDesign],
    lambdas: &[f64],
) -> Result<Solution> {
    let p = sys.gram.ncols();
    let mut a = sys.gram.clone();
    for (b, &lam) in blocks.iter().zip(lambdas) {
        if let Some(s) = &b.penalty {
            if lam != 0.0 {
                for i in 0..b.size {
                    for j in 0..b.size {
                        a[(b.offset + i, b.offset + j)] += lam * s[(i, j)];
                    }
                }
            }
        }
    }
    let chol = Cholesky::new(a).ok_or_else(|| {
        // attribute the failure to the term with the weakest diagonal
        let name = blocks
            .iter()
            .zip(terms)
            .min_by(|(a, _), (b, _)| {
                let da: f64 = (0..a.size).map(|i| sys.gram[(a.offset + i, a.offset + i)]).sum();
                let db: f64 = (0..b.size).map(|i| sys.gram[(b.offset + i, b.offset + i)]).sum();
                da.partial_cmp(&db).unwrap()
            })
            .map(|(_, t)| t.feature().to_string())
            .unwrap_or_else(|| "intercept".to_string());
        Error::SingularFit(name)
    })?;

    let beta = chol.solve(&sys.xty);
    let ainv = chol.inverse();

    let mut per_block_edf = Vec::with_capacity(blocks.len());
    let mut total_edf = p as f64;
    for (b, &lam) in blocks.iter().zip(lambdas) {
        let mut edf = b.size as f64;
        if let Some(s) = &b.penalty {
            if lam != 0.0 {
                let mut tr = 0.0;
                for i in 0..b.size {
                    for j in 0..b.size {
                        tr += ainv[(b.offset + i, b.offset + j)] * s[(j, i)];
                    }
                }
                edf -= lam * tr;
            }
        }
        total_edf += edf - b.size as f64;
        per_block_edf.push(edf);
    }

    // RSS = y'y - 2 b'X'y + b'X'Xb
    let rss = (sys.yty - 2.0 * beta.dot(&sys.xty)
        + (beta.transpose() * &sys.gram * &beta)[(0, 0)])
        .max(0.0);
    let n = sys.n as f64;
    let gcv = if n > total_edf {
        n * rss / (n - total_edf).powi(2)
    } else {
        f64::INFINITY
    };

    Ok(Solution {
        beta,
        per_block_edf,
        total_edf,
        gcv,
    })
}

fn finish_fit(
    terms: &[TermDesign],
    asm: &Assembly,
    y: &[f64],
    sol: Solution,
    lambdas: &[f64],
    scaling: &ScalingParams,
    basis_size: usize,
) -> FittedGam {
    let n = y.len();
    let fitted = &asm.x * &sol.beta;
    let fitted_vec: Vec<f64> = fitted.iter().copied().collect();
    let train_fitted_sd = sample_sd(&fitted_vec);

    let ybar = mean(y);
    let tss: f64 = y.iter().map(|&v| (v - ybar).powi(2)).sum();
    let rss: f64 = y
        .iter()
        .zip(fitted.iter())
        .map(|(&a, &b)| (a - b).powi(2))
        .sum();
    let train_d2 = if tss > 0.0 { 1.0 - rss / tss } else { 0.0 };

    let mut fitted_terms = Vec::with_capacity(terms.len());
    for ((t, b), (&lam, &edf)) in terms
        .iter()
        .zip(&asm.blocks)
        .zip(lambdas.iter().zip(&sol.per_block_edf))
    {
        let contrib: Vec<f64> = (0..n)
            .map(|i| {
                (0..b.size)
                    .map(|j| asm.x[(i, b.offset + j)] * sol.beta[b.offset + j])
                    .sum()
            })
            .collect();
        let shape_sd = sample_sd(&contrib);
        let ft = match t {
            TermDesign::Smooth(s) => FittedTerm::Smooth {
                feature: s.feature.clone(),
                knots: s.knots.clone(),
                transform: s.transform.clone(),
                coefs: (0..b.size).map(|j| sol.beta[b.offset + j]).collect(),
                lambda: lam,
                edf,
                train_shape_sd: shape_sd,
            },
            TermDesign::Linear { feature, .. } => FittedTerm::Linear {
                feature: feature.clone(),
                coef: sol.beta[b.offset],
                edf,
                train_shape_sd: shape_sd,
            },
        };
        fitted_terms.push(ft);
    }

    FittedGam {
        intercept: sol.beta[0],
        terms: fitted_terms,
        total_edf: sol.total_edf,
        rss,
        train_d2,
        gcv: sol.gcv,
        n_train: n,
        train_fitted_sd,
        scaling: scaling.clone(),
        basis_size,
    }
}

/// Fit with fixed smoothing parameters. `train` must already be
/// standardized; `lambdas` gives one value per feature (ignored for binary
/// terms). An empty feature set yields the intercept-only model.
pub fn fit(
    train: &Dataset,
    features: &[String],
    lambdas: &[f64],
    scaling: &ScalingParams,
    cfg: &GamConfig,
) -> Result<FittedGam> {
    let terms = build_terms(train, features, cfg.basis_size)?;
    fit_terms(&terms, &train.labels, lambdas, scaling, cfg.basis_size)
}

/// Fit from prebuilt term designs (shared across subset fits).
pub fn fit_terms(
    terms: &[TermDesign],
    y: &[f64],
    lambdas: &[f64],
    scaling: &ScalingParams,
    basis_size: usize,
) -> Result<FittedGam> {
    if lambdas.len() != terms.len() {
        return Err(Error::Config("one lambda per feature required".into()));
    }
    if lambdas.iter().any(|&l| l < 0.0) {
        return Err(Error::Config("lambdas must be non-negative".into()));
    }
    let asm = assemble(terms, y.len());
    let sys = cross_products(&asm.x, y);
    let sol = solve_penalized(&sys, &asm.blocks, terms, lambdas)?;
    Ok(finish_fit(terms, &asm, y, sol, lambdas, scaling, basis_size))
}

/// Select per-feature smoothing parameters by cyclic coordinate descent of
/// the GCV score over the configured log grid, then refit at the chosen
/// lambdas on the full data. Deterministic: fixed start, fixed sweep order,
/// ties broken toward the smaller grid value.
pub fn optimize_lambdas(
    train: &Dataset,
    features: &[String],
    scaling: &ScalingParams,
    cfg: &GamConfig,
) -> Result<FittedGam> {
    let terms = build_terms(train, features, cfg.basis_size)?;
    optimize_lambdas_terms(&terms, &train.labels, scaling, cfg)
}

pub fn optimize_lambdas_terms(
    terms: &[TermDesign],
    y: &[f64],
    scaling: &ScalingParams,
    cfg: &GamConfig,
) -> Result<FittedGam> {
    let n = y.len();
    let asm = assemble(terms, n);
    let search_sys = if n > cfg.subsample_cap {
        let rows = stratified_rows(y, cfg.subsample_cap, cfg.subsample_seed);
        cross_products_rows(&asm.x, y, &rows)
    } else {
        cross_products(&asm.x, y)
    };

    let mut lambdas = vec![1.0; terms.len()];
    for (i, t) in terms.iter().enumerate() {
        if matches!(t, TermDesign::Linear { .. }) {
            lambdas[i] = 0.0;
        }
    }
    for _ in 0..cfg.sweeps {
        for (i, t) in terms.iter().enumerate() {
            if matches!(t, TermDesign::Linear { .. }) {
                continue;
            }
            let mut best = f64::INFINITY;
            let mut best_lam = lambdas[i];
            for &cand in &cfg.lambda_grid {
                let mut trial = lambdas.clone();
                trial[i] = cand;
                let s = solve_penalized(&search_sys, &asm.blocks, terms, &trial)?;
                if s.gcv < best {
                    best = s.gcv;
                    best_lam = cand;
                }
            }
            lambdas[i] = best_lam;
        }
    }

    let full_sys = if n > cfg.subsample_cap {
        cross_products(&asm.x, y)
    } else {
        search_sys
    };
    let sol = solve_penalized(&full_sys, &asm.blocks, terms, &lambdas)?;
    Ok(finish_fit(terms, &asm, y, sol, &lambdas, scaling, cfg.basis_size))
}

/// Deterministic stratified row sample: rows are bucketed by label value
/// and taken proportionally from each bucket.
fn stratified_rows(y: &[f64], cap: usize, seed: u64) -> Vec<usize> {
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].partial_cmp(&y[b]).unwrap().then(a.cmp(&b)));
    let n_bins = 10usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(cap);
    for bin in 0..n_bins {
        let lo = bin * n / n_bins;
        let hi = (bin + 1) * n / n_bins;
        let mut bucket: Vec<usize> = order[lo..hi].to_vec();
        bucket.shuffle(&mut rng);
        let want = (cap * (hi - lo) + n - 1) / n;
        bucket.truncate(want);
        picked.extend(bucket);
    }
    picked.truncate(cap);
    picked.sort_unstable();
    picked
}

impl FittedGam {
    /// Predictions for a dataset in the same (standardized) units as the
    /// training data. Out-of-range inputs are clamped by the spline bases.
    pub fn predict(&self, d: &Dataset) -> Result<Vec<f64>> {
        let n = d.n_rows();
        let mut out = vec![self.intercept; n];
        for t in &self.terms {
            let col = d.column(t.feature()).ok_or_else(|| {
                Error::Prediction(format!("missing feature column '{}'", t.feature()))
            })?;
            for (o, v) in out.iter_mut().zip(t.eval(&col.values)) {
                *o += v;
            }
        }
        Ok(out)
    }

    /// Deviance metrics on an evaluation set; its own label mean defines
    /// the null model.
    pub fn deviance(&self, d: &Dataset) -> Result<FitMetrics> {
        let mu = self.predict(d)?;
        let y = &d.labels;
        let ybar = mean(y);
        let dev: f64 = y.iter().zip(&mu).map(|(&a, &b)| (a - b).powi(2)).sum();
        let null_dev: f64 = y.iter().map(|&v| (v - ybar).powi(2)).sum();
        let d2 = if null_dev > 0.0 {
            Some(1.0 - dev / null_dev)
        } else {
            None
        };
        Ok(FitMetrics {
            deviance: dev,
            null_deviance: null_dev,
            d2,
            edf_total: self.total_edf,
            gcv: self.gcv,
        })
    }

    pub fn term(&self, feature: &str) -> Option<&FittedTerm> {
        self.terms.iter().find(|t| t.feature() == feature)
    }

    /// Evaluate one feature shape on an even grid over the training range.
    /// The grid is reported in original units via the stored scaling
    /// parameters; shape values stay on the label scale.
    pub fn shape(&self, feature: &str, grid_size: usize) -> Result<FeatureShape> {
        let t = self
            .term(feature)
            .ok_or_else(|| Error::Prediction(format!("unknown feature '{feature}'")))?;
        let (lo, hi) = match t {
            FittedTerm::Smooth { knots, .. } => knots.boundary,
            FittedTerm::Linear { .. } => (0.0, 1.0),
        };
        let grid_std: Vec<f64> = if grid_size == 1 {
            vec![lo]
        } else {
            (0..grid_size)
                .map(|i| lo + (hi - lo) * i as f64 / (grid_size - 1) as f64)
                .collect()
        };
        let values = t.eval(&grid_std);
        let (m, sd) = self.scaling.get(feature).unwrap_or((0.0, 1.0));
        Ok(FeatureShape {
            feature: feature.to_string(),
            grid: grid_std.iter().map(|&x| x * sd + m).collect(),
            values,
            train_shape_sd: t.train_shape_sd(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<FittedGam> {
        Ok(serde_json::from_str(s)?)
    }
}
