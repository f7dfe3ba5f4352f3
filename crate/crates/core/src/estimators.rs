//! Instrumental-variable quantile estimators for the spatial lag model
//!
//! `Q_tau(y | Wy, X) = rho_tau Wy + [b0 +] ∫ X(u) beta_tau(u) du`,
//!
//! written on FPC scores as `rho Wy + Z gamma` with `Z = [1?, Psi]`.
//! Instruments are `Lambda = [Z, W Psi, ..., W^P Psi]`.
//!
//! * [`fit_km`] substitutes reduced-form quantile fits for the response and
//!   the endogenous lag, then regresses on `Lambda H(Pi)`.
//! * [`fit_ch`] is inverse quantile regression: a grid search over `rho`
//!   for the value that zeroes the coefficient of the fitted lag.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcspace::{
    self, center, check_grid_match, fpca, reconstruct_beta, CoefficientFunction, FpcBasis,
    FunctionalDataset,
};
use crate::qrcore::{weighted_quantile_regress_with, QuantileFit, SolverOptions};
use crate::spatial::{self, knn_bisquare_weights, lag, lag_columns, Coordinates, SpatialFilter, SpatialWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Km,
    Ch,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Km => "km",
            Method::Ch => "ch",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "km" => Ok(Method::Km),
            "ch" => Ok(Method::Ch),
            other => Err(Error::InvalidInput(format!("unknown method `{other}`"))),
        }
    }
}

/// How the fitted spatial lag is produced in the first CH stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage1 {
    Ols,
    Qr,
}

/// Hyperparameters shared by both estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Response reconstruction weight of the KM estimator, in (0, 1).
    pub a: f64,
    /// Highest instrument lag `P`.
    pub lag_order: usize,
    /// Candidate `rho` values searched by the CH estimator.
    pub rho_grid: Vec<f64>,
    pub stage1: Stage1,
    /// Adds a constant column to every regression stage.
    pub intercept: bool,
    /// Evaluate CH candidates on the rayon pool.
    pub parallel_grid: bool,
    pub solver: SolverOptions,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            a: 0.5,
            lag_order: 2,
            rho_grid: default_rho_grid(),
            stage1: Stage1::Ols,
            intercept: true,
            parallel_grid: true,
            solver: SolverOptions::default(),
        }
    }
}

/// `-0.99, -0.98, ..., 0.99`.
pub fn default_rho_grid() -> Vec<f64> {
    (-99..=99).map(|k| k as f64 / 100.0).collect()
}

/// `Lambda = [Z, W Psi, ..., W^P Psi]` with `Z = [1, Psi]` or `Z = Psi`.
#[derive(Debug, Clone)]
pub struct InstrumentMatrix {
    lambda: DMatrix<f64>,
    lag_order: usize,
    m: usize,
    intercept: bool,
}

impl InstrumentMatrix {
    pub fn from_scores(
        scores: &DMatrix<f64>,
        w: &SpatialWeights,
        lag_order: usize,
        intercept: bool,
    ) -> Result<Self> {
        if lag_order < 1 {
            return Err(Error::InvalidInput("instrument lag order must be >= 1".into()));
        }
        let (n, m) = scores.shape();
        if w.n() != n {
            return Err(Error::DimensionMismatch {
                what: "weight matrix size vs score rows",
                expected: n,
                got: w.n(),
            });
        }
        let k = m + usize::from(intercept);
        let mut lambda = DMatrix::zeros(n, k + lag_order * m);
        if intercept {
            lambda.column_mut(0).fill(1.0);
        }
        lambda.columns_mut(k - m, m).copy_from(scores);
        let mut block = scores.clone();
        for p in 1..=lag_order {
            block = lag_columns(w, &block)?;
            lambda.columns_mut(k + (p - 1) * m, m).copy_from(&block);
        }
        Ok(Self {
            lambda,
            lag_order,
            m,
            intercept,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn lag_order(&self) -> usize {
        self.lag_order
    }

    pub fn order(&self) -> usize {
        self.m
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    /// Number of exogenous columns `Z` at the front of `Lambda`.
    pub fn n_exogenous(&self) -> usize {
        self.m + usize::from(self.intercept)
    }

    pub fn exogenous(&self) -> DMatrix<f64> {
        self.lambda.columns(0, self.n_exogenous()).into_owned()
    }

    /// `W^p Psi`; `p = 0` is `Psi` itself.
    pub fn block(&self, p: usize) -> DMatrix<f64> {
        let start = if p == 0 {
            usize::from(self.intercept)
        } else {
            self.n_exogenous() + (p - 1) * self.m
        };
        self.lambda.columns(start, self.m).into_owned()
    }
}

/// Instruments without a constant column, `[Psi, W Psi, ..., W^P Psi]`.
pub fn build_instruments(basis: &FpcBasis, w: &SpatialWeights, lag_order: usize) -> Result<InstrumentMatrix> {
    InstrumentMatrix::from_scores(basis.scores(), w, lag_order, false)
}

/// `H(Pi) = [Pi, [I_k; 0]]`, of shape `len(Pi) x (k + 1)`.
pub fn h_matrix(pi: &[f64], n_exogenous: usize) -> Result<DMatrix<f64>> {
    let rows = pi.len();
    if n_exogenous > rows {
        return Err(Error::DimensionMismatch {
            what: "identity block vs reduced-form length",
            expected: rows,
            got: n_exogenous,
        });
    }
    let mut h = DMatrix::zeros(rows, n_exogenous + 1);
    h.column_mut(0).copy_from(&DVector::from_column_slice(pi));
    for j in 0..n_exogenous {
        h[(j, j + 1)] = 1.0;
    }
    Ok(h)
}

/// First-stage output kept with a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Stage1Diagnostics {
    Km {
        /// Reduced-form quantile coefficients of `Wy` on `Lambda`.
        pi: Vec<f64>,
        /// Reduced-form quantile coefficients of `y` on `Lambda`.
        omega: Vec<f64>,
        pi_objective: f64,
        omega_objective: f64,
    },
    Ch {
        rho_grid: Vec<f64>,
        /// Coefficient of the fitted lag at every candidate.
        varsigma: Vec<f64>,
        /// Full stage-2 coefficient vectors `[Z coefficients..., varsigma]`.
        stage2_coeffs: Vec<Vec<f64>>,
        /// Coefficients of the first-stage projection of `Wy` on `Lambda`.
        f_star_coeffs: Vec<f64>,
        stage1: Stage1,
    },
}

/// Hyperparameters echoed into a fit artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub a: Option<f64>,
    pub lag_order: usize,
    pub rho_grid: Option<Vec<f64>>,
    pub stage1: Option<Stage1>,
    pub intercept: bool,
    #[serde(rename = "M")]
    pub m: usize,
}

/// A fitted model at one quantile level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsofqrmFit {
    pub method: Method,
    pub tau: f64,
    pub rho_hat: f64,
    /// False when `|rho_hat| >= 1`; the estimate is reported unclamped.
    pub rho_valid: bool,
    pub intercept: Option<f64>,
    pub beta_coeffs: Vec<f64>,
    pub beta_fn: CoefficientFunction,
    /// Training mean curve used to centre new curves.
    pub mean_curve: Vec<f64>,
    pub stage1: Stage1Diagnostics,
    pub final_objective: f64,
    pub converged: bool,
    pub config: ConfigEcho,
}

impl SsofqrmFit {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn validate_common(y: &[f64], basis: &FpcBasis, w: &SpatialWeights, tau: f64) -> Result<()> {
    let n = basis.scores().nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            what: "response length vs number of curves",
            expected: n,
            got: y.len(),
        });
    }
    if w.n() != n {
        return Err(Error::DimensionMismatch {
            what: "weight matrix size vs number of curves",
            expected: n,
            got: w.n(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response"));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidInput(format!("tau must lie in (0, 1), got {tau}")));
    }
    Ok(())
}

fn qr(x: &DMatrix<f64>, y: &[f64], tau: f64, weights: Option<&[f64]>, cfg: &EstimatorConfig) -> Result<QuantileFit> {
    weighted_quantile_regress_with(x, y, tau, weights, &cfg.solver)
}

fn split_exogenous(coeffs: &[f64], intercept: bool) -> (Option<f64>, Vec<f64>) {
    if intercept {
        (Some(coeffs[0]), coeffs[1..].to_vec())
    } else {
        (None, coeffs.to_vec())
    }
}

/// Reduced-form substitution estimator.
///
/// 1. `Pi` from a quantile regression of `Wy` on `Lambda`;
/// 2. `Omega` from a quantile regression of `y` on `Lambda`;
/// 3. `y* = a y + (1 - a) Lambda Omega`;
/// 4. quantile regression of `y*` on `Lambda H(Pi)` gives `(rho, gamma)`.
pub fn fit_km(
    y: &[f64],
    basis: &FpcBasis,
    w: &SpatialWeights,
    tau: f64,
    cfg: &EstimatorConfig,
) -> Result<SsofqrmFit> {
    validate_common(y, basis, w, tau)?;
    if !(cfg.a > 0.0 && cfg.a < 1.0) {
        return Err(Error::InvalidInput(format!(
            "reconstruction weight a must lie strictly inside (0, 1), got {}",
            cfg.a
        )));
    }
    let inst = InstrumentMatrix::from_scores(basis.scores(), w, cfg.lag_order, cfg.intercept)?;
    let lambda = inst.matrix();
    let wy = lag(w, y)?;

    let pi_fit = qr(lambda, &wy, tau, None, cfg)?;
    let omega_fit = qr(lambda, y, tau, None, cfg)?;
    let reduced = omega_fit.fitted(lambda);
    let y_star: Vec<f64> = y
        .iter()
        .zip(&reduced)
        .map(|(yi, fi)| cfg.a * yi + (1.0 - cfg.a) * fi)
        .collect();

    let h = h_matrix(&pi_fit.coeffs, inst.n_exogenous())?;
    let design = lambda * h;
    let alpha = qr(&design, &y_star, tau, None, cfg)?;

    let rho_hat = alpha.coeffs[0];
    let (intercept, beta_coeffs) = split_exogenous(&alpha.coeffs[1..], cfg.intercept);
    let beta_fn = reconstruct_beta(basis, &beta_coeffs)?;
    Ok(SsofqrmFit {
        method: Method::Km,
        tau,
        rho_hat,
        rho_valid: rho_hat.abs() < 1.0,
        intercept,
        beta_coeffs,
        beta_fn,
        mean_curve: basis.mean().to_vec(),
        stage1: Stage1Diagnostics::Km {
            pi: pi_fit.coeffs,
            omega: omega_fit.coeffs,
            pi_objective: pi_fit.objective,
            omega_objective: omega_fit.objective,
        },
        final_objective: alpha.objective,
        converged: pi_fit.converged && omega_fit.converged && alpha.converged,
        config: ConfigEcho {
            a: Some(cfg.a),
            lag_order: cfg.lag_order,
            rho_grid: None,
            stage1: None,
            intercept: cfg.intercept,
            m: basis.order(),
        },
    })
}

/// Inverse quantile regression estimator with unit weights.
pub fn fit_ch(
    y: &[f64],
    basis: &FpcBasis,
    w: &SpatialWeights,
    tau: f64,
    cfg: &EstimatorConfig,
) -> Result<SsofqrmFit> {
    fit_ch_weighted(y, basis, w, tau, cfg, None)
}

/// Inverse quantile regression estimator.
///
/// 1. `f*` = fitted values of `Wy` on `Lambda` (least squares or QR);
/// 2. for every candidate `rho_l`, regress `y - rho_l Wy` on `[Z, f*]` and
///    record the coefficient `varsigma(rho_l)` of `f*`;
/// 3. `rho_hat = argmin |varsigma|`, lowest grid index on ties;
/// 4. regress `y - rho_hat Wy` on `Z`.
///
/// `weights` are the optional positive observation weights of the stage-2
/// regressions.
pub fn fit_ch_weighted(
    y: &[f64],
    basis: &FpcBasis,
    w: &SpatialWeights,
    tau: f64,
    cfg: &EstimatorConfig,
    weights: Option<&[f64]>,
) -> Result<SsofqrmFit> {
    validate_common(y, basis, w, tau)?;
    if cfg.rho_grid.is_empty() {
        return Err(Error::InvalidInput("rho grid is empty".into()));
    }
    if let Some(bad) = cfg.rho_grid.iter().find(|r| !(r.abs() < 1.0)) {
        return Err(Error::InvalidInput(format!(
            "rho grid values must satisfy |rho| < 1, got {bad}"
        )));
    }
    let inst = InstrumentMatrix::from_scores(basis.scores(), w, cfg.lag_order, cfg.intercept)?;
    let lambda = inst.matrix();
    let wy = lag(w, y)?;

    let f_star_coeffs = match cfg.stage1 {
        Stage1::Ols => ols(lambda, &wy)?,
        Stage1::Qr => qr(lambda, &wy, tau, None, cfg)?.coeffs,
    };
    let f_star = lambda * DVector::from_column_slice(&f_star_coeffs);

    let z = inst.exogenous();
    let k = z.ncols();
    let mut design = DMatrix::zeros(z.nrows(), k + 1);
    design.columns_mut(0, k).copy_from(&z);
    design.column_mut(k).copy_from(&f_star);

    let solve_at = |rho: f64| -> Result<Vec<f64>> {
        let filtered: Vec<f64> = y.iter().zip(&wy).map(|(a, b)| a - rho * b).collect();
        Ok(qr(&design, &filtered, tau, weights, cfg)?.coeffs)
    };
    let stage2: Vec<Vec<f64>> = if cfg.parallel_grid {
        cfg.rho_grid
            .par_iter()
            .map(|&r| solve_at(r))
            .collect::<Result<Vec<_>>>()?
    } else {
        cfg.rho_grid
            .iter()
            .map(|&r| solve_at(r))
            .collect::<Result<Vec<_>>>()?
    };
    let varsigma: Vec<f64> = stage2.iter().map(|c| c[k]).collect();
    let best = varsigma
        .iter()
        .enumerate()
        .fold(0, |best, (l, v)| if v.abs() < varsigma[best].abs() { l } else { best });
    let rho_hat = cfg.rho_grid[best];

    let filtered: Vec<f64> = y.iter().zip(&wy).map(|(a, b)| a - rho_hat * b).collect();
    let final_fit = qr(&z, &filtered, tau, None, cfg)?;
    let (intercept, beta_coeffs) = split_exogenous(&final_fit.coeffs, cfg.intercept);
    let beta_fn = reconstruct_beta(basis, &beta_coeffs)?;
    Ok(SsofqrmFit {
        method: Method::Ch,
        tau,
        rho_hat,
        rho_valid: rho_hat.abs() < 1.0,
        intercept,
        beta_coeffs,
        beta_fn,
        mean_curve: basis.mean().to_vec(),
        stage1: Stage1Diagnostics::Ch {
            rho_grid: cfg.rho_grid.clone(),
            varsigma,
            stage2_coeffs: stage2,
            f_star_coeffs,
            stage1: cfg.stage1,
        },
        final_objective: final_fit.objective,
        converged: final_fit.converged,
        config: ConfigEcho {
            a: None,
            lag_order: cfg.lag_order,
            rho_grid: Some(cfg.rho_grid.clone()),
            stage1: Some(cfg.stage1),
            intercept: cfg.intercept,
            m: basis.order(),
        },
    })
}

/// Dispatches on `method`.
pub fn fit(
    method: Method,
    y: &[f64],
    basis: &FpcBasis,
    w: &SpatialWeights,
    tau: f64,
    cfg: &EstimatorConfig,
) -> Result<SsofqrmFit> {
    match method {
        Method::Km => fit_km(y, basis, w, tau, cfg),
        Method::Ch => fit_ch(y, basis, w, tau, cfg),
    }
}

fn ols(x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(Error::RankDeficient { ratio: smin / smax });
    }
    let b = svd
        .solve(&DVector::from_column_slice(y), 0.0)
        .map_err(|e| Error::Singular(e.to_string()))?;
    Ok(b.iter().copied().collect())
}

/// `[b0 +] ∫ (X_new(u) - mean(u)) beta(u) du` for every new curve.
pub fn linear_predictor(fit: &SsofqrmFit, new_curves: &FunctionalDataset) -> Result<Vec<f64>> {
    check_grid_match(&fit.beta_fn.grid, new_curves.grid())?;
    let weights = funcspace::quad_weights(new_curves.grid())?;
    let mut centered = new_curves.values().clone();
    if !new_curves.is_centered() {
        for mut row in centered.row_iter_mut() {
            for (v, m) in row.iter_mut().zip(&fit.mean_curve) {
                *v -= m;
            }
        }
    }
    let b0 = fit.intercept.unwrap_or(0.0);
    Ok(funcspace::functional_inner_products(&weights, &centered, &fit.beta_fn.values)
        .into_iter()
        .map(|v| v + b0)
        .collect())
}

/// `(I - rho_hat W_new)^{-1} [b0 + ∫ X_new beta_hat]`.
pub fn predict(fit: &SsofqrmFit, new_curves: &FunctionalDataset, w_new: &SpatialWeights) -> Result<Vec<f64>> {
    if w_new.n() != new_curves.n_curves() {
        return Err(Error::DimensionMismatch {
            what: "test weight matrix size vs number of new curves",
            expected: new_curves.n_curves(),
            got: w_new.n(),
        });
    }
    if !fit.rho_valid || !(fit.rho_hat.abs() < 1.0) {
        return Err(Error::InvalidInput(format!(
            "cannot predict with |rho_hat| >= 1 (rho_hat = {})",
            fit.rho_hat
        )));
    }
    let eta = linear_predictor(fit, new_curves)?;
    spatial::spatial_filter_solve(w_new, fit.rho_hat, &eta)
}

/// Same as [`predict`] but reuses a factorised filter for `W_new`.
pub fn predict_with_filter(fit: &SsofqrmFit, new_curves: &FunctionalDataset, filter: &SpatialFilter) -> Result<Vec<f64>> {
    if filter.rho() != fit.rho_hat {
        return Err(Error::InvalidInput("filter built for a different rho".into()));
    }
    let eta = linear_predictor(fit, new_curves)?;
    filter.solve(&eta)
}

/// Prediction interval from a pair of quantile fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Points where the raw quantile predictions crossed and were swapped.
    pub crossed: Vec<bool>,
    pub tau_pair: (f64, f64),
    pub nominal: f64,
}

impl PredictionInterval {
    /// Orders each pair of endpoints, flagging swapped points.
    pub fn from_endpoints(lo: Vec<f64>, hi: Vec<f64>, tau_pair: (f64, f64)) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                what: "interval endpoint lengths",
                expected: lo.len(),
                got: hi.len(),
            });
        }
        let mut lower = lo;
        let mut upper = hi;
        let mut crossed = vec![false; lower.len()];
        for i in 0..lower.len() {
            if upper[i] < lower[i] {
                std::mem::swap(&mut lower[i], &mut upper[i]);
                crossed[i] = true;
            }
        }
        Ok(Self {
            lower,
            upper,
            crossed,
            tau_pair,
            nominal: tau_pair.1 - tau_pair.0,
        })
    }
}

fn check_interval_pair(lo: &SsofqrmFit, hi: &SsofqrmFit) -> Result<()> {
    if !(lo.tau < hi.tau) {
        return Err(Error::InvalidInput(format!(
            "lower fit must have the smaller tau (got {} and {})",
            lo.tau, hi.tau
        )));
    }
    if lo.method != hi.method {
        return Err(Error::InvalidInput("interval fits use different methods".into()));
    }
    if lo.beta_coeffs.len() != hi.beta_coeffs.len() {
        return Err(Error::InvalidInput("interval fits use different bases".into()));
    }
    check_grid_match(&lo.beta_fn.grid, &hi.beta_fn.grid)?;
    Ok(())
}

pub fn prediction_interval(
    fit_lo: &SsofqrmFit,
    fit_hi: &SsofqrmFit,
    new_curves: &FunctionalDataset,
    w_new: &SpatialWeights,
) -> Result<PredictionInterval> {
    check_interval_pair(fit_lo, fit_hi)?;
    let lo = predict(fit_lo, new_curves, w_new)?;
    let hi = predict(fit_hi, new_curves, w_new)?;
    PredictionInterval::from_endpoints(lo, hi, (fit_lo.tau, fit_hi.tau))
}

/// Chooses the KNN neighbour count by K-fold cross-validated MSPE of a
/// median KM pilot fit. Folds are assigned as `i mod folds`; every fold
/// builds its own training and test weight matrices with `h` capped at the
/// fold size minus one. Returns the chosen `h` and the CV curve.
pub fn select_knn_neighbors(
    coords: &Coordinates,
    curves: &FunctionalDataset,
    y: &[f64],
    h_grid: &[usize],
    folds: usize,
    variance_target: f64,
    cfg: &EstimatorConfig,
) -> Result<(usize, Vec<f64>)> {
    let n = curves.n_curves();
    if coords.len() != n || y.len() != n {
        return Err(Error::DimensionMismatch {
            what: "coordinates/response vs curves",
            expected: n,
            got: coords.len().min(y.len()),
        });
    }
    if h_grid.is_empty() {
        return Err(Error::InvalidInput("neighbour grid is empty".into()));
    }
    if folds < 2 || folds > n / 2 {
        return Err(Error::InvalidInput(format!(
            "fold count must lie in [2, n/2], got {folds}"
        )));
    }
    let mut scores = Vec::with_capacity(h_grid.len());
    for &h in h_grid {
        let mut sq = 0.0;
        for f in 0..folds {
            let test: Vec<usize> = (0..n).filter(|i| i % folds == f).collect();
            let train: Vec<usize> = (0..n).filter(|i| i % folds != f).collect();
            let train_curves = center(&curves.select_rows(&train))?;
            let basis = fpca(&train_curves, variance_target)?;
            let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let w_train = knn_bisquare_weights(&coords.select(&train), h.min(train.len() - 1))?;
            let fit = fit_km(&y_train, &basis, &w_train, 0.5, cfg)?;
            let w_test = knn_bisquare_weights(&coords.select(&test), h.min(test.len() - 1))?;
            let pred = predict(&fit, &curves.select_rows(&test), &w_test)?;
            sq += test.iter().zip(&pred).map(|(&i, p)| (y[i] - p).powi(2)).sum::<f64>();
        }
        scores.push(sq / n as f64);
    }
    let best = scores
        .iter()
        .enumerate()
        .fold(0, |b, (k, v)| if *v < scores[b] { k } else { b });
    Ok((h_grid[best], scores))
}
