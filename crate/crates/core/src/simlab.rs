//! Simulation laboratory: the functional spatial data-generating process,
//! outlier contamination, evaluation metrics and a seeded Monte Carlo runner.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{self, EstimatorConfig, Method, PredictionInterval};
use crate::funcspace::{self, center, check_grid_match, fpca, CoefficientFunction, FunctionalDataset};
use crate::spatial::{grid_inverse_distance_weights, SpatialFilter, SpatialWeights};

/// Mean function of the simulated predictor curves.
pub fn beta_x(u: f64) -> f64 {
    (2.0 * std::f64::consts::PI * u).cos() - (u - 0.5).powi(2)
}

/// `cos(2 pi u) + sin(4 pi u) / 2`.
pub fn oscillating_beta(u: f64) -> f64 {
    let tau = 2.0 * std::f64::consts::PI;
    (tau * u).cos() + 0.5 * (2.0 * tau * u).sin()
}

/// Named true coefficient functions.
///
/// The predictor curves are dominated by a random level shift, so the
/// leading principal component is close to a constant and usually the only
/// one kept at a 95% variance target. `Constant` lies in that span and keeps
/// the spatial parameter identified. `Oscillating` integrates to zero: it is
/// almost orthogonal to the retained component, leaving the instruments
/// nearly irrelevant. `Shifted` is `1 + oscillating`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaPreset {
    Constant,
    Oscillating,
    Shifted,
}

impl BetaPreset {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            BetaPreset::Constant => 1.0,
            BetaPreset::Oscillating => oscillating_beta(u),
            BetaPreset::Shifted => 1.0 + oscillating_beta(u),
        }
    }
}

/// True coefficient function of a study: a preset name or grid values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSpec {
    Preset(BetaPreset),
    Values(Vec<f64>),
}

impl Default for BetaSpec {
    fn default() -> Self {
        BetaSpec::Preset(BetaPreset::Constant)
    }
}

impl BetaSpec {
    pub fn on_grid(&self, grid: &[f64]) -> Result<CoefficientFunction> {
        match self {
            BetaSpec::Preset(p) => CoefficientFunction::from_fn(grid, |u| p.eval(u)),
            BetaSpec::Values(v) => {
                if v.len() != grid.len() {
                    return Err(Error::DimensionMismatch {
                        what: "beta_true length vs grid size",
                        expected: grid.len(),
                        got: v.len(),
                    });
                }
                CoefficientFunction::new(grid.to_vec(), v.clone())
            }
        }
    }
}

/// Uniform grid of `t` points on [0, 1].
pub fn uniform_grid(t: usize) -> Result<Vec<f64>> {
    if t < 2 {
        return Err(Error::InvalidInput(format!("grid needs at least 2 points, got {t}")));
    }
    Ok((0..t).map(|k| k as f64 / (t - 1) as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub n: usize,
    pub n_test: usize,
    pub rho0: f64,
    pub sigma_x2: f64,
    pub theta_x: f64,
    pub grid_size: usize,
    pub contamination_level: f64,
    pub outlier_mean: f64,
    pub outlier_sd: f64,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n: 100,
            n_test: 1000,
            rho0: 0.5,
            sigma_x2: 1.0,
            theta_x: 1.0 / 37.0,
            grid_size: 101,
            contamination_level: 0.0,
            outlier_mean: 5.0,
            outlier_sd: 0.1,
            seed: 1,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidInput(format!("n must be at least 2, got {}", self.n)));
        }
        if !(self.rho0.abs() < 1.0) {
            return Err(Error::InvalidInput(format!("rho0 must satisfy |rho0| < 1, got {}", self.rho0)));
        }
        if !(self.sigma_x2 > 0.0) {
            return Err(Error::InvalidInput("sigma_x2 must be positive".into()));
        }
        if !(self.theta_x > 0.0) {
            return Err(Error::InvalidInput("theta_x must be positive".into()));
        }
        check_level(self.contamination_level)?;
        if !(self.outlier_sd >= 0.0) || !self.outlier_mean.is_finite() {
            return Err(Error::InvalidInput("invalid outlier distribution".into()));
        }
        uniform_grid(self.grid_size).map(|_| ())
    }
}

fn check_level(level: f64) -> Result<()> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::InvalidInput(format!(
            "contamination level must lie in [0, 1), got {level}"
        )));
    }
    Ok(())
}

/// `sigma^2 / (2 theta) exp(-theta |u - v|)` on a grid.
pub fn ou_covariance(grid: &[f64], sigma2: f64, theta: f64) -> Result<DMatrix<f64>> {
    if !(theta > 0.0) {
        return Err(Error::InvalidInput(format!("theta must be positive, got {theta}")));
    }
    let scale = sigma2 / (2.0 * theta);
    Ok(DMatrix::from_fn(grid.len(), grid.len(), |i, j| {
        scale * (-theta * (grid[i] - grid[j]).abs()).exp()
    }))
}

/// Draws curves `mean(u) + e(u)` with `e` a Gaussian process, using the
/// symmetric square root of the covariance matrix.
#[derive(Debug, Clone)]
pub struct GpSampler {
    grid: Vec<f64>,
    mean: Vec<f64>,
    root: DMatrix<f64>,
}

impl GpSampler {
    pub fn new(grid: Vec<f64>, mean: Vec<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        if mean.len() != grid.len() || cov.nrows() != grid.len() || cov.ncols() != grid.len() {
            return Err(Error::DimensionMismatch {
                what: "covariance size vs grid",
                expected: grid.len(),
                got: cov.nrows(),
            });
        }
        let eig = SymmetricEigen::new(cov.clone());
        let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let root = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
        Ok(Self { grid, mean, root })
    }

    /// Sampler for the simulation design of `cfg`.
    pub fn for_config(cfg: &DgpConfig) -> Result<Self> {
        let grid = uniform_grid(cfg.grid_size)?;
        let cov = ou_covariance(&grid, cfg.sigma_x2, cfg.theta_x)?;
        let mean = grid.iter().map(|&u| beta_x(u)).collect();
        Self::new(grid, mean, &cov)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<FunctionalDataset> {
        let t = self.grid.len();
        let z = DMatrix::from_fn(t, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut values = (&self.root * z).transpose();
        for mut row in values.row_iter_mut() {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        FunctionalDataset::new(self.grid.clone(), values)
    }
}

/// `cfg.n` predictor curves from the seed stored in `cfg`.
pub fn gen_predictors(cfg: &DgpConfig) -> Result<FunctionalDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    GpSampler::for_config(cfg)?.sample(cfg.n, &mut rng)
}

/// A simulated response with its components kept for contamination.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseDraw {
    /// `∫ X_i beta`.
    pub signal: Vec<f64>,
    pub noise: Vec<f64>,
    pub rho0: f64,
    pub y: Vec<f64>,
}

/// `(I - rho0 W)^{-1} (∫ X beta + noise)` with the given noise vector.
pub fn gen_response_with_noise(
    x: &FunctionalDataset,
    beta_true: &CoefficientFunction,
    w: &SpatialWeights,
    rho0: f64,
    noise: &[f64],
) -> Result<ResponseDraw> {
    check_grid_match(x.grid(), &beta_true.grid)?;
    if noise.len() != x.n_curves() {
        return Err(Error::DimensionMismatch {
            what: "noise length vs number of curves",
            expected: x.n_curves(),
            got: noise.len(),
        });
    }
    if !(rho0.abs() < 1.0) {
        return Err(Error::InvalidInput(format!("rho0 must satisfy |rho0| < 1, got {rho0}")));
    }
    let weights = funcspace::quad_weights(x.grid())?;
    let signal = funcspace::functional_inner_products(&weights, x.values(), &beta_true.values);
    let rhs: Vec<f64> = signal.iter().zip(noise).map(|(s, e)| s + e).collect();
    let y = SpatialFilter::new(w, rho0)?.solve(&rhs)?;
    Ok(ResponseDraw {
        signal,
        noise: noise.to_vec(),
        rho0,
        y,
    })
}

/// Response with standard normal noise drawn from `seed`.
pub fn gen_response(
    x: &FunctionalDataset,
    beta_true: &CoefficientFunction,
    w: &SpatialWeights,
    rho0: f64,
    seed: u64,
) -> Result<ResponseDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..x.n_curves()).map(|_| rng.sample(StandardNormal)).collect();
    gen_response_with_noise(x, beta_true, w, rho0, &noise)
}

/// Replaces the noise of `floor(n * level)` uniformly chosen observations by
/// `N(outlier_mean, outlier_sd)` draws and pushes the result back through
/// the spatial filter. Returns the new response and the sorted outlier indices.
pub fn contaminate<R: Rng + ?Sized>(
    draw: &ResponseDraw,
    w: &SpatialWeights,
    level: f64,
    outlier_mean: f64,
    outlier_sd: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<usize>)> {
    check_level(level)?;
    let n = draw.y.len();
    let count = (n as f64 * level).floor() as usize;
    if count == 0 {
        return Ok((draw.y.clone(), Vec::new()));
    }
    let outlier = Normal::new(outlier_mean, outlier_sd).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut idx = sample(rng, n, count).into_vec();
    idx.sort_unstable();
    let mut noise = draw.noise.clone();
    for &i in &idx {
        noise[i] = rng.sample(outlier);
    }
    let rhs: Vec<f64> = draw.signal.iter().zip(&noise).map(|(s, e)| s + e).collect();
    let y = SpatialFilter::new(w, draw.rho0)?.solve(&rhs)?;
    Ok((y, idx))
}

/// `∫ (beta_hat - beta)^2` by trapezoid quadrature.
pub fn imse(beta_hat: &CoefficientFunction, beta_true: &CoefficientFunction) -> Result<f64> {
    check_grid_match(&beta_true.grid, &beta_hat.grid)?;
    let weights = funcspace::quad_weights(&beta_true.grid)?;
    let diff: Vec<f64> = beta_hat.values.iter().zip(&beta_true.values).map(|(a, b)| a - b).collect();
    Ok(funcspace::inner_product(&weights, &diff, &diff))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

fn need_two(estimates: &[f64]) -> Result<()> {
    if estimates.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least two estimates, got {}",
            estimates.len()
        )));
    }
    Ok(())
}

/// `sqrt(Var + Bias^2)` with the `R - 1` divisor variance.
pub fn rmse_rho(estimates: &[f64], rho0: f64) -> Result<f64> {
    need_two(estimates)?;
    let bias = mean(estimates) - rho0;
    Ok((sample_variance(estimates) + bias * bias).sqrt())
}

/// Variant that plugs the standard deviation in place of the variance.
pub fn rmse_rho_paper_literal(estimates: &[f64], rho0: f64) -> Result<f64> {
    need_two(estimates)?;
    let bias = mean(estimates) - rho0;
    Ok((sample_variance(estimates).sqrt() + bias * bias).sqrt())
}

fn same_len(a: usize, b: usize, what: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { what, expected: a, got: b });
    }
    if a == 0 {
        return Err(Error::InvalidInput(format!("{what}: empty input")));
    }
    Ok(())
}

pub fn mspe(pred: &[f64], actual: &[f64]) -> Result<f64> {
    same_len(pred.len(), actual.len(), "predictions vs actuals")?;
    Ok(pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum::<f64>() / pred.len() as f64)
}

fn check_interval(lower: &[f64], upper: &[f64], actual: &[f64]) -> Result<()> {
    same_len(lower.len(), upper.len(), "interval endpoints")?;
    same_len(lower.len(), actual.len(), "interval vs actuals")?;
    if lower.iter().zip(upper).any(|(l, u)| l > u) {
        return Err(Error::InvalidInput("interval with lower > upper".into()));
    }
    Ok(())
}

/// Fraction of actuals inside the closed intervals.
pub fn coverage(lower: &[f64], upper: &[f64], actual: &[f64]) -> Result<f64> {
    check_interval(lower, upper, actual)?;
    let hits = actual
        .iter()
        .zip(lower.iter().zip(upper))
        .filter(|&(&y, (&l, &u))| l <= y && y <= u)
        .count();
    Ok(hits as f64 / actual.len() as f64)
}

/// `|nominal - coverage|`.
pub fn cpd(lower: &[f64], upper: &[f64], actual: &[f64], nominal: f64) -> Result<f64> {
    Ok((nominal - coverage(lower, upper, actual)?).abs())
}

/// Mean of `|(u - l) + 2/alpha (l - y) 1(y < l) + 2/alpha (y - u) 1(y > u)|`.
pub fn interval_score(lower: &[f64], upper: &[f64], actual: &[f64], alpha: f64) -> Result<f64> {
    check_interval(lower, upper, actual)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let k = 2.0 / alpha;
    let total: f64 = actual
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(&y, (&l, &u))| {
            let mut s = u - l;
            if y < l {
                s += k * (l - y);
            }
            if y > u {
                s += k * (y - u);
            }
            s.abs()
        })
        .sum();
    Ok(total / actual.len() as f64)
}

/// Upper trimmed mean: drops the `floor(trim * R)` largest values and returns
/// the mean and standard error of the rest.
pub fn trimmed_mean(values: &[f64], trim: f64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidInput("trimmed mean of an empty set".into()));
    }
    if !(0.0..1.0).contains(&trim) {
        return Err(Error::InvalidInput(format!("trim must lie in [0, 1), got {trim}")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("trimmed mean input"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let drop = (trim * values.len() as f64).floor() as usize;
    let kept = &sorted[..values.len() - drop];
    let m = mean(kept);
    let se = if kept.len() < 2 {
        0.0
    } else {
        (sample_variance(kept) / kept.len() as f64).sqrt()
    };
    Ok((m, se))
}

/// Median of a nonempty slice (average of the middle pair for even sizes).
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("median of an empty set".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    Ok(if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    })
}

/// Monte Carlo study definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub rho0: Vec<f64>,
    pub n: Vec<usize>,
    pub cl: Vec<f64>,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub seed: u64,
    /// Size of the independent test sample; 0 skips prediction metrics.
    pub n_test: usize,
    pub grid_size: usize,
    pub sigma_x2: f64,
    pub theta_x: f64,
    pub outlier_mean: f64,
    pub outlier_sd: f64,
    pub variance_target: f64,
    pub tau: f64,
    pub tau_pair: (f64, f64),
    pub intervals: bool,
    /// Contaminate the test responses at the scenario's level as well.
    pub contaminate_test: bool,
    pub trim: f64,
    pub beta_true: BetaSpec,
    pub paper_literal_rmse: bool,
    pub estimator: EstimatorConfig,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            rho0: vec![0.1, 0.5, 0.9],
            n: vec![50, 100, 250, 500],
            cl: vec![0.0, 0.05, 0.1],
            methods: vec![Method::Km, Method::Ch],
            replications: 500,
            seed: 1,
            n_test: 1000,
            grid_size: 101,
            sigma_x2: 1.0,
            theta_x: 1.0 / 37.0,
            outlier_mean: 5.0,
            outlier_sd: 0.1,
            variance_target: 0.95,
            tau: 0.5,
            tau_pair: (0.025, 0.975),
            intervals: true,
            contaminate_test: true,
            trim: 0.2,
            beta_true: BetaSpec::default(),
            paper_literal_rmse: false,
            estimator: EstimatorConfig::default(),
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::InvalidInput("at least two replications are required".into()));
        }
        if self.rho0.is_empty() || self.n.is_empty() || self.cl.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidInput("every scenario axis needs at least one value".into()));
        }
        for &n in &self.n {
            self.dgp(n, self.rho0[0], 0.0).validate()?;
            if n < 10 {
                return Err(Error::InvalidInput(format!("training size {n} is too small")));
            }
        }
        for &r in &self.rho0 {
            if !(r.abs() < 1.0) {
                return Err(Error::InvalidInput(format!("rho0 must satisfy |rho0| < 1, got {r}")));
            }
        }
        for &c in &self.cl {
            check_level(c)?;
        }
        if self.n_test == 1 {
            return Err(Error::InvalidInput("n_test must be 0 or at least 2".into()));
        }
        let (lo, hi) = self.tau_pair;
        if !(0.0 < lo && lo < hi && hi < 1.0) || !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidInput("quantile levels must satisfy 0 < tau1 < tau2 < 1".into()));
        }
        if !(self.variance_target > 0.0 && self.variance_target <= 1.0) {
            return Err(Error::InvalidInput("variance target must lie in (0, 1]".into()));
        }
        self.beta_true_fn()?;
        if !(0.0..1.0).contains(&self.trim) {
            return Err(Error::InvalidInput("trim must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn dgp(&self, n: usize, rho0: f64, cl: f64) -> DgpConfig {
        DgpConfig {
            n,
            n_test: self.n_test,
            rho0,
            sigma_x2: self.sigma_x2,
            theta_x: self.theta_x,
            grid_size: self.grid_size,
            contamination_level: cl,
            outlier_mean: self.outlier_mean,
            outlier_sd: self.outlier_sd,
            seed: self.seed,
        }
    }

    pub fn beta_true_fn(&self) -> Result<CoefficientFunction> {
        self.beta_true.on_grid(&uniform_grid(self.grid_size)?)
    }

    /// Data scenarios in report order: rho0, then n, then contamination level.
    pub fn scenarios(&self) -> Vec<(f64, usize, f64)> {
        let mut out = Vec::new();
        for &r in &self.rho0 {
            for &n in &self.n {
                for &c in &self.cl {
                    out.push((r, n, c));
                }
            }
        }
        out
    }
}

/// Metrics of one method in one replication; `None` marks a failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub rho_hat: Option<f64>,
    pub imse: Option<f64>,
    pub mspe: Option<f64>,
    pub cpd: Option<f64>,
    pub interval_score: Option<f64>,
    pub crossed: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub method: Method,
    pub rho0: f64,
    pub n: usize,
    pub cl: f64,
    pub records: Vec<ReplicationRecord>,
}

impl ScenarioResult {
    /// Valid `rho_hat` values, in replication order.
    pub fn rho_hats(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.rho_hat).collect()
    }

    pub fn values(&self, metric: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| match metric {
                "imse" => r.imse,
                "mspe" => r.mspe,
                "cpd" => r.cpd,
                "interval_score" => r.interval_score,
                "rho_abs_error" => r.rho_hat.map(|v| (v - self.rho0).abs()),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub method: Method,
    pub rho0: f64,
    pub n: usize,
    pub cl: f64,
    pub metric: String,
    pub trimmed_mean: f64,
    pub stderr: f64,
    pub n_valid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub config: McConfig,
    pub beta_true: CoefficientFunction,
    pub rows: Vec<McRow>,
    pub scenarios: Vec<ScenarioResult>,
}

impl McReport {
    pub fn row(&self, method: Method, rho0: f64, n: usize, cl: f64, metric: &str) -> Option<&McRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.rho0 == rho0 && r.n == n && r.cl == cl && r.metric == metric)
    }

    pub fn scenario(&self, method: Method, rho0: f64, n: usize, cl: f64) -> Option<&ScenarioResult> {
        self.scenarios
            .iter()
            .find(|s| s.method == method && s.rho0 == rho0 && s.n == n && s.cl == cl)
    }

    /// Summary CSV, `method,rho0,n,cl,metric,trimmed_mean,stderr,n_valid`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,rho0,n,cl,metric,trimmed_mean,stderr,n_valid\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.method.as_str(),
                r.rho0,
                r.n,
                r.cl,
                r.metric,
                r.trimmed_mean,
                r.stderr,
                r.n_valid
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Metric rows reported per scenario and method.
pub const REPORT_METRICS: [&str; 5] = ["imse", "rmse_rho", "mspe", "cpd", "interval_score"];

/// Independent RNG for replication `rep` of data scenario `scenario`.
pub fn replication_rng(master: u64, scenario: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((scenario as u64) << 32) | rep as u64);
    rng
}

struct Shared {
    sampler: GpSampler,
    beta_true: CoefficientFunction,
    test_w: Option<Arc<SpatialWeights>>,
}

struct TestSample {
    curves: FunctionalDataset,
    y: Vec<f64>,
}

fn run_replication(
    cfg: &McConfig,
    shared: &Shared,
    w: &SpatialWeights,
    (rho0, n, cl): (f64, usize, f64),
    scenario: usize,
    rep: usize,
) -> Vec<ReplicationRecord> {
    let failed = |msg: String| ReplicationRecord {
        rep,
        rho_hat: None,
        imse: None,
        mspe: None,
        cpd: None,
        interval_score: None,
        crossed: 0,
        error: Some(msg),
    };
    let data = (|| -> Result<(FunctionalDataset, Vec<f64>, Option<TestSample>)> {
        let mut rng = replication_rng(cfg.seed, scenario, rep);
        let x = shared.sampler.sample(n, &mut rng)?;
        let noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let draw = gen_response_with_noise(&x, &shared.beta_true, w, rho0, &noise)?;
        let (y, _) = contaminate(&draw, w, cl, cfg.outlier_mean, cfg.outlier_sd, &mut rng)?;
        let test = match &shared.test_w {
            Some(tw) => {
                let curves = shared.sampler.sample(cfg.n_test, &mut rng)?;
                let noise: Vec<f64> = (0..cfg.n_test).map(|_| rng.sample(StandardNormal)).collect();
                let draw = gen_response_with_noise(&curves, &shared.beta_true, tw, rho0, &noise)?;
                let y = if cfg.contaminate_test {
                    contaminate(&draw, tw, cl, cfg.outlier_mean, cfg.outlier_sd, &mut rng)?.0
                } else {
                    draw.y
                };
                Some(TestSample { curves, y })
            }
            None => None,
        };
        Ok((x, y, test))
    })();
    let (x, y, test) = match data {
        Ok(d) => d,
        Err(e) => return cfg.methods.iter().map(|_| failed(e.to_string())).collect(),
    };
    let basis = match center(&x).and_then(|c| fpca(&c, cfg.variance_target)) {
        Ok(b) => b,
        Err(e) => return cfg.methods.iter().map(|_| failed(e.to_string())).collect(),
    };

    cfg.methods
        .iter()
        .map(|&method| {
            let mut rec = ReplicationRecord {
                rep,
                rho_hat: None,
                imse: None,
                mspe: None,
                cpd: None,
                interval_score: None,
                crossed: 0,
                error: None,
            };
            let fit = match estimators::fit(method, &y, &basis, w, cfg.tau, &cfg.estimator) {
                Ok(f) => f,
                Err(e) => return failed(e.to_string()),
            };
            rec.imse = imse(&fit.beta_fn, &shared.beta_true).ok();
            if !fit.rho_valid {
                rec.error = Some(format!("rho_hat = {} outside (-1, 1)", fit.rho_hat));
                return rec;
            }
            rec.rho_hat = Some(fit.rho_hat);
            let (Some(test), Some(tw)) = (&test, &shared.test_w) else {
                return rec;
            };
            match estimators::predict(&fit, &test.curves, tw).and_then(|p| mspe(&p, &test.y)) {
                Ok(v) => rec.mspe = Some(v),
                Err(e) => rec.error = Some(e.to_string()),
            }
            if cfg.intervals {
                let interval = (|| -> Result<PredictionInterval> {
                    let lo = estimators::fit(method, &y, &basis, w, cfg.tau_pair.0, &cfg.estimator)?;
                    let hi = estimators::fit(method, &y, &basis, w, cfg.tau_pair.1, &cfg.estimator)?;
                    estimators::prediction_interval(&lo, &hi, &test.curves, tw)
                })();
                match interval {
                    Ok(pi) => {
                        let nominal = cfg.tau_pair.1 - cfg.tau_pair.0;
                        rec.crossed = pi.crossed.iter().filter(|c| **c).count();
                        rec.cpd = cpd(&pi.lower, &pi.upper, &test.y, nominal).ok();
                        rec.interval_score = interval_score(&pi.lower, &pi.upper, &test.y, 1.0 - nominal).ok();
                    }
                    Err(e) => rec.error = Some(e.to_string()),
                }
            }
            rec
        })
        .collect()
}

/// Runs every scenario of `cfg` on a pool of `workers` threads.
///
/// Each replication owns an RNG stream derived from the master seed, the
/// data-scenario index and the replication index, and all methods share the
/// replication's data. Results are gathered in scenario and replication
/// order, so the report does not depend on the schedule.
pub fn run_mc(cfg: &McConfig, workers: usize) -> Result<McReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot build worker pool: {e}")))?;
    let beta_true = cfg.beta_true_fn()?;
    let sampler = GpSampler::for_config(&cfg.dgp(cfg.n[0], cfg.rho0[0], 0.0))?;
    let test_w = if cfg.n_test >= 2 {
        Some(Arc::new(grid_inverse_distance_weights(cfg.n_test)?))
    } else {
        None
    };
    let shared = Shared {
        sampler,
        beta_true: beta_true.clone(),
        test_w,
    };
    let scenarios = cfg.scenarios();
    let mut train_w = std::collections::BTreeMap::new();
    for &n in &cfg.n {
        train_w.insert(n, grid_inverse_distance_weights(n)?);
    }

    let tasks: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|s| (0..cfg.replications).map(move |r| (s, r)))
        .collect();
    let per_task: Vec<Vec<ReplicationRecord>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(s, r)| {
                let sc = scenarios[s];
                run_replication(cfg, &shared, &train_w[&sc.1], sc, s, r)
            })
            .collect()
    });

    let mut results = Vec::new();
    let mut rows = Vec::new();
    for (s, &(rho0, n, cl)) in scenarios.iter().enumerate() {
        let block = &per_task[s * cfg.replications..(s + 1) * cfg.replications];
        for (k, &method) in cfg.methods.iter().enumerate() {
            let result = ScenarioResult {
                method,
                rho0,
                n,
                cl,
                records: block.iter().map(|recs| recs[k].clone()).collect(),
            };
            rows.extend(summarize(cfg, &result));
            results.push(result);
        }
    }
    Ok(McReport {
        config: cfg.clone(),
        beta_true,
        rows,
        scenarios: results,
    })
}

fn summarize(cfg: &McConfig, res: &ScenarioResult) -> Vec<McRow> {
    REPORT_METRICS
        .iter()
        .map(|&metric| {
            let (value, se, n_valid) = if metric == "rmse_rho" {
                let est = res.rho_hats();
                let v = if cfg.paper_literal_rmse {
                    rmse_rho_paper_literal(&est, res.rho0)
                } else {
                    rmse_rho(&est, res.rho0)
                };
                (v.unwrap_or(f64::NAN), f64::NAN, est.len())
            } else {
                let vals = res.values(metric);
                let (m, s) = trimmed_mean(&vals, cfg.trim).unwrap_or((f64::NAN, f64::NAN));
                (m, s, vals.len())
            };
            McRow {
                method: res.method,
                rho0: res.rho0,
                n: res.n,
                cl: res.cl,
                metric: metric.to_string(),
                trimmed_mean: value,
                stderr: se,
                n_valid,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_weights(n: usize) -> SpatialWeights {
        grid_inverse_distance_weights(n).unwrap()
    }

    #[test]
    fn ou_kernel() {
        let grid = uniform_grid(5).unwrap();
        let cov = ou_covariance(&grid, 1.0, 1.0 / 37.0).unwrap();
        assert!((cov[(2, 2)] - 18.5).abs() < 1e-12);
        let wide = ou_covariance(&grid, 1.0, 500.0).unwrap();
        assert!(wide[(0, 1)] / wide[(0, 0)] < 1e-50);
        assert!(ou_covariance(&grid, 1.0, 0.0).is_err());
    }

    #[test]
    fn predictor_mean_matches() {
        let cfg = DgpConfig {
            n: 10_000,
            grid_size: 11,
            seed: 3,
            ..Default::default()
        };
        let x = gen_predictors(&cfg).unwrap();
        let sd = (18.5f64 / 10_000.0).sqrt();
        for (j, &u) in x.grid().iter().enumerate() {
            let m = x.values().column(j).mean();
            assert!((m - beta_x(u)).abs() < 3.0 * sd, "u = {u}: {m}");
        }
        assert_eq!(gen_predictors(&cfg).unwrap(), x);
    }

    #[test]
    fn response_cases() {
        let cfg = DgpConfig {
            n: 30,
            grid_size: 21,
            ..Default::default()
        };
        let x = gen_predictors(&cfg).unwrap();
        let w = line_weights(30);
        let beta = CoefficientFunction::from_fn(x.grid(), oscillating_beta).unwrap();
        let zero = vec![0.0; 30];
        let r = gen_response_with_noise(&x, &beta, &w, 0.0, &zero).unwrap();
        assert_eq!(r.y, r.signal);
        let none = CoefficientFunction::zeros(x.grid()).unwrap();
        let r = gen_response_with_noise(&x, &none, &w, 0.5, &zero).unwrap();
        assert!(r.y.iter().all(|v| *v == 0.0));

        // linear in beta with frozen noise
        let b2 = CoefficientFunction::from_fn(x.grid(), |u| u * u).unwrap();
        let sum = CoefficientFunction::new(
            x.grid().to_vec(),
            beta.values.iter().zip(&b2.values).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        let ya = gen_response_with_noise(&x, &beta, &w, 0.4, &zero).unwrap().y;
        let yb = gen_response_with_noise(&x, &b2, &w, 0.4, &zero).unwrap().y;
        let yc = gen_response_with_noise(&x, &sum, &w, 0.4, &zero).unwrap().y;
        for i in 0..30 {
            assert!((ya[i] + yb[i] - yc[i]).abs() < 1e-10);
        }
        assert!(gen_response_with_noise(&x, &beta, &w, 1.0, &zero).is_err());
    }

    #[test]
    fn filter_amplifies_variance() {
        let n = 200;
        let x = DgpConfig { n, grid_size: 11, ..Default::default() };
        let curves = gen_predictors(&x).unwrap();
        let none = CoefficientFunction::zeros(curves.grid()).unwrap();
        let w = line_weights(n);
        let mut v0 = 0.0;
        let mut v9 = 0.0;
        for seed in 0..20 {
            v0 += sample_variance(&gen_response(&curves, &none, &w, 0.0, seed).unwrap().y);
            v9 += sample_variance(&gen_response(&curves, &none, &w, 0.9, seed).unwrap().y);
        }
        assert!(v9 > v0);
    }

    #[test]
    fn contamination() {
        let n = 100;
        let cfg = DgpConfig { n, grid_size: 11, ..Default::default() };
        let x = gen_predictors(&cfg).unwrap();
        let beta = CoefficientFunction::from_fn(x.grid(), oscillating_beta).unwrap();
        let w = line_weights(n);
        let draw = gen_response(&x, &beta, &w, 0.0, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (y, idx) = contaminate(&draw, &w, 0.0, 5.0, 0.1, &mut rng).unwrap();
        assert_eq!(y, draw.y);
        assert!(idx.is_empty());

        let (y, idx) = contaminate(&draw, &w, 0.1, 5.0, 0.1, &mut rng).unwrap();
        assert_eq!(idx.len(), 10);
        for i in 0..n {
            let shift = y[i] - draw.y[i];
            if idx.contains(&i) {
                let expect = 5.0 - draw.noise[i];
                assert!((shift - expect).abs() < 0.5, "shift {shift} vs {expect}");
            } else {
                assert_eq!(shift, 0.0);
            }
        }
        assert!(contaminate(&draw, &w, 1.0, 5.0, 0.1, &mut rng).is_err());
    }

    #[test]
    fn imse_cases() {
        let grid = uniform_grid(1001).unwrap();
        let b = CoefficientFunction::from_fn(&grid, oscillating_beta).unwrap();
        assert_eq!(imse(&b, &b).unwrap(), 0.0);
        let plus1 = CoefficientFunction::from_fn(&grid, |u| oscillating_beta(u) + 1.0).unwrap();
        assert!((imse(&plus1, &b).unwrap() - 1.0).abs() < 1e-12);
        let plus_u = CoefficientFunction::from_fn(&grid, |u| oscillating_beta(u) + u).unwrap();
        assert!((imse(&plus_u, &b).unwrap() - 1.0 / 3.0).abs() < 1e-6);
        let other = CoefficientFunction::zeros(&uniform_grid(11).unwrap()).unwrap();
        assert!(imse(&other, &b).is_err());
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse_rho(&[0.5, 0.5, 0.5], 0.5).unwrap(), 0.0);
        assert!((rmse_rho(&[1.5, -0.5], 0.5).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!((rmse_rho(&[0.8, 0.8, 0.8], 0.5).unwrap() - 0.3).abs() < 1e-15);
        assert!(rmse_rho(&[0.3], 0.5).is_err());
        assert!(rmse_rho(&[], 0.5).is_err());
        // sd 2^(1/2) plugged in directly
        assert!((rmse_rho_paper_literal(&[1.5, -0.5], 0.5).unwrap() - 2f64.sqrt().sqrt()).abs() < 1e-15);
    }

    #[test]
    fn mspe_cases() {
        assert_eq!(mspe(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mspe(&[3.0, 4.0, 5.0], &[1.0, 2.0, 3.0]).unwrap(), 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<f64> = (0..57).map(|_| rng.random()).collect();
        let a: Vec<f64> = (0..57).map(|_| rng.random()).collect();
        let mut naive = 0.0;
        for i in 0..57 {
            naive += (p[i] - a[i]) * (p[i] - a[i]);
        }
        assert!((mspe(&p, &a).unwrap() - naive / 57.0).abs() < 1e-12);
        assert!(mspe(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cpd_cases() {
        let lo = vec![0.0; 1000];
        let hi = vec![1.0; 1000];
        let inside = vec![0.5; 1000];
        assert!((cpd(&lo, &hi, &inside, 0.95).unwrap() - 0.05).abs() < 1e-15);
        let outside = vec![2.0; 1000];
        assert_eq!(cpd(&lo, &hi, &outside, 0.95).unwrap(), 0.95);
        let mixed: Vec<f64> = (0..1000).map(|i| if i < 950 { 1.0 } else { -1.0 }).collect();
        assert!(cpd(&lo, &hi, &mixed, 0.95).unwrap().abs() < 1e-15);
        assert!(cpd(&hi, &lo, &inside, 0.95).is_err());
    }

    #[test]
    fn score_cases() {
        let lo = [0.0, 1.0, -1.0];
        let hi = [2.0, 4.0, 1.0];
        let y = [1.0, 2.0, 0.0];
        assert!((interval_score(&lo, &hi, &y, 0.05).unwrap() - 7.0 / 3.0).abs() < 1e-14);
        assert!((interval_score(&[0.0], &[0.0], &[1.0], 0.05).unwrap() - 40.0).abs() < 1e-12);
        let s1 = interval_score(&[0.0], &[1.0], &[-1.0], 0.05).unwrap();
        let s2 = interval_score(&[0.0], &[1.0], &[-2.0], 0.05).unwrap();
        assert!((s2 - s1 - 40.0).abs() < 1e-12);
        let width = 7.0 / 3.0;
        let y_out = [-1.0, 2.0, 0.0];
        assert!(interval_score(&lo, &hi, &y_out, 0.05).unwrap() > width);
    }

    #[test]
    fn trimmed_cases() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        let (m, se) = trimmed_mean(&v, 0.2).unwrap();
        assert_eq!(m, 4.5);
        let direct = (sample_variance(&v[..8]) / 8.0).sqrt();
        assert_eq!(se, direct);
        assert_eq!(trimmed_mean(&v, 0.0).unwrap().0, 5.5);
        assert_eq!(trimmed_mean(&[3.0; 7], 0.2).unwrap(), (3.0, 0.0));
        assert!(trimmed_mean(&[], 0.2).is_err());
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
    }

    #[test]
    fn beta_spec_forms() {
        let grid = uniform_grid(5).unwrap();
        let c: McConfig = serde_json::from_str(r#"{"beta_true": "shifted"}"#).unwrap();
        assert_eq!(c.beta_true, BetaSpec::Preset(BetaPreset::Shifted));
        let b = c.beta_true.on_grid(&grid).unwrap();
        assert!((b.values[0] - 2.0).abs() < 1e-15);
        let v: McConfig = serde_json::from_str(r#"{"beta_true": [0, 1, 2, 3, 4], "grid_size": 5}"#).unwrap();
        assert_eq!(v.beta_true_fn().unwrap().values, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert!(BetaSpec::Values(vec![1.0]).on_grid(&grid).is_err());
        assert_eq!(McConfig::default().beta_true_fn().unwrap().values, vec![1.0; 101]);
    }

    #[test]
    fn replication_streams_differ() {
        let a: f64 = replication_rng(7, 0, 0).random();
        let b: f64 = replication_rng(7, 0, 1).random();
        let c: f64 = replication_rng(7, 1, 0).random();
        let a2: f64 = replication_rng(7, 0, 0).random();
        assert_eq!(a, a2);
        assert!(a != b && a != c && b != c);
    }

    #[test]
    fn mc_smoke_shape_and_determinism() {
        let cfg = McConfig {
            rho0: vec![0.5],
            n: vec![30],
            cl: vec![0.0, 0.1],
            replications: 2,
            n_test: 20,
            grid_size: 21,
            estimator: EstimatorConfig {
                rho_grid: (-9..=9).map(|k| k as f64 / 10.0).collect(),
                ..Default::default()
            },
            ..Default::default()
        };
        let one = run_mc(&cfg, 1).unwrap();
        assert_eq!(one.rows.len(), 2 * 2 * REPORT_METRICS.len());
        assert_eq!(one.scenarios.len(), 4);
        let many = run_mc(&cfg, 4).unwrap();
        assert_eq!(one.to_csv(), many.to_csv());
        assert_eq!(one.to_json().unwrap(), many.to_json().unwrap());
        assert!(run_mc(&McConfig { replications: 1, ..cfg }, 1).is_err());
    }
}
