//! Discretised functional data on a shared grid.
//!
//! All integrals over the domain use the trapezoidal rule on the observed
//! grid ([`quad_weights`]). FPCA eigendecomposes `W^{1/2} C W^{1/2}`, where
//! `C` is the sample covariance on the grid and `W` the diagonal of
//! quadrature weights, so that the returned eigenfunctions are orthonormal
//! under the same rule that computes the scores.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative threshold (to the leading eigenvalue) below which an eigenvalue
/// counts as numerically zero.
pub const RANK_TOL: f64 = 1e-8;

/// `n` curves sampled on a common strictly increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    grid: Vec<f64>,
    values: DMatrix<f64>,
    mean: Option<Vec<f64>>,
}

impl FunctionalDataset {
    /// Builds a dataset; `values` is `n x T` with one curve per row.
    pub fn new(grid: Vec<f64>, values: DMatrix<f64>) -> Result<Self> {
        validate_grid(&grid)?;
        if values.ncols() != grid.len() {
            return Err(Error::DimensionMismatch {
                what: "curve length vs grid",
                expected: grid.len(),
                got: values.ncols(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("curve values"));
        }
        Ok(Self {
            grid,
            values,
            mean: None,
        })
    }

    /// Builds a dataset from row vectors.
    pub fn from_rows(grid: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let t = grid.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != t) {
            return Err(Error::InvalidInput(format!(
                "curve {i} has {} values, grid has {t}",
                r.len()
            )));
        }
        let values = DMatrix::from_fn(rows.len(), t, |i, j| rows[i][j]);
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_curves(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.grid.len()
    }

    pub fn is_centered(&self) -> bool {
        self.mean.is_some()
    }

    /// The mean curve removed by [`center`], if any.
    pub fn mean_curve(&self) -> Option<&[f64]> {
        self.mean.as_deref()
    }

    /// Returns the dataset restricted to the given rows, in that order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let values = DMatrix::from_fn(rows.len(), self.n_points(), |i, j| {
            self.values[(rows[i], j)]
        });
        Self {
            grid: self.grid.clone(),
            values,
            mean: self.mean.clone(),
        }
    }

    /// Fails with the first differing grid point unless `other` shares this grid.
    pub fn check_same_grid(&self, other: &[f64]) -> Result<()> {
        check_grid_match(&self.grid, other)
    }
}

/// A coefficient function sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientFunction {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl CoefficientFunction {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        validate_grid(&grid)?;
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                what: "coefficient function length vs grid",
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` on `grid`.
    pub fn from_fn(grid: &[f64], f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid.to_vec(), grid.iter().map(|&u| f(u)).collect())
    }

    pub fn zeros(grid: &[f64]) -> Result<Self> {
        Self::new(grid.to_vec(), vec![0.0; grid.len()])
    }
}

/// Truncated functional principal component basis.
#[derive(Debug, Clone)]
pub struct FpcBasis {
    grid: Vec<f64>,
    weights: Vec<f64>,
    mean: Vec<f64>,
    eigenvalues: Vec<f64>,
    spectrum: Vec<f64>,
    eigenfunctions: DMatrix<f64>,
    scores: DMatrix<f64>,
    explained_fraction: f64,
}

/// JSON form of a basis: `{grid, eigenvalues, eigenfunctions, scores, M}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FpcBasisExport {
    pub grid: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub eigenfunctions: Vec<Vec<f64>>,
    pub scores: Vec<Vec<f64>>,
    #[serde(rename = "M")]
    pub m: usize,
    pub explained_fraction: f64,
    pub mean: Vec<f64>,
}

impl FpcBasis {
    /// Truncation order `M`.
    pub fn order(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Training mean curve; new curves are centred with it before projection.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Retained eigenvalues `lambda_1 >= ... >= lambda_M`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Every eigenvalue of the discretised covariance, descending.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// `M x T`, row `m` is `phi_m` on the grid.
    pub fn eigenfunctions(&self) -> &DMatrix<f64> {
        &self.eigenfunctions
    }

    /// `n x M` score matrix of the training curves.
    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn explained_fraction(&self) -> f64 {
        self.explained_fraction
    }

    /// Scores of curves that have already been centred.
    pub fn project_centered(&self, centered: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if centered.ncols() != self.grid.len() {
            return Err(Error::DimensionMismatch {
                what: "curve length vs basis grid",
                expected: self.grid.len(),
                got: centered.ncols(),
            });
        }
        let weighted_phi = DMatrix::from_fn(self.grid.len(), self.order(), |t, m| {
            self.eigenfunctions[(m, t)] * self.weights[t]
        });
        Ok(centered * weighted_phi)
    }

    /// Scores of raw curves after removing the training mean.
    pub fn project(&self, curves: &FunctionalDataset) -> Result<DMatrix<f64>> {
        curves.check_same_grid(&self.grid)?;
        self.project_centered(&self.center_with_mean(curves))
    }

    /// Removes the training mean from raw curves. Curves that are already
    /// centred are returned as they are.
    pub fn center_with_mean(&self, curves: &FunctionalDataset) -> DMatrix<f64> {
        if curves.is_centered() {
            return curves.values().clone();
        }
        let mut out = curves.values().clone();
        for mut row in out.row_iter_mut() {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        out
    }

    /// Rebuilds curves from `scores` (`n x M`) as `scores * Phi`.
    pub fn reconstruct_curves(&self, scores: &DMatrix<f64>) -> DMatrix<f64> {
        scores * &self.eigenfunctions
    }

    pub fn export(&self) -> FpcBasisExport {
        FpcBasisExport {
            grid: self.grid.clone(),
            eigenvalues: self.eigenvalues.clone(),
            eigenfunctions: matrix_rows(&self.eigenfunctions),
            scores: matrix_rows(&self.scores),
            m: self.order(),
            explained_fraction: self.explained_fraction,
            mean: self.mean.clone(),
        }
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "grid needs at least 2 points, got {}",
            grid.len()
        )));
    }
    if grid.iter().any(|u| !u.is_finite()) {
        return Err(Error::NonFinite("grid"));
    }
    if let Some(i) = grid.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(format!(
            "grid not strictly increasing at index {}",
            i + 1
        )));
    }
    Ok(())
}

/// Fails with the index of the first point where two grids differ.
pub fn check_grid_match(expected: &[f64], got: &[f64]) -> Result<()> {
    for (i, (&a, &b)) in expected.iter().zip(got).enumerate() {
        let scale = a.abs().max(b.abs()).max(1.0);
        if (a - b).abs() > 1e-12 * scale {
            return Err(Error::GridMismatch {
                index: i,
                expected: a,
                got: b,
            });
        }
    }
    if expected.len() != got.len() {
        let index = expected.len().min(got.len());
        return Err(Error::GridMismatch {
            index,
            expected: expected.get(index).copied().unwrap_or(f64::NAN),
            got: got.get(index).copied().unwrap_or(f64::NAN),
        });
    }
    Ok(())
}

/// Trapezoidal quadrature weights on `grid`.
pub fn quad_weights(grid: &[f64]) -> Result<Vec<f64>> {
    validate_grid(grid)?;
    let t = grid.len();
    let mut w = vec![0.0; t];
    for k in 0..t - 1 {
        let half = 0.5 * (grid[k + 1] - grid[k]);
        w[k] += half;
        w[k + 1] += half;
    }
    Ok(w)
}

/// Integral of the product of two sampled functions.
pub fn inner_product(weights: &[f64], f: &[f64], g: &[f64]) -> f64 {
    weights
        .iter()
        .zip(f)
        .zip(g)
        .map(|((w, a), b)| w * a * b)
        .sum()
}

/// `∫ X_i(u) beta(u) du` for every row of `curves`.
pub fn functional_inner_products(weights: &[f64], curves: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    curves
        .row_iter()
        .map(|row| {
            row.iter()
                .zip(weights)
                .zip(beta)
                .map(|((x, w), b)| x * w * b)
                .sum()
        })
        .collect()
}

/// Column-centres the curves and records the removed mean curve.
pub fn center(data: &FunctionalDataset) -> Result<FunctionalDataset> {
    let n = data.n_curves();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "centering needs at least 2 curves, got {n}"
        )));
    }
    let mean: Vec<f64> = data
        .values
        .column_iter()
        .map(|c| c.iter().sum::<f64>() / n as f64)
        .collect();
    let mut values = data.values.clone();
    for mut row in values.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    // Stack means when centring twice so prediction still sees the raw-scale mean.
    let stored = match &data.mean {
        Some(prev) => prev.iter().zip(&mean).map(|(a, b)| a + b).collect(),
        None => mean,
    };
    Ok(FunctionalDataset {
        grid: data.grid.clone(),
        values,
        mean: Some(stored),
    })
}

/// Functional principal component analysis with the smallest truncation
/// order whose cumulative eigenvalue share reaches `variance_target`.
pub fn fpca(data: &FunctionalDataset, variance_target: f64) -> Result<FpcBasis> {
    if !data.is_centered() {
        return Err(Error::InvalidInput("fpca requires centred curves".into()));
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "variance target must lie in (0, 1], got {variance_target}"
        )));
    }
    let n = data.n_curves();
    let t = data.n_points();
    if n < 2 {
        return Err(Error::InvalidInput("fpca needs at least 2 curves".into()));
    }
    let w = quad_weights(&data.grid)?;
    let sqrt_w: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();

    let x = &data.values;
    let cov = (x.transpose() * x) / (n as f64 - 1.0);
    let sym = DMatrix::from_fn(t, t, |a, b| {
        let v = sqrt_w[a] * cov[(a, b)] * sqrt_w[b];
        let v_t = sqrt_w[b] * cov[(b, a)] * sqrt_w[a];
        0.5 * (v + v_t)
    });
    let eig = SymmetricEigen::new(sym);

    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let spectrum: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let lead = spectrum[0];
    if !(lead > f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(
            "covariance is zero (all curves identical); truncation order undefined".into(),
        ));
    }
    let floor = RANK_TOL * lead;
    let clipped: Vec<f64> = spectrum
        .iter()
        .map(|&l| if l > floor { l } else { 0.0 })
        .collect();
    let total: f64 = clipped.iter().sum();
    let cap = (n - 1).min(t);

    let mut cumulative = 0.0;
    let mut m = cap;
    for (k, &l) in clipped.iter().enumerate().take(cap) {
        cumulative += l;
        if cumulative / total >= variance_target - 1e-12 || clipped.get(k + 1) == Some(&0.0) {
            m = k + 1;
            break;
        }
    }
    let explained: f64 = clipped[..m].iter().sum::<f64>() / total;

    let mut phi = DMatrix::zeros(m, t);
    for (row, &k) in order.iter().take(m).enumerate() {
        let v = eig.eigenvectors.column(k);
        for j in 0..t {
            phi[(row, j)] = v[j] / sqrt_w[j];
        }
        let (imax, _) = phi
            .row(row)
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |(bi, bv), (j, &val)| {
                if val.abs() > bv {
                    (j, val.abs())
                } else {
                    (bi, bv)
                }
            });
        if phi[(row, imax)] < 0.0 {
            phi.row_mut(row).neg_mut();
        }
    }

    let mut basis = FpcBasis {
        grid: data.grid.clone(),
        weights: w,
        mean: data.mean.clone().unwrap_or_else(|| vec![0.0; t]),
        eigenvalues: spectrum[..m].iter().map(|&l| l.max(0.0)).collect(),
        spectrum,
        eigenfunctions: phi,
        scores: DMatrix::zeros(0, 0),
        explained_fraction: explained.clamp(f64::MIN_POSITIVE, 1.0),
    };
    basis.scores = basis.project_centered(x)?;
    Ok(basis)
}

/// `beta(u) = sum_m coeffs_m phi_m(u)` on the basis grid.
pub fn reconstruct_beta(basis: &FpcBasis, coeffs: &[f64]) -> Result<CoefficientFunction> {
    if coeffs.len() != basis.order() {
        return Err(Error::DimensionMismatch {
            what: "coefficient count vs truncation order",
            expected: basis.order(),
            got: coeffs.len(),
        });
    }
    let c = DVector::from_column_slice(coeffs);
    let values = basis.eigenfunctions.transpose() * c;
    CoefficientFunction::new(basis.grid.clone(), values.iter().copied().collect())
}

/// Projection coefficients `∫ beta(u) phi_m(u) du`.
pub fn project_function(basis: &FpcBasis, beta: &CoefficientFunction) -> Result<Vec<f64>> {
    check_grid_match(&basis.grid, &beta.grid)?;
    Ok(basis
        .eigenfunctions
        .row_iter()
        .map(|phi| {
            phi.iter()
                .zip(&basis.weights)
                .zip(&beta.values)
                .map(|((p, w), b)| p * w * b)
                .sum()
        })
        .collect())
}

/// Cubic B-spline basis with `n_basis` functions on `[grid[0], grid[T-1]]`,
/// clamped knots, uniformly spaced interior knots. Returns `T x n_basis`.
pub fn cubic_bspline_basis(grid: &[f64], n_basis: usize) -> Result<DMatrix<f64>> {
    const ORDER: usize = 4;
    if n_basis < ORDER {
        return Err(Error::InvalidInput(format!(
            "cubic B-splines need at least 4 basis functions, got {n_basis}"
        )));
    }
    validate_grid(grid)?;
    let lo = grid[0];
    let hi = grid[grid.len() - 1];
    let n_interior = n_basis - ORDER;
    let mut knots = vec![lo; ORDER];
    for k in 1..=n_interior {
        knots.push(lo + (hi - lo) * k as f64 / (n_interior + 1) as f64);
    }
    knots.extend(std::iter::repeat_n(hi, ORDER));

    let mut out = DMatrix::zeros(grid.len(), n_basis);
    for (row, &u) in grid.iter().enumerate() {
        // Knot span containing u; the right end belongs to the last span.
        let span = if u >= hi {
            n_basis - 1
        } else {
            (ORDER - 1..n_basis)
                .rev()
                .find(|&s| knots[s] <= u)
                .unwrap_or(ORDER - 1)
        };
        // Cox-de Boor on the non-zero functions of this span.
        let mut vals = [0.0; ORDER];
        vals[0] = 1.0;
        let mut left = [0.0; ORDER];
        let mut right = [0.0; ORDER];
        for j in 1..ORDER {
            left[j] = u - knots[span + 1 - j];
            right[j] = knots[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { vals[r] / denom } else { 0.0 };
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }
        for (k, v) in vals.iter().enumerate() {
            out[(row, span + 1 - ORDER + k)] = *v;
        }
    }
    Ok(out)
}

/// Least-squares projection of every curve onto a cubic B-spline basis.
pub fn bspline_smooth(raw: &FunctionalDataset, n_basis: usize) -> Result<FunctionalDataset> {
    if raw.n_points() < n_basis {
        return Err(Error::InvalidInput(format!(
            "grid has {} points, fewer than {n_basis} basis functions",
            raw.n_points()
        )));
    }
    let b = cubic_bspline_basis(&raw.grid, n_basis)?;
    let svd = b.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-10 * smax {
        return Err(Error::RankDeficient {
            ratio: smin / smax,
        });
    }
    // Hat matrix B (B'B)^{-1} B' applied to every curve at once.
    let u = svd.u.as_ref().expect("svd computed with u");
    let hat = u * u.transpose();
    let values = &raw.values * hat.transpose();
    Ok(FunctionalDataset {
        grid: raw.grid.clone(),
        values,
        mean: raw.mean.clone(),
    })
}
