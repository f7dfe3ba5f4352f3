//! Check loss and linear quantile regression.
//!
//! [`weighted_quantile_regress`] minimises `sum_i w_i phi_tau(y_i - x_i b)`.
//! The solver runs a primal-dual interior point method on the dual linear
//! program (bounded-variable form, Mehrotra predictor-corrector) on a
//! column-standardised copy of the data, crosses over to a basic solution
//! that interpolates `p` observations, and then descends along the edges of
//! the objective until no edge improves it. The returned coefficients are
//! therefore an exact optimal vertex of the original problem, not just an
//! interior approximation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `psi_tau(c) = tau - 1(c < 0)`; `psi_tau(0) = tau`.
pub fn psi(c: f64, tau: f64) -> f64 {
    if c < 0.0 {
        tau - 1.0
    } else {
        tau
    }
}

/// Check (pinball) loss `c * psi_tau(c)`.
pub fn check_loss(c: f64, tau: f64) -> f64 {
    c * psi(c, tau)
}

/// `sum_i w_i phi_tau(y_i - x_i b)`; unit weights when `weights` is `None`.
pub fn objective(x: &DMatrix<f64>, y: &[f64], tau: f64, coeffs: &[f64], weights: Option<&[f64]>) -> f64 {
    let b = DVector::from_column_slice(coeffs);
    let fitted = x * b;
    y.iter()
        .zip(fitted.iter())
        .enumerate()
        .map(|(i, (yi, fi))| weights.map_or(1.0, |w| w[i]) * check_loss(yi - fi, tau))
        .sum()
}

/// Solver tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative duality gap at which the interior point phase stops.
    pub gap_tol: f64,
    /// Interior point iteration cap.
    pub max_iter: usize,
    /// Vertex pivots allowed per observation in the polish phase.
    pub pivots_per_obs: usize,
    /// Singular value ratio below which the design is rejected.
    pub rank_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-8,
            max_iter: 200,
            pivots_per_obs: 10,
            rank_tol: 1e-10,
        }
    }
}

/// Result of a linear quantile regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub tau: f64,
    pub coeffs: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Observations interpolated by the returned vertex.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub basis: Vec<usize>,
}

impl QuantileFit {
    pub fn fitted(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (x * DVector::from_column_slice(&self.coeffs)).iter().copied().collect()
    }
}

pub fn quantile_regress(x: &DMatrix<f64>, y: &[f64], tau: f64) -> Result<QuantileFit> {
    weighted_quantile_regress_with(x, y, tau, None, &SolverOptions::default())
}

pub fn weighted_quantile_regress(
    x: &DMatrix<f64>,
    y: &[f64],
    tau: f64,
    weights: &[f64],
) -> Result<QuantileFit> {
    weighted_quantile_regress_with(x, y, tau, Some(weights), &SolverOptions::default())
}

/// Full-control entry point; `weights = None` means unit weights.
pub fn weighted_quantile_regress_with(
    x: &DMatrix<f64>,
    y: &[f64],
    tau: f64,
    weights: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<QuantileFit> {
    let (n, p) = x.shape();
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidInput(format!("tau must lie in (0, 1), got {tau}")));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            what: "response length vs design rows",
            expected: n,
            got: y.len(),
        });
    }
    if p == 0 {
        return Err(Error::InvalidInput("design has no columns".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design matrix"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response"));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::DimensionMismatch {
                what: "weight length",
                expected: n,
                got: w.len(),
            });
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
        }
    }

    // Zero-weight rows do not enter the objective at all.
    let active: Vec<usize> = (0..n)
        .filter(|&i| weights.is_none_or(|w| w[i] > 0.0))
        .collect();
    if active.is_empty() {
        return Err(Error::InvalidInput("all weights are zero".into()));
    }
    let m = active.len();
    if m < p {
        return Err(Error::InvalidInput(format!(
            "need at least p = {p} observations with positive weight, got {m}"
        )));
    }

    let col_scale: Vec<f64> = (0..p)
        .map(|j| active.iter().fold(0.0_f64, |a, &i| a.max(x[(i, j)].abs())))
        .collect();
    if col_scale.contains(&0.0) {
        return Err(Error::RankDeficient { ratio: 0.0 });
    }
    let y_scale = active.iter().fold(0.0_f64, |a, &i| a.max(y[i].abs()));
    let y_scale = if y_scale > 0.0 { y_scale } else { 1.0 };

    let xs = DMatrix::from_fn(m, p, |r, j| x[(active[r], j)] / col_scale[j]);
    let ys: Vec<f64> = active.iter().map(|&i| y[i] / y_scale).collect();
    let ws: Vec<f64> = active.iter().map(|&i| weights.map_or(1.0, |w| w[i])).collect();

    let sv = xs.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > opts.rank_tol * smax) {
        return Err(Error::RankDeficient { ratio: smin / smax });
    }

    let ipm = interior_point(&xs, &ys, &ws, tau, opts);
    let start = match &ipm {
        Some(r) => r.coeffs.clone(),
        None => least_squares(&xs, &ys)?,
    };
    let basis = crossover_basis(&xs, &ys, &start)?;
    let polish = simplex_descent(&xs, &ys, &ws, tau, basis, opts.pivots_per_obs * m + 100)?;

    let coeffs: Vec<f64> = polish
        .coeffs
        .iter()
        .zip(&col_scale)
        .map(|(b, s)| b * y_scale / s)
        .collect();
    let obj = objective(x, y, tau, &coeffs, weights);
    Ok(QuantileFit {
        tau,
        coeffs,
        objective: obj,
        iterations: ipm.as_ref().map_or(0, |r| r.iterations) + polish.pivots,
        converged: polish.optimal,
        basis: polish.basis.iter().map(|&r| active[r]).collect(),
    })
}

fn least_squares(x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    let svd = x.clone().svd(true, true);
    let b = svd
        .solve(&DVector::from_column_slice(y), 1e-12)
        .map_err(|e| Error::Singular(e.to_string()))?;
    Ok(b.iter().copied().collect())
}

struct IpmResult {
    coeffs: Vec<f64>,
    iterations: usize,
}

/// Largest step in `[0, 1]` keeping `v + step * dv >= 0`, damped.
fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut step = f64::INFINITY;
    for (a, d) in v.iter().zip(dv) {
        if *d < 0.0 {
            step = step.min(-a / d);
        }
    }
    (0.9995 * step).min(1.0)
}

/// Interior point on the dual: max y'a s.t. X'a = (1 - tau) X'w, 0 <= a <= w.
/// Written as min c'x with c = -y, A = X'. The equality multipliers are the
/// negated regression coefficients.
fn interior_point(x: &DMatrix<f64>, y: &[f64], w: &[f64], tau: f64, opts: &SolverOptions) -> Option<IpmResult> {
    let (n, p) = x.shape();
    let c: Vec<f64> = y.iter().map(|v| -v).collect();
    let mut xv: Vec<f64> = w.iter().map(|wi| (1.0 - tau) * wi).collect();
    let mut sv: Vec<f64> = w.iter().map(|wi| tau * wi).collect();
    let bvec = x.transpose() * DVector::from_column_slice(&xv);

    // Dual start from least squares of c on X.
    let y0 = least_squares(x, &c).ok()?;
    let mut dual = DVector::from_vec(y0);
    let r = DVector::from_column_slice(&c) - x * &dual;
    let scale = r.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let delta = 0.1 * scale.max(1e-3);
    let mut z: Vec<f64> = r.iter().map(|v| v.max(0.0) + delta).collect();
    let mut ww: Vec<f64> = r.iter().map(|v| (-v).max(0.0) + delta).collect();

    let mut iterations = 0;
    while iterations < opts.max_iter {
        let gap: f64 = (0..n).map(|i| xv[i] * z[i] + sv[i] * ww[i]).sum();
        let primal_obj: f64 = c.iter().zip(&xv).map(|(a, b)| a * b).sum();
        if !gap.is_finite() {
            return None;
        }
        if gap <= opts.gap_tol * (1.0 + primal_obj.abs()) {
            break;
        }
        iterations += 1;

        let atd = x * &dual;
        let rd: Vec<f64> = (0..n).map(|i| c[i] - atd[i] - z[i] + ww[i]).collect();
        let ax = x.transpose() * DVector::from_column_slice(&xv);
        let rp = &bvec - ax;
        let q: Vec<f64> = (0..n).map(|i| 1.0 / (z[i] / xv[i] + ww[i] / sv[i])).collect();

        // Normal equations matrix A Q A'.
        let mut aqa = DMatrix::zeros(p, p);
        for i in 0..n {
            let row = x.row(i);
            for a in 0..p {
                let va = q[i] * row[a];
                for b in a..p {
                    aqa[(a, b)] += va * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                aqa[(a, b)] = aqa[(b, a)];
            }
        }
        let chol = aqa.cholesky()?;

        let solve_dir = |rxz: &[f64], rsw: &[f64]| -> (DVector<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
            // dx = q (A'dy - rd + rxz/x - rsw/s), A dx = rp
            let base: Vec<f64> = (0..n)
                .map(|i| q[i] * (-rd[i] + rxz[i] / xv[i] - rsw[i] / sv[i]))
                .collect();
            let rhs = &rp - x.transpose() * DVector::from_column_slice(&base);
            let dy = chol.solve(&rhs);
            let atdy = x * &dy;
            let dx: Vec<f64> = (0..n).map(|i| q[i] * atdy[i] + base[i]).collect();
            let dz: Vec<f64> = (0..n).map(|i| (rxz[i] - z[i] * dx[i]) / xv[i]).collect();
            let dw: Vec<f64> = (0..n).map(|i| (rsw[i] + ww[i] * dx[i]) / sv[i]).collect();
            (dy, dx, dz, dw)
        };

        // Predictor.
        let rxz: Vec<f64> = (0..n).map(|i| -xv[i] * z[i]).collect();
        let rsw: Vec<f64> = (0..n).map(|i| -sv[i] * ww[i]).collect();
        let (_, dx_a, dz_a, dw_a) = solve_dir(&rxz, &rsw);
        let ds_a: Vec<f64> = dx_a.iter().map(|v| -v).collect();
        let ap = max_step(&xv, &dx_a).min(max_step(&sv, &ds_a));
        let ad = max_step(&z, &dz_a).min(max_step(&ww, &dw_a));
        let gap_aff: f64 = (0..n)
            .map(|i| {
                (xv[i] + ap * dx_a[i]) * (z[i] + ad * dz_a[i])
                    + (sv[i] + ap * ds_a[i]) * (ww[i] + ad * dw_a[i])
            })
            .sum();
        let sigma = (gap_aff / gap).clamp(0.0, 1.0).powi(3);
        let mu = sigma * gap / (2 * n) as f64;

        // Corrector.
        let rxz: Vec<f64> = (0..n).map(|i| mu - xv[i] * z[i] - dx_a[i] * dz_a[i]).collect();
        let rsw: Vec<f64> = (0..n).map(|i| mu - sv[i] * ww[i] - ds_a[i] * dw_a[i]).collect();
        let (dy, dx, dz, dw) = solve_dir(&rxz, &rsw);
        let ds: Vec<f64> = dx.iter().map(|v| -v).collect();
        let ap = max_step(&xv, &dx).min(max_step(&sv, &ds));
        let ad = max_step(&z, &dz).min(max_step(&ww, &dw));

        for i in 0..n {
            xv[i] += ap * dx[i];
            sv[i] += ap * ds[i];
            z[i] += ad * dz[i];
            ww[i] += ad * dw[i];
        }
        dual += dy * ad;
        if dual.iter().any(|v| !v.is_finite()) {
            return None;
        }
    }
    Some(IpmResult {
        coeffs: dual.iter().map(|v| -v).collect(),
        iterations,
    })
}

/// Picks `p` linearly independent observations with the smallest absolute
/// residuals at `coeffs`.
fn crossover_basis(x: &DMatrix<f64>, y: &[f64], coeffs: &[f64]) -> Result<Vec<usize>> {
    let (n, p) = x.shape();
    let fitted = x * DVector::from_column_slice(coeffs);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        (y[a] - fitted[a])
            .abs()
            .total_cmp(&(y[b] - fitted[b]).abs())
            .then(a.cmp(&b))
    });
    let mut chosen = Vec::with_capacity(p);
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(p);
    for &i in &order {
        let row: DVector<f64> = x.row(i).transpose();
        let norm = row.norm();
        if norm == 0.0 {
            continue;
        }
        let mut v = row.clone();
        for o in &ortho {
            let proj = o.dot(&v);
            v -= o * proj;
        }
        if v.norm() > 1e-8 * norm {
            let unit = &v / v.norm();
            ortho.push(unit);
            chosen.push(i);
            if chosen.len() == p {
                return Ok(chosen);
            }
        }
    }
    Err(Error::RankDeficient { ratio: 0.0 })
}

struct Vertex {
    coeffs: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
    optimal: bool,
}

/// Residuals this close to zero (on the standardised scale) count as zero.
const ZERO_RESID: f64 = 1e-11;

fn slope(r: f64, a: f64, tau: f64) -> f64 {
    if r > ZERO_RESID || (r.abs() <= ZERO_RESID && a > 0.0) {
        tau * a
    } else {
        (tau - 1.0) * a
    }
}

/// Edge descent over basic solutions. Every pivot moves along an edge with a
/// negative directional derivative to the minimiser of the objective on that
/// edge, so the objective strictly decreases.
fn simplex_descent(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    tau: f64,
    mut basis: Vec<usize>,
    max_pivots: usize,
) -> Result<Vertex> {
    let (n, p) = x.shape();
    let total_w: f64 = w.iter().sum();
    let mut pivots = 0;
    loop {
        let bmat = DMatrix::from_fn(p, p, |r, j| x[(basis[r], j)]);
        let inv = bmat
            .try_inverse()
            .ok_or_else(|| Error::Singular("basis matrix became singular".into()))?;
        let yb = DVector::from_fn(p, |r, _| y[basis[r]]);
        let coeffs = &inv * yb;
        let fitted = x * &coeffs;
        let mut resid: Vec<f64> = (0..n).map(|i| y[i] - fitted[i]).collect();
        let mut in_basis = vec![false; n];
        for &b in &basis {
            resid[b] = 0.0;
            in_basis[b] = true;
        }

        // rates[i][k]: d r_i / dt along direction inv[:, k].
        let rates = -(x * &inv);

        let mut best: Option<(usize, f64, f64)> = None;
        for k in 0..p {
            for s in [1.0, -1.0] {
                // basis member k: r = -s t, costing (1 - tau) for s = +1, tau for s = -1.
                let own = if s > 0.0 { 1.0 - tau } else { tau };
                let mut deriv = w[basis[k]] * own;
                for i in 0..n {
                    if !in_basis[i] {
                        deriv += w[i] * slope(resid[i], s * rates[(i, k)], tau);
                    }
                }
                if deriv < -1e-12 * total_w && best.is_none_or(|(_, _, d)| deriv < d) {
                    best = Some((k, s, deriv));
                }
            }
        }
        let Some((k, s, deriv)) = best else {
            return Ok(Vertex {
                coeffs: coeffs.iter().copied().collect(),
                basis,
                pivots,
                optimal: true,
            });
        };
        if pivots >= max_pivots {
            return Ok(Vertex {
                coeffs: coeffs.iter().copied().collect(),
                basis,
                pivots,
                optimal: false,
            });
        }

        // Breakpoints where a non-basic residual crosses zero.
        let mut breaks: Vec<(f64, usize, f64)> = (0..n)
            .filter(|&i| !in_basis[i] && resid[i].abs() > ZERO_RESID)
            .filter_map(|i| {
                let a = s * rates[(i, k)];
                let t = -resid[i] / a;
                (a != 0.0 && t > 0.0).then_some((t, i, w[i] * a.abs()))
            })
            .collect();
        breaks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut current = deriv;
        let mut entering = None;
        for &(_, i, jump) in &breaks {
            current += jump;
            if current >= 0.0 {
                entering = Some(i);
                break;
            }
        }
        let Some(j) = entering else {
            return Err(Error::Degenerate(
                "quantile regression objective unbounded along an edge".into(),
            ));
        };
        basis[k] = j;
        pivots += 1;
    }
}

/// Worst violation of the subgradient optimality condition at `coeffs`.
///
/// With `Z` the observations whose residual is (numerically) zero and
/// `g = sum_{i not in Z} w_i psi(r_i) x_i`, optimality requires multipliers
/// `v_i in [(tau - 1) w_i, tau w_i]` with `sum_{i in Z} v_i x_i = -g`. The
/// multipliers are taken as the least-squares solution; the return value is
/// the larger of the box violation and the equation residual.
pub fn optimality_violation(
    x: &DMatrix<f64>,
    y: &[f64],
    tau: f64,
    coeffs: &[f64],
    weights: Option<&[f64]>,
    zero_tol: f64,
) -> f64 {
    let (n, p) = x.shape();
    let fitted = x * DVector::from_column_slice(coeffs);
    let wt = |i: usize| weights.map_or(1.0, |w| w[i]);
    let mut g = DVector::zeros(p);
    let mut zeros = Vec::new();
    for i in 0..n {
        let r = y[i] - fitted[i];
        if wt(i) == 0.0 {
            continue;
        }
        if r.abs() <= zero_tol {
            zeros.push(i);
        } else {
            g += x.row(i).transpose() * (wt(i) * psi(r, tau));
        }
    }
    if zeros.is_empty() {
        return g.amax();
    }
    let xz = DMatrix::from_fn(p, zeros.len(), |j, c| x[(zeros[c], j)]);
    let svd = xz.clone().svd(true, true);
    let Ok(v) = svd.solve(&(-&g), 1e-12) else {
        return f64::INFINITY;
    };
    let eq_resid = (&xz * &v + &g).amax();
    let box_viol = zeros
        .iter()
        .zip(v.iter())
        .map(|(&i, &vi)| {
            let lo = (tau - 1.0) * wt(i);
            let hi = tau * wt(i);
            (lo - vi).max(vi - hi).max(0.0)
        })
        .fold(0.0, f64::max);
    eq_resid.max(box_viol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_problem(n: usize, p: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, Vec<f64>) {
        let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
        let y = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
        (x, y)
    }

    #[test]
    fn psi_and_loss() {
        assert_eq!(psi(-2.0, 0.5), -0.5);
        assert_eq!(psi(3.0, 0.9), 0.9);
        assert_eq!(psi(0.0, 0.25), 0.25);
        assert_eq!(check_loss(-2.0, 0.5), 1.0);
        assert_eq!(check_loss(4.0, 0.25), 1.0);
        for tau in [0.01, 0.3, 0.99] {
            assert_eq!(check_loss(0.0, tau), 0.0);
            for c in [-3.0, -0.1, 0.2, 5.0] {
                assert!(check_loss(c, tau) >= 0.0);
            }
        }
    }

    #[test]
    fn interpolation_recovers_exact_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (x, _) = random_problem(30, 3, &mut rng);
        let b0 = [1.5, -2.0, 0.25];
        let y: Vec<f64> = (x.clone() * DVector::from_column_slice(&b0)).iter().copied().collect();
        let fit = quantile_regress(&x, &y, 0.3).unwrap();
        for (a, b) in fit.coeffs.iter().zip(&b0) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(fit.objective < 1e-9);
    }

    #[test]
    fn weights_behave() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (x, y) = random_problem(25, 2, &mut rng);
        let base = quantile_regress(&x, &y, 0.7).unwrap();
        let ones = weighted_quantile_regress(&x, &y, 0.7, &[1.0; 25]).unwrap();
        assert_eq!(base.coeffs, ones.coeffs);
        let threes = weighted_quantile_regress(&x, &y, 0.7, &[3.0; 25]).unwrap();
        for (a, b) in base.coeffs.iter().zip(&threes.coeffs) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((threes.objective - 3.0 * base.objective).abs() < 1e-9);

        let mut w = vec![1.0; 25];
        w[4] = 0.0;
        let dropped = weighted_quantile_regress(&x, &y, 0.7, &w).unwrap();
        let rows: Vec<usize> = (0..25).filter(|&i| i != 4).collect();
        let xr = DMatrix::from_fn(24, 2, |r, j| x[(rows[r], j)]);
        let yr: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        let direct = quantile_regress(&xr, &yr, 0.7).unwrap();
        assert!((dropped.objective - direct.objective).abs() < 1e-10);
        for (a, b) in dropped.coeffs.iter().zip(&direct.coeffs) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(weighted_quantile_regress(&x, &y, 0.7, &[0.0; 25]).is_err());
        assert!(weighted_quantile_regress(&x, &y, 0.7, &[-1.0; 25]).is_err());
    }

    #[test]
    fn certificate_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for &tau in &[0.05, 0.5, 0.95] {
            let (x, y) = random_problem(200, 4, &mut rng);
            let fit = quantile_regress(&x, &y, tau).unwrap();
            assert!(fit.converged);
            let viol = optimality_violation(&x, &y, tau, &fit.coeffs, None, 1e-9);
            assert!(viol <= 1e-6 * 200.0, "violation {viol}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        let x = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { 2.0 + i as f64 * 0.0 });
        let y = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        assert!(matches!(quantile_regress(&x, &y, 0.5), Err(Error::RankDeficient { .. })));
        let ok = DMatrix::from_element(5, 1, 1.0);
        assert!(quantile_regress(&ok, &y, 0.0).is_err());
        assert!(quantile_regress(&ok, &y, 1.0).is_err());
        assert!(quantile_regress(&ok, &y[..3], 0.5).is_err());
        let wide = DMatrix::from_element(1, 2, 1.0);
        assert!(quantile_regress(&wide, &[1.0], 0.5).is_err());
    }

    #[test]
    fn equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (x, y) = random_problem(60, 3, &mut rng);
        let base = quantile_regress(&x, &y, 0.4).unwrap();
        let scaled: Vec<f64> = y.iter().map(|v| 2.5 * v).collect();
        let fit = quantile_regress(&x, &scaled, 0.4).unwrap();
        for (a, b) in fit.coeffs.iter().zip(&base.coeffs) {
            assert!((a - 2.5 * b).abs() < 1e-8);
        }
        let d = [0.3, -1.0, 2.0];
        let shift = x.clone() * DVector::from_column_slice(&d);
        let shifted: Vec<f64> = y.iter().zip(shift.iter()).map(|(a, b)| a + b).collect();
        let fit = quantile_regress(&x, &shifted, 0.4).unwrap();
        for ((a, b), di) in fit.coeffs.iter().zip(&base.coeffs).zip(&d) {
            assert!((a - b - di).abs() < 1e-8);
        }
    }

    #[test]
    fn median_is_half_lad() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (x, y) = random_problem(80, 2, &mut rng);
        let fit = quantile_regress(&x, &y, 0.5).unwrap();
        let lad: f64 = fit
            .fitted(&x)
            .iter()
            .zip(&y)
            .map(|(f, v)| (v - f).abs())
            .sum();
        assert!((fit.objective - 0.5 * lad).abs() < 1e-10);
    }
}
