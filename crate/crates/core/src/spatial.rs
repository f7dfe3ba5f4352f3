//! Spatial weight matrices and the operations the estimators need on them.

use nalgebra::{DMatrix, DVector, LU, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in kilometres used for great-circle distances.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Fill fraction below which constructors store the matrix row-sparse.
pub const SPARSE_DENSITY: f64 = 0.10;

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Dense(DMatrix<f64>),
    /// Per-row `(column, weight)` lists, columns ascending.
    Sparse(Vec<Vec<(usize, f64)>>),
}

/// An `n x n` spatial weight matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    n: usize,
    storage: Storage,
    normalized: bool,
}

/// Header of the `i j w` triplet format.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct WeightsHeader {
    pub n: usize,
    pub normalized: bool,
}

impl SpatialWeights {
    /// Wraps a dense matrix. The diagonal must be zero and entries
    /// non-negative; rows are row-normalised when `normalize` is set.
    pub fn from_dense(matrix: DMatrix<f64>, normalize: bool) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "weight matrix columns",
                expected: n,
                got: matrix.ncols(),
            });
        }
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| matrix[(i, j)] != 0.0)
                    .map(|j| (j, matrix[(i, j)]))
                    .collect()
            })
            .collect();
        Self::from_rows(n, rows, normalize)
    }

    /// Builds from per-row `(column, weight)` lists.
    pub fn from_rows(n: usize, mut rows: Vec<Vec<(usize, f64)>>, normalize: bool) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "weight matrix needs n >= 2, got {n}"
            )));
        }
        if rows.len() != n {
            return Err(Error::DimensionMismatch {
                what: "weight matrix rows",
                expected: n,
                got: rows.len(),
            });
        }
        for (i, row) in rows.iter_mut().enumerate() {
            row.retain(|&(_, w)| w != 0.0);
            row.sort_by_key(|&(j, _)| j);
            for &(j, w) in row.iter() {
                if j >= n {
                    return Err(Error::InvalidInput(format!(
                        "column {j} out of range in row {i}"
                    )));
                }
                if j == i {
                    return Err(Error::InvalidInput(format!(
                        "non-zero diagonal entry at ({i}, {i})"
                    )));
                }
                if !w.is_finite() {
                    return Err(Error::NonFinite("weight entry"));
                }
                if w < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "negative weight {w} at ({i}, {j})"
                    )));
                }
            }
            if row.windows(2).any(|p| p[0].0 == p[1].0) {
                return Err(Error::InvalidInput(format!("duplicate column in row {i}")));
            }
            if normalize {
                let s: f64 = row.iter().map(|&(_, w)| w).sum();
                if s > 0.0 {
                    for e in row.iter_mut() {
                        e.1 /= s;
                    }
                }
            }
        }
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let storage = if (nnz as f64) < SPARSE_DENSITY * (n * n) as f64 {
            Storage::Sparse(rows)
        } else {
            let mut m = DMatrix::zeros(n, n);
            for (i, row) in rows.iter().enumerate() {
                for &(j, w) in row {
                    m[(i, j)] = w;
                }
            }
            Storage::Dense(m)
        };
        Ok(Self {
            n,
            storage,
            normalized: normalize,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse(_))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Dense(m) => m[(i, j)],
            Storage::Sparse(rows) => rows[i]
                .binary_search_by_key(&j, |&(c, _)| c)
                .map(|k| rows[i][k].1)
                .unwrap_or(0.0),
        }
    }

    /// Non-zero entries of row `i`.
    pub fn row_entries(&self, i: usize) -> Vec<(usize, f64)> {
        match &self.storage {
            Storage::Dense(m) => (0..self.n)
                .filter(|&j| m[(i, j)] != 0.0)
                .map(|j| (j, m[(i, j)]))
                .collect(),
            Storage::Sparse(rows) => rows[i].clone(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.storage {
            Storage::Dense(m) => m.clone(),
            Storage::Sparse(rows) => {
                let mut m = DMatrix::zeros(self.n, self.n);
                for (i, row) in rows.iter().enumerate() {
                    for &(j, w) in row {
                        m[(i, j)] = w;
                    }
                }
                m
            }
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row_entries(i).iter().map(|&(_, w)| w).sum())
            .collect()
    }

    /// Relabels units: entry `(i, j)` of the result is `(perm[i], perm[j])` here.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "permutation length",
                expected: self.n,
                got: perm.len(),
            });
        }
        let mut inv = vec![usize::MAX; self.n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= self.n || inv[old] != usize::MAX {
                return Err(Error::InvalidInput("not a permutation".into()));
            }
            inv[old] = new;
        }
        let rows = perm
            .iter()
            .map(|&old| {
                self.row_entries(old)
                    .into_iter()
                    .map(|(j, w)| (inv[j], w))
                    .collect()
            })
            .collect();
        let mut out = Self::from_rows(self.n, rows, false)?;
        out.normalized = self.normalized;
        Ok(out)
    }

    /// Triplet text (`i j w` per line, 0-based) preceded by a JSON header line.
    pub fn to_triplets(&self) -> String {
        let header = serde_json::to_string(&WeightsHeader {
            n: self.n,
            normalized: self.normalized,
        })
        .expect("header serialises");
        let mut out = header;
        out.push('\n');
        for i in 0..self.n {
            for (j, w) in self.row_entries(i) {
                out.push_str(&format!("{i} {j} {w:e}\n"));
            }
        }
        out
    }

    /// Parses the output of [`SpatialWeights::to_triplets`]. Weights are taken
    /// verbatim; no re-normalisation happens on import.
    pub fn from_triplets(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        });
        let (first_ln, first) = lines
            .next()
            .ok_or_else(|| Error::Parse("empty weights file".into()))?;
        let header: WeightsHeader = serde_json::from_str(first)
            .map_err(|e| Error::Parse(format!("line {}: bad weights header: {e}", first_ln + 1)))?;
        let mut rows = vec![Vec::new(); header.n];
        for (ln, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parse_err = || Error::Parse(format!("line {}: expected `i j w`", ln + 1));
            if parts.len() != 3 {
                return Err(parse_err());
            }
            let i: usize = parts[0].parse().map_err(|_| parse_err())?;
            let j: usize = parts[1].parse().map_err(|_| parse_err())?;
            let w: f64 = parts[2].parse().map_err(|_| parse_err())?;
            if i >= header.n {
                return Err(Error::Parse(format!("line {}: row {i} out of range", ln + 1)));
            }
            rows[i].push((j, w));
        }
        let mut out = Self::from_rows(header.n, rows, false)?;
        out.normalized = header.normalized;
        Ok(out)
    }
}

/// Station coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum Coordinates {
    /// `(latitude, longitude)` in degrees; distances are great-circle km.
    Geographic(Vec<(f64, f64)>),
    /// Positions on a line; distances are absolute differences.
    Line(Vec<f64>),
}

impl Coordinates {
    pub fn len(&self) -> usize {
        match self {
            Coordinates::Geographic(v) => v.len(),
            Coordinates::Line(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        match self {
            Coordinates::Geographic(v) => haversine_km(v[i], v[j]),
            Coordinates::Line(v) => (v[i] - v[j]).abs(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        match self {
            Coordinates::Geographic(v) => Coordinates::Geographic(idx.iter().map(|&i| v[i]).collect()),
            Coordinates::Line(v) => Coordinates::Line(idx.iter().map(|&i| v[i]).collect()),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 coordinates, got {}",
                self.len()
            )));
        }
        let finite = match self {
            Coordinates::Geographic(v) => v.iter().all(|(a, b)| a.is_finite() && b.is_finite()),
            Coordinates::Line(v) => v.iter().all(|a| a.is_finite()),
        };
        if !finite {
            return Err(Error::NonFinite("coordinates"));
        }
        Ok(())
    }
}

/// Great-circle distance between two `(lat, lon)` points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Inverse-distance weights on a regular 1-D grid of `n` sites, row-normalised.
pub fn grid_inverse_distance_weights(n: usize) -> Result<SpatialWeights> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "grid weights need n >= 2, got {n}"
        )));
    }
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let total: f64 = (0..n).filter(|&k| k != i).map(|k| 1.0 / i.abs_diff(k) as f64).sum();
        for j in 0..n {
            if j != i {
                m[(i, j)] = (1.0 / i.abs_diff(j) as f64) / total;
            }
        }
    }
    Ok(SpatialWeights {
        n,
        storage: Storage::Dense(m),
        normalized: true,
    })
}

/// Adaptive bi-square weights over the `h` nearest neighbours of every site.
///
/// The bandwidth of site `i` is its distance to the `h`-th nearest neighbour,
/// so that neighbour gets kernel value 0 and is dropped. A row whose kernel
/// values are all zero (always the case for `h = 1`) falls back to uniform
/// weights over its `h` neighbours. Distance ties are broken by index.
pub fn knn_bisquare_weights(coords: &Coordinates, h: usize) -> Result<SpatialWeights> {
    coords.validate()?;
    let n = coords.len();
    if h == 0 || h >= n {
        return Err(Error::InvalidInput(format!(
            "neighbour count must satisfy 1 <= h < n = {n}, got {h}"
        )));
    }
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (coords.distance(i, j), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let neighbours = &others[..h];
        let bandwidth = neighbours[h - 1].0;
        if !(bandwidth > 0.0) {
            return Err(Error::Degenerate(format!(
                "bandwidth of site {i} is zero (duplicate coordinates)"
            )));
        }
        let mut row: Vec<(usize, f64)> = neighbours
            .iter()
            .map(|&(d, j)| (j, (1.0 - (d / bandwidth).powi(2)).powi(2)))
            .filter(|&(_, k)| k > 0.0)
            .collect();
        if row.is_empty() {
            row = neighbours.iter().map(|&(_, j)| (j, 1.0)).collect();
        }
        rows.push(row);
    }
    SpatialWeights::from_rows(n, rows, true)
}

/// `W y`.
pub fn lag(w: &SpatialWeights, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != w.n {
        return Err(Error::DimensionMismatch {
            what: "vector length vs weight matrix",
            expected: w.n,
            got: y.len(),
        });
    }
    Ok(match &w.storage {
        Storage::Dense(m) => (m * DVector::from_column_slice(y)).iter().copied().collect(),
        Storage::Sparse(rows) => rows
            .iter()
            .map(|row| row.iter().map(|&(j, v)| v * y[j]).sum())
            .collect(),
    })
}

/// `W X` for an `n x k` matrix.
pub fn lag_columns(w: &SpatialWeights, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != w.n {
        return Err(Error::DimensionMismatch {
            what: "matrix rows vs weight matrix",
            expected: w.n,
            got: x.nrows(),
        });
    }
    Ok(match &w.storage {
        Storage::Dense(m) => m * x,
        Storage::Sparse(rows) => DMatrix::from_fn(w.n, x.ncols(), |i, c| {
            rows[i].iter().map(|&(j, v)| v * x[(j, c)]).sum()
        }),
    })
}

/// LU factorisation of `I - rho W`, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct SpatialFilter {
    rho: f64,
    system: DMatrix<f64>,
    lu: LU<f64, Dyn, Dyn>,
}

impl SpatialFilter {
    pub fn new(w: &SpatialWeights, rho: f64) -> Result<Self> {
        if !rho.is_finite() {
            return Err(Error::NonFinite("rho"));
        }
        let n = w.n;
        let mut system = DMatrix::identity(n, n);
        for i in 0..n {
            for (j, v) in w.row_entries(i) {
                system[(i, j)] -= rho * v;
            }
        }
        let lu = system.clone().lu();
        if !lu.is_invertible() {
            return Err(Error::Singular(format!("I - rho W is singular at rho = {rho}")));
        }
        Ok(Self { rho, system, lu })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn n(&self) -> usize {
        self.system.nrows()
    }

    /// Solves `(I - rho W) x = b` with one step of iterative refinement.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "right-hand side length",
                expected: self.n(),
                got: b.len(),
            });
        }
        if self.rho == 0.0 {
            return Ok(b.to_vec());
        }
        let rhs = DVector::from_column_slice(b);
        let mut x = self
            .lu
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("LU solve failed".into()))?;
        let resid = &rhs - &self.system * &x;
        if let Some(dx) = self.lu.solve(&resid) {
            x += dx;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("non-finite solution".into()));
        }
        Ok(x.iter().copied().collect())
    }
}

/// `(I - rho W)^{-1} b` via an LU solve.
pub fn spatial_filter_solve(w: &SpatialWeights, rho: f64, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != w.n {
        return Err(Error::DimensionMismatch {
            what: "right-hand side length",
            expected: w.n,
            got: b.len(),
        });
    }
    if rho == 0.0 {
        return Ok(b.to_vec());
    }
    SpatialFilter::new(w, rho)?.solve(b)
}

/// Local Moran's I,
/// `I_i = n (y_i - ybar) / sum_k (y_k - ybar)^2 * sum_k w_ik (y_k - ybar)`.
pub fn local_morans_i(w: &SpatialWeights, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != w.n {
        return Err(Error::DimensionMismatch {
            what: "response length vs weight matrix",
            expected: w.n,
            got: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response"));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let dev: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let denom: f64 = dev.iter().map(|d| d * d).sum();
    if denom <= f64::EPSILON * n * mean.abs().max(1.0).powi(2) {
        return Err(Error::Degenerate(
            "response is constant; Moran's I denominator is zero".into(),
        ));
    }
    let lagged = lag(w, &dev)?;
    Ok(dev
        .iter()
        .zip(&lagged)
        .map(|(d, l)| n * d / denom * l)
        .collect())
}
