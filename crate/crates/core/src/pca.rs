//! SVD-based PCA of the non-target channels.
//!
//! Both routes decompose the centered data: the exact route eigendecomposes
//! the sample covariance with Jacobi rotations, the randomized route runs a
//! Gaussian range finder with power iterations on the centered matrix and
//! finishes with a small exact decomposition.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::linalg::{orthonormalize_columns, symmetric_eigen};
use crate::numeric::{gaussian, matmul, Matrix, NumericError, SeededRng};

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PcaError {
    #[error("need at least 2 rows to center, got {0}")]
    InsufficientData(usize),
    #[error("component count {requested} outside 1..={available}")]
    ComponentRange { requested: usize, available: usize },
    #[error("expected {expected} columns, got {actual}")]
    ColumnMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("model io: {0}")]
    Io(#[from] std::io::Error),
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PcaMethod {
    Exact,
    Randomized { oversample: usize, power_iters: usize },
}

impl PcaMethod {
    /// Oversampling 10 (capped at `M - P` when fitting) and 4 power iterations.
    pub fn randomized() -> Self {
        PcaMethod::Randomized {
            oversample: 10,
            power_iters: 4,
        }
    }
}

impl Default for PcaMethod {
    fn default() -> Self {
        Self::randomized()
    }
}

/// A fitted reduction from `M` channels to `P` component scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// Names of the fitted channels, checked when reducing a table.
    pub channel_names: Vec<String>,
    pub means: Vec<f64>,
    /// `P × M`; row `p` is the `p`-th principal direction.
    pub components: Matrix,
    pub singular_values: Vec<f64>,
    /// Covariance eigenvalues of the kept components (denominator `T - 1`).
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub total_variance: f64,
    /// `true` where a component was zero-filled because the data had too
    /// little rank to support it.
    pub degenerate: Vec<bool>,
    pub n_samples: usize,
    pub method: PcaMethod,
    pub seed: u64,
}

/// One row of an information-kept table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoKeptRecord {
    pub dataset_name: String,
    pub m_variables: usize,
    pub p_components: usize,
    pub information_kept: f64,
    pub dataset_ratio: f64,
}

impl InfoKeptRecord {
    pub fn new(dataset_name: &str, m_variables: usize, p_components: usize, kept: f64) -> Self {
        Self {
            dataset_name: dataset_name.to_string(),
            m_variables,
            p_components,
            information_kept: kept,
            dataset_ratio: p_components as f64 / m_variables as f64,
        }
    }
}

/// Truncated SVD `A ≈ U diag(s) Vᵗ`; `v` stores the right vectors as rows.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

/// Subtracts each column's mean.
pub fn center(h: &Matrix) -> Result<(Matrix, Vec<f64>), PcaError> {
    if h.rows() < 2 {
        return Err(PcaError::InsufficientData(h.rows()));
    }
    let means = h.column_means();
    let mut centered = h.clone();
    for r in 0..h.rows() {
        for (v, m) in centered.row_mut(r).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    Ok((centered, means))
}

/// Eigenvalues (descending) and eigenvectors (as columns) of a symmetric matrix.
pub fn exact_eig_sym(c: &Matrix) -> Result<(Vec<f64>, Matrix), PcaError> {
    let e = symmetric_eigen(c)?;
    Ok((e.values, e.vectors))
}

/// Randomized truncated SVD with a Gaussian sketch of `rank + oversample`
/// columns and `power_iters` re-orthonormalized power iterations.
///
/// Oversampling is capped so the sketch never exceeds `min(rows, cols)`.
pub fn randomized_svd(
    a: &Matrix,
    rank: usize,
    oversample: usize,
    power_iters: usize,
    rng: &mut SeededRng,
) -> Result<Svd, PcaError> {
    let limit = a.rows().min(a.cols());
    if rank == 0 || rank > limit {
        return Err(PcaError::ComponentRange {
            requested: rank,
            available: limit,
        });
    }
    let sketch = rank + oversample.min(limit - rank);
    let omega = gaussian(rng, a.cols(), sketch);
    let at = a.transpose();
    let mut q = orthonormalize_columns(&matmul(a, &omega)?);
    for _ in 0..power_iters {
        let z = orthonormalize_columns(&matmul(&at, &q)?);
        q = orthonormalize_columns(&matmul(a, &z)?);
    }
    // B = Qᵀ A is small (sketch × cols); decompose via eig(B Bᵀ).
    let b = matmul(&q.transpose(), a)?;
    let gram = matmul(&b, &b.transpose())?;
    let (values, vectors) = exact_eig_sym(&gram)?;
    let top = values[0].max(0.0);

    let mut singular_values = Vec::with_capacity(rank);
    let mut v_cols = Matrix::zeros(a.cols(), rank);
    let mut u = Matrix::zeros(a.rows(), rank);
    for (i, &value) in values.iter().take(rank).enumerate() {
        let lambda = value.max(0.0);
        if top == 0.0 || lambda <= RANK_TOLERANCE * top {
            singular_values.push(0.0);
            continue;
        }
        let sigma = lambda.sqrt();
        singular_values.push(sigma);
        let ub = vectors.slice_cols(i, 1);
        let vi = matmul(&b.transpose(), &ub)?.scale(1.0 / sigma);
        for r in 0..a.cols() {
            v_cols.set(r, i, vi.get(r, 0));
        }
        let ui = matmul(&q, &ub)?;
        for r in 0..a.rows() {
            u.set(r, i, ui.get(r, 0));
        }
    }
    let v_cols = orthonormalize_columns(&v_cols);
    Ok(Svd {
        u,
        singular_values,
        v: v_cols.transpose(),
    })
}

/// Fits PCA with `components` directions.
pub fn fit(
    h: &Matrix,
    components: usize,
    method: PcaMethod,
    rng: &mut SeededRng,
) -> Result<PcaModel, PcaError> {
    let (t, m) = h.shape();
    if components == 0 || components > m {
        return Err(PcaError::ComponentRange {
            requested: components,
            available: m,
        });
    }
    let (centered, means) = center(h)?;
    if t <= m {
        log::warn!("PCA fit with T={t} <= M={m}; covariance is rank deficient");
    }
    let denom = (t - 1) as f64;
    let total_variance = centered.as_slice().iter().map(|v| v * v).sum::<f64>() / denom;

    let (mut directions, mut variances) = match method {
        PcaMethod::Exact => {
            let cov = matmul(&centered.transpose(), &centered)?.scale(1.0 / denom);
            let cov = symmetrized(&cov);
            let (values, vectors) = exact_eig_sym(&cov)?;
            let dirs = vectors.slice_cols(0, components).transpose();
            (dirs, values[..components].to_vec())
        }
        PcaMethod::Randomized {
            oversample,
            power_iters,
        } => {
            if components > t {
                return Err(PcaError::ComponentRange {
                    requested: components,
                    available: t,
                });
            }
            let svd = randomized_svd(&centered, components, oversample, power_iters, rng)?;
            let vars = svd.singular_values.iter().map(|s| s * s / denom).collect();
            (svd.v, vars)
        }
    };

    let top = variances.first().copied().unwrap_or(0.0).max(0.0);
    let mut degenerate = vec![false; components];
    for p in 0..components {
        if top == 0.0 || variances[p] <= RANK_TOLERANCE * top {
            degenerate[p] = true;
            variances[p] = 0.0;
            directions.row_mut(p).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    canonicalize_signs(&mut directions);

    let explained_variance_ratio = variances
        .iter()
        .map(|v| if total_variance > 0.0 { (v / total_variance).clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    let singular_values = variances.iter().map(|v| (v * denom).sqrt()).collect();

    Ok(PcaModel {
        channel_names: Vec::new(),
        means,
        components: directions,
        singular_values,
        explained_variance: variances,
        explained_variance_ratio,
        total_variance,
        degenerate,
        n_samples: t,
        method,
        seed: rng.seed(),
    })
}

fn symmetrized(a: &Matrix) -> Matrix {
    let n = a.rows();
    let mut s = a.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a.get(i, j) + a.get(j, i));
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    s
}

/// Flips each row so its largest-magnitude entry is nonnegative; ties go to
/// the lowest index.
fn canonicalize_signs(rows: &mut Matrix) {
    for r in 0..rows.rows() {
        let row = rows.row(r);
        let mut best = 0;
        for (j, v) in row.iter().enumerate() {
            if v.abs() > row[best].abs() {
                best = j;
            }
        }
        if row[best] < 0.0 {
            rows.row_mut(r).iter_mut().for_each(|v| *v = -*v);
        }
    }
}

impl PcaModel {
    pub fn with_channel_names(mut self, names: Vec<String>) -> Self {
        self.channel_names = names;
        self
    }

    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    pub fn n_features(&self) -> usize {
        self.components.cols()
    }

    /// Scores of `h` on the kept components.
    pub fn transform(&self, h: &Matrix) -> Result<Matrix, PcaError> {
        if h.cols() != self.n_features() {
            return Err(PcaError::ColumnMismatch {
                expected: self.n_features(),
                actual: h.cols(),
            });
        }
        let mut centered = h.clone();
        for r in 0..h.rows() {
            for (v, m) in centered.row_mut(r).iter_mut().zip(&self.means) {
                *v -= m;
            }
        }
        Ok(crate::numeric::ops::matmul_nt(&centered, &self.components)?)
    }

    /// `scores · components + means`.
    pub fn inverse_transform(&self, scores: &Matrix) -> Result<Matrix, PcaError> {
        if scores.cols() != self.n_components() {
            return Err(PcaError::ColumnMismatch {
                expected: self.n_components(),
                actual: scores.cols(),
            });
        }
        let mut out = matmul(scores, &self.components)?;
        for r in 0..out.rows() {
            for (v, m) in out.row_mut(r).iter_mut().zip(&self.means) {
                *v += m;
            }
        }
        Ok(out)
    }

    /// Cumulative explained-variance ratio of the first `p` components.
    pub fn information_kept(&self, p: usize) -> Result<f64, PcaError> {
        if p == 0 || p > self.n_components() {
            return Err(PcaError::ComponentRange {
                requested: p,
                available: self.n_components(),
            });
        }
        Ok(self.explained_variance_ratio[..p].iter().sum())
    }

    pub fn info_kept_record(&self, dataset_name: &str) -> InfoKeptRecord {
        let p = self.n_components();
        InfoKeptRecord::new(
            dataset_name,
            self.n_features(),
            p,
            self.explained_variance_ratio.iter().sum(),
        )
    }

    pub fn to_json(&self) -> Result<String, PcaError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, PcaError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), PcaError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PcaError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
