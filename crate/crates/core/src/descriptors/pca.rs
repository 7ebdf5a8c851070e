//! Principal component projection used to decorrelate features before the
//! diagonal-covariance mixture model.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::math::Matrix;

const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `D_raw x D_pca`, orthonormal columns sorted by decreasing variance.
    pub basis: Matrix,
    pub explained_variance: Vec<f64>,
}

/// Fits PCA on the rows of `data`, keeping `target_dim` components.
///
/// Variances use the unbiased `n - 1` normaliser. Each basis column is
/// signed so that its largest-magnitude entry is positive.
pub fn fit_pca(data: &Matrix, target_dim: usize) -> Result<PcaModel> {
    fit(data, target_dim, false)
}

/// Like [`fit_pca`] but keeps fewer components when the data cannot
/// support `target_dim` of them.
pub fn fit_pca_at_most(data: &Matrix, target_dim: usize) -> Result<PcaModel> {
    let cap = target_dim.min(data.cols()).min(data.rows().saturating_sub(1));
    fit(data, cap, true)
}

fn fit(data: &Matrix, mut target_dim: usize, clamp: bool) -> Result<PcaModel> {
    let (n, d) = (data.rows(), data.cols());
    if target_dim == 0 {
        return Err(Error::invalid("PCA target dimension must be at least 1"));
    }
    if target_dim > d {
        return Err(Error::invalid(format!(
            "PCA target dimension {target_dim} exceeds input dimension {d}"
        )));
    }
    if n <= target_dim {
        return Err(Error::invalid(format!(
            "PCA needs more samples ({n}) than target dimension ({target_dim})"
        )));
    }

    let mut mean = vec![0.0; d];
    for row in data.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in data.iter_rows() {
        for (c, (v, m)) in centered.iter_mut().zip(row.iter().zip(&mean)) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..d {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > RANK_TOL * top.max(f64::MIN_POSITIVE))
        .count();
    if rank < target_dim && clamp && rank > 0 {
        target_dim = rank;
    }
    if rank < target_dim {
        return Err(Error::numerical(format!(
            "data rank {rank} is below the requested PCA dimension {target_dim}; at most {rank} components are achievable"
        )));
    }

    let mut basis = Matrix::zeros(d, target_dim);
    let mut explained_variance = Vec::with_capacity(target_dim);
    for (k, &src) in order.iter().take(target_dim).enumerate() {
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..d {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            basis.set(i, k, sign * col[i]);
        }
        explained_variance.push(eig.eigenvalues[src]);
    }
    Ok(PcaModel {
        mean,
        basis,
        explained_variance,
    })
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.cols()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "PCA input has dimension {}, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut out = vec![0.0; self.output_dim()];
        for (i, (xi, mi)) in x.iter().zip(&self.mean).enumerate() {
            let c = xi - mi;
            if c == 0.0 {
                continue;
            }
            for (o, b) in out.iter_mut().zip(self.basis.row(i)) {
                *o += c * b;
            }
        }
        Ok(out)
    }

    pub fn project_all(&self, data: &Matrix) -> Result<Matrix> {
        let mut out = Vec::with_capacity(data.rows() * self.output_dim());
        for row in data.iter_rows() {
            out.extend(self.project(row)?);
        }
        Ok(Matrix::from_vec(data.rows(), self.output_dim(), out))
    }
}
