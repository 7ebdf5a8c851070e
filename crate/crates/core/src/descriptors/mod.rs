//! Per-photo descriptor vectors, the binary feature codec and PCA.

pub mod baseline;
pub mod codec;
pub mod pca;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::math::Matrix;

pub use baseline::{compute_baseline_descriptor, describe_image_file, BASELINE_DIM};
pub use codec::{read_features, write_features};
pub use pca::{fit_pca, fit_pca_at_most, PcaModel};

/// A descriptor for one photo.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorVector {
    pub photo_id: String,
    pub values: Vec<f64>,
}

/// A set of equally sized `f32` rows keyed by photo id, the in-memory form of
/// a feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    ids: Vec<String>,
    dim: usize,
    values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn from_parts(ids: Vec<String>, dim: usize, values: Vec<f32>) -> Result<Self> {
        if ids.len() * dim != values.len() {
            return Err(Error::format(format!(
                "{} rows of dimension {dim} need {} values, got {}",
                ids.len(),
                ids.len() * dim,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value in row `{}`",
                ids[pos / dim.max(1)]
            )));
        }
        Ok(Self { ids, dim, values })
    }

    pub fn from_matrix(ids: Vec<String>, m: &Matrix) -> Result<Self> {
        let values = m.as_slice().iter().map(|&v| v as f32).collect();
        Self::from_parts(ids, m.cols(), values)
    }

    pub fn from_descriptors(rows: &[DescriptorVector]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.values.len());
        let mut ids = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.values.len() != dim {
                return Err(Error::invalid(format!(
                    "descriptor `{}` has dimension {}, expected {dim}",
                    r.photo_id,
                    r.values.len()
                )));
            }
            ids.push(r.photo_id.clone());
            values.extend(r.values.iter().map(|&v| v as f32));
        }
        Self::from_parts(ids, dim, values)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.len(),
            self.dim,
            self.values.iter().map(|&v| v as f64).collect(),
        )
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    /// Rows for `ids`, in that order, as an `f64` matrix.
    pub fn select(&self, ids: &[String]) -> Result<Matrix> {
        let index = self.index();
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let i = *index
                .get(id.as_str())
                .ok_or_else(|| Error::invalid(format!("no feature row for photo `{id}`")))?;
            data.extend(self.row(i).iter().map(|&v| v as f64));
        }
        Ok(Matrix::from_vec(ids.len(), self.dim, data))
    }

    /// Appends the rows of `other`; both sides must share a dimension and
    /// may not repeat ids.
    pub fn merge(&mut self, other: &FeatureMatrix) -> Result<()> {
        if !self.is_empty() && !other.is_empty() && self.dim != other.dim {
            return Err(Error::format(format!(
                "dimension mismatch on merge: {} vs {}",
                self.dim, other.dim
            )));
        }
        if self.is_empty() {
            self.dim = other.dim;
        }
        let index: std::collections::HashSet<&str> = self.ids.iter().map(String::as_str).collect();
        if let Some(dup) = other.ids.iter().find(|id| index.contains(id.as_str())) {
            return Err(Error::invalid(format!("duplicate photo id `{dup}` on merge")));
        }
        self.ids.extend(other.ids.iter().cloned());
        self.values.extend_from_slice(&other.values);
        Ok(())
    }
}
