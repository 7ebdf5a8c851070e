use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kmeans::{kmeans, nearest, KMeansParams};
use crate::math::Matrix;

/// How photos become topic-model words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VocabMode {
    /// Nearest centroid of a k-means codebook over descriptors.
    #[default]
    Codebook,
    /// Every photo is its own word.
    PhotoId,
}

impl FromStr for VocabMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "codebook" => Ok(VocabMode::Codebook),
            "photo-id" => Ok(VocabMode::PhotoId),
            other => Err(format!("unknown vocabulary mode `{other}` (expected codebook|photo-id)")),
        }
    }
}

impl fmt::Display for VocabMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VocabMode::Codebook => "codebook",
            VocabMode::PhotoId => "photo-id",
        })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VocabCodebook {
    pub centroids: Matrix,
}

impl VocabCodebook {
    pub fn size(&self) -> usize {
        self.centroids.rows()
    }

    /// Nearest centroid, lowest index on ties.
    pub fn tokenize(&self, descriptor: &[f64]) -> Result<usize> {
        if descriptor.len() != self.centroids.cols() {
            return Err(Error::invalid(format!(
                "descriptor dimension {} does not match codebook dimension {}",
                descriptor.len(),
                self.centroids.cols()
            )));
        }
        Ok(nearest(&self.centroids, descriptor).0)
    }
}

pub fn build_codebook(descriptors: &Matrix, vocab: usize, max_iters: usize, seed: u64) -> Result<VocabCodebook> {
    if vocab < 2 {
        return Err(Error::invalid("vocabulary size must be at least 2"));
    }
    if vocab > descriptors.rows() {
        return Err(Error::invalid(format!(
            "vocabulary size {vocab} exceeds the {} training descriptors",
            descriptors.rows()
        )));
    }
    let params = KMeansParams {
        max_iters,
        ..KMeansParams::new(vocab)
    };
    let km = kmeans(descriptors, &params, &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok(VocabCodebook {
        centroids: km.centroids,
    })
}
