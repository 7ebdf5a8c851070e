use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::FactorModel;
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansParams};
use crate::math::Matrix;

/// k-means clusters of photo latent factors used as training labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoClassAssignment {
    pub photo_ids: Vec<String>,
    pub classes: Vec<usize>,
    pub num_classes: usize,
    /// `C x L`.
    pub centroids: Matrix,
    pub objective_trace: Vec<f64>,
}

impl PseudoClassAssignment {
    /// `photo_id<TAB>class_index` lines.
    pub fn to_label_file(&self) -> String {
        let mut out = String::new();
        for (id, c) in self.photo_ids.iter().zip(&self.classes) {
            writeln!(out, "{id}\t{c}").unwrap();
        }
        out
    }
}

/// Parses a label file; `#` lines are comments.
pub fn parse_label_file(text: &str, source: &str) -> Result<Vec<(String, usize)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: source.to_owned(),
            line: i + 1,
            message,
        };
        let (id, class) = line
            .split_once('\t')
            .ok_or_else(|| err("expected `photo_id<TAB>class_index`".into()))?;
        let class = class
            .trim()
            .parse()
            .map_err(|_| err(format!("bad class index `{class}`")))?;
        out.push((id.to_owned(), class));
    }
    Ok(out)
}

pub fn pseudo_classes(model: &FactorModel, num_classes: usize, seed: u64) -> Result<PseudoClassAssignment> {
    if num_classes > model.photos.len() {
        return Err(Error::invalid(format!(
            "{num_classes} pseudo-classes requested but only {} photos",
            model.photos.len()
        )));
    }
    let km = kmeans(
        &model.v,
        &KMeansParams::new(num_classes),
        &mut ChaCha8Rng::seed_from_u64(seed),
    )?;
    Ok(PseudoClassAssignment {
        photo_ids: model.photos.clone(),
        classes: km.assignments,
        num_classes,
        centroids: km.centroids,
        objective_trace: km.objective_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn model_with_v(v: Matrix) -> FactorModel {
        FactorModel {
            users: vec!["u".into()],
            photos: (0..v.rows()).map(|i| format!("p{i}")).collect(),
            p: Matrix::zeros(1, v.cols()),
            v,
            mf_lambda: 0.0,
            trace: vec![],
            rejected_epochs: 0,
        }
    }

    #[test]
    fn two_photos_two_singletons() {
        let m = model_with_v(Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]));
        let pc = pseudo_classes(&m, 2, 0).unwrap();
        assert_ne!(pc.classes[0], pc.classes[1]);
    }

    #[test]
    fn too_many_classes_rejected() {
        let m = model_with_v(Matrix::from_rows(&[vec![0.0, 1.0]]));
        assert!(pseudo_classes(&m, 2, 0).is_err());
    }

    #[test]
    fn planted_clusters_recovered_under_best_permutation() {
        let centers = [[0.0, 0.0, 0.0], [5.0, 5.0, 0.0], [0.0, 5.0, 5.0]];
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let noise = Normal::new(0.0, 0.5).unwrap();
            let mut rows = Vec::new();
            let mut truth = Vec::new();
            for (c, center) in centers.iter().enumerate() {
                for _ in 0..40 {
                    rows.push(center.iter().map(|x| x + noise.sample(&mut rng)).collect::<Vec<f64>>());
                    truth.push(c);
                }
            }
            let pc = pseudo_classes(&model_with_v(Matrix::from_rows(&rows)), 3, seed).unwrap();
            let best = perms
                .iter()
                .map(|perm| truth.iter().zip(&pc.classes).filter(|(&t, &c)| perm[t] == c).count())
                .max()
                .unwrap();
            assert!(best as f64 / truth.len() as f64 >= 0.95, "seed {seed}: {best}");
            for w in pc.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9 * w[0]);
            }
        }
    }

    #[test]
    fn label_file_round_trip() {
        let m = model_with_v(Matrix::from_rows(&[vec![0.0], vec![1.0], vec![5.0]]));
        let pc = pseudo_classes(&m, 2, 1).unwrap();
        let parsed = parse_label_file(&format!("# comment\n{}", pc.to_label_file()), "x").unwrap();
        assert_eq!(parsed.len(), 3);
        assert!(parsed.iter().zip(&pc.classes).all(|((_, a), b)| a == b));
    }
}
