use super::FactorModel;
use crate::error::{Error, Result};
use crate::math::dot;

/// `<P(u, .), V(., j)>` for every photo `j`, aligned with `model.photos`.
pub fn confidence_scores(model: &FactorModel, user: &str) -> Result<Vec<f64>> {
    let u = model
        .user_position(user)
        .ok_or_else(|| Error::invalid(format!("unknown user `{user}` in factor model")))?;
    let pu = model.p.row(u);
    Ok(model.v.iter_rows().map(|vj| dot(pu, vj)).collect())
}

/// The query photo followed by its expansion, highest score first.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MultiQuerySet {
    pub query: String,
    pub expanded: Vec<String>,
    pub scores: Vec<f64>,
    /// Fewer than `K` candidates were available.
    pub short: bool,
}

impl MultiQuerySet {
    /// Query first, then the expansion.
    pub fn members(&self) -> Vec<String> {
        std::iter::once(self.query.clone())
            .chain(self.expanded.iter().cloned())
            .collect()
    }
}

/// Top-`k` photos by score, ties broken by ascending photo id, never
/// including the query itself.
pub fn expand_query(photos: &[String], scores: &[f64], k: usize, query: &str) -> Result<MultiQuerySet> {
    if k == 0 {
        return Err(Error::invalid("expansion size K must be at least 1"));
    }
    if photos.len() != scores.len() {
        return Err(Error::invalid("scores and photo ids differ in length"));
    }
    let mut order: Vec<usize> = (0..photos.len()).filter(|&j| photos[j] != query).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| photos[a].cmp(&photos[b])));
    let short = order.len() < k;
    order.truncate(k);
    Ok(MultiQuerySet {
        query: query.to_owned(),
        expanded: order.iter().map(|&j| photos[j].clone()).collect(),
        scores: order.iter().map(|&j| scores[j]).collect(),
        short,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Matrix;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn model(p: Matrix, v: Matrix) -> FactorModel {
        FactorModel {
            users: (0..p.rows()).map(|i| format!("u{i}")).collect(),
            photos: (0..v.rows()).map(|i| format!("p{i}")).collect(),
            p,
            v,
            mf_lambda: 0.0,
            trace: vec![],
            rejected_epochs: 0,
        }
    }

    #[test]
    fn score_is_inner_product() {
        let m = model(Matrix::from_rows(&[vec![1.0, 0.0]]), Matrix::from_rows(&[vec![0.5, 0.2]]));
        assert_eq!(confidence_scores(&m, "u0").unwrap(), vec![0.5]);
    }

    #[test]
    fn zero_user_scores_zero() {
        let m = model(Matrix::from_rows(&[vec![0.0, 0.0]]), Matrix::from_rows(&[vec![0.5, 0.2], vec![3.0, 1.0]]));
        assert_eq!(confidence_scores(&m, "u0").unwrap(), vec![0.0, 0.0]);
        assert!(confidence_scores(&m, "nobody").is_err());
    }

    #[test]
    fn scores_match_brute_force_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = Matrix::random_uniform(4, 3, 0.0, 1.0, &mut rng);
        let v = Matrix::random_uniform(5, 3, 0.0, 1.0, &mut rng);
        let m = model(p.clone(), v.clone());
        for u in 0..4 {
            let got = confidence_scores(&m, &format!("u{u}")).unwrap();
            for j in 0..5 {
                let mut want = 0.0;
                for a in 0..3 {
                    want += p.get(u, a) * v.get(j, a);
                }
                assert!((got[j] - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn single_best_plus_query() {
        let set = expand_query(&ids(&["q", "a", "b"]), &[5.0, 0.3, 0.9], 1, "q").unwrap();
        assert_eq!(set.members(), ids(&["q", "b"]));
        assert!(!set.short);
    }

    #[test]
    fn ties_break_by_photo_id() {
        let set = expand_query(&ids(&["b", "a", "c"]), &[0.9, 0.9, 0.1], 2, "zzz").unwrap();
        assert_eq!(set.expanded, ids(&["a", "b"]));
    }

    #[test]
    fn short_pool_is_flagged() {
        let set = expand_query(&ids(&["q", "a"]), &[1.0, 0.5], 40, "q").unwrap();
        assert_eq!(set.expanded, ids(&["a"]));
        assert!(set.short);
    }

    proptest! {
        #[test]
        fn selection_invariant_to_positive_rescaling(
            scores in proptest::collection::vec(0.0f64..10.0, 1..30),
            factor in 0.01f64..100.0,
            k in 1usize..10,
        ) {
            let photos: Vec<String> = (0..scores.len()).map(|i| format!("p{i:02}")).collect();
            let scaled: Vec<f64> = scores.iter().map(|s| s * factor).collect();
            let a = expand_query(&photos, &scores, k, "p00").unwrap();
            let b = expand_query(&photos, &scaled, k, "p00").unwrap();
            prop_assert_eq!(a.expanded, b.expanded);
        }
    }
}
