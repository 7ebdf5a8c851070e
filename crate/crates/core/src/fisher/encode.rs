use super::gmm::{soft_assign, GmmModel};
use crate::error::{Error, Result};
use crate::math::order_invariant_mean;

#[derive(Debug, Clone, PartialEq)]
pub struct FisherVector {
    /// `[phi_1 .. phi_G, psi_1 .. psi_G]`, length `2 G D`.
    pub values: Vec<f64>,
    pub normalized: bool,
}

/// Unnormalised Fisher vector of a single feature: first- and second-order
/// deviations from every component, weighted by its soft assignment.
pub fn fisher_encode(gmm: &GmmModel, x: &[f64]) -> Result<FisherVector> {
    let gamma = soft_assign(gmm, x)?;
    let (g_count, d) = (gmm.components(), gmm.dim());
    let mut values = vec![0.0; 2 * g_count * d];
    let (first, second) = values.split_at_mut(g_count * d);
    for g in 0..g_count {
        if gamma[g] == 0.0 {
            continue;
        }
        let pi = gmm.weights[g];
        let a = gamma[g] / pi.sqrt();
        let b = gamma[g] / (2.0 * pi).sqrt();
        let (mu, var) = (gmm.means.row(g), gmm.variances.row(g));
        for k in 0..d {
            let z = (x[k] - mu[k]) / var[k].sqrt();
            first[g * d + k] = a * z;
            second[g * d + k] = b * (z * z - 1.0);
        }
    }
    Ok(FisherVector {
        values,
        normalized: false,
    })
}

/// Signed square root scaled by the inverse root of the ℓ1 norm, which
/// leaves the result with unit ℓ2 norm. A zero vector is returned as is and
/// flagged unnormalised.
pub fn normalize_fisher(pooled: &[f64]) -> FisherVector {
    let l1: f64 = pooled.iter().map(|v| v.abs()).sum();
    if l1 == 0.0 {
        return FisherVector {
            values: pooled.to_vec(),
            normalized: false,
        };
    }
    let scale = 1.0 / l1.sqrt();
    FisherVector {
        values: pooled
            .iter()
            .map(|&v| v.signum() * v.abs().sqrt() * scale)
            .collect(),
        normalized: true,
    }
}

/// Mean Fisher vector of the set, then normalised.
pub fn pool_and_normalize<V: AsRef<[f64]>>(gmm: &GmmModel, features: &[V]) -> Result<FisherVector> {
    if features.is_empty() {
        return Err(Error::invalid("cannot pool an empty feature set"));
    }
    let encoded = features
        .iter()
        .map(|x| fisher_encode(gmm, x.as_ref()).map(|fv| fv.values))
        .collect::<Result<Vec<_>>>()?;
    Ok(normalize_fisher(&order_invariant_mean(&encoded)))
}

pub fn average_pool<V: AsRef<[f64]>>(features: &[V]) -> Result<Vec<f64>> {
    let first = features
        .first()
        .ok_or_else(|| Error::invalid("cannot pool an empty feature set"))?;
    let dim = first.as_ref().len();
    if features.iter().any(|f| f.as_ref().len() != dim) {
        return Err(Error::invalid("pooled features differ in dimension"));
    }
    Ok(order_invariant_mean(features))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Matrix;
    use proptest::prelude::*;

    fn unit_gmm() -> GmmModel {
        GmmModel {
            weights: vec![1.0],
            means: Matrix::from_rows(&[vec![1.0, -2.0, 0.5]]),
            variances: Matrix::from_rows(&[vec![1.0, 4.0, 0.25]]),
        }
    }

    #[test]
    fn encoding_at_the_mean() {
        let fv = fisher_encode(&unit_gmm(), &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(&fv.values[..3], &[0.0, 0.0, 0.0]);
        for v in &fv.values[3..] {
            assert!((v + 1.0 / 2f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn far_component_blocks_are_zero() {
        let gmm = GmmModel {
            weights: vec![0.5, 0.5],
            means: Matrix::from_rows(&[vec![0.0], vec![1e4]]),
            variances: Matrix::from_rows(&[vec![1.0], vec![1.0]]),
        };
        let fv = fisher_encode(&gmm, &[0.3]).unwrap();
        assert_eq!(fv.values[1], 0.0);
        assert_eq!(fv.values[3], 0.0);
        assert!(fv.values[0] != 0.0);
    }

    #[test]
    fn hand_evaluated_normalization() {
        let fv = normalize_fisher(&[4.0, -1.0]);
        let s5 = 5f64.sqrt();
        assert!((fv.values[0] - 2.0 / s5).abs() < 1e-15);
        assert!((fv.values[1] + 1.0 / s5).abs() < 1e-15);
        assert!(fv.normalized);
    }

    #[test]
    fn zero_pool_is_flagged() {
        let fv = normalize_fisher(&[0.0, 0.0]);
        assert!(!fv.normalized);
        assert_eq!(fv.values, vec![0.0, 0.0]);
    }

    #[test]
    fn singleton_pool_is_identity_before_normalization() {
        let gmm = unit_gmm();
        let x = [0.2, 0.1, -0.7];
        let single = fisher_encode(&gmm, &x).unwrap();
        let pooled = pool_and_normalize(&gmm, &[x]).unwrap();
        assert_eq!(pooled, normalize_fisher(&single.values));
    }

    #[test]
    fn average_pool_examples() {
        assert_eq!(average_pool(&[vec![1.0, 1.0], vec![3.0, 3.0]]).unwrap(), vec![2.0, 2.0]);
        assert_eq!(average_pool(&[vec![0.3, -7.0]]).unwrap(), vec![0.3, -7.0]);
        assert!(average_pool::<Vec<f64>>(&[]).is_err());
        assert!(pool_and_normalize::<Vec<f64>>(&unit_gmm(), &[]).is_err());
    }

    #[test]
    fn permuting_components_permutes_blocks() {
        let gmm = GmmModel {
            weights: vec![0.2, 0.5, 0.3],
            means: Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![-1.0, 0.5]]),
            variances: Matrix::from_rows(&[vec![1.0, 0.5], vec![2.0, 1.0], vec![0.7, 0.9]]),
        };
        let perm = [2, 0, 1];
        let permuted = GmmModel {
            weights: perm.iter().map(|&g| gmm.weights[g]).collect(),
            means: gmm.means.select_rows(&perm),
            variances: gmm.variances.select_rows(&perm),
        };
        let x = [0.4, 0.2];
        let a = fisher_encode(&gmm, &x).unwrap().values;
        let b = fisher_encode(&permuted, &x).unwrap().values;
        let (g, d) = (3, 2);
        for (new, &old) in perm.iter().enumerate() {
            for k in 0..d {
                assert!((b[new * d + k] - a[old * d + k]).abs() < 1e-15);
                assert!((b[g * d + new * d + k] - a[g * d + old * d + k]).abs() < 1e-15);
            }
        }
    }

    proptest! {
        #[test]
        fn normalized_output_has_unit_norm(v in proptest::collection::vec(-1e3f64..1e3, 1..64)) {
            let fv = normalize_fisher(&v);
            if fv.normalized {
                let n: f64 = fv.values.iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!((n - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn pooling_ignores_order(xs in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 3), 1..8),
                                 rot in 0usize..8) {
            let gmm = unit_gmm();
            let mut ys = xs.clone();
            let len = ys.len();
            ys.rotate_left(rot % len);
            prop_assert_eq!(pool_and_normalize(&gmm, &xs).unwrap(), pool_and_normalize(&gmm, &ys).unwrap());
        }
    }
}
