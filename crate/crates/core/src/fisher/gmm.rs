use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::descriptors::codec::{decode_blocks, encode_blocks, indexed_ids};
use crate::descriptors::FeatureMatrix;
use crate::error::{Error, Result};
use crate::kmeans::kmeans_plus_plus;
use crate::math::{log_sum_exp, Matrix};

pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub components: usize,
    pub max_iters: usize,
    /// Relative log-likelihood improvement below which EM stops.
    pub tol: f64,
    pub seed: u64,
}

impl GmmParams {
    pub fn new(components: usize) -> Self {
        Self {
            components,
            max_iters: 200,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// `G x D`.
    pub means: Matrix,
    /// `G x D`, each entry at least [`VARIANCE_FLOOR`] after fitting.
    pub variances: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Total log-likelihood after each E-step.
    pub log_likelihood_trace: Vec<f64>,
}

impl GmmModel {
    /// Header `G D`, then weight (`G x 1`), mean and variance blocks.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let g = self.components();
        let weights = Matrix::from_vec(g, 1, self.weights.clone());
        let ids = indexed_ids("g", g);
        let blocks = [
            FeatureMatrix::from_matrix(ids.clone(), &weights)?,
            FeatureMatrix::from_matrix(ids.clone(), &self.means)?,
            FeatureMatrix::from_matrix(ids, &self.variances)?,
        ];
        encode_blocks(&format!("{} {}", g, self.means.cols()), &blocks)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let (header, blocks) = decode_blocks(buf, 3)?;
        let bad = || Error::format(format!("bad mixture header `{header}`"));
        let mut fields = header.split_whitespace().map(|f| f.parse::<usize>());
        let (g, d) = match (fields.next(), fields.next(), fields.next()) {
            (Some(Ok(g)), Some(Ok(d)), None) => (g, d),
            _ => return Err(bad()),
        };
        let shapes = [(g, 1), (g, d), (g, d)];
        if blocks.iter().zip(shapes).any(|(b, (r, c))| b.len() != r || b.dim() != c) {
            return Err(Error::format("mixture blocks do not match header"));
        }
        Ok(GmmModel {
            weights: blocks[0].to_matrix().as_slice().to_vec(),
            means: blocks[1].to_matrix(),
            variances: blocks[2].to_matrix(),
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    /// `log pi_g + log N(x; mu_g, sigma_g^2)` for every component.
    pub fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        (0..self.components())
            .map(|g| {
                let (mu, var) = (self.means.row(g), self.variances.row(g));
                let mut acc = 0.0;
                for ((xi, m), v) in x.iter().zip(mu).zip(var) {
                    let d = xi - m;
                    acc += half_log_2pi + 0.5 * v.ln() + 0.5 * d * d / v;
                }
                self.weights[g].ln() - acc
            })
            .collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "feature dimension {} does not match GMM dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Posterior component weights of `x`, computed in log space.
pub fn soft_assign(gmm: &GmmModel, x: &[f64]) -> Result<Vec<f64>> {
    gmm.check_dim(x)?;
    Ok(responsibilities(gmm, x).0)
}

fn responsibilities(gmm: &GmmModel, x: &[f64]) -> (Vec<f64>, f64) {
    let lj = gmm.log_joint(x);
    let lse = log_sum_exp(&lj);
    (lj.iter().map(|l| (l - lse).exp()).collect(), lse)
}

/// EM with k-means++ seeded means, global-variance initial covariances and
/// uniform initial weights.
pub fn fit_gmm(data: &Matrix, params: &GmmParams) -> Result<GmmFit> {
    let (n, d) = (data.rows(), data.cols());
    let g_count = params.components;
    if g_count == 0 || d == 0 {
        return Err(Error::invalid("GMM needs at least one component and dimension"));
    }
    if g_count > n {
        return Err(Error::invalid(format!(
            "{g_count} components requested but only {n} samples"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let means = kmeans_plus_plus(data, g_count, &mut rng);
    let mut global_mean = vec![0.0; d];
    for row in data.iter_rows() {
        global_mean.iter_mut().zip(row).for_each(|(m, x)| *m += x / n as f64);
    }
    let mut global_var = vec![0.0; d];
    for row in data.iter_rows() {
        for ((v, x), m) in global_var.iter_mut().zip(row).zip(&global_mean) {
            *v += (x - m) * (x - m) / n as f64;
        }
    }
    let mut variances = Matrix::zeros(g_count, d);
    for g in 0..g_count {
        for (v, gv) in variances.row_mut(g).iter_mut().zip(&global_var) {
            *v = gv.max(VARIANCE_FLOOR);
        }
    }
    let mut model = GmmModel {
        weights: vec![1.0 / g_count as f64; g_count],
        means,
        variances,
    };

    let mut trace: Vec<f64> = Vec::new();
    for _ in 0..params.max_iters {
        let (resp, lls): (Vec<Vec<f64>>, Vec<f64>) = (0..n)
            .into_par_iter()
            .map(|i| responsibilities(&model, data.row(i)))
            .unzip();
        let ll: f64 = lls.iter().sum();
        if !ll.is_finite() {
            return Err(Error::numerical("GMM log-likelihood became non-finite"));
        }
        let converged = trace
            .last()
            .is_some_and(|&prev| (ll - prev) / prev.abs().max(f64::MIN_POSITIVE) < params.tol);
        trace.push(ll);
        if converged {
            break;
        }

        // M-step
        let mut nk = vec![0.0; g_count];
        let mut sum = Matrix::zeros(g_count, d);
        for (i, r) in resp.iter().enumerate() {
            let x = data.row(i);
            for g in 0..g_count {
                let w = r[g];
                if w == 0.0 {
                    continue;
                }
                nk[g] += w;
                sum.row_mut(g).iter_mut().zip(x).for_each(|(s, xi)| *s += w * xi);
            }
        }
        for g in 0..g_count {
            if nk[g] > 0.0 {
                let inv = 1.0 / nk[g];
                for (m, s) in model.means.row_mut(g).iter_mut().zip(sum.row(g)) {
                    *m = s * inv;
                }
            }
        }
        let mut sq = Matrix::zeros(g_count, d);
        for (i, r) in resp.iter().enumerate() {
            let x = data.row(i);
            for g in 0..g_count {
                let w = r[g];
                if w == 0.0 {
                    continue;
                }
                let mu = model.means.row(g);
                for ((s, xi), m) in sq.row_mut(g).iter_mut().zip(x).zip(mu) {
                    *s += w * (xi - m) * (xi - m);
                }
            }
        }
        for g in 0..g_count {
            if nk[g] > 0.0 {
                let inv = 1.0 / nk[g];
                for (v, s) in model.variances.row_mut(g).iter_mut().zip(sq.row(g)) {
                    *v = (s * inv).max(VARIANCE_FLOOR);
                }
            }
            model.weights[g] = nk[g] / n as f64;
        }
        let total: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= total);
    }
    Ok(GmmFit {
        model,
        log_likelihood_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn model_file_round_trip() {
        let model = GmmModel {
            weights: vec![0.25, 0.75],
            means: Matrix::from_rows(&[[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]]),
            variances: Matrix::from_rows(&[[1.0, 0.5, 2.0], [0.25, 1.0, 1.5]]),
        };
        let buf = model.to_bytes().unwrap();
        assert!(buf.starts_with(b"2 3\n"));
        assert_eq!(GmmModel::from_bytes(&buf).unwrap(), model);
        let mut bad = buf.clone();
        bad[0] = b'3';
        assert!(GmmModel::from_bytes(&bad).is_err());
    }

    #[test]
    fn single_component_is_closed_form_mle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..4).map(|j| rng.random::<f64>() * (j + 1) as f64).collect()).collect();
        let data = Matrix::from_rows(&rows);
        let fit = fit_gmm(&data, &GmmParams::new(1)).unwrap();
        for j in 0..4 {
            let mean: f64 = rows.iter().map(|r| r[j]).sum::<f64>() / 200.0;
            let var: f64 = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / 200.0;
            assert!((fit.model.means.get(0, j) - mean).abs() < 1e-9);
            assert!((fit.model.variances.get(0, j) - var).abs() < 1e-9);
        }
        assert_eq!(fit.model.weights, vec![1.0]);
    }

    #[test]
    fn separated_blobs_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let centers = [[0.0, 0.0], [20.0, 20.0]];
        let mut rows = Vec::new();
        for c in &centers {
            for _ in 0..2000 {
                rows.push(vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]);
            }
        }
        let fit = fit_gmm(&Matrix::from_rows(&rows), &GmmParams::new(2)).unwrap();
        for c in &centers {
            let best = (0..2)
                .map(|g| ((fit.model.means.get(g, 0) - c[0]).powi(2) + (fit.model.means.get(g, 1) - c[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.1, "{best}");
        }
        for w in fit.log_likelihood_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
    }

    #[test]
    fn variance_floor_holds_on_duplicates() {
        let data = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]]);
        let fit = fit_gmm(&data, &GmmParams::new(1)).unwrap();
        assert!(fit.model.variances.as_slice().iter().all(|&v| v >= VARIANCE_FLOOR));
    }

    #[test]
    fn one_component_soft_assign_is_exactly_one() {
        let model = GmmModel {
            weights: vec![1.0],
            means: Matrix::from_rows(&[vec![0.0, 0.0]]),
            variances: Matrix::from_rows(&[vec![1.0, 2.0]]),
        };
        assert_eq!(soft_assign(&model, &[30.0, -4.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn far_component_gets_no_mass() {
        let model = GmmModel {
            weights: vec![0.5, 0.5],
            means: Matrix::from_rows(&[vec![0.0], vec![100.0]]),
            variances: Matrix::from_rows(&[vec![1.0], vec![1.0]]),
        };
        let gamma = soft_assign(&model, &[0.0]).unwrap();
        assert!(gamma[0] > 1.0 - 1e-10);
        assert!((gamma.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_many_components_rejected() {
        let data = Matrix::from_rows(&[vec![1.0]]);
        assert!(fit_gmm(&data, &GmmParams::new(2)).is_err());
    }
}
