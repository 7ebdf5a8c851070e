//! Latent Dirichlet allocation fitted by collapsed Gibbs sampling.
//!
//! Documents are user albums and words are photo tokens. After burn-in the
//! sampler accumulates the document-topic and topic-word counts every
//! `thin` sweeps; the reported distributions are the Dirichlet-smoothed
//! averages of those snapshots.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::descriptors::codec::{decode_blocks, encode_blocks, indexed_ids};
use crate::descriptors::FeatureMatrix;
use crate::error::{Error, Result};
use crate::math::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LdaParams {
    pub topics: usize,
    pub alpha: f64,
    pub eta: f64,
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl LdaParams {
    /// `alpha = 50 / Z`, `eta = 0.01`, 500 sweeps with 200 burn-in and every
    /// 10th sweep averaged.
    pub fn with_topics(topics: usize) -> Self {
        Self {
            topics,
            alpha: 50.0 / topics.max(1) as f64,
            eta: 0.01,
            sweeps: 500,
            burn_in: 200,
            thin: 10,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.topics == 0 {
            return Err(Error::invalid("topic count must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.eta > 0.0) {
            return Err(Error::invalid("Dirichlet priors must be positive"));
        }
        if self.sweeps <= self.burn_in {
            return Err(Error::invalid(format!(
                "sweeps ({}) must exceed burn-in ({})",
                self.sweeps, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thinning interval must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TopicModel {
    pub topics: usize,
    pub vocab: usize,
    pub alpha: f64,
    pub eta: f64,
    /// documents x topics, rows sum to one.
    pub theta: Matrix,
    /// topics x vocabulary, rows sum to one.
    pub phi: Matrix,
    /// Final topic of every token position.
    pub assignments: Vec<Vec<usize>>,
}

impl TopicModel {
    /// Header `Z V alpha eta`, then phi and theta blocks. Theta rows carry the
    /// document ids. Sampler assignments are not written.
    pub fn to_bytes(&self, documents: &[String]) -> Result<Vec<u8>> {
        if documents.len() != self.theta.rows() {
            return Err(Error::invalid(format!(
                "{} document ids for {} theta rows",
                documents.len(),
                self.theta.rows()
            )));
        }
        let phi = FeatureMatrix::from_matrix(indexed_ids("z", self.topics), &self.phi)?;
        let theta = FeatureMatrix::from_matrix(documents.to_vec(), &self.theta)?;
        let header = format!("{} {} {} {}", self.topics, self.vocab, self.alpha, self.eta);
        encode_blocks(&header, &[phi, theta])
    }

    pub fn from_bytes(buf: &[u8]) -> Result<(Self, Vec<String>)> {
        let (header, blocks) = decode_blocks(buf, 2)?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let bad = || Error::format(format!("bad topic model header `{header}`"));
        if fields.len() != 4 {
            return Err(bad());
        }
        let topics: usize = fields[0].parse().map_err(|_| bad())?;
        let vocab: usize = fields[1].parse().map_err(|_| bad())?;
        let alpha: f64 = fields[2].parse().map_err(|_| bad())?;
        let eta: f64 = fields[3].parse().map_err(|_| bad())?;
        let (phi, theta) = (&blocks[0], &blocks[1]);
        if phi.len() != topics || phi.dim() != vocab || theta.dim() != topics {
            return Err(Error::format("topic model blocks do not match header"));
        }
        let model = TopicModel {
            topics,
            vocab,
            alpha,
            eta,
            theta: theta.to_matrix(),
            phi: phi.to_matrix(),
            assignments: Vec::new(),
        };
        Ok((model, theta.ids().to_vec()))
    }

    /// Topic-normalised score `phi_z[w] / sum_z' phi_z'[w]`.
    pub fn topic_posterior(&self, token: usize) -> Vec<f64> {
        let col: Vec<f64> = (0..self.topics).map(|z| self.phi.get(z, token)).collect();
        let total: f64 = col.iter().sum();
        col.into_iter().map(|v| v / total).collect()
    }

    pub fn dominant_topic(&self, token: usize) -> usize {
        crate::math::argmax(&self.topic_posterior(token))
    }

    /// Mean per-token log-likelihood of `tokens` under document `doc`'s
    /// topic mixture.
    pub fn mean_log_likelihood(&self, doc: usize, tokens: &[usize]) -> f64 {
        let theta = self.theta.row(doc);
        let total: f64 = tokens
            .iter()
            .map(|&w| {
                (0..self.topics)
                    .map(|z| theta[z] * self.phi.get(z, w))
                    .sum::<f64>()
                    .ln()
            })
            .sum();
        total / tokens.len() as f64
    }
}

/// Collapsed Gibbs state. Exposed so callers can step sweeps and audit the
/// sufficient statistics.
pub struct GibbsSampler<'a> {
    docs: &'a [Vec<usize>],
    vocab: usize,
    topics: usize,
    alpha: f64,
    eta: f64,
    z: Vec<Vec<usize>>,
    n_dz: Vec<u32>,
    n_zw: Vec<u32>,
    n_z: Vec<u32>,
    rng: ChaCha8Rng,
    weights: Vec<f64>,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(docs: &'a [Vec<usize>], vocab: usize, params: &LdaParams) -> Result<Self> {
        params.validate()?;
        if docs.is_empty() {
            return Err(Error::invalid("LDA needs at least one document"));
        }
        if let Some(w) = docs.iter().flatten().find(|&&w| w >= vocab) {
            return Err(Error::invalid(format!("token {w} outside vocabulary of size {vocab}")));
        }
        let k = params.topics;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut s = Self {
            docs,
            vocab,
            topics: k,
            alpha: params.alpha,
            eta: params.eta,
            z: Vec::with_capacity(docs.len()),
            n_dz: vec![0; docs.len() * k],
            n_zw: vec![0; k * vocab],
            n_z: vec![0; k],
            rng: ChaCha8Rng::seed_from_u64(0),
            weights: vec![0.0; k],
        };
        for (d, doc) in docs.iter().enumerate() {
            let zs: Vec<usize> = doc.iter().map(|_| rng.random_range(0..k)).collect();
            for (&w, &t) in doc.iter().zip(&zs) {
                s.n_dz[d * k + t] += 1;
                s.n_zw[t * vocab + w] += 1;
                s.n_z[t] += 1;
            }
            s.z.push(zs);
        }
        s.rng = rng;
        Ok(s)
    }

    pub fn sweep(&mut self) {
        let k = self.topics;
        let v_eta = self.vocab as f64 * self.eta;
        for (d, doc) in self.docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let old = self.z[d][i];
                self.n_dz[d * k + old] -= 1;
                self.n_zw[old * self.vocab + w] -= 1;
                self.n_z[old] -= 1;

                let mut total = 0.0;
                for t in 0..k {
                    let p = (self.n_dz[d * k + t] as f64 + self.alpha)
                        * (self.n_zw[t * self.vocab + w] as f64 + self.eta)
                        / (self.n_z[t] as f64 + v_eta);
                    total += p;
                    self.weights[t] = total;
                }
                let u = self.rng.random::<f64>() * total;
                let new = self.weights.iter().position(|&c| u < c).unwrap_or(k - 1);

                self.z[d][i] = new;
                self.n_dz[d * k + new] += 1;
                self.n_zw[new * self.vocab + w] += 1;
                self.n_z[new] += 1;
            }
        }
    }

    /// Recounts every statistic from the assignment array and compares.
    pub fn counts_consistent(&self) -> bool {
        let k = self.topics;
        let mut n_dz = vec![0u32; self.docs.len() * k];
        let mut n_zw = vec![0u32; k * self.vocab];
        let mut n_z = vec![0u32; k];
        for (d, (doc, zs)) in self.docs.iter().zip(&self.z).enumerate() {
            for (&w, &t) in doc.iter().zip(zs) {
                n_dz[d * k + t] += 1;
                n_zw[t * self.vocab + w] += 1;
                n_z[t] += 1;
            }
        }
        n_dz == self.n_dz && n_zw == self.n_zw && n_z == self.n_z
    }

    fn accumulate(&self, acc_dz: &mut [f64], acc_zw: &mut [f64]) {
        for (a, &c) in acc_dz.iter_mut().zip(&self.n_dz) {
            *a += c as f64;
        }
        for (a, &c) in acc_zw.iter_mut().zip(&self.n_zw) {
            *a += c as f64;
        }
    }
}

pub fn fit_lda(docs: &[Vec<usize>], vocab: usize, params: &LdaParams) -> Result<TopicModel> {
    let mut sampler = GibbsSampler::new(docs, vocab, params)?;
    let k = params.topics;
    let mut acc_dz = vec![0.0; docs.len() * k];
    let mut acc_zw = vec![0.0; k * vocab];
    let mut samples = 0usize;
    for sweep in 1..=params.sweeps {
        sampler.sweep();
        let after_burn = sweep > params.burn_in && (sweep - params.burn_in) % params.thin == 0;
        if after_burn || (sweep == params.sweeps && samples == 0) {
            sampler.accumulate(&mut acc_dz, &mut acc_zw);
            samples += 1;
        }
    }
    let samples = samples as f64;

    let mut theta = Matrix::zeros(docs.len(), k);
    for (d, doc) in docs.iter().enumerate() {
        let denom = doc.len() as f64 + k as f64 * params.alpha;
        for t in 0..k {
            theta.set(d, t, (acc_dz[d * k + t] / samples + params.alpha) / denom);
        }
    }
    let mut phi = Matrix::zeros(k, vocab);
    for t in 0..k {
        let row = &acc_zw[t * vocab..(t + 1) * vocab];
        let n_z: f64 = row.iter().sum::<f64>() / samples;
        let denom = n_z + vocab as f64 * params.eta;
        for (w, &c) in row.iter().enumerate() {
            phi.set(t, w, (c / samples + params.eta) / denom);
        }
    }
    Ok(TopicModel {
        topics: k,
        vocab,
        alpha: params.alpha,
        eta: params.eta,
        theta,
        phi,
        assignments: sampler.z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(topics: usize, seed: u64) -> LdaParams {
        LdaParams {
            sweeps: 120,
            burn_in: 60,
            seed,
            ..LdaParams::with_topics(topics)
        }
    }

    #[test]
    fn model_file_round_trip() {
        let docs = vec![vec![0, 1, 1], vec![2, 3], vec![0, 3, 3]];
        let model = fit_lda(&docs, 4, &quick(2, 1)).unwrap();
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let buf = model.to_bytes(&ids).unwrap();
        assert!(buf.starts_with(format!("2 4 {} {}\n", model.alpha, model.eta).as_bytes()));
        let (back, back_ids) = TopicModel::from_bytes(&buf).unwrap();
        assert_eq!(back_ids, ids);
        assert_eq!((back.alpha, back.eta), (model.alpha, model.eta));
        for (a, b) in back.phi.as_slice().iter().zip(model.phi.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(TopicModel::from_bytes(&buf[..buf.len() - 1]).is_err());
        assert!(model.to_bytes(&ids[..2]).is_err());
    }

    fn simplex_ok(m: &Matrix) -> bool {
        m.iter_rows().all(|r| r.iter().all(|&v| v >= 0.0) && (r.iter().sum::<f64>() - 1.0).abs() < 1e-9)
    }

    #[test]
    fn single_topic_gives_degenerate_theta() {
        let docs = vec![vec![0, 1, 2], vec![2, 3]];
        let m = fit_lda(&docs, 4, &quick(1, 0)).unwrap();
        assert!(m.theta.iter_rows().all(|r| r == [1.0]));
        assert!(simplex_ok(&m.phi));
    }

    #[test]
    fn counts_stay_consistent_every_sweep() {
        let docs: Vec<Vec<usize>> = (0..8).map(|d| (0..15).map(|i| (d * 3 + i * 7) % 11).collect()).collect();
        let params = quick(3, 9);
        let mut s = GibbsSampler::new(&docs, 11, &params).unwrap();
        assert!(s.counts_consistent());
        for _ in 0..25 {
            s.sweep();
            assert!(s.counts_consistent());
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let docs: Vec<Vec<usize>> = (0..5).map(|d| (0..10).map(|i| (d + i) % 6).collect()).collect();
        assert_eq!(fit_lda(&docs, 6, &quick(2, 4)).unwrap(), fit_lda(&docs, 6, &quick(2, 4)).unwrap());
    }

    #[test]
    fn fitted_model_beats_uniform_on_held_out_tokens() {
        // four planted topics over disjoint word blocks; documents mix two of them
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let vocab = 40;
        let mut train = Vec::new();
        let mut held = Vec::new();
        for d in 0..40 {
            let (a, b) = (d % 4, (d / 4) % 4);
            let tokens: Vec<usize> = (0..60)
                .map(|_| {
                    let block = if rng.random::<f64>() < 0.7 { a } else { b };
                    block * 10 + rng.random_range(0..10)
                })
                .collect();
            train.push(tokens[..45].to_vec());
            held.push(tokens[45..].to_vec());
        }
        let params = LdaParams { alpha: 0.5, ..quick(4, 2) };
        let m = fit_lda(&train, vocab, &params).unwrap();
        let fitted: f64 = (0..40).map(|d| m.mean_log_likelihood(d, &held[d])).sum::<f64>() / 40.0;
        assert!(fitted > -(vocab as f64).ln(), "{fitted}");
        assert!(simplex_ok(&m.theta) && simplex_ok(&m.phi));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(fit_lda(&[], 3, &quick(2, 0)).is_err());
        assert!(fit_lda(&[vec![5]], 3, &quick(2, 0)).is_err());
        let bad = LdaParams { sweeps: 10, burn_in: 10, ..quick(2, 0) };
        assert!(fit_lda(&[vec![0]], 3, &bad).is_err());
    }
}
