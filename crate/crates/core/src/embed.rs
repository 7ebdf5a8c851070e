//! One-hidden-layer network trained with softmax cross-entropy on
//! pseudo-class labels; its rectified hidden layer is the photo embedding.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{decayed_rate, log_sum_exp, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedParams {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for EmbedParams {
    fn default() -> Self {
        Self {
            hidden: 256,
            epochs: 50,
            lr: 0.01,
            batch: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EmbeddingModel {
    /// `D_in x H`.
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `H x C`.
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    /// Mean training loss before the first epoch, then after each epoch.
    pub loss_trace: Vec<f64>,
    pub train_accuracy: f64,
}

struct Forward {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl EmbeddingModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(d_in: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = (6.0 / (d_in + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + classes) as f64).sqrt();
        Self {
            w1: Matrix::random_uniform(d_in, hidden, -a1, a1, &mut rng),
            b1: vec![0.0; hidden],
            w2: Matrix::random_uniform(hidden, classes, -a2, a2, &mut rng),
            b2: vec![0.0; classes],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn classes(&self) -> usize {
        self.w2.cols()
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let mut pre = self.b1.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (p, w) in pre.iter_mut().zip(self.w1.row(i)) {
                *p += xi * w;
            }
        }
        let hidden: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let mut logits = self.b2.clone();
        for (h, &a) in hidden.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (l, w) in logits.iter_mut().zip(self.w2.row(h)) {
                *l += a * w;
            }
        }
        Forward { pre, hidden, logits }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "feature dimension {} does not match embedding input {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Rectified hidden activations.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.forward(x).hidden)
    }

    pub fn class_probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(softmax(&self.forward(x).logits))
    }

    /// Mean cross-entropy over `(x, label)` pairs and its gradient.
    pub fn loss_and_gradient(&self, xs: &[&[f64]], labels: &[usize]) -> (f64, Gradients) {
        let (d, h, c) = (self.input_dim(), self.hidden_dim(), self.classes());
        let mut g = Gradients {
            w1: Matrix::zeros(d, h),
            b1: vec![0.0; h],
            w2: Matrix::zeros(h, c),
            b2: vec![0.0; c],
        };
        let inv = 1.0 / xs.len() as f64;
        let mut loss = 0.0;
        let mut d_hidden = vec![0.0; h];
        for (x, &y) in xs.iter().zip(labels) {
            let f = self.forward(x);
            let lse = log_sum_exp(&f.logits);
            loss += lse - f.logits[y];
            let d_logits: Vec<f64> = f
                .logits
                .iter()
                .enumerate()
                .map(|(k, &l)| ((l - lse).exp() - if k == y { 1.0 } else { 0.0 }) * inv)
                .collect();
            for (gb, dl) in g.b2.iter_mut().zip(&d_logits) {
                *gb += dl;
            }
            for k in 0..h {
                let a = f.hidden[k];
                let w_row = self.w2.row(k);
                d_hidden[k] = if f.pre[k] > 0.0 {
                    w_row.iter().zip(&d_logits).map(|(w, dl)| w * dl).sum()
                } else {
                    0.0
                };
                if a != 0.0 {
                    for (gw, dl) in g.w2.row_mut(k).iter_mut().zip(&d_logits) {
                        *gw += a * dl;
                    }
                }
            }
            for (gb, dh) in g.b1.iter_mut().zip(&d_hidden) {
                *gb += dh;
            }
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (gw, dh) in g.w1.row_mut(i).iter_mut().zip(&d_hidden) {
                    *gw += xi * dh;
                }
            }
        }
        (loss * inv, g)
    }

    fn apply(&mut self, g: &Gradients, lr: f64) {
        let step = |p: &mut [f64], d: &[f64]| p.iter_mut().zip(d).for_each(|(p, d)| *p -= lr * d);
        step(self.w1.as_mut_slice(), g.w1.as_slice());
        step(&mut self.b1, &g.b1);
        step(self.w2.as_mut_slice(), g.w2.as_slice());
        step(&mut self.b2, &g.b2);
    }

    fn mean_loss(&self, features: &Matrix, labels: &[usize]) -> f64 {
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let f = self.forward(features.row(i));
                log_sum_exp(&f.logits) - f.logits[y]
            })
            .sum();
        total / labels.len() as f64
    }

    fn accuracy(&self, features: &Matrix, labels: &[usize]) -> f64 {
        let hits = labels
            .iter()
            .enumerate()
            .filter(|&(i, &y)| crate::math::argmax(&self.forward(features.row(i)).logits) == y)
            .count();
        hits as f64 / labels.len() as f64
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

/// Mini-batch gradient descent on mean cross-entropy.
pub fn train_embedding(
    features: &Matrix,
    labels: &[usize],
    classes: usize,
    params: &EmbedParams,
) -> Result<(EmbeddingModel, TrainingReport)> {
    if classes < 2 {
        return Err(Error::invalid("C >= 2 required for softmax training"));
    }
    if params.hidden == 0 || params.batch == 0 || params.epochs == 0 {
        return Err(Error::invalid("hidden width, batch size and epochs must be positive"));
    }
    if features.rows() != labels.len() || labels.is_empty() {
        return Err(Error::invalid(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::invalid(format!("label {bad} is outside 0..{classes}")));
    }
    let mut model = EmbeddingModel::init(features.cols(), params.hidden, classes, params.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut trace = vec![model.mean_loss(features, labels)];
    for epoch in 0..params.epochs {
        let lr = decayed_rate(params.lr, epoch, params.epochs);
        order.shuffle(&mut rng);
        for chunk in order.chunks(params.batch) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| features.row(i)).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (_, g) = model.loss_and_gradient(&xs, &ys);
            model.apply(&g, lr);
        }
        let loss = model.mean_loss(features, labels);
        if !loss.is_finite() {
            return Err(Error::numerical(format!(
                "embedding training diverged at epoch {epoch}; use a smaller learning rate"
            )));
        }
        trace.push(loss);
    }
    let train_accuracy = model.accuracy(features, labels);
    Ok((
        model,
        TrainingReport {
            loss_trace: trace,
            train_accuracy,
        },
    ))
}
