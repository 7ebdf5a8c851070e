//! Regularised non-negative factorisation `M ≈ P V` by projected SGD.
//!
//! Each epoch visits every observed one plus `negative_ratio` sampled zero
//! cells per one. Sampled zeros carry the importance weight
//! `n_zero / n_sampled`, so one epoch is an unbiased pass over the full
//! Frobenius objective. After every cell update the touched factors are
//! clamped at zero; the ridge term is applied once per epoch.
//!
//! The step follows `lr_t = lr_0 / (1 + t / epochs)`. An epoch that would
//! raise the objective is rolled back and the step scale halved, so the
//! recorded trace never increases.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::InteractionMatrix;
use crate::error::{Error, Result};
use crate::math::{decayed_rate, dot, Matrix};

const MIN_STEP_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FactorParams {
    pub latent: usize,
    /// Ridge weight on both factor matrices.
    pub mf_lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub negative_ratio: f64,
    pub seed: u64,
}

impl Default for FactorParams {
    fn default() -> Self {
        Self {
            latent: 64,
            mf_lambda: 0.05,
            lr: 0.05,
            epochs: 50,
            negative_ratio: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FactorModel {
    pub users: Vec<String>,
    pub photos: Vec<String>,
    /// `|U| x L` user factors.
    pub p: Matrix,
    /// Photo factors stored one photo per row (`|J| x L`), i.e. `V^T`.
    pub v: Matrix,
    pub mf_lambda: f64,
    /// Objective at initialisation followed by every accepted epoch.
    pub trace: Vec<f64>,
    pub rejected_epochs: usize,
}

impl FactorModel {
    pub fn latent(&self) -> usize {
        self.p.cols()
    }

    pub fn user_position(&self, user: &str) -> Option<usize> {
        self.users.iter().position(|u| u == user)
    }

    /// Predicted value for cell `(u, j)`.
    pub fn predict(&self, u: usize, j: usize) -> f64 {
        dot(self.p.row(u), self.v.row(j))
    }
}

/// `||M - P V||_F^2 + mf_lambda (||P||_F^2 + ||V||_F^2)`, evaluated without
/// densifying `M` through the Gram identity
/// `sum_all (PV)^2 = <P^T P, V V^T>`.
pub fn objective(m: &InteractionMatrix, p: &Matrix, v: &Matrix, mf_lambda: f64) -> f64 {
    let l = p.cols();
    let gram = |x: &Matrix| {
        let mut g = vec![0.0; l * l];
        for row in x.iter_rows() {
            for a in 0..l {
                let ra = row[a];
                if ra == 0.0 {
                    continue;
                }
                for b in a..l {
                    g[a * l + b] += ra * row[b];
                }
            }
        }
        g
    };
    let (gp, gv) = (gram(p), gram(v));
    let mut all_sq = 0.0;
    for a in 0..l {
        all_sq += gp[a * l + a] * gv[a * l + a];
        for b in a + 1..l {
            all_sq += 2.0 * gp[a * l + b] * gv[a * l + b];
        }
    }
    let observed: f64 = m
        .entries()
        .map(|(u, j)| {
            let x = dot(p.row(u), v.row(j));
            (1.0 - x) * (1.0 - x) - x * x
        })
        .sum();
    all_sq + observed + mf_lambda * (p.frobenius_sq() + v.frobenius_sq())
}

struct Cell {
    u: usize,
    j: usize,
    target: f64,
    weight: f64,
}

fn epoch_cells(m: &InteractionMatrix, ratio: f64, rng: &mut ChaCha8Rng) -> Vec<Cell> {
    let nnz = m.nnz();
    let total = m.n_users() * m.n_photos();
    let n_zero = total - nnz;
    let mut cells: Vec<Cell> = m
        .entries()
        .map(|(u, j)| Cell { u, j, target: 1.0, weight: 1.0 })
        .collect();
    let n_neg = if n_zero == 0 { 0 } else { ((nnz as f64 * ratio).round() as usize).max(1) };
    if n_neg > 0 {
        let weight = n_zero as f64 / n_neg as f64;
        for _ in 0..n_neg {
            loop {
                let u = rng.random_range(0..m.n_users());
                let j = rng.random_range(0..m.n_photos());
                if !m.contains(u, j) {
                    cells.push(Cell { u, j, target: 0.0, weight });
                    break;
                }
            }
        }
    }
    cells.shuffle(rng);
    cells
}

/// Starting point of [`factorize`]: uniform on `[0, 1/sqrt(L)]`, user
/// factors drawn first.
pub fn initial_factors(n_users: usize, n_photos: usize, params: &FactorParams) -> (Matrix, Matrix) {
    init_factors(n_users, n_photos, params.latent, &mut ChaCha8Rng::seed_from_u64(params.seed))
}

fn init_factors(n_users: usize, n_photos: usize, latent: usize, rng: &mut ChaCha8Rng) -> (Matrix, Matrix) {
    let scale = (1.0 / latent as f64).sqrt();
    let p = Matrix::random_uniform(n_users, latent, 0.0, scale, rng);
    let v = Matrix::random_uniform(n_photos, latent, 0.0, scale, rng);
    (p, v)
}

pub fn factorize(m: &InteractionMatrix, params: &FactorParams) -> Result<FactorModel> {
    if params.latent == 0 {
        return Err(Error::invalid("latent dimension must be at least 1"));
    }
    if !(params.mf_lambda >= 0.0) {
        return Err(Error::invalid("regularisation weight must be non-negative"));
    }
    if params.epochs == 0 {
        return Err(Error::invalid("at least one epoch is required"));
    }
    if !(params.negative_ratio >= 0.0) || !(params.lr > 0.0) {
        return Err(Error::invalid("learning rate must be positive and negative ratio non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (mut p, mut v) = init_factors(m.n_users(), m.n_photos(), params.latent, &mut rng);

    let mut current = objective(m, &p, &v, params.mf_lambda);
    if !current.is_finite() {
        return Err(Error::numerical("initial objective is not finite"));
    }
    let mut trace = vec![current];
    let mut step_scale = 1.0;
    let mut rejected = 0;
    for epoch in 0..params.epochs {
        let lr = decayed_rate(params.lr, epoch, params.epochs) * step_scale;
        let (p_prev, v_prev) = (p.clone(), v.clone());
        for cell in epoch_cells(m, params.negative_ratio, &mut rng) {
            let pu = p.row_mut(cell.u);
            let vj_row = v.row_mut(cell.j);
            let err = cell.target - dot(pu, vj_row);
            let g = 2.0 * lr * cell.weight * err;
            for (a, b) in pu.iter_mut().zip(vj_row.iter_mut()) {
                let (pa, vb) = (*a, *b);
                *a = (pa + g * vb).max(0.0);
                *b = (vb + g * pa).max(0.0);
            }
        }
        let shrink = (1.0 - 2.0 * lr * params.mf_lambda).max(0.0);
        if shrink != 1.0 {
            p.as_mut_slice().iter_mut().for_each(|x| *x *= shrink);
            v.as_mut_slice().iter_mut().for_each(|x| *x *= shrink);
        }

        let next = objective(m, &p, &v, params.mf_lambda);
        if next.is_finite() && next <= current {
            current = next;
            trace.push(next);
        } else {
            p = p_prev;
            v = v_prev;
            step_scale *= 0.5;
            rejected += 1;
            if step_scale < MIN_STEP_SCALE {
                if !next.is_finite() {
                    return Err(Error::numerical(
                        "factorisation diverged (non-finite objective); use a smaller learning rate",
                    ));
                }
                break;
            }
        }
    }
    if trace.windows(2).any(|w| w[1] > w[0] + 1e-9 * w[0].abs()) {
        return Err(Error::numerical("factorisation objective increased between epochs"));
    }
    Ok(FactorModel {
        users: m.users().to_vec(),
        photos: m.photos().to_vec(),
        p,
        v,
        mf_lambda: params.mf_lambda,
        trace,
        rejected_epochs: rejected,
    })
}
