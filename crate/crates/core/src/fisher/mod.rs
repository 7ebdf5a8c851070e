//! Diagonal-covariance GMM and Fisher-vector aggregation of feature sets.

mod encode;
mod gmm;

pub use encode::{average_pool, fisher_encode, normalize_fisher, pool_and_normalize, FisherVector};
pub use gmm::{fit_gmm, soft_assign, GmmFit, GmmModel, GmmParams, VARIANCE_FLOOR};
