//! User–photo matrix construction, non-negative factorisation, confidence
//! scoring, multi-query expansion and pseudo-class clustering.

mod expand;
mod factorize;
mod matrix;
mod pseudo;

pub use expand::{confidence_scores, expand_query, MultiQuerySet};
pub use factorize::{factorize, initial_factors, objective, FactorModel, FactorParams};
pub use matrix::{build_matrix, InteractionMatrix};
pub use pseudo::{parse_label_file, pseudo_classes, PseudoClassAssignment};
