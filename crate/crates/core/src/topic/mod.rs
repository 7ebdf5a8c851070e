//! Visual vocabulary, LDA over user albums, candidate-topic detection and
//! the topic-related user community.

mod codebook;
mod community;
mod lda;

pub use codebook::{build_codebook, VocabCodebook, VocabMode};
pub use community::{candidate_topics, related_users, PhotoTopics, TopicSet};
pub use lda::{fit_lda, GibbsSampler, LdaParams, TopicModel};
