use std::collections::{BTreeSet, HashMap};

use super::TopicModel;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::math::argmax;

/// Candidate topics detected for one query photo.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TopicSet {
    pub query: String,
    /// Sorted topic indices.
    pub topics: Vec<usize>,
    pub lambda: f64,
    /// No topic reached `lambda`; the set holds the single best topic.
    pub fallback: bool,
}

impl TopicSet {
    pub fn contains(&self, topic: usize) -> bool {
        self.topics.binary_search(&topic).is_ok()
    }
}

/// Topics whose normalised score for `token` reaches `lambda`, or the
/// argmax topic (flagged) when none does.
pub fn candidate_topics(model: &TopicModel, query: &str, token: usize, lambda: f64) -> Result<TopicSet> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::invalid(format!("topic threshold must lie in (0, 1), got {lambda}")));
    }
    if token >= model.vocab {
        return Err(Error::invalid(format!("token {token} outside vocabulary of size {}", model.vocab)));
    }
    let post = model.topic_posterior(token);
    let topics: Vec<usize> = (0..model.topics).filter(|&z| post[z] >= lambda).collect();
    let (topics, fallback) = if topics.is_empty() {
        (vec![argmax(&post)], true)
    } else {
        (topics, false)
    };
    Ok(TopicSet {
        query: query.to_owned(),
        topics,
        lambda,
        fallback,
    })
}

/// Dominant topic of every tokenised photo.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotoTopics {
    dominant: HashMap<String, usize>,
}

impl PhotoTopics {
    pub fn compute(model: &TopicModel, tokens: &HashMap<String, usize>) -> Self {
        let mut per_token: HashMap<usize, usize> = HashMap::new();
        let dominant = tokens
            .iter()
            .map(|(id, &t)| {
                let z = *per_token.entry(t).or_insert_with(|| model.dominant_topic(t));
                (id.clone(), z)
            })
            .collect();
        Self { dominant }
    }

    pub fn from_map(dominant: HashMap<String, usize>) -> Self {
        Self { dominant }
    }

    pub fn get(&self, photo_id: &str) -> Option<usize> {
        self.dominant.get(photo_id).copied()
    }
}

/// Users owning at least one photo whose dominant topic lies in `topics`,
/// plus the query user.
pub fn related_users(
    corpus: &Corpus,
    photo_topics: &PhotoTopics,
    topics: &TopicSet,
    query_user: &str,
) -> Result<BTreeSet<String>> {
    if topics.topics.is_empty() {
        return Err(Error::invalid("topic set is empty"));
    }
    let mut users: BTreeSet<String> = corpus
        .photos()
        .iter()
        .filter(|p| photo_topics.get(&p.photo_id).is_some_and(|z| topics.contains(z)))
        .map(|p| p.user_id.clone())
        .collect();
    users.insert(query_user.to_owned());
    Ok(users)
}
