use std::collections::{BTreeSet, HashMap};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::topic::{PhotoTopics, TopicSet};

/// Sparse binary user x photo matrix. Only the ones are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    users: Vec<String>,
    photos: Vec<String>,
    user_index: HashMap<String, usize>,
    /// Sorted column indices of the ones in each row.
    rows: Vec<Vec<usize>>,
}

impl InteractionMatrix {
    /// Builds the matrix from `(user, photo)` upload pairs. Row and column
    /// order follow first appearance in `users` and `photos`.
    pub fn from_uploads<'a>(
        users: Vec<String>,
        photos: Vec<String>,
        uploads: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self> {
        let user_index: HashMap<String, usize> =
            users.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        let photo_index: HashMap<&str, usize> =
            photos.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
        if user_index.len() != users.len() || photo_index.len() != photos.len() {
            return Err(Error::invalid("duplicate user or photo in matrix index"));
        }
        let mut rows = vec![Vec::new(); users.len()];
        for (u, p) in uploads {
            let ui = *user_index
                .get(u)
                .ok_or_else(|| Error::invalid(format!("unknown user `{u}`")))?;
            let pi = *photo_index
                .get(p)
                .ok_or_else(|| Error::invalid(format!("unknown photo `{p}`")))?;
            rows[ui].push(pi);
        }
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
        }
        Ok(Self {
            users,
            photos,
            user_index,
            rows,
        })
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn photos(&self) -> &[String] {
        &self.photos
    }

    pub fn user_position(&self, user: &str) -> Option<usize> {
        self.user_index.get(user).copied()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_photos(&self) -> usize {
        self.photos.len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn row(&self, u: usize) -> &[usize] {
        &self.rows[u]
    }

    pub fn contains(&self, u: usize, j: usize) -> bool {
        self.rows[u].binary_search(&j).is_ok()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(u, r)| r.iter().map(move |&j| (u, j)))
    }
}

/// Rows are the community users (sorted), columns their photos whose
/// dominant topic lies in `topics` (corpus order).
pub fn build_matrix(
    corpus: &Corpus,
    community: &BTreeSet<String>,
    photo_topics: &PhotoTopics,
    topics: &TopicSet,
) -> Result<InteractionMatrix> {
    if community.is_empty() {
        return Err(Error::invalid("user community is empty"));
    }
    let selected: Vec<(&str, &str)> = corpus
        .photos()
        .iter()
        .filter(|p| community.contains(&p.user_id))
        .filter(|p| photo_topics.get(&p.photo_id).is_some_and(|z| topics.contains(z)))
        .map(|p| (p.user_id.as_str(), p.photo_id.as_str()))
        .collect();
    let users: Vec<String> = community.iter().cloned().collect();
    let photos: Vec<String> = selected.iter().map(|(_, p)| p.to_string()).collect();
    if users.len() < 2 || photos.len() < 2 {
        return Err(Error::invalid(format!(
            "degenerate user-photo matrix ({} users x {} photos) for query `{}`; lower the topic threshold lambda",
            users.len(),
            photos.len(),
            topics.query
        )));
    }
    InteractionMatrix::from_uploads(users, photos, selected)
}
