//! Exact Euclidean ranking, multi-query compaction and average query
//! expansion.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::sq_dist;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub rank: usize,
    pub photo_id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query: String,
    pub cutoff: usize,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.photo_id.as_str()).collect()
    }
}

/// Database representations keyed by photo id, in a fixed order.
#[derive(Debug, Clone, Default)]
pub struct Database {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl Database {
    pub fn new(ids: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(Error::invalid("database ids and vectors differ in length"));
        }
        if let Some(first) = vectors.first() {
            if vectors.iter().any(|v| v.len() != first.len()) {
                return Err(Error::invalid("database vectors differ in dimension"));
            }
        }
        let index: HashMap<String, usize> = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        if index.len() != ids.len() {
            return Err(Error::invalid("duplicate photo id in database"));
        }
        Ok(Self { ids, vectors, index })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.vectors[i].as_slice())
    }
}

/// Ascending Euclidean distance, ties by photo id, the query's own entry
/// excluded, truncated to `n`.
pub fn rank(query_id: &str, query: &[f64], db: &Database, n: usize) -> Result<RankedList> {
    if n == 0 {
        return Err(Error::invalid("ranked list cutoff must be at least 1"));
    }
    if !db.is_empty() && query.len() != db.dim() {
        return Err(Error::invalid(format!(
            "query dimension {} does not match database dimension {}",
            query.len(),
            db.dim()
        )));
    }
    let mut scored: Vec<(f64, usize)> = db
        .vectors
        .par_iter()
        .enumerate()
        .filter(|(i, _)| db.ids[*i] != query_id)
        .map(|(i, v)| (sq_dist(query, v).sqrt(), i))
        .collect();
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then_with(|| db.ids[a.1].cmp(&db.ids[b.1]));
    if scored.len() > n {
        scored.select_nth_unstable_by(n - 1, by_distance);
        scored.truncate(n);
    }
    scored.sort_by(by_distance);
    Ok(RankedList {
        query: query_id.to_owned(),
        cutoff: n,
        entries: scored
            .into_iter()
            .enumerate()
            .map(|(r, (d, i))| RankedEntry {
                rank: r + 1,
                photo_id: db.ids[i].clone(),
                distance: d,
            })
            .collect(),
    })
}

/// The `s` expansion photos closest to the query feature (ties by id).
pub fn compact_multiquery(query: &[f64], candidates: &[(String, Vec<f64>)], s: usize) -> Result<Vec<String>> {
    if s == 0 {
        return Err(Error::invalid("compaction size s must be at least 1"));
    }
    let mut scored: Vec<(f64, &str)> = candidates
        .iter()
        .map(|(id, v)| {
            if v.len() != query.len() {
                Err(Error::invalid(format!("candidate `{id}` has the wrong dimension")))
            } else {
                Ok((sq_dist(query, v), id.as_str()))
            }
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Ok(scored.into_iter().take(s).map(|(_, id)| id.to_owned()).collect())
}

/// Mean of the query representation and its top-`k` retrieved
/// representations.
pub fn aqe_requery(initial: &RankedList, db: &Database, query: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::invalid("AQE depth k must be at least 1"));
    }
    if k > initial.entries.len() {
        return Err(Error::invalid(format!(
            "AQE depth {k} exceeds the ranked list length {}",
            initial.entries.len()
        )));
    }
    let mut vectors: Vec<&[f64]> = vec![query];
    for e in &initial.entries[..k] {
        vectors.push(
            db.get(&e.photo_id)
                .ok_or_else(|| Error::invalid(format!("`{}` missing from database", e.photo_id)))?,
        );
    }
    crate::fisher::average_pool(&vectors)
}

/// Decimal rendering with nine significant digits.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.8}");
    }
    let mut decimals = (8 - v.abs().log10().floor() as i32).max(0) as usize;
    let mut s = format!("{v:.decimals$}");
    // rounding can carry into a new leading digit
    let digits = s.chars().filter(|c| c.is_ascii_digit()).count();
    let leading_zeros = s
        .trim_start_matches('-')
        .chars()
        .take_while(|&c| c == '0' || c == '.')
        .filter(|&c| c == '0')
        .count();
    if digits - leading_zeros > 9 && decimals > 0 {
        decimals -= 1;
        s = format!("{v:.decimals$}");
    }
    s
}

impl RankedList {
    /// `rank<TAB>photo_id<TAB>distance` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            writeln!(out, "{}\t{}\t{}", e.rank, e.photo_id, format_sig9(e.distance)).unwrap();
        }
        out
    }

    pub fn parse_text(query: &str, text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let err = || Error::Parse {
                path: format!("ranked list for {query}"),
                line: i + 1,
                message: "expected `rank<TAB>photo_id<TAB>distance`".into(),
            };
            if f.len() != 3 {
                return Err(err());
            }
            entries.push(RankedEntry {
                rank: f[0].parse().map_err(|_| err())?,
                photo_id: f[1].to_owned(),
                distance: f[2].parse().map_err(|_| err())?,
            });
        }
        Ok(Self {
            query: query.to_owned(),
            cutoff: entries.len(),
            entries,
        })
    }
}
