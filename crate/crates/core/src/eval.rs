//! Average precision, mAP and precision-recall curves.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::format_sig9;

fn kept<'a>(ranked: &'a [String], junk: &'a HashSet<String>) -> impl Iterator<Item = &'a String> {
    ranked.iter().filter(move |id| !junk.contains(*id))
}

/// AP over the first `n` non-junk entries with `L_q = min(|relevant|, n)`.
///
/// `relevant` must already be restricted to photos present in the database.
pub fn average_precision(ranked: &[String], relevant: &HashSet<String>, junk: &HashSet<String>, n: usize) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::invalid("average precision needs a non-empty relevant set"));
    }
    if n == 0 {
        return Err(Error::invalid("ranked list cutoff must be at least 1"));
    }
    let l_q = relevant.len().min(n);
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, id) in kept(ranked, junk).take(n).enumerate() {
        if relevant.contains(id) && !junk.contains(id) {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Ok(sum / l_q as f64)
}

/// Mean computed as an offset from the first element, so identical inputs
/// give that value back exactly.
fn exact_mean(values: &[f64], what: &str) -> Result<f64> {
    let first = *values
        .first()
        .ok_or_else(|| Error::invalid(format!("{what} needs at least one value")))?;
    let dev: f64 = values.iter().map(|v| v - first).sum();
    Ok(first + dev / values.len() as f64)
}

pub fn mean_ap(aps: &[f64]) -> Result<f64> {
    exact_mean(aps, "mean_ap")
}

pub fn aggregate(landmark_maps: &[f64]) -> Result<f64> {
    exact_mean(landmark_maps, "aggregate")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// One point per rank after junk removal.
pub fn precision_recall_curve(ranked: &[String], relevant: &HashSet<String>, junk: &HashSet<String>) -> Result<Vec<PrPoint>> {
    if relevant.is_empty() {
        return Err(Error::invalid("precision-recall curve needs a non-empty relevant set"));
    }
    let total = relevant.len() as f64;
    let mut hits = 0usize;
    Ok(kept(ranked, junk)
        .enumerate()
        .map(|(r, id)| {
            if relevant.contains(id) {
                hits += 1;
            }
            PrPoint {
                recall: hits as f64 / total,
                precision: hits as f64 / (r + 1) as f64,
            }
        })
        .collect())
}

/// Interpolated precision (best precision at recall ≥ level) on a fixed
/// recall grid, for averaging curves across queries.
pub fn interpolate_curve(curve: &[PrPoint], levels: &[f64]) -> Vec<f64> {
    levels
        .iter()
        .map(|&level| {
            curve
                .iter()
                .filter(|p| p.recall >= level - 1e-12)
                .map(|p| p.precision)
                .fold(0.0, f64::max)
        })
        .collect()
}

pub fn recall_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: String,
    pub landmark: String,
    pub method: String,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub queries_per_landmark: usize,
    pub methods: Vec<String>,
    pub queries: Vec<QueryResult>,
    /// landmark → method → mAP
    pub landmark_map: BTreeMap<String, BTreeMap<String, f64>>,
    /// method → average mAP over landmarks
    pub average_map: BTreeMap<String, f64>,
    /// method → interpolated precision on `recall_grid()`
    pub pr_curves: BTreeMap<String, Vec<PrPoint>>,
}

/// One evaluated query for one method.
#[derive(Debug, Clone)]
pub struct Judged {
    pub query: String,
    pub landmark: String,
    pub method: String,
    pub ranked: Vec<String>,
    pub relevant: HashSet<String>,
    pub junk: HashSet<String>,
}

impl EvalReport {
    pub fn build(judged: &[Judged], methods: &[String], n: usize, queries_per_landmark: usize) -> Result<Self> {
        let grid = recall_grid();
        let mut queries = Vec::with_capacity(judged.len());
        let mut per_landmark: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
        let mut curves: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
        for j in judged {
            let ap = average_precision(&j.ranked, &j.relevant, &j.junk, n)?;
            let truncated: Vec<String> = kept(&j.ranked, &j.junk).take(n).cloned().collect();
            let curve = precision_recall_curve(&truncated, &j.relevant, &j.junk)?;
            curves.entry(j.method.clone()).or_default().push(interpolate_curve(&curve, &grid));
            per_landmark
                .entry(j.landmark.clone())
                .or_default()
                .entry(j.method.clone())
                .or_default()
                .push(ap);
            queries.push(QueryResult {
                query: j.query.clone(),
                landmark: j.landmark.clone(),
                method: j.method.clone(),
                ap,
            });
        }
        let mut landmark_map = BTreeMap::new();
        for (landmark, by_method) in &per_landmark {
            let mut row = BTreeMap::new();
            for (method, aps) in by_method {
                row.insert(method.clone(), mean_ap(aps)?);
            }
            landmark_map.insert(landmark.clone(), row);
        }
        let mut average_map = BTreeMap::new();
        for m in methods {
            let maps: Vec<f64> = landmark_map.values().filter_map(|row| row.get(m).copied()).collect();
            if !maps.is_empty() {
                average_map.insert(m.clone(), aggregate(&maps)?);
            }
        }
        let mut pr_curves = BTreeMap::new();
        for (m, all) in curves {
            let points = grid
                .iter()
                .enumerate()
                .map(|(i, &recall)| PrPoint {
                    recall,
                    precision: all.iter().map(|c| c[i]).sum::<f64>() / all.len() as f64,
                })
                .collect();
            pr_curves.insert(m, points);
        }
        Ok(Self {
            n,
            queries_per_landmark,
            methods: methods.to_vec(),
            queries,
            landmark_map,
            average_map,
            pr_curves,
        })
    }

    /// Landmark rows × method columns, mAP in percent.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        write!(out, "{:<16}", "landmark").unwrap();
        for m in &self.methods {
            write!(out, "\t{m:>12}").unwrap();
        }
        out.push('\n');
        for (landmark, row) in &self.landmark_map {
            write!(out, "{landmark:<16}").unwrap();
            for m in &self.methods {
                match row.get(m) {
                    Some(v) => write!(out, "\t{:>12.2}", v * 100.0).unwrap(),
                    None => write!(out, "\t{:>12}", "-").unwrap(),
                }
            }
            out.push('\n');
        }
        write!(out, "{:<16}", "average").unwrap();
        for m in &self.methods {
            match self.average_map.get(m) {
                Some(v) => write!(out, "\t{:>12.2}", v * 100.0).unwrap(),
                None => write!(out, "\t{:>12}", "-").unwrap(),
            }
        }
        out.push('\n');
        writeln!(out, "# n={} queries_per_landmark={}", self.n, self.queries_per_landmark).unwrap();
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `recall<TAB>precision` lines for one method.
    pub fn pr_text(&self, method: &str) -> Option<String> {
        self.pr_curves.get(method).map(|points| {
            let mut out = String::new();
            for p in points {
                writeln!(out, "{}\t{}", format_sig9(p.recall), format_sig9(p.precision)).unwrap();
            }
            out
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn set(v: &[&str]) -> HashSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn worked_example() {
        let ap = average_precision(&ids(&["r1", "x", "r2"]), &set(&["r1", "r2"]), &set(&[]), 3).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_ranking_is_one() {
        let ap = average_precision(&ids(&["a", "b", "c", "x"]), &set(&["a", "b", "c"]), &set(&[]), 4).unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn junk_is_skipped() {
        let rel = set(&["r1", "r2"]);
        let with = average_precision(&ids(&["j", "r1", "x", "r2"]), &rel, &set(&["j"]), 3).unwrap();
        let without = average_precision(&ids(&["r1", "x", "r2"]), &rel, &set(&[]), 3).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn cap_at_n() {
        let rel: HashSet<String> = (0..10).map(|i| format!("r{i}")).collect();
        let list: Vec<String> = (0..3).map(|i| format!("r{i}")).collect();
        assert_eq!(average_precision(&list, &rel, &set(&[]), 3).unwrap(), 1.0);
    }

    #[test]
    fn empty_relevant_is_error() {
        assert!(average_precision(&ids(&["a"]), &set(&[]), &set(&[]), 1).is_err());
        assert!(precision_recall_curve(&ids(&["a"]), &set(&[]), &set(&[])).is_err());
        assert!(mean_ap(&[]).is_err());
    }

    #[test]
    fn means() {
        assert_eq!(mean_ap(&[1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(mean_ap(&[0.8333; 20]).unwrap(), 0.8333);
        assert_eq!(aggregate(&[0.1 + 0.2; 7]).unwrap(), 0.1 + 0.2);
    }

    #[test]
    fn pr_examples() {
        let list: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
        let rel: HashSet<String> = (0..5).map(|i| format!("p{i}")).collect();
        let c = precision_recall_curve(&list, &rel, &set(&[])).unwrap();
        assert_eq!(c[0], PrPoint { recall: 0.2, precision: 1.0 });
        assert!(c[..5].iter().all(|p| p.precision == 1.0));
        assert_eq!(c[4].recall, 1.0);

        let none = precision_recall_curve(&ids(&["x", "y"]), &set(&["r"]), &set(&[])).unwrap();
        assert!(none.iter().all(|p| p.precision == 0.0));
    }

    #[test]
    fn report_layout() {
        let judged = vec![
            Judged {
                query: "q1".into(),
                landmark: "L1".into(),
                method: "single".into(),
                ranked: ids(&["a", "x"]),
                relevant: set(&["a"]),
                junk: set(&[]),
            },
            Judged {
                query: "q1".into(),
                landmark: "L1".into(),
                method: "multi".into(),
                ranked: ids(&["x", "a"]),
                relevant: set(&["a"]),
                junk: set(&[]),
            },
        ];
        let methods = vec!["single".to_string(), "multi".to_string()];
        let r = EvalReport::build(&judged, &methods, 100, 20).unwrap();
        assert_eq!(r.average_map["single"], 1.0);
        assert_eq!(r.average_map["multi"], 0.5);
        let table = r.to_table();
        assert!(table.contains("100.00") && table.contains("50.00"));
        assert!(r.pr_text("multi").unwrap().lines().count() == 21);
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn ap_in_unit_interval_and_recall_monotone(
            labels in proptest::collection::vec(0u8..3, 1..30),
            n in 1usize..40,
        ) {
            let list: Vec<String> = (0..labels.len()).map(|i| format!("p{i:02}")).collect();
            let mut rel: HashSet<String> = list.iter().zip(&labels).filter(|(_, &l)| l == 1).map(|(id, _)| id.clone()).collect();
            let junk: HashSet<String> = list.iter().zip(&labels).filter(|(_, &l)| l == 2).map(|(id, _)| id.clone()).collect();
            rel.insert("unretrieved".into());
            let ap = average_precision(&list, &rel, &junk, n).unwrap();
            prop_assert!((0.0..=1.0).contains(&ap));
            let c = precision_recall_curve(&list, &rel, &junk).unwrap();
            prop_assert!(c.windows(2).all(|w| w[0].recall <= w[1].recall));
        }

        #[test]
        fn junk_insertion_is_neutral(
            labels in proptest::collection::vec(any::<bool>(), 1..20),
            pos in 0usize..21,
        ) {
            let list: Vec<String> = (0..labels.len()).map(|i| format!("p{i:02}")).collect();
            let mut rel: HashSet<String> = list.iter().zip(&labels).filter(|(_, &l)| l).map(|(id, _)| id.clone()).collect();
            rel.insert("elsewhere".into());
            let base = average_precision(&list, &rel, &HashSet::new(), 10).unwrap();
            let mut with = list.clone();
            with.insert(pos.min(list.len()), "junk".into());
            let junk: HashSet<String> = ["junk".to_string()].into();
            prop_assert_eq!(average_precision(&with, &rel, &junk, 10).unwrap(), base);
        }

        #[test]
        fn tail_permutation_of_nonrelevant_is_neutral(
            head in proptest::collection::vec(any::<bool>(), 1..10),
            tail in 1usize..8,
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut list: Vec<String> = (0..head.len()).map(|i| format!("h{i}")).collect();
            let rel: HashSet<String> = list.iter().zip(&head).filter(|(_, &l)| l).map(|(id, _)| id.clone()).chain(["end".to_string()]).collect();
            list.push("end".into());
            let mut t: Vec<String> = (0..tail).map(|i| format!("t{i}")).collect();
            let base = average_precision(&[list.clone(), t.clone()].concat(), &rel, &HashSet::new(), 30).unwrap();
            t.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(average_precision(&[list, t].concat(), &rel, &HashSet::new(), 30).unwrap(), base);
        }
    }
}
