//! Seeded synthetic corpora with planted landmark and topic structure and
//! occluded ("biased") query photos.

use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PhotoRecord};
use crate::descriptors::FeatureMatrix;
use crate::error::{Error, Result};
use crate::math::{sq_dist, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasMode {
    /// One contiguous run of dimensions starting at a random offset.
    #[default]
    Block,
    /// Dimensions chosen uniformly at random.
    Random,
}

impl FromStr for BiasMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "block" => Ok(Self::Block),
            "random" => Ok(Self::Random),
            other => Err(format!("unknown bias mode `{other}` (expected block|random)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub landmarks: usize,
    pub photos_per_landmark: usize,
    pub users: usize,
    pub topics: usize,
    pub dim: usize,
    /// Per-dimension standard deviation of photos around their prototype.
    pub noise: f64,
    /// Fraction of query dimensions overwritten with noise.
    pub bias: f64,
    pub bias_mode: BiasMode,
    pub queries_per_landmark: usize,
    pub junk_per_query: usize,
    /// Dirichlet concentration of each user's topic affinity.
    pub concentration: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            landmarks: 16,
            photos_per_landmark: 256,
            users: 577,
            topics: 4,
            dim: 64,
            noise: 0.6,
            bias: 0.5,
            bias_mode: BiasMode::Block,
            queries_per_landmark: 20,
            junk_per_query: 0,
            concentration: 0.3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("synth.landmarks", self.landmarks),
            ("synth.photos_per_landmark", self.photos_per_landmark),
            ("synth.users", self.users),
            ("synth.topics", self.topics),
            ("synth.dim", self.dim),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.topics > self.landmarks {
            return Err(Error::config(
                "synth.topics",
                format!("{} topics cannot be planted over {} landmarks", self.topics, self.landmarks),
            ));
        }
        if !(0.0..=1.0).contains(&self.bias) {
            return Err(Error::config("synth.bias", "must lie in [0, 1]"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("synth.noise", "must be a finite non-negative number"));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(Error::config("synth.concentration", "must be positive"));
        }
        Ok(())
    }

    pub fn topic_of(&self, landmark: usize) -> usize {
        landmark * self.topics / self.landmarks
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub features: FeatureMatrix,
    /// Landmark prototypes, one row per landmark in `landmark_ids` order.
    pub prototypes: Matrix,
    pub landmark_ids: Vec<String>,
    /// Biased query photos, grouped by landmark.
    pub queries: Vec<String>,
}

fn dirichlet(rng: &mut ChaCha8Rng, alpha: f64, k: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter_mut().for_each(|d| *d /= total);
    } else {
        // every gamma draw underflowed; put the mass on one coordinate
        draws[rng.random_range(0..k)] = 1.0;
    }
    draws
}

struct Draft {
    user: usize,
    landmark: usize,
    values: Vec<f64>,
    junk_of: Option<usize>,
    query: bool,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut prototypes = Matrix::zeros(spec.landmarks, spec.dim);
    for v in prototypes.as_mut_slice() {
        *v = unit.sample(&mut rng);
    }

    // each user: topic affinity times a within-topic landmark preference
    let mut preference = vec![vec![0.0; spec.landmarks]; spec.users];
    for pref in preference.iter_mut() {
        let topic_affinity = dirichlet(&mut rng, spec.concentration, spec.topics);
        for t in 0..spec.topics {
            let members: Vec<usize> = (0..spec.landmarks).filter(|&l| spec.topic_of(l) == t).collect();
            let within = dirichlet(&mut rng, 1.0, members.len());
            for (&l, w) in members.iter().zip(within) {
                pref[l] = topic_affinity[t] * w;
            }
        }
    }
    let uploader: Vec<WeightedIndex<f64>> = (0..spec.landmarks)
        .map(|l| {
            let weights: Vec<f64> = preference.iter().map(|p| p[l] + 1e-12).collect();
            WeightedIndex::new(weights).expect("positive weights")
        })
        .collect();

    let sample_photo = |rng: &mut ChaCha8Rng, l: usize| -> Vec<f64> {
        prototypes.row(l).iter().map(|&m| m + spec.noise * unit.sample(rng)).collect()
    };

    let mut drafts = Vec::new();
    for l in 0..spec.landmarks {
        for _ in 0..spec.photos_per_landmark {
            let user = uploader[l].sample(&mut rng);
            let values = sample_photo(&mut rng, l);
            drafts.push(Draft { user, landmark: l, values, junk_of: None, query: false });
        }
        for _ in 0..spec.queries_per_landmark {
            let user = uploader[l].sample(&mut rng);
            let mut values = sample_photo(&mut rng, l);
            corrupt(&mut values, spec, &mut rng);
            let query_index = drafts.len();
            let duplicates: Vec<Vec<f64>> = (0..spec.junk_per_query)
                .map(|_| values.iter().map(|&v| v + 1e-3 * unit.sample(&mut rng)).collect())
                .collect();
            drafts.push(Draft { user, landmark: l, values, junk_of: None, query: true });
            for dup in duplicates {
                drafts.push(Draft { user, landmark: l, values: dup, junk_of: Some(query_index), query: false });
            }
        }
    }

    // opaque ids: shuffle the draft order, then number sequentially
    let mut order: Vec<usize> = (0..drafts.len()).collect();
    order.shuffle(&mut rng);
    let mut id_of = vec![String::new(); drafts.len()];
    for (new_pos, &old) in order.iter().enumerate() {
        id_of[old] = format!("p{new_pos:05}");
    }
    let landmark_ids: Vec<String> = (0..spec.landmarks).map(|l| format!("L{l:02}")).collect();
    let user_id = |u: usize| format!("u{u:04}");

    let mut records = Vec::with_capacity(drafts.len());
    let mut rows = Vec::with_capacity(drafts.len() * spec.dim);
    let mut ids = Vec::with_capacity(drafts.len());
    for &old in &order {
        let d = &drafts[old];
        records.push(PhotoRecord {
            photo_id: id_of[old].clone(),
            user_id: user_id(d.user),
            album_id: Some(format!("{}-{}", user_id(d.user), landmark_ids[d.landmark])),
            landmark_id: landmark_ids[d.landmark].clone(),
            image_path: None,
            is_junk_of: d.junk_of.map(|q| id_of[q].clone()),
        });
        ids.push(id_of[old].clone());
        rows.extend(d.values.iter().map(|&v| v as f32));
    }
    let mut queries: Vec<(usize, String)> = drafts
        .iter()
        .enumerate()
        .filter(|(_, d)| d.query)
        .map(|(i, d)| (d.landmark, id_of[i].clone()))
        .collect();
    queries.sort();

    Ok(SynthCorpus {
        corpus: Corpus::from_records(records)?,
        features: FeatureMatrix::from_parts(ids, spec.dim, rows)?,
        prototypes,
        landmark_ids,
        queries: queries.into_iter().map(|(_, id)| id).collect(),
    })
}

fn corrupt(values: &mut [f64], spec: &SynthSpec, rng: &mut ChaCha8Rng) {
    let d = values.len();
    let count = (spec.bias * d as f64).floor() as usize;
    if count == 0 {
        return;
    }
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let dims: Vec<usize> = match spec.bias_mode {
        BiasMode::Block => {
            let start = rng.random_range(0..d);
            (0..count).map(|i| (start + i) % d).collect()
        }
        BiasMode::Random => rand::seq::index::sample(rng, d, count).into_vec(),
    };
    for i in dims {
        values[i] = unit.sample(rng);
    }
}

/// Fraction of clean photos (not queries, not duplicates) whose nearest
/// prototype is their own landmark.
pub fn nearest_prototype_accuracy(synth: &SynthCorpus) -> f64 {
    let queries: std::collections::HashSet<&str> = synth.queries.iter().map(String::as_str).collect();
    let mut correct = 0usize;
    let mut total = 0usize;
    for (i, rec) in synth.corpus.photos().iter().enumerate() {
        if rec.is_junk_of.is_some() || queries.contains(rec.photo_id.as_str()) {
            continue;
        }
        total += 1;
        let x = synth.features.row_f64(i);
        let best = (0..synth.prototypes.rows())
            .min_by(|&a, &b| sq_dist(&x, synth.prototypes.row(a)).total_cmp(&sq_dist(&x, synth.prototypes.row(b))))
            .expect("at least one landmark");
        if synth.landmark_ids[best] == rec.landmark_id {
            correct += 1;
        }
    }
    correct as f64 / total.max(1) as f64
}

pub fn queries_text(queries: &[String]) -> String {
    queries.iter().map(|q| format!("{q}\n")).collect()
}

pub fn parse_queries(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}
