//! Users, albums, photos and landmark labels, plus deterministic stratified
//! splitting.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhotoRecord {
    pub photo_id: String,
    pub user_id: String,
    /// `None` when the manifest leaves the album column empty.
    pub album_id: Option<String>,
    pub landmark_id: String,
    pub image_path: Option<String>,
    pub is_junk_of: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserAlbum {
    pub album_id: String,
    pub user_id: String,
    pub photo_ids: Vec<String>,
}

/// How photos are grouped into topic-model documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlbumMode {
    /// Use the manifest's album column; rows without one fall back to a
    /// per-user album.
    #[default]
    Manifest,
    /// One album per user holding all of that user's photos.
    PerUser,
}

impl FromStr for AlbumMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "manifest" => Ok(AlbumMode::Manifest),
            "user" => Ok(AlbumMode::PerUser),
            other => Err(format!("unknown album mode `{other}` (expected manifest|user)")),
        }
    }
}

impl fmt::Display for AlbumMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlbumMode::Manifest => "manifest",
            AlbumMode::PerUser => "user",
        })
    }
}

/// A validated, immutable photo collection.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    photos: Vec<PhotoRecord>,
    index: HashMap<String, usize>,
    users: Vec<String>,
    landmarks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    pub photos: usize,
    pub users: usize,
    pub landmarks: usize,
    pub albums: usize,
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} photos, {} users, {} landmarks, {} albums",
            self.photos, self.users, self.landmarks, self.albums
        )
    }
}

fn optional(field: &str) -> Option<String> {
    (field != "-" && !field.is_empty()).then(|| field.to_owned())
}

impl Corpus {
    pub fn from_records(photos: Vec<PhotoRecord>) -> Result<Self> {
        if photos.is_empty() {
            return Err(Error::invalid("empty corpus"));
        }
        let mut index = HashMap::with_capacity(photos.len());
        for (i, p) in photos.iter().enumerate() {
            if p.photo_id.is_empty() {
                return Err(Error::invalid(format!("photo at position {i} has an empty id")));
            }
            if p.landmark_id.is_empty() {
                return Err(Error::invalid(format!("photo `{}` has an empty landmark", p.photo_id)));
            }
            if index.insert(p.photo_id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate photo id `{}`", p.photo_id)));
            }
        }
        let mut album_owner: HashMap<&str, &str> = HashMap::new();
        for p in &photos {
            if let Some(target) = &p.is_junk_of {
                if !index.contains_key(target) {
                    return Err(Error::invalid(format!(
                        "photo `{}` is marked junk of unknown photo `{target}`",
                        p.photo_id
                    )));
                }
            }
            if let Some(album) = &p.album_id {
                match album_owner.insert(album, &p.user_id) {
                    Some(prev) if prev != p.user_id => {
                        return Err(Error::invalid(format!(
                            "album `{album}` is referenced by users `{prev}` and `{}`",
                            p.user_id
                        )))
                    }
                    _ => {}
                }
            }
        }
        let mut users: Vec<String> = photos.iter().map(|p| p.user_id.clone()).collect();
        users.sort();
        users.dedup();
        let mut landmarks: Vec<String> = photos.iter().map(|p| p.landmark_id.clone()).collect();
        landmarks.sort();
        landmarks.dedup();
        Ok(Self {
            photos,
            index,
            users,
            landmarks,
        })
    }

    pub fn photos(&self) -> &[PhotoRecord] {
        &self.photos
    }

    pub fn len(&self) -> usize {
        self.photos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.photos.is_empty()
    }

    pub fn photo(&self, id: &str) -> Option<&PhotoRecord> {
        self.index.get(id).map(|&i| &self.photos[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Sorted distinct user ids.
    pub fn users(&self) -> &[String] {
        &self.users
    }

    /// Sorted distinct landmark ids.
    pub fn landmarks(&self) -> &[String] {
        &self.landmarks
    }

    /// Albums in order of first appearance.
    pub fn albums(&self, mode: AlbumMode) -> Vec<UserAlbum> {
        let mut order: Vec<UserAlbum> = Vec::new();
        let mut slot: HashMap<String, usize> = HashMap::new();
        for p in &self.photos {
            let key = match (mode, &p.album_id) {
                (AlbumMode::Manifest, Some(a)) => a.clone(),
                _ => format!("{}:all", p.user_id),
            };
            let i = *slot.entry(key.clone()).or_insert_with(|| {
                order.push(UserAlbum {
                    album_id: key,
                    user_id: p.user_id.clone(),
                    photo_ids: Vec::new(),
                });
                order.len() - 1
            });
            order[i].photo_ids.push(p.photo_id.clone());
        }
        order
    }

    /// Photo ids marked as duplicates of `query`.
    pub fn junk_of(&self, query: &str) -> Vec<&str> {
        self.photos
            .iter()
            .filter(|p| p.is_junk_of.as_deref() == Some(query))
            .map(|p| p.photo_id.as_str())
            .collect()
    }

    pub fn stats(&self, mode: AlbumMode) -> CorpusStats {
        CorpusStats {
            photos: self.photos.len(),
            users: self.users.len(),
            landmarks: self.landmarks.len(),
            albums: self.albums(mode).len(),
        }
    }

    /// Serialises back to the tab-separated manifest format.
    pub fn to_manifest(&self) -> String {
        let mut out = String::from("# photo_id\tuser_id\talbum_id\tlandmark_id\timage_path\tjunk_of\n");
        for p in &self.photos {
            let opt = |o: &Option<String>| o.clone().unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                p.photo_id,
                p.user_id,
                opt(&p.album_id),
                p.landmark_id,
                opt(&p.image_path),
                opt(&p.is_junk_of)
            ));
        }
        out
    }
}

/// Parses manifest text. `source` names the input in error messages.
pub fn parse_manifest(text: &str, source: &str) -> Result<Corpus> {
    let mut photos = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: source.to_owned(),
            line: lineno,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(parse_err(format!("expected 6 tab-separated fields, found {}", fields.len())));
        }
        for (name, value) in [("photo_id", fields[0]), ("user_id", fields[1]), ("landmark_id", fields[3])] {
            if value.is_empty() || value == "-" {
                return Err(parse_err(format!("required field {name} is empty")));
            }
        }
        if let Some(first) = seen.insert(fields[0].to_owned(), lineno) {
            return Err(parse_err(format!(
                "duplicate photo id `{}` (first seen on line {first})",
                fields[0]
            )));
        }
        photos.push(PhotoRecord {
            photo_id: fields[0].to_owned(),
            user_id: fields[1].to_owned(),
            album_id: optional(fields[2]),
            landmark_id: fields[3].to_owned(),
            image_path: optional(fields[4]),
            is_junk_of: optional(fields[5]),
        });
    }
    Corpus::from_records(photos)
}

pub fn ingest_manifest(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, &path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<String, Split>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn get(&self, photo_id: &str) -> Option<Split> {
        self.assignment.get(photo_id).copied()
    }

    /// Photo ids of `split` in corpus order.
    pub fn ids<'a>(&self, corpus: &'a Corpus, split: Split) -> Vec<&'a str> {
        corpus
            .photos()
            .iter()
            .filter(|p| self.get(&p.photo_id) == Some(split))
            .map(|p| p.photo_id.as_str())
            .collect()
    }

    /// Moves the given photos into `split`; unknown ids are ignored.
    pub fn pin<'a>(&mut self, ids: impl IntoIterator<Item = &'a str>, split: Split) {
        for id in ids {
            if let Some(slot) = self.assignment.get_mut(id) {
                *slot = split;
            }
        }
    }

    pub fn to_text(&self, corpus: &Corpus) -> String {
        let mut out = format!("# seed={}\n", self.seed);
        for p in corpus.photos() {
            if let Some(s) = self.get(&p.photo_id) {
                out.push_str(&format!("{}\t{}\n", p.photo_id, s.name()));
            }
        }
        out
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut assignment = BTreeMap::new();
        let mut seed = 0;
        for (lineno, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix("# seed=") {
                seed = rest.trim().parse().unwrap_or(0);
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: source.to_owned(),
                line: lineno + 1,
                message,
            };
            let (id, name) = line
                .split_once('\t')
                .ok_or_else(|| err("expected `photo_id<TAB>split`".into()))?;
            let split = name.trim().parse().map_err(err)?;
            if assignment.insert(id.to_owned(), split).is_some() {
                return Err(err(format!("photo `{id}` assigned twice")));
            }
        }
        Ok(Self { assignment, seed })
    }
}

/// Stratified split by landmark. Validation and test strata take the rounded
/// ratio products, the remainder goes to train.
pub fn split_corpus(corpus: &Corpus, ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::invalid(format!("split ratios must lie in [0, 1], got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios must sum to 1, got {sum}")));
    }
    let mut strata: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for p in corpus.photos() {
        strata.entry(&p.landmark_id).or_default().push(&p.photo_id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    for (landmark, mut ids) in strata {
        let n = ids.len();
        if n < 3 {
            return Err(Error::invalid(format!(
                "landmark `{landmark}` has {n} photos; unsplittable stratum (need at least 3)"
            )));
        }
        ids.shuffle(&mut rng);
        let n_val = ((n as f64 * ratios[1]).round() as usize).min(n);
        let n_test = ((n as f64 * ratios[2]).round() as usize).min(n - n_val);
        for (k, id) in ids.into_iter().enumerate() {
            let split = if k < n_val {
                Split::Validation
            } else if k < n_val + n_test {
                Split::Test
            } else {
                Split::Train
            };
            assignment.insert(id.to_owned(), split);
        }
    }
    Ok(SplitAssignment { assignment, seed })
}
