//! Flat `key = value` pipeline configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::AlbumMode;
use crate::error::{Error, Result};
use crate::synth::{BiasMode, SynthSpec};
use crate::topic::VocabMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PoolMode {
    #[default]
    Fisher,
    Average,
}

impl FromStr for PoolMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fv" => Ok(Self::Fisher),
            "average" => Ok(Self::Average),
            other => Err(format!("unknown pool mode `{other}` (expected fv|average)")),
        }
    }
}

impl PoolMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fisher => "fv",
            Self::Average => "average",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EmbedMode {
    /// Train the pseudo-class network on the descriptors.
    #[default]
    Train,
    /// Use the descriptors as they are (e.g. externally fine-tuned features).
    Passthrough,
}

impl FromStr for EmbedMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Self::Train),
            "passthrough" => Ok(Self::Passthrough),
            other => Err(format!("unknown embed mode `{other}` (expected train|passthrough)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub album_mode: AlbumMode,
    pub split: [f64; 3],

    pub topics: usize,
    pub vocab: usize,
    pub vocab_mode: VocabMode,
    pub codebook_iters: usize,
    /// `None` means `50 / Z`.
    pub alpha: Option<f64>,
    pub eta: f64,
    pub lambda: f64,
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,

    pub latent: usize,
    pub mf_lambda: f64,
    pub mf_lr: f64,
    pub mf_epochs: usize,
    pub negative_ratio: f64,

    pub k: usize,
    pub classes: usize,

    pub embed_mode: EmbedMode,
    pub hidden: usize,
    pub embed_epochs: usize,
    pub embed_lr: f64,
    pub batch: usize,

    pub pca_dim: usize,
    pub gmm_components: usize,
    pub gmm_iters: usize,
    pub gmm_tol: f64,

    pub s: usize,
    pub n: usize,
    pub pool: PoolMode,
    pub aqe_k: usize,
    pub queries_per_landmark: usize,

    pub synth: SynthSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            album_mode: AlbumMode::Manifest,
            split: [0.7, 0.1, 0.2],
            topics: 20,
            vocab: 256,
            vocab_mode: VocabMode::Codebook,
            codebook_iters: 100,
            alpha: None,
            eta: 0.01,
            lambda: 0.4,
            sweeps: 500,
            burn_in: 200,
            thin: 10,
            latent: 64,
            mf_lambda: 0.05,
            mf_lr: 0.05,
            mf_epochs: 50,
            negative_ratio: 1.0,
            k: 40,
            classes: 1000,
            embed_mode: EmbedMode::Train,
            hidden: 256,
            embed_epochs: 50,
            embed_lr: 0.01,
            batch: 32,
            pca_dim: 64,
            gmm_components: 256,
            gmm_iters: 200,
            gmm_tol: 1e-6,
            s: 20,
            n: 100,
            pool: PoolMode::Fisher,
            aqe_k: 10,
            queries_per_landmark: 20,
            synth: SynthSpec::default(),
        }
    }
}

/// Keys that select between outputs of a finished run rather than changing
/// any artifact, so they stay out of the hash.
const UNHASHED: &[&str] = &["retrieve.pool"];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

impl PipelineConfig {
    /// Smaller mixture and pseudo-class counts sized for one CPU.
    pub fn desk() -> Self {
        Self {
            classes: 64,
            hidden: 128,
            embed_epochs: 30,
            gmm_components: 2,
            pca_dim: 16,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Self::default()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    /// A preset name or a config file laid over the defaults.
    pub fn load(spec: &str) -> Result<Self> {
        if let Some(c) = Self::preset(spec) {
            return Ok(c);
        }
        let path = Path::new(spec);
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, &path.display().to_string())
    }

    /// `key = value` lines over the defaults; a leading `preset = desk`
    /// switches the base.
    pub fn parse_text(text: &str, source: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: source.to_owned(),
                line: lineno + 1,
                message: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "preset" {
                cfg = Self::preset(value).ok_or_else(|| Error::config("preset", format!("unknown preset `{value}`")))?;
                continue;
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "corpus.album_mode" => self.album_mode = parse(key, value)?,
            "split.train" => self.split[0] = parse(key, value)?,
            "split.validation" => self.split[1] = parse(key, value)?,
            "split.test" => self.split[2] = parse(key, value)?,
            "topic.z" => self.topics = parse(key, value)?,
            "topic.vocab" => self.vocab = parse(key, value)?,
            "topic.vocab_mode" => self.vocab_mode = parse(key, value)?,
            "topic.codebook_iters" => self.codebook_iters = parse(key, value)?,
            "topic.alpha" => {
                self.alpha = if value == "auto" { None } else { Some(parse(key, value)?) };
            }
            "topic.eta" => self.eta = parse(key, value)?,
            "topic.lambda" => self.lambda = parse(key, value)?,
            "topic.sweeps" => self.sweeps = parse(key, value)?,
            "topic.burn_in" => self.burn_in = parse(key, value)?,
            "topic.thin" => self.thin = parse(key, value)?,
            "mf.latent" => self.latent = parse(key, value)?,
            "mf.lambda" => self.mf_lambda = parse(key, value)?,
            "mf.lr" => self.mf_lr = parse(key, value)?,
            "mf.epochs" => self.mf_epochs = parse(key, value)?,
            "mf.negative_ratio" => self.negative_ratio = parse(key, value)?,
            "expand.k" => self.k = parse(key, value)?,
            "pseudo.c" => self.classes = parse(key, value)?,
            "embed.mode" => self.embed_mode = parse(key, value)?,
            "embed.hidden" => self.hidden = parse(key, value)?,
            "embed.epochs" => self.embed_epochs = parse(key, value)?,
            "embed.lr" => self.embed_lr = parse(key, value)?,
            "embed.batch" => self.batch = parse(key, value)?,
            "pca.dim" => self.pca_dim = parse(key, value)?,
            "gmm.g" => self.gmm_components = parse(key, value)?,
            "gmm.max_iters" => self.gmm_iters = parse(key, value)?,
            "gmm.tol" => self.gmm_tol = parse(key, value)?,
            "retrieve.s" => self.s = parse(key, value)?,
            "retrieve.n" => self.n = parse(key, value)?,
            "retrieve.pool" => self.pool = parse(key, value)?,
            "retrieve.aqe_k" => self.aqe_k = parse(key, value)?,
            "eval.queries_per_landmark" => self.queries_per_landmark = parse(key, value)?,
            "synth.landmarks" => self.synth.landmarks = parse(key, value)?,
            "synth.photos_per_landmark" => self.synth.photos_per_landmark = parse(key, value)?,
            "synth.users" => self.synth.users = parse(key, value)?,
            "synth.topics" => self.synth.topics = parse(key, value)?,
            "synth.dim" => self.synth.dim = parse(key, value)?,
            "synth.noise" => self.synth.noise = parse(key, value)?,
            "synth.bias" => self.synth.bias = parse(key, value)?,
            "synth.bias_mode" => self.synth.bias_mode = parse::<BiasMode>(key, value)?,
            "synth.queries_per_landmark" => self.synth.queries_per_landmark = parse(key, value)?,
            "synth.junk_per_query" => self.synth.junk_per_query = parse(key, value)?,
            "synth.concentration" => self.synth.concentration = parse(key, value)?,
            "synth.seed" => self.synth.seed = parse(key, value)?,
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("topic.z", self.topics),
            ("topic.vocab", self.vocab),
            ("topic.sweeps", self.sweeps),
            ("topic.thin", self.thin),
            ("mf.latent", self.latent),
            ("mf.epochs", self.mf_epochs),
            ("expand.k", self.k),
            ("embed.hidden", self.hidden),
            ("embed.epochs", self.embed_epochs),
            ("embed.batch", self.batch),
            ("pca.dim", self.pca_dim),
            ("gmm.g", self.gmm_components),
            ("gmm.max_iters", self.gmm_iters),
            ("retrieve.s", self.s),
            ("retrieve.n", self.n),
            ("retrieve.aqe_k", self.aqe_k),
            ("eval.queries_per_landmark", self.queries_per_landmark),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.burn_in >= self.sweeps {
            return Err(Error::config("topic.burn_in", "must be smaller than topic.sweeps"));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::config("topic.lambda", "must lie strictly between 0 and 1"));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::config("topic.alpha", "must be positive"));
            }
        }
        let positive_reals = [
            ("topic.eta", self.eta),
            ("mf.lr", self.mf_lr),
            ("mf.negative_ratio", self.negative_ratio),
            ("embed.lr", self.embed_lr),
            ("gmm.tol", self.gmm_tol),
        ];
        for (field, v) in positive_reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be a positive number"));
            }
        }
        if !(self.mf_lambda >= 0.0 && self.mf_lambda.is_finite()) {
            return Err(Error::config("mf.lambda", "must be non-negative"));
        }
        if self.classes < 2 {
            return Err(Error::config("pseudo.c", "at least 2 pseudo-classes are needed"));
        }
        if self.vocab_mode == VocabMode::Codebook && self.vocab < 2 {
            return Err(Error::config("topic.vocab", "a codebook needs at least 2 words"));
        }
        for (i, name) in ["split.train", "split.validation", "split.test"].iter().enumerate() {
            if !(0.0..=1.0).contains(&self.split[i]) {
                return Err(Error::config(*name, "must lie in [0, 1]"));
            }
        }
        if (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("split.test", "split ratios must sum to 1"));
        }
        if self.split[2] == 0.0 {
            return Err(Error::config("split.test", "the test split holds the database and must be non-empty"));
        }
        self.synth.validate()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.topics as f64)
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synth;
        vec![
            ("seed", self.seed.to_string()),
            ("corpus.album_mode", self.album_mode.to_string()),
            ("split.train", self.split[0].to_string()),
            ("split.validation", self.split[1].to_string()),
            ("split.test", self.split[2].to_string()),
            ("topic.z", self.topics.to_string()),
            ("topic.vocab", self.vocab.to_string()),
            ("topic.vocab_mode", self.vocab_mode.to_string()),
            ("topic.codebook_iters", self.codebook_iters.to_string()),
            ("topic.alpha", self.alpha.map_or("auto".into(), |a| a.to_string())),
            ("topic.eta", self.eta.to_string()),
            ("topic.lambda", self.lambda.to_string()),
            ("topic.sweeps", self.sweeps.to_string()),
            ("topic.burn_in", self.burn_in.to_string()),
            ("topic.thin", self.thin.to_string()),
            ("mf.latent", self.latent.to_string()),
            ("mf.lambda", self.mf_lambda.to_string()),
            ("mf.lr", self.mf_lr.to_string()),
            ("mf.epochs", self.mf_epochs.to_string()),
            ("mf.negative_ratio", self.negative_ratio.to_string()),
            ("expand.k", self.k.to_string()),
            ("pseudo.c", self.classes.to_string()),
            (
                "embed.mode",
                match self.embed_mode {
                    EmbedMode::Train => "train".into(),
                    EmbedMode::Passthrough => "passthrough".into(),
                },
            ),
            ("embed.hidden", self.hidden.to_string()),
            ("embed.epochs", self.embed_epochs.to_string()),
            ("embed.lr", self.embed_lr.to_string()),
            ("embed.batch", self.batch.to_string()),
            ("pca.dim", self.pca_dim.to_string()),
            ("gmm.g", self.gmm_components.to_string()),
            ("gmm.max_iters", self.gmm_iters.to_string()),
            ("gmm.tol", self.gmm_tol.to_string()),
            ("retrieve.s", self.s.to_string()),
            ("retrieve.n", self.n.to_string()),
            ("retrieve.pool", self.pool.name().into()),
            ("retrieve.aqe_k", self.aqe_k.to_string()),
            ("eval.queries_per_landmark", self.queries_per_landmark.to_string()),
            ("synth.landmarks", s.landmarks.to_string()),
            ("synth.photos_per_landmark", s.photos_per_landmark.to_string()),
            ("synth.users", s.users.to_string()),
            ("synth.topics", s.topics.to_string()),
            ("synth.dim", s.dim.to_string()),
            ("synth.noise", s.noise.to_string()),
            ("synth.bias", s.bias.to_string()),
            (
                "synth.bias_mode",
                match s.bias_mode {
                    BiasMode::Block => "block".into(),
                    BiasMode::Random => "random".into(),
                },
            ),
            ("synth.queries_per_landmark", s.queries_per_landmark.to_string()),
            ("synth.junk_per_query", s.junk_per_query.to_string()),
            ("synth.concentration", s.concentration.to_string()),
            ("synth.seed", s.seed.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    /// First 16 hex digits of SHA-256 over the hashed keys.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if !UNHASHED.contains(&k) {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    /// A per-stage seed so stages do not share random streams.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(stage.as_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}
