//! Run-directory artifacts. Each file starts with one header line naming
//! its kind and the hash of the config that produced it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::descriptors::codec;
use crate::descriptors::FeatureMatrix;
use crate::error::{Error, Result};

const PREFIX: &str = "#mqle-artifact";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub kind: String,
    pub config: String,
}

impl Header {
    fn line(&self) -> String {
        format!("{PREFIX} kind={} config={}\n", self.kind, self.config)
    }

    fn parse(line: &str, path: &Path) -> Result<Self> {
        let bad = || Error::format(format!("{} lacks a valid artifact header", path.display()));
        let rest = line.strip_prefix(PREFIX).ok_or_else(bad)?;
        let mut kind = None;
        let mut config = None;
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("kind", v)) => kind = Some(v.to_owned()),
                Some(("config", v)) => config = Some(v.to_owned()),
                _ => return Err(bad()),
            }
        }
        Ok(Self {
            kind: kind.ok_or_else(bad)?,
            config: config.ok_or_else(bad)?,
        })
    }
}

/// Locates artifacts under `<root>/<stage>/<name>` and checks their hashes.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
    config_hash: String,
    force: bool,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>, config_hash: impl Into<String>) -> Self {
        Self {
            root: root.into(),
            config_hash: config_hash.into(),
            force: false,
        }
    }

    /// Accept artifacts written under a different config hash.
    pub fn force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn path(&self, stage: &str, name: &str) -> PathBuf {
        self.root.join(stage).join(name)
    }

    pub fn exists(&self, stage: &'static str, name: &str) -> bool {
        self.path(stage, name).is_file()
    }

    pub fn write_bytes(&self, stage: &'static str, name: &str, kind: &str, payload: &[u8]) -> Result<PathBuf> {
        let path = self.path(stage, name);
        let dir = path.parent().expect("artifact path has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let header = Header {
            kind: kind.to_owned(),
            config: self.config_hash.clone(),
        };
        let mut bytes = header.line().into_bytes();
        bytes.extend_from_slice(payload);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Reads an artifact, checking its kind and (unless forced) its hash.
    pub fn read_bytes(&self, stage: &'static str, name: &str, kind: &str) -> Result<Vec<u8>> {
        let (header, payload) = self.read_with_header(stage, name)?;
        if header.kind != kind {
            return Err(Error::format(format!(
                "{} holds a `{}` artifact, expected `{kind}`",
                self.path(stage, name).display(),
                header.kind
            )));
        }
        if header.config != self.config_hash && !self.force {
            return Err(Error::ConfigHashMismatch {
                path: self.path(stage, name),
                expected: self.config_hash.clone(),
                found: header.config,
            });
        }
        Ok(payload)
    }

    pub fn read_with_header(&self, stage: &'static str, name: &str) -> Result<(Header, Vec<u8>)> {
        let path = self.path(stage, name);
        if !path.is_file() {
            return Err(Error::MissingArtifact { path, stage });
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let end = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(format!("{} lacks a valid artifact header", path.display())))?;
        let line = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::format(format!("{} has a non-UTF-8 header", path.display())))?;
        let header = Header::parse(line, &path)?;
        Ok((header, bytes[end + 1..].to_vec()))
    }

    pub fn write_text(&self, stage: &'static str, name: &str, kind: &str, text: &str) -> Result<PathBuf> {
        self.write_bytes(stage, name, kind, text.as_bytes())
    }

    pub fn read_text(&self, stage: &'static str, name: &str, kind: &str) -> Result<String> {
        let bytes = self.read_bytes(stage, name, kind)?;
        String::from_utf8(bytes).map_err(|_| Error::format(format!("{} is not UTF-8", self.path(stage, name).display())))
    }

    pub fn write_json<T: Serialize>(&self, stage: &'static str, name: &str, kind: &str, value: &T) -> Result<PathBuf> {
        let text = serde_json::to_string(value).map_err(|e| Error::format(e.to_string()))?;
        self.write_text(stage, name, kind, &text)
    }

    pub fn read_json<T: DeserializeOwned>(&self, stage: &'static str, name: &str, kind: &str) -> Result<T> {
        let text = self.read_text(stage, name, kind)?;
        serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", self.path(stage, name).display())))
    }

    pub fn write_features(&self, stage: &'static str, name: &str, kind: &str, features: &FeatureMatrix) -> Result<PathBuf> {
        let mut buf = Vec::new();
        codec::encode(features, &mut buf)?;
        self.write_bytes(stage, name, kind, &buf)
    }

    pub fn read_features(&self, stage: &'static str, name: &str, kind: &str) -> Result<FeatureMatrix> {
        let bytes = self.read_bytes(stage, name, kind)?;
        codec::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_checks() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path(), "abc");
        run.write_text("lda", "tokens.tsv", "tokens", "p1\t3\n").unwrap();
        assert_eq!(run.read_text("lda", "tokens.tsv", "tokens").unwrap(), "p1\t3\n");
        assert!(run.read_text("lda", "tokens.tsv", "model").is_err());

        let other = RunDir::new(dir.path(), "def");
        let err = other.read_text("lda", "tokens.tsv", "tokens").unwrap_err();
        assert!(matches!(err, Error::ConfigHashMismatch { .. }), "{err}");
        let forced = other.force(true);
        assert!(forced.read_text("lda", "tokens.tsv", "tokens").is_ok());
    }

    #[test]
    fn missing_names_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path(), "abc");
        let err = run.read_text("encode", "database-fv.mqlf", "features").unwrap_err();
        assert!(err.to_string().contains("run `encode` first"), "{err}");
    }

    #[test]
    fn features_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path(), "abc");
        let f = FeatureMatrix::from_parts(vec!["a".into(), "b".into()], 2, vec![1.0, -0.5, 3.25, 0.0]).unwrap();
        run.write_features("describe", "d.mqlf", "features", &f).unwrap();
        assert_eq!(run.read_features("describe", "d.mqlf", "features").unwrap(), f);
    }
}
