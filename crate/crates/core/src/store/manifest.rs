use std::collections::HashSet;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.json",
            Split::Test => "test.json",
        }
    }
}

/// Paths of one sample's feature files, relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFiles {
    pub tokens: String,
    pub regions: String,
    pub geometry: String,
    pub pair_txt: String,
    pub pair_img: String,
    pub tox: String,
    pub nsfw: String,
    pub cap: String,
}

impl FeatureFiles {
    pub fn all(&self) -> [(&'static str, &str); 8] {
        [
            ("tokens", &self.tokens),
            ("regions", &self.regions),
            ("geometry", &self.geometry),
            ("pair_txt", &self.pair_txt),
            ("pair_img", &self.pair_img),
            ("tox", &self.tox),
            ("nsfw", &self.nsfw),
            ("cap", &self.cap),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub label: u8,
    pub raw_text: String,
    pub files: FeatureFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub split: Split,
    pub samples: Vec<SampleEntry>,
    /// Min-max constants for the lexicon score, taken from the training split.
    pub msl_min: f32,
    pub msl_max: f32,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let bytes = std::fs::read(path).map_err(|e| StoreError::io(path, e))?;
        let m: Manifest = serde_json::from_slice(&bytes).map_err(|e| StoreError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        m.validate(path)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| StoreError::io(path, e))
    }

    fn validate(&self, path: &Path) -> Result<(), StoreError> {
        let bad = |message: String| StoreError::Manifest {
            path: path.to_path_buf(),
            message,
        };
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(bad(format!("duplicate sample id `{}`", s.id)));
            }
            if s.label > 1 {
                return Err(bad(format!("sample `{}`: label {} is not 0 or 1", s.id, s.label)));
            }
            for (field, rel) in s.files.all() {
                if !is_contained(rel) {
                    return Err(bad(format!("sample `{}` {field}: path `{rel}` escapes the dataset root", s.id)));
                }
            }
        }
        if !(self.msl_min.is_finite() && self.msl_max.is_finite()) || self.msl_min > self.msl_max {
            return Err(bad(format!(
                "invalid msl range [{}, {}]",
                self.msl_min, self.msl_max
            )));
        }
        Ok(())
    }
}

/// True when `rel` is a relative path with no `..`, root or prefix parts.
pub fn is_contained(rel: &str) -> bool {
    let p = Path::new(rel);
    !rel.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}

pub fn resolve(root: &Path, rel: &str) -> PathBuf {
    root.join(rel)
}
