//! Labeled sample records and their JSON Lines manifest format.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::image::BBox;

/// Where a sample's pixels came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Real,
    Pbda,
    Iida,
}

impl Origin {
    pub fn as_str(&self) -> &'static str {
        match self {
            Origin::Real => "real",
            Origin::Pbda => "pbda",
            Origin::Iida => "iida",
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "real" => Ok(Origin::Real),
            "pbda" => Ok(Origin::Pbda),
            "iida" => Ok(Origin::Iida),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub id: String,
    pub path: String,
    pub label: String,
    pub patient_id: String,
    pub split: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_index: Option<usize>,
    pub origin: Origin,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        path: impl Into<String>,
        label: impl Into<String>,
        patient_id: impl Into<String>,
    ) -> Self {
        Sample {
            id: id.into(),
            path: path.into(),
            label: label.into(),
            patient_id: patient_id.into(),
            split: String::new(),
            bbox: None,
            embedding_index: None,
            origin: Origin::Real,
        }
    }

    pub fn with_split(mut self, split: impl Into<String>) -> Self {
        self.split = split.into();
        self
    }

    pub fn with_bbox(mut self, bbox: BBox) -> Self {
        self.bbox = Some(bbox);
        self
    }

    pub fn with_embedding(mut self, index: usize) -> Self {
        self.embedding_index = Some(index);
        self
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }

    /// Resolves `path` against a base directory unless it is already absolute.
    pub fn resolve_path(&self, base: &Path) -> PathBuf {
        let p = Path::new(&self.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    pub fn embedding(&self) -> Result<usize> {
        self.embedding_index
            .ok_or_else(|| Error::MissingEmbedding(self.id.clone()))
    }
}

#[derive(Deserialize)]
struct Record {
    id: String,
    path: String,
    label: String,
    patient_id: String,
    #[serde(default)]
    split: String,
    #[serde(default)]
    bbox: Option<BBox>,
    #[serde(default)]
    embedding_index: Option<usize>,
    #[serde(default)]
    origin: Option<String>,
}

/// Ordered collection of samples with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    samples: Vec<Sample>,
    class_names: Vec<String>,
}

impl Manifest {
    /// Builds a manifest, checking id uniqueness and bbox shapes.
    /// Class names are listed in order of first appearance.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        let mut class_names = Vec::new();
        let mut classes = HashSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
            if let Some(b) = &s.bbox {
                b.validate_shape()?;
            }
            if classes.insert(s.label.as_str()) {
                class_names.push(s.label.clone());
            }
        }
        Ok(Manifest {
            samples,
            class_names,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Per-class sample counts, keyed by label.
    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s.label.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Samples whose label is `class`, in manifest order.
    pub fn of_class<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a Sample> + 'a {
        self.samples.iter().filter(move |s| s.label == class)
    }

    /// Keeps the samples matching `pred`, preserving order.
    pub fn filter(&self, mut pred: impl FnMut(&Sample) -> bool) -> Manifest {
        let samples: Vec<Sample> = self.samples.iter().filter(|s| pred(s)).cloned().collect();
        Manifest::new(samples).expect("subset of a valid manifest is valid")
    }

    /// Checks that every embedding index refers to a row of `table`.
    pub fn check_embeddings(&self, table: &EmbeddingTable) -> Result<()> {
        for s in &self.samples {
            if let Some(i) = s.embedding_index {
                if i >= table.count() {
                    return Err(Error::EmbeddingIndexOutOfRange {
                        id: s.id.clone(),
                        index: i,
                        count: table.count(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            let origin = match rec.origin {
                None => Origin::Real,
                Some(v) => v.parse().map_err(|value| Error::UnknownOrigin {
                    line: line_no,
                    value,
                })?,
            };
            samples.push(Sample {
                id: rec.id,
                path: rec.path,
                label: rec.label,
                patient_id: rec.patient_id,
                split: rec.split,
                bbox: rec.bbox,
                embedding_index: rec.embedding_index,
                origin,
            });
        }
        Manifest::new(samples)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_jsonl(&text)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("sample serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// Loads a JSONL manifest from disk.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    Manifest::load(path)
}
