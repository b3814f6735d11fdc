use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One line of a JSON-Lines dataset manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: String,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// Parses manifest text. Blank lines are ignored; duplicates are kept.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, ManifestError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| ManifestError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if entry.label.is_empty() {
            return Err(ManifestError::Malformed {
                line: i + 1,
                message: "empty label".into(),
            });
        }
        out.push(entry);
    }
    Ok(out)
}

/// Reads a manifest file; relative clip paths are resolved against the
/// manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, ManifestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut entries = parse_manifest(&text)?;
    for e in &mut entries {
        if Path::new(&e.path).is_relative() {
            e.path = base.join(&e.path).display().to_string();
        }
    }
    Ok(entries)
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("labels not in the model vocabulary: {}", unknown.join(", "))]
pub struct VocabularyError {
    pub unknown: Vec<String>,
}

/// Closed label set; class index = position in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary {
    labels: Vec<String>,
}

impl Vocabulary {
    pub fn from_entries(entries: &[ManifestEntry]) -> Self {
        let set: BTreeSet<&str> = entries.iter().map(|e| e.label.as_str()).collect();
        Vocabulary {
            labels: set.into_iter().map(str::to_string).collect(),
        }
    }

    /// Builds from an explicit list, sorting and deduplicating it.
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Self {
        let set: BTreeSet<&str> = labels.iter().map(AsRef::as_ref).collect();
        Vocabulary {
            labels: set.into_iter().map(str::to_string).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    /// Fails with every manifest label missing from the vocabulary.
    pub fn check_covers(&self, entries: &[ManifestEntry]) -> Result<(), VocabularyError> {
        let unknown: BTreeSet<&str> = entries
            .iter()
            .map(|e| e.label.as_str())
            .filter(|l| self.index_of(l).is_none())
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(VocabularyError {
                unknown: unknown.into_iter().map(str::to_string).collect(),
            })
        }
    }
}
