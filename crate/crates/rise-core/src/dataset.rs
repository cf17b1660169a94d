//! On-disk artifact bundle and its in-memory form.
//!
//! A bundle is a manifest (JSON) plus a handful of flat files:
//! headerless CSV matrices for logits and features, one-token-per-line
//! files for gold labels and splits. Everything is cross-validated at
//! load time; a loaded [`DatasetBundle`] is immutable and safe to share
//! across threads.
//!
//! Manifest schema:
//!
//! ```json
//! {
//!   "labels": ["FactA", "FactB", "Ruling"],
//!   "dim": 16,
//!   "files": {
//!     "logits": "logits.csv",
//!     "features": "features.csv",
//!     "label_features": "label_features.csv",
//!     "gold": "gold.txt",
//!     "splits": "splits.txt",
//!     "ids": "ids.txt"
//!   },
//!   "meta": {}
//! }
//! ```
//!
//! `features`, `label_features`, and `ids` are optional; when `ids` is
//! absent, ids default to the 0-based row index rendered as a string.
//! Matrix row `i` always corresponds to example `i` in file order, and
//! the column order of logits and label features is the label order
//! declared in `labels`. Floats are serialized with the shortest decimal
//! representation that round-trips to the same 64-bit value.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which portion of the data an example belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::BadSplit(other.to_string())),
        }
    }
}

/// Ordered label vocabulary. Index order is the canonical column order
/// for logit matrices and confusion tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    /// Build a label set, enforcing: at least two labels, unique,
    /// non-empty, and free of characters that would corrupt the CSV
    /// interchange files (comma, newline).
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::BadLabel(format!(
                "need at least 2 labels, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.is_empty() {
                return Err(Error::BadLabel("empty label name".into()));
            }
            if name.contains(',') || name.contains('\n') || name.contains('\r') {
                return Err(Error::BadLabel(format!(
                    "label {name:?} contains a CSV delimiter character"
                )));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::BadLabel(format!("duplicate label name {name:?}")));
            }
        }
        Ok(LabelSet { names })
    }

    /// Number of labels C.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }
}

/// One classified example: logits over the label set plus optional
/// upstream feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub split: Split,
    /// Gold label index in `[0, C)`.
    pub gold: usize,
    /// Raw classifier scores, one per label.
    pub logits: Vec<f64>,
    /// Upstream sentence features of dimension D, when the bundle has them.
    pub features: Option<Vec<f64>>,
}

/// Provenance metadata carried by the manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    /// Feature dimension D; `None` when the bundle carries no features.
    pub dim: Option<usize>,
    /// Free-form provenance (upstream model name, creation info, ...).
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

/// The fully validated in-memory bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub labels: LabelSet,
    pub examples: Vec<ExampleRecord>,
    /// C×D matrix of label-name feature vectors, row order = label order.
    pub label_features: Option<Vec<Vec<f64>>>,
    pub manifest: BundleMeta,
}

impl DatasetBundle {
    /// Assemble and validate a bundle from parts.
    pub fn new(
        labels: LabelSet,
        examples: Vec<ExampleRecord>,
        label_features: Option<Vec<Vec<f64>>>,
        manifest: BundleMeta,
    ) -> Result<Self> {
        let bundle = DatasetBundle {
            labels,
            examples,
            label_features,
            manifest,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Number of labels C.
    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    /// Feature dimension D, when features are declared.
    pub fn feature_dim(&self) -> Option<usize> {
        self.manifest.dim
    }

    /// Examples belonging to one split, in file order.
    pub fn split_examples(&self, split: Split) -> Vec<&ExampleRecord> {
        self.examples.iter().filter(|e| e.split == split).collect()
    }

    /// Logit rows and gold indices for one split, in file order.
    pub fn split_logits_gold(&self, split: Split) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut logits = Vec::new();
        let mut gold = Vec::new();
        for ex in self.examples.iter().filter(|e| e.split == split) {
            logits.push(ex.logits.clone());
            gold.push(ex.gold);
        }
        (logits, gold)
    }

    /// Check every structural invariant; a bundle that passes is safe
    /// for all downstream operations.
    pub fn validate(&self) -> Result<()> {
        let c = self.labels.len();
        let dim = self.manifest.dim;
        let mut ids = HashSet::new();
        for ex in &self.examples {
            if !ids.insert(ex.id.as_str()) {
                return Err(Error::DuplicateId(ex.id.clone()));
            }
            if ex.gold >= c {
                return Err(Error::BadLabel(format!(
                    "example {}: gold index {} out of range for C={}",
                    ex.id, ex.gold, c
                )));
            }
            if ex.logits.len() != c {
                return Err(Error::DimensionMismatch(format!(
                    "example {}: {} logits, expected C={}",
                    ex.id,
                    ex.logits.len(),
                    c
                )));
            }
            match (&ex.features, dim) {
                (Some(f), Some(d)) if f.len() != d => {
                    return Err(Error::DimensionMismatch(format!(
                        "example {}: {} features, expected D={}",
                        ex.id,
                        f.len(),
                        d
                    )));
                }
                (Some(_), None) => {
                    return Err(Error::DimensionMismatch(format!(
                        "example {} has features but the manifest declares no dim",
                        ex.id
                    )));
                }
                _ => {}
            }
        }
        if let Some(lf) = &self.label_features {
            if lf.len() != c {
                return Err(Error::DimensionMismatch(format!(
                    "label_features has {} rows, expected C={}",
                    lf.len(),
                    c
                )));
            }
            let d = dim.ok_or_else(|| {
                Error::DimensionMismatch(
                    "label_features present but the manifest declares no dim".into(),
                )
            })?;
            for (i, row) in lf.iter().enumerate() {
                if row.len() != d {
                    return Err(Error::DimensionMismatch(format!(
                        "label_features row {i} has {} columns, expected D={d}",
                        row.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestJson {
    labels: Vec<String>,
    dim: Option<usize>,
    files: ManifestFiles,
    #[serde(default)]
    meta: serde_json::Map<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct ManifestFiles {
    logits: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_features: Option<String>,
    gold: String,
    splits: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ids: Option<String>,
}

/// Load and validate a bundle from a manifest path.
pub fn load_bundle(manifest_path: impl AsRef<Path>) -> Result<DatasetBundle> {
    let manifest_path = manifest_path.as_ref();
    let text = read_file(manifest_path)?;
    let manifest: ManifestJson =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let labels = LabelSet::new(manifest.labels)?;
    let c = labels.len();

    let logits = read_matrix(&base.join(&manifest.files.logits))?;
    let gold = read_indices(&base.join(&manifest.files.gold))?;
    let splits = read_splits(&base.join(&manifest.files.splits))?;
    let n = logits.len();
    if gold.len() != n || splits.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "row counts disagree: {} logits, {} gold, {} splits",
            n,
            gold.len(),
            splits.len()
        )));
    }
    for (i, row) in logits.iter().enumerate() {
        if row.len() != c {
            return Err(Error::DimensionMismatch(format!(
                "logits row {i} has {} columns, expected C={c}",
                row.len()
            )));
        }
    }

    let features = match &manifest.files.features {
        Some(rel) => {
            let m = read_matrix(&base.join(rel))?;
            if m.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "features has {} rows, expected {n}",
                    m.len()
                )));
            }
            Some(m)
        }
        None => None,
    };

    let label_features = match &manifest.files.label_features {
        Some(rel) => Some(read_matrix(&base.join(rel))?),
        None => None,
    };

    let ids: Vec<String> = match &manifest.files.ids {
        Some(rel) => read_lines(&base.join(rel))?,
        None => (0..n).map(|i| i.to_string()).collect(),
    };
    if ids.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "ids has {} rows, expected {n}",
            ids.len()
        )));
    }

    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        examples.push(ExampleRecord {
            id: ids[i].clone(),
            split: splits[i],
            gold: gold[i],
            logits: logits[i].clone(),
            features: features.as_ref().map(|m| m[i].clone()),
        });
    }

    DatasetBundle::new(
        labels,
        examples,
        label_features,
        BundleMeta {
            dim: manifest.dim,
            meta: manifest.meta,
        },
    )
}

/// Write a bundle into `dir` and return the manifest path.
///
/// `load_bundle(save_bundle(b)) == b` field-for-field; floats keep their
/// exact 64-bit values across the round-trip.
pub fn save_bundle(bundle: &DatasetBundle, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    bundle.validate()?;

    let has_features = bundle.examples.iter().any(|e| e.features.is_some());
    if has_features && bundle.examples.iter().any(|e| e.features.is_none()) {
        return Err(Error::DimensionMismatch(
            "bundle mixes examples with and without features".into(),
        ));
    }

    let logit_rows: Vec<&[f64]> = bundle
        .examples
        .iter()
        .map(|e| e.logits.as_slice())
        .collect();
    write_matrix(&dir.join("logits.csv"), &logit_rows)?;
    write_file(
        &dir.join("gold.txt"),
        &lines(bundle.examples.iter().map(|e| e.gold.to_string())),
    )?;
    write_file(
        &dir.join("splits.txt"),
        &lines(bundle.examples.iter().map(|e| e.split.to_string())),
    )?;
    write_file(
        &dir.join("ids.txt"),
        &lines(bundle.examples.iter().map(|e| e.id.clone())),
    )?;

    if has_features {
        let rows: Vec<&[f64]> = bundle
            .examples
            .iter()
            .map(|e| e.features.as_deref().expect("checked above"))
            .collect();
        write_matrix(&dir.join("features.csv"), &rows)?;
    }
    if let Some(lf) = &bundle.label_features {
        let rows: Vec<&[f64]> = lf.iter().map(Vec::as_slice).collect();
        write_matrix(&dir.join("label_features.csv"), &rows)?;
    }

    let manifest = ManifestJson {
        labels: bundle.labels.names().to_vec(),
        dim: bundle.manifest.dim,
        files: ManifestFiles {
            logits: "logits.csv".into(),
            features: has_features.then(|| "features.csv".into()),
            label_features: bundle
                .label_features
                .as_ref()
                .map(|_| "label_features.csv".into()),
            gold: "gold.txt".into(),
            splits: "splits.txt".into(),
            ids: Some("ids.txt".into()),
        },
        meta: bundle.manifest.meta.clone(),
    };
    let manifest_path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_file(&manifest_path, &text)?;
    Ok(manifest_path)
}

fn read_file(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn lines(items: impl Iterator<Item = String>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&item);
        out.push('\n');
    }
    out
}

/// Parse a headerless CSV of decimal floats, one row per line.
fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = read_file(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>> = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("{cell:?}: {e}"),
                })
            })
            .collect();
        rows.push(row?);
    }
    Ok(rows)
}

/// Serialize a float matrix as headerless CSV using the shortest decimal
/// form that parses back to the identical 64-bit value.
fn write_matrix(path: &Path, rows: &[&[f64]]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    write_file(path, &out)
}

fn read_indices(path: &Path) -> Result<Vec<usize>> {
    let text = read_file(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(lineno, line)| {
            line.trim().parse::<usize>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("{line:?}: {e}"),
            })
        })
        .collect()
}

fn read_splits(path: &Path) -> Result<Vec<Split>> {
    let text = read_file(path)?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|line| line.trim().parse::<Split>())
        .collect()
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = read_file(path)?;
    Ok(text.lines().map(str::to_string).collect())
}
