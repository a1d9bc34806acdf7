//! Manifest-driven text ingestion.
//!
//! A manifest is TOML:
//!
//! ```toml
//! name = "rosmap"
//! modalities = ["mrna", "meth", "mirna"]
//! num_classes = 2            # optional, inferred from labels otherwise
//!
//! [splits.train]
//! labels = "labels_tr.csv"
//! rows = 245                 # optional, checked when present
//! features = { mrna = "1_tr.csv", meth = "2_tr.csv", mirna = "3_tr.csv" }
//!
//! [splits.test]
//! labels = "labels_te.csv"
//! features = { mrna = "1_te.csv", meth = "2_te.csv", mirna = "3_te.csv" }
//! ```
//!
//! Relative paths resolve against `root` when set, which itself resolves
//! against the manifest's directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, LabeledBatch};
use crate::error::{Error, Result};
use crate::numgrad::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFiles {
    pub labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    pub features: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: SplitFiles,
    pub test: SplitFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    pub modalities: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    pub splits: Splits,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        if m.modalities.is_empty() {
            return Err(Error::ModalityCount(0));
        }
        for (split, files) in [("train", &m.splits.train), ("test", &m.splits.test)] {
            for name in &m.modalities {
                if !files.features.contains_key(name) {
                    return Err(Error::Config(format!(
                        "manifest: split {split} has no feature file for modality {name}"
                    )));
                }
            }
            if let Some(extra) = files.features.keys().find(|k| !m.modalities.contains(k)) {
                return Err(Error::Config(format!(
                    "manifest: split {split} lists undeclared modality {extra}"
                )));
            }
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Reads the manifest at `path` and loads the files it names.
    pub fn load(path: &Path) -> Result<Dataset> {
        let manifest = Self::read(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        load_dataset(dir, &manifest)
    }
}

fn ingest(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Non-empty lines with their 1-based numbers. Blank lines are only allowed at the end.
fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines: Vec<(usize, String)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .collect();
    while lines.last().is_some_and(|(_, l)| l.is_empty()) {
        lines.pop();
    }
    if let Some((n, _)) = lines.iter().find(|(_, l)| l.is_empty()) {
        return Err(ingest(path, *n, "blank line inside data"));
    }
    Ok(lines)
}

pub(crate) fn read_features(path: &Path) -> Result<Matrix> {
    let lines = data_lines(path)?;
    let mut data = Vec::new();
    let mut width = None;
    for (n, line) in &lines {
        let mut count = 0;
        for cell in line.split(',') {
            let cell = cell.trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| ingest(path, *n, format!("non-numeric cell {cell:?}")))?;
            if !v.is_finite() {
                return Err(ingest(path, *n, format!("non-finite cell {cell:?}")));
            }
            data.push(v);
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(ingest(path, *n, format!("{count} columns, expected {w}")));
            }
            _ => {}
        }
    }
    Matrix::new(lines.len(), width.unwrap_or(0), data)
}

pub(crate) fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let lines = data_lines(path)?;
    if lines.is_empty() {
        return Err(ingest(path, 1, "empty label file"));
    }
    lines
        .iter()
        .map(|(n, line)| {
            if let Ok(v) = line.parse::<usize>() {
                return Ok(v);
            }
            // some releases store labels as floats such as 1.0
            match line.parse::<f64>() {
                Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 => Ok(v as usize),
                _ => Err(ingest(path, *n, format!("label {line:?} is not a non-negative integer"))),
            }
        })
        .collect()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_split(
    base: &Path,
    manifest: &Manifest,
    split: &str,
    files: &SplitFiles,
) -> Result<(Vec<Matrix>, Vec<usize>)> {
    let label_path = resolve(base, &files.labels);
    let labels = read_labels(&label_path)?;
    if let Some(rows) = files.rows {
        if rows != labels.len() {
            return Err(ingest(
                &label_path,
                labels.len().min(rows) + 1,
                format!("{} rows, manifest declares {rows} for {split}", labels.len()),
            ));
        }
    }
    let mut mods = Vec::with_capacity(manifest.modalities.len());
    for name in &manifest.modalities {
        let path = resolve(base, &files.features[name]);
        let x = read_features(&path)?;
        if x.rows() != labels.len() {
            return Err(ingest(
                &path,
                x.rows().min(labels.len()) + 1,
                format!("{} rows, label file has {}", x.rows(), labels.len()),
            ));
        }
        mods.push(x);
    }
    Ok((mods, labels))
}

/// Loads both splits named by `manifest`, resolving relative paths against `dir`.
pub fn load_dataset(dir: &Path, manifest: &Manifest) -> Result<Dataset> {
    let base = match &manifest.root {
        Some(r) => resolve(dir, r),
        None => dir.to_path_buf(),
    };
    let (train_x, train_y) = load_split(&base, manifest, "train", &manifest.splits.train)?;
    let (test_x, test_y) = load_split(&base, manifest, "test", &manifest.splits.test)?;
    for (m, (a, b)) in train_x.iter().zip(&test_x).enumerate() {
        if a.cols() != b.cols() {
            let path = resolve(&base, &manifest.splits.test.features[&manifest.modalities[m]]);
            return Err(ingest(&path, 1, format!("{} columns, train split has {}", b.cols(), a.cols())));
        }
    }
    let observed = train_y.iter().chain(&test_y).max().map_or(0, |&y| y + 1);
    let num_classes = manifest.num_classes.unwrap_or(observed);
    let names = manifest.modalities.clone();
    Ok(Dataset {
        name: manifest.name.clone(),
        train: LabeledBatch::new(train_x, train_y, num_classes, names.clone())?,
        test: LabeledBatch::new(test_x, test_y, num_classes, names)?,
    })
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn features_text(x: &Matrix) -> String {
    let mut out = String::new();
    for row in x.row_iter() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
    out
}

/// Writes every split and a `manifest.toml` into `dir`; returns the manifest path.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut split_files = Vec::new();
    for (split, batch) in [("train", &dataset.train), ("test", &dataset.test)] {
        let labels = PathBuf::from(format!("{split}_labels.csv"));
        let text: String = batch.labels().iter().map(|y| format!("{y}\n")).collect();
        write_file(&dir.join(&labels), &text)?;
        let mut features = BTreeMap::new();
        for (name, x) in batch.modality_names().iter().zip(batch.modalities()) {
            let file = PathBuf::from(format!("{split}_{}.csv", file_stem(name)));
            write_file(&dir.join(&file), &features_text(x))?;
            features.insert(name.clone(), file);
        }
        split_files.push(SplitFiles {
            labels,
            rows: Some(batch.len()),
            features,
        });
    }
    let test = split_files.pop().expect("two splits");
    let train = split_files.pop().expect("two splits");
    let manifest = Manifest {
        name: dataset.name.clone(),
        root: None,
        modalities: dataset.modality_names().to_vec(),
        num_classes: Some(dataset.num_classes()),
        splits: Splits { train, test },
    };
    let path = dir.join("manifest.toml");
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    write_file(&path, &text)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_label_file_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("y.csv");
        fs::write(&p, "").unwrap();
        assert!(matches!(read_labels(&p), Err(Error::Ingest { line: 1, .. })));
    }

    #[test]
    fn float_labels_accepted_fractional_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("y.csv");
        fs::write(&p, "0\n1.0\n2\n\n").unwrap();
        assert_eq!(read_labels(&p).unwrap(), vec![0, 1, 2]);
        fs::write(&p, "0\n1.5\n").unwrap();
        assert!(matches!(read_labels(&p), Err(Error::Ingest { line: 2, .. })));
        fs::write(&p, "0\n-1\n").unwrap();
        assert!(matches!(read_labels(&p), Err(Error::Ingest { line: 2, .. })));
    }

    #[test]
    fn feature_errors_carry_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "1,2\n3,abc\n").unwrap();
        assert!(matches!(read_features(&p), Err(Error::Ingest { line: 2, .. })));
        fs::write(&p, "1,2\n3\n").unwrap();
        assert!(matches!(read_features(&p), Err(Error::Ingest { line: 2, .. })));
        fs::write(&p, "1,2\n\n3,4\n").unwrap();
        assert!(matches!(read_features(&p), Err(Error::Ingest { line: 2, .. })));
        let missing = dir.path().join("nope.csv");
        assert!(matches!(read_features(&missing), Err(Error::Io { .. })));
    }

    #[test]
    fn manifest_must_cover_modalities() {
        let text = r#"
modalities = ["a", "b"]
[splits.train]
labels = "y.csv"
features = { a = "a.csv" }
[splits.test]
labels = "y.csv"
features = { a = "a.csv", b = "b.csv" }
"#;
        assert!(matches!(Manifest::parse(text), Err(Error::Config(_))));
    }
}
