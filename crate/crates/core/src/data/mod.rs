//! Corpora, label vocabularies, deterministic splits and featurization.

pub mod featurize;
pub mod synth;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit;
pub use featurize::{featurize, FeatureVector};
pub use synth::{synth_generate, SynthConfig};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{0} contains no records")]
    Empty(PathBuf),
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("document {id:?} has label {label:?} outside the vocabulary")]
    UnknownLabel { id: String, label: String },
    #[error("dataset is not fully labeled (document {0:?} has no label)")]
    Unlabeled(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Ordered, distinct label names.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelVocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocab {
    pub fn new(names: Vec<String>) -> Result<Self, DataError> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(DataError::Invalid(format!("duplicate label {n:?}")));
            }
        }
        Ok(Self { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl TryFrom<Vec<String>> for LabelVocab {
    type Error = DataError;
    fn try_from(names: Vec<String>) -> Result<Self, DataError> {
        Self::new(names)
    }
}

impl From<LabelVocab> for Vec<String> {
    fn from(v: LabelVocab) -> Self {
        v.names
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    File(PathBuf),
    Generator { seed: u64, role: &'static str },
    Derived(String),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::File(p) => write!(f, "{}", p.display()),
            Provenance::Generator { seed, role } => write!(f, "synth(seed={seed}, {role})"),
            Provenance::Derived(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    documents: Vec<Document>,
    vocab: LabelVocab,
    provenance: Provenance,
}

impl Dataset {
    /// Validates id uniqueness, non-empty text and label membership.
    pub fn new(documents: Vec<Document>, vocab: LabelVocab, provenance: Provenance) -> Result<Self, DataError> {
        let mut seen = HashSet::with_capacity(documents.len());
        for d in &documents {
            if !seen.insert(d.id.as_str()) {
                return Err(DataError::DuplicateId(d.id.clone()));
            }
            if d.text.trim().is_empty() {
                return Err(DataError::Invalid(format!("document {:?} has empty text", d.id)));
            }
            if let Some(l) = &d.label {
                if vocab.lookup(l).is_none() {
                    return Err(DataError::UnknownLabel { id: d.id.clone(), label: l.clone() });
                }
            }
        }
        Ok(Self { documents, vocab, provenance })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn vocab(&self) -> &LabelVocab {
        &self.vocab
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        !self.documents.is_empty() && self.documents.iter().all(|d| d.label.is_some())
    }

    /// Label indices for every document; fails on the first unlabeled one.
    pub fn label_indices(&self) -> Result<Vec<usize>, DataError> {
        self.documents
            .iter()
            .map(|d| {
                let l = d.label.as_ref().ok_or_else(|| DataError::Unlabeled(d.id.clone()))?;
                // membership checked in `new`
                Ok(self.vocab.lookup(l).expect("label in vocab"))
            })
            .collect()
    }

    pub fn featurize(&self, dim: usize) -> Vec<FeatureVector> {
        self.documents.iter().map(|d| featurize(&d.text, dim)).collect()
    }

    /// Same documents interpreted under another vocabulary.
    pub fn with_vocab(self, vocab: LabelVocab) -> Result<Self, DataError> {
        Self::new(self.documents, vocab, self.provenance)
    }

    fn subset(&self, docs: Vec<Document>, part: &str) -> Dataset {
        Dataset {
            documents: docs,
            vocab: self.vocab.clone(),
            provenance: Provenance::Derived(format!("{}#{part}", self.provenance)),
        }
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), DataError> {
        let io = |source| DataError::Io { path: path.to_path_buf(), source };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        for d in &self.documents {
            let line = serde_json::to_string(d).expect("documents serialize");
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    /// Guesses from the file extension; anything but `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

impl FromStr for Format {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, DataError> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            _ => Err(DataError::Invalid(format!("unknown format {s:?} (expected jsonl or csv)"))),
        }
    }
}

struct Record {
    line: usize,
    id: Option<String>,
    text: Option<String>,
    label: Option<String>,
}

/// Reads a corpus. The vocabulary is built from observed labels in order of
/// first appearance.
pub fn load(path: &Path, format: Format) -> Result<Dataset, DataError> {
    let io = |source| DataError::Io { path: path.to_path_buf(), source };
    let file = audit::open(path).map_err(io)?;
    let records = match format {
        Format::Jsonl => read_jsonl(path, BufReader::new(file))?,
        Format::Csv => read_csv(path, file)?,
    };
    if records.is_empty() {
        return Err(DataError::Empty(path.to_path_buf()));
    }

    let mut names = Vec::new();
    let mut seen = HashSet::new();
    let mut docs = Vec::with_capacity(records.len());
    for r in records {
        let parse = |msg: &str| DataError::Parse { path: path.to_path_buf(), line: r.line, msg: msg.into() };
        let text = r.text.ok_or_else(|| parse("missing `text` field"))?;
        if text.trim().is_empty() {
            return Err(parse("empty `text` field"));
        }
        let label = r.label.filter(|l| !l.is_empty());
        if let Some(l) = &label {
            if seen.insert(l.clone()) {
                names.push(l.clone());
            }
        }
        docs.push(Document {
            id: r.id.unwrap_or_else(|| format!("L{}", r.line)),
            text,
            label,
        });
    }
    Dataset::new(docs, LabelVocab::new(names)?, Provenance::File(path.to_path_buf()))
}

fn read_jsonl(path: &Path, reader: impl BufRead) -> Result<Vec<Record>, DataError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |msg: String| DataError::Parse { path: path.to_path_buf(), line: line_no, msg };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| parse("expected a JSON object".into()))?;
        let field = |key: &str| -> Result<Option<String>, DataError> {
            match obj.get(key) {
                None | Some(serde_json::Value::Null) => Ok(None),
                Some(serde_json::Value::String(s)) => Ok(Some(s.clone())),
                Some(serde_json::Value::Number(n)) if key != "text" => Ok(Some(n.to_string())),
                Some(_) => Err(parse(format!("field `{key}` must be a string"))),
            }
        };
        out.push(Record { line: line_no, id: field("id")?, text: field("text")?, label: field("label")? });
    }
    Ok(out)
}

fn read_csv(path: &Path, reader: impl std::io::Read) -> Result<Vec<Record>, DataError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Parse { path: path.to_path_buf(), line: 1, msg: e.to_string() })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (id_col, text_col, label_col) = (col("id"), col("text"), col("label"));
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let get = |c: Option<usize>| c.and_then(|c| rec.get(c)).map(str::to_string);
        out.push(Record { line, id: get(id_col), text: get(text_col), label: get(label_col) });
    }
    Ok(out)
}

/// Deterministic 80/10/10 split: `floor(0.1·n)` documents each for
/// validation and test, the remainder for training.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let held = n / 10;
    (n - 2 * held, held, held)
}

pub fn split(ds: &Dataset, seed: u64) -> Result<Split, DataError> {
    if let Some(d) = ds.documents.iter().find(|d| d.label.is_none()) {
        return Err(DataError::Unlabeled(d.id.clone()));
    }
    if ds.len() < 10 {
        return Err(DataError::Invalid(format!("need at least 10 documents to split, got {}", ds.len())));
    }
    let mut docs = ds.documents.clone();
    docs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (_, n_val, n_test) = split_sizes(docs.len());
    let train = docs.split_off(n_val + n_test);
    let test = docs.split_off(n_val);
    Ok(Split {
        train: ds.subset(train, "train"),
        val: ds.subset(docs, "val"),
        test: ds.subset(test, "test"),
    })
}
