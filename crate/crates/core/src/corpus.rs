//! Canonical intent-classification corpora.
//!
//! A [`Corpus`] is a validated, immutable set of [`LabeledExample`]s in a
//! single language, together with a [`LabelRegistry`] that fixes the label
//! order used for tie-breaking everywhere downstream.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("example `{id}`: {message}")]
    InvalidExample { id: String, message: String },
    #[error("mixed languages in corpus: `{0}` and `{1}`")]
    MixedLanguages(String, String),
    #[error("{0}: no examples")]
    Empty(String),
    #[error("label registry needs at least 2 labels, found {0:?}")]
    TooFewLabels(Vec<String>),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("unknown split `{0}` (expected train, validation or test)")]
    UnknownSplit(String),
    #[error("cross-lingual task requires identical label sets; only in source: {only_source:?}, only in target: {only_target:?}")]
    LabelMismatch {
        only_source: Vec<String>,
        only_target: Vec<String>,
    },
    #[error("source and target corpora share language `{0}`; use a monolingual task")]
    SameLanguage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
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
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(CorpusError::UnknownSplit(other.to_string())),
        }
    }
}

/// One utterance with its intent label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub label: String,
    pub language: String,
    pub split: Split,
}

impl LabeledExample {
    /// Trims trailing line breaks from the text and checks the per-example
    /// invariants. A newline inside the text would corrupt the shot separator.
    fn normalized(mut self) -> Result<Self, String> {
        let trimmed_len = self.text.trim_end_matches(['\n', '\r']).len();
        self.text.truncate(trimmed_len);
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.text.trim().is_empty() {
            return Err("empty text".into());
        }
        if self.text.contains('\n') {
            return Err("text contains a newline".into());
        }
        if self.label.is_empty() {
            return Err("empty label".into());
        }
        if self.language.is_empty() {
            return Err("empty language".into());
        }
        Ok(self)
    }
}

/// Sorted set of intent labels with O(log n) index lookup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelRegistry {
    labels: Vec<String>,
}

impl LabelRegistry {
    pub fn new<I, S>(labels: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        let labels: Vec<String> = set.into_iter().collect();
        if labels.len() < 2 {
            return Err(CorpusError::TooFewLabels(labels));
        }
        if labels.iter().any(String::is_empty) {
            return Err(CorpusError::UnknownLabel(String::new()));
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }
}

impl TryFrom<Vec<String>> for LabelRegistry {
    type Error = CorpusError;

    fn try_from(labels: Vec<String>) -> Result<Self, Self::Error> {
        LabelRegistry::new(labels)
    }
}

impl From<LabelRegistry> for Vec<String> {
    fn from(r: LabelRegistry) -> Self {
        r.labels
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    name: String,
    language: String,
    examples: Vec<LabeledExample>,
    registry: LabelRegistry,
}

impl Corpus {
    /// Validates `examples` and builds the registry from the union of their
    /// labels.
    pub fn new(name: impl Into<String>, examples: Vec<LabeledExample>) -> Result<Self, CorpusError> {
        let name = name.into();
        let mut checked = Vec::with_capacity(examples.len());
        let mut ids = HashSet::with_capacity(examples.len());
        let mut language: Option<String> = None;
        for ex in examples {
            let id = ex.id.clone();
            let ex = ex.normalized().map_err(|message| CorpusError::InvalidExample {
                id: id.clone(),
                message,
            })?;
            if !ids.insert(ex.id.clone()) {
                return Err(CorpusError::DuplicateId(ex.id));
            }
            match &language {
                None => language = Some(ex.language.clone()),
                Some(lang) if *lang != ex.language => {
                    return Err(CorpusError::MixedLanguages(lang.clone(), ex.language));
                }
                Some(_) => {}
            }
            checked.push(ex);
        }
        let Some(language) = language else {
            return Err(CorpusError::Empty(name));
        };
        let registry = LabelRegistry::new(checked.iter().map(|e| e.label.clone()))?;
        Ok(Self {
            name,
            language,
            examples: checked,
            registry,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn registry(&self) -> &LabelRegistry {
        &self.registry
    }

    /// Examples of one split ordered by id.
    pub fn split_view(&self, split: Split) -> Vec<&LabeledExample> {
        let mut view: Vec<&LabeledExample> = self.examples.iter().filter(|e| e.split == split).collect();
        view.sort_by(|a, b| a.id.cmp(&b.id));
        view
    }

    /// Partitions a split into examples carrying `target_label` and all
    /// others, both ordered by id.
    pub fn label_pools(
        &self,
        split: Split,
        target_label: &str,
    ) -> Result<(Vec<&LabeledExample>, Vec<&LabeledExample>), CorpusError> {
        if !self.registry.contains(target_label) {
            return Err(CorpusError::UnknownLabel(target_label.to_string()));
        }
        Ok(self
            .split_view(split)
            .into_iter()
            .partition(|e| e.label == target_label))
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let io_err = |source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = std::io::BufWriter::new(File::create(path).map_err(io_err)?);
        self.write_jsonl_to(&mut out).map_err(io_err)?;
        out.flush().map_err(io_err)
    }

    /// Canonical JSONL, one object per line with keys
    /// `id, text, label, language, split` in that order.
    pub fn write_jsonl_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for ex in &self.examples {
            serde_json::to_writer(&mut *out, ex)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn corpus_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string())
}

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path).map(BufReader::new).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlRecord {
    id: String,
    text: String,
    label: String,
    language: String,
    split: String,
}

/// Reads a canonical JSONL corpus. Blank lines are skipped; every other line
/// must be an object with exactly the five canonical keys.
pub fn import_jsonl(path: &Path) -> Result<Corpus, CorpusError> {
    let reader = open(path)?;
    let line_err = |line: usize, message: String| CorpusError::Line {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut examples = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord =
            serde_json::from_str(&line).map_err(|e| line_err(lineno, format!("malformed JSON: {e}")))?;
        let split: Split = rec
            .split
            .parse()
            .map_err(|e: CorpusError| line_err(lineno, e.to_string()))?;
        if !ids.insert(rec.id.clone()) {
            return Err(line_err(lineno, format!("duplicate id `{}`", rec.id)));
        }
        let ex = LabeledExample {
            id: rec.id,
            text: rec.text,
            label: rec.label,
            language: rec.language,
            split,
        }
        .normalized()
        .map_err(|m| line_err(lineno, m))?;
        examples.push(ex);
    }
    Corpus::new(corpus_name(path), examples)
}

/// Reads `utterance<TAB>label` lines. Ids are `<file stem>:<line number>`.
pub fn import_tsv(path: &Path, language: &str, split: Split) -> Result<Corpus, CorpusError> {
    let reader = open(path)?;
    let name = corpus_name(path);
    let line_err = |line: usize, message: String| CorpusError::Line {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(line_err(
                lineno,
                format!("expected 2 tab-separated fields, found {}", fields.len()),
            ));
        }
        let (text, label) = (fields[0], fields[1].trim());
        if text.trim().is_empty() {
            return Err(line_err(lineno, "empty utterance".into()));
        }
        examples.push(
            LabeledExample {
                id: format!("{name}:{lineno}"),
                text: text.to_string(),
                label: label.to_string(),
                language: language.to_string(),
                split,
            }
            .normalized()
            .map_err(|m| line_err(lineno, m))?,
        );
    }
    if examples.is_empty() {
        return Err(CorpusError::Empty(path.display().to_string()));
    }
    Corpus::new(name, examples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    Monolingual,
    CrossLingual,
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskMode::Monolingual => "monolingual",
            TaskMode::CrossLingual => "cross_lingual",
        })
    }
}

/// Source corpus provides shots, target corpus provides queries.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    source: Arc<Corpus>,
    target: Arc<Corpus>,
    mode: TaskMode,
}

impl TaskSpec {
    pub fn monolingual(corpus: Arc<Corpus>) -> Self {
        Self {
            source: Arc::clone(&corpus),
            target: corpus,
            mode: TaskMode::Monolingual,
        }
    }

    pub fn cross_lingual(source: Arc<Corpus>, target: Arc<Corpus>) -> Result<Self, CorpusError> {
        if source.language() == target.language() {
            return Err(CorpusError::SameLanguage(source.language().to_string()));
        }
        if source.registry() != target.registry() {
            let src: BTreeSet<&str> = source.registry().iter().collect();
            let tgt: BTreeSet<&str> = target.registry().iter().collect();
            return Err(CorpusError::LabelMismatch {
                only_source: src.difference(&tgt).map(|s| s.to_string()).collect(),
                only_target: tgt.difference(&src).map(|s| s.to_string()).collect(),
            });
        }
        Ok(Self {
            source,
            target,
            mode: TaskMode::CrossLingual,
        })
    }

    pub fn source(&self) -> &Corpus {
        &self.source
    }

    pub fn target(&self) -> &Corpus {
        &self.target
    }

    pub fn mode(&self) -> TaskMode {
        self.mode
    }

    /// Labels scored per query. Identical for source and target by construction.
    pub fn registry(&self) -> &LabelRegistry {
        self.target.registry()
    }
}
