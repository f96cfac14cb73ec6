//! File formats: corpus JSONL, word lists, confusion matrices and metric logs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nlgrl_core::channel::{ChannelError, SparseMatrix};
use nlgrl_core::corpus::{Corpus, Example, Provenance};
use nlgrl_core::da::DialogueAct;
use nlgrl_core::text::{WordList, WordListError};
use nlgrl_core::ConfusionMatrix;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: field `{field}`: {message}", path.display())]
    Line { path: PathBuf, line: usize, field: String, message: String },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Matrix { path: PathBuf, source: ChannelError },
    #[error("{}: {source}", path.display())]
    WordList { path: PathBuf, source: WordListError },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Writes through a sibling temporary file so a failure never leaves a half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, rows: impl IntoIterator<Item = &'a T>) -> Result<(), IoError> {
    write_atomic(path, jsonl(rows).as_bytes())
}

pub fn jsonl<'a, T: Serialize + 'a>(rows: impl IntoIterator<Item = &'a T>) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

/// Parses corpus JSONL. Blank lines are skipped; line numbers are 1-based.
pub fn parse_corpus(path: &Path, text: &str) -> Result<Corpus, IoError> {
    let mut examples = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |field: &str, message: String| IoError::Line { path: path.to_path_buf(), line: k + 1, field: field.to_string(), message };
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| fail("<line>", e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| fail("<line>", "expected a JSON object".into()))?;
        let get = |name: &str| obj.get(name).cloned().ok_or_else(|| fail(name, "missing".into()));
        let da: DialogueAct = serde_json::from_value(get("dialogue_acts")?).map_err(|e| fail("dialogue_acts", e.to_string()))?;
        let utterance: String = serde_json::from_value(get("utterance")?).map_err(|e| fail("utterance", e.to_string()))?;
        let field = if da.is_empty() { "dialogue_acts" } else { "utterance" };
        examples.push(Example::new(da, utterance).map_err(|e| fail(field, e.to_string()))?);
    }
    Ok(Corpus::new(examples, Provenance { source: path.display().to_string(), seed: None }))
}

pub fn load_corpus(path: &Path) -> Result<Corpus, IoError> {
    parse_corpus(path, &read_text(path)?)
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), IoError> {
    write_jsonl(path, corpus.iter())
}

/// Word-list label: the file stem.
pub fn load_wordlist(path: &Path) -> Result<WordList, IoError> {
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    WordList::parse(&label, &read_text(path)?).map_err(|source| IoError::WordList { path: path.to_path_buf(), source })
}

pub fn save_wordlist(list: &WordList, path: &Path) -> Result<(), IoError> {
    write_atomic(path, list.to_text().as_bytes())
}

pub fn load_matrix(path: &Path) -> Result<ConfusionMatrix, IoError> {
    let sparse: SparseMatrix = read_json(path)?;
    ConfusionMatrix::from_sparse(sparse).map_err(|source| IoError::Matrix { path: path.to_path_buf(), source })
}

pub fn save_matrix(matrix: &ConfusionMatrix, path: &Path) -> Result<(), IoError> {
    let s = serde_json::to_string(&matrix.to_sparse()).expect("serializable");
    write_atomic(path, s.as_bytes())
}
