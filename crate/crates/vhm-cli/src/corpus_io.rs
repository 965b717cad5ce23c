//! JSONL corpus files and the vocabulary sidecar.
//!
//! Each line is `{"task": "mt|ms|cls", "source": "...", "target": "..."}`
//! with whitespace-pre-tokenized text. The sidecar holds one token per
//! line; a token's id is its line index.

use std::path::Path;

use serde_json::Value;
use vhm_core::data::{Corpora, Task, TaskExample, Vocabulary, VocabPolicy};

use crate::error::{CliError, Result};
use crate::runs::{read_text, write_text};

/// Parse one corpus file. Malformed lines are reported with their
/// 1-based line number and the offending field.
pub fn load_jsonl(path: &Path, vocab: &Vocabulary, policy: VocabPolicy) -> Result<Vec<TaskExample>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("{}: line {lineno}: invalid JSON: {e}", path.display())))?;
        let field = |name: &str| -> Result<String> {
            value
                .get(name)
                .and_then(|v| v.as_str())
                .map(|s| s.to_string())
                .ok_or_else(|| {
                    CliError::Data(format!(
                        "{}: line {lineno}: missing or non-string field {name:?}",
                        path.display()
                    ))
                })
        };
        let task_name = field("task")?;
        let task = Task::from_name(&task_name).ok_or_else(|| {
            CliError::Data(format!("{}: line {lineno}: unknown task {task_name:?}", path.display()))
        })?;
        let source = vocab
            .encode(&field("source")?, policy)
            .map_err(|e| CliError::Data(format!("{}: line {lineno}: source: {e}", path.display())))?;
        let target = vocab
            .encode(&field("target")?, policy)
            .map_err(|e| CliError::Data(format!("{}: line {lineno}: target: {e}", path.display())))?;
        if source.is_empty() || target.is_empty() {
            return Err(CliError::Data(format!(
                "{}: line {lineno}: source and target must be non-empty",
                path.display()
            )));
        }
        out.push(TaskExample { task, source, target });
    }
    Ok(out)
}

pub fn save_jsonl(path: &Path, vocab: &Vocabulary, examples: &[TaskExample]) -> Result<()> {
    let mut text = String::new();
    for ex in examples {
        let line = serde_json::json!({
            "task": ex.task.name(),
            "source": vocab.decode(&ex.source).map_err(CliError::from)?,
            "target": vocab.decode(&ex.target).map_err(CliError::from)?,
        });
        text.push_str(&line.to_string());
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn save_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut text = String::new();
    for tok in vocab.tokens() {
        text.push_str(tok);
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let text = read_text(path)?;
    let tokens: Vec<String> = text.lines().map(|s| s.to_string()).collect();
    Ok(Vocabulary::from_tokens(tokens)?)
}

pub const CORPUS_FILES: [(&str, &str); 4] =
    [("mt", "mt.jsonl"), ("ms", "ms.jsonl"), ("cls", "cls.jsonl"), ("heldout_cls", "heldout_cls.jsonl")];

pub fn save_corpora(dir: &Path, vocab: &Vocabulary, corpora: &Corpora) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir.display().to_string()))?;
    save_jsonl(&dir.join("mt.jsonl"), vocab, &corpora.mt)?;
    save_jsonl(&dir.join("ms.jsonl"), vocab, &corpora.ms)?;
    save_jsonl(&dir.join("cls.jsonl"), vocab, &corpora.cls)?;
    save_jsonl(&dir.join("heldout_cls.jsonl"), vocab, &corpora.heldout_cls)?;
    save_vocab(&dir.join("vocab.txt"), vocab)
}

pub fn load_corpora(dir: &Path) -> Result<(Vocabulary, Corpora)> {
    let vocab = load_vocab(&dir.join("vocab.txt"))?;
    let policy = VocabPolicy::RejectUnknown;
    let corpora = Corpora {
        mt: load_jsonl(&dir.join("mt.jsonl"), &vocab, policy)?,
        ms: load_jsonl(&dir.join("ms.jsonl"), &vocab, policy)?,
        cls: load_jsonl(&dir.join("cls.jsonl"), &vocab, policy)?,
        heldout_cls: load_jsonl(&dir.join("heldout_cls.jsonl"), &vocab, policy)?,
    };
    Ok((vocab, corpora))
}
