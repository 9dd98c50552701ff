//! Reading commits from the formats the commands accept.

use anyhow::{bail, Context, Result};
use commitbart::commit::{parse_git_show, CommitRecord};
use commitbart::corpus::{read_jsonl, CorpusDir};
use commitbart::sequence::Vocabulary;
use commitbart::tasks::LabeledCommit;
use serde::Serialize;
use std::fs;
use std::path::Path;

/// Commits from a shard directory, a JSONL file, or a text file of
/// concatenated `git show` dumps.
pub fn read_records(path: &Path) -> Result<Vec<CommitRecord>> {
    if path.is_dir() {
        let shards = CorpusDir::new(path).read_all()?;
        return Ok(shards.into_values().flatten().collect());
    }
    if is_jsonl(path) {
        return read_jsonl(path).with_context(|| format!("reading {}", path.display()));
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    split_git_show(&text)
        .into_iter()
        .enumerate()
        .map(|(i, dump)| parse_git_show(dump).with_context(|| format!("commit #{} in {}", i + 1, path.display())))
        .collect()
}

pub fn read_labeled(path: &Path) -> Result<Vec<LabeledCommit>> {
    if !is_jsonl(path) {
        bail!("labeled commits must be a .jsonl file of {{\"record\", \"label\"}} objects");
    }
    read_jsonl(path).with_context(|| format!("reading {}", path.display()))
}

fn is_jsonl(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json"))
}

/// Splits concatenated dumps at each unindented `commit ` line. Message
/// lines are indented and diff lines carry a marker, so the split is exact.
pub fn split_git_show(text: &str) -> Vec<&str> {
    let mut starts: Vec<usize> = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.starts_with("commit ") {
            starts.push(offset);
        }
        offset += line.len();
    }
    if starts.is_empty() && !text.trim().is_empty() {
        starts.push(0);
    }
    starts
        .iter()
        .enumerate()
        .map(|(k, &s)| &text[s..starts.get(k + 1).copied().unwrap_or(text.len())])
        .collect()
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Vocabulary::from_json(&text)?)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it).expect("serializable");
        out.push(b'\n');
    }
    out
}
