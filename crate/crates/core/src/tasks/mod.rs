//! Fine-tuning tasks, dataset splits and evaluation metrics.

mod metrics;

pub use metrics::{
    bleu_tokens, classification_metrics, exact_match, generation_report, smoothed_bleu4, spi_report,
    ClassificationMetrics, MetricReport, OVERALL,
};

use crate::apportion::{interleave, largest_remainder};
use crate::commit::{is_consecutive_modification, CommitRecord, LineKind};
use crate::sequence::{SegmentId, SegmentedSequence, SequenceBuilder, SequenceError, SpecialToken, Vocabulary};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error("commit is not a single consecutive modification")]
    NotConsecutive,
    #[error("commit has no added lines")]
    NoAddedLines,
    #[error("need at least {MIN_SPLIT} records to split, got {0}")]
    TooSmall(usize),
    #[error("{preds} predictions for {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("unknown fine-tuning task {0:?}")]
    UnknownTask(String),
}

pub const MIN_SPLIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FinetuneTask {
    #[serde(rename = "spi")]
    SecurityPatch,
    #[serde(rename = "msg")]
    MsgGen,
    #[serde(rename = "pos")]
    PosStmtGen,
    #[serde(rename = "snippet")]
    SnippetGen,
}

impl FinetuneTask {
    pub const ALL: [FinetuneTask; 4] = [
        FinetuneTask::SecurityPatch,
        FinetuneTask::MsgGen,
        FinetuneTask::PosStmtGen,
        FinetuneTask::SnippetGen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FinetuneTask::SecurityPatch => "spi",
            FinetuneTask::MsgGen => "msg",
            FinetuneTask::PosStmtGen => "pos",
            FinetuneTask::SnippetGen => "snippet",
        }
    }

    /// Segment of the target's leading `[CLS]`.
    pub fn target_segment(self) -> SegmentId {
        match self {
            FinetuneTask::MsgGen => SegmentId::Msg,
            _ => SegmentId::Ctx,
        }
    }
}

impl fmt::Display for FinetuneTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FinetuneTask {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FinetuneTask::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| TaskError::UnknownTask(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCommit {
    pub record: CommitRecord,
    pub label: bool,
}

/// `[CLS] security patch True|False [EOS]`, all in the context segment.
pub fn spi_target(label: bool) -> SegmentedSequence {
    let word = |w: &str| Vocabulary::reserved_word_id(w).expect("reserved word");
    let mut t = SegmentedSequence::default();
    t.push_special(SpecialToken::Cls, SegmentId::Ctx);
    t.push(word("security"), SegmentId::Ctx);
    t.push(word("patch"), SegmentId::Ctx);
    t.push(word(if label { "True" } else { "False" }), SegmentId::Ctx);
    t.push_special(SpecialToken::Eos, SegmentId::Ctx);
    t
}

pub fn build_spi_example(
    lc: &LabeledCommit,
    builder: &SequenceBuilder,
) -> Result<(SegmentedSequence, SegmentedSequence), TaskError> {
    Ok((builder.full_input(&lc.record)?, spi_target(lc.label)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpiLabel {
    True,
    False,
    Unknown,
}

impl SpiLabel {
    pub fn from_bool(b: bool) -> Self {
        if b {
            SpiLabel::True
        } else {
            SpiLabel::False
        }
    }
}

/// First `True` or `False` word in decoded text; anything else is unknown.
pub fn parse_spi_prediction(text: &str) -> SpiLabel {
    for w in text.split_whitespace() {
        match w {
            "True" => return SpiLabel::True,
            "False" => return SpiLabel::False,
            _ => {}
        }
    }
    SpiLabel::Unknown
}

pub fn build_msg_gen_example(
    record: &CommitRecord,
    builder: &SequenceBuilder,
) -> Result<(SegmentedSequence, SegmentedSequence), TaskError> {
    Ok(builder.pl2nl_pair(record)?)
}

/// Message and pre-change code to the added lines, newline-joined.
pub fn build_pos_stmt_example(
    record: &CommitRecord,
    builder: &SequenceBuilder,
) -> Result<(SegmentedSequence, SegmentedSequence), TaskError> {
    let added: Vec<&str> = record
        .lines()
        .filter(|l| l.kind == LineKind::Added)
        .map(|l| l.text.as_str())
        .collect();
    if added.is_empty() {
        return Err(TaskError::NoAddedLines);
    }
    if !is_consecutive_modification(record) {
        return Err(TaskError::NotConsecutive);
    }
    let input = builder.pre_change_input(record)?;
    let mut target = SegmentedSequence::default();
    target.push_special(SpecialToken::Cls, SegmentId::Ctx);
    for id in builder.vocab.encode(&added.join("\n")) {
        target.push(id, SegmentId::Ctx);
    }
    target.push_special(SpecialToken::Eos, SegmentId::Ctx);
    if target.len() > builder.max_len {
        return Err(SequenceError::TooLong(target.len()).into());
    }
    Ok((input, target))
}

pub fn build_snippet_example(
    record: &CommitRecord,
    builder: &SequenceBuilder,
) -> Result<(SegmentedSequence, SegmentedSequence), TaskError> {
    Ok(builder.plnl2pl_pair(record)?)
}

/// A built fine-tuning example with what evaluation needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinetuneExample {
    pub task: FinetuneTask,
    pub language: String,
    pub input: SegmentedSequence,
    pub target: SegmentedSequence,
    pub label: Option<bool>,
}

impl FinetuneExample {
    /// Reference text: the decoded target.
    pub fn reference(&self, vocab: &Vocabulary) -> String {
        vocab.decode_text(&self.target.token_ids)
    }
}

/// Builds `task` for a record. `label` is required for the patch task.
pub fn build_example(
    task: FinetuneTask,
    record: &CommitRecord,
    label: Option<bool>,
    builder: &SequenceBuilder,
) -> Result<FinetuneExample, TaskError> {
    let (input, target) = match task {
        FinetuneTask::SecurityPatch => build_spi_example(
            &LabeledCommit {
                record: record.clone(),
                label: label.unwrap_or(false),
            },
            builder,
        )?,
        FinetuneTask::MsgGen => build_msg_gen_example(record, builder)?,
        FinetuneTask::PosStmtGen => build_pos_stmt_example(record, builder)?,
        FinetuneTask::SnippetGen => build_snippet_example(record, builder)?,
    };
    Ok(FinetuneExample {
        task,
        language: record.language.clone(),
        input,
        target,
        label: if task == FinetuneTask::SecurityPatch { label } else { None },
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

pub const SPLIT_SHARES: [f64; 3] = [0.75, 0.10, 0.15];

/// 75/10/15 split. Items are grouped by language, each group shuffled with
/// the seed, and the concatenation labelled by a prefix-balanced
/// interleaving of the largest-remainder sizes, so every language is split
/// close to the ratio and the totals are exact.
pub fn split_dataset<T: Clone>(items: &[T], language: impl Fn(&T) -> &str, seed: u64) -> Result<Split<T>, TaskError> {
    if items.len() < MIN_SPLIT {
        return Err(TaskError::TooSmall(items.len()));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        groups.entry(language(it)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(items.len());
    for g in groups.values_mut() {
        g.shuffle(&mut rng);
        order.extend_from_slice(g);
    }
    let labels = interleave(&largest_remainder(items.len(), &SPLIT_SHARES));
    let mut split = Split {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for (&i, &part) in order.iter().zip(&labels) {
        let dest = match part {
            0 => &mut split.train,
            1 => &mut split.valid,
            _ => &mut split.test,
        };
        dest.push(items[i].clone());
    }
    Ok(split)
}
