//! Pre-training data: the six objectives, their example builders and the
//! step schedule.

mod graph;
mod noise;
mod schedule;

pub use graph::{mask_ranges, word_spans, CommitGraph, Component, Occurrence};
pub use noise::{apply_text_infilling, sample_spans, NoiseConfig};
pub use schedule::{Schedule, MIN_STEPS};

use crate::commit::CommitRecord;
use crate::sequence::{SegmentId, SegmentedSequence, SequenceBuilder, SequenceError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("schedule needs at least {MIN_STEPS} steps, got {0}")]
    TooFewSteps(usize),
    #[error("unknown pre-training task {0:?}")]
    UnknownTask(String),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainTask {
    TextInfilling,
    Gtm,
    #[serde(rename = "pl2nl")]
    Pl2Nl,
    #[serde(rename = "plnl2pl")]
    PlNl2Pl,
    #[serde(rename = "nlpl_align")]
    NlPlAlign,
    #[serde(rename = "simcse")]
    SimCse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskCategory {
    Denoise,
    Generation,
    Contrastive,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 3] = [TaskCategory::Denoise, TaskCategory::Generation, TaskCategory::Contrastive];

    pub fn name(self) -> &'static str {
        match self {
            TaskCategory::Denoise => "denoise",
            TaskCategory::Generation => "generation",
            TaskCategory::Contrastive => "contrastive",
        }
    }
}

impl PretrainTask {
    pub const ALL: [PretrainTask; 6] = [
        PretrainTask::TextInfilling,
        PretrainTask::Gtm,
        PretrainTask::Pl2Nl,
        PretrainTask::PlNl2Pl,
        PretrainTask::NlPlAlign,
        PretrainTask::SimCse,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PretrainTask::TextInfilling => "text_infilling",
            PretrainTask::Gtm => "gtm",
            PretrainTask::Pl2Nl => "pl2nl",
            PretrainTask::PlNl2Pl => "plnl2pl",
            PretrainTask::NlPlAlign => "nlpl_align",
            PretrainTask::SimCse => "simcse",
        }
    }

    pub fn category(self) -> TaskCategory {
        match self {
            PretrainTask::TextInfilling | PretrainTask::Gtm => TaskCategory::Denoise,
            PretrainTask::Pl2Nl | PretrainTask::PlNl2Pl => TaskCategory::Generation,
            PretrainTask::NlPlAlign | PretrainTask::SimCse => TaskCategory::Contrastive,
        }
    }

    /// Fraction of pre-training steps: 60/30/10 per category, split evenly.
    pub fn share(self) -> f64 {
        match self.category() {
            TaskCategory::Denoise => 0.30,
            TaskCategory::Generation => 0.15,
            TaskCategory::Contrastive => 0.05,
        }
    }

    /// True for tasks trained with a decoder target.
    pub fn has_target(self) -> bool {
        self.category() != TaskCategory::Contrastive
    }
}

impl fmt::Display for PretrainTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PretrainTask {
    type Err = PretrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PretrainTask::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| PretrainError::UnknownTask(s.to_string()))
    }
}

/// One pre-training example. Seq2seq tasks carry a target, the alignment
/// task a paired sequence, and SimCSE only its source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PretrainExample {
    pub task: PretrainTask,
    pub source: SegmentedSequence,
    pub target: Option<SegmentedSequence>,
    pub paired: Option<SegmentedSequence>,
}

#[derive(Serialize, Deserialize)]
struct ExampleLine {
    task: PretrainTask,
    source_ids: Vec<u32>,
    source_segs: Vec<SegmentId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_ids: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_segs: Option<Vec<SegmentId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    paired_ids: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    paired_segs: Option<Vec<SegmentId>>,
}

impl PretrainExample {
    /// One JSON object on a single line.
    pub fn to_json_line(&self) -> String {
        let split = |s: &Option<SegmentedSequence>| match s {
            Some(s) => (Some(s.token_ids.clone()), Some(s.segment_ids.clone())),
            None => (None, None),
        };
        let (target_ids, target_segs) = split(&self.target);
        let (paired_ids, paired_segs) = split(&self.paired);
        serde_json::to_string(&ExampleLine {
            task: self.task,
            source_ids: self.source.token_ids.clone(),
            source_segs: self.source.segment_ids.clone(),
            target_ids,
            target_segs,
            paired_ids,
            paired_segs,
        })
        .expect("serializable")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        let l: ExampleLine = serde_json::from_str(line)?;
        let join = |ids: Option<Vec<u32>>, segs: Option<Vec<SegmentId>>| {
            ids.zip(segs).map(|(token_ids, segment_ids)| SegmentedSequence {
                token_ids,
                segment_ids,
                truncated: false,
            })
        };
        Ok(Self {
            task: l.task,
            source: SegmentedSequence {
                token_ids: l.source_ids,
                segment_ids: l.source_segs,
                truncated: false,
            },
            target: join(l.target_ids, l.target_segs),
            paired: join(l.paired_ids, l.paired_segs),
        })
    }
}

/// Deterministic generator for a `(seed, stream)` pair, where `stream`
/// names what the randomness is for (record, epoch, task, ...).
pub fn derive_rng(seed: u64, stream: &[u64]) -> ChaCha8Rng {
    let mut h = seed ^ 0x243f_6a88_85a3_08d3;
    for &s in stream {
        h = splitmix64(h ^ splitmix64(s));
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Builds pre-training examples from records.
#[derive(Debug, Clone, Copy)]
pub struct ExampleFactory<'v> {
    pub builder: SequenceBuilder<'v>,
    pub noise: NoiseConfig,
}

impl<'v> ExampleFactory<'v> {
    pub fn new(builder: SequenceBuilder<'v>, noise: NoiseConfig) -> Self {
        Self { builder, noise }
    }

    /// Denoising sources leave room for the `[EOS]` their target adds.
    fn denoise_source(&self, record: &CommitRecord) -> Result<SegmentedSequence, SequenceError> {
        let b = SequenceBuilder {
            max_len: self.builder.max_len.saturating_sub(1),
            ..self.builder
        };
        b.full_input(record)
    }

    pub fn text_infilling<R: Rng + ?Sized>(
        &self,
        record: &CommitRecord,
        rng: &mut R,
    ) -> Result<PretrainExample, SequenceError> {
        let seq = self.denoise_source(record)?;
        let (source, target) = apply_text_infilling(&seq, &self.noise, rng);
        Ok(PretrainExample {
            task: PretrainTask::TextInfilling,
            source,
            target: Some(target),
            paired: None,
        })
    }

    /// Graph-guided masking; a commit with an empty graph falls back to text
    /// infilling and is tagged as such.
    pub fn gtm<R: Rng + ?Sized>(&self, record: &CommitRecord, rng: &mut R) -> Result<PretrainExample, SequenceError> {
        let seq = self.denoise_source(record)?;
        let graph = CommitGraph::build(&seq, self.builder.vocab);
        if graph.is_empty() {
            let (source, target) = apply_text_infilling(&seq, &self.noise, rng);
            return Ok(PretrainExample {
                task: PretrainTask::TextInfilling,
                source,
                target: Some(target),
                paired: None,
            });
        }
        let selected = graph.select_mask_nodes(rng);
        let (source, target) = graph.apply_gtm(&seq, &selected);
        Ok(PretrainExample {
            task: PretrainTask::Gtm,
            source,
            target: Some(target),
            paired: None,
        })
    }

    /// Message view `[CLS][MSG]M` and code view `[CLS][FILE]F[CODE]C`.
    pub fn nlpl_pair(&self, record: &CommitRecord) -> Result<(SegmentedSequence, SegmentedSequence), SequenceError> {
        Ok((self.builder.message_input(record)?, self.builder.code_input(record)?))
    }

    pub fn make<R: Rng + ?Sized>(
        &self,
        task: PretrainTask,
        record: &CommitRecord,
        rng: &mut R,
    ) -> Result<PretrainExample, SequenceError> {
        let pair = |task, (source, target): (SegmentedSequence, SegmentedSequence)| PretrainExample {
            task,
            source,
            target: Some(target),
            paired: None,
        };
        Ok(match task {
            PretrainTask::TextInfilling => self.text_infilling(record, rng)?,
            PretrainTask::Gtm => self.gtm(record, rng)?,
            PretrainTask::Pl2Nl => pair(task, self.builder.pl2nl_pair(record)?),
            PretrainTask::PlNl2Pl => pair(task, self.builder.plnl2pl_pair(record)?),
            PretrainTask::NlPlAlign => {
                let (msg, code) = self.nlpl_pair(record)?;
                PretrainExample {
                    task,
                    source: msg,
                    target: None,
                    paired: Some(code),
                }
            }
            PretrainTask::SimCse => PretrainExample {
                task,
                source: self.builder.full_input(record)?,
                target: None,
                paired: None,
            },
        })
    }

    /// Materializes `tasks` for every record. Randomness for record `i` and
    /// task `t` comes from `derive_rng(seed, [i, t])`. Records that do not
    /// fit are skipped and counted.
    pub fn materialize(
        &self,
        records: &[CommitRecord],
        tasks: &[PretrainTask],
        seed: u64,
    ) -> (Vec<PretrainExample>, usize) {
        let mut out = Vec::new();
        let mut skipped = 0;
        for (i, r) in records.iter().enumerate() {
            for &t in tasks {
                let mut rng = derive_rng(seed, &[i as u64, t.index() as u64]);
                match self.make(t, r, &mut rng) {
                    Ok(ex) => out.push(ex),
                    Err(_) => skipped += 1,
                }
            }
        }
        (out, skipped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::{check_invariants, SpecialToken, Vocabulary};
    use crate::synth::{binarizer_commit, generate, SynthConfig};

    #[test]
    fn task_names_round_trip() {
        for t in PretrainTask::ALL {
            assert_eq!(t.name().parse::<PretrainTask>().unwrap(), t);
            assert_eq!(serde_json::to_string(&t).unwrap(), format!("\"{}\"", t.name()));
        }
        assert!("bogus".parse::<PretrainTask>().is_err());
        let total: f64 = PretrainTask::ALL.iter().map(|t| t.share()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn every_task_builds_on_figure_commit() {
        let vocab = Vocabulary::bytes_only();
        let f = ExampleFactory::new(SequenceBuilder::new(&vocab, 1024), NoiseConfig::default());
        let r = binarizer_commit();
        for t in PretrainTask::ALL {
            let ex = f.make(t, &r, &mut derive_rng(1, &[0])).unwrap();
            assert_eq!(ex.task, t);
            assert_eq!(ex.target.is_some(), t.has_target());
            assert_eq!(ex.paired.is_some(), t == PretrainTask::NlPlAlign);
            if let Some(target) = &ex.target {
                assert_eq!(target.token_ids.last(), Some(&SpecialToken::Eos.id()));
            }
            let back = PretrainExample::from_json_line(&ex.to_json_line()).unwrap();
            assert_eq!(back, ex);
        }
    }

    #[test]
    fn nlpl_views() {
        let vocab = Vocabulary::bytes_only();
        let f = ExampleFactory::new(SequenceBuilder::new(&vocab, 1024), NoiseConfig::default());
        let r = binarizer_commit();
        let (msg, code) = f.nlpl_pair(&r).unwrap();
        assert_eq!(vocab.decode_text(&msg.token_ids), "[MSG] Bugfix: Pass threshold to binarizer");
        assert!(!code.segment_ids.contains(&SegmentId::Msg));
        check_invariants(&code).unwrap();
    }

    #[test]
    fn gtm_falls_back_without_shared_words() {
        let vocab = Vocabulary::bytes_only();
        let f = ExampleFactory::new(SequenceBuilder::new(&vocab, 1024), NoiseConfig::default());
        let mut r = binarizer_commit();
        r.message = "Bugfix: unrelated wording here".into();
        r.files[0].path = "x/y.py".into();
        let ex = f.gtm(&r, &mut derive_rng(3, &[])).unwrap();
        assert_eq!(ex.task, PretrainTask::TextInfilling);
    }

    #[test]
    fn materialize_is_deterministic() {
        let vocab = Vocabulary::bytes_only();
        let f = ExampleFactory::new(SequenceBuilder::new(&vocab, 2048), NoiseConfig::default());
        let records = generate(&SynthConfig::default(), 14);
        let (a, skipped) = f.materialize(&records, &PretrainTask::ALL, 9);
        let (b, _) = f.materialize(&records, &PretrainTask::ALL, 9);
        assert_eq!(skipped, 0);
        assert_eq!(a, b);
        assert_eq!(a.len(), 14 * 6);
    }

    #[test]
    fn derived_streams_differ() {
        let x: u64 = derive_rng(1, &[0, 1]).gen();
        let y: u64 = derive_rng(1, &[1, 0]).gen();
        let z: u64 = derive_rng(2, &[0, 1]).gen();
        assert_ne!(x, y);
        assert_ne!(x, z);
    }
}
