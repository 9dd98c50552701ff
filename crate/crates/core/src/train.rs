//! Training drivers: the multi-task pre-training loop, fine-tuning and
//! prediction.

use crate::commit::CommitRecord;
use crate::corpus::{language_distribution, sample_language, CorpusError, LanguageStats};
use crate::model::{beam_decode, greedy_decode, train_step, Batch, Mat, ModelError, ModelState, TrainHyper};
use crate::pretrain::{derive_rng, ExampleFactory, NoiseConfig, PretrainError, PretrainTask, Schedule};
use crate::sequence::{SequenceBuilder, Vocabulary};
use crate::tasks::{
    generation_report, parse_spi_prediction, spi_report, FinetuneExample, FinetuneTask, MetricReport, TaskError,
};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Pretrain(#[from] PretrainError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("no usable example for step {step} ({task}, {language})")]
    NoExamples {
        step: u64,
        task: PretrainTask,
        language: String,
    },
    #[error("nothing to train on")]
    EmptyData,
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub max_len: usize,
    pub alpha: f64,
    pub seed: u64,
    pub hyper: TrainHyper,
    pub noise: NoiseConfig,
}

impl PretrainConfig {
    pub fn new(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            batch_size: 8,
            max_len: 512,
            alpha: 0.7,
            seed,
            hyper: TrainHyper::default().with_warmup_fraction(steps as u64),
            noise: NoiseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub task: PretrainTask,
    pub language: String,
    pub batch: usize,
    pub loss: f64,
}

/// Drives pre-training over per-language shards. Step `s` draws its
/// language, records, noise and dropout from `derive_rng(seed, [s])`, so a
/// run resumed from a checkpoint continues exactly as an uninterrupted one.
pub struct Pretrainer<'a> {
    cfg: &'a PretrainConfig,
    shards: &'a BTreeMap<String, Vec<CommitRecord>>,
    dist: BTreeMap<String, f64>,
    schedule: Schedule,
    factory: ExampleFactory<'a>,
}

impl<'a> Pretrainer<'a> {
    pub fn new(
        cfg: &'a PretrainConfig,
        shards: &'a BTreeMap<String, Vec<CommitRecord>>,
        vocab: &'a Vocabulary,
    ) -> Result<Self, TrainError> {
        if cfg.batch_size == 0 {
            return Err(TrainError::EmptyData);
        }
        cfg.noise.validate().map_err(TrainError::Config)?;
        let counts = shards.iter().map(|(l, r)| (l.clone(), r.len() as u64)).collect();
        let dist = language_distribution(&LanguageStats::new(counts).with_alpha(cfg.alpha))?;
        Ok(Self {
            cfg,
            shards,
            dist,
            schedule: Schedule::new(cfg.steps)?,
            factory: ExampleFactory::new(SequenceBuilder::new(vocab, cfg.max_len), cfg.noise),
        })
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn is_done(&self, state: &ModelState) -> bool {
        state.step as usize >= self.cfg.steps
    }

    /// Runs the step numbered `state.step`.
    pub fn step(&self, state: &mut ModelState) -> Result<StepLog, TrainError> {
        let step = state.step;
        let task = self.schedule.task_at(step as usize);
        let mut rng = derive_rng(self.cfg.seed, &[step]);
        let language = sample_language(&self.dist, &mut rng);
        let records = &self.shards[&language];
        let tries = records.len().min(4 * self.cfg.batch_size);
        let mut examples = Vec::with_capacity(self.cfg.batch_size);
        for i in index::sample(&mut rng, records.len(), tries) {
            if examples.len() == self.cfg.batch_size {
                break;
            }
            if let Ok(ex) = self.factory.make(task, &records[i], &mut rng) {
                examples.push(ex);
            }
        }
        if examples.is_empty() {
            return Err(TrainError::NoExamples { step, task, language });
        }
        let batch = Batch::from_examples(&examples)?;
        let loss = train_step(state, &batch, &self.cfg.hyper, &mut rng)?;
        Ok(StepLog {
            step,
            task,
            language,
            batch: batch.len(),
            loss,
        })
    }

    /// Steps until the configured total, calling `observe` after each.
    pub fn run<E: From<TrainError>>(
        &self,
        state: &mut ModelState,
        mut observe: impl FnMut(&StepLog, &ModelState) -> Result<(), E>,
    ) -> Result<Vec<StepLog>, E> {
        let mut logs = Vec::new();
        while !self.is_done(state) {
            let log = self.step(state)?;
            observe(&log, state)?;
            logs.push(log);
        }
        Ok(logs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: usize,
    /// Stops after this many optimizer steps, possibly mid-epoch.
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub hyper: TrainHyper,
}

impl FinetuneConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            max_steps: None,
            batch_size: 8,
            seed,
            hyper: TrainHyper::default(),
        }
    }
}

/// Clears optimizer moments and the step counter so fine-tuning starts a
/// fresh AdamW run from the pre-trained weights.
pub fn reset_optimizer(state: &mut ModelState) {
    for m in state.adam_m.iter_mut().chain(state.adam_v.iter_mut()) {
        *m = Mat::zeros(m.rows, m.cols);
    }
    state.step = 0;
}

/// Teacher-forced fine-tuning; returns the mean loss of each epoch that ran.
pub fn finetune(
    state: &mut ModelState,
    examples: &[FinetuneExample],
    cfg: &FinetuneConfig,
) -> Result<Vec<f64>, TrainError> {
    if examples.is_empty() || cfg.batch_size == 0 {
        return Err(TrainError::EmptyData);
    }
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut taken = 0;
    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut derive_rng(cfg.seed, &[epoch as u64]));
        let mut total = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_steps.is_some_and(|m| taken >= m) {
                if batches > 0 {
                    epoch_losses.push(total / batches as f64);
                }
                break 'epochs;
            }
            let pairs = chunk
                .iter()
                .map(|&i| (examples[i].input.clone(), examples[i].target.clone()))
                .collect();
            let mut rng = derive_rng(cfg.seed, &[epoch as u64, b as u64 + 1]);
            total += train_step(state, &Batch::Seq2Seq(pairs), &cfg.hyper, &mut rng)?;
            batches += 1;
            taken += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok(epoch_losses)
}

/// Decoded output for one example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(rename = "id")]
    pub index: usize,
    pub language: String,
    pub text: String,
}

/// Generates an output for every example; `beam` of 1 is greedy.
pub fn predict(
    state: &ModelState,
    examples: &[FinetuneExample],
    vocab: &Vocabulary,
    max_len: usize,
    beam: usize,
) -> Result<Vec<Prediction>, TrainError> {
    examples
        .iter()
        .enumerate()
        .map(|(index, ex)| {
            let start = ex.task.target_segment();
            let ids = if beam <= 1 {
                greedy_decode(&ex.input, state, max_len, start)?
            } else {
                beam_decode(&ex.input, state, max_len, beam, start)?
            };
            Ok(Prediction {
                index,
                language: ex.language.clone(),
                text: vocab.decode_text(&ids),
            })
        })
        .collect()
}

/// Scores predictions against their examples with the task's metrics.
pub fn score(
    task: FinetuneTask,
    examples: &[FinetuneExample],
    predictions: &[Prediction],
    vocab: &Vocabulary,
) -> Result<MetricReport, TrainError> {
    if examples.len() != predictions.len() {
        return Err(TaskError::LengthMismatch {
            preds: predictions.len(),
            golds: examples.len(),
        }
        .into());
    }
    Ok(match task {
        FinetuneTask::SecurityPatch => {
            let rows: Vec<_> = examples
                .iter()
                .zip(predictions)
                .map(|(e, p)| (e.language.clone(), parse_spi_prediction(&p.text), e.label.unwrap_or(false)))
                .collect();
            spi_report(&rows)?
        }
        _ => {
            let rows: Vec<_> = examples
                .iter()
                .zip(predictions)
                .map(|(e, p)| (e.language.clone(), p.text.clone(), e.reference(vocab)))
                .collect();
            generation_report(&rows)
        }
    })
}
