//! Run configuration: one JSON file, with command-line flags applied on top.

use anyhow::{bail, Context, Result};
use commitbart::model::{ModelConfig, TrainHyper};
use commitbart::pretrain::NoiseConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Target size of the subword vocabulary trained at pre-training time.
    pub vocab_size: usize,
    /// Token budget for built sequences.
    pub max_len: usize,
    pub model: ModelShape,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            vocab_size: 1200,
            max_len: 256,
            model: ModelShape::default(),
            pretrain: PretrainSection::default(),
            finetune: FinetuneSection::default(),
        }
    }
}

/// Everything in [`ModelConfig`] except the vocabulary size, which comes
/// from the trained vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub layers_enc: usize,
    pub layers_dec: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub max_positions: usize,
    pub dropout_rate: f64,
    pub tau: f64,
}

impl Default for ModelShape {
    fn default() -> Self {
        let t = ModelConfig::tiny(1);
        Self {
            layers_enc: t.layers_enc,
            layers_dec: t.layers_dec,
            dim: t.dim,
            heads: t.heads,
            ffn_mult: t.ffn_mult,
            max_positions: 256,
            dropout_rate: t.dropout_rate,
            tau: t.tau,
        }
    }
}

impl ModelShape {
    pub fn with_vocab(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            layers_enc: self.layers_enc,
            layers_dec: self.layers_dec,
            dim: self.dim,
            heads: self.heads,
            ffn_mult: self.ffn_mult,
            vocab_size,
            max_positions: self.max_positions,
            dropout_rate: self.dropout_rate,
            tau: self.tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub steps: usize,
    pub batch_size: usize,
    /// Language sampling exponent.
    pub alpha: f64,
    pub lr: f64,
    /// Share of steps spent in linear warmup.
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub noise: NoiseConfig,
    /// Save a resumable checkpoint every this many steps; 0 saves only at
    /// the end.
    pub checkpoint_every: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let h = TrainHyper::default();
        Self {
            steps: 200,
            batch_size: 8,
            alpha: 0.7,
            lr: 1e-4,
            warmup_fraction: 0.01,
            weight_decay: h.weight_decay,
            clip_norm: h.clip_norm,
            noise: NoiseConfig::default(),
            checkpoint_every: 0,
        }
    }
}

impl PretrainSection {
    pub fn hyper(&self) -> TrainHyper {
        TrainHyper {
            lr: self.lr,
            warmup_steps: (self.warmup_fraction * self.steps as f64).floor() as u64,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            ..TrainHyper::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    /// Beam width at generation time; 1 is greedy.
    pub beam: usize,
    /// Cap on generated tokens.
    pub max_decode_len: usize,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            steps: 100,
            batch_size: 8,
            lr: 1e-4,
            warmup_steps: 0,
            weight_decay: TrainHyper::default().weight_decay,
            beam: 1,
            max_decode_len: 64,
        }
    }
}

impl FinetuneSection {
    pub fn hyper(&self) -> TrainHyper {
        TrainHyper {
            lr: self.lr,
            warmup_steps: self.warmup_steps,
            weight_decay: self.weight_decay,
            ..TrainHyper::default()
        }
    }
}

/// Flags that override configuration values.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Training steps (pre-training or fine-tuning, per command).
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub beam: Option<usize>,
}

pub enum Stage {
    Pretrain,
    Finetune,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides, stage: Stage) {
        if let Some(v) = o.max_len {
            self.max_len = v;
        }
        if let Some(v) = o.vocab_size {
            self.vocab_size = v;
        }
        if let Some(v) = o.beam {
            self.finetune.beam = v;
        }
        match stage {
            Stage::Pretrain => {
                if let Some(v) = o.steps {
                    self.pretrain.steps = v;
                }
                if let Some(v) = o.batch_size {
                    self.pretrain.batch_size = v;
                }
                if let Some(v) = o.lr {
                    self.pretrain.lr = v;
                }
            }
            Stage::Finetune => {
                if let Some(v) = o.steps {
                    self.finetune.steps = v;
                }
                if let Some(v) = o.batch_size {
                    self.finetune.batch_size = v;
                }
                if let Some(v) = o.lr {
                    self.finetune.lr = v;
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_len < 8 {
            bail!("max_len {} is too small", self.max_len);
        }
        if self.model.max_positions < self.max_len {
            bail!(
                "model.max_positions {} is below max_len {}",
                self.model.max_positions,
                self.max_len
            );
        }
        if self.pretrain.batch_size == 0 || self.finetune.batch_size == 0 {
            bail!("batch sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.pretrain.warmup_fraction) {
            bail!("warmup_fraction {} outside [0, 1)", self.pretrain.warmup_fraction);
        }
        self.model.with_vocab(self.vocab_size.max(1)).validate()?;
        Ok(())
    }
}
