//! Batches, loss dispatch and the AdamW update.

use super::{Mat, ModelError, ModelState, Real, Session, Var};
use crate::pretrain::{PretrainExample, PretrainTask};
use crate::sequence::SegmentedSequence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            warmup_steps: 0,
            weight_decay: 0.01,
            clip_norm: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainHyper {
    /// Linear warmup over `warmup_steps`, then constant.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.lr
        } else {
            self.lr * (step + 1) as f64 / self.warmup_steps as f64
        }
    }

    /// Warmup of 1% of `total_steps`.
    pub fn with_warmup_fraction(mut self, total_steps: u64) -> Self {
        self.warmup_steps = total_steps / 100;
        self
    }
}

/// A homogeneous batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Batch {
    /// `(source, target)` pairs trained with teacher forcing.
    Seq2Seq(Vec<(SegmentedSequence, SegmentedSequence)>),
    /// `(view, paired view)`; other rows are in-batch negatives.
    Align(Vec<(SegmentedSequence, SegmentedSequence)>),
    /// Sources encoded twice under different dropout masks.
    SimCse(Vec<SegmentedSequence>),
}

impl Batch {
    pub fn len(&self) -> usize {
        match self {
            Batch::Seq2Seq(v) | Batch::Align(v) => v.len(),
            Batch::SimCse(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Groups examples of one task. Denoising examples that fell back to
    /// infilling may be mixed with graph-masked ones.
    pub fn from_examples(examples: &[PretrainExample]) -> Result<Self, ModelError> {
        let first = examples.first().ok_or(ModelError::EmptyBatch)?;
        if examples.iter().any(|e| e.task.category() != first.task.category()) {
            return Err(ModelError::MixedBatch);
        }
        let kind = |t: PretrainTask| match t {
            PretrainTask::NlPlAlign => 1,
            PretrainTask::SimCse => 2,
            _ => 0,
        };
        if examples.iter().any(|e| kind(e.task) != kind(first.task)) {
            return Err(ModelError::MixedBatch);
        }
        let missing = || ModelError::Config("example lacks its second sequence".into());
        Ok(match kind(first.task) {
            0 => Batch::Seq2Seq(
                examples
                    .iter()
                    .map(|e| Ok((e.source.clone(), e.target.clone().ok_or_else(missing)?)))
                    .collect::<Result<_, ModelError>>()?,
            ),
            1 => Batch::Align(
                examples
                    .iter()
                    .map(|e| Ok((e.source.clone(), e.paired.clone().ok_or_else(missing)?)))
                    .collect::<Result<_, ModelError>>()?,
            ),
            _ => Batch::SimCse(examples.iter().map(|e| e.source.clone()).collect()),
        })
    }

    /// Builds the batch loss on `session`.
    pub fn loss<T: Real>(&self, session: &mut Session<'_, T>) -> Result<Var, ModelError> {
        if self.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        match self {
            Batch::Seq2Seq(pairs) => {
                let mut parts = Vec::with_capacity(pairs.len());
                for (s, t) in pairs {
                    parts.push(session.seq2seq_loss(s, t)?);
                }
                Ok(session.tape.mean(&parts))
            }
            Batch::Align(pairs) => {
                let mut a = Vec::with_capacity(pairs.len());
                let mut b = Vec::with_capacity(pairs.len());
                for (x, y) in pairs {
                    a.push(session.pooled(x)?);
                    b.push(session.pooled(y)?);
                }
                session.contrastive(&a, &b)
            }
            Batch::SimCse(sources) => {
                if !session.train_mode() {
                    return Err(ModelError::DropoutDisabled);
                }
                let mut a = Vec::with_capacity(sources.len());
                let mut b = Vec::with_capacity(sources.len());
                for s in sources {
                    a.push(session.pooled(s)?);
                    b.push(session.pooled(s)?);
                }
                session.contrastive(&a, &b)
            }
        }
    }
}

/// One optimizer step: loss in train mode, global-norm clipping, AdamW with
/// decoupled weight decay on matrices, step counter plus one. On a
/// non-finite loss or gradient the state is left untouched.
pub fn train_step(
    state: &mut ModelState,
    batch: &Batch,
    hyper: &TrainHyper,
    rng: &mut ChaCha8Rng,
) -> Result<f64, ModelError> {
    let dropout = ChaCha8Rng::seed_from_u64(rng.gen());
    let (loss, mut grads) = {
        let mut s = state.session(Some(dropout));
        let l = batch.loss(&mut s)?;
        let value = s.tape.value(l).data[0] as f64;
        (value, s.param_grads(l))
    };
    if !loss.is_finite() || !grads.iter().all(Mat::is_finite) {
        return Err(ModelError::NonFiniteLoss { step: state.step, loss });
    }
    let norm = grads.iter().map(Mat::sum_squares).sum::<f64>().sqrt();
    if norm > hyper.clip_norm {
        let s = (hyper.clip_norm / norm) as f32;
        grads.iter_mut().for_each(|g| g.data.iter_mut().for_each(|x| *x *= s));
    }
    let t = state.step + 1;
    let lr = hyper.lr_at(state.step);
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    let decays: Vec<bool> = state.layout().specs.iter().map(|s| s.decay).collect();
    for (i, g) in grads.iter().enumerate() {
        let wd = if decays[i] { hyper.weight_decay } else { 0.0 };
        let (p, m, v) = (&mut state.params[i].data, &mut state.adam_m[i].data, &mut state.adam_v[i].data);
        for k in 0..g.data.len() {
            let gk = g.data[k] as f64;
            let mk = b1 * m[k] as f64 + (1.0 - b1) * gk;
            let vk = b2 * v[k] as f64 + (1.0 - b2) * gk * gk;
            m[k] = mk as f32;
            v[k] = vk as f32;
            let update = (mk / c1) / ((vk / c2).sqrt() + hyper.eps) + wd * p[k] as f64;
            p[k] = (p[k] as f64 - lr * update) as f32;
        }
    }
    state.step = t;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::sequence::{SegmentId, SpecialToken};

    fn seq(ids: &[u32]) -> SegmentedSequence {
        SegmentedSequence {
            token_ids: ids.to_vec(),
            segment_ids: vec![SegmentId::Ctx; ids.len()],
            truncated: false,
        }
    }

    fn state() -> ModelState {
        let cfg = ModelConfig {
            dim: 16,
            heads: 2,
            max_positions: 32,
            ..ModelConfig::tiny(64)
        };
        ModelState::init(cfg, 1).unwrap()
    }

    fn batch() -> Batch {
        let eos = SpecialToken::Eos.id();
        Batch::Seq2Seq(vec![
            (seq(&[0, 20, 21, 22]), seq(&[0, 20, 21, 22, eos])),
            (seq(&[0, 30, 31]), seq(&[0, 30, 31, eos])),
        ])
    }

    #[test]
    fn identical_steps_are_identical() {
        let hyper = TrainHyper::default();
        let mut a = state();
        let mut b = state();
        let la = train_step(&mut a, &batch(), &hyper, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let lb = train_step(&mut b, &batch(), &hyper, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a, b);
        assert_eq!(a.step, 1);
        assert_ne!(a.params, state().params);
    }

    #[test]
    fn loss_goes_down_on_repetition() {
        let hyper = TrainHyper {
            lr: 3e-3,
            ..TrainHyper::default()
        };
        let mut st = state();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let first = train_step(&mut st, &batch(), &hyper, &mut rng).unwrap();
        let mut last = first;
        for _ in 0..60 {
            last = train_step(&mut st, &batch(), &hyper, &mut rng).unwrap();
        }
        assert!(last < first * 0.5, "{first} -> {last}");
        assert_eq!(st.step, 61);
    }

    #[test]
    fn contrastive_batches_train() {
        let hyper = TrainHyper::default();
        let mut st = state();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let align = Batch::Align(vec![(seq(&[0, 20]), seq(&[0, 40])), (seq(&[0, 21]), seq(&[0, 41]))]);
        assert!(train_step(&mut st, &align, &hyper, &mut rng).unwrap() >= 0.0);
        let sim = Batch::SimCse(vec![seq(&[0, 20, 22]), seq(&[0, 21, 23])]);
        assert!(train_step(&mut st, &sim, &hyper, &mut rng).unwrap() >= 0.0);
        assert_eq!(st.step, 2);
    }

    #[test]
    fn warmup_schedule() {
        let h = TrainHyper {
            lr: 1.0,
            ..TrainHyper::default()
        }
        .with_warmup_fraction(1000);
        assert_eq!(h.warmup_steps, 10);
        assert!((h.lr_at(0) - 0.1).abs() < 1e-12);
        assert_eq!(h.lr_at(9), 1.0);
        assert_eq!(h.lr_at(500), 1.0);
    }
}
