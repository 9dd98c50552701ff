//! Encoder-decoder Transformer with summed token, segment and position
//! embeddings, trained with teacher-forced cross-entropy and in-batch
//! contrastive losses.

mod checkpoint;
mod decode;
mod optim;
mod real;
mod tape;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use decode::{beam_decode, greedy_decode};
pub use optim::{train_step, Batch, TrainHyper};
pub use real::{Mat, Real};
pub use tape::{Tape, Var};

use crate::sequence::{SegmentId, SegmentedSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds {max} positions")]
    PositionOverflow { len: usize, max: usize },
    #[error("token id {id} outside a vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("representation has zero norm")]
    ZeroVector,
    #[error("two dropout views need a positive dropout rate")]
    DropoutDisabled,
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch mixes example kinds")]
    MixedBatch,
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: u64, loss: f64 },
    #[error("checkpoint {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("checkpoint version {found:?}, expected {CHECKPOINT_VERSION:?}")]
    VersionMismatch { found: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers_enc: usize,
    pub layers_dec: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub dropout_rate: f64,
    pub tau: f64,
}

impl ModelConfig {
    /// Two layers each side, width 64, four heads.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            layers_enc: 2,
            layers_dec: 2,
            dim: 64,
            heads: 4,
            ffn_mult: 4,
            vocab_size,
            max_positions: 512,
            dropout_rate: 0.1,
            tau: 0.05,
        }
    }

    /// Six layers each side, width 768, twelve heads.
    pub fn base(vocab_size: usize) -> Self {
        Self {
            layers_enc: 6,
            layers_dec: 6,
            dim: 768,
            heads: 12,
            ..Self::tiny(vocab_size)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.layers_enc == 0 || self.layers_dec == 0 || self.dim == 0 || self.heads == 0 || self.ffn_mult == 0 {
            return bad("layer counts, width, heads and ffn multiplier must be positive".into());
        }
        if !self.dim.is_multiple_of(self.heads) {
            return bad(format!("dim {} is not divisible by {} heads", self.dim, self.heads));
        }
        if self.vocab_size == 0 || self.max_positions == 0 {
            return bad("vocab size and max positions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return bad(format!("temperature {} must be positive", self.tau));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Name, shape and initialization of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Weight decay applies to matrices only.
    pub decay: bool,
    init: Init,
}

#[derive(Debug, Clone, Copy)]
struct LnIdx {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct AttnIdx {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone, Copy)]
struct FfnIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct EncLayer {
    ln1: LnIdx,
    attn: AttnIdx,
    ln2: LnIdx,
    ffn: FfnIdx,
}

#[derive(Debug, Clone, Copy)]
struct DecLayer {
    ln1: LnIdx,
    self_attn: AttnIdx,
    ln2: LnIdx,
    cross: AttnIdx,
    ln3: LnIdx,
    ffn: FfnIdx,
}

/// Parameter table derived from a configuration.
#[derive(Debug, Clone)]
pub struct Layout {
    pub specs: Vec<TensorSpec>,
    tok: usize,
    seg: usize,
    pos: usize,
    enc: Vec<EncLayer>,
    enc_ln: LnIdx,
    dec: Vec<DecLayer>,
    dec_ln: LnIdx,
}

struct LayoutBuilder {
    specs: Vec<TensorSpec>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push(TensorSpec {
            name,
            rows,
            cols,
            decay: init == Init::Normal,
            init,
        });
        self.specs.len() - 1
    }

    fn ln(&mut self, p: &str, d: usize) -> LnIdx {
        LnIdx {
            g: self.add(format!("{p}.g"), 1, d, Init::Ones),
            b: self.add(format!("{p}.b"), 1, d, Init::Zeros),
        }
    }

    fn attn(&mut self, p: &str, d: usize) -> AttnIdx {
        let mut pair = |w: &str| {
            (
                self.add(format!("{p}.w{w}"), d, d, Init::Normal),
                self.add(format!("{p}.b{w}"), 1, d, Init::Zeros),
            )
        };
        let (wq, bq) = pair("q");
        let (wk, bk) = pair("k");
        let (wv, bv) = pair("v");
        let (wo, bo) = pair("o");
        AttnIdx {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        }
    }

    fn ffn(&mut self, p: &str, d: usize, hidden: usize) -> FfnIdx {
        FfnIdx {
            w1: self.add(format!("{p}.w1"), d, hidden, Init::Normal),
            b1: self.add(format!("{p}.b1"), 1, hidden, Init::Zeros),
            w2: self.add(format!("{p}.w2"), hidden, d, Init::Normal),
            b2: self.add(format!("{p}.b2"), 1, d, Init::Zeros),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.dim;
        let hidden = d * cfg.ffn_mult;
        let mut b = LayoutBuilder { specs: Vec::new() };
        let tok = b.add("tok_emb".into(), cfg.vocab_size, d, Init::Normal);
        let seg = b.add("seg_emb".into(), SegmentId::COUNT, d, Init::Normal);
        let pos = b.add("pos_emb".into(), cfg.max_positions, d, Init::Normal);
        let enc = (0..cfg.layers_enc)
            .map(|l| EncLayer {
                ln1: b.ln(&format!("enc.{l}.ln1"), d),
                attn: b.attn(&format!("enc.{l}.attn"), d),
                ln2: b.ln(&format!("enc.{l}.ln2"), d),
                ffn: b.ffn(&format!("enc.{l}.ffn"), d, hidden),
            })
            .collect();
        let enc_ln = b.ln("enc.ln_f", d);
        let dec = (0..cfg.layers_dec)
            .map(|l| DecLayer {
                ln1: b.ln(&format!("dec.{l}.ln1"), d),
                self_attn: b.attn(&format!("dec.{l}.self_attn"), d),
                ln2: b.ln(&format!("dec.{l}.ln2"), d),
                cross: b.attn(&format!("dec.{l}.cross_attn"), d),
                ln3: b.ln(&format!("dec.{l}.ln3"), d),
                ffn: b.ffn(&format!("dec.{l}.ffn"), d, hidden),
            })
            .collect();
        let dec_ln = b.ln("dec.ln_f", d);
        Self {
            specs: b.specs,
            tok,
            seg,
            pos,
            enc,
            enc_ln,
            dec,
            dec_ln,
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.specs.iter().map(|s| s.rows * s.cols).sum()
    }
}

/// Parameters, optimizer moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: Vec<Mat<f32>>,
    pub adam_m: Vec<Mat<f32>>,
    pub adam_v: Vec<Mat<f32>>,
    pub step: u64,
    layout: Layout,
}

impl PartialEq for Layout {
    fn eq(&self, other: &Self) -> bool {
        self.specs == other.specs
    }
}

const INIT_STD: f64 = 0.02;

impl ModelState {
    /// Normal(0, 0.02) weights, zero biases, unit layer-norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, INIT_STD as f32).expect("valid std");
        let params: Vec<Mat<f32>> = layout
            .specs
            .iter()
            .map(|s| {
                let n = s.rows * s.cols;
                let data = match s.init {
                    Init::Normal => (0..n).map(|_| normal.sample(&mut rng)).collect(),
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                };
                Mat::from_vec(s.rows, s.cols, data)
            })
            .collect();
        let zeros: Vec<Mat<f32>> = params.iter().map(|p| Mat::zeros(p.rows, p.cols)).collect();
        Ok(Self {
            config,
            adam_m: zeros.clone(),
            adam_v: zeros,
            params,
            step: 0,
            layout,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param(&self, name: &str) -> Option<&Mat<f32>> {
        self.layout.index_of(name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Mat<f32>> {
        self.layout.index_of(name).map(|i| &mut self.params[i])
    }

    /// Parameters converted to another scalar type.
    pub fn params_as<T: Real>(&self) -> Vec<Mat<T>> {
        self.params.iter().map(Mat::cast).collect()
    }

    /// Session over this state's parameters in f32.
    pub fn session(&self, dropout: Option<ChaCha8Rng>) -> Session<'_, f32> {
        Session::new(&self.config, &self.layout, &self.params, dropout)
    }

    fn from_parts(
        config: ModelConfig,
        params: Vec<Mat<f32>>,
        adam_m: Vec<Mat<f32>>,
        adam_v: Vec<Mat<f32>>,
        step: u64,
    ) -> Self {
        let layout = Layout::new(&config);
        Self {
            config,
            params,
            adam_m,
            adam_v,
            step,
            layout,
        }
    }
}

/// One differentiable computation over a set of parameters. Dropout is
/// active iff a generator is supplied and the rate is positive.
pub struct Session<'a, T: Real> {
    pub tape: Tape<T>,
    cfg: &'a ModelConfig,
    layout: &'a Layout,
    params: &'a [Mat<T>],
    vars: Vec<Option<Var>>,
    dropout: Option<ChaCha8Rng>,
}

impl<'a, T: Real> Session<'a, T> {
    pub fn new(cfg: &'a ModelConfig, layout: &'a Layout, params: &'a [Mat<T>], dropout: Option<ChaCha8Rng>) -> Self {
        Self {
            tape: Tape::new(),
            cfg,
            layout,
            params,
            vars: vec![None; params.len()],
            dropout: dropout.filter(|_| cfg.dropout_rate > 0.0),
        }
    }

    pub fn train_mode(&self) -> bool {
        self.dropout.is_some()
    }

    fn p(&mut self, i: usize) -> Var {
        if let Some(v) = self.vars[i] {
            return v;
        }
        let v = self.tape.leaf(self.params[i].clone());
        self.vars[i] = Some(v);
        v
    }

    fn drop(&mut self, x: Var) -> Var {
        let Some(rng) = self.dropout.as_mut() else { return x };
        let rate = self.cfg.dropout_rate;
        let keep = T::of(1.0 / (1.0 - rate));
        let n = self.tape.value(x).data.len();
        let mask = (0..n).map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep }).collect();
        self.tape.dropout(x, mask)
    }

    fn check(&self, seq: &SegmentedSequence) -> Result<(), ModelError> {
        if seq.len() > self.cfg.max_positions {
            return Err(ModelError::PositionOverflow {
                len: seq.len(),
                max: self.cfg.max_positions,
            });
        }
        if let Some(&id) = seq.token_ids.iter().find(|&&id| id as usize >= self.cfg.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                id,
                vocab: self.cfg.vocab_size,
            });
        }
        Ok(())
    }

    /// Row `t` is `tok_emb[id_t] + seg_emb[seg_t] + pos_emb[t]`.
    pub fn embed(&mut self, seq: &SegmentedSequence) -> Result<Var, ModelError> {
        self.check(seq)?;
        let ids: Vec<usize> = seq.token_ids.iter().map(|&i| i as usize).collect();
        let segs: Vec<usize> = seq.segment_ids.iter().map(|s| s.index()).collect();
        let positions: Vec<usize> = (0..seq.len()).collect();
        let (tok, seg, pos) = (self.p(self.layout.tok), self.p(self.layout.seg), self.p(self.layout.pos));
        let a = self.tape.gather(tok, &ids);
        let b = self.tape.gather(seg, &segs);
        let c = self.tape.gather(pos, &positions);
        let ab = self.tape.add(a, b);
        Ok(self.tape.add(ab, c))
    }

    fn layer_norm(&mut self, x: Var, ln: LnIdx) -> Var {
        let (g, b) = (self.p(ln.g), self.p(ln.b));
        self.tape.layer_norm(x, g, b)
    }

    fn linear(&mut self, x: Var, w: usize, b: usize) -> Var {
        let (w, b) = (self.p(w), self.p(b));
        let y = self.tape.matmul(x, w);
        self.tape.add_row(y, b)
    }

    fn attention(&mut self, q_in: Var, kv_in: Var, a: AttnIdx, causal: bool) -> Var {
        let q = self.linear(q_in, a.wq, a.bq);
        let k = self.linear(kv_in, a.wk, a.bk);
        let v = self.linear(kv_in, a.wv, a.bv);
        let dh = self.cfg.dim / self.cfg.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let qh = self.tape.slice_cols(q, h * dh, dh);
            let kh = self.tape.slice_cols(k, h * dh, dh);
            let vh = self.tape.slice_cols(v, h * dh, dh);
            let s = self.tape.matmul_t(qh, kh);
            let s = self.tape.scale(s, scale);
            let p = self.tape.softmax(s, causal);
            heads.push(self.tape.matmul(p, vh));
        }
        let cat = self.tape.concat_cols(&heads);
        self.linear(cat, a.wo, a.bo)
    }

    fn ffn(&mut self, x: Var, f: FfnIdx) -> Var {
        let h = self.linear(x, f.w1, f.b1);
        let h = self.tape.gelu(h);
        self.linear(h, f.w2, f.b2)
    }

    fn residual(&mut self, x: Var, branch: Var) -> Var {
        let b = self.drop(branch);
        self.tape.add(x, b)
    }

    /// Encoder output, one row per source position.
    pub fn encode(&mut self, source: &SegmentedSequence) -> Result<Var, ModelError> {
        let e = self.embed(source)?;
        let mut x = self.drop(e);
        for l in 0..self.layout.enc.len() {
            let layer = self.layout.enc[l];
            let h = self.layer_norm(x, layer.ln1);
            let a = self.attention(h, h, layer.attn, false);
            x = self.residual(x, a);
            let h = self.layer_norm(x, layer.ln2);
            let f = self.ffn(h, layer.ffn);
            x = self.residual(x, f);
        }
        Ok(self.layer_norm(x, self.layout.enc_ln))
    }

    /// Final decoder states for `prefix` attending to `memory`.
    pub fn decode_states(&mut self, memory: Var, prefix: &SegmentedSequence) -> Result<Var, ModelError> {
        let e = self.embed(prefix)?;
        let mut x = self.drop(e);
        for l in 0..self.layout.dec.len() {
            let layer = self.layout.dec[l];
            let h = self.layer_norm(x, layer.ln1);
            let a = self.attention(h, h, layer.self_attn, true);
            x = self.residual(x, a);
            let h = self.layer_norm(x, layer.ln2);
            let c = self.attention(h, memory, layer.cross, false);
            x = self.residual(x, c);
            let h = self.layer_norm(x, layer.ln3);
            let f = self.ffn(h, layer.ffn);
            x = self.residual(x, f);
        }
        Ok(self.layer_norm(x, self.layout.dec_ln))
    }

    /// Vocabulary logits through the tied token embedding.
    pub fn logits(&mut self, states: Var) -> Var {
        let tok = self.p(self.layout.tok);
        self.tape.matmul_t(states, tok)
    }

    /// Logits for every prefix position, `|prefix| × |V|`.
    pub fn forward_seq2seq(&mut self, source: &SegmentedSequence, prefix: &SegmentedSequence) -> Result<Var, ModelError> {
        let memory = self.encode(source)?;
        let states = self.decode_states(memory, prefix)?;
        Ok(self.logits(states))
    }

    /// Mean teacher-forced negative log-likelihood of `target[1..]`.
    pub fn seq2seq_loss(&mut self, source: &SegmentedSequence, target: &SegmentedSequence) -> Result<Var, ModelError> {
        if target.len() < 2 {
            return Err(ModelError::Config("target needs at least two tokens".into()));
        }
        let prefix = SegmentedSequence {
            token_ids: target.token_ids[..target.len() - 1].to_vec(),
            segment_ids: target.segment_ids[..target.len() - 1].to_vec(),
            truncated: false,
        };
        let logits = self.forward_seq2seq(source, &prefix)?;
        let gold: Vec<usize> = target.token_ids[1..].iter().map(|&i| i as usize).collect();
        Ok(self.tape.cross_entropy(logits, &gold))
    }

    /// Encoder output at the leading `[CLS]` position, `1 × dim`.
    pub fn pooled(&mut self, source: &SegmentedSequence) -> Result<Var, ModelError> {
        let enc = self.encode(source)?;
        Ok(self.tape.rows(enc, &[0]))
    }

    /// In-batch contrastive loss of rows `reps[i]` against `positives[i]`:
    /// cosine similarities over temperature, cross-entropy on the diagonal.
    pub fn contrastive(&mut self, reps: &[Var], positives: &[Var]) -> Result<Var, ModelError> {
        contrastive_on_tape(&mut self.tape, reps, positives, T::of(self.cfg.tau))
    }

    /// Gradients for every parameter tensor; unused ones are zero.
    pub fn param_grads(&self, loss: Var) -> Vec<Mat<T>> {
        let mut grads = self.tape.backward(loss);
        self.params
            .iter()
            .zip(&self.vars)
            .map(|(p, v)| match v.and_then(|v| grads[v].take()) {
                Some(g) => g,
                None => Mat::zeros(p.rows, p.cols),
            })
            .collect()
    }
}

/// Contrastive loss over tape rows; each var is `1 × d` or `k × d`.
pub fn contrastive_on_tape<T: Real>(tape: &mut Tape<T>, reps: &[Var], positives: &[Var], tau: T) -> Result<Var, ModelError> {
    if reps.is_empty() || reps.len() != positives.len() {
        return Err(ModelError::EmptyBatch);
    }
    let a = tape.concat_rows(reps);
    let b = tape.concat_rows(positives);
    for v in [a, b] {
        let m = tape.value(v);
        if (0..m.rows).any(|r| m.row(r).iter().all(|x| *x == T::zero())) {
            return Err(ModelError::ZeroVector);
        }
    }
    let an = tape.normalize_rows(a);
    let bn = tape.normalize_rows(b);
    let sims = tape.matmul_t(an, bn);
    let scaled = tape.scale(sims, T::one() / tau);
    let n = tape.value(a).rows;
    let diag: Vec<usize> = (0..n).collect();
    Ok(tape.cross_entropy(scaled, &diag))
}

/// Contrastive loss of plain vectors.
pub fn contrastive_loss(reps: &[Vec<f64>], positives: &[Vec<f64>], tau: f64) -> Result<f64, ModelError> {
    let mut tape = Tape::<f64>::new();
    let mut leaf = |v: &Vec<f64>| tape.leaf(Mat::from_vec(1, v.len(), v.clone()));
    let a: Vec<Var> = reps.iter().map(&mut leaf).collect();
    let b: Vec<Var> = positives.iter().map(&mut leaf).collect();
    let loss = contrastive_on_tape(&mut tape, &a, &b, tau)?;
    Ok(tape.value(loss).data[0])
}

/// Eval-mode encoder output at `[CLS]`.
pub fn pooled_representation(source: &SegmentedSequence, state: &ModelState) -> Result<Vec<f32>, ModelError> {
    let mut s = state.session(None);
    let v = s.pooled(source)?;
    Ok(s.tape.value(v).data.clone())
}

/// Two train-mode encodings of one source under independent dropout masks.
pub fn simcse_step(
    source: &SegmentedSequence,
    state: &ModelState,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f32>, Vec<f32>), ModelError> {
    if state.config.dropout_rate <= 0.0 {
        return Err(ModelError::DropoutDisabled);
    }
    let mut s = state.session(Some(ChaCha8Rng::seed_from_u64(rng.gen())));
    let a = s.pooled(source)?;
    let b = s.pooled(source)?;
    Ok((s.tape.value(a).data.clone(), s.tape.value(b).data.clone()))
}

/// Eval-mode teacher-forced loss.
pub fn loss_seq2seq(source: &SegmentedSequence, target: &SegmentedSequence, state: &ModelState) -> Result<f64, ModelError> {
    let mut s = state.session(None);
    let l = s.seq2seq_loss(source, target)?;
    Ok(s.tape.value(l).data[0] as f64)
}

/// Eval-mode logits, `|prefix| × |V|`.
pub fn forward_seq2seq(
    source: &SegmentedSequence,
    prefix: &SegmentedSequence,
    state: &ModelState,
) -> Result<Mat<f32>, ModelError> {
    let mut s = state.session(None);
    let l = s.forward_seq2seq(source, prefix)?;
    Ok(s.tape.value(l).clone())
}

/// Eval-mode embedding of a sequence.
pub fn embed(seq: &SegmentedSequence, state: &ModelState) -> Result<Mat<f32>, ModelError> {
    let mut s = state.session(None);
    let e = s.embed(seq)?;
    Ok(s.tape.value(e).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::SpecialToken;

    pub(crate) fn seq(ids: &[u32], seg: SegmentId) -> SegmentedSequence {
        SegmentedSequence {
            token_ids: ids.to_vec(),
            segment_ids: vec![seg; ids.len()],
            truncated: false,
        }
    }

    fn small() -> ModelState {
        let cfg = ModelConfig {
            dim: 16,
            heads: 2,
            vocab_size: 64,
            max_positions: 32,
            ..ModelConfig::tiny(64)
        };
        ModelState::init(cfg, 7).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = ModelState::init(ModelConfig::tiny(1000), 3).unwrap();
        let b = ModelState::init(ModelConfig::tiny(1000), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.param("tok_emb").unwrap().shape(), (1000, 64));
        assert_eq!(a.param("seg_emb").unwrap().shape(), (5, 64));
        let bad = ModelConfig {
            heads: 5,
            ..ModelConfig::tiny(10)
        };
        assert!(matches!(ModelState::init(bad, 0), Err(ModelError::Config(_))));
    }

    #[test]
    fn embedding_is_additive() {
        let mut st = small();
        for name in ["seg_emb", "pos_emb"] {
            st.param_mut(name).unwrap().data.iter_mut().for_each(|x| *x = 0.0);
        }
        let s = seq(&[0, 20, 33], SegmentId::Msg);
        let e = embed(&s, &st).unwrap();
        assert_eq!(e.shape(), (3, 16));
        let tok = st.param("tok_emb").unwrap();
        for (r, &id) in s.token_ids.iter().enumerate() {
            assert_eq!(e.row(r), tok.row(id as usize));
        }
        let mut other = s.clone();
        other.segment_ids = vec![SegmentId::Pos; 3];
        assert_eq!(embed(&other, &st).unwrap(), e);
        let fresh = small();
        assert_ne!(embed(&other, &fresh).unwrap(), embed(&s, &fresh).unwrap());
    }

    #[test]
    fn decoder_is_causal() {
        let st = small();
        let src = seq(&[0, 20, 21, 22], SegmentId::Ctx);
        let a = forward_seq2seq(&src, &seq(&[0, 30, 31, 32, 33], SegmentId::Ctx), &st).unwrap();
        let b = forward_seq2seq(&src, &seq(&[0, 30, 31, 50, 33], SegmentId::Ctx), &st).unwrap();
        assert_eq!(a.shape(), (5, 64));
        assert_eq!(a.row(0), b.row(0));
        assert_eq!(a.row(2), b.row(2));
        assert_ne!(a.row(3), b.row(3));
        assert_eq!(a, forward_seq2seq(&src, &seq(&[0, 30, 31, 32, 33], SegmentId::Ctx), &st).unwrap());
    }

    #[test]
    fn position_overflow() {
        let st = small();
        let long = seq(&[20; 40], SegmentId::Ctx);
        assert!(matches!(embed(&long, &st), Err(ModelError::PositionOverflow { len: 40, max: 32 })));
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let mut st = small();
        for name in ["dec.ln_f.g", "dec.ln_f.b"] {
            st.param_mut(name).unwrap().data.iter_mut().for_each(|x| *x = 0.0);
        }
        let src = seq(&[0, 20, 21], SegmentId::Ctx);
        let tgt = seq(&[0, 25, 26, SpecialToken::Eos.id()], SegmentId::Ctx);
        let loss = loss_seq2seq(&src, &tgt, &st).unwrap();
        assert!((loss - (64f64).ln()).abs() < 1e-6, "{loss}");
    }

    #[test]
    fn contrastive_identities() {
        assert_eq!(contrastive_loss(&[vec![1.0, 2.0]], &[vec![-3.0, 0.5]], 0.05).unwrap(), 0.0);
        let l = contrastive_loss(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[vec![2.0, 0.0], vec![0.0, 3.0]], 1.0).unwrap();
        assert!((l - (1.0 + (-1f64).exp()).ln()).abs() < 1e-12);
        assert!(matches!(
            contrastive_loss(&[vec![0.0, 0.0]], &[vec![1.0, 0.0]], 1.0),
            Err(ModelError::ZeroVector)
        ));
    }

    #[test]
    fn pooled_and_simcse() {
        let st = small();
        let src = seq(&[0, 20, 21, 22], SegmentId::Ctx);
        let p = pooled_representation(&src, &st).unwrap();
        assert_eq!(p.len(), 16);
        assert_eq!(p, pooled_representation(&src, &st).unwrap());
        let (a, b) = simcse_step(&src, &st, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_ne!(a, b);
        assert_eq!((a, b), simcse_step(&src, &st, &mut ChaCha8Rng::seed_from_u64(1)).unwrap());
        let mut off = st.clone();
        off.config.dropout_rate = 0.0;
        assert!(matches!(
            simcse_step(&src, &off, &mut ChaCha8Rng::seed_from_u64(1)),
            Err(ModelError::DropoutDisabled)
        ));
    }
}
