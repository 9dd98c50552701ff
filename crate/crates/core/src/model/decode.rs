//! Autoregressive generation.

use super::{Mat, ModelError, ModelState};
use crate::sequence::{SegmentId, SegmentTracker, SegmentedSequence, SpecialToken};

struct Decoder<'a> {
    state: &'a ModelState,
    memory: Mat<f32>,
    start: SegmentId,
}

impl<'a> Decoder<'a> {
    fn new(source: &SegmentedSequence, state: &'a ModelState, start: SegmentId) -> Result<Self, ModelError> {
        let mut s = state.session(None);
        let m = s.encode(source)?;
        Ok(Self {
            state,
            memory: s.tape.value(m).clone(),
            start,
        })
    }

    /// Log-probabilities of the next token after `[CLS] generated`.
    fn next_log_probs(&self, generated: &[u32]) -> Result<Vec<f64>, ModelError> {
        let mut ids = vec![SpecialToken::Cls.id()];
        ids.extend_from_slice(generated);
        let prefix = SegmentedSequence {
            segment_ids: SegmentTracker::assign(self.start, &ids),
            token_ids: ids,
            truncated: false,
        };
        let mut s = self.state.session(None);
        let memory = s.tape.leaf(self.memory.clone());
        let states = s.decode_states(memory, &prefix)?;
        let last = s.tape.rows(states, &[prefix.len() - 1]);
        let logits = s.logits(last);
        let row = &s.tape.value(logits).data;
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
        Ok(row.iter().map(|&v| v as f64 - lse).collect())
    }

    fn limit(&self, max_len: usize) -> usize {
        max_len.min(self.state.config.max_positions.saturating_sub(1))
    }
}

/// Greedy generation from `[CLS]`: argmax with ties to the lowest id,
/// stopping at `[EOS]` (not returned) or after `max_len` tokens. `start` is
/// the segment of the target's leading `[CLS]`.
pub fn greedy_decode(
    source: &SegmentedSequence,
    state: &ModelState,
    max_len: usize,
    start: SegmentId,
) -> Result<Vec<u32>, ModelError> {
    let dec = Decoder::new(source, state, start)?;
    let mut out = Vec::new();
    for _ in 0..dec.limit(max_len) {
        let lp = dec.next_log_probs(&out)?;
        let mut best = 0;
        for (i, &v) in lp.iter().enumerate() {
            if v > lp[best] {
                best = i;
            }
        }
        if best as u32 == SpecialToken::Eos.id() {
            break;
        }
        out.push(best as u32);
    }
    Ok(out)
}

#[derive(Clone)]
struct Hyp {
    tokens: Vec<u32>,
    score: f64,
}

/// Beam search keeping the `width` best partial outputs by summed
/// log-probability. Finished outputs are ranked by score per generated
/// token (including `[EOS]`). Width 1 gives the greedy output.
pub fn beam_decode(
    source: &SegmentedSequence,
    state: &ModelState,
    max_len: usize,
    width: usize,
    start: SegmentId,
) -> Result<Vec<u32>, ModelError> {
    let width = width.max(1);
    let dec = Decoder::new(source, state, start)?;
    let limit = dec.limit(max_len);
    let eos = SpecialToken::Eos.id();
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
    }];
    let mut finished: Vec<(f64, Vec<u32>)> = Vec::new();
    for _ in 0..limit {
        let mut cands: Vec<(Hyp, bool)> = Vec::new();
        for h in &live {
            let lp = dec.next_log_probs(&h.tokens)?;
            let mut order: Vec<usize> = (0..lp.len()).collect();
            order.sort_by(|&a, &b| lp[b].partial_cmp(&lp[a]).unwrap().then(a.cmp(&b)));
            for &id in order.iter().take(width) {
                let mut tokens = h.tokens.clone();
                tokens.push(id as u32);
                cands.push((
                    Hyp {
                        tokens,
                        score: h.score + lp[id],
                    },
                    id as u32 == eos,
                ));
            }
        }
        cands.sort_by(|a, b| b.0.score.partial_cmp(&a.0.score).unwrap().then_with(|| a.0.tokens.cmp(&b.0.tokens)));
        live.clear();
        for (h, done) in cands.into_iter().take(width) {
            if done {
                let n = h.tokens.len() as f64;
                let mut t = h.tokens;
                t.pop();
                finished.push((h.score / n, t));
            } else {
                live.push(h);
            }
        }
        if live.is_empty() || finished.len() >= width {
            break;
        }
    }
    for h in live {
        let n = h.tokens.len().max(1) as f64;
        finished.push((h.score / n, h.tokens));
    }
    finished.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    Ok(finished.into_iter().next().map(|(_, t)| t).unwrap_or_default())
}
