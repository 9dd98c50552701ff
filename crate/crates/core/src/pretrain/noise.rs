//! Span infilling noise.

use super::graph::mask_ranges;
use crate::sequence::{is_structural, SegmentedSequence};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub corruption_rate: f64,
    pub mean_span: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            corruption_rate: 0.15,
            mean_span: 3.0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.corruption_rate > 0.0 && self.corruption_rate < 1.0) {
            return Err(format!("corruption rate {} outside (0, 1)", self.corruption_rate));
        }
        if self.mean_span.is_nan() || self.mean_span < 1.0 {
            return Err(format!("mean span {} below 1", self.mean_span));
        }
        Ok(())
    }
}

/// Draws the spans to mask. Lengths come from Poisson(mean_span) with zero
/// draws redrawn and are clipped to the remaining budget. Each span starts
/// at a uniformly chosen uncovered maskable position and stops early at a
/// covered or structural token. Sampling ends once
/// `round(rate * maskable)` tokens are covered. Spans are returned sorted.
pub fn sample_spans<R: Rng + ?Sized>(seq: &SegmentedSequence, cfg: &NoiseConfig, rng: &mut R) -> Vec<Range<usize>> {
    let maskable: Vec<bool> = seq.token_ids.iter().map(|&t| !is_structural(t)).collect();
    let budget = (cfg.corruption_rate * maskable.iter().filter(|&&m| m).count() as f64).round() as usize;
    let poisson = Poisson::new(cfg.mean_span).expect("positive mean");
    let mut covered = vec![false; seq.len()];
    let mut spans = Vec::new();
    let mut done = 0;
    while done < budget {
        let len = loop {
            let draw = poisson.sample(rng) as usize;
            if draw > 0 {
                break draw.min(budget - done);
            }
        };
        let free: Vec<usize> = (0..seq.len()).filter(|&k| maskable[k] && !covered[k]).collect();
        let start = free[rng.gen_range(0..free.len())];
        let mut end = start;
        while end < seq.len() && end - start < len && maskable[end] && !covered[end] {
            covered[end] = true;
            end += 1;
        }
        done += end - start;
        spans.push(start..end);
    }
    spans.sort_by_key(|r| r.start);
    spans
}

/// Text infilling: each sampled span becomes one `[MASK]`. The target is
/// the original sequence plus `[EOS]`.
pub fn apply_text_infilling<R: Rng + ?Sized>(
    seq: &SegmentedSequence,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> (SegmentedSequence, SegmentedSequence) {
    let spans = sample_spans(seq, cfg, rng);
    (mask_ranges(seq, spans), seq.with_eos())
}
