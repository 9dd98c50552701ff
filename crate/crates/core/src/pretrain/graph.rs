//! Shared-word graph linking message, file path and code.

use crate::sequence::{SegmentId, SegmentedSequence, SpecialToken, Vocabulary};
use rand::seq::index;
use rand::Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    Message,
    FilePath,
    Code,
}

impl Component {
    fn of(seg: SegmentId) -> Self {
        match seg {
            SegmentId::Msg => Component::Message,
            SegmentId::File => Component::FilePath,
            _ => Component::Code,
        }
    }
}

/// One word occurrence: the subword tokens `tokens` of the built sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Occurrence {
    pub component: Component,
    pub tokens: Range<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommitGraph {
    nodes: BTreeMap<String, Vec<Occurrence>>,
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "do", "for", "from", "has", "have", "if", "in", "into",
    "is", "it", "its", "no", "not", "of", "on", "or", "so", "than", "that", "the", "then", "this", "to", "was",
    "we", "were", "when", "with",
];

fn is_candidate(word: &str) -> bool {
    word.chars().count() >= 2
        && !word.chars().all(|c| c.is_numeric())
        && !STOPWORDS.contains(&word.to_lowercase().as_str())
}

/// Byte ranges of the words in `text`: alphanumeric runs (so `_` separates)
/// further split at camelCase boundaries.
pub fn word_spans(text: &str) -> Vec<Range<usize>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for k in 0..chars.len() {
        let (pos, c) = chars[k];
        if !c.is_alphanumeric() {
            if let Some(s) = start.take() {
                out.push(s..pos);
            }
            continue;
        }
        if let Some(s) = start {
            let prev = chars[k - 1].1;
            let next_lower = chars.get(k + 1).is_some_and(|&(_, n)| n.is_lowercase());
            let camel = (prev.is_lowercase() && c.is_uppercase())
                || (prev.is_uppercase() && c.is_uppercase() && next_lower);
            if camel {
                out.push(s..pos);
                start = Some(pos);
            }
        } else {
            start = Some(pos);
        }
    }
    if let Some(s) = start {
        out.push(s..text.len());
    }
    out
}

impl CommitGraph {
    /// Builds the graph from a sequence produced by the full-input builder.
    /// Each maximal run of text tokens is decoded with per-token byte
    /// offsets so that word occurrences map back to covering tokens.
    pub fn build(seq: &SegmentedSequence, vocab: &Vocabulary) -> Self {
        let mut found: BTreeMap<String, Vec<Occurrence>> = BTreeMap::new();
        let n = seq.len();
        let mut i = 0;
        while i < n {
            if Vocabulary::is_reserved(seq.token_ids[i]) {
                i += 1;
                continue;
            }
            let component = Component::of(seq.segment_ids[i]);
            let mut j = i;
            let mut bytes = Vec::new();
            let mut ends = Vec::new();
            while j < n
                && !Vocabulary::is_reserved(seq.token_ids[j])
                && Component::of(seq.segment_ids[j]) == component
            {
                bytes.extend_from_slice(vocab.token_bytes(seq.token_ids[j]));
                ends.push(bytes.len());
                j += 1;
            }
            let text = String::from_utf8_lossy(&bytes);
            if text.len() == bytes.len() {
                for span in word_spans(&text) {
                    let word = &text[span.clone()];
                    if !is_candidate(word) {
                        continue;
                    }
                    let first = ends.partition_point(|&e| e <= span.start);
                    let last = ends.partition_point(|&e| e < span.end);
                    found.entry(word.to_string()).or_default().push(Occurrence {
                        component,
                        tokens: i + first..i + last + 1,
                    });
                }
            }
            i = j;
        }
        found.retain(|_, occ| occ.iter().map(|o| o.component).collect::<BTreeSet<_>>().len() >= 2);
        Self { nodes: found }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.nodes.contains_key(word)
    }

    /// Node words in sorted order.
    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    pub fn occurrences(&self, word: &str) -> &[Occurrence] {
        self.nodes.get(word).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Uniform subset of `max(1, n / 2)` nodes, returned sorted. Empty for
    /// an empty graph.
    pub fn select_mask_nodes<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<String> {
        if self.nodes.is_empty() {
            return Vec::new();
        }
        let n = self.nodes.len();
        let keys: Vec<&String> = self.nodes.keys().collect();
        let mut picked: Vec<usize> = index::sample(rng, n, (n / 2).max(1)).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|k| keys[k].clone()).collect()
    }

    /// Replaces every occurrence of every selected node with one `[MASK]`
    /// (overlapping occurrences merge). Returns the noised sequence and the
    /// target, which is the original sequence plus `[EOS]`.
    pub fn apply_gtm(&self, seq: &SegmentedSequence, selected: &[String]) -> (SegmentedSequence, SegmentedSequence) {
        let ranges: Vec<Range<usize>> = selected
            .iter()
            .flat_map(|w| self.occurrences(w).iter().map(|o| o.tokens.clone()))
            .collect();
        (mask_ranges(seq, ranges), seq.with_eos())
    }
}

/// Collapses each range to one `[MASK]` carrying the segment of the range's
/// first token. Overlapping ranges are merged first; touching ones are not.
pub fn mask_ranges(seq: &SegmentedSequence, mut ranges: Vec<Range<usize>>) -> SegmentedSequence {
    ranges.sort_by_key(|r| (r.start, r.end));
    let mut merged: Vec<Range<usize>> = Vec::with_capacity(ranges.len());
    for r in ranges.into_iter().filter(|r| !r.is_empty()) {
        match merged.last_mut() {
            Some(last) if r.start < last.end => last.end = last.end.max(r.end),
            _ => merged.push(r),
        }
    }
    let mut out = SegmentedSequence {
        truncated: seq.truncated,
        ..SegmentedSequence::default()
    };
    let mut pos = 0;
    for r in merged {
        for k in pos..r.start {
            out.push(seq.token_ids[k], seq.segment_ids[k]);
        }
        out.push_special(SpecialToken::Mask, seq.segment_ids[r.start]);
        pos = r.end;
    }
    for k in pos..seq.len() {
        out.push(seq.token_ids[k], seq.segment_ids[k]);
    }
    out
}
