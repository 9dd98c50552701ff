//! Byte-level BPE vocabulary with reserved ids for identifier and task
//! tokens.

use super::SpecialToken;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

pub const VOCAB_VERSION: &str = "commitbart-bpe/1";

/// Whole-word tokens used by the security patch target. They sit right after
/// the identifier tokens and are never produced by [`Vocabulary::encode`].
pub const RESERVED_WORDS: [&str; 4] = ["security", "patch", "True", "False"];

pub const NUM_RESERVED: u32 = SpecialToken::COUNT as u32 + RESERVED_WORDS.len() as u32;
pub const FIRST_BYTE_ID: u32 = NUM_RESERVED;
pub const FIRST_MERGE_ID: u32 = FIRST_BYTE_ID + 256;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("cannot train a vocabulary on an empty corpus")]
    EmptyCorpus,
    #[error("vocab size {requested} must exceed the {floor} reserved and byte ids")]
    SizeTooSmall { requested: usize, floor: usize },
    #[error("vocabulary file version {found:?}, expected {VOCAB_VERSION:?}")]
    VersionMismatch { found: String },
    #[error("invalid vocabulary file: {0}")]
    Invalid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: String,
    specials: Vec<String>,
    reserved_words: Vec<String>,
    merges: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
    bytes: Vec<Vec<u8>>,
}

/// Result of BPE training. `shortfall` counts merges that could not be
/// derived because no pair occurred at least twice.
#[derive(Debug, Clone)]
pub struct BpeTraining {
    pub vocab: Vocabulary,
    pub shortfall: usize,
}

impl BpeTraining {
    pub fn is_complete(&self) -> bool {
        self.shortfall == 0
    }
}

/// Splits text into pre-token pieces. Merges never cross piece boundaries.
///
/// Pieces are: a newline on its own; whitespace runs; letter runs split at
/// camelCase boundaries; digit runs; punctuation runs. A single leading
/// space attaches to the piece that follows it.
pub fn pretokenize(text: &str) -> Vec<&str> {
    #[derive(PartialEq, Clone, Copy)]
    enum Class {
        Newline,
        Space,
        Upper,
        Lower,
        Digit,
        Punct,
    }
    let class = |c: char| {
        if c == '\n' {
            Class::Newline
        } else if c.is_whitespace() {
            Class::Space
        } else if c.is_uppercase() {
            Class::Upper
        } else if c.is_alphabetic() {
            Class::Lower
        } else if c.is_numeric() {
            Class::Digit
        } else {
            Class::Punct
        }
    };
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut cuts = vec![0usize];
    for w in 0..chars.len().saturating_sub(1) {
        let (_, a) = chars[w];
        let (j, b) = chars[w + 1];
        let (ca, cb) = (class(a), class(b));
        let letter = |c| matches!(c, Class::Upper | Class::Lower);
        let cut = match (ca, cb) {
            (Class::Newline, _) | (_, Class::Newline) => true,
            (Class::Lower, Class::Upper) => true,
            // "HTTPServer": cut before the last capital of a run
            (Class::Upper, Class::Upper) => chars.get(w + 2).is_some_and(|&(_, c)| class(c) == Class::Lower),
            (x, y) if letter(x) && letter(y) => false,
            (Class::Space, Class::Space) => false,
            (Class::Punct, Class::Punct) => false,
            (Class::Digit, Class::Digit) => false,
            _ => true,
        };
        if cut {
            cuts.push(j);
        }
    }
    cuts.push(text.len());
    let raw: Vec<&str> = cuts.windows(2).map(|w| &text[w[0]..w[1]]).filter(|s| !s.is_empty()).collect();

    // Move one trailing ' ' of a whitespace run onto the following piece.
    let mut out: Vec<&str> = Vec::with_capacity(raw.len());
    let mut i = 0;
    while i < raw.len() {
        let piece = raw[i];
        let is_space_run = piece.chars().all(|c| c.is_whitespace() && c != '\n');
        if is_space_run && piece.ends_with(' ') && i + 1 < raw.len() && !raw[i + 1].starts_with(char::is_whitespace) {
            let split = piece.len() - 1;
            let start = piece.as_ptr() as usize - text.as_ptr() as usize;
            if split > 0 {
                out.push(&text[start..start + split]);
            }
            let next = raw[i + 1];
            let end = next.as_ptr() as usize - text.as_ptr() as usize + next.len();
            out.push(&text[start + split..end]);
            i += 2;
            continue;
        }
        out.push(piece);
        i += 1;
    }
    out
}

impl Vocabulary {
    fn from_merges(merges: Vec<(u32, u32)>) -> Result<Self, VocabError> {
        let mut bytes: Vec<Vec<u8>> = Vec::with_capacity(FIRST_MERGE_ID as usize + merges.len());
        for s in SpecialToken::ALL {
            bytes.push(s.as_str().as_bytes().to_vec());
        }
        for w in RESERVED_WORDS {
            bytes.push(w.as_bytes().to_vec());
        }
        for b in 0..=255u8 {
            bytes.push(vec![b]);
        }
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, &(a, b)) in merges.iter().enumerate() {
            let next = bytes.len() as u32;
            if a < FIRST_BYTE_ID || b < FIRST_BYTE_ID || a >= next || b >= next {
                return Err(VocabError::Invalid(format!("merge {rank} refers to unknown ids ({a}, {b})")));
            }
            let mut merged = bytes[a as usize].clone();
            merged.extend_from_slice(&bytes[b as usize]);
            bytes.push(merged);
            ranks.insert((a, b), rank as u32);
        }
        Ok(Self { merges, ranks, bytes })
    }

    /// Byte-only vocabulary with no merges.
    pub fn bytes_only() -> Self {
        Self::from_merges(Vec::new()).expect("no merges")
    }

    /// Trains merges over the pre-token pieces of `texts` until `vocab_size`
    /// ids exist or no pair occurs twice. Ties go to the lowest pair ids.
    pub fn train<'a>(texts: impl IntoIterator<Item = &'a str>, vocab_size: usize) -> Result<BpeTraining, VocabError> {
        let floor = FIRST_MERGE_ID as usize;
        if vocab_size <= floor {
            return Err(VocabError::SizeTooSmall {
                requested: vocab_size,
                floor,
            });
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        let mut any = false;
        for t in texts {
            any |= !t.is_empty();
            for p in pretokenize(t) {
                *counts.entry(p).or_default() += 1;
            }
        }
        if !any {
            return Err(VocabError::EmptyCorpus);
        }
        let mut words: Vec<(&str, u64)> = counts.into_iter().collect();
        words.sort_unstable();
        let mut symbols: Vec<Vec<u32>> = words
            .iter()
            .map(|(w, _)| w.bytes().map(|b| FIRST_BYTE_ID + b as u32).collect())
            .collect();
        let freqs: Vec<u64> = words.iter().map(|(_, c)| *c).collect();

        let wanted = vocab_size - floor;
        let mut merges: Vec<(u32, u32)> = Vec::with_capacity(wanted);
        let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
        while merges.len() < wanted {
            pair_counts.clear();
            for (syms, &f) in symbols.iter().zip(&freqs) {
                for w in syms.windows(2) {
                    *pair_counts.entry((w[0], w[1])).or_default() += f;
                }
            }
            let best = pair_counts
                .iter()
                .filter(|(_, &c)| c >= 2)
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
            let Some((&pair, _)) = best else { break };
            let new_id = FIRST_MERGE_ID + merges.len() as u32;
            merges.push(pair);
            for syms in symbols.iter_mut() {
                merge_in_place(syms, pair, new_id);
            }
        }
        let shortfall = wanted - merges.len();
        if shortfall > 0 {
            log::warn!("corpus supports only {} of {} requested merges", merges.len(), wanted);
        }
        Ok(BpeTraining {
            vocab: Self::from_merges(merges)?,
            shortfall,
        })
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn reserved_word_id(word: &str) -> Option<u32> {
        RESERVED_WORDS
            .iter()
            .position(|w| *w == word)
            .map(|i| SpecialToken::COUNT as u32 + i as u32)
    }

    pub fn is_reserved(id: u32) -> bool {
        id < NUM_RESERVED
    }

    pub fn token_bytes(&self, id: u32) -> &[u8] {
        &self.bytes[id as usize]
    }

    /// Display form of one token: identifiers as `[NAME]`, reserved words as
    /// themselves, byte tokens lossily decoded.
    pub fn token_string(&self, id: u32) -> String {
        String::from_utf8_lossy(&self.bytes[id as usize]).into_owned()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::with_capacity(text.len() / 2);
        for piece in pretokenize(text) {
            let mut syms: Vec<u32> = piece.bytes().map(|b| FIRST_BYTE_ID + b as u32).collect();
            loop {
                let best = syms
                    .windows(2)
                    .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                    .min();
                let Some((rank, pair)) = best else { break };
                merge_in_place(&mut syms, pair, FIRST_MERGE_ID + rank);
            }
            out.extend(syms);
        }
        out
    }

    /// Concatenated bytes of all non-reserved tokens.
    pub fn decode_bytes(&self, ids: &[u32]) -> Vec<u8> {
        let mut out = Vec::new();
        for &id in ids.iter().filter(|&&id| !Self::is_reserved(id)) {
            out.extend_from_slice(&self.bytes[id as usize]);
        }
        out
    }

    /// Lossless inverse of [`encode`](Self::encode) for byte tokens.
    pub fn decode(&self, ids: &[u32]) -> String {
        String::from_utf8_lossy(&self.decode_bytes(ids)).into_owned()
    }

    /// Human-readable text: `[CLS]`, `[EOS]` and `[PAD]` are dropped, other
    /// reserved tokens become space-separated words between byte runs.
    pub fn decode_text(&self, ids: &[u32]) -> String {
        let mut parts: Vec<String> = Vec::new();
        let mut run: Vec<u8> = Vec::new();
        for &id in ids {
            if Self::is_reserved(id) {
                if !run.is_empty() {
                    parts.push(String::from_utf8_lossy(&run).into_owned());
                    run.clear();
                }
                if matches!(
                    SpecialToken::from_id(id),
                    Some(SpecialToken::Cls | SpecialToken::Eos | SpecialToken::Pad)
                ) {
                    continue;
                }
                parts.push(self.token_string(id));
            } else {
                run.extend_from_slice(&self.bytes[id as usize]);
            }
        }
        if !run.is_empty() {
            parts.push(String::from_utf8_lossy(&run).into_owned());
        }
        parts.join(" ")
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            version: VOCAB_VERSION.to_string(),
            specials: SpecialToken::ALL.iter().map(|s| s.as_str().to_string()).collect(),
            reserved_words: RESERVED_WORDS.iter().map(|s| s.to_string()).collect(),
            merges: self.merges.clone(),
        };
        serde_json::to_string_pretty(&file).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, VocabError> {
        let file: VocabFile = serde_json::from_str(text)?;
        if file.version != VOCAB_VERSION {
            return Err(VocabError::VersionMismatch { found: file.version });
        }
        let specials: Vec<&str> = SpecialToken::ALL.iter().map(|s| s.as_str()).collect();
        if file.specials != specials || file.reserved_words != RESERVED_WORDS {
            return Err(VocabError::Invalid("reserved token table differs from this build".into()));
        }
        Self::from_merges(file.merges)
    }
}

fn merge_in_place(syms: &mut Vec<u32>, pair: (u32, u32), new_id: u32) {
    if syms.len() < 2 {
        return;
    }
    let mut write = 0;
    let mut read = 0;
    while read < syms.len() {
        if read + 1 < syms.len() && syms[read] == pair.0 && syms[read + 1] == pair.1 {
            syms[write] = new_id;
            read += 2;
        } else {
            syms[write] = syms[read];
            read += 1;
        }
        write += 1;
    }
    syms.truncate(write);
}
