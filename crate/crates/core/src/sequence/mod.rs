//! Linearized commit sequences.
//!
//! A commit becomes `[CLS] [MSG] M [FILE] F [CODE] C`, where `C` interleaves
//! context lines with `[NEG] … [END]` spans for deleted runs and
//! `[POS] … [END]` spans for added runs. Every token carries one of five
//! segment ids. The builders here produce all model inputs and targets.

mod vocab;

pub use vocab::{
    pretokenize, BpeTraining, VocabError, Vocabulary, FIRST_BYTE_ID, FIRST_MERGE_ID, NUM_RESERVED, RESERVED_WORDS,
    VOCAB_VERSION,
};

use crate::commit::{CommitRecord, FileDiff, LineKind};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub const DEFAULT_MAX_LEN: usize = 512;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SequenceError {
    #[error("encoded length {0} exceeds the maximum")]
    TooLong(usize),
    #[error("commit has neither added nor deleted lines")]
    NoChange,
    #[error("malformed sequence: {0}")]
    MalformedSequence(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpecialToken {
    Cls,
    Eos,
    Mask,
    Pad,
    Msg,
    File,
    Code,
    Neg,
    Pos,
    End,
}

impl SpecialToken {
    pub const COUNT: usize = 10;
    pub const ALL: [SpecialToken; 10] = [
        SpecialToken::Cls,
        SpecialToken::Eos,
        SpecialToken::Mask,
        SpecialToken::Pad,
        SpecialToken::Msg,
        SpecialToken::File,
        SpecialToken::Code,
        SpecialToken::Neg,
        SpecialToken::Pos,
        SpecialToken::End,
    ];

    pub const fn id(self) -> u32 {
        self as u32
    }

    pub fn from_id(id: u32) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SpecialToken::Cls => "[CLS]",
            SpecialToken::Eos => "[EOS]",
            SpecialToken::Mask => "[MASK]",
            SpecialToken::Pad => "[PAD]",
            SpecialToken::Msg => "[MSG]",
            SpecialToken::File => "[FILE]",
            SpecialToken::Code => "[CODE]",
            SpecialToken::Neg => "[NEG]",
            SpecialToken::Pos => "[POS]",
            SpecialToken::End => "[END]",
        }
    }
}

/// Ids that may never be masked or noised.
pub fn is_structural(id: u32) -> bool {
    id < NUM_RESERVED
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum SegmentId {
    Msg = 0,
    File = 1,
    Ctx = 2,
    Neg = 3,
    Pos = 4,
}

impl SegmentId {
    pub const COUNT: usize = 5;
    pub const ALL: [SegmentId; 5] = [SegmentId::Msg, SegmentId::File, SegmentId::Ctx, SegmentId::Neg, SegmentId::Pos];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl From<SegmentId> for u8 {
    fn from(s: SegmentId) -> u8 {
        s as u8
    }
}

impl TryFrom<u8> for SegmentId {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        SegmentId::ALL
            .get(v as usize)
            .copied()
            .ok_or_else(|| format!("segment id {v} out of range"))
    }
}

/// Parallel token and segment ids.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SegmentedSequence {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<SegmentId>,
    /// Set when context lines were dropped to fit the length cap.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

impl SegmentedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn push(&mut self, id: u32, seg: SegmentId) {
        self.token_ids.push(id);
        self.segment_ids.push(seg);
    }

    pub fn push_special(&mut self, tok: SpecialToken, seg: SegmentId) {
        self.push(tok.id(), seg);
    }

    pub fn count(&self, tok: SpecialToken) -> usize {
        self.token_ids.iter().filter(|&&t| t == tok.id()).count()
    }

    /// Copy with `[EOS]` appended, used for denoising targets.
    pub fn with_eos(&self) -> Self {
        let mut out = self.clone();
        out.push_special(SpecialToken::Eos, SegmentId::Ctx);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PieceKind {
    Special(SpecialToken),
    Text(String),
}

/// One element of a serialized commit before subword encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub kind: PieceKind,
    pub segment: SegmentId,
    /// Context code lines may be dropped to honour the length cap.
    pub droppable: bool,
}

impl Piece {
    fn special(tok: SpecialToken, segment: SegmentId) -> Self {
        Self {
            kind: PieceKind::Special(tok),
            segment,
            droppable: false,
        }
    }

    fn text(text: impl Into<String>, segment: SegmentId) -> Self {
        Self {
            kind: PieceKind::Text(text.into()),
            segment,
            droppable: false,
        }
    }
}

/// Display wrapper: identifiers in brackets, text pieces verbatim, all
/// separated by single spaces.
pub struct PieceDisplay<'a>(pub &'a [Piece]);

impl fmt::Display for PieceDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for p in self.0 {
            if !first {
                f.write_str(" ")?;
            }
            first = false;
            match &p.kind {
                PieceKind::Special(s) => f.write_str(s.as_str())?,
                PieceKind::Text(t) => f.write_str(t.trim_end_matches('\n'))?,
            }
        }
        Ok(())
    }
}

/// Which changed lines a code view keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeView {
    /// Context, deleted and added spans: `C`.
    Both,
    /// Context and deleted spans: `C⁻`.
    Before,
    /// Context and added spans: the updated snippet.
    After,
}

impl CodeView {
    fn keeps(self, kind: LineKind) -> bool {
        matches!(
            (self, kind),
            (_, LineKind::Context)
                | (CodeView::Both, _)
                | (CodeView::Before, LineKind::Deleted)
                | (CodeView::After, LineKind::Added)
        )
    }
}

fn code_pieces(file: &FileDiff, view: CodeView, out: &mut Vec<Piece>) {
    for hunk in &file.hunks {
        let mut i = 0;
        let lines = &hunk.lines;
        while i < lines.len() {
            let kind = lines[i].kind;
            let mut j = i;
            while j < lines.len() && lines[j].kind == kind {
                j += 1;
            }
            if view.keeps(kind) {
                match kind {
                    LineKind::Context => {
                        for l in &lines[i..j] {
                            out.push(Piece {
                                droppable: true,
                                ..Piece::text(format!("{}\n", l.text), SegmentId::Ctx)
                            });
                        }
                    }
                    LineKind::Deleted | LineKind::Added => {
                        let (open, seg) = if kind == LineKind::Deleted {
                            (SpecialToken::Neg, SegmentId::Neg)
                        } else {
                            (SpecialToken::Pos, SegmentId::Pos)
                        };
                        out.push(Piece::special(open, seg));
                        for l in &lines[i..j] {
                            out.push(Piece::text(format!("{}\n", l.text), seg));
                        }
                        out.push(Piece::special(SpecialToken::End, seg));
                    }
                }
            }
            i = j;
        }
    }
}

fn message_pieces(record: &CommitRecord, out: &mut Vec<Piece>) {
    out.push(Piece::special(SpecialToken::Msg, SegmentId::Msg));
    out.push(Piece::text(record.message.clone(), SegmentId::Msg));
}

fn file_blocks(record: &CommitRecord, view: CodeView, out: &mut Vec<Piece>) {
    for file in &record.files {
        out.push(Piece::special(SpecialToken::File, SegmentId::File));
        out.push(Piece::text(file.path.clone(), SegmentId::File));
        out.push(Piece::special(SpecialToken::Code, SegmentId::Ctx));
        code_pieces(file, view, out);
    }
}

/// `[CLS] [MSG] M` then `[FILE] F [CODE] C` per file.
pub fn serialize_commit(record: &CommitRecord) -> Vec<Piece> {
    let mut out = vec![Piece::special(SpecialToken::Cls, SegmentId::Ctx)];
    message_pieces(record, &mut out);
    file_blocks(record, CodeView::Both, &mut out);
    out
}

/// What to do when an encoded sequence exceeds the cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overflow {
    Reject,
    /// Drop context lines from the end; message and changed spans are kept.
    TruncateContext,
}

/// Encodes pieces into sequences under a length cap.
#[derive(Debug, Clone, Copy)]
pub struct SequenceBuilder<'v> {
    pub vocab: &'v Vocabulary,
    pub max_len: usize,
    pub overflow: Overflow,
}

impl<'v> SequenceBuilder<'v> {
    pub fn new(vocab: &'v Vocabulary, max_len: usize) -> Self {
        Self {
            vocab,
            max_len,
            overflow: Overflow::Reject,
        }
    }

    pub fn truncating(mut self) -> Self {
        self.overflow = Overflow::TruncateContext;
        self
    }

    /// Encodes pieces, dropping trailing context lines if allowed.
    pub fn encode_pieces(&self, pieces: &[Piece]) -> Result<SegmentedSequence, SequenceError> {
        let encoded: Vec<Vec<u32>> = pieces
            .iter()
            .map(|p| match &p.kind {
                PieceKind::Special(s) => vec![s.id()],
                PieceKind::Text(t) => self.vocab.encode(t),
            })
            .collect();
        let mut keep = vec![true; pieces.len()];
        let mut total: usize = encoded.iter().map(Vec::len).sum();
        let mut truncated = false;
        if total > self.max_len {
            if self.overflow == Overflow::Reject {
                return Err(SequenceError::TooLong(total));
            }
            for i in (0..pieces.len()).rev() {
                if total <= self.max_len {
                    break;
                }
                if pieces[i].droppable {
                    keep[i] = false;
                    total -= encoded[i].len();
                    truncated = true;
                }
            }
            if total > self.max_len {
                return Err(SequenceError::TooLong(total));
            }
        }
        let mut seq = SegmentedSequence {
            token_ids: Vec::with_capacity(total),
            segment_ids: Vec::with_capacity(total),
            truncated,
        };
        for ((p, ids), k) in pieces.iter().zip(&encoded).zip(keep) {
            if k {
                for &id in ids {
                    seq.push(id, p.segment);
                }
            }
        }
        Ok(seq)
    }

    /// `[CLS] [MSG] M [FILE] F [CODE] C`.
    pub fn full_input(&self, record: &CommitRecord) -> Result<SegmentedSequence, SequenceError> {
        self.encode_pieces(&serialize_commit(record))
    }

    /// `[CLS] [FILE] F [CODE] C`: the commit without its message.
    pub fn code_input(&self, record: &CommitRecord) -> Result<SegmentedSequence, SequenceError> {
        let mut pieces = vec![Piece::special(SpecialToken::Cls, SegmentId::Ctx)];
        file_blocks(record, CodeView::Both, &mut pieces);
        self.encode_pieces(&pieces)
    }

    /// `[CLS] [MSG] M`.
    pub fn message_input(&self, record: &CommitRecord) -> Result<SegmentedSequence, SequenceError> {
        let mut pieces = vec![Piece::special(SpecialToken::Cls, SegmentId::Ctx)];
        message_pieces(record, &mut pieces);
        self.encode_pieces(&pieces)
    }

    /// `[CLS] M [EOS]`, all in the message segment.
    pub fn message_target(&self, record: &CommitRecord) -> Result<SegmentedSequence, SequenceError> {
        self.encode_pieces(&[
            Piece::special(SpecialToken::Cls, SegmentId::Msg),
            Piece::text(record.message.clone(), SegmentId::Msg),
            Piece::special(SpecialToken::Eos, SegmentId::Msg),
        ])
    }

    /// Code-to-message pair: `[CLS][FILE]F[CODE]C` → `[CLS] M [EOS]`.
    pub fn pl2nl_pair(&self, record: &CommitRecord) -> Result<(SegmentedSequence, SegmentedSequence), SequenceError> {
        Ok((self.code_input(record)?, self.message_target(record)?))
    }

    /// Message plus pre-change code to updated code:
    /// `[CLS][MSG]M[FILE]F[CODE]C⁻` → `[CLS] C⁺ [EOS]`.
    pub fn plnl2pl_pair(
        &self,
        record: &CommitRecord,
    ) -> Result<(SegmentedSequence, SegmentedSequence), SequenceError> {
        if !record.has_change() {
            return Err(SequenceError::NoChange);
        }
        let mut input = vec![Piece::special(SpecialToken::Cls, SegmentId::Ctx)];
        message_pieces(record, &mut input);
        file_blocks(record, CodeView::Before, &mut input);

        let mut target = vec![Piece::special(SpecialToken::Cls, SegmentId::Ctx)];
        for file in &record.files {
            code_pieces(file, CodeView::After, &mut target);
        }
        target.push(Piece::special(SpecialToken::Eos, SegmentId::Ctx));
        Ok((self.encode_pieces(&input)?, self.encode_pieces(&target)?))
    }

    /// Input of the updated-code task without its target: `C⁻` view.
    pub fn pre_change_input(&self, record: &CommitRecord) -> Result<SegmentedSequence, SequenceError> {
        let mut input = vec![Piece::special(SpecialToken::Cls, SegmentId::Ctx)];
        message_pieces(record, &mut input);
        file_blocks(record, CodeView::Before, &mut input);
        self.encode_pieces(&input)
    }
}

/// A code span recovered from a sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSpan {
    pub kind: LineKind,
    pub lines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedFile {
    /// `None` for code that was not introduced by `[FILE]` (decoder targets).
    pub path: Option<String>,
    pub spans: Vec<CodeSpan>,
}

impl ParsedFile {
    pub fn lines(&self) -> impl Iterator<Item = (LineKind, &str)> {
        self.spans
            .iter()
            .flat_map(|s| s.lines.iter().map(move |l| (s.kind, l.as_str())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedSequence {
    pub message: Option<String>,
    pub files: Vec<ParsedFile>,
    pub truncated: bool,
}

#[derive(PartialEq, Clone, Copy)]
enum Region {
    None,
    Message,
    Path,
    Code,
}

struct SequenceParser<'a> {
    out: ParsedSequence,
    region: Region,
    span: Option<LineKind>,
    buf: Vec<u8>,
    vocab: &'a Vocabulary,
}

impl SequenceParser<'_> {
    fn text(&mut self) -> Result<String, SequenceError> {
        let bytes = std::mem::take(&mut self.buf);
        String::from_utf8(bytes).map_err(|_| SequenceError::MalformedSequence("invalid UTF-8 in text".into()))
    }

    fn flush(&mut self) -> Result<(), SequenceError> {
        if self.buf.is_empty() {
            return Ok(());
        }
        let text = self.text()?;
        match self.region {
            Region::Message => self.out.message = Some(text),
            Region::Path => self.out.files.last_mut().expect("file").path = Some(text),
            Region::Code => {
                let Some(body) = text.strip_suffix('\n') else {
                    return Err(SequenceError::MalformedSequence("unterminated code line".into()));
                };
                let lines: Vec<String> = body.split('\n').map(str::to_string).collect();
                let kind = self.span.unwrap_or(LineKind::Context);
                let file = self.out.files.last_mut().expect("file");
                match file.spans.last_mut() {
                    Some(last) if last.kind == LineKind::Context && kind == LineKind::Context => last.lines.extend(lines),
                    _ => file.spans.push(CodeSpan { kind, lines }),
                }
            }
            Region::None => unreachable!("text outside any region"),
        }
        Ok(())
    }

    fn token(&mut self, id: u32) -> Result<(), SequenceError> {
        let bad = |m: &str| Err(SequenceError::MalformedSequence(m.to_string()));
        match SpecialToken::from_id(id) {
            Some(SpecialToken::Msg) => {
                self.flush()?;
                if self.out.message.is_some() || self.region != Region::None {
                    return bad("[MSG] must come first");
                }
                self.region = Region::Message;
                self.out.message = Some(String::new());
            }
            Some(SpecialToken::File) => {
                self.flush()?;
                if self.span.is_some() {
                    return bad("[FILE] inside a span");
                }
                self.out.files.push(ParsedFile {
                    path: Some(String::new()),
                    spans: Vec::new(),
                });
                self.region = Region::Path;
            }
            Some(SpecialToken::Code) => {
                self.flush()?;
                if self.region != Region::Path {
                    return bad("[CODE] without [FILE]");
                }
                self.region = Region::Code;
            }
            Some(open @ (SpecialToken::Neg | SpecialToken::Pos)) => {
                self.flush()?;
                self.enter_code();
                if self.span.is_some() {
                    return bad("nested span");
                }
                self.span = Some(if open == SpecialToken::Neg {
                    LineKind::Deleted
                } else {
                    LineKind::Added
                });
            }
            Some(SpecialToken::End) => {
                self.flush()?;
                if self.span.take().is_none() {
                    return bad("[END] without an open span");
                }
            }
            Some(SpecialToken::Cls) => return bad("[CLS] after the start"),
            Some(other) => return bad(&format!("unexpected {}", other.as_str())),
            None if Vocabulary::is_reserved(id) => return bad("reserved word inside a commit sequence"),
            None => {
                if self.region == Region::None {
                    self.enter_code();
                }
                self.buf.extend_from_slice(self.vocab.token_bytes(id));
            }
        }
        Ok(())
    }

    fn enter_code(&mut self) {
        if self.region == Region::None || self.region == Region::Message {
            self.out.files.push(ParsedFile::default());
            self.region = Region::Code;
        }
    }
}

/// Inverse of the builders: recovers the message, paths and code spans.
pub fn parse_sequence(seq: &SegmentedSequence, vocab: &Vocabulary) -> Result<ParsedSequence, SequenceError> {
    let ids = &seq.token_ids;
    if ids.first() != Some(&SpecialToken::Cls.id()) {
        return Err(SequenceError::MalformedSequence("missing leading [CLS]".into()));
    }
    let mut body = &ids[1..];
    if let Some((&last, rest)) = body.split_last() {
        if last == SpecialToken::Eos.id() {
            body = rest;
        }
    }
    let mut p = SequenceParser {
        out: ParsedSequence {
            truncated: seq.truncated,
            ..ParsedSequence::default()
        },
        region: Region::None,
        span: None,
        buf: Vec::new(),
        vocab,
    };
    for &id in body {
        if id == SpecialToken::Eos.id() {
            return Err(SequenceError::MalformedSequence("[EOS] before the end".into()));
        }
        p.token(id)?;
    }
    p.flush()?;
    if p.span.is_some() {
        return Err(SequenceError::MalformedSequence("span without [END]".into()));
    }
    Ok(p.out)
}

/// Structural invariants of a built sequence: leading `[CLS]`, identifier
/// spans carry their segment, and `[NEG]`/`[POS]` balance with `[END]`.
pub fn check_invariants(seq: &SegmentedSequence) -> Result<(), String> {
    if seq.token_ids.len() != seq.segment_ids.len() {
        return Err("token and segment lengths differ".into());
    }
    if seq.token_ids.first() != Some(&SpecialToken::Cls.id()) {
        return Err("missing leading [CLS]".into());
    }
    let mut open: Option<SegmentId> = None;
    let (mut neg, mut pos, mut end_neg, mut end_pos) = (0, 0, 0, 0);
    for (&id, &seg) in seq.token_ids.iter().zip(&seq.segment_ids) {
        match SpecialToken::from_id(id) {
            Some(SpecialToken::Neg) | Some(SpecialToken::Pos) => {
                let want = if id == SpecialToken::Neg.id() { SegmentId::Neg } else { SegmentId::Pos };
                if seg != want || open.is_some() {
                    return Err(format!("bad span opener at segment {seg:?}"));
                }
                if want == SegmentId::Neg {
                    neg += 1;
                } else {
                    pos += 1;
                }
                open = Some(want);
            }
            Some(SpecialToken::End) => {
                if open != Some(seg) {
                    return Err("[END] segment does not match its span".into());
                }
                if seg == SegmentId::Neg {
                    end_neg += 1;
                } else {
                    end_pos += 1;
                }
                open = None;
            }
            _ => {
                if let Some(s) = open {
                    if seg != s {
                        return Err("token inside a span carries another segment".into());
                    }
                }
            }
        }
    }
    if open.is_some() || neg != end_neg || pos != end_pos {
        return Err("unbalanced identifiers".into());
    }
    Ok(())
}

/// Assigns segment ids to a token stream the way the builders do. Used
/// when generating, where only token ids are produced.
#[derive(Debug, Clone, Copy)]
pub struct SegmentTracker {
    region: SegmentId,
    span: Option<SegmentId>,
}

impl SegmentTracker {
    /// `base` is the segment of the leading `[CLS]`.
    pub fn new(base: SegmentId) -> Self {
        Self { region: base, span: None }
    }

    pub fn next(&mut self, id: u32) -> SegmentId {
        match SpecialToken::from_id(id) {
            Some(SpecialToken::Msg) => self.region = SegmentId::Msg,
            Some(SpecialToken::File) => self.region = SegmentId::File,
            Some(SpecialToken::Code) => self.region = SegmentId::Ctx,
            Some(SpecialToken::Neg) => self.span = Some(SegmentId::Neg),
            Some(SpecialToken::Pos) => self.span = Some(SegmentId::Pos),
            Some(SpecialToken::End) => return self.span.take().unwrap_or(self.region),
            _ => {}
        }
        self.span.unwrap_or(self.region)
    }

    /// Segments for a whole id sequence starting from `base`.
    pub fn assign(base: SegmentId, ids: &[u32]) -> Vec<SegmentId> {
        let mut t = Self::new(base);
        ids.iter().map(|&id| t.next(id)).collect()
    }
}

/// Texts a vocabulary should be trained on: messages, paths and line texts.
pub fn training_texts(records: &[CommitRecord]) -> Vec<String> {
    let mut out = Vec::new();
    for r in records {
        out.push(r.message.clone());
        for f in &r.files {
            out.push(f.path.clone());
            for l in f.lines() {
                out.push(format!("{}\n", l.text));
            }
        }
    }
    out
}
