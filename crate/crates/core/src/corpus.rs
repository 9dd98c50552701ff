//! Corpus ingestion: filtering, strict de-duplication, JSONL shards per
//! language, statistics, and temperature-scaled language sampling.

use crate::commit::{extract_first_sentence, is_english, CommitRecord, LineKind};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Language labels of the commit benchmark.
pub const LANGUAGES: [&str; 7] = ["c", "csharp", "java", "javascript", "php", "python", "typescript"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("all language counts are zero")]
    EmptyCorpus,
    #[error("alpha must be positive, got {0}")]
    BadAlpha(f64),
    #[error("storage failure after {} accepted records: {source}", report.accepted)]
    Io {
        report: IngestReport,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {source}")]
    BadShard {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Read(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub max_tokens: usize,
    pub english_required: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            max_tokens: 2000,
            english_required: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    EmptyMessage,
    NonEnglish,
    TooLong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

/// Whitespace tokens in the message plus every hunk line.
pub fn whitespace_tokens(record: &CommitRecord) -> usize {
    record.message.split_whitespace().count()
        + record.lines().map(|l| l.text.split_whitespace().count()).sum::<usize>()
}

pub fn filter_record(record: &CommitRecord, cfg: &FilterConfig) -> Verdict {
    let message = extract_first_sentence(&record.message);
    if message.is_empty() {
        return Verdict::Reject(RejectReason::EmptyMessage);
    }
    if cfg.english_required && !is_english(&message) {
        return Verdict::Reject(RejectReason::NonEnglish);
    }
    if whitespace_tokens(record) > cfg.max_tokens {
        return Verdict::Reject(RejectReason::TooLong);
    }
    Verdict::Accept
}

/// SHA-256 over the normalized message and the changed (non-context) lines
/// of every file, trailing whitespace stripped. Context lines do not
/// participate.
pub fn dedup_key(record: &CommitRecord) -> String {
    let mut h = Sha256::new();
    h.update(extract_first_sentence(&record.message).as_bytes());
    h.update(b"\n");
    for file in &record.files {
        h.update(file.path.as_bytes());
        h.update(b"\n");
        let changed: Vec<String> = file
            .lines()
            .filter(|l| l.kind.is_change())
            .map(|l| {
                let marker = if l.kind == LineKind::Added { '+' } else { '-' };
                format!("{marker}{}", l.text.trim_end())
            })
            .collect();
        h.update(changed.join("\n").as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: u64,
    pub rejected_by_reason: BTreeMap<RejectReason, u64>,
    pub duplicates: u64,
    pub accepted_by_language: BTreeMap<String, u64>,
}

impl IngestReport {
    pub fn total_seen(&self) -> u64 {
        self.accepted + self.rejected_by_reason.values().sum::<u64>() + self.duplicates
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Accepted(CommitRecord),
    Rejected(RejectReason),
    Duplicate,
}

/// First-occurrence-wins ingestion state.
#[derive(Debug, Default)]
pub struct Ingestor {
    cfg: FilterConfig,
    seen: HashSet<String>,
    report: IngestReport,
}

impl Ingestor {
    pub fn new(cfg: FilterConfig) -> Self {
        Self {
            cfg,
            seen: HashSet::new(),
            report: IngestReport::default(),
        }
    }

    /// Registers keys of records already in the corpus so that re-ingesting
    /// them counts as duplicates.
    pub fn preload<'a>(&mut self, existing: impl IntoIterator<Item = &'a CommitRecord>) {
        for r in existing {
            self.seen.insert(dedup_key(r));
        }
    }

    pub fn push(&mut self, mut record: CommitRecord) -> Outcome {
        if let Verdict::Reject(reason) = filter_record(&record, &self.cfg) {
            *self.report.rejected_by_reason.entry(reason).or_default() += 1;
            return Outcome::Rejected(reason);
        }
        record.message = extract_first_sentence(&record.message);
        if !self.seen.insert(dedup_key(&record)) {
            self.report.duplicates += 1;
            return Outcome::Duplicate;
        }
        self.report.accepted += 1;
        *self.report.accepted_by_language.entry(record.language.clone()).or_default() += 1;
        Outcome::Accepted(record)
    }

    pub fn report(&self) -> &IngestReport {
        &self.report
    }

    pub fn into_report(self) -> IngestReport {
        self.report
    }
}

/// In-memory ingestion: accepted records grouped by language.
pub fn ingest(
    records: impl IntoIterator<Item = CommitRecord>,
    cfg: &FilterConfig,
) -> (BTreeMap<String, Vec<CommitRecord>>, IngestReport) {
    let mut ing = Ingestor::new(*cfg);
    let mut shards: BTreeMap<String, Vec<CommitRecord>> = BTreeMap::new();
    for r in records {
        if let Outcome::Accepted(r) = ing.push(r) {
            shards.entry(r.language.clone()).or_default().push(r);
        }
    }
    (shards, ing.into_report())
}

/// A directory of `<language>.jsonl` shards.
#[derive(Debug, Clone)]
pub struct CorpusDir {
    root: PathBuf,
}

impl CorpusDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn shard_path(&self, language: &str) -> PathBuf {
        self.root.join(format!("{language}.jsonl"))
    }

    /// Shard languages present on disk, sorted.
    pub fn languages(&self) -> Result<Vec<String>, CorpusError> {
        if !self.root.exists() {
            return Ok(Vec::new());
        }
        let mut langs = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    langs.push(stem.to_string());
                }
            }
        }
        langs.sort();
        Ok(langs)
    }

    pub fn read_shard(&self, language: &str) -> Result<Vec<CommitRecord>, CorpusError> {
        read_jsonl(&self.shard_path(language))
    }

    /// All records, language by language in sorted order.
    pub fn read_all(&self) -> Result<BTreeMap<String, Vec<CommitRecord>>, CorpusError> {
        let mut out = BTreeMap::new();
        for lang in self.languages()? {
            out.insert(lang.clone(), self.read_shard(&lang)?);
        }
        Ok(out)
    }

    /// Streams `records` through filtering and de-duplication, appending
    /// accepted ones to their language shard. Records already on disk count
    /// as seen.
    pub fn ingest(
        &self,
        records: impl IntoIterator<Item = CommitRecord>,
        cfg: &FilterConfig,
    ) -> Result<IngestReport, CorpusError> {
        let mut ing = Ingestor::new(*cfg);
        for shard in self.read_all()?.values() {
            ing.preload(shard);
        }
        let mut writers: BTreeMap<String, BufWriter<File>> = BTreeMap::new();
        let result = (|| -> io::Result<()> {
            fs::create_dir_all(&self.root)?;
            for r in records {
                if let Outcome::Accepted(r) = ing.push(r) {
                    let w = match writers.get_mut(&r.language) {
                        Some(w) => w,
                        None => {
                            let f = OpenOptions::new()
                                .create(true)
                                .append(true)
                                .open(self.shard_path(&r.language))?;
                            writers.entry(r.language.clone()).or_insert(BufWriter::new(f))
                        }
                    };
                    serde_json::to_writer(&mut *w, &r)?;
                    w.write_all(b"\n")?;
                }
            }
            for w in writers.values_mut() {
                w.flush()?;
            }
            Ok(())
        })();
        match result {
            Ok(()) => Ok(ing.into_report()),
            Err(source) => Err(CorpusError::Io {
                report: ing.into_report(),
                source,
            }),
        }
    }
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| CorpusError::BadShard {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageStats {
    pub counts: BTreeMap<String, u64>,
    pub alpha: f64,
}

impl LanguageStats {
    pub fn new(counts: BTreeMap<String, u64>) -> Self {
        Self { counts, alpha: 0.7 }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

/// `q_i = p_i^α / Σ_j p_j^α` with `p_i = n_i / Σ_k n_k`. Zero-count
/// languages are left out of the result. At `α = 1` the shares `p` are
/// returned as computed, without renormalization.
pub fn language_distribution(stats: &LanguageStats) -> Result<BTreeMap<String, f64>, CorpusError> {
    if stats.alpha.is_nan() || stats.alpha <= 0.0 {
        return Err(CorpusError::BadAlpha(stats.alpha));
    }
    let total: u64 = stats.counts.values().sum();
    if total == 0 {
        return Err(CorpusError::EmptyCorpus);
    }
    let total = total as f64;
    let scaled: Vec<(&String, f64)> = stats
        .counts
        .iter()
        .filter(|(_, &n)| n > 0)
        .map(|(lang, &n)| (lang, (n as f64 / total).powf(stats.alpha)))
        .collect();
    if stats.alpha == 1.0 {
        return Ok(scaled.into_iter().map(|(l, s)| (l.clone(), s)).collect());
    }
    let z: f64 = scaled.iter().map(|(_, s)| s).sum();
    Ok(scaled.into_iter().map(|(l, s)| (l.clone(), s / z)).collect())
}

/// Draws one language by inverse CDF over the map's sorted order.
pub fn sample_language<R: Rng + ?Sized>(dist: &BTreeMap<String, f64>, rng: &mut R) -> String {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for (lang, &q) in dist {
        if q <= 0.0 {
            continue;
        }
        acc += q;
        last = Some(lang);
        if u < acc {
            return lang.clone();
        }
    }
    last.expect("distribution has no positive mass").clone()
}

/// Counts in `floor(log2(n + 1))` buckets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Log2Histogram {
    pub buckets: Vec<u64>,
}

impl Log2Histogram {
    pub fn add(&mut self, n: usize) {
        let b = (usize::BITS - (n + 1).leading_zeros() - 1) as usize;
        if self.buckets.len() <= b {
            self.buckets.resize(b + 1, 0);
        }
        self.buckets[b] += 1;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageHistograms {
    pub tokens: Log2Histogram,
    pub lines: Log2Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub stats: LanguageStats,
    pub histograms: BTreeMap<String, LanguageHistograms>,
}

pub fn corpus_stats(shards: &BTreeMap<String, Vec<CommitRecord>>) -> CorpusStats {
    let mut counts = BTreeMap::new();
    let mut histograms = BTreeMap::new();
    for (lang, records) in shards {
        counts.insert(lang.clone(), records.len() as u64);
        let h: &mut LanguageHistograms = histograms.entry(lang.clone()).or_default();
        for r in records {
            h.tokens.add(whitespace_tokens(r));
            h.lines.add(r.lines().count());
        }
    }
    CorpusStats {
        stats: LanguageStats::new(counts),
        histograms,
    }
}
