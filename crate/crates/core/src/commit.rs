//! Structured commits and the parsers that build them from raw git text.
//!
//! A [`CommitRecord`] holds the first sentence of the commit message and one
//! [`FileDiff`] per changed file. Each file carries its hunks, and each hunk
//! its lines tagged as context, deleted (`-`) or added (`+`).

use serde::{Deserialize, Serialize};
use std::fmt::{self, Write as _};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CommitError {
    #[error("malformed hunk header: {0:?}")]
    MalformedHeader(String),
    #[error("malformed diff at byte {offset}: {reason}")]
    MalformedDiff { offset: usize, reason: String },
    #[error("malformed commit: {0}")]
    MalformedCommit(String),
}

/// Role of a line inside a hunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LineKind {
    #[serde(rename = "c")]
    Context,
    #[serde(rename = "d")]
    Deleted,
    #[serde(rename = "a")]
    Added,
}

impl LineKind {
    pub fn marker(self) -> char {
        match self {
            LineKind::Context => ' ',
            LineKind::Deleted => '-',
            LineKind::Added => '+',
        }
    }

    pub fn is_change(self) -> bool {
        !matches!(self, LineKind::Context)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangedLine {
    #[serde(rename = "k")]
    pub kind: LineKind,
    /// Line content without the marker character or newline.
    #[serde(rename = "t")]
    pub text: String,
}

impl ChangedLine {
    pub fn new(kind: LineKind, text: impl Into<String>) -> Self {
        Self { kind, text: text.into() }
    }
}

/// The numeric part of an `@@ -a,b +c,d @@ ctx` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HunkHeader {
    pub old_start: u32,
    pub old_count: u32,
    pub new_start: u32,
    pub new_count: u32,
    pub header_context: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub old_start: u32,
    pub old_count: u32,
    pub new_start: u32,
    pub new_count: u32,
    #[serde(rename = "header")]
    pub header_context: String,
    pub lines: Vec<ChangedLine>,
}

impl Hunk {
    /// Builds a hunk whose counts are derived from its lines.
    pub fn from_lines(old_start: u32, new_start: u32, header_context: &str, lines: Vec<ChangedLine>) -> Self {
        let old_count = lines.iter().filter(|l| l.kind != LineKind::Added).count() as u32;
        let new_count = lines.iter().filter(|l| l.kind != LineKind::Deleted).count() as u32;
        Self {
            old_start,
            old_count,
            new_start,
            new_count,
            header_context: header_context.to_string(),
            lines,
        }
    }

    /// Checks the count invariant against the line kinds.
    pub fn counts_consistent(&self) -> bool {
        let old = self.lines.iter().filter(|l| l.kind != LineKind::Added).count();
        let new = self.lines.iter().filter(|l| l.kind != LineKind::Deleted).count();
        old == self.old_count as usize && new == self.new_count as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDiff {
    pub path: String,
    pub hunks: Vec<Hunk>,
}

impl FileDiff {
    pub fn lines(&self) -> impl Iterator<Item = &ChangedLine> {
        self.hunks.iter().flat_map(|h| h.lines.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub repo: String,
    pub commit_id: String,
    pub language: String,
    pub message: String,
    pub files: Vec<FileDiff>,
}

impl CommitRecord {
    pub fn lines(&self) -> impl Iterator<Item = &ChangedLine> {
        self.files.iter().flat_map(|f| f.lines())
    }

    pub fn has_change(&self) -> bool {
        self.lines().any(|l| l.kind.is_change())
    }

    /// Checks the structural invariants: non-empty message and files,
    /// non-empty paths, ordered hunks with consistent counts and no newlines
    /// inside line texts.
    pub fn validate(&self) -> Result<(), CommitError> {
        if self.message.trim().is_empty() {
            return Err(CommitError::MalformedCommit("empty message".into()));
        }
        if self.files.is_empty() {
            return Err(CommitError::MalformedCommit("no files".into()));
        }
        for file in &self.files {
            if file.path.is_empty() {
                return Err(CommitError::MalformedCommit("empty path".into()));
            }
            if file.hunks.windows(2).any(|w| w[0].old_start > w[1].old_start) {
                return Err(CommitError::MalformedCommit(format!("hunks out of order in {}", file.path)));
            }
            for hunk in &file.hunks {
                if !hunk.counts_consistent() {
                    return Err(CommitError::MalformedCommit(format!(
                        "hunk counts disagree with lines in {}",
                        file.path
                    )));
                }
                if hunk.lines.iter().any(|l| l.text.contains('\n')) {
                    return Err(CommitError::MalformedCommit("newline inside line text".into()));
                }
            }
        }
        Ok(())
    }
}

/// Parses `@@ -a[,b] +c[,d] @@[ context]`. Omitted counts default to 1.
pub fn parse_hunk_header(line: &str) -> Result<HunkHeader, CommitError> {
    let bad = || CommitError::MalformedHeader(line.to_string());
    let rest = line.strip_prefix("@@ -").ok_or_else(bad)?;
    let close = rest.find(" @@").ok_or_else(bad)?;
    let ranges = &rest[..close];
    let tail = &rest[close + 3..];
    let header_context = tail.strip_prefix(' ').unwrap_or(tail).to_string();

    let (old, new) = ranges.split_once(" +").ok_or_else(bad)?;
    let (old_start, old_count) = parse_range(old).ok_or_else(bad)?;
    let (new_start, new_count) = parse_range(new).ok_or_else(bad)?;
    Ok(HunkHeader {
        old_start,
        old_count,
        new_start,
        new_count,
        header_context,
    })
}

fn parse_range(s: &str) -> Option<(u32, u32)> {
    let digits = |t: &str| -> Option<u32> {
        if t.is_empty() || !t.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        t.parse().ok()
    };
    match s.split_once(',') {
        Some((start, count)) => Some((digits(start)?, digits(count)?)),
        None => Some((digits(s)?, 1)),
    }
}

struct OpenHunk {
    hunk: Hunk,
    old_left: u32,
    new_left: u32,
}

/// Parses the diff section of a commit into one [`FileDiff`] per file.
///
/// Binary and mode-only changes carry no hunks and are dropped with a
/// warning. `\ No newline at end of file` markers are ignored.
pub fn parse_unified_diff(text: &str) -> Result<Vec<FileDiff>, CommitError> {
    let mut files: Vec<FileDiff> = Vec::new();
    let mut current: Option<FileDiff> = None;
    let mut old_path: Option<String> = None;
    let mut open: Option<OpenHunk> = None;
    let mut offset = 0usize;

    for raw in text.split_inclusive('\n') {
        let line_offset = offset;
        offset += raw.len();
        let line = raw.strip_suffix('\n').unwrap_or(raw);

        if let Some(o) = open.as_mut() {
            if line.starts_with('\\') {
                continue;
            }
            let (kind, body) = match line.chars().next() {
                Some(' ') => (LineKind::Context, &line[1..]),
                Some('-') => (LineKind::Deleted, &line[1..]),
                Some('+') => (LineKind::Added, &line[1..]),
                // Some tools strip the lone space of empty context lines.
                None => (LineKind::Context, ""),
                Some(_) => {
                    return Err(CommitError::MalformedDiff {
                        offset: line_offset,
                        reason: format!("unexpected line inside hunk: {line:?}"),
                    })
                }
            };
            let needs_old = kind != LineKind::Added;
            let needs_new = kind != LineKind::Deleted;
            if (needs_old && o.old_left == 0) || (needs_new && o.new_left == 0) {
                return Err(CommitError::MalformedDiff {
                    offset: line_offset,
                    reason: "hunk longer than its header counts".into(),
                });
            }
            if needs_old {
                o.old_left -= 1;
            }
            if needs_new {
                o.new_left -= 1;
            }
            o.hunk.lines.push(ChangedLine::new(kind, body));
            if o.old_left == 0 && o.new_left == 0 {
                let done = open.take().expect("open hunk");
                current
                    .as_mut()
                    .expect("hunk without file")
                    .hunks
                    .push(done.hunk);
            }
            continue;
        }

        if line.is_empty() || line.starts_with('\\') {
            continue;
        }
        if line.starts_with("diff --git ") {
            flush_file(&mut files, current.take());
            old_path = None;
        } else if let Some(p) = line.strip_prefix("--- ") {
            flush_file(&mut files, current.take());
            old_path = Some(strip_diff_prefix(p, "a/"));
        } else if let Some(p) = line.strip_prefix("+++ ") {
            let new_path = strip_diff_prefix(p, "b/");
            let path = if new_path == "/dev/null" {
                old_path.clone().unwrap_or_default()
            } else {
                new_path
            };
            if path.is_empty() || path == "/dev/null" {
                return Err(CommitError::MalformedDiff {
                    offset: line_offset,
                    reason: "file header without a path".into(),
                });
            }
            current = Some(FileDiff { path, hunks: Vec::new() });
        } else if line.starts_with("@@") {
            let header = parse_hunk_header(line)?;
            if current.is_none() {
                return Err(CommitError::MalformedDiff {
                    offset: line_offset,
                    reason: "hunk before any file header".into(),
                });
            }
            let hunk = Hunk {
                old_start: header.old_start,
                old_count: header.old_count,
                new_start: header.new_start,
                new_count: header.new_count,
                header_context: header.header_context,
                lines: Vec::new(),
            };
            if header.old_count == 0 && header.new_count == 0 {
                current.as_mut().expect("file").hunks.push(hunk);
            } else {
                open = Some(OpenHunk {
                    hunk,
                    old_left: header.old_count,
                    new_left: header.new_count,
                });
            }
        } else if line.starts_with("Binary files ") || line.starts_with("GIT binary patch") {
            log::warn!("skipping binary diff: {line}");
        } else if is_extended_header(line) {
            if line.contains("mode ") {
                log::warn!("skipping mode change: {line}");
            }
        } else {
            return Err(CommitError::MalformedDiff {
                offset: line_offset,
                reason: format!("expected file or hunk header, found {line:?}"),
            });
        }
    }

    if open.is_some() {
        return Err(CommitError::MalformedDiff {
            offset: text.len(),
            reason: "diff ends inside a hunk".into(),
        });
    }
    flush_file(&mut files, current.take());
    Ok(files)
}

fn flush_file(files: &mut Vec<FileDiff>, file: Option<FileDiff>) {
    if let Some(f) = file {
        if f.hunks.is_empty() {
            log::warn!("dropping {} with no textual hunks", f.path);
        } else {
            files.push(f);
        }
    }
}

fn strip_diff_prefix(p: &str, prefix: &str) -> String {
    // git appends a tab and timestamp in some modes
    let p = p.split('\t').next().unwrap_or(p);
    p.strip_prefix(prefix).unwrap_or(p).to_string()
}

fn is_extended_header(line: &str) -> bool {
    const PREFIXES: &[&str] = &[
        "index ",
        "old mode ",
        "new mode ",
        "deleted file mode ",
        "new file mode ",
        "similarity index ",
        "dissimilarity index ",
        "rename from ",
        "rename to ",
        "copy from ",
        "copy to ",
    ];
    PREFIXES.iter().any(|p| line.starts_with(p))
}

/// Renders files back to unified-diff text that [`parse_unified_diff`]
/// accepts.
pub fn render_unified_diff(files: &[FileDiff]) -> String {
    let mut out = String::new();
    for file in files {
        let _ = writeln!(out, "diff --git a/{0} b/{0}", file.path);
        let _ = writeln!(out, "--- a/{}", file.path);
        let _ = writeln!(out, "+++ b/{}", file.path);
        for hunk in &file.hunks {
            let _ = write!(
                out,
                "@@ -{},{} +{},{} @@",
                hunk.old_start, hunk.old_count, hunk.new_start, hunk.new_count
            );
            if !hunk.header_context.is_empty() {
                out.push(' ');
                out.push_str(&hunk.header_context);
            }
            out.push('\n');
            for line in &hunk.lines {
                out.push(line.kind.marker());
                out.push_str(&line.text);
                out.push('\n');
            }
        }
    }
    out
}

/// Renders a record as a `git show`-style dump.
pub fn render_git_show(record: &CommitRecord) -> String {
    let mut out = format!("commit {}\n\n", record.commit_id);
    for line in record.message.lines() {
        out.push_str("    ");
        out.push_str(line);
        out.push('\n');
    }
    out.push('\n');
    out.push_str(&render_unified_diff(&record.files));
    out
}

/// Parses one `git show`-style dump. The message is returned raw; callers
/// normalize it with [`extract_first_sentence`]. Repo and language are left
/// empty.
pub fn parse_git_show(text: &str) -> Result<CommitRecord, CommitError> {
    let mut lines = text.lines().peekable();
    while lines.peek().is_some_and(|l| l.trim().is_empty()) {
        lines.next();
    }
    let header = lines
        .next()
        .ok_or_else(|| CommitError::MalformedCommit("empty input".into()))?;
    let commit_id = header
        .strip_prefix("commit ")
        .and_then(|rest| rest.split_whitespace().next())
        .ok_or_else(|| CommitError::MalformedCommit(format!("missing commit header, found {header:?}")))?
        .to_string();

    // Header fields (Author:, Date:, Merge:) run up to the first blank line.
    let all: Vec<&str> = lines.collect();
    let is_diff_start = |l: &str| l.starts_with("diff --git ") || l.starts_with("--- ");
    let mut i = 0;
    while i < all.len() && !all[i].trim().is_empty() && !all[i].starts_with(' ') && !is_diff_start(all[i]) {
        i += 1;
    }
    let diff_start = all[i..].iter().position(|l| is_diff_start(l)).map(|p| p + i);
    let body = &all[i..diff_start.unwrap_or(all.len())];

    let message = body
        .iter()
        .map(|l| l.strip_prefix("    ").unwrap_or(l))
        .collect::<Vec<_>>()
        .join("\n")
        .trim_matches('\n')
        .trim_end()
        .to_string();

    let diff_start = diff_start.ok_or_else(|| CommitError::MalformedCommit("missing diff section".into()))?;
    let mut diff_text = all[diff_start..].join("\n");
    diff_text.push('\n');
    let files = parse_unified_diff(&diff_text)?;
    if files.is_empty() {
        return Err(CommitError::MalformedCommit("diff section has no hunks".into()));
    }
    Ok(CommitRecord {
        repo: String::new(),
        commit_id,
        language: String::new(),
        message,
        files,
    })
}

/// Splits a `git log -p` style stream into per-commit blocks at lines that
/// start with `commit `.
pub fn split_git_log(text: &str) -> Vec<&str> {
    let mut starts = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.starts_with("commit ") {
            starts.push(offset);
        }
        offset += line.len();
    }
    let mut blocks = Vec::with_capacity(starts.len());
    for (i, &s) in starts.iter().enumerate() {
        let e = starts.get(i + 1).copied().unwrap_or(text.len());
        blocks.push(&text[s..e]);
    }
    blocks
}

/// First sentence of a commit message: up to the first newline or the first
/// `.`, `!`, `?` that is followed by whitespace or the end, whichever comes
/// first.
pub fn extract_first_sentence(message: &str) -> String {
    let trimmed = message.trim();
    let line = trimmed.split('\n').next().unwrap_or("");
    let mut chars = line.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let at_boundary = match chars.peek() {
                None => true,
                Some(&(_, next)) => next.is_whitespace(),
            };
            if at_boundary {
                return line[..i + c.len_utf8()].trim().to_string();
            }
        }
    }
    line.trim().to_string()
}

/// At least one letter, and at least 90% of letters in `A-Z`/`a-z`.
pub fn is_english(message: &str) -> bool {
    let mut letters = 0usize;
    let mut latin = 0usize;
    for c in message.chars().filter(|c| c.is_alphabetic()) {
        letters += 1;
        if c.is_ascii_alphabetic() {
            latin += 1;
        }
    }
    letters > 0 && latin * 10 >= letters * 9
}

/// True for a single-file, single-hunk commit whose added lines form one
/// contiguous run and whose deleted lines form one contiguous run.
pub fn is_consecutive_modification(record: &CommitRecord) -> bool {
    let [file] = record.files.as_slice() else {
        return false;
    };
    let [hunk] = file.hunks.as_slice() else {
        return false;
    };
    let runs = |kind: LineKind| {
        let mut runs = 0;
        let mut prev = false;
        for line in &hunk.lines {
            let hit = line.kind == kind;
            if hit && !prev {
                runs += 1;
            }
            prev = hit;
        }
        runs
    };
    let added = runs(LineKind::Added);
    let deleted = runs(LineKind::Deleted);
    added <= 1 && deleted <= 1 && added + deleted > 0
}

impl fmt::Display for CommitRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_git_show(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hunk_text(ctx_before: usize, ctx_after: usize) -> String {
        let mut s = String::from("--- a/src/x.py\n+++ b/src/x.py\n");
        let old = ctx_before + ctx_after + 1;
        let _ = writeln!(s, "@@ -10,{old} +10,{old} @@ def f");
        for i in 0..ctx_before {
            let _ = writeln!(s, " before {i}");
        }
        s.push_str("-old line\n+new line\n");
        for i in 0..ctx_after {
            let _ = writeln!(s, " after {i}");
        }
        s
    }

    #[test]
    fn header_from_figure() {
        let h = parse_hunk_header("@@ -1025,7 +1025,7 @@ def _binarizer").unwrap();
        assert_eq!(
            h,
            HunkHeader {
                old_start: 1025,
                old_count: 7,
                new_start: 1025,
                new_count: 7,
                header_context: "def _binarizer".into()
            }
        );
    }

    #[test]
    fn header_default_counts() {
        let h = parse_hunk_header("@@ -1 +1 @@").unwrap();
        assert_eq!((h.old_start, h.old_count, h.new_start, h.new_count), (1, 1, 1, 1));
        assert_eq!(h.header_context, "");
    }

    #[test]
    fn header_pure_addition() {
        let h = parse_hunk_header("@@ -0,0 +1,2 @@").unwrap();
        assert_eq!((h.old_start, h.old_count, h.new_start, h.new_count), (0, 0, 1, 2));
    }

    #[test]
    fn header_rejects_garbage() {
        for bad in ["@@ -a,b +c,d @@", "@@ 1,2 3,4 @@", "@@ -1,2 +3,4", "@@ -1,,2 +3 @@", "@@ -1 +x @@"] {
            assert!(matches!(parse_hunk_header(bad), Err(CommitError::MalformedHeader(_))), "{bad}");
        }
    }

    #[test]
    fn five_context_one_change() {
        let files = parse_unified_diff(&hunk_text(3, 2)).unwrap();
        assert_eq!(files.len(), 1);
        let h = &files[0].hunks[0];
        assert_eq!(h.lines.len(), 7);
        assert_eq!((h.old_count, h.new_count), (6, 6));
        assert!(h.counts_consistent());
        assert_eq!(files[0].path, "src/x.py");
    }

    #[test]
    fn empty_diff() {
        assert!(parse_unified_diff("").unwrap().is_empty());
    }

    #[test]
    fn concatenation_is_additive() {
        let a = hunk_text(1, 1);
        let b = hunk_text(2, 0).replace("src/x.py", "lib/y.py");
        let both = parse_unified_diff(&format!("{a}{b}")).unwrap();
        let mut sep = parse_unified_diff(&a).unwrap();
        sep.extend(parse_unified_diff(&b).unwrap());
        assert_eq!(both, sep);
        assert_eq!(both.len(), 2);
    }

    #[test]
    fn no_newline_marker_dropped() {
        let text = "--- a/f\n+++ b/f\n@@ -1 +1 @@\n-a\n\\ No newline at end of file\n+b\n\\ No newline at end of file\n";
        let files = parse_unified_diff(text).unwrap();
        assert_eq!(files[0].hunks[0].lines.len(), 2);
    }

    #[test]
    fn stray_line_reports_offset() {
        let text = "--- a/f\n+++ b/f\n@@ -1 +1 @@\n-a\n+b\ngarbage\n";
        match parse_unified_diff(text) {
            Err(CommitError::MalformedDiff { offset, .. }) => assert_eq!(offset, text.find("garbage").unwrap()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_hunk_is_error() {
        let text = "--- a/f\n+++ b/f\n@@ -1,3 +1,3 @@\n a\n";
        assert!(matches!(parse_unified_diff(text), Err(CommitError::MalformedDiff { .. })));
    }

    #[test]
    fn binary_and_mode_changes_skipped() {
        let text = "diff --git a/img.png b/img.png\nindex 1..2 100644\nBinary files a/img.png and b/img.png differ\n\
diff --git a/run.sh b/run.sh\nold mode 100644\nnew mode 100755\n\
diff --git a/f b/f\n--- a/f\n+++ b/f\n@@ -1 +1 @@\n-a\n+b\n";
        let files = parse_unified_diff(text).unwrap();
        assert_eq!(files.len(), 1);
        assert_eq!(files[0].path, "f");
    }

    #[test]
    fn new_and_deleted_files_take_real_path() {
        let text = "--- /dev/null\n+++ b/new.txt\n@@ -0,0 +1 @@\n+x\n--- a/gone.txt\n+++ /dev/null\n@@ -1 +0,0 @@\n-y\n";
        let files = parse_unified_diff(text).unwrap();
        assert_eq!(files[0].path, "new.txt");
        assert_eq!(files[1].path, "gone.txt");
    }

    #[test]
    fn git_show_fields() {
        let dump = "commit abc123\nAuthor: A <a@b>\nDate:   Mon Jan 1 00:00:00 2021 +0000\n\n    Fix NPE\n\n    details\n\n\
diff --git a/F.java b/F.java\n--- a/F.java\n+++ b/F.java\n@@ -1 +1 @@\n-a\n+b\n";
        let rec = parse_git_show(dump).unwrap();
        assert_eq!(rec.commit_id, "abc123");
        assert_eq!(rec.message, "Fix NPE\n\ndetails");
        assert_eq!(rec.files.len(), 1);
        assert_eq!(rec.language, "");
    }

    #[test]
    fn git_show_without_diff() {
        let dump = "commit abc123\nAuthor: A <a@b>\n\n    Fix NPE\n";
        assert!(matches!(parse_git_show(dump), Err(CommitError::MalformedCommit(_))));
        assert!(matches!(parse_git_show("hello\n"), Err(CommitError::MalformedCommit(_))));
    }

    #[test]
    fn split_log_blocks() {
        let one = "commit a\n\n    m\n\n--- a/f\n+++ b/f\n@@ -1 +1 @@\n-a\n+b\n";
        let two = one.replace("commit a", "commit b");
        let log = format!("{one}\n{two}");
        let blocks = split_git_log(&log);
        assert_eq!(blocks.len(), 2);
        assert_eq!(parse_git_show(blocks[1]).unwrap().commit_id, "b");
    }

    #[test]
    fn first_sentence_rules() {
        assert_eq!(
            extract_first_sentence("Bugfix: Pass threshold to binarizer"),
            "Bugfix: Pass threshold to binarizer"
        );
        assert_eq!(extract_first_sentence("Fix crash. Also refactor tests."), "Fix crash.");
        assert_eq!(extract_first_sentence("bump v1.2.3 deps\nmore text"), "bump v1.2.3 deps");
        assert_eq!(extract_first_sentence("Really?!  yes"), "Really?!");
        assert_eq!(extract_first_sentence("  \n"), "");
        assert_eq!(extract_first_sentence(""), "");
    }

    #[test]
    fn english_heuristic() {
        assert!(is_english("Fix threshold bug"));
        assert!(!is_english("修复阈值错误并更新测试用例"));
        // 18 of 20 letters are basic Latin: exactly on the 90% line.
        assert!(is_english("Fix naïve café handling"));
        assert!(!is_english("Fix naïve café"));
        assert!(!is_english("1234 !!"));
        assert!(!is_english(""));
    }

    fn single(lines: Vec<ChangedLine>) -> CommitRecord {
        CommitRecord {
            repo: "r".into(),
            commit_id: "c".into(),
            language: "python".into(),
            message: "m".into(),
            files: vec![FileDiff {
                path: "f.py".into(),
                hunks: vec![Hunk::from_lines(1, 1, "", lines)],
            }],
        }
    }

    #[test]
    fn consecutive_rules() {
        use LineKind::*;
        let c = |k, t: &str| ChangedLine::new(k, t);
        let adjacent = single(vec![c(Context, "a"), c(Deleted, "b"), c(Added, "b2"), c(Context, "d")]);
        assert!(is_consecutive_modification(&adjacent));

        let split_removals = single(vec![c(Deleted, "a"), c(Context, "b"), c(Deleted, "c")]);
        assert!(!is_consecutive_modification(&split_removals));

        let context_only = single(vec![c(Context, "a")]);
        assert!(!is_consecutive_modification(&context_only));

        let mut two_files = single(vec![c(Added, "x")]);
        two_files.files.push(FileDiff {
            path: "g.py".into(),
            hunks: vec![Hunk::from_lines(1, 1, "", vec![c(Added, "y")])],
        });
        assert!(!is_consecutive_modification(&two_files));
    }

    #[test]
    fn validate_catches_bad_counts() {
        let mut r = single(vec![ChangedLine::new(LineKind::Added, "x")]);
        assert!(r.validate().is_ok());
        r.files[0].hunks[0].new_count = 5;
        assert!(r.validate().is_err());
    }
}
