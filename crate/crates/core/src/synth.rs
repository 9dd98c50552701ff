//! Synthetic commit generator used by fixtures, smoke runs and tests.
//!
//! Commits are built from small identifier pools so that messages, paths and
//! code share words the way real commits do.

use crate::commit::{ChangedLine, CommitRecord, FileDiff, Hunk, LineKind};
use crate::corpus::LANGUAGES;
use crate::tasks::LabeledCommit;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const IDENTS: &[&str] = &[
    "threshold", "buffer", "config", "parser", "timeout", "session", "cache", "token", "handler", "request",
    "user", "index", "offset", "payload", "logger", "retry", "socket", "schema", "cursor", "widget", "matrix",
    "encoder", "router", "filter", "counter", "locale", "stream", "client", "queue", "format",
];
const VERBS: &[&str] = &["Fix", "Add", "Remove", "Update", "Handle", "Refactor", "Pass", "Check", "Rename", "Guard"];
const SECURITY_VERBS: &[&str] = &["Sanitize", "Escape", "Bound", "Validate", "Authenticate"];
const LINKS: &[&str] = &["in", "for", "to", "when", "inside"];
const FUNCS: &[&str] = &["load", "parse", "render", "flush", "reset", "build", "apply", "fetch", "close", "merge"];
const NON_ENGLISH: &[&str] = &[
    "修复缓存超时问题并更新测试",
    "修正解析器中的偏移错误",
    "キャッシュのタイムアウトを修正する",
    "обновить обработчик запросов сессии",
    "添加重试逻辑到客户端连接",
];

/// Tuning knobs for [`generate`].
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    /// Maximum context lines on each side of a change block.
    pub max_context: usize,
    /// Probability of a second, separated change block inside a hunk.
    pub split_change_prob: f64,
    /// Probability of a second hunk in the same file.
    pub second_hunk_prob: f64,
    /// Probability of a second file.
    pub second_file_prob: f64,
    /// Include odd bytes (tabs, trailing spaces, non-ASCII) in code lines.
    pub exotic_text: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_context: 3,
            split_change_prob: 0.2,
            second_hunk_prob: 0.15,
            second_file_prob: 0.1,
            exotic_text: false,
        }
    }
}

impl SynthConfig {
    /// Short single-hunk commits, used where sequences must stay small.
    pub fn compact(seed: u64) -> Self {
        Self {
            seed,
            max_context: 1,
            split_change_prob: 0.0,
            second_hunk_prob: 0.0,
            second_file_prob: 0.0,
            exotic_text: false,
        }
    }
}

fn ext(language: &str) -> &'static str {
    match language {
        "c" => "c",
        "csharp" => "cs",
        "java" => "java",
        "javascript" => "js",
        "php" => "php",
        "python" => "py",
        _ => "ts",
    }
}

fn code_line(rng: &mut ChaCha8Rng, language: &str, focus: &str, exotic: bool) -> String {
    let a = *IDENTS.choose(rng).unwrap();
    let f = *FUNCS.choose(rng).unwrap();
    let n: u32 = rng.gen_range(0..100);
    let mut line = match (language, rng.gen_range(0..4)) {
        ("python", 0) => format!("    {focus} = self.{a}.{f}({n})"),
        ("python", 1) => format!("    if {focus} is None:"),
        ("python", 2) => format!("        return {a}_{f}({focus})"),
        ("python", _) => format!("    {a}.{f}({focus}, retries={n})"),
        ("c", 0) => format!("    int {focus} = {a}_{f}(ctx, {n});"),
        ("c", 1) => format!("    if (!{focus}) {{"),
        ("c", 2) => format!("        return {a}_{f}({focus});"),
        ("c", _) => format!("    {f}_{a}(&{focus}, {n});"),
        ("php", 0) => format!("    ${focus} = $this->{a}->{f}({n});"),
        ("php", 1) => format!("    if (empty(${focus})) {{"),
        ("php", 2) => format!("        return ${a}->{f}(${focus});"),
        ("php", _) => format!("    $this->{f}(${focus}, {n});"),
        (_, 0) => format!("    var {focus} = this.{a}.{f}({n});"),
        (_, 1) => format!("    if ({focus} == null) {{"),
        (_, 2) => format!("        return {a}.{f}({focus});"),
        (_, _) => format!("    {a}.{f}({focus}, {n});"),
    };
    if exotic {
        match rng.gen_range(0..6) {
            0 => line.push_str("  "),
            1 => line = line.replace("    ", "\t"),
            2 => line.push_str(" // naïve café ✓"),
            3 => line = String::new(),
            _ => {}
        }
    }
    line
}

fn change_block(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    language: &str,
    focus: &str,
    lines: &mut Vec<ChangedLine>,
    with_trailing_context: bool,
) {
    let deleted = rng.gen_range(0..=2usize);
    let added = if deleted == 0 { rng.gen_range(1..=2usize) } else { rng.gen_range(0..=2usize) };
    for _ in 0..deleted {
        lines.push(ChangedLine::new(LineKind::Deleted, code_line(rng, language, focus, cfg.exotic_text)));
    }
    for _ in 0..added {
        lines.push(ChangedLine::new(LineKind::Added, code_line(rng, language, focus, cfg.exotic_text)));
    }
    if with_trailing_context {
        let after = rng.gen_range(1..=cfg.max_context.max(1));
        for _ in 0..after {
            lines.push(ChangedLine::new(LineKind::Context, code_line(rng, language, focus, cfg.exotic_text)));
        }
    }
}

fn hunk(rng: &mut ChaCha8Rng, cfg: &SynthConfig, language: &str, focus: &str, start: u32) -> Hunk {
    let mut lines = Vec::new();
    let before = rng.gen_range(0..=cfg.max_context);
    for _ in 0..before {
        lines.push(ChangedLine::new(LineKind::Context, code_line(rng, language, focus, cfg.exotic_text)));
    }
    let split = rng.gen_bool(cfg.split_change_prob);
    change_block(rng, cfg, language, focus, &mut lines, split);
    if split {
        change_block(rng, cfg, language, focus, &mut lines, false);
    }
    let after = rng.gen_range(0..=cfg.max_context);
    for _ in 0..after {
        lines.push(ChangedLine::new(LineKind::Context, code_line(rng, language, focus, cfg.exotic_text)));
    }
    let func = FUNCS.choose(rng).unwrap();
    let header = if rng.gen_bool(0.5) { format!("def {func}_{focus}") } else { String::new() };
    Hunk::from_lines(start, start, &header, lines)
}

fn file(rng: &mut ChaCha8Rng, cfg: &SynthConfig, language: &str, focus: &str) -> FileDiff {
    let module = *IDENTS.choose(rng).unwrap();
    let path = format!("src/{module}/{focus}_{}.{}", FUNCS.choose(rng).unwrap(), ext(language));
    let first_start = rng.gen_range(1..500u32);
    let mut hunks = vec![hunk(rng, cfg, language, focus, first_start)];
    if rng.gen_bool(cfg.second_hunk_prob) {
        let next = first_start + hunks[0].old_count + rng.gen_range(5..50u32);
        hunks.push(hunk(rng, cfg, language, focus, next));
    }
    FileDiff { path, hunks }
}

/// One synthetic commit for `language`. Deterministic in `(rng state)`.
pub fn commit(rng: &mut ChaCha8Rng, cfg: &SynthConfig, index: usize, language: &str) -> CommitRecord {
    let focus = *IDENTS.choose(rng).unwrap();
    let verb = VERBS.choose(rng).unwrap();
    let link = LINKS.choose(rng).unwrap();
    let func = FUNCS.choose(rng).unwrap();
    let message = format!("{verb} {focus} {link} {func}");
    let mut files = vec![file(rng, cfg, language, focus)];
    if rng.gen_bool(cfg.second_file_prob) {
        files.push(file(rng, cfg, language, focus));
    }
    CommitRecord {
        repo: format!("synth/{language}"),
        commit_id: format!("{:040x}", (index as u128 + 1) * 0x9e37_79b9_7f4a_7c15),
        language: language.to_string(),
        message,
        files,
    }
}

/// `count` commits cycling through the seven languages.
pub fn generate(cfg: &SynthConfig, count: usize) -> Vec<CommitRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..count)
        .map(|i| commit(&mut rng, cfg, i, LANGUAGES[i % LANGUAGES.len()]))
        .collect()
}

/// Commits for patch identification. Even indices are security fixes and
/// take their leading verb from a separate pool, so the label is learnable.
pub fn labeled(cfg: &SynthConfig, count: usize) -> Vec<LabeledCommit> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5ec);
    generate(cfg, count)
        .into_iter()
        .enumerate()
        .map(|(i, mut record)| {
            let label = i % 2 == 0;
            if label {
                let rest = record.message.split_once(' ').map_or("", |(_, r)| r).to_string();
                record.message = format!("{} {rest}", SECURITY_VERBS.choose(&mut rng).unwrap());
            }
            LabeledCommit { record, label }
        })
        .collect()
}

/// A stream with a known composition: `unique` distinct English commits,
/// followed by planted duplicates and non-English commits, shuffled.
#[derive(Debug, Clone)]
pub struct PlantedStream {
    pub records: Vec<CommitRecord>,
    pub duplicates: usize,
    pub non_english: usize,
}

pub fn planted_stream(seed: u64, total: usize, duplicates: usize, non_english: usize) -> PlantedStream {
    assert!(duplicates + non_english < total);
    let unique = total - duplicates - non_english;
    let cfg = SynthConfig { seed, ..SynthConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut records = generate(&cfg, unique + non_english);
    for (k, rec) in records.iter_mut().skip(unique).enumerate() {
        rec.message = NON_ENGLISH[k % NON_ENGLISH.len()].to_string();
    }
    for d in 0..duplicates {
        let src = rng.gen_range(0..unique);
        let mut dup = records[src].clone();
        dup.commit_id = format!("dup{d:04}{}", &dup.commit_id[7..]);
        records.push(dup);
    }
    // Duplicates must follow their originals so first-occurrence-wins keeps
    // the original; shuffle only the unique prefix and the tail separately.
    let (head, tail) = records.split_at_mut(unique + non_english);
    head.shuffle(&mut rng);
    tail.shuffle(&mut rng);
    PlantedStream {
        records,
        duplicates,
        non_english,
    }
}

/// The commit from the `tpot` project used as the running example: one
/// hunk at line 1025 in `def _binarizer` where the `Binarizer` call gains a
/// `threshold` argument.
pub fn binarizer_commit() -> CommitRecord {
    use LineKind::*;
    let l = ChangedLine::new;
    let lines = vec![
        l(Context, "        training_features = input_df.loc[input_df['group'] == 'training'].drop(['class', 'group', 'guess'], axis=1)"),
        l(Context, "        if len(training_features.columns.values) == 0:"),
        l(Context, "            return input_df.copy()"),
        l(Deleted, "        binarizer = Binarizer(copy=False)"),
        l(Added, "        binarizer = Binarizer(copy=False, threshold=threshold)"),
        l(Context, "        binarizer.fit(training_features.values.astype(np.float64))"),
        l(Context, "        binarized_features = binarizer.transform(input_df.drop(['class', 'group', 'guess'], axis=1).values)"),
        l(Context, "        modified_df = pd.DataFrame(data=binarized_features)"),
    ];
    CommitRecord {
        repo: "rsumner33/tpot".into(),
        commit_id: "dbec56b8f813733bf24e9947747a242af3bd7d14".into(),
        language: "python".into(),
        message: "Bugfix: Pass threshold to binarizer".into(),
        files: vec![FileDiff {
            path: "tpot/tpot.py".into(),
            hunks: vec![Hunk::from_lines(1025, 1025, "def _binarizer", lines)],
        }],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labeled_alternates_and_marks_fixes() {
        let lc = labeled(&SynthConfig::compact(4), 10);
        assert_eq!(lc.iter().filter(|c| c.label).count(), 5);
        for c in &lc {
            let verb = c.record.message.split(' ').next().unwrap();
            assert_eq!(SECURITY_VERBS.contains(&verb), c.label);
        }
    }

    #[test]
    fn generated_records_are_valid() {
        let cfg = SynthConfig { exotic_text: true, ..SynthConfig::default() };
        for r in generate(&cfg, 300) {
            r.validate().unwrap();
            assert!(r.has_change());
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig::default();
        assert_eq!(generate(&cfg, 20), generate(&cfg, 20));
    }

    #[test]
    fn binarizer_commit_shape() {
        let r = binarizer_commit();
        r.validate().unwrap();
        let h = &r.files[0].hunks[0];
        assert_eq!((h.old_count, h.new_count), (7, 7));
    }
}
