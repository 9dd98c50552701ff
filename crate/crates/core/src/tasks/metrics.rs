use super::{SpiLabel, TaskError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

pub const OVERALL: &str = "overall";

/// Whitespace tokens after putting spaces around ASCII punctuation.
pub fn bleu_tokens(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() * 2);
    for c in text.chars() {
        if c.is_ascii_punctuation() {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    spaced.split_whitespace().map(str::to_string).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence BLEU-4 on a 0 to 100 scale. Unigram precision is unsmoothed;
/// higher orders use add-one smoothing on both counts. Brevity penalty
/// applies when the hypothesis is shorter than the reference.
pub fn smoothed_bleu4(hypothesis: &str, reference: &str) -> f64 {
    let hyp = bleu_tokens(hypothesis);
    let refr = bleu_tokens(reference);
    if hyp.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let h = ngram_counts(&hyp, n);
        let r = ngram_counts(&refr, n);
        let matched: usize = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
        let total = hyp.len().saturating_sub(n - 1);
        let p = if n == 1 {
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    let (h, r) = (hyp.len() as f64, refr.len() as f64);
    let bp = if h < r { (1.0 - r / h).exp() } else { 1.0 };
    100.0 * bp * (log_sum / 4.0).exp()
}

/// Equality after collapsing whitespace runs.
pub fn exact_match(hypothesis: &str, reference: &str) -> bool {
    hypothesis.split_whitespace().eq(reference.split_whitespace())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No positive predictions or no positive gold labels, so precision or
    /// recall is reported as zero.
    pub degenerate: bool,
}

/// Metrics with `True` as the positive class. An unparseable prediction
/// counts as wrong: a false negative on a positive example and a false
/// positive on a negative one.
pub fn classification_metrics(preds: &[SpiLabel], golds: &[bool]) -> Result<ClassificationMetrics, TaskError> {
    if preds.len() != golds.len() || preds.is_empty() {
        return Err(TaskError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    let (mut tp, mut fp, mut fneg, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &g) in preds.iter().zip(golds) {
        let said_true = match p {
            SpiLabel::True => true,
            SpiLabel::False => false,
            SpiLabel::Unknown => !g,
        };
        match (said_true, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
        if p == SpiLabel::from_bool(g) {
            correct += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ClassificationMetrics {
        accuracy: ratio(correct, preds.len()),
        precision,
        recall,
        f1,
        degenerate: tp + fp == 0 || tp + fneg == 0,
    })
}

/// Per-language metric tables plus an unweighted macro average under
/// [`OVERALL`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricReport {
    pub tables: BTreeMap<String, BTreeMap<String, f64>>,
}

impl MetricReport {
    pub fn from_languages(per_language: BTreeMap<String, BTreeMap<String, f64>>) -> Self {
        let mut overall: BTreeMap<String, f64> = BTreeMap::new();
        let n = per_language.len() as f64;
        for table in per_language.values() {
            for (k, v) in table {
                *overall.entry(k.clone()).or_insert(0.0) += v;
            }
        }
        for v in overall.values_mut() {
            *v /= n;
        }
        let mut tables = per_language;
        if !tables.is_empty() {
            tables.insert(OVERALL.to_string(), overall);
        }
        Self { tables }
    }

    pub fn get(&self, language: &str, metric: &str) -> Option<f64> {
        self.tables.get(language)?.get(metric).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }
}

/// `(language, hypothesis, reference)` rows to mean BLEU-4 and exact-match
/// percentage per language.
pub fn generation_report(rows: &[(String, String, String)]) -> MetricReport {
    let mut acc: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for (lang, hyp, refr) in rows {
        let e = acc.entry(lang.clone()).or_default();
        e.0 += smoothed_bleu4(hyp, refr);
        e.1 += if exact_match(hyp, refr) { 100.0 } else { 0.0 };
        e.2 += 1;
    }
    let per = acc
        .into_iter()
        .map(|(lang, (b, m, n))| {
            let t = BTreeMap::from([("bleu4".to_string(), b / n as f64), ("exact_match".to_string(), m / n as f64)]);
            (lang, t)
        })
        .collect();
    MetricReport::from_languages(per)
}

/// `(language, prediction, gold)` rows to classification metrics per language.
pub fn spi_report(rows: &[(String, SpiLabel, bool)]) -> Result<MetricReport, TaskError> {
    let mut groups: BTreeMap<String, (Vec<SpiLabel>, Vec<bool>)> = BTreeMap::new();
    for (lang, p, g) in rows {
        let e = groups.entry(lang.clone()).or_default();
        e.0.push(*p);
        e.1.push(*g);
    }
    let mut per = BTreeMap::new();
    for (lang, (p, g)) in groups {
        let m = classification_metrics(&p, &g)?;
        let t = BTreeMap::from([
            ("accuracy".to_string(), m.accuracy),
            ("precision".to_string(), m.precision),
            ("recall".to_string(), m.recall),
            ("f1".to_string(), m.f1),
            ("degenerate".to_string(), if m.degenerate { 1.0 } else { 0.0 }),
        ]);
        per.insert(lang, t);
    }
    Ok(MetricReport::from_languages(per))
}
