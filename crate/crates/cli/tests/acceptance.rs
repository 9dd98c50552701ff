//! End-to-end acceptance checks. Each check prints one PASS or FAIL line;
//! the process fails if any check fails. Arguments that are not flags
//! filter checks by substring.

use astro_float::{BigFloat, Consts, RoundingMode};
use commitbart::commit::{parse_git_show, render_git_show, CommitRecord};
use commitbart::corpus::{language_distribution, sample_language, LanguageStats, LANGUAGES};
use commitbart::model::{
    contrastive_loss, greedy_decode, train_step, Batch, Mat, ModelConfig, ModelState, Session, TrainHyper,
};
use commitbart::pretrain::{
    derive_rng, sample_spans, CommitGraph, Component, ExampleFactory, NoiseConfig, PretrainTask, Schedule,
    TaskCategory,
};
use commitbart::sequence::{
    check_invariants, parse_sequence, training_texts, SegmentId, SegmentedSequence, SequenceBuilder, SpecialToken,
    Vocabulary, FIRST_BYTE_ID,
};
use commitbart::synth::{generate, labeled, SynthConfig};
use commitbart::tasks::{
    build_spi_example, classification_metrics, parse_spi_prediction, smoothed_bleu4, spi_target, SpiLabel,
};
use commitbart::train::{PretrainConfig, Pretrainer};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

/// Outcome of one check: pass flag and a short measurement summary.
type Outcome = (bool, String);
type Check = (&'static str, fn() -> Outcome);
/// Predictions, golds, then hand counts: tp, fp, fn, correct.
type Fixture = ([SpiLabel; 4], [bool; 4], usize, usize, usize, usize);

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let checks: [Check; 13] = [
        ("01 git show round trip", c01_git_show_round_trip),
        ("02 sequence round trip", c02_sequence_round_trip),
        ("03 infilling statistics", c03_infilling_statistics),
        ("04 graph masking structure", c04_graph_masking),
        ("05 language sampler", c05_sampler),
        ("06 task schedule", c06_schedule),
        ("07 gradient checks", c07_gradients),
        ("08 loss identities", c08_loss_identities),
        ("09 memorization", c09_memorization),
        ("10 learning signal", c10_learning_signal),
        ("11 patch label format", c11_spi_format),
        ("12 bleu oracle", c12_bleu_oracle),
        ("13 deterministic pipeline", c13_determinism),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in checks {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(outcome) => outcome,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        println!(
            "{} criterion {name} ({:.1} s): {detail}",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        failed += usize::from(!pass);
    }
    println!("acceptance: {} of {ran} passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn within(limit: Duration, t: Instant) -> bool {
    t.elapsed() < limit
}

fn thousand_commits() -> Vec<CommitRecord> {
    let mut out = generate(&SynthConfig { seed: 11, ..SynthConfig::default() }, 500);
    out.extend(generate(
        &SynthConfig {
            seed: 12,
            exotic_text: true,
            ..SynthConfig::default()
        },
        500,
    ));
    out
}

fn c01_git_show_round_trip() -> Outcome {
    let t = Instant::now();
    let records = thousand_commits();
    let mut bad = 0;
    for r in &records {
        let text = render_git_show(r);
        match parse_git_show(&text) {
            Ok(back) if render_git_show(&back) == text => {}
            _ => bad += 1,
        }
    }
    let fast = within(Duration::from_secs(30), t);
    (bad == 0 && fast, format!("{bad} of {} differ, limit 30 s", records.len()))
}

fn c02_sequence_round_trip() -> Outcome {
    let records = thousand_commits();
    let texts = training_texts(&records);
    let vocab = Vocabulary::train(texts.iter().map(String::as_str), 1500).unwrap().vocab;
    let b = SequenceBuilder::new(&vocab, 1 << 14);
    let mut bad = 0;
    let mut unbalanced = 0;
    for r in &records {
        let seq = b.full_input(r).unwrap();
        if check_invariants(&seq).is_err() {
            unbalanced += 1;
        }
        let Ok(p) = parse_sequence(&seq, &vocab) else {
            bad += 1;
            continue;
        };
        let mut same = p.message.as_deref() == Some(r.message.as_str()) && p.files.len() == r.files.len();
        for (pf, rf) in p.files.iter().zip(&r.files) {
            let want: Vec<_> = rf.lines().filter(|l| l.kind.is_change()).map(|l| (l.kind, l.text.as_str())).collect();
            let got: Vec<_> = pf.lines().filter(|(k, _)| k.is_change()).collect();
            same &= pf.path.as_deref() == Some(rf.path.as_str()) && got == want;
        }
        bad += usize::from(!same);
    }
    (
        bad == 0 && unbalanced == 0,
        format!("{bad} mismatches, {unbalanced} invariant failures over {} commits", records.len()),
    )
}

fn c03_infilling_statistics() -> Outcome {
    let t = Instant::now();
    let mut seq = SegmentedSequence::default();
    seq.push_special(SpecialToken::Cls, SegmentId::Ctx);
    for k in 0..199 {
        seq.push(FIRST_BYTE_ID + 40 + (k % 60), SegmentId::Ctx);
    }
    assert_eq!(seq.len(), 200);
    let cfg = NoiseConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut covered, mut spans, mut maskable) = (0usize, 0usize, 0usize);
    for _ in 0..10_000 {
        let s = sample_spans(&seq, &cfg, &mut rng);
        covered += s.iter().map(|r| r.len()).sum::<usize>();
        spans += s.len();
        maskable += 199;
    }
    let frac = covered as f64 / maskable as f64;
    let mean = covered as f64 / spans as f64;
    let pass = (frac - 0.15).abs() <= 0.01 && (mean - 3.0).abs() <= 0.15 && within(Duration::from_secs(60), t);
    (pass, format!("covered {:.4}, mean span {mean:.4}", frac))
}

fn component(seg: SegmentId) -> Component {
    match seg {
        SegmentId::Msg => Component::Message,
        SegmentId::File => Component::FilePath,
        _ => Component::Code,
    }
}

fn c04_graph_masking() -> Outcome {
    let vocab = Vocabulary::bytes_only();
    let b = SequenceBuilder::new(&vocab, 1 << 14);
    let mask = SpecialToken::Mask as u32;
    let (mut checked, mut wrong_count, mut single, mut left) = (0, 0, 0, 0);
    let mut seed = 0;
    while checked < 1000 {
        for r in generate(&SynthConfig { seed, ..SynthConfig::default() }, 100) {
            if checked == 1000 {
                break;
            }
            let seq = b.full_input(&r).unwrap();
            let g = CommitGraph::build(&seq, &vocab);
            if g.is_empty() {
                continue;
            }
            checked += 1;
            let picked = g.select_mask_nodes(&mut derive_rng(seed, &[checked as u64]));
            if picked.len() != (g.len() / 2).max(1) {
                wrong_count += 1;
            }
            let (masked, _) = g.apply_gtm(&seq, &picked);
            let mask_components: BTreeSet<Component> = masked
                .token_ids
                .iter()
                .zip(&masked.segment_ids)
                .filter(|(t, _)| **t == mask)
                .map(|(_, s)| component(*s))
                .collect();
            let after = CommitGraph::build(&masked, &vocab);
            for w in &picked {
                let comps: BTreeSet<Component> = g.occurrences(w).iter().map(|o| o.component).collect();
                if comps.len() < 2 || !comps.is_subset(&mask_components) {
                    single += 1;
                }
                if after.contains(w) {
                    left += 1;
                }
            }
        }
        seed += 1;
    }
    (
        wrong_count == 0 && single == 0 && left == 0,
        format!("{checked} commits: {wrong_count} wrong counts, {single} nodes masked in <2 components, {left} left unmasked"),
    )
}

const PRETRAIN_COUNTS: [u64; 7] = [1_917_109, 660_587, 935_151, 986_669, 1_148_074, 1_029_676, 762_760];

/// `n_i^α / Σ n_j^α` in 256-bit floating point.
fn sampler_oracle(counts: &[u64], alpha: f64) -> Vec<f64> {
    const P: usize = 256;
    const RM: RoundingMode = RoundingMode::ToEven;
    let mut cc = Consts::new().unwrap();
    let a = BigFloat::from_f64(alpha, P);
    let powered: Vec<BigFloat> = counts
        .iter()
        .map(|&n| BigFloat::from_u64(n, P).pow(&a, P, RM, &mut cc))
        .collect();
    let mut z = BigFloat::from_u64(0, P);
    for v in &powered {
        z = z.add(v, P, RM);
    }
    powered
        .iter()
        .map(|v| format!("{}", v.div(&z, P, RM)).parse().unwrap())
        .collect()
}

fn stats(counts: &[u64]) -> LanguageStats {
    LanguageStats::new(LANGUAGES.iter().map(|l| l.to_string()).zip(counts.iter().copied()).collect())
}

fn c05_sampler() -> Outcome {
    let q = language_distribution(&stats(&PRETRAIN_COUNTS)).unwrap();
    let oracle = sampler_oracle(&PRETRAIN_COUNTS, 0.7);
    let err = LANGUAGES
        .iter()
        .zip(&oracle)
        .map(|(l, o)| (q[*l] - o).abs())
        .fold(0.0, f64::max);

    let total: u64 = PRETRAIN_COUNTS.iter().sum();
    let p1 = language_distribution(&stats(&PRETRAIN_COUNTS).with_alpha(1.0)).unwrap();
    let identity = LANGUAGES
        .iter()
        .zip(&PRETRAIN_COUNTS)
        .all(|(l, &n)| p1[*l] == n as f64 / total as f64);

    let flat = language_distribution(&stats(&[1000; 7])).unwrap();
    let uniform = flat.values().all(|v| (v - 1.0 / 7.0).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000;
    let mut hits: BTreeMap<String, usize> = BTreeMap::new();
    for _ in 0..n {
        *hits.entry(sample_language(&q, &mut rng)).or_default() += 1;
    }
    let worst_z = q
        .iter()
        .map(|(l, &qi)| {
            let sigma = (n as f64 * qi * (1.0 - qi)).sqrt();
            (hits.get(l).copied().unwrap_or(0) as f64 - n as f64 * qi).abs() / sigma
        })
        .fold(0.0, f64::max);
    (
        total == 7_440_026 && err < 1e-12 && identity && uniform && worst_z <= 3.0,
        format!("oracle error {err:.1e}, alpha 1 exact {identity}, uniform {uniform}, worst draw {worst_z:.2} sigma"),
    )
}

fn c06_schedule() -> Outcome {
    let total = 80_000;
    let s = Schedule::new(total).unwrap();
    let counts = s.counts();
    let exact = counts == [24_000, 24_000, 12_000, 12_000, 4_000, 4_000];
    let mut seen = [0usize; 6];
    let mut worst: f64 = 0.0;
    for (t, task) in s.tasks().iter().enumerate() {
        seen[task.index()] += 1;
        for k in PretrainTask::ALL {
            let target = (t + 1) as f64 * k.share();
            worst = worst.max((seen[k.index()] as f64 - target).abs());
        }
    }
    (exact && worst <= 1.0, format!("counts {counts:?}, worst prefix deviation {worst:.4}"))
}

const GRAD_STEP: f64 = 1e-3;
const GRAD_COORDS: usize = 12;

fn random_seq(rng: &mut ChaCha8Rng, len: usize, vocab: u32, eos: bool) -> SegmentedSequence {
    let mut s = SegmentedSequence::default();
    s.push_special(SpecialToken::Cls, SegmentId::Ctx);
    let segs = [SegmentId::Msg, SegmentId::File, SegmentId::Ctx, SegmentId::Neg, SegmentId::Pos];
    for _ in 1..len - usize::from(eos) {
        s.push(rng.gen_range(FIRST_BYTE_ID..vocab), *segs.choose(rng).unwrap());
    }
    if eos {
        s.push_special(SpecialToken::Eos, SegmentId::Ctx);
    }
    s
}

fn loss_and_grads(state: &ModelState, params: &[Mat<f64>], batch: &Batch) -> (f64, Vec<Mat<f64>>) {
    let mut s = Session::new(&state.config, state.layout(), params, Some(ChaCha8Rng::seed_from_u64(99)));
    let l = batch.loss(&mut s).unwrap();
    (s.tape.value(l).data[0], s.param_grads(l))
}

/// Worst per-tensor relative error `‖a − n‖ / max(‖a‖, ‖n‖)` over every
/// tensor. Each tensor is probed at its largest-gradient coordinates plus
/// uniformly drawn ones.
fn gradient_error(state: &ModelState, batch: &Batch, rng: &mut ChaCha8Rng) -> (f64, usize) {
    let mut params = state.params_as::<f64>();
    let (_, analytic) = loss_and_grads(state, &params, batch);
    let mut worst: f64 = 0.0;
    let mut probed = 0;
    for t in 0..params.len() {
        let len = params[t].data.len();
        let mut by_size: Vec<usize> = (0..len).collect();
        by_size.sort_by(|&i, &j| analytic[t].data[j].abs().total_cmp(&analytic[t].data[i].abs()));
        let mut coords: BTreeSet<usize> = by_size.into_iter().take(GRAD_COORDS / 2).collect();
        while coords.len() < GRAD_COORDS.min(len) {
            coords.insert(rng.gen_range(0..len));
        }
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for &k in &coords {
            let orig = params[t].data[k];
            params[t].data[k] = orig + GRAD_STEP;
            let up = loss_and_grads(state, &params, batch).0;
            params[t].data[k] = orig - GRAD_STEP;
            let down = loss_and_grads(state, &params, batch).0;
            params[t].data[k] = orig;
            let numeric = (up - down) / (2.0 * GRAD_STEP);
            let a = analytic[t].data[k];
            diff += (a - numeric) * (a - numeric);
            na += a * a;
            nn += numeric * numeric;
        }
        probed += coords.len();
        let scale = f64::max(na.sqrt(), nn.sqrt());
        if scale > 1e-10 {
            worst = worst.max(diff.sqrt() / scale);
        } else if !scale.is_finite() {
            worst = f64::INFINITY;
        }
    }
    (worst, probed)
}

fn c07_gradients() -> Outcome {
    let t = Instant::now();
    let vocab = 64u32 + FIRST_BYTE_ID;
    let state = ModelState::init(ModelConfig::tiny(vocab as usize), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let seq2seq = Batch::Seq2Seq(
        (0..2)
            .map(|i| (random_seq(&mut rng, 9 + i, vocab, false), random_seq(&mut rng, 6 + i, vocab, true)))
            .collect(),
    );
    let align = Batch::Align(
        (0..3)
            .map(|_| (random_seq(&mut rng, 6, vocab, false), random_seq(&mut rng, 9, vocab, false)))
            .collect(),
    );
    let simcse = Batch::SimCse((0..3).map(|i| random_seq(&mut rng, 5 + 2 * i, vocab, false)).collect());
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for (name, batch) in [("seq2seq", &seq2seq), ("align", &align), ("simcse", &simcse)] {
        let (err, probed) = gradient_error(&state, batch, &mut rng);
        worst = worst.max(err);
        parts.push(format!("{name} {err:.1e} ({probed} coords)"));
    }
    let pass = worst < 1e-3 && within(Duration::from_secs(300), t);
    (pass, format!("{} tensors; {}", state.params.len(), parts.join(", ")))
}

fn c08_loss_identities() -> Outcome {
    let single = contrastive_loss(&[vec![0.3, -1.0, 2.0]], &[vec![1.0, 0.5, 0.0]], 0.05).unwrap();
    let e1 = vec![1.0, 0.0, 0.0];
    let e2 = vec![0.0, 2.0, 0.0];
    let mut orth_err: f64 = 0.0;
    for tau in [0.05, 0.5, 1.0] {
        let got = contrastive_loss(&[e1.clone(), e2.clone()], &[e1.clone(), e2.clone()], tau).unwrap();
        orth_err = orth_err.max((got - (1.0 + (-1.0 / tau).exp()).ln()).abs());
    }

    let v = 50 + FIRST_BYTE_ID as usize;
    let mut state = ModelState::init(ModelConfig::tiny(v), 1).unwrap();
    let tok = state.layout().index_of("tok_emb").unwrap();
    state.params[tok] = Mat::zeros(state.params[tok].rows, state.params[tok].cols);
    let params = state.params_as::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (src, tgt) = (random_seq(&mut rng, 12, v as u32, false), random_seq(&mut rng, 8, v as u32, true));
    let mut s = Session::new(&state.config, state.layout(), &params, None);
    let l = s.seq2seq_loss(&src, &tgt).unwrap();
    let uniform_err = (s.tape.value(l).data[0] - (v as f64).ln()).abs();

    (
        single == 0.0 && orth_err < 1e-6 && uniform_err < 1e-6,
        format!("b=1 loss {single}, orthogonal error {orth_err:.1e}, uniform error {uniform_err:.1e}"),
    )
}

fn c09_memorization() -> Outcome {
    let t = Instant::now();
    let records = generate(&SynthConfig::compact(5), 8);
    let texts = training_texts(&records);
    let vocab = Vocabulary::train(texts.iter().map(String::as_str), 400).unwrap().vocab;
    let factory = ExampleFactory::new(SequenceBuilder::new(&vocab, 256), NoiseConfig::default());
    let eval: Vec<_> = records
        .iter()
        .enumerate()
        .map(|(i, r)| factory.text_infilling(r, &mut derive_rng(99, &[i as u64])).unwrap())
        .collect();
    let mut state = ModelState::init(ModelConfig::tiny(vocab.len()), 5).unwrap();
    let hyper = TrainHyper {
        lr: 1e-3,
        warmup_steps: 50,
        ..TrainHyper::default()
    };
    let recovered = |state: &ModelState| {
        eval.iter()
            .filter(|ex| {
                let target = ex.target.as_ref().unwrap();
                let out = greedy_decode(&ex.source, state, target.len() + 8, target.segment_ids[0]).unwrap();
                out == target.token_ids[1..target.len() - 1]
            })
            .count()
    };
    let mut step = 0u64;
    let mut hits = 0;
    while step < 2000 {
        let mut rng = derive_rng(1, &[step]);
        let batch: Vec<_> = records.iter().map(|r| factory.text_infilling(r, &mut rng).unwrap()).collect();
        train_step(&mut state, &Batch::from_examples(&batch).unwrap(), &hyper, &mut rng).unwrap();
        step += 1;
        if step.is_multiple_of(50) {
            hits = recovered(&state);
            if hits == eval.len() {
                break;
            }
        }
    }
    let pass = hits == eval.len() && within(Duration::from_secs(600), t);
    (pass, format!("exact match {hits}/{} after {step} steps", eval.len()))
}

fn c10_learning_signal() -> Outcome {
    let mut shards: BTreeMap<String, Vec<CommitRecord>> = BTreeMap::new();
    let records = generate(&SynthConfig::compact(2), 200);
    for r in &records {
        shards.entry(r.language.clone()).or_default().push(r.clone());
    }
    let texts = training_texts(&records);
    let vocab = Vocabulary::train(texts.iter().map(String::as_str), 1200).unwrap().vocab;
    let cfg = PretrainConfig {
        max_len: 256,
        hyper: TrainHyper {
            lr: 1e-4,
            ..TrainHyper::default().with_warmup_fraction(200)
        },
        ..PretrainConfig::new(200, 1)
    };
    let trainer = Pretrainer::new(&cfg, &shards, &vocab).unwrap();
    let mut state = ModelState::init(ModelConfig::tiny(vocab.len()), 1).unwrap();
    let logs = trainer.run::<commitbart::train::TrainError>(&mut state, |_, _| Ok(())).unwrap();
    let window = |ls: &[commitbart::train::StepLog], c: TaskCategory| {
        let v: Vec<f64> = ls.iter().filter(|l| l.task.category() == c).map(|l| l.loss).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for c in TaskCategory::ALL {
        let (first, last) = (window(&logs[..20], c), window(&logs[180..], c));
        pass &= last < first;
        parts.push(format!("{} {first:.3} -> {last:.3}", c.name()));
    }
    (pass, parts.join(", "))
}

fn c11_spi_format() -> Outcome {
    let vocab = Vocabulary::bytes_only();
    let b = SequenceBuilder::new(&vocab, 4096).truncating();
    let mut bad = 0;
    let items = labeled(&SynthConfig::default(), 200);
    for lc in &items {
        let (_, target) = build_spi_example(lc, &b).unwrap();
        let back = parse_spi_prediction(&vocab.decode_text(&target.token_ids));
        if target.len() != 5 || back != SpiLabel::from_bool(lc.label) {
            bad += 1;
        }
    }
    bad += [true, false].iter().filter(|&&l| spi_target(l).len() != 5).count();

    use SpiLabel::{False as F, True as T, Unknown as U};
    let fixtures: [Fixture; 4] = [
        ([T, T, F, F], [true, false, true, false], 1, 1, 1, 2),
        ([T, T, T, U], [true, true, false, true], 2, 1, 1, 2),
        ([F, F, F, F], [true, false, false, true], 0, 0, 2, 2),
        ([T, U, F, T], [true, false, false, true], 2, 1, 0, 3),
    ];
    let mut mismatched = 0;
    for (p, g, tp, fp, fneg, correct) in fixtures {
        let m = classification_metrics(&p, &g).unwrap();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let f1 = ratio(2 * tp, 2 * tp + fp + fneg);
        let ok = m.accuracy == correct as f64 / 4.0
            && m.precision == ratio(tp, tp + fp)
            && m.recall == ratio(tp, tp + fneg)
            && (m.f1 - f1).abs() <= 4.0 * f64::EPSILON
            && m.degenerate == (tp + fp == 0 || tp + fneg == 0);
        mismatched += usize::from(!ok);
    }
    (
        bad == 0 && mismatched == 0,
        format!("{bad} bad targets of {}, {mismatched} of 4 metric fixtures differ", items.len() + 2),
    )
}

fn ngrams(t: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m: HashMap<&[String], usize> = HashMap::new();
    for w in t.windows(n) {
        *m.entry(w).or_default() += 1;
    }
    m
}

/// Independent smoothed BLEU-4: punctuation split, clipped n-gram matches,
/// add-one smoothing from bigrams up, brevity penalty.
fn reference_bleu(hyp: &str, reference: &str) -> f64 {
    let tok = |s: &str| -> Vec<String> {
        let mut spaced = String::new();
        for ch in s.chars() {
            if ch.is_ascii_punctuation() {
                spaced.push(' ');
                spaced.push(ch);
                spaced.push(' ');
            } else {
                spaced.push(ch);
            }
        }
        spaced.split_whitespace().map(str::to_string).collect()
    };
    let (h, r) = (tok(hyp), tok(reference));
    if h.is_empty() {
        return 0.0;
    }
    let mut product = 1.0;
    for n in 1..=4 {
        let (hg, rg) = (ngrams(&h, n), ngrams(&r, n));
        let matched: usize = hg.iter().map(|(g, c)| (*c).min(rg.get(g).copied().unwrap_or(0))).sum();
        let total = (h.len() + 1).saturating_sub(n);
        let p = if n == 1 {
            matched as f64 / total as f64
        } else {
            (matched + 1) as f64 / (total + 1) as f64
        };
        if p == 0.0 {
            return 0.0;
        }
        product *= p;
    }
    let bp = if h.len() < r.len() {
        (1.0 - r.len() as f64 / h.len() as f64).exp()
    } else {
        1.0
    };
    100.0 * bp * product.powf(0.25)
}

fn c12_bleu_oracle() -> Outcome {
    let words = ["fix", "the", "cache", "(", ")", "x", "=", "1", "parser", "null", ",", "return", "."];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let sentence = |rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(1..14);
        (0..n).map(|_| *words.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
    };
    let mut identical_ok = true;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (h, r) = (sentence(&mut rng), sentence(&mut rng));
        identical_ok &= smoothed_bleu4(&h, &h) == 100.0;
        worst = worst.max((smoothed_bleu4(&h, &r) - reference_bleu(&h, &r)).abs());
    }
    identical_ok &= smoothed_bleu4("Fix NPE in parser.", "Fix NPE in parser.") == 100.0;
    (
        identical_ok && worst < 1e-6,
        format!("identical pairs at 100: {identical_ok}, worst difference {worst:.1e} over 50 pairs"),
    )
}

fn cli(args: &[&str], cwd: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_commitbart"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn smoke_chain(dir: &Path) -> bool {
    let steps: [&[&str]; 6] = [
        &["--seed", "21", "synth", "--count", "200", "--compact", "--out", "data"],
        &["ingest", "--input", "data/commits.jsonl", "--out", "corpus"],
        &["--seed", "21", "pretrain", "--corpus", "corpus", "--steps", "200", "--out", "pt"],
        &["--seed", "21", "finetune", "--task", "msg", "--ckpt", "pt", "--data", "corpus", "--steps", "100", "--out", "ft"],
        &["--seed", "21", "generate", "--task", "msg", "--ckpt", "ft", "--data", "corpus", "--out", "gen"],
        &["evaluate", "--task", "msg", "--predictions", "gen/predictions.jsonl", "--out", "eval"],
    ];
    steps.iter().all(|a| cli(a, dir))
}

fn c13_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    if !smoke_chain(a.path()) || !smoke_chain(b.path()) {
        return (false, "smoke chain exited with an error".into());
    }
    let files = [
        "pt/model/tensors.bin",
        "pt/model/manifest.json",
        "pt/vocab.json",
        "pt/loss.csv",
        "ft/model/tensors.bin",
        "ft/model/manifest.json",
        "gen/predictions.jsonl",
        "eval/metrics.json",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| match (std::fs::read(a.path().join(f)), std::fs::read(b.path().join(f))) {
            (Ok(x), Ok(y)) => x != y,
            _ => true,
        })
        .collect();
    (
        differing.is_empty(),
        format!("{} artifacts compared, differing: {differing:?}", files.len()),
    )
}
