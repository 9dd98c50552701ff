use crate::config::{Overrides, RunConfig, Stage};
use crate::inputs::{read_labeled, read_records, read_vocab, to_jsonl};
use crate::manifest::{write_atomic, RunClock, RunManifest};
use crate::{input_error, Cli, Command, OrInput};
use anyhow::{Context, Result};
use clap::{Args, Parser, ValueEnum};
use commitbart::commit::{render_git_show, CommitRecord};
use commitbart::corpus::{corpus_stats, language_distribution, CorpusDir, FilterConfig, LanguageStats};
use commitbart::model::{load_checkpoint, save_checkpoint, ModelState};
use commitbart::pretrain::{derive_rng, ExampleFactory, PretrainTask, TaskCategory};
use commitbart::sequence::{training_texts, SequenceBuilder, Vocabulary};
use commitbart::synth::{self, SynthConfig};
use commitbart::tasks::{
    build_example, generation_report, parse_spi_prediction, spi_report, FinetuneExample, FinetuneTask, SpiLabel,
};
use commitbart::train::{
    finetune, predict, reset_optimizer, FinetuneConfig, PretrainConfig, Prediction, Pretrainer, StepLog, TrainError,
};
use log::info;
use serde_json::json;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

const VOCAB_FILE: &str = "vocab.json";
const MODEL_DIR: &str = "model";
const LOSS_HEADER: &str = "step,task,language,batch,loss";

/// Shared per-invocation state.
struct Run {
    seed: u64,
    threads: usize,
    config: Option<PathBuf>,
    args: Vec<String>,
    clock: RunClock,
}

impl Run {
    fn config(&self, o: &Overrides, stage: Stage) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref()).or_input()?;
        cfg.apply(o, stage);
        cfg.validate().or_input()?;
        Ok(cfg)
    }

    fn finish(&self, command: &str, config: serde_json::Value, inputs: &[&Path], out: &Path) -> Result<()> {
        let m = RunManifest::new(
            command,
            self.args.clone(),
            config,
            self.seed,
            self.threads,
            inputs.iter().map(|p| p.to_path_buf()).collect(),
            vec![out.to_path_buf()],
            &self.clock,
        );
        m.write(out).with_context(|| format!("writing manifest in {}", out.display()))
    }
}

pub fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    let run = Run {
        seed: cli.seed,
        threads: cli.threads.get(),
        config: cli.config,
        args,
        clock: RunClock::start(),
    };
    if run.threads > 1 {
        info!("computation is sequential; --threads {} is an upper bound only", run.threads);
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(&run, a),
        Command::Ingest(a) => cmd_ingest(&run, a),
        Command::Stats(a) => cmd_stats(a),
        Command::BuildPretrain(a) => cmd_build_pretrain(&run, a),
        Command::Pretrain(a) => cmd_pretrain(&run, a),
        Command::Finetune(a) => cmd_finetune(&run, a),
        Command::Generate(a) => cmd_generate(&run, a),
        Command::Evaluate(a) => cmd_evaluate(&run, a),
        Command::Replay(a) => cmd_replay(a),
    }
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthFormat {
    Jsonl,
    GitShow,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: usize,
    /// Single-hunk commits with little context.
    #[arg(long)]
    pub compact: bool,
    /// Emit `{"record", "label"}` objects for patch identification.
    #[arg(long)]
    pub labeled: bool,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub format: SynthFormat,
    #[arg(long)]
    pub out: PathBuf,
}

fn cmd_synth(run: &Run, a: SynthArgs) -> Result<()> {
    let cfg = if a.compact {
        SynthConfig::compact(run.seed)
    } else {
        SynthConfig {
            seed: run.seed,
            ..SynthConfig::default()
        }
    };
    let (name, bytes) = match (a.labeled, a.format) {
        (true, SynthFormat::GitShow) => return Err(input_error("--labeled requires --format jsonl")),
        (true, SynthFormat::Jsonl) => ("labeled.jsonl", to_jsonl(&synth::labeled(&cfg, a.count))),
        (false, SynthFormat::Jsonl) => ("commits.jsonl", to_jsonl(&synth::generate(&cfg, a.count))),
        (false, SynthFormat::GitShow) => (
            "commits.txt",
            synth::generate(&cfg, a.count)
                .iter()
                .map(render_git_show)
                .collect::<String>()
                .into_bytes(),
        ),
    };
    write_out(&a.out.join(name), &bytes)?;
    let snapshot = json!({"count": a.count, "compact": a.compact, "labeled": a.labeled});
    run.finish("synth", snapshot, &[], &a.out)
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Shard directory, JSONL file of commits, or concatenated `git show` dumps.
    #[arg(long)]
    pub input: PathBuf,
    /// Language to assign to every input commit.
    #[arg(long)]
    pub language: Option<String>,
    /// Whitespace-token cap per commit.
    #[arg(long, default_value_t = 2000)]
    pub max_tokens: usize,
    /// Keep messages that are not English.
    #[arg(long)]
    pub allow_non_english: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn valid_language(l: &str) -> bool {
    !l.is_empty() && l.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

fn cmd_ingest(run: &Run, a: IngestArgs) -> Result<()> {
    let mut records = read_records(&a.input).or_input()?;
    if let Some(lang) = &a.language {
        for r in &mut records {
            r.language = lang.clone();
        }
    }
    if let Some(r) = records.iter().find(|r| !valid_language(&r.language)) {
        return Err(input_error(format!(
            "commit {} has language {:?}; pass --language with a lowercase name",
            r.commit_id, r.language
        )));
    }
    let filter = FilterConfig {
        max_tokens: a.max_tokens,
        english_required: !a.allow_non_english,
    };
    let report = CorpusDir::new(&a.out).ingest(records, &filter)?;
    let value = serde_json::to_value(&report)?;
    write_out(&a.out.join("ingest_report.json"), (serde_json::to_string_pretty(&value)? + "\n").as_bytes())?;
    print_json(&value);
    let snapshot = json!({"language": a.language, "filter": {"max_tokens": filter.max_tokens, "english_required": filter.english_required}});
    run.finish("ingest", snapshot, &[&a.input], &a.out)
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Sampling exponent for the reported language distribution.
    #[arg(long, default_value_t = 0.7)]
    pub alpha: f64,
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    let shards = CorpusDir::new(&a.corpus).read_all().or_input()?;
    let stats = corpus_stats(&shards);
    let dist = language_distribution(&LanguageStats::new(stats.stats.counts.clone()).with_alpha(a.alpha)).or_input()?;
    print_json(&json!({"stats": stats, "sampling": dist}));
    Ok(())
}

fn read_corpus(dir: &Path) -> Result<BTreeMap<String, Vec<CommitRecord>>> {
    let shards = CorpusDir::new(dir).read_all().or_input()?;
    if shards.values().all(Vec::is_empty) {
        return Err(input_error(format!("corpus {} has no commits", dir.display())));
    }
    Ok(shards)
}

/// Loads `explicit` if given, otherwise trains a vocabulary on the records.
fn obtain_vocab(explicit: Option<&Path>, records: &[CommitRecord], size: usize) -> Result<Vocabulary> {
    if let Some(p) = explicit {
        return read_vocab(p).or_input();
    }
    let texts = training_texts(records);
    let trained = Vocabulary::train(texts.iter().map(String::as_str), size).or_input()?;
    Ok(trained.vocab)
}

#[derive(Debug, Args)]
pub struct BuildPretrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// `all` or one of text_infilling, gtm, pl2nl, plnl2pl, nlpl_align, simcse.
    #[arg(long, default_value = "all")]
    pub task: String,
    /// Vocabulary file; trained from the corpus when absent.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Examples per task.
    #[arg(long)]
    pub limit: Option<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long)]
    pub out: PathBuf,
}

fn cmd_build_pretrain(run: &Run, a: BuildPretrainArgs) -> Result<()> {
    let cfg = run.config(&a.overrides, Stage::Pretrain)?;
    let tasks: Vec<PretrainTask> = if a.task == "all" {
        PretrainTask::ALL.to_vec()
    } else {
        vec![a.task.parse().or_input()?]
    };
    let records: Vec<CommitRecord> = read_corpus(&a.corpus)?.into_values().flatten().collect();
    let vocab = obtain_vocab(a.vocab.as_deref(), &records, cfg.vocab_size)?;
    let factory = ExampleFactory::new(SequenceBuilder::new(&vocab, cfg.max_len), cfg.pretrain.noise);
    let limit = a.limit.unwrap_or(usize::MAX);
    let mut lines = String::new();
    let mut tags: BTreeMap<String, usize> = BTreeMap::new();
    let mut skipped = 0usize;
    for task in tasks {
        let mut made = 0;
        for (i, r) in records.iter().enumerate() {
            if made == limit {
                break;
            }
            let mut rng = derive_rng(run.seed, &[task.index() as u64, i as u64]);
            match factory.make(task, r, &mut rng) {
                Ok(ex) => {
                    *tags.entry(ex.task.name().to_string()).or_default() += 1;
                    lines.push_str(&ex.to_json_line());
                    lines.push('\n');
                    made += 1;
                }
                Err(_) => skipped += 1,
            }
        }
    }
    write_out(&a.out.join("examples.jsonl"), lines.as_bytes())?;
    write_out(&a.out.join(VOCAB_FILE), vocab.to_json().as_bytes())?;
    let summary = json!({"examples_by_tag": tags, "skipped": skipped});
    write_out(&a.out.join("summary.json"), (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
    print_json(&summary);
    let snapshot = json!({"task": a.task, "limit": a.limit, "run": cfg});
    run.finish("build-pretrain", snapshot, &[&a.corpus], &a.out)
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Vocabulary file; trained from the corpus when absent.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Continue from the checkpoint already in --out.
    #[arg(long)]
    pub resume: bool,
    /// Stop once this many steps are done, leaving a resumable checkpoint.
    #[arg(long)]
    pub stop_at: Option<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long)]
    pub out: PathBuf,
}

fn loss_row(l: &StepLog) -> String {
    format!("{},{},{},{},{}", l.step, l.task, l.language, l.batch, l.loss)
}

/// Rows of an existing loss curve for steps before `upto`.
fn kept_loss_rows(path: &Path, upto: u64) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).or_input()?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|row| {
            row.split(',')
                .next()
                .and_then(|s| s.parse::<u64>().ok())
                .is_some_and(|s| s < upto)
        })
        .map(str::to_string)
        .collect())
}

fn csv(header: &str, rows: &[String]) -> String {
    let mut out = String::with_capacity(rows.len() * 40);
    out.push_str(header);
    out.push('\n');
    for r in rows {
        out.push_str(r);
        out.push('\n');
    }
    out
}

fn save_run_checkpoint(state: &ModelState, out: &Path) -> Result<()> {
    save_checkpoint(state, &out.join(MODEL_DIR)).context("saving checkpoint")
}

fn load_run_checkpoint(dir: &Path) -> Result<(ModelState, Vocabulary)> {
    let state = load_checkpoint(&dir.join(MODEL_DIR)).or_input()?;
    let vocab = read_vocab(&dir.join(VOCAB_FILE)).or_input()?;
    if vocab.len() != state.config.vocab_size {
        return Err(input_error(format!(
            "vocabulary has {} entries, model expects {}",
            vocab.len(),
            state.config.vocab_size
        )));
    }
    Ok((state, vocab))
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn cmd_pretrain(run: &Run, a: PretrainArgs) -> Result<()> {
    let cfg = run.config(&a.overrides, Stage::Pretrain)?;
    let shards = read_corpus(&a.corpus)?;
    let resuming = a.resume && a.out.join(MODEL_DIR).exists();
    let vocab = if resuming {
        read_vocab(&a.out.join(VOCAB_FILE)).or_input()?
    } else {
        let all: Vec<CommitRecord> = shards.values().flatten().cloned().collect();
        obtain_vocab(a.vocab.as_deref(), &all, cfg.vocab_size)?
    };
    let model_cfg = cfg.model.with_vocab(vocab.len());
    let pcfg = PretrainConfig {
        steps: cfg.pretrain.steps,
        batch_size: cfg.pretrain.batch_size,
        max_len: cfg.max_len,
        alpha: cfg.pretrain.alpha,
        seed: run.seed,
        hyper: cfg.pretrain.hyper(),
        noise: cfg.pretrain.noise,
    };
    let trainer = Pretrainer::new(&pcfg, &shards, &vocab).or_input()?;
    let loss_path = a.out.join("loss.csv");
    let (mut state, mut rows) = if resuming {
        let (state, _) = load_run_checkpoint(&a.out)?;
        if state.config != model_cfg {
            return Err(input_error("checkpoint model configuration differs from the run configuration"));
        }
        let rows = kept_loss_rows(&loss_path, state.step)?;
        info!("resuming at step {}", state.step);
        (state, rows)
    } else {
        (ModelState::init(model_cfg, run.seed)?, Vec::new())
    };
    write_out(&a.out.join(VOCAB_FILE), vocab.to_json().as_bytes())?;
    write_out(&a.out.join("schedule.csv"), trainer.schedule().to_csv().as_bytes())?;
    let every = cfg.pretrain.checkpoint_every;
    let total = pcfg.steps;
    let stop = a.stop_at.map_or(total, |s| s.min(total)) as u64;
    let mut logs: Vec<StepLog> = Vec::new();
    while !trainer.is_done(&state) && state.step < stop {
        let log = trainer.step(&mut state).map_err(|e| match e {
            TrainError::NoExamples { step, task, language } => input_error(format!(
                "no usable {task} example for {language} at step {step}; raise max_len or check the corpus"
            )),
            other => other.into(),
        })?;
        rows.push(loss_row(&log));
        if log.step % 20 == 0 || log.step as usize + 1 == total {
            info!("step {}/{total} {} loss {:.4}", log.step + 1, log.task, log.loss);
        }
        if every > 0 && state.step % every as u64 == 0 && state.step < stop {
            save_run_checkpoint(&state, &a.out)?;
            write_out(&loss_path, csv(LOSS_HEADER, &rows).as_bytes())?;
        }
        logs.push(log);
    }
    save_run_checkpoint(&state, &a.out)?;
    write_out(&loss_path, csv(LOSS_HEADER, &rows).as_bytes())?;

    let window = 20.min(logs.len());
    let mut categories = serde_json::Map::new();
    for c in TaskCategory::ALL {
        let of = |ls: &[StepLog]| mean(ls.iter().filter(|l| l.task.category() == c).map(|l| l.loss));
        categories.insert(
            c.name().into(),
            json!({"first": of(&logs[..window]), "last": of(&logs[logs.len() - window..])}),
        );
    }
    let counts = trainer.schedule().counts();
    let audit: BTreeMap<_, _> = PretrainTask::ALL.iter().map(|t| (t.name(), counts[t.index()])).collect();
    print_json(&json!({"steps": state.step, "schedule": audit, "window_mean_loss": categories}));
    let snapshot = json!({"steps": pcfg.steps, "resume": a.resume, "stop_at": a.stop_at, "run": cfg});
    run.finish("pretrain", snapshot, &[&a.corpus], &a.out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Args)]
pub struct TaskData {
    /// spi, msg, pos or snippet.
    #[arg(long)]
    pub task: FinetuneTask,
    /// Directory written by `pretrain` or `finetune`.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Commits (corpus directory, JSONL or dumps); labeled JSONL for spi.
    #[arg(long)]
    pub data: PathBuf,
}

/// Builds the task's examples and returns the requested split.
fn split_examples(
    t: &TaskData,
    split: SplitName,
    vocab: &Vocabulary,
    max_len: usize,
    seed: u64,
) -> Result<Vec<FinetuneExample>> {
    let items: Vec<(CommitRecord, Option<bool>)> = if t.task == FinetuneTask::SecurityPatch {
        read_labeled(&t.data)
            .or_input()?
            .into_iter()
            .map(|lc| (lc.record, Some(lc.label)))
            .collect()
    } else {
        read_records(&t.data).or_input()?.into_iter().map(|r| (r, None)).collect()
    };
    let builder = SequenceBuilder::new(vocab, max_len).truncating();
    let mut examples = Vec::with_capacity(items.len());
    let mut skipped = 0;
    for (r, label) in &items {
        match build_example(t.task, r, *label, &builder) {
            Ok(e) => examples.push(e),
            Err(_) => skipped += 1,
        }
    }
    if skipped > 0 {
        info!("{skipped} of {} commits do not fit the {} task", items.len(), t.task);
    }
    let s = commitbart::tasks::split_dataset(&examples, |e| e.language.as_str(), seed).or_input()?;
    Ok(match split {
        SplitName::Train => s.train,
        SplitName::Valid => s.valid,
        SplitName::Test => s.test,
    })
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub data: TaskData,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitName,
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long)]
    pub out: PathBuf,
}

fn cmd_finetune(run: &Run, a: FinetuneArgs) -> Result<()> {
    let cfg = run.config(&a.overrides, Stage::Finetune)?;
    let (mut state, vocab) = load_run_checkpoint(&a.data.ckpt)?;
    let examples = split_examples(&a.data, a.split, &vocab, cfg.max_len, run.seed)?;
    let steps = cfg.finetune.steps;
    if steps == 0 {
        return Err(input_error("--steps must be positive"));
    }
    let batches = examples.len().div_ceil(cfg.finetune.batch_size);
    reset_optimizer(&mut state);
    let fcfg = FinetuneConfig {
        epochs: steps.div_ceil(batches),
        max_steps: Some(steps),
        batch_size: cfg.finetune.batch_size,
        seed: run.seed,
        hyper: cfg.finetune.hyper(),
    };
    info!("fine-tuning {} on {} examples for {steps} steps", a.data.task, examples.len());
    let losses = finetune(&mut state, &examples, &fcfg)?;
    save_run_checkpoint(&state, &a.out)?;
    write_out(&a.out.join(VOCAB_FILE), vocab.to_json().as_bytes())?;
    let rows: Vec<String> = losses.iter().enumerate().map(|(e, l)| format!("{e},{l}")).collect();
    write_out(&a.out.join("loss.csv"), csv("epoch,loss", &rows).as_bytes())?;
    print_json(&json!({"task": a.data.task.name(), "examples": examples.len(), "steps": state.step, "epoch_loss": losses}));
    let snapshot = json!({"task": a.data.task.name(), "split": format!("{:?}", a.split).to_lowercase(), "run": cfg});
    run.finish("finetune", snapshot, &[&a.data.ckpt, &a.data.data], &a.out)
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub data: TaskData,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long)]
    pub out: PathBuf,
}

fn cmd_generate(run: &Run, a: GenerateArgs) -> Result<()> {
    let cfg = run.config(&a.overrides, Stage::Finetune)?;
    let (state, vocab) = load_run_checkpoint(&a.data.ckpt)?;
    let examples = split_examples(&a.data, a.split, &vocab, cfg.max_len, run.seed)?;
    info!("decoding {} examples", examples.len());
    let preds = predict(&state, &examples, &vocab, cfg.finetune.max_decode_len, cfg.finetune.beam)?;
    let refs: Vec<Prediction> = examples
        .iter()
        .enumerate()
        .map(|(index, e)| Prediction {
            index,
            language: e.language.clone(),
            text: e.reference(&vocab),
        })
        .collect();
    write_out(&a.out.join("predictions.jsonl"), &to_jsonl(&preds))?;
    write_out(&a.out.join("references.jsonl"), &to_jsonl(&refs))?;
    print_json(&json!({"task": a.data.task.name(), "predictions": preds.len()}));
    let snapshot = json!({"task": a.data.task.name(), "split": format!("{:?}", a.split).to_lowercase(), "run": cfg});
    run.finish("generate", snapshot, &[&a.data.ckpt, &a.data.data], &a.out)
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub task: FinetuneTask,
    /// JSONL of `{"id", "language", "text"}`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Defaults to `references.jsonl` beside the predictions.
    #[arg(long)]
    pub references: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn cmd_evaluate(run: &Run, a: EvaluateArgs) -> Result<()> {
    let ref_path = a
        .references
        .clone()
        .unwrap_or_else(|| a.predictions.with_file_name("references.jsonl"));
    let preds: Vec<Prediction> = commitbart::corpus::read_jsonl(&a.predictions).or_input()?;
    let refs: Vec<Prediction> = commitbart::corpus::read_jsonl(&ref_path).or_input()?;
    let by_id: BTreeMap<usize, &Prediction> = refs.iter().map(|r| (r.index, r)).collect();
    if by_id.len() != refs.len() || preds.len() != refs.len() {
        return Err(input_error(format!(
            "{} predictions for {} references (ids must be unique and match)",
            preds.len(),
            refs.len()
        )));
    }
    let mut pairs = Vec::with_capacity(preds.len());
    for p in &preds {
        let r = by_id
            .get(&p.index)
            .ok_or_else(|| input_error(format!("prediction {} has no reference", p.index)))?;
        pairs.push((p, *r));
    }
    let report = if a.task == FinetuneTask::SecurityPatch {
        let mut rows = Vec::with_capacity(pairs.len());
        for (p, r) in pairs {
            let gold = match parse_spi_prediction(&r.text) {
                SpiLabel::True => true,
                SpiLabel::False => false,
                SpiLabel::Unknown => return Err(input_error(format!("reference {} has no label", r.index))),
            };
            rows.push((r.language.clone(), parse_spi_prediction(&p.text), gold));
        }
        spi_report(&rows).or_input()?
    } else {
        let rows: Vec<_> = pairs
            .into_iter()
            .map(|(p, r)| (r.language.clone(), p.text.clone(), r.text.clone()))
            .collect();
        generation_report(&rows)
    };
    let text = report.to_json();
    write_out(&a.out.join("metrics.json"), text.as_bytes())?;
    print!("{text}");
    if !text.ends_with('\n') {
        println!();
    }
    let snapshot = json!({"task": a.task.name()});
    run.finish("evaluate", snapshot, &[&a.predictions, &ref_path], &a.out)
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// A `run.json` written by an earlier command.
    #[arg(long)]
    pub manifest: PathBuf,
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    let m = RunManifest::read(&a.manifest)
        .with_context(|| format!("reading {}", a.manifest.display()))
        .or_input()?;
    let cli = Cli::try_parse_from(&m.args).or_input()?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(input_error("a manifest cannot replay another replay"));
    }
    info!("replaying `{}`", m.args.join(" "));
    run(cli, m.args)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn language_names_are_restricted() {
        assert!(valid_language("python"));
        assert!(valid_language("c"));
        assert!(!valid_language(""));
        assert!(!valid_language("../x"));
        assert!(!valid_language("Python"));
    }

    #[test]
    fn loss_rows_are_cut_at_the_resume_step() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        fs::write(&p, format!("{LOSS_HEADER}\n0,gtm,c,2,1.5\n1,gtm,c,2,1.4\n2,gtm,c,2,1.3\n")).unwrap();
        assert_eq!(kept_loss_rows(&p, 2).unwrap().len(), 2);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
