use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use layoutlab::bench::{depth_sweep, sweep_table, TimingOptions};
use layoutlab::corpus::{label_stats, parse_corpus, write_corpus, LabelSet, Page};
use layoutlab::metrics::{approx_rand_test, evaluate, exact_rand_test, per_document_scores};
use layoutlab::model::{Checkpoint, LayoutEncoder, ModelConfig};
use layoutlab::textcodec::{build_vocab as make_vocab, Vocab};
use layoutlab::train::{
    finetune as run_finetune, gold_tags, multi_run, predict, pretrain as run_pretrain, write_loss_log,
    FinetuneConfig, PretrainConfig,
};

use crate::{BenchArgs, EvalArgs, FinetuneArgs, Format, ModelInput, MultirunArgs, PretrainArgs, TrainingArgs};

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Vocabulary written next to a checkpoint.
fn sidecar(ckpt: &Path) -> PathBuf {
    with_suffix(ckpt, ".vocab")
}

fn load_labels(path: &Path) -> Result<LabelSet> {
    LabelSet::load(path).with_context(|| format!("labels {}", path.display()))
}

fn load_corpus(path: &Path, labels: Option<&LabelSet>) -> Result<Vec<Page>> {
    parse_corpus(path, labels).with_context(|| format!("corpus {}", path.display()))
}

fn load_vocab(explicit: Option<&Path>, ckpt: &Path) -> Result<Vocab> {
    let path = explicit.map(Path::to_path_buf).unwrap_or_else(|| sidecar(ckpt));
    Vocab::load(&path).with_context(|| format!("vocabulary {}", path.display()))
}

/// Checkpoint and vocabulary, cut to `--layers` when given.
fn load_model(m: &ModelInput) -> Result<(Checkpoint, Vocab)> {
    let mut ckpt = Checkpoint::load(&m.ckpt).with_context(|| format!("checkpoint {}", m.ckpt.display()))?;
    let vocab = load_vocab(m.vocab.as_deref(), &m.ckpt)?;
    ckpt.check_vocab(&vocab)?;
    if let Some(k) = m.layers {
        ckpt = ckpt.truncate_layers(k)?;
    }
    Ok((ckpt, vocab))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_scores(path: &Path, scores: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).with_context(|| format!("writing {}", path.display()))?);
    for s in scores {
        writeln!(w, "{s}")?;
    }
    w.flush()?;
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("scores {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().with_context(|| format!("{} line {}: bad score {l:?}", path.display(), i + 1))
        })
        .collect()
}

pub fn ingest(input: &Path, format: Format, labels: &Path, out: &Path) -> Result<()> {
    let labels = load_labels(labels)?;
    let pages = match format {
        Format::Jsonl => load_corpus(input, Some(&labels))?,
    };
    write_corpus(out, &pages)?;
    let labeled = pages.iter().filter(|p| p.is_labeled()).count();
    println!("ingested {} pages ({labeled} labeled) into {}", pages.len(), out.display());
    Ok(())
}

pub fn stats(data: &Path, labels: &Path, json: bool) -> Result<()> {
    let labels = load_labels(labels)?;
    let pages = load_corpus(data, Some(&labels))?;
    let s = label_stats(&pages, &labels)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&s)?);
    } else {
        print!("{}", s.to_table());
    }
    Ok(())
}

pub fn build_vocab(data: &Path, max_size: usize, min_freq: usize, lowercase: bool, out: &Path) -> Result<()> {
    let pages = load_corpus(data, None)?;
    let vocab = make_vocab(&pages, max_size, min_freq, lowercase)?;
    vocab.save(out)?;
    println!("vocabulary of {} entries (fingerprint {}) written to {}", vocab.len(), vocab.fingerprint(), out.display());
    Ok(())
}

pub fn pretrain(a: &PretrainArgs) -> Result<()> {
    let pages = load_corpus(&a.data, None)?;
    let vocab = Vocab::load(&a.vocab).with_context(|| format!("vocabulary {}", a.vocab.display()))?;
    let model = match &a.model_config {
        Some(p) => ModelConfig::load(p).with_context(|| format!("model config {}", p.display()))?,
        None => ModelConfig::default(),
    };
    let cfg = PretrainConfig {
        batch_size: a.batch,
        epochs: a.epochs,
        base_lr: a.lr,
        warmup_fraction: a.warmup_frac,
        mask_rate: a.mask_rate,
        seed: a.seed,
        ..PretrainConfig::default()
    };
    let out = run_pretrain(&pages, &vocab, &model, &cfg)?;
    out.checkpoint.save(&a.out)?;
    vocab.save(sidecar(&a.out))?;
    let log = a.loss_log.clone().unwrap_or_else(|| with_suffix(&a.out, ".loss.tsv"));
    write_loss_log(BufWriter::new(fs::File::create(&log)?), &out.losses)?;
    let means = out.epoch_means();
    println!(
        "pre-trained {} layers for {} updates; epoch loss {:.4} -> {:.4}",
        out.model.config().layers,
        out.losses.len(),
        means.first().copied().unwrap_or(f64::NAN),
        means.last().copied().unwrap_or(f64::NAN)
    );
    println!("checkpoint {}, loss log {}", a.out.display(), log.display());
    Ok(())
}

struct TrainingData {
    labels: LabelSet,
    train: Vec<Page>,
    eval: Option<Vec<Page>>,
}

fn training_data(t: &TrainingArgs) -> Result<TrainingData> {
    let labels = load_labels(&t.labels)?;
    let train = load_corpus(&t.data, Some(&labels))?;
    let eval = t.eval_data.as_deref().map(|p| load_corpus(p, Some(&labels))).transpose()?;
    Ok(TrainingData { labels, train, eval })
}

fn finetune_config(t: &TrainingArgs, seed: u64) -> FinetuneConfig {
    FinetuneConfig { batch_size: t.batch, epochs: t.epochs, lr: t.lr, seed, ..FinetuneConfig::default() }
}

pub fn finetune(a: &FinetuneArgs) -> Result<()> {
    let (ckpt, vocab) = load_model(&a.model)?;
    let d = training_data(&a.train)?;
    let cfg = finetune_config(&a.train, a.seed);
    let out = run_finetune(&ckpt, &vocab, &d.train, &d.labels, &cfg, d.eval.as_deref())?;
    out.checkpoint.save(&a.out)?;
    vocab.save(sidecar(&a.out))?;
    if let Some(r) = &out.summary.report {
        print!("{}", r.to_table());
    }
    println!("{}", serde_json::to_string(&out.summary)?);
    Ok(())
}

/// `A..B` with B exclusive, or `a,b,c`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        (a..b).collect()
    } else {
        s.split(',').map(|x| x.trim().parse::<u64>()).collect::<Result<_, _>>()?
    };
    if seeds.len() < 2 {
        bail!("need at least two seeds, got {s:?}");
    }
    Ok(seeds)
}

pub fn multirun(a: &MultirunArgs) -> Result<()> {
    let seeds = parse_seeds(&a.seeds).with_context(|| format!("--seeds {}", a.seeds))?;
    let (ckpt, vocab) = load_model(&a.model)?;
    let d = training_data(&a.train)?;
    let eval = d.eval.as_deref().unwrap_or(&d.train);
    let cfg = finetune_config(&a.train, 0);
    let result = multi_run(&ckpt, &vocab, &d.train, &d.labels, &cfg, &seeds, eval)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut runs = BufWriter::new(fs::File::create(a.out.join("runs.jsonl"))?);
    for r in &result.runs {
        writeln!(runs, "{}", serde_json::to_string(r)?)?;
        write_scores(&a.out.join(format!("scores_seed{}.txt", r.seed)), &r.doc_scores)?;
    }
    runs.flush()?;
    write_json(&a.out.join("summary.json"), &serde_json::json!({
        "seeds": seeds,
        "f1": result.f1,
        "failures": result.failures,
        "partial": result.partial,
    }))?;
    for f in &result.failures {
        eprintln!("warning: seed {} failed: {}", f.seed, f.error);
    }
    let Some(s) = &result.f1 else {
        bail!("no run produced a score");
    };
    println!(
        "{} runs: F1 mean {:.4} std {:.4} min {:.4} max {:.4}{}",
        s.runs,
        s.mean,
        s.std,
        s.min,
        s.max,
        if result.partial { " (partial)" } else { "" }
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let (ckpt, vocab) = load_model(&a.model)?;
    let labels = load_labels(&a.labels)?;
    if ckpt.labels.as_ref() != Some(&labels) {
        bail!("checkpoint was not fine-tuned for the label set in {}", a.labels.display());
    }
    let pages = load_corpus(&a.data, Some(&labels))?;
    if let Some(p) = pages.iter().find(|p| !p.is_labeled()) {
        bail!("page {} is unlabeled", p.doc_id);
    }
    let model: LayoutEncoder<f32> = ckpt.to_model()?;
    let pred = predict(&model, &pages, &vocab, None, 16)?;
    let gold = gold_tags(&pages);
    let report = evaluate(&pred, &gold, &labels)?;
    print!("{}", report.to_table());
    println!("layers: {}", model.config().layers);
    if let Some(p) = &a.scores_out {
        write_scores(p, &per_document_scores(&pred, &gold, &labels)?)?;
    }
    if let Some(p) = &a.json {
        write_json(p, &report)?;
    }
    Ok(())
}

pub fn significance(a: &Path, b: &Path, iterations: u64, seed: u64, exact: bool) -> Result<()> {
    let (sa, sb) = (read_scores(a)?, read_scores(b)?);
    let r = if exact { exact_rand_test(&sa, &sb)? } else { approx_rand_test(&sa, &sb, iterations, seed)? };
    println!(
        "observed difference {:.6}; {} of {} {} at least as large",
        r.observed_diff,
        r.exceed_count,
        r.iterations,
        if exact { "assignments" } else { "iterations" }
    );
    println!("{}", r.banner());
    println!("{}", serde_json::to_string(&r)?);
    Ok(())
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt).with_context(|| format!("checkpoint {}", a.ckpt.display()))?;
    let vocab = load_vocab(a.vocab.as_deref(), &a.ckpt)?;
    ckpt.check_vocab(&vocab)?;
    let labels = a.labels.as_deref().map(load_labels).transpose()?;
    if labels.is_some() && ckpt.labels != labels {
        bail!("checkpoint was not fine-tuned for the given label set");
    }
    let pages = load_corpus(&a.data, labels.as_ref())?;
    let model: LayoutEncoder<f32> = ckpt.to_model()?;
    let depths = if a.layers.is_empty() { vec![model.config().layers] } else { a.layers.clone() };
    let opts = TimingOptions { warmup: a.warmup, reps: a.reps, batch_size: a.batch, threads: a.threads };
    let rows = depth_sweep(&model, &pages, &vocab, &depths, &opts, labels.as_ref())?;
    print!("{}", sweep_table(&rows));
    if let Some(p) = &a.json {
        write_json(p, &rows)?;
    }
    Ok(())
}
