use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelSet, Page};
use crate::error::{invalid, Result};
use crate::metrics::{evaluate, per_document_scores, EvalReport};
use crate::model::{Checkpoint, LayoutEncoder};
use crate::rng;
use crate::tensor::Tape;
use crate::textcodec::{Batch, EncodedPage, Tag, Vocab};

use super::adam::{Adam, AdamConfig};
use super::pretrain::{argmax, encode_all, resolve_max_seq, StepLoss};
use super::{batches, epoch_order};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Constant learning rate.
    pub lr: f64,
    pub seed: u64,
    pub max_seq: Option<usize>,
    pub adam: AdamConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { batch_size: 16, epochs: 10, lr: 5e-5, seed: 0, max_seq: None, adam: AdamConfig::default() }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(invalid("batch size and epochs must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

/// Outcome of one fine-tuning run. Scores are `None` without an eval set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub final_loss: Option<f64>,
    pub seconds: f64,
    #[serde(skip)]
    pub report: Option<EvalReport>,
    /// Per-page F1 on the eval set, in corpus order.
    #[serde(skip)]
    pub doc_scores: Vec<f64>,
}

pub struct FinetuneOutput {
    pub model: LayoutEncoder<f32>,
    pub checkpoint: Checkpoint,
    pub losses: Vec<StepLoss>,
    pub summary: RunSummary,
}

/// Tag index for each word token of `enc`, `None` at CLS, SEP and padding.
pub fn word_targets(page: &Page, enc: &EncodedPage, labels: &LabelSet) -> Result<Vec<Option<usize>>> {
    let tags = page.tags.as_ref().ok_or_else(|| invalid(format!("page {} has no tags", page.doc_id)))?;
    enc.word_index
        .iter()
        .map(|w| match w {
            None => Ok(None),
            Some(i) => {
                let tag = Tag::parse(&tags[*i])?;
                labels
                    .encode_tag(&tag)
                    .map(Some)
                    .ok_or_else(|| invalid(format!("page {}: tag {tag} not in label set", page.doc_id)))
            }
        })
        .collect()
}

fn check_labeled(pages: &[Page], labels: &LabelSet, what: &str) -> Result<()> {
    if pages.is_empty() {
        return Err(invalid(format!("{what} corpus is empty")));
    }
    for p in pages {
        if !p.is_labeled() {
            return Err(invalid(format!("{what} page {} is unlabeled", p.doc_id)));
        }
        p.validate(Some(labels))?;
    }
    Ok(())
}

/// Fine-tune every weight of `ckpt` plus a fresh tagging head.
pub fn finetune(
    ckpt: &Checkpoint,
    vocab: &Vocab,
    train: &[Page],
    labels: &LabelSet,
    cfg: &FinetuneConfig,
    eval: Option<&[Page]>,
) -> Result<FinetuneOutput> {
    let start = Instant::now();
    cfg.validate()?;
    ckpt.check_vocab(vocab)?;
    check_labeled(train, labels, "training")?;
    if let Some(e) = eval {
        check_labeled(e, labels, "evaluation")?;
    }
    let mut model: LayoutEncoder<f32> = ckpt.to_model()?;
    model.init_ner_head(labels, cfg.seed)?;
    let max_seq = resolve_max_seq(cfg.max_seq, model.config())?;
    let encoded = encode_all(train, vocab, max_seq)?;
    let targets: Vec<Vec<Option<usize>>> =
        train.iter().zip(&encoded).map(|(p, e)| word_targets(p, e, labels)).collect::<Result<_>>()?;
    let mut opt = Adam::new(model.params(), cfg.adam);
    let mut losses = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(encoded.len(), cfg.seed, epoch);
        for (group, idx) in batches(&encoded, &order, cfg.batch_size).zip(order.chunks(cfg.batch_size)) {
            let batch = Batch::from_pages(&group)?;
            let mut tgt = Vec::with_capacity(batch.tokens());
            for &i in idx {
                tgt.extend(targets[i].iter().copied());
                tgt.resize(tgt.len() + batch.seq - targets[i].len(), None);
            }
            let mut drop_rng = rng::stream(cfg.seed, "dropout", step as u64);
            let mut tape = Tape::new();
            let h = model.encode(&mut tape, &batch, None, Some(&mut drop_rng))?;
            let logits = model.ner_head(&mut tape, h)?;
            let loss = tape.cross_entropy(logits, &tgt)?;
            let value = tape.value(loss).item() as f64;
            model.params_mut().zero_grad();
            tape.backward(loss, model.params_mut())?;
            opt.step(model.params_mut(), cfg.lr)?;
            losses.push(StepLoss { step, epoch, lr: cfg.lr, loss: value });
            step += 1;
        }
    }
    let (report, doc_scores) = match eval {
        Some(pages) => {
            let pred = predict(&model, pages, vocab, None, cfg.batch_size)?;
            let gold = gold_tags(pages);
            (Some(evaluate(&pred, &gold, labels)?), per_document_scores(&pred, &gold, labels)?)
        }
        None => (None, Vec::new()),
    };
    let checkpoint = Checkpoint::from_model(&model, &ckpt.vocab);
    let summary = RunSummary {
        seed: cfg.seed,
        f1: report.as_ref().map(|r| r.micro.f1),
        precision: report.as_ref().map(|r| r.micro.precision),
        recall: report.as_ref().map(|r| r.micro.recall),
        final_loss: losses.last().map(|l| l.loss),
        seconds: start.elapsed().as_secs_f64(),
        report,
        doc_scores,
    };
    Ok(FinetuneOutput { model, checkpoint, losses, summary })
}

pub fn gold_tags(pages: &[Page]) -> Vec<Vec<String>> {
    pages.iter().map(|p| p.tags.clone().unwrap_or_default()).collect()
}

/// Arg-max BIO tag for every word. Words cut by `max_seq` are tagged O.
pub fn predict(
    model: &LayoutEncoder<f32>,
    pages: &[Page],
    vocab: &Vocab,
    k_layers: Option<usize>,
    batch_size: usize,
) -> Result<Vec<Vec<String>>> {
    let labels = model.ner_labels().ok_or_else(|| invalid("model has no tagging head"))?;
    let names = labels.tag_names();
    let encoded = encode_all(pages, vocab, model.config().max_seq)?;
    let mut out = Vec::with_capacity(pages.len());
    for chunk in encoded.chunks(batch_size.max(1)) {
        let refs: Vec<&EncodedPage> = chunk.iter().collect();
        let batch = Batch::from_pages(&refs)?;
        let logits = model.ner_logits(&model.forward(&batch, k_layers)?)?;
        let t = names.len();
        for (r, enc) in chunk.iter().enumerate() {
            let mut tags = vec!["O".to_string(); enc.num_words];
            for (j, w) in enc.word_index.iter().enumerate() {
                if let Some(w) = w {
                    let at = (r * batch.seq + j) * t;
                    tags[*w] = names[argmax(&logits.data()[at..at + t])].clone();
                }
            }
            out.push(tags);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub error: String,
}

/// Spread of micro-F1 across successful runs; `std` is the sample
/// standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Stats {
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl F1Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Self { runs: values.len(), mean, std, min, max })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiRun {
    pub runs: Vec<RunSummary>,
    pub failures: Vec<RunFailure>,
    pub f1: Option<F1Stats>,
    /// Set when at least one seed failed.
    pub partial: bool,
}

/// Fine-tune once per seed, in parallel, and summarize F1 on `eval`.
/// Results come back in seed-list order. Failed seeds are recorded and the
/// rest still run.
pub fn multi_run(
    ckpt: &Checkpoint,
    vocab: &Vocab,
    train: &[Page],
    labels: &LabelSet,
    base: &FinetuneConfig,
    seeds: &[u64],
    eval: &[Page],
) -> Result<MultiRun> {
    if seeds.len() < 2 {
        return Err(invalid(format!("multi-run needs at least two seeds, got {}", seeds.len())));
    }
    let results: Vec<(u64, Result<RunSummary>)> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = FinetuneConfig { seed, ..base.clone() };
            (seed, finetune(ckpt, vocab, train, labels, &cfg, Some(eval)).map(|o| o.summary))
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(s) => runs.push(s),
            Err(e) => failures.push(RunFailure { seed, error: e.to_string() }),
        }
    }
    let f1s: Vec<f64> = runs.iter().filter_map(|r| r.f1).collect();
    Ok(MultiRun { f1: F1Stats::of(&f1s), partial: !failures.is_empty(), runs, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_stats() {
        let s = F1Stats::of(&[0.5, 0.7, 0.9]).unwrap();
        assert!((s.mean - 0.7).abs() < 1e-15);
        assert!((s.std - 0.2).abs() < 1e-12);
        assert_eq!((s.min, s.max, s.runs), (0.5, 0.9, 3));
        assert_eq!(F1Stats::of(&[0.8, 0.8]).unwrap().std, 0.0);
        assert!(F1Stats::of(&[]).is_none());
    }
}
