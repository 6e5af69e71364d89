//! Per-page inference latency across encoder depths.
//!
//! Pages are encoded before the clock starts, so the measured region covers
//! the forward pass alone.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelSet, Page};
use crate::error::{invalid, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::model::LayoutEncoder;
use crate::textcodec::{encode_page, Batch, EncodedPage, Vocab};
use crate::train::{gold_tags, predict};

/// Something that can run a forward pass at a given depth.
pub trait Infer: Sync {
    fn depth(&self) -> usize;
    fn max_seq(&self) -> usize;
    fn infer(&self, batch: &Batch, k_layers: usize) -> Result<()>;
}

impl Infer for LayoutEncoder<f32> {
    fn depth(&self) -> usize {
        self.config().layers
    }

    fn max_seq(&self) -> usize {
        self.config().max_seq
    }

    fn infer(&self, batch: &Batch, k_layers: usize) -> Result<()> {
        let h = self.forward(batch, Some(k_layers))?;
        if self.ner_labels().is_some() {
            std::hint::black_box(self.ner_logits(&h)?);
        } else {
            std::hint::black_box(h);
        }
        Ok(())
    }
}

/// A model that does nothing, for measuring harness overhead.
#[derive(Clone, Copy, Debug)]
pub struct NoOp {
    pub layers: usize,
    pub max_seq: usize,
}

impl Infer for NoOp {
    fn depth(&self) -> usize {
        self.layers
    }

    fn max_seq(&self) -> usize {
        self.max_seq
    }

    fn infer(&self, batch: &Batch, _k: usize) -> Result<()> {
        std::hint::black_box(batch);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingOptions {
    pub warmup: usize,
    pub reps: usize,
    /// Pages per forward pass.
    pub batch_size: usize,
    /// Batches run concurrently when above one.
    pub threads: usize,
}

impl Default for TimingOptions {
    fn default() -> Self {
        Self { warmup: 3, reps: 20, batch_size: 1, threads: 1 }
    }
}

/// Latency statistics in milliseconds per page.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub layers: usize,
    pub pages: usize,
    pub warmup: usize,
    pub reps: usize,
    pub batch_size: usize,
    pub max_seq: usize,
    pub threads: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
}

pub fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Nearest-rank percentile of sorted samples, `q` in (0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn encode_for_bench(pages: &[Page], vocab: &Vocab, max_seq: usize) -> Result<Vec<EncodedPage>> {
    if pages.is_empty() {
        return Err(invalid("benchmark corpus is empty"));
    }
    pages.iter().map(|p| encode_page(p, vocab, max_seq)).collect()
}

/// Run `warmup` untimed passes over `pages`, then `reps` timed ones. Each
/// forward pass contributes one sample per page it covers.
pub fn time_inference<M: Infer>(model: &M, pages: &[EncodedPage], k_layers: usize, opts: &TimingOptions) -> Result<TimingReport> {
    if opts.reps < 3 || opts.warmup < 1 {
        return Err(invalid(format!("need reps >= 3 and warmup >= 1, got {} and {}", opts.reps, opts.warmup)));
    }
    if k_layers == 0 || k_layers > model.depth() {
        return Err(invalid(format!("k_layers {k_layers} outside 1..={}", model.depth())));
    }
    if pages.is_empty() || opts.batch_size == 0 || opts.threads == 0 {
        return Err(invalid("need pages, a positive batch size and at least one thread"));
    }
    let batches: Vec<Batch> = pages
        .chunks(opts.batch_size)
        .map(|c| Batch::from_pages(&c.iter().collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let run = |b: &Batch| -> Result<f64> {
        let t = Instant::now();
        model.infer(b, k_layers)?;
        Ok(t.elapsed().as_secs_f64() * 1e3 / b.batch as f64)
    };
    let pass = || -> Result<Vec<(f64, usize)>> {
        if opts.threads == 1 {
            batches.iter().map(|b| run(b).map(|ms| (ms, b.batch))).collect()
        } else {
            batches.par_iter().map(|b| run(b).map(|ms| (ms, b.batch))).collect()
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    let mut samples = Vec::with_capacity(opts.reps * pages.len());
    pool.install(|| -> Result<()> {
        for _ in 0..opts.warmup {
            pass()?;
        }
        for _ in 0..opts.reps {
            for (ms, n) in pass()? {
                samples.extend(std::iter::repeat_n(ms, n));
            }
        }
        Ok(())
    })?;
    samples.sort_by(f64::total_cmp);
    Ok(TimingReport {
        layers: k_layers,
        pages: pages.len(),
        warmup: opts.warmup,
        reps: opts.reps,
        batch_size: opts.batch_size,
        max_seq: model.max_seq(),
        threads: opts.threads,
        mean_ms: samples.iter().sum::<f64>() / samples.len() as f64,
        median_ms: median(&samples),
        p95_ms: percentile(&samples, 0.95),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub timing: TimingReport,
    pub eval: Option<EvalReport>,
}

/// Time and, when `labels` is given, score the model at each depth.
pub fn depth_sweep(
    model: &LayoutEncoder<f32>,
    pages: &[Page],
    vocab: &Vocab,
    depths: &[usize],
    opts: &TimingOptions,
    labels: Option<&LabelSet>,
) -> Result<Vec<SweepRow>> {
    if depths.is_empty() {
        return Err(invalid("no depths to sweep"));
    }
    let encoded = encode_for_bench(pages, vocab, model.config().max_seq)?;
    let gold = labels.map(|_| gold_tags(pages));
    depths
        .iter()
        .map(|&k| {
            let timing = time_inference(model, &encoded, k, opts)?;
            let eval = match (labels, &gold) {
                (Some(l), Some(g)) => {
                    let pred = predict(model, pages, vocab, Some(k), opts.batch_size.max(8))?;
                    Some(evaluate(&pred, g, l)?)
                }
                _ => None,
            };
            Ok(SweepRow { timing, eval })
        })
        .collect()
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = format!("{:>6} {:>6} {:>10} {:>10} {:>10} {:>8}\n", "layers", "pages", "mean_ms", "median_ms", "p95_ms", "F1");
    for r in rows {
        let t = &r.timing;
        let f1 = r.eval.as_ref().map_or("-".to_string(), |e| format!("{:.4}", e.micro.f1));
        let _ = writeln!(
            s,
            "{:>6} {:>6} {:>10.3} {:>10.3} {:>10.3} {:>8}",
            t.layers, t.pages, t.mean_ms, t.median_ms, t.p95_ms, f1
        );
    }
    if let Some(t) = rows.first().map(|r| &r.timing) {
        let _ = writeln!(
            s,
            "batch {} max_seq {} warmup {} reps {} threads {}",
            t.batch_size, t.max_seq, t.warmup, t.reps, t.threads
        );
    }
    s
}
