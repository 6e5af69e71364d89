use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::Page;
use crate::error::{invalid, Result};
use crate::model::{Checkpoint, LayoutEncoder, ModelConfig, VocabStamp};
use crate::rng;
use crate::tensor::Tape;
use crate::textcodec::{encode_page, Batch, EncodedPage, Vocab};

use super::adam::{Adam, AdamConfig};
use super::masking::mask_batch;
use super::schedule::lr_schedule;
use super::{batches, epoch_order, steps_per_epoch};

/// Masked-LM pre-training settings. Defaults are the full-scale recipe;
/// desk-scale runs usually raise `base_lr` and `epochs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub warmup_fraction: f64,
    pub mask_rate: f64,
    pub seed: u64,
    /// Sequence cap including CLS and SEP; `None` uses the model's.
    pub max_seq: Option<usize>,
    pub adam: AdamConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 80,
            epochs: 5,
            base_lr: 5e-5,
            warmup_fraction: 0.05,
            mask_rate: 0.15,
            seed: 0,
            max_seq: None,
            adam: AdamConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(invalid("batch size and epochs must be positive"));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(invalid(format!("learning rate {} must be positive", self.base_lr)));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(invalid(format!("warmup fraction {} not in (0,1)", self.warmup_fraction)));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(invalid(format!("mask rate {} not in (0,1)", self.mask_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

pub struct PretrainOutput {
    pub model: LayoutEncoder<f32>,
    pub checkpoint: Checkpoint,
    pub losses: Vec<StepLoss>,
}

impl PretrainOutput {
    /// Mean loss of each epoch that logged at least one step.
    pub fn epoch_means(&self) -> Vec<f64> {
        epoch_means(&self.losses)
    }
}

pub(crate) fn epoch_means(losses: &[StepLoss]) -> Vec<f64> {
    let epochs = losses.iter().map(|l| l.epoch + 1).max().unwrap_or(0);
    (0..epochs)
        .filter_map(|e| {
            let v: Vec<f64> = losses.iter().filter(|l| l.epoch == e).map(|l| l.loss).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

/// Write `step<TAB>lr<TAB>loss` lines.
pub fn write_loss_log<W: Write>(mut w: W, losses: &[StepLoss]) -> Result<()> {
    for l in losses {
        writeln!(w, "{}\t{:e}\t{}", l.step, l.lr, l.loss)?;
    }
    Ok(())
}

pub(crate) fn encode_all(pages: &[Page], vocab: &Vocab, max_seq: usize) -> Result<Vec<EncodedPage>> {
    pages.iter().map(|p| encode_page(p, vocab, max_seq)).collect()
}

pub(crate) fn resolve_max_seq(requested: Option<usize>, model: &ModelConfig) -> Result<usize> {
    let m = requested.unwrap_or(model.max_seq);
    if m < 3 || m > model.max_seq {
        return Err(invalid(format!("max_seq {m} outside 3..={}", model.max_seq)));
    }
    Ok(m)
}

/// Train a fresh encoder with the masked-LM objective. A `vocab_size` of
/// zero in `model_config` is filled in from the vocabulary.
pub fn pretrain(pages: &[Page], vocab: &Vocab, model_config: &ModelConfig, cfg: &PretrainConfig) -> Result<PretrainOutput> {
    cfg.validate()?;
    if pages.is_empty() {
        return Err(invalid("pre-training corpus is empty"));
    }
    let mut mc = model_config.clone();
    if mc.vocab_size == 0 {
        mc.vocab_size = vocab.len();
    }
    if mc.vocab_size != vocab.len() {
        return Err(invalid(format!("model vocab_size {} but vocabulary has {} entries", mc.vocab_size, vocab.len())));
    }
    let max_seq = resolve_max_seq(cfg.max_seq, &mc)?;
    let mut model = LayoutEncoder::<f32>::new(mc, cfg.seed)?;
    let encoded = encode_all(pages, vocab, max_seq)?;
    let mut opt = Adam::new(model.params(), cfg.adam);
    let per_epoch = steps_per_epoch(encoded.len(), cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let mut losses = Vec::with_capacity(total);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(encoded.len(), cfg.seed, epoch);
        for group in batches(&encoded, &order, cfg.batch_size) {
            let lr = lr_schedule(step, total, cfg.warmup_fraction, cfg.base_lr)?;
            let batch = Batch::from_pages(&group)?;
            let masked = mask_batch(&batch, cfg.mask_rate, vocab.len(), &mut rng::stream(cfg.seed, "mask", step as u64))?;
            if masked.selected > 0 {
                let mut drop_rng = rng::stream(cfg.seed, "dropout", step as u64);
                let mut tape = Tape::new();
                let h = model.encode(&mut tape, &masked.batch, None, Some(&mut drop_rng))?;
                let logits = model.mlm_head(&mut tape, h)?;
                let loss = tape.cross_entropy(logits, &masked.targets)?;
                let value = tape.value(loss).item() as f64;
                model.params_mut().zero_grad();
                tape.backward(loss, model.params_mut())?;
                opt.step(model.params_mut(), lr)?;
                losses.push(StepLoss { step, epoch, lr, loss: value });
            }
            step += 1;
        }
    }
    let checkpoint = Checkpoint::from_model(&model, &VocabStamp::of(vocab));
    Ok(PretrainOutput { model, checkpoint, losses })
}

/// Fraction of masked positions whose original token is the arg-max of the
/// MLM logits. Masks come from `(seed, "eval-mask", page)`.
pub fn mlm_accuracy(
    model: &LayoutEncoder<f32>,
    pages: &[Page],
    vocab: &Vocab,
    mask_rate: f64,
    seed: u64,
) -> Result<f64> {
    let encoded = encode_all(pages, vocab, model.config().max_seq)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for (i, page) in encoded.iter().enumerate() {
        let batch = Batch::single(page);
        let masked = mask_batch(&batch, mask_rate, vocab.len(), &mut rng::stream(seed, "eval-mask", i as u64))?;
        if masked.selected == 0 {
            continue;
        }
        let hidden = model.forward(&masked.batch, None)?;
        let logits = model.mlm_logits(&hidden)?;
        let v = vocab.len();
        for (pos, t) in masked.targets.iter().enumerate() {
            if let Some(t) = t {
                let row = &logits.data()[pos * v..(pos + 1) * v];
                hit += (argmax(row) == *t) as usize;
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(invalid("no maskable tokens in corpus"));
    }
    Ok(hit as f64 / total as f64)
}

/// Index of the largest value; the first one on ties.
pub(crate) fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
