//! Masked-LM pre-training, BIO fine-tuning and the multi-seed runner.

mod adam;
mod finetune;
mod masking;
mod pretrain;
mod schedule;

pub use adam::{adam_update, Adam, AdamConfig};
pub use finetune::{
    finetune, gold_tags, multi_run, predict, word_targets, F1Stats, FinetuneConfig, FinetuneOutput, MultiRun, RunFailure,
    RunSummary,
};
pub use masking::{mask_batch, MaskedBatch};
pub use pretrain::{mlm_accuracy, pretrain, write_loss_log, PretrainConfig, PretrainOutput, StepLoss};
pub use schedule::lr_schedule;

use crate::textcodec::EncodedPage;
use crate::rng;
use rand::seq::SliceRandom;

/// Page order for one epoch, from `(seed, "shuffle", epoch)`.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "shuffle", epoch as u64));
    order
}

pub(crate) fn batches<'a>(pages: &'a [EncodedPage], order: &'a [usize], size: usize) -> impl Iterator<Item = Vec<&'a EncodedPage>> + 'a {
    order.chunks(size).map(move |c| c.iter().map(|&i| &pages[i]).collect())
}

pub(crate) fn steps_per_epoch(pages: usize, batch: usize) -> usize {
    pages.div_ceil(batch)
}
