use rand::seq::index::sample;
use rand::Rng;

use crate::error::{invalid, Result};
use crate::textcodec::{Batch, MASK, NUM_RESERVED};

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedBatch {
    pub batch: Batch,
    /// Original token id at selected positions, `None` elsewhere.
    pub targets: Vec<Option<usize>>,
    pub selected: usize,
}

/// Corrupt word tokens for masked-LM training.
///
/// Each page selects `max(1, round(mask_rate * candidates))` of its word
/// tokens without replacement. A selected token becomes MASK with
/// probability 0.8, a uniform non-reserved id with probability 0.1 and
/// stays unchanged otherwise. Boxes and positions are left alone. Pages
/// with no candidates select nothing.
pub fn mask_batch<R: Rng + ?Sized>(batch: &Batch, mask_rate: f64, vocab_size: usize, rng: &mut R) -> Result<MaskedBatch> {
    if !(mask_rate > 0.0 && mask_rate < 1.0) {
        return Err(invalid(format!("mask rate {mask_rate} not in (0,1)")));
    }
    let mut out = batch.clone();
    let mut targets = vec![None; batch.tokens()];
    let mut selected = 0;
    for row in 0..batch.batch {
        let base = row * batch.seq;
        let cand: Vec<usize> = (base..base + batch.seq)
            .filter(|&i| batch.is_word(i) && batch.token_ids[i] >= NUM_RESERVED)
            .collect();
        if cand.is_empty() {
            continue;
        }
        let k = ((mask_rate * cand.len() as f64).round() as usize).max(1);
        let mut picks = sample(rng, cand.len(), k).into_vec();
        picks.sort_unstable();
        for p in picks {
            let i = cand[p];
            targets[i] = Some(batch.token_ids[i]);
            let u: f64 = rng.random();
            if u < 0.8 {
                out.token_ids[i] = MASK;
            } else if u < 0.9 && vocab_size > NUM_RESERVED {
                out.token_ids[i] = rng.random_range(NUM_RESERVED..vocab_size);
            }
        }
        selected += k;
    }
    Ok(MaskedBatch { batch: out, targets, selected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BBox;
    use crate::rng;
    use crate::textcodec::EncodedPage;

    fn page(words: usize) -> EncodedPage {
        let len = words + 2;
        EncodedPage {
            token_ids: std::iter::once(2).chain((0..words).map(|i| 10 + i)).chain(std::iter::once(3)).collect(),
            boxes: vec![BBox::ZERO; len],
            positions: (0..len).collect(),
            attn_mask: vec![1; len],
            word_index: std::iter::once(None).chain((0..words).map(Some)).chain(std::iter::once(None)).collect(),
            num_words: words,
        }
    }

    #[test]
    fn selection_counts() {
        let b = Batch::from_pages(&[&page(20), &page(1), &page(0)]).unwrap();
        let m = mask_batch(&b, 0.15, 100, &mut rng::stream(1, "mask", 0)).unwrap();
        let per_row: Vec<usize> =
            (0..3).map(|r| m.targets[r * b.seq..(r + 1) * b.seq].iter().flatten().count()).collect();
        assert_eq!(per_row, [3, 1, 0]);
        assert_eq!(m.selected, 4);
        let m = mask_batch(&Batch::single(&page(1)), 1e-9, 100, &mut rng::stream(1, "mask", 0)).unwrap();
        assert_eq!(m.selected, 1);
    }

    #[test]
    fn only_word_tokens_change() {
        let b = Batch::from_pages(&[&page(30), &page(12)]).unwrap();
        let m = mask_batch(&b, 0.5, 100, &mut rng::stream(4, "mask", 2)).unwrap();
        assert_eq!(m.batch.boxes, b.boxes);
        assert_eq!(m.batch.positions, b.positions);
        assert_eq!(m.batch.attn_mask, b.attn_mask);
        for i in 0..b.tokens() {
            match m.targets[i] {
                Some(t) => {
                    assert!(b.is_word(i));
                    assert_eq!(t, b.token_ids[i]);
                }
                None => assert_eq!(m.batch.token_ids[i], b.token_ids[i]),
            }
        }
    }

    #[test]
    fn deterministic_per_stream() {
        let b = Batch::single(&page(40));
        let a = mask_batch(&b, 0.15, 100, &mut rng::stream(9, "mask", 3)).unwrap();
        assert_eq!(a, mask_batch(&b, 0.15, 100, &mut rng::stream(9, "mask", 3)).unwrap());
        assert_ne!(a, mask_batch(&b, 0.15, 100, &mut rng::stream(9, "mask", 4)).unwrap());
    }

    #[test]
    fn replacement_mix() {
        let b = Batch::single(&page(200));
        let (mut masked, mut random, mut kept) = (0, 0, 0);
        for step in 0..200 {
            let m = mask_batch(&b, 0.15, 1000, &mut rng::stream(0, "mask", step)).unwrap();
            for i in 0..b.tokens() {
                if m.targets[i].is_some() {
                    match m.batch.token_ids[i] {
                        MASK => masked += 1,
                        t if t == b.token_ids[i] => kept += 1,
                        _ => random += 1,
                    }
                }
            }
        }
        let n = (masked + random + kept) as f64;
        assert!((masked as f64 / n - 0.8).abs() < 0.02);
        assert!((random as f64 / n - 0.1).abs() < 0.02);
        assert!((kept as f64 / n - 0.1).abs() < 0.02);
    }

    #[test]
    fn rejects_bad_rate() {
        let b = Batch::single(&page(3));
        assert!(mask_batch(&b, 0.0, 10, &mut rng::stream(0, "mask", 0)).is_err());
        assert!(mask_batch(&b, 1.0, 10, &mut rng::stream(0, "mask", 0)).is_err());
    }
}
