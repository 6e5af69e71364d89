use crate::corpus::{BBox, Page};
use crate::error::{invalid, Result};

use super::vocab::{Vocab, CLS, PAD, SEP};

/// One page as model input: `[CLS] w_1 .. w_k [SEP]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPage {
    pub token_ids: Vec<usize>,
    pub boxes: Vec<BBox>,
    pub positions: Vec<usize>,
    pub attn_mask: Vec<u8>,
    /// Source word for each token; `None` for CLS, SEP and padding.
    pub word_index: Vec<Option<usize>>,
    /// Word count of the source page, including words cut by truncation.
    pub num_words: usize,
}

impl EncodedPage {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Words that made it into the sequence.
    pub fn words_kept(&self) -> usize {
        self.word_index.iter().filter(|w| w.is_some()).count()
    }
}

pub fn encode_page(page: &Page, vocab: &Vocab, max_seq: usize) -> Result<EncodedPage> {
    if max_seq < 3 {
        return Err(invalid("max_seq must be at least 3"));
    }
    let kept = page.words.len().min(max_seq - 2);
    let len = kept + 2;
    let mut token_ids = Vec::with_capacity(len);
    let mut boxes = Vec::with_capacity(len);
    let mut word_index = Vec::with_capacity(len);
    token_ids.push(CLS);
    boxes.push(BBox::ZERO);
    word_index.push(None);
    let norm = page.normalized_boxes()?;
    for (i, (w, b)) in page.words.iter().zip(norm).take(kept).enumerate() {
        token_ids.push(vocab.id(&w.text));
        boxes.push(b);
        word_index.push(Some(i));
    }
    token_ids.push(SEP);
    boxes.push(BBox::FULL);
    word_index.push(None);
    Ok(EncodedPage {
        token_ids,
        boxes,
        positions: (0..len).collect(),
        attn_mask: vec![1; len],
        word_index,
        num_words: page.words.len(),
    })
}

/// A right-padded batch laid out row-major as `[batch, seq]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub batch: usize,
    pub seq: usize,
    pub token_ids: Vec<usize>,
    pub boxes: Vec<BBox>,
    pub positions: Vec<usize>,
    pub attn_mask: Vec<u8>,
    pub word_index: Vec<Option<usize>>,
}

impl Batch {
    pub fn from_pages(pages: &[&EncodedPage]) -> Result<Batch> {
        if pages.is_empty() {
            return Err(invalid("empty batch"));
        }
        let seq = pages.iter().map(|p| p.len()).max().unwrap_or(0);
        let n = pages.len() * seq;
        let mut b = Batch {
            batch: pages.len(),
            seq,
            token_ids: Vec::with_capacity(n),
            boxes: Vec::with_capacity(n),
            positions: Vec::with_capacity(n),
            attn_mask: Vec::with_capacity(n),
            word_index: Vec::with_capacity(n),
        };
        for p in pages {
            let pad = seq - p.len();
            b.token_ids.extend(p.token_ids.iter().copied().chain(std::iter::repeat_n(PAD, pad)));
            b.boxes.extend(p.boxes.iter().copied().chain(std::iter::repeat_n(BBox::ZERO, pad)));
            b.positions.extend(0..seq);
            b.attn_mask.extend(p.attn_mask.iter().copied().chain(std::iter::repeat_n(0, pad)));
            b.word_index.extend(p.word_index.iter().copied().chain(std::iter::repeat_n(None, pad)));
        }
        Ok(b)
    }

    pub fn single(page: &EncodedPage) -> Batch {
        Self::from_pages(&[page]).expect("one page")
    }

    pub fn tokens(&self) -> usize {
        self.batch * self.seq
    }

    /// Positions holding a real word token (not CLS, SEP or padding).
    pub fn is_word(&self, i: usize) -> bool {
        self.word_index[i].is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RawBox, Word};
    use crate::textcodec::{build_vocab, UNK};

    fn page(words: &[&str]) -> Page {
        Page {
            doc_id: "p".into(),
            width: 850,
            height: 1100,
            words: words
                .iter()
                .enumerate()
                .map(|(i, w)| Word::new(*w, RawBox::new(85 * i as u32, 110, 85 * i as u32 + 80, 220)))
                .collect(),
            tags: None,
        }
    }

    fn check_invariants(e: &EncodedPage, max_seq: usize) {
        let s = e.len();
        assert!(s <= max_seq);
        assert_eq!(e.boxes.len(), s);
        assert_eq!(e.positions.len(), s);
        assert_eq!(e.attn_mask.len(), s);
        assert_eq!(e.word_index.len(), s);
        assert_eq!(e.token_ids[0], CLS);
        assert_eq!(e.token_ids[s - 1], SEP);
        assert_eq!(e.boxes[0], BBox::ZERO);
        assert_eq!(e.boxes[s - 1], BBox::FULL);
        assert_eq!(s, e.num_words.min(max_seq - 2) + 2);
    }

    #[test]
    fn empty_page() {
        let v = build_vocab(&[page(&["x"])], 10, 1, true).unwrap();
        let e = encode_page(&page(&[]), &v, 8).unwrap();
        assert_eq!(e.token_ids, vec![CLS, SEP]);
        assert_eq!(e.attn_mask, vec![1, 1]);
        check_invariants(&e, 8);
    }

    #[test]
    fn truncates_to_fit() {
        let p = page(&["a", "b", "c"]);
        let v = build_vocab(std::slice::from_ref(&p), 10, 1, true).unwrap();
        let e = encode_page(&p, &v, 4).unwrap();
        assert_eq!(e.token_ids, vec![CLS, v.id("a"), v.id("b"), SEP]);
        assert_eq!(e.word_index, vec![None, Some(0), Some(1), None]);
        assert_eq!(e.words_kept(), 2);
        check_invariants(&e, 4);
        assert!(encode_page(&p, &v, 2).is_err());
    }

    #[test]
    fn unknown_word_keeps_box() {
        let v = build_vocab(&[page(&["a"])], 10, 1, true).unwrap();
        let e = encode_page(&page(&["a", "zzz"]), &v, 16).unwrap();
        assert_eq!(e.token_ids[2], UNK);
        assert_eq!(e.boxes[2], BBox::new(100, 100, 194, 200).unwrap());
        check_invariants(&e, 16);
    }

    #[test]
    fn batch_padding() {
        let v = build_vocab(&[page(&["a"])], 10, 1, true).unwrap();
        let a = encode_page(&page(&["a"]), &v, 16).unwrap();
        let b = encode_page(&page(&["a", "a", "a"]), &v, 16).unwrap();
        let batch = Batch::from_pages(&[&a, &b]).unwrap();
        assert_eq!((batch.batch, batch.seq), (2, 5));
        assert_eq!(&batch.attn_mask[..5], &[1, 1, 1, 0, 0]);
        assert_eq!(&batch.token_ids[3..5], &[PAD, PAD]);
        assert_eq!(&batch.positions[..5], &[0, 1, 2, 3, 4]);
        assert!(Batch::from_pages(&[]).is_err());
    }
}
