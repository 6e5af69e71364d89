//! Word vocabulary, page encoding and the BIO tag codec.

mod bio;
mod encode;
mod vocab;

pub use bio::{spans_to_tags, tags_to_spans, Mention, Tag};
pub use encode::{encode_page, Batch, EncodedPage};
pub use vocab::{build_vocab, Vocab, CLS, MASK, NUM_RESERVED, PAD, RESERVED_TOKENS, SEP, UNK};
