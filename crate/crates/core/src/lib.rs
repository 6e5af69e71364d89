//! Layout-aware document NER, built from scratch: an encoder over words
//! and their page boxes, masked-language-model pre-training, BIO tagging,
//! mention-level scoring, randomization significance tests and an
//! encoder-depth latency harness.

pub mod bench;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod textcodec;
pub mod train;

pub use error::{Error, Result};
pub use corpus::{BBox, LabelSet, Page, RawBox, Word};
pub use metrics::{EvalReport, SignificanceResult};
pub use model::{Checkpoint, LayoutEncoder, ModelConfig};
pub use textcodec::{Mention, Tag, Vocab};
pub use train::{FinetuneConfig, PretrainConfig, RunSummary};
pub use bench::TimingReport;
