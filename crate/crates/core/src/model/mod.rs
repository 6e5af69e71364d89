//! The layout-aware encoder, its configuration and checkpoint format.

mod checkpoint;
mod config;
mod encoder;

pub use checkpoint::{Checkpoint, NamedTensor, VocabStamp, FORMAT_VERSION, MAGIC};
pub use config::{ModelConfig, COORD_BINS};
pub use encoder::{parameter_layout, LayoutEncoder};
