//! Shared setup for the encoder benchmarks.

use layoutlab::model::{LayoutEncoder, ModelConfig};
use layoutlab::synth::{synth_pages, SynthConfig};
use layoutlab::textcodec::{build_vocab, encode_page, EncodedPage};

/// A randomly initialized desk-size encoder with `layers` layers and a few
/// encoded synthetic pages to feed it.
pub fn desk_model(layers: usize, pages: usize) -> (LayoutEncoder<f32>, Vec<EncodedPage>) {
    let (raw, _) = synth_pages(&SynthConfig { pages, seed: 0, ..SynthConfig::default() });
    let vocab = build_vocab(&raw, 10_000, 1, true).expect("non-empty corpus");
    let cfg = ModelConfig { vocab_size: vocab.len(), layers, ..ModelConfig::default() };
    let model = LayoutEncoder::new(cfg, 0).expect("valid config");
    let encoded = raw.iter().map(|p| encode_page(p, &vocab, 128).expect("valid page")).collect();
    (model, encoded)
}
