use std::fmt::Write as _;
use std::path::Path;

use crate::error::{invalid, Error, Result};

/// Number of rows in each spatial table: the grid `0..=1000`.
pub const COORD_BINS: usize = 1001;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_seq: usize,
    pub coord_bins: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    /// Desk-scale encoder; `vocab_size` is filled in from the vocabulary.
    fn default() -> Self {
        Self {
            vocab_size: 0,
            hidden: 128,
            layers: 4,
            heads: 4,
            ff_dim: 512,
            max_seq: 128,
            coord_bins: COORD_BINS,
            dropout: 0.1,
            layer_norm_eps: 1e-12,
            init_std: 0.02,
        }
    }
}

const KEYS: [&str; 10] = [
    "vocab_size",
    "hidden",
    "layers",
    "heads",
    "ff_dim",
    "max_seq",
    "coord_bins",
    "dropout",
    "layer_norm_eps",
    "init_std",
];

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(invalid(format!("model config: {m}")));
        if self.vocab_size < crate::textcodec::NUM_RESERVED {
            return fail(format!("vocab_size {} below the reserved token count", self.vocab_size));
        }
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return fail(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        if self.layers == 0 {
            return fail("layers must be at least 1".into());
        }
        if self.ff_dim == 0 {
            return fail("ff_dim must be positive".into());
        }
        if self.max_seq < 3 {
            return fail("max_seq must be at least 3".into());
        }
        if self.coord_bins != COORD_BINS {
            return fail(format!("coord_bins must be {COORD_BINS}"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} not in [0,1)", self.dropout));
        }
        // written so NaN fails too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.layer_norm_eps > 0.0) || !(self.init_std > 0.0) {
            return fail("layer_norm_eps and init_std must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("vocab_size", self.vocab_size.to_string()),
            ("hidden", self.hidden.to_string()),
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("ff_dim", self.ff_dim.to_string()),
            ("max_seq", self.max_seq.to_string()),
            ("coord_bins", self.coord_bins.to_string()),
            ("dropout", format!("{:?}", self.dropout)),
            ("layer_norm_eps", format!("{:?}", self.layer_norm_eps)),
            ("init_std", format!("{:?}", self.init_std)),
        ]
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: String| invalid(format!("model config {key}: {e}"));
        let int = || value.parse::<usize>().map_err(|e| bad(e.to_string()));
        let float = || value.parse::<f64>().map_err(|e| bad(e.to_string()));
        match key {
            "vocab_size" => self.vocab_size = int()?,
            "hidden" => self.hidden = int()?,
            "layers" => self.layers = int()?,
            "heads" => self.heads = int()?,
            "ff_dim" => self.ff_dim = int()?,
            "max_seq" => self.max_seq = int()?,
            "coord_bins" => self.coord_bins = int()?,
            "dropout" => self.dropout = float()?,
            "layer_norm_eps" => self.layer_norm_eps = float()?,
            "init_std" => self.init_std = float()?,
            _ => return Err(bad(format!("unknown key (expected one of {})", KEYS.join(", ")))),
        }
        Ok(())
    }

    /// Parse `key = value` lines over the desk defaults. Blank lines and
    /// `#` comments are ignored. The result is not validated, since
    /// `vocab_size` may still be missing.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected key = value, got {line:?}") })?;
            cfg.set(k.trim(), v.trim()).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let cfg = ModelConfig { vocab_size: 77, dropout: 0.0, ..Default::default() };
        assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn validation() {
        let ok = ModelConfig { vocab_size: 50, ..Default::default() };
        ok.validate().unwrap();
        assert!(ModelConfig { heads: 3, ..ok.clone() }.validate().is_err());
        assert!(ModelConfig { layers: 0, ..ok.clone() }.validate().is_err());
        assert!(ModelConfig { max_seq: 2, ..ok.clone() }.validate().is_err());
        assert!(ModelConfig { coord_bins: 1000, ..ok.clone() }.validate().is_err());
        assert!(ModelConfig { vocab_size: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = ModelConfig::from_text("hidden = 64\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(ModelConfig::from_text("hidden 64").is_err());
        let cfg = ModelConfig::from_text("# small\nhidden = 64\n\nlayers=2").unwrap();
        assert_eq!((cfg.hidden, cfg.layers), (64, 2));
    }
}
