use std::borrow::Cow;
use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::Page;
use crate::error::{invalid, Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;
pub const NUM_RESERVED: usize = 5;
pub const RESERVED_TOKENS: [&str; NUM_RESERVED] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

const HEADER_PREFIX: &str = "#vocab v1 lowercase=";

/// Word-level vocabulary with the five reserved tokens at ids 0..5.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    lowercase: bool,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>, lowercase: bool) -> Result<Self> {
        if tokens.len() < NUM_RESERVED || tokens[..NUM_RESERVED] != RESERVED_TOKENS {
            return Err(invalid("vocabulary must start with the reserved tokens"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(invalid(format!("empty token at id {i}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(invalid(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index, lowercase })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn normalize<'a>(&self, word: &'a str) -> Cow<'a, str> {
        if self.lowercase {
            Cow::Owned(word.to_lowercase())
        } else {
            Cow::Borrowed(word)
        }
    }

    /// Id of a surface word, `UNK` when absent. Reserved surface forms in
    /// the text never map to reserved ids.
    pub fn id(&self, word: &str) -> usize {
        match self.index.get(self.normalize(word).as_ref()) {
            Some(&i) if i >= NUM_RESERVED => i,
            _ => UNK,
        }
    }

    /// Short content hash over the casing flag and the token list.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(if self.lowercase { b"lc1\n" } else { b"lc0\n" });
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER_PREFIX}{}\n", u8::from(self.lowercase));
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.split('\n');
        let header = lines.next().unwrap_or_default();
        let flag = header
            .strip_prefix(HEADER_PREFIX)
            .ok_or_else(|| Error::Parse { line: 1, msg: format!("bad vocabulary header {header:?}") })?;
        let lowercase = match flag {
            "0" => false,
            "1" => true,
            _ => return Err(Error::Parse { line: 1, msg: format!("bad lowercase flag {flag:?}") }),
        };
        let mut tokens: Vec<String> = lines.map(str::to_string).collect();
        if tokens.last().is_some_and(String::is_empty) {
            tokens.pop();
        }
        Self::from_tokens(tokens, lowercase)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Frequency-ranked word vocabulary. Ties break lexicographically; the
/// result holds at most `max_size` entries including the reserved ones.
pub fn build_vocab(pages: &[Page], max_size: usize, min_freq: usize, lowercase: bool) -> Result<Vocab> {
    if max_size < NUM_RESERVED + 1 {
        return Err(invalid(format!("max_size must be at least {}", NUM_RESERVED + 1)));
    }
    if min_freq == 0 {
        return Err(invalid("min_freq must be at least 1"));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut any = false;
    for p in pages {
        for w in &p.words {
            any = true;
            let key = if lowercase { w.text.to_lowercase() } else { w.text.clone() };
            *counts.entry(key).or_default() += 1;
        }
    }
    if !any {
        return Err(invalid("cannot build a vocabulary from an empty corpus"));
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq && !RESERVED_TOKENS.contains(&t.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - NUM_RESERVED);
    let tokens = RESERVED_TOKENS
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(t, _)| t))
        .collect();
    Vocab::from_tokens(tokens, lowercase)
}
