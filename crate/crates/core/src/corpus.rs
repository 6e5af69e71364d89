//! Layout-annotated pages, the line-delimited corpus format, coordinate
//! normalization and word-level label statistics.
//!
//! A corpus file holds one JSON object per line:
//!
//! ```text
//! {"id":"p1","width":850,"height":1100,"words":[{"text":"Net","box":[10,20,40,32]}],"tags":["O"]}
//! ```
//!
//! `tags` is optional; pre-training corpora carry none.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::textcodec::Tag;

/// Upper end of the normalized coordinate grid.
pub const GRID_MAX: u32 = 1000;

/// A word box in page pixels, as emitted by OCR.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct RawBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl RawBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn check(&self, width: u32, height: u32) -> Result<()> {
        if self.x0 > self.x1 || self.y0 > self.y1 {
            return Err(invalid(format!("box {:?} has inverted corners", self.to_array())));
        }
        if self.x1 > width || self.y1 > height {
            return Err(invalid(format!(
                "box {:?} outside page {}x{}",
                self.to_array(),
                width,
                height
            )));
        }
        Ok(())
    }

    pub fn to_array(self) -> [u32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

impl From<[u32; 4]> for RawBox {
    fn from(a: [u32; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl From<RawBox> for [u32; 4] {
    fn from(b: RawBox) -> Self {
        b.to_array()
    }
}

/// A box on the 0..=1000 grid. Width and height are derived and always
/// fall inside the grid too.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub const ZERO: BBox = BBox { x0: 0, y0: 0, x1: 0, y1: 0 };
    pub const FULL: BBox = BBox { x0: GRID_MAX, y0: GRID_MAX, x1: GRID_MAX, y1: GRID_MAX };

    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        let b = Self { x0, y0, x1, y1 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(invalid(format!("bbox ({x0},{y0},{x1},{y1}) violates grid invariants")))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.x0 <= self.x1 && self.y0 <= self.y1 && self.x1 <= GRID_MAX && self.y1 <= GRID_MAX
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }
}

fn scale_coord(c: u32, extent: u32) -> u32 {
    let scaled = (u64::from(c) * u64::from(GRID_MAX)) / u64::from(extent);
    scaled.min(u64::from(GRID_MAX)) as u32
}

/// Map a pixel box onto the grid with `floor(c * 1000 / D)`, clamped to 1000.
pub fn normalize_bbox(b: RawBox, page_width: u32, page_height: u32) -> Result<BBox> {
    if page_width == 0 || page_height == 0 {
        return Err(invalid("page dimensions must be positive"));
    }
    b.check(page_width, page_height)?;
    Ok(BBox {
        x0: scale_coord(b.x0, page_width),
        y0: scale_coord(b.y0, page_height),
        x1: scale_coord(b.x1, page_width),
        y1: scale_coord(b.y1, page_height),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Word {
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: RawBox,
}

impl Word {
    pub fn new(text: impl Into<String>, bbox: RawBox) -> Self {
        Self { text: text.into(), bbox }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    #[serde(rename = "id")]
    pub doc_id: String,
    pub width: u32,
    pub height: u32,
    pub words: Vec<Word>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<String>>,
}

impl Page {
    pub fn is_labeled(&self) -> bool {
        self.tags.is_some()
    }

    /// Check the page invariants. Tags are checked against `labels` when
    /// given, otherwise only for BIO syntax.
    pub fn validate(&self, labels: Option<&LabelSet>) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(invalid(format!("page {}: zero dimension", self.doc_id)));
        }
        for (i, w) in self.words.iter().enumerate() {
            if w.text.is_empty() {
                return Err(invalid(format!("page {}: word {i} is empty", self.doc_id)));
            }
            if w.text.contains('\n') || w.text.contains('\r') {
                return Err(invalid(format!("page {}: word {i} contains a newline", self.doc_id)));
            }
            w.bbox
                .check(self.width, self.height)
                .map_err(|e| invalid(format!("page {}: word {i}: {e}", self.doc_id)))?;
        }
        if let Some(tags) = &self.tags {
            if tags.len() != self.words.len() {
                return Err(invalid(format!(
                    "length mismatch: {} words, {} tags",
                    self.words.len(),
                    tags.len()
                )));
            }
            for t in tags {
                match labels {
                    Some(ls) => {
                        ls.tag_index(t)?;
                    }
                    None => {
                        Tag::parse(t)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Normalized boxes for every word.
    pub fn normalized_boxes(&self) -> Result<Vec<BBox>> {
        self.words
            .iter()
            .map(|w| normalize_bbox(w.bbox, self.width, self.height))
            .collect()
    }
}

/// Ordered entity labels. The BIO tagset is `O` followed by `B-L`, `I-L`
/// for each label in order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
}

impl LabelSet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let mut seen = HashSet::new();
        for l in &labels {
            if l.is_empty() {
                return Err(invalid("empty label name"));
            }
            if l == "O" {
                return Err(invalid("label name \"O\" is reserved"));
            }
            if l.chars().any(char::is_whitespace) {
                return Err(invalid(format!("label {l:?} contains whitespace")));
            }
            if !seen.insert(l.as_str()) {
                return Err(invalid(format!("duplicate label {l}")));
            }
        }
        Ok(Self { labels })
    }

    /// One label per line; blank lines are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.labels.join("\n");
        s.push('\n');
        s
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Number of BIO tags, `2 * labels + 1`.
    pub fn num_tags(&self) -> usize {
        2 * self.labels.len() + 1
    }

    pub fn tag_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.num_tags());
        out.push("O".to_string());
        for l in &self.labels {
            out.push(format!("B-{l}"));
            out.push(format!("I-{l}"));
        }
        out
    }

    pub fn tag_index(&self, tag: &str) -> Result<usize> {
        let parsed = Tag::parse(tag)?;
        self.encode_tag(&parsed)
            .ok_or_else(|| invalid(format!("unknown tag {tag}")))
    }

    pub(crate) fn encode_tag(&self, tag: &Tag) -> Option<usize> {
        match tag {
            Tag::O => Some(0),
            Tag::B(l) => self.index_of(l).map(|i| 1 + 2 * i),
            Tag::I(l) => self.index_of(l).map(|i| 2 + 2 * i),
        }
    }

    pub fn tag_name(&self, index: usize) -> Option<String> {
        if index == 0 {
            return Some("O".into());
        }
        let label = self.labels.get((index - 1) / 2)?;
        Some(if index % 2 == 1 { format!("B-{label}") } else { format!("I-{label}") })
    }
}

/// The nine fields annotated in the Payslips dataset, in its documented order.
pub const PAYSLIPS_LABELS: [&str; 9] = [
    "BEGIN_PAY_PERIOD",
    "END_PAY_PERIOD",
    "PAY_DATE",
    "GROSS_PAY_PERIOD",
    "GROSS_TAXABLE_PERIOD",
    "NET_PAY_PERIOD",
    "PAYG_TAX_PERIOD",
    "PRE_TAX_DEDUCTION_PERIOD",
    "POST_TAX_DEDUCTION_PERIOD",
];

pub fn payslips_labels() -> LabelSet {
    LabelSet::new(PAYSLIPS_LABELS).expect("static label set is valid")
}

/// Word-level label counts for one split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStats {
    pub pages: usize,
    /// `(label, words tagged B-label or I-label)` in label-set order.
    pub per_label: Vec<(String, usize)>,
    pub outside: usize,
    pub total: usize,
}

impl LabelStats {
    pub fn count(&self, label: &str) -> Option<usize> {
        if label == "O" {
            return Some(self.outside);
        }
        self.per_label.iter().find(|(l, _)| l == label).map(|(_, c)| *c)
    }

    pub fn to_table(&self) -> String {
        let width = self
            .per_label
            .iter()
            .map(|(l, _)| l.len())
            .max()
            .unwrap_or(0)
            .max(5);
        let mut s = String::new();
        for (l, c) in &self.per_label {
            s.push_str(&format!("{l:<width$}  {c:>8}\n"));
        }
        s.push_str(&format!("{:<width$}  {:>8}\n", "O", self.outside));
        s.push_str(&format!("{:<width$}  {:>8}\n", "Total", self.total));
        s.push_str(&format!("{:<width$}  {:>8}\n", "Pages", self.pages));
        s
    }
}

pub fn label_stats(pages: &[Page], labels: &LabelSet) -> Result<LabelStats> {
    let mut counts = vec![0usize; labels.len()];
    let mut outside = 0;
    let mut total = 0;
    for page in pages {
        let tags = page
            .tags
            .as_ref()
            .ok_or_else(|| invalid(format!("page {} has no tags", page.doc_id)))?;
        for t in tags {
            match Tag::parse(t)? {
                Tag::O => outside += 1,
                Tag::B(l) | Tag::I(l) => {
                    let i = labels
                        .index_of(&l)
                        .ok_or_else(|| invalid(format!("unknown tag {t}")))?;
                    counts[i] += 1;
                }
            }
            total += 1;
        }
    }
    Ok(LabelStats {
        pages: pages.len(),
        per_label: labels.labels().iter().cloned().zip(counts).collect(),
        outside,
        total,
    })
}

/// Parse one corpus line.
pub fn parse_page_line(line: &str, labels: Option<&LabelSet>) -> Result<Page> {
    let page: Page = serde_json::from_str(line).map_err(|e| invalid(e.to_string()))?;
    page.validate(labels)?;
    Ok(page)
}

/// Read a corpus from any buffered reader. Line numbers in errors are 1-based.
pub fn read_corpus<R: BufRead>(reader: R, labels: Option<&LabelSet>) -> Result<Vec<Page>> {
    let mut pages = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let page = parse_page_line(&line, labels).map_err(|e| Error::Parse {
            line: i + 1,
            msg: match e {
                Error::Invalid(m) => m,
                other => other.to_string(),
            },
        })?;
        pages.push(page);
    }
    Ok(pages)
}

pub fn parse_corpus(path: impl AsRef<Path>, labels: Option<&LabelSet>) -> Result<Vec<Page>> {
    let f = File::open(path)?;
    read_corpus(BufReader::new(f), labels)
}

pub fn write_corpus_to<W: Write>(mut w: W, pages: &[Page]) -> Result<()> {
    for p in pages {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_corpus(path: impl AsRef<Path>, pages: &[Page]) -> Result<()> {
    write_corpus_to(BufWriter::new(File::create(path)?), pages)
}
