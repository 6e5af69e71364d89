use std::fmt;

use crate::error::{invalid, Result};

/// A parsed BIO tag.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Tag {
    O,
    B(String),
    I(String),
}

impl Tag {
    pub fn parse(s: &str) -> Result<Tag> {
        if s == "O" {
            return Ok(Tag::O);
        }
        let bad = || invalid(format!("unparseable tag {s:?}"));
        let (prefix, label) = s.split_once('-').ok_or_else(bad)?;
        if label.is_empty() || label == "O" {
            return Err(bad());
        }
        match prefix {
            "B" => Ok(Tag::B(label.to_string())),
            "I" => Ok(Tag::I(label.to_string())),
            _ => Err(bad()),
        }
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            Tag::O => None,
            Tag::B(l) | Tag::I(l) => Some(l),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::O => f.write_str("O"),
            Tag::B(l) => write!(f, "B-{l}"),
            Tag::I(l) => write!(f, "I-{l}"),
        }
    }
}

/// A labeled span of words, half-open `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl Mention {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        Self { start, end, label: label.into() }
    }
}

/// Decode BIO tags into maximal mentions.
///
/// An `I-L` that does not continue an open `L` mention starts a new one, as
/// if it were `B-L`.
pub fn tags_to_spans<S: AsRef<str>>(tags: &[S]) -> Result<Vec<Mention>> {
    let mut out = Vec::new();
    let mut open: Option<(usize, String)> = None;
    for (i, t) in tags.iter().enumerate() {
        match Tag::parse(t.as_ref())? {
            Tag::O => {
                if let Some((s, l)) = open.take() {
                    out.push(Mention::new(s, i, l));
                }
            }
            Tag::B(label) => {
                if let Some((s, l)) = open.take() {
                    out.push(Mention::new(s, i, l));
                }
                open = Some((i, label));
            }
            Tag::I(label) => match &open {
                Some((_, l)) if *l == label => {}
                _ => {
                    if let Some((s, l)) = open.take() {
                        out.push(Mention::new(s, i, l));
                    }
                    open = Some((i, label));
                }
            },
        }
    }
    if let Some((s, l)) = open {
        out.push(Mention::new(s, tags.len(), l));
    }
    Ok(out)
}

/// Encode mentions as BIO tags over `len` words.
pub fn spans_to_tags(mentions: &[Mention], len: usize) -> Result<Vec<String>> {
    let mut tags: Vec<Option<String>> = vec![None; len];
    for m in mentions {
        if m.start >= m.end || m.end > len {
            return Err(invalid(format!(
                "span ({},{}) out of range for length {len}",
                m.start, m.end
            )));
        }
        if m.label.is_empty() || m.label == "O" {
            return Err(invalid(format!("illegal mention label {:?}", m.label)));
        }
        for (i, slot) in tags[m.start..m.end].iter_mut().enumerate() {
            if slot.is_some() {
                return Err(invalid(format!(
                    "overlapping mentions at word {}",
                    m.start + i
                )));
            }
            *slot = Some(if i == 0 { format!("B-{}", m.label) } else { format!("I-{}", m.label) });
        }
    }
    Ok(tags
        .into_iter()
        .map(|t| t.unwrap_or_else(|| "O".to_string()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_examples() {
        assert_eq!(
            tags_to_spans(&["B-PAY_DATE", "I-PAY_DATE", "O"]).unwrap(),
            vec![Mention::new(0, 2, "PAY_DATE")]
        );
        assert!(tags_to_spans(&["O", "O", "O"]).unwrap().is_empty());
        // leading I is repaired to B; adjacent B's split
        assert_eq!(
            tags_to_spans(&["I-NET_PAY_PERIOD", "O", "B-PAY_DATE", "B-PAY_DATE"]).unwrap(),
            vec![
                Mention::new(0, 1, "NET_PAY_PERIOD"),
                Mention::new(2, 3, "PAY_DATE"),
                Mention::new(3, 4, "PAY_DATE"),
            ]
        );
        // label change under I starts a new mention
        assert_eq!(
            tags_to_spans(&["B-A", "I-B", "I-B"]).unwrap(),
            vec![Mention::new(0, 1, "A"), Mention::new(1, 3, "B")]
        );
    }

    #[test]
    fn rejects_garbage_tags() {
        for bad in ["", "B-", "X-A", "B", "b-A", "I-O"] {
            assert!(tags_to_spans(&[bad]).is_err(), "{bad}");
        }
    }

    #[test]
    fn encodes_examples() {
        assert_eq!(
            spans_to_tags(&[Mention::new(0, 2, "PAY_DATE")], 3).unwrap(),
            vec!["B-PAY_DATE", "I-PAY_DATE", "O"]
        );
        assert_eq!(spans_to_tags(&[], 2).unwrap(), vec!["O", "O"]);
        assert!(spans_to_tags(&[Mention::new(0, 2, "A"), Mention::new(1, 3, "B")], 3).is_err());
        assert!(spans_to_tags(&[Mention::new(2, 4, "A")], 3).is_err());
        assert!(spans_to_tags(&[Mention::new(1, 1, "A")], 3).is_err());
    }

    fn arb_tags() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(
            prop_oneof![
                Just("O".to_string()),
                "[AB]".prop_map(|l| format!("B-{l}")),
                "[AB]".prop_map(|l| format!("I-{l}")),
            ],
            0..30,
        )
    }

    proptest! {
        #[test]
        fn mentions_sorted_and_disjoint(tags in arb_tags()) {
            let m = tags_to_spans(&tags).unwrap();
            for w in m.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
            for x in &m {
                prop_assert!(x.start < x.end && x.end <= tags.len());
            }
            // decoding is idempotent through a re-encode
            let again = tags_to_spans(&spans_to_tags(&m, tags.len()).unwrap()).unwrap();
            prop_assert_eq!(again, m);
        }
    }
}
