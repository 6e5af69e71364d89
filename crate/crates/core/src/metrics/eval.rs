use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::LabelSet;
use crate::error::{invalid, Result};
use crate::textcodec::{tags_to_spans, Mention};

/// Exact-match counts with derived precision, recall and F1. Zero
/// denominators give 0.0.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

impl Scores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { tp, fp, fn_, precision, recall, f1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    #[serde(flatten)]
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub documents: usize,
    pub per_label: Vec<LabelScore>,
    pub micro: Scores,
}

impl EvalReport {
    pub fn label(&self, name: &str) -> Option<&Scores> {
        self.per_label.iter().find(|l| l.label == name).map(|l| &l.scores)
    }

    /// Plain-text table; scores are on the 0..1 scale.
    pub fn to_table(&self) -> String {
        let w = self.per_label.iter().map(|l| l.label.len()).max().unwrap_or(0).max(5);
        let mut s = format!("{:<w$}  {:>6} {:>6} {:>6}  {:>6} {:>6} {:>6}\n", "label", "tp", "fp", "fn", "P", "R", "F1");
        let row = |s: &mut String, name: &str, x: &Scores| {
            let _ = writeln!(
                s,
                "{name:<w$}  {:>6} {:>6} {:>6}  {:>6.4} {:>6.4} {:>6.4}",
                x.tp, x.fp, x.fn_, x.precision, x.recall, x.f1
            );
        };
        for l in &self.per_label {
            row(&mut s, &l.label, &l.scores);
        }
        row(&mut s, "micro", &self.micro);
        let _ = writeln!(s, "documents: {}", self.documents);
        s
    }
}

fn page_mentions<S: AsRef<str>>(tags: &[S], labels: &LabelSet) -> Result<Vec<Mention>> {
    for t in tags {
        labels.tag_index(t.as_ref())?;
    }
    tags_to_spans(tags)
}

fn check_aligned<S: AsRef<str>>(pred: &[Vec<S>], gold: &[Vec<S>]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(invalid(format!("{} predicted pages for {} gold pages", pred.len(), gold.len())));
    }
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(invalid(format!("page {i}: {} predicted tags for {} words", p.len(), g.len())));
        }
    }
    Ok(())
}

/// Per-label `(tp, fp, fn)` for one page. Mentions are unique within a
/// page, so exact one-to-one matching is set intersection.
fn page_counts(pred: &[Mention], gold: &[Mention], labels: &LabelSet) -> Vec<(usize, usize, usize)> {
    let gold_set: HashSet<&Mention> = gold.iter().collect();
    let mut counts = vec![(0, 0, 0); labels.len()];
    let slot = |m: &Mention| labels.index_of(&m.label).expect("validated label");
    for m in pred {
        if gold_set.contains(m) {
            counts[slot(m)].0 += 1;
        } else {
            counts[slot(m)].1 += 1;
        }
    }
    let pred_set: HashSet<&Mention> = pred.iter().collect();
    for m in gold {
        if !pred_set.contains(m) {
            counts[slot(m)].2 += 1;
        }
    }
    counts
}

/// Labeled mention-level precision, recall and F1 over aligned pages.
pub fn evaluate<S: AsRef<str>>(pred: &[Vec<S>], gold: &[Vec<S>], labels: &LabelSet) -> Result<EvalReport> {
    check_aligned(pred, gold)?;
    let mut totals = vec![(0usize, 0usize, 0usize); labels.len()];
    for (p, g) in pred.iter().zip(gold) {
        let pm = page_mentions(p, labels)?;
        let gm = page_mentions(g, labels)?;
        for (t, c) in totals.iter_mut().zip(page_counts(&pm, &gm, labels)) {
            t.0 += c.0;
            t.1 += c.1;
            t.2 += c.2;
        }
    }
    let per_label: Vec<LabelScore> = labels
        .labels()
        .iter()
        .zip(&totals)
        .map(|(l, &(tp, fp, fn_))| LabelScore { label: l.clone(), scores: Scores::from_counts(tp, fp, fn_) })
        .collect();
    let (tp, fp, fn_) = totals.iter().fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    Ok(EvalReport { documents: pred.len(), per_label, micro: Scores::from_counts(tp, fp, fn_) })
}

/// Micro F1 of a single page. A page with no predicted and no gold
/// mentions scores 1.0.
pub fn per_document_f1<S: AsRef<str>>(pred: &[S], gold: &[S], labels: &LabelSet) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(invalid(format!("{} predicted tags for {} words", pred.len(), gold.len())));
    }
    let pm = page_mentions(pred, labels)?;
    let gm = page_mentions(gold, labels)?;
    if pm.is_empty() && gm.is_empty() {
        return Ok(1.0);
    }
    let (tp, fp, fn_) = page_counts(&pm, &gm, labels)
        .into_iter()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    Ok(Scores::from_counts(tp, fp, fn_).f1)
}

pub fn per_document_scores<S: AsRef<str>>(pred: &[Vec<S>], gold: &[Vec<S>], labels: &LabelSet) -> Result<Vec<f64>> {
    check_aligned(pred, gold)?;
    pred.iter().zip(gold).map(|(p, g)| per_document_f1(p, g, labels)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textcodec::spans_to_tags;

    fn abc() -> LabelSet {
        LabelSet::new(["A", "B", "C"]).unwrap()
    }

    fn tags(m: &[(usize, usize, &str)], n: usize) -> Vec<String> {
        let ms: Vec<Mention> = m.iter().map(|&(s, e, l)| Mention::new(s, e, l)).collect();
        spans_to_tags(&ms, n).unwrap()
    }

    #[test]
    fn worked_instance() {
        let pred = vec![tags(&[(0, 2, "A"), (5, 6, "B")], 10)];
        let gold = vec![tags(&[(0, 2, "A"), (4, 6, "B"), (8, 9, "C")], 10)];
        let r = evaluate(&pred, &gold, &abc()).unwrap();
        assert_eq!((r.micro.tp, r.micro.fp, r.micro.fn_), (1, 1, 2));
        assert!((r.micro.precision - 0.5).abs() < 1e-15);
        assert!((r.micro.recall - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.micro.f1 - 0.4).abs() < 1e-15);
        assert_eq!(r.label("A").unwrap().f1, 1.0);
        assert_eq!(r.label("C").unwrap().fn_, 1);
    }

    #[test]
    fn identity_and_all_outside() {
        let gold = vec![tags(&[(1, 3, "B")], 5), tags(&[(0, 1, "C"), (2, 4, "A")], 4)];
        let r = evaluate(&gold, &gold, &abc()).unwrap();
        assert_eq!((r.micro.precision, r.micro.recall, r.micro.f1), (1.0, 1.0, 1.0));
        let none: Vec<Vec<String>> = gold.iter().map(|g| vec!["O".to_string(); g.len()]).collect();
        let r = evaluate(&none, &gold, &abc()).unwrap();
        assert_eq!((r.micro.precision, r.micro.recall, r.micro.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn misalignment_errors() {
        let a = vec![tags(&[], 3)];
        assert!(evaluate(&a, &[], &abc()).is_err());
        assert!(evaluate(&a, &[tags(&[], 4)], &abc()).is_err());
        assert!(evaluate(&[vec!["B-Z".to_string()]], &[vec!["O".to_string()]], &abc()).is_err());
    }

    #[test]
    fn document_f1_conventions() {
        let l = abc();
        assert_eq!(per_document_f1(&tags(&[], 3), &tags(&[], 3), &l).unwrap(), 1.0);
        let g = tags(&[(0, 2, "A")], 4);
        assert_eq!(per_document_f1(&g, &g, &l).unwrap(), 1.0);
        assert_eq!(per_document_f1(&tags(&[(2, 4, "B")], 4), &g, &l).unwrap(), 0.0);
    }

    #[test]
    fn invariant_under_page_order() {
        let pred = vec![tags(&[(0, 2, "A")], 4), tags(&[(1, 2, "C")], 3), tags(&[], 2)];
        let gold = vec![tags(&[(0, 2, "A")], 4), tags(&[(0, 2, "C")], 3), tags(&[(0, 1, "B")], 2)];
        let r1 = evaluate(&pred, &gold, &abc()).unwrap();
        let rp: Vec<_> = pred.iter().rev().cloned().collect();
        let rg: Vec<_> = gold.iter().rev().cloned().collect();
        assert_eq!(evaluate(&rp, &rg, &abc()).unwrap(), r1);
    }
}
