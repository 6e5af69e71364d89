//! Paired approximate randomization over per-document scores, and its
//! exhaustive counterpart for small test sets.
//!
//! Each iteration swaps the two systems' scores on every document
//! independently with probability 1/2 and compares the absolute difference
//! in mean score against the observed one. Ties count as exceeding.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng;

/// Levels below this are reported as highly significant.
pub const HIGHLY_SIGNIFICANT: f64 = 0.01;

/// Largest test set the exact enumeration accepts (2^20 assignments).
pub const EXACT_MAX_DOCS: usize = 20;

// Shuffled differences within this of the observed one are ties. Sums of
// the same values in different orders can differ in the last few bits.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub observed_diff: f64,
    pub iterations: u64,
    pub exceed_count: u64,
    pub significance_level: f64,
}

impl SignificanceResult {
    fn new(observed_diff: f64, iterations: u64, exceed_count: u64) -> Self {
        Self { observed_diff, iterations, exceed_count, significance_level: exceed_count as f64 / iterations as f64 }
    }

    pub fn is_highly_significant(&self) -> bool {
        self.significance_level < HIGHLY_SIGNIFICANT
    }

    /// One-line interpretation of the level.
    pub fn banner(&self) -> String {
        if self.is_highly_significant() {
            format!("significance {:.4} < {HIGHLY_SIGNIFICANT}: highly significant", self.significance_level)
        } else {
            format!("significance {:.4} >= {HIGHLY_SIGNIFICANT}: not highly significant", self.significance_level)
        }
    }
}

fn check(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Err(invalid("score lists are empty"));
    }
    if a.len() != b.len() {
        return Err(invalid(format!("score lists differ in length: {} vs {}", a.len(), b.len())));
    }
    for v in a.iter().chain(b) {
        if !(0.0..=1.0).contains(v) {
            return Err(invalid(format!("score {v} outside [0,1]")));
        }
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

/// `|mean(a') - mean(b')|` where document `i` is swapped when `swap(i)`.
fn shuffled_diff(deltas: &[f64], swap: impl Fn(usize) -> bool) -> f64 {
    let s: f64 = deltas.iter().enumerate().map(|(i, d)| if swap(i) { -d } else { *d }).sum();
    s.abs() / deltas.len() as f64
}

pub fn approx_rand_test(a: &[f64], b: &[f64], iterations: u64, seed: u64) -> Result<SignificanceResult> {
    let deltas = check(a, b)?;
    if iterations == 0 {
        return Err(invalid("iterations must be positive"));
    }
    let observed = shuffled_diff(&deltas, |_| false);
    let exceed = (0..iterations)
        .into_par_iter()
        .filter(|&it| {
            let mut r = rng::stream(seed, "swap", it);
            let swaps: Vec<bool> = (0..deltas.len()).map(|_| r.random_bool(0.5)).collect();
            shuffled_diff(&deltas, |i| swaps[i]) + TIE_TOLERANCE >= observed
        })
        .count() as u64;
    Ok(SignificanceResult::new(observed, iterations, exceed))
}

/// Enumerate all `2^n` swap assignments.
pub fn exact_rand_test(a: &[f64], b: &[f64]) -> Result<SignificanceResult> {
    let deltas = check(a, b)?;
    let n = deltas.len();
    if n > EXACT_MAX_DOCS {
        return Err(invalid(format!("exact test supports at most {EXACT_MAX_DOCS} documents, got {n}")));
    }
    let observed = shuffled_diff(&deltas, |_| false);
    let total = 1u64 << n;
    let exceed = (0..total)
        .filter(|mask| shuffled_diff(&deltas, |i| mask >> i & 1 == 1) + TIE_TOLERANCE >= observed)
        .count() as u64;
    Ok(SignificanceResult::new(observed, total, exceed))
}
