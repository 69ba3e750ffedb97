//! Text-VQA metrics: edit distance, ANLS and soft VQA accuracy.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::text::normalize_answer;

pub const ANLS_THRESHOLD: f64 = 0.5;
pub const VQA_REFERENCES: usize = 10;

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn anls_prepare(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Normalized Levenshtein similarity against the best reference, zeroed
/// when the normalized distance reaches the threshold.
pub fn anls_score(prediction: &str, references: &[String]) -> f64 {
    let p = anls_prepare(prediction);
    let plen = p.chars().count();
    references
        .iter()
        .map(|r| {
            let r = anls_prepare(r);
            let denom = plen.max(r.chars().count());
            if denom == 0 {
                return 1.0;
            }
            let nl = levenshtein(&p, &r) as f64 / denom as f64;
            if nl < ANLS_THRESHOLD {
                1.0 - nl
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// `min(matches / 3, 1)` over exactly ten references.
pub fn vqa_accuracy(prediction: &str, references: &[String]) -> Result<f64> {
    if references.len() != VQA_REFERENCES {
        return Err(Error::ReferenceCount(references.len()));
    }
    let p = normalize_answer(prediction);
    let matches = references.iter().filter(|r| normalize_answer(r) == p).count();
    Ok((matches as f64 / 3.0).min(1.0))
}
