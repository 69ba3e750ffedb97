//! Pyramidal histogram of characters.
//!
//! Unigram levels 2..=5 over `[a-z0-9]` (14 regions x 36 = 504 bits) followed
//! by level-2 bits for up to 50 frequent bigrams (2 x 50 = 100 bits).
//!
//! Character `k` of an `n`-character word spans `[k/n, (k+1)/n)`; a bigram
//! spans the union of its two characters. A gram marks region `r` of level
//! `L` when its overlap with `[r/L, (r+1)/L)` is at least half of the gram's
//! own length. Scaling every interval by `n * L` turns the test into integer
//! arithmetic, so the result is exact.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::text::is_normalized_word;

pub const ALPHABET: &[u8; 36] = b"abcdefghijklmnopqrstuvwxyz0123456789";
pub const UNIGRAM_LEVELS: [usize; 4] = [2, 3, 4, 5];
pub const BIGRAM_LEVEL: usize = 2;
pub const NUM_BIGRAMS: usize = 50;
pub const UNIGRAM_DIM: usize = 14 * 36;
pub const PHOC_DIM: usize = UNIGRAM_DIM + BIGRAM_LEVEL * NUM_BIGRAMS;

pub type Bigram = [u8; 2];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhocVector(Vec<u8>);

impl PhocVector {
    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| b as f64).collect()
    }
}

pub fn alphabet_index(c: u8) -> Option<usize> {
    match c {
        b'a'..=b'z' => Some((c - b'a') as usize),
        b'0'..=b'9' => Some(26 + (c - b'0') as usize),
        _ => None,
    }
}

/// Bit offset of region `region` at unigram level `level`.
pub fn unigram_offset(level: usize, region: usize) -> usize {
    let before: usize = UNIGRAM_LEVELS.iter().take_while(|&&l| l < level).sum();
    (before + region) * ALPHABET.len()
}

/// Whether the gram spanning characters `[start, start + span)` of an
/// `n`-character word occupies region `region` of `level`.
fn occupies(start: usize, span: usize, n: usize, level: usize, region: usize) -> bool {
    let (g0, g1) = (start * level, (start + span) * level);
    let (r0, r1) = (region * n, (region + 1) * n);
    let overlap = g1.min(r1).saturating_sub(g0.max(r0));
    2 * overlap >= span * level
}

pub fn phoc(word: &str, bigrams: &[Bigram]) -> Result<PhocVector> {
    if !is_normalized_word(word) {
        return Err(Error::InvalidWord(word.into()));
    }
    let chars = word.as_bytes();
    let n = chars.len();
    let mut bits = vec![0u8; PHOC_DIM];
    for (k, &c) in chars.iter().enumerate() {
        let ci = alphabet_index(c).ok_or_else(|| Error::InvalidWord(word.into()))?;
        for level in UNIGRAM_LEVELS {
            for region in 0..level {
                if occupies(k, 1, n, level, region) {
                    bits[unigram_offset(level, region) + ci] = 1;
                }
            }
        }
    }
    for k in 0..n.saturating_sub(1) {
        let gram = [chars[k], chars[k + 1]];
        let Some(bi) = bigrams.iter().take(NUM_BIGRAMS).position(|b| *b == gram) else {
            continue;
        };
        for region in 0..BIGRAM_LEVEL {
            if occupies(k, 2, n, BIGRAM_LEVEL, region) {
                bits[UNIGRAM_DIM + region * NUM_BIGRAMS + bi] = 1;
            }
        }
    }
    Ok(PhocVector(bits))
}

/// Top bigrams by occurrence count over `words`, ties broken
/// lexicographically.
pub fn frequent_bigrams<'a, I>(words: I) -> Vec<Bigram>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts = alloc::collections::BTreeMap::<Bigram, usize>::new();
    for w in words {
        for pair in w.as_bytes().windows(2) {
            if alphabet_index(pair[0]).is_some() && alphabet_index(pair[1]).is_some() {
                *counts.entry([pair[0], pair[1]]).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(Bigram, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(NUM_BIGRAMS).map(|(b, _)| b).collect()
}
