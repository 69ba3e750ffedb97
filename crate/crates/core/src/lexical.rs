//! Frozen subword embedding: hashed character 3-grams of `<word>`, summed and
//! unit-normalized.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::synth::hashed_vector;

pub const LEXICAL_DIM: usize = 64;
const LEXICAL_SALT: u64 = 0x1e41_ca15;

pub fn char_trigrams(word: &str) -> Vec<alloc::string::String> {
    let padded: Vec<char> = format!("<{word}>").chars().collect();
    padded.windows(3).map(|w| w.iter().collect()).collect()
}

pub fn lexical_embed(word: &str, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for gram in char_trigrams(word) {
        for (a, v) in acc.iter_mut().zip(hashed_vector(&gram, LEXICAL_SALT, dim)) {
            *a += v;
        }
    }
    let norm = libm::sqrt(acc.iter().map(|v| v * v).sum::<f64>());
    if norm > 0.0 {
        acc.iter_mut().for_each(|v| *v /= norm);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let a = lexical_embed("street", LEXICAL_DIM);
        assert_eq!(a, lexical_embed("street", LEXICAL_DIM));
        let n: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
        let single = lexical_embed("a", LEXICAL_DIM);
        assert!((single.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn shared_trigrams_mean_higher_similarity() {
        let street = lexical_embed("street", LEXICAL_DIM);
        let near = cosine(&street, &lexical_embed("streep", LEXICAL_DIM));
        let far = cosine(&street, &lexical_embed("zebra", LEXICAL_DIM));
        assert!(near > far, "near {near} far {far}");
        assert_eq!(char_trigrams("ab"), ["<ab", "ab>"]);
    }
}
