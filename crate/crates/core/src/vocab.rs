use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::phoc::{frequent_bigrams, Bigram};
use crate::scene::Scene;

pub const PAD: &str = "<pad>";
pub const BEGIN: &str = "<begin>";
pub const END: &str = "<end>";
pub const UNK: &str = "<unk>";
pub const SPECIALS: [&str; 4] = [PAD, BEGIN, END, UNK];

pub const PAD_ID: usize = 0;
pub const BEGIN_ID: usize = 1;
pub const END_ID: usize = 2;
pub const UNK_ID: usize = 3;

/// Word ids (specials first, then words in lexicographic order) plus the
/// bigram list frozen for PHOC features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
    bigrams: Vec<Bigram>,
}

impl Vocabulary {
    /// Builds from every question and answer word of `train`, with bigrams
    /// counted over the OCR texts of the same scenes.
    pub fn build(train: &[Scene]) -> Self {
        let mut set = BTreeSet::new();
        for qa in train.iter().flat_map(|s| &s.qa_pairs) {
            for w in qa.question_words.iter().chain(&qa.answer_words) {
                set.insert(w.clone());
            }
        }
        let bigrams = frequent_bigrams(train.iter().flat_map(|s| s.ocr_tokens.iter().map(|t| t.text.as_str())));
        let mut words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        words.extend(set.into_iter().filter(|w| !SPECIALS.contains(&w.as_str())));
        Self::from_parts(words, bigrams).expect("built vocabulary is well formed")
    }

    /// Reassembles a vocabulary from an ordered word list (ids are positions).
    pub fn from_parts(words: Vec<String>, bigrams: Vec<Bigram>) -> Result<Self> {
        if words.len() < SPECIALS.len() || words[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Contract(format!("vocabulary must start with {SPECIALS:?}")));
        }
        let mut index = BTreeMap::new();
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Self { words, index, bigrams })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Id of `word`, or `<unk>`.
    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    /// Id of a real (non-special) word present in the vocabulary.
    pub fn known(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied().filter(|&i| i >= SPECIALS.len())
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn bigrams(&self) -> &[Bigram] {
        &self.bigrams
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_generate, SynthConfig};

    #[test]
    fn build_is_deterministic_with_specials_first() {
        let c = synth_generate(&SynthConfig::new(5, 60)).unwrap();
        let v = Vocabulary::build(&c.train);
        assert_eq!(v, Vocabulary::build(&c.train));
        for (i, s) in SPECIALS.iter().enumerate() {
            assert_eq!(v.id(s), i);
        }
        assert_eq!(v.id("definitely-not-a-word"), UNK_ID);
        assert_eq!(v.known(END), None);
        assert!(v.known("what").is_some());
        assert_eq!(v.bigrams().len(), 50);
    }

    #[test]
    fn from_parts_requires_specials() {
        assert!(Vocabulary::from_parts(alloc::vec!["a".into()], Vec::new()).is_err());
        let mut w: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        w.push("x".into());
        w.push("x".into());
        assert!(Vocabulary::from_parts(w, Vec::new()).is_err());
    }
}
