//! Word normalization shared by scene text, questions, answers and metrics.

use alloc::string::String;
use alloc::vec::Vec;

/// Lowercases and keeps only `[a-z0-9]`.
pub fn normalize_word(word: &str) -> String {
    word.chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
        .collect()
}

pub fn is_normalized_word(word: &str) -> bool {
    !word.is_empty() && word.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
}

/// Splits on whitespace, normalizes each piece and drops the ones that end
/// up empty.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(normalize_word)
        .filter(|w| !w.is_empty())
        .collect()
}

/// Space-joined normalized form, used to compare answers.
pub fn normalize_answer(text: &str) -> String {
    tokenize(text).join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_punctuation_and_case() {
        assert_eq!(normalize_word("Coca-Cola!"), "cocacola");
        assert_eq!(
            tokenize("What is  written on the Bus?"),
            ["what", "is", "written", "on", "the", "bus"]
        );
        assert_eq!(normalize_answer("  Hello,   World "), "hello world");
        assert!(is_normalized_word("abc123"));
        assert!(!is_normalized_word("ab c"));
        assert!(!is_normalized_word(""));
    }
}
