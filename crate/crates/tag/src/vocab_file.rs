//! Vocabulary as `word<TAB>id` lines (specials first) plus the frozen
//! PHOC bigram list, one bigram per line.

use std::path::Path;

use tag_core::phoc::Bigram;
use tag_core::vocab::Vocabulary;

use crate::error::{Error, Result};
use crate::fsutil;

pub fn render_words(v: &Vocabulary) -> String {
    v.words()
        .iter()
        .enumerate()
        .map(|(i, w)| format!("{w}\t{i}\n"))
        .collect()
}

pub fn render_bigrams(v: &Vocabulary) -> String {
    v.bigrams()
        .iter()
        .map(|b| format!("{}\n", String::from_utf8_lossy(b)))
        .collect()
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn parse(words: &str, bigrams: &str, origin: &Path) -> Result<Vocabulary> {
    let mut list = Vec::new();
    for (i, line) in words.lines().enumerate() {
        let (w, id) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(origin, i + 1, "expected word<TAB>id"))?;
        let id: usize = id
            .trim()
            .parse()
            .map_err(|_| parse_err(origin, i + 1, format!("bad id {id:?}")))?;
        if id != list.len() {
            return Err(parse_err(
                origin,
                i + 1,
                format!("id {id} out of order, expected {}", list.len()),
            ));
        }
        list.push(w.to_owned());
    }
    let mut grams: Vec<Bigram> = Vec::new();
    for (i, line) in bigrams.lines().enumerate() {
        match line.as_bytes() {
            [a, b] => grams.push([*a, *b]),
            _ => return Err(parse_err(origin, i + 1, format!("bad bigram {line:?}"))),
        }
    }
    Ok(Vocabulary::from_parts(list, grams)?)
}

/// Writes `<stem>.tsv` and `<stem>.bigrams` next to each other.
pub fn save(dir: &Path, stem: &str, v: &Vocabulary) -> Result<[std::path::PathBuf; 2]> {
    let words = dir.join(format!("{stem}.tsv"));
    let bigrams = dir.join(format!("{stem}.bigrams"));
    fsutil::write_file(&words, render_words(v))?;
    fsutil::write_file(&bigrams, render_bigrams(v))?;
    Ok([words, bigrams])
}

pub fn load(dir: &Path, stem: &str) -> Result<Vocabulary> {
    let words = dir.join(format!("{stem}.tsv"));
    let bigrams = dir.join(format!("{stem}.bigrams"));
    parse(&fsutil::read_text(&words)?, &fsutil::read_text(&bigrams)?, &words)
}
