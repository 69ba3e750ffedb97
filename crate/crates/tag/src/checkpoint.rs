//! Self-contained binary checkpoints: architecture, vocabulary, enabled
//! modalities and every named parameter tensor.
//!
//! Layout (little endian): magic, then length-prefixed sections. Floats are
//! stored as raw bits so save -> load -> save is byte-identical.

use std::path::Path;

use tag_core::config::ModelConfig;
use tag_core::model::{Modalities, TextAwareModel};
use tag_core::params::ParamStore;
use tag_core::tensor::Tensor;
use tag_core::vocab::Vocabulary;

use crate::error::{Error, Result};
use crate::fsutil;

const MAGIC: &[u8; 8] = b"TAGCKPT1";

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> std::result::Result<usize, String> {
        usize::try_from(self.u64()?).map_err(|e| e.to_string())
    }
    /// A count that must fit in the remaining bytes at `unit` bytes each.
    fn count(&mut self, unit: usize) -> std::result::Result<usize, String> {
        let n = self.usize()?;
        if n.saturating_mul(unit) > self.buf.len() - self.pos {
            return Err(format!("implausible length {n} at byte {}", self.pos - 8));
        }
        Ok(n)
    }
    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn str(&mut self) -> std::result::Result<String, String> {
        let n = self.count(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
}

pub fn encode(model: &TextAwareModel) -> Vec<u8> {
    let mut w = Writer(MAGIC.to_vec());
    let c = &model.cfg;
    for v in [
        c.d,
        c.layers,
        c.heads,
        c.k_cap,
        c.m_cap,
        c.n_cap,
        c.t_cap,
        c.ffn_mult,
        c.max_primary_words,
        c.appearance_dim,
        c.lexical_dim,
    ] {
        w.usize(v);
    }
    w.f64(c.dropout);
    w.f64(c.init_std);
    w.0.push(model.modalities.objects as u8);
    w.0.push(model.modalities.ocr as u8);

    let words = model.vocab.words();
    w.usize(words.len());
    for word in words {
        w.str(word);
    }
    let bigrams = model.vocab.bigrams();
    w.usize(bigrams.len());
    for b in bigrams {
        w.0.extend_from_slice(b);
    }

    w.usize(model.params.len());
    for (_, name, t) in model.params.iter() {
        w.str(name);
        w.usize(t.shape().len());
        for &s in t.shape() {
            w.usize(s);
        }
        for &v in t.data() {
            w.f64(v);
        }
    }
    w.0
}

fn decode_inner(bytes: &[u8]) -> std::result::Result<TextAwareModel, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let mut u = [0usize; 11];
    for slot in &mut u {
        *slot = r.usize()?;
    }
    let cfg = ModelConfig {
        d: u[0],
        layers: u[1],
        heads: u[2],
        k_cap: u[3],
        m_cap: u[4],
        n_cap: u[5],
        t_cap: u[6],
        ffn_mult: u[7],
        max_primary_words: u[8],
        appearance_dim: u[9],
        lexical_dim: u[10],
        dropout: r.f64()?,
        init_std: r.f64()?,
    };
    let flags = r.take(2)?;
    let modalities = Modalities {
        objects: flags[0] != 0,
        ocr: flags[1] != 0,
    };

    let n_words = r.count(8)?;
    let words = (0..n_words)
        .map(|_| r.str())
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let n_bigrams = r.count(2)?;
    let mut bigrams = Vec::with_capacity(n_bigrams);
    for _ in 0..n_bigrams {
        let b = r.take(2)?;
        bigrams.push([b[0], b[1]]);
    }
    let vocab = Vocabulary::from_parts(words, bigrams).map_err(|e| e.to_string())?;

    let n_params = r.count(16)?;
    let mut store = ParamStore::new();
    for _ in 0..n_params {
        let name = r.str()?;
        let rank = r.count(8)?;
        let shape = (0..rank)
            .map(|_| r.usize())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &s| a.checked_mul(s))
            .ok_or("shape overflow")?;
        if len.saturating_mul(8) > bytes.len() - r.pos {
            return Err(format!("parameter `{name}` truncated"));
        }
        let data = (0..len).map(|_| r.f64()).collect::<std::result::Result<Vec<_>, _>>()?;
        let t = Tensor::new(&shape, data).map_err(|e| e.to_string())?;
        store.register(&name, t).map_err(|e| e.to_string())?;
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    let mut model = TextAwareModel::from_params(cfg, vocab, &store).map_err(|e| e.to_string())?;
    model.modalities = modalities;
    Ok(model)
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<TextAwareModel> {
    decode_inner(bytes).map_err(|msg| Error::Checkpoint {
        path: origin.to_path_buf(),
        msg,
    })
}

/// Writes the checkpoint and returns its sha256, used as the checkpoint id.
pub fn save(path: &Path, model: &TextAwareModel) -> Result<String> {
    let bytes = encode(model);
    fsutil::write_file(path, &bytes)?;
    Ok(fsutil::sha256_hex(&bytes))
}

pub fn load(path: &Path) -> Result<TextAwareModel> {
    decode(&fsutil::read_file(path)?, path)
}
