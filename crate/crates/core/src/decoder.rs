//! Dynamic pointer-network head: each decoding step scores the fixed
//! vocabulary and, through a bilinear form, every OCR token of the scene.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::config::ModelConfig;
use crate::embed::{EmbeddingTables, Segment};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::vocab::{Vocabulary, BEGIN_ID, END_ID, PAD_ID};

/// One emitted token: a vocabulary word or a pointer to an OCR token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenRef {
    Vocab(usize),
    Ocr(usize),
}

impl TokenRef {
    pub fn source_tag(&self) -> String {
        match self {
            TokenRef::Vocab(_) => "vocab".into(),
            TokenRef::Ocr(j) => format!("ocr:{j}"),
        }
    }
}

/// Scores of a single decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputScores {
    pub vocab_scores: Vec<f64>,
    pub pointer_scores: Vec<f64>,
}

impl OutputScores {
    pub fn from_row(row: &[f64], vocab_len: usize) -> Self {
        Self {
            vocab_scores: row[..vocab_len].to_vec(),
            pointer_scores: row[vocab_len..].to_vec(),
        }
    }

    /// Highest-scoring token; the vocabulary wins exact ties.
    pub fn argmax(&self) -> TokenRef {
        let mut best = (f64::NEG_INFINITY, TokenRef::Vocab(END_ID));
        for (i, &s) in self.vocab_scores.iter().enumerate() {
            if s > best.0 {
                best = (s, TokenRef::Vocab(i));
            }
        }
        for (j, &s) in self.pointer_scores.iter().enumerate() {
            if s > best.0 {
                best = (s, TokenRef::Ocr(j));
            }
        }
        best.1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeState {
    pub step: usize,
    pub emitted: Vec<TokenRef>,
    pub finished: bool,
}

impl DecodeState {
    pub fn new() -> Self {
        Self {
            step: 0,
            emitted: Vec::new(),
            finished: false,
        }
    }

    /// Records the argmax of step `self.step`.
    pub fn advance(&mut self, token: TokenRef, t_cap: usize) {
        self.step += 1;
        if token == TokenRef::Vocab(END_ID) {
            self.finished = true;
        } else {
            self.emitted.push(token);
        }
        if self.step >= t_cap {
            self.finished = true;
        }
    }

    /// Decoder inputs so far: `<begin>` followed by the emitted tokens.
    pub fn inputs(&self) -> Vec<TokenRef> {
        let mut v = vec![TokenRef::Vocab(BEGIN_ID)];
        v.extend_from_slice(&self.emitted);
        v
    }
}

impl Default for DecodeState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    /// Each supervised step's summed BCE divided by the number of supervised
    /// steps, so that `total == per_step.sum()`. `None` for skipped steps.
    pub per_step: Vec<Option<f64>>,
    pub supervised_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderHeads {
    pub vocab_w: ParamId,
    pub vocab_b: ParamId,
    pub ptr_dec_w: ParamId,
    pub ptr_dec_b: ParamId,
    pub ptr_ocr_w: ParamId,
    pub ptr_ocr_b: ParamId,
}

impl DecoderHeads {
    pub fn register<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, vocab_len: usize, rng: &mut R) -> Result<Self> {
        let (d, s) = (cfg.d, cfg.init_std);
        Ok(Self {
            vocab_w: store.register_normal("head.vocab.w", &[d, vocab_len], s, rng)?,
            vocab_b: store.register("head.vocab.b", Tensor::zeros(&[vocab_len]))?,
            ptr_dec_w: store.register_normal("head.ptr_dec.w", &[d, d], s, rng)?,
            ptr_dec_b: store.register("head.ptr_dec.b", Tensor::zeros(&[d]))?,
            ptr_ocr_w: store.register_normal("head.ptr_ocr.w", &[d, d], s, rng)?,
            ptr_ocr_b: store.register("head.ptr_ocr.b", Tensor::zeros(&[d]))?,
        })
    }
}

fn linear(g: &mut Graph, b: &mut Bindings, x: Var, w: ParamId, bias: ParamId) -> Result<Var> {
    let wv = b.var(g, w);
    let bv = b.var(g, bias);
    let h = g.matmul(x, wv)?;
    g.add_row(h, bv)
}

/// Concatenated `[vocab | pointer]` scores for every decoding row.
///
/// `ocr` holds `n_slots` enriched OCR rows of which the first `n_used` are
/// real; the rest, and the `<begin>`/`<pad>` vocabulary entries, are masked
/// to `-inf`.
pub fn score_rows(
    g: &mut Graph,
    b: &mut Bindings,
    heads: &DecoderHeads,
    decode: Var,
    ocr: Option<Var>,
    n_used: usize,
) -> Result<Var> {
    let t = g.value(decode).rows();
    let vocab = linear(g, b, decode, heads.vocab_w, heads.vocab_b)?;
    let v = g.value(vocab).cols();
    let mut vmask = vec![0.0; t * v];
    for r in 0..t {
        vmask[r * v + PAD_ID] = f64::NEG_INFINITY;
        vmask[r * v + BEGIN_ID] = f64::NEG_INFINITY;
    }
    let vmask = g.constant(Tensor::new(&[t, v], vmask)?);
    let vocab = g.add(vocab, vmask)?;
    let Some(ocr) = ocr else {
        return Ok(vocab);
    };
    let n = g.value(ocr).rows();
    if n_used > n {
        return Err(Error::IndexOutOfRange {
            what: "valid OCR rows",
            index: n_used,
            len: n,
        });
    }
    let dq = linear(g, b, decode, heads.ptr_dec_w, heads.ptr_dec_b)?;
    let ok = linear(g, b, ocr, heads.ptr_ocr_w, heads.ptr_ocr_b)?;
    let ptr = g.matmul_nt(dq, ok)?;
    let ptr = if n_used < n {
        let mut pm = vec![0.0; t * n];
        for r in 0..t {
            for j in n_used..n {
                pm[r * n + j] = f64::NEG_INFINITY;
            }
        }
        let pm = g.constant(Tensor::new(&[t, n], pm)?);
        g.add(ptr, pm)?
    } else {
        ptr
    };
    g.concat_cols(&[vocab, ptr])
}

/// Bilinear pointer score between transformed decoder and OCR vectors.
pub fn pointer_score(decode_t: &[f64], ocr_j: &[f64]) -> f64 {
    decode_t.iter().zip(ocr_j).map(|(a, b)| a * b).sum()
}

/// Scores one decoding step outside a training graph.
pub fn score_step(
    store: &ParamStore,
    heads: &DecoderHeads,
    enriched_decode: &[f64],
    enriched_ocr: Option<&Tensor>,
    n_used: usize,
) -> Result<OutputScores> {
    let mut g = Graph::new();
    let mut b = Bindings::new(store);
    let dec = g.constant(Tensor::new(&[1, enriched_decode.len()], enriched_decode.to_vec())?);
    let ocr = enriched_ocr.map(|t| g.constant(t.clone()));
    let scores = score_rows(&mut g, &mut b, heads, dec, ocr, n_used)?;
    let v = store.get(heads.vocab_b).len();
    Ok(OutputScores::from_row(g.value(scores).data(), v))
}

/// Decoder input rows: the previous token's embedding (word table row, or the
/// OCR token's input embedding when it was copied) plus step position and
/// decode segment embeddings.
pub fn step_input_embedding(
    g: &mut Graph,
    b: &mut Bindings,
    tables: &EmbeddingTables,
    inputs: &[TokenRef],
    ocr_embed: Option<Var>,
) -> Result<Var> {
    let word = b.var(g, tables.word);
    let mut rows = Vec::with_capacity(inputs.len());
    for tok in inputs {
        rows.push(match *tok {
            TokenRef::Vocab(id) => g.gather_rows(word, &[id])?,
            TokenRef::Ocr(j) => {
                let ocr = ocr_embed.ok_or(Error::IndexOutOfRange {
                    what: "OCR token",
                    index: j,
                    len: 0,
                })?;
                let n = g.value(ocr).rows();
                if j >= n {
                    return Err(Error::IndexOutOfRange {
                        what: "OCR token",
                        index: j,
                        len: n,
                    });
                }
                g.slice_rows(ocr, j, 1)?
            }
        });
    }
    let x = if rows.len() == 1 {
        rows[0]
    } else {
        g.concat_rows(&rows)?
    };
    let pos_table = b.var(g, tables.decode_pos);
    let steps: Vec<usize> = (0..inputs.len()).collect();
    let pos = g.gather_rows(pos_table, &steps)?;
    let seg_table = b.var(g, tables.segment);
    let seg = g.gather_rows(seg_table, &vec![Segment::Decode as usize; inputs.len()])?;
    let x = g.add(x, pos)?;
    g.add(x, seg)
}

/// Multi-hot target for one word: its vocabulary id (if known) and every OCR
/// slot holding the same text. `None` when neither exists.
pub fn word_target(word: &str, vocab: &Vocabulary, ocr_texts: &[String], width: usize) -> Option<Vec<f64>> {
    let mut t = vec![0.0; width];
    let mut any = false;
    if let Some(id) = vocab.known(word) {
        t[id] = 1.0;
        any = true;
    }
    for (j, o) in ocr_texts.iter().enumerate() {
        if o == word {
            t[vocab.len() + j] = 1.0;
            any = true;
        }
    }
    any.then_some(t)
}

/// Teacher-forcing input for a ground-truth word: the first OCR token with
/// that text (as it would be fed back after pointing), else the vocabulary
/// entry, else `<unk>`.
pub fn word_input(word: &str, vocab: &Vocabulary, ocr_texts: &[String]) -> TokenRef {
    if let Some(j) = ocr_texts.iter().position(|o| o == word) {
        TokenRef::Ocr(j)
    } else if let Some(id) = vocab.known(word) {
        TokenRef::Vocab(id)
    } else {
        TokenRef::Vocab(crate::vocab::UNK_ID)
    }
}

pub fn end_target(width: usize) -> Vec<f64> {
    let mut t = vec![0.0; width];
    t[END_ID] = 1.0;
    t
}
