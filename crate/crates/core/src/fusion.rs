//! Multimodal transformer over the joint sequence
//! `[text; objects; ocr; decoding steps]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::config::ModelConfig;
use crate::embed::{pad_rows, FeatureBundle, ValidLengths};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Block sizes and valid lengths of a joint sequence. Offsets are fixed by the
/// block sizes: text at 0, objects at `k`, OCR at `k + m`, decoding at
/// `k + m + n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqLayout {
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub t: usize,
    pub lens: ValidLengths,
    pub t_used: usize,
}

impl SeqLayout {
    /// Blocks at their configured caps; rows past the valid lengths are
    /// padding.
    pub fn padded(cfg: &ModelConfig, lens: ValidLengths, t_used: usize) -> Result<Self> {
        let over = lens.k_used > cfg.k_cap || lens.m_used > cfg.m_cap || lens.n_used > cfg.n_cap || t_used > cfg.t_cap;
        if over {
            return Err(Error::Shape {
                op: "layout",
                lhs: vec![lens.k_used, lens.m_used, lens.n_used, t_used],
                rhs: vec![cfg.k_cap, cfg.m_cap, cfg.n_cap, cfg.t_cap],
            });
        }
        Ok(Self {
            k: cfg.k_cap,
            m: cfg.m_cap,
            n: cfg.n_cap,
            t: cfg.t_cap,
            lens,
            t_used,
        })
    }

    /// Blocks trimmed to their valid rows. For every valid position the
    /// transformer output equals that of the padded layout.
    pub fn compact(lens: ValidLengths, t_used: usize) -> Self {
        Self {
            k: lens.k_used,
            m: lens.m_used,
            n: lens.n_used,
            t: t_used,
            lens,
            t_used,
        }
    }

    pub fn seq_len(&self) -> usize {
        self.k + self.m + self.n + self.t
    }

    pub fn obj_offset(&self) -> usize {
        self.k
    }

    pub fn ocr_offset(&self) -> usize {
        self.k + self.m
    }

    pub fn decode_offset(&self) -> usize {
        self.k + self.m + self.n
    }

    /// `Some(step)` for decoding rows, `None` for context rows.
    fn decode_step(&self, pos: usize) -> Option<usize> {
        pos.checked_sub(self.decode_offset())
    }

    pub fn is_valid(&self, pos: usize) -> bool {
        let l = &self.lens;
        if pos < self.k {
            pos < l.k_used
        } else if pos < self.ocr_offset() {
            pos - self.k < l.m_used
        } else if pos < self.decode_offset() {
            pos - self.ocr_offset() < l.n_used
        } else {
            pos - self.decode_offset() < self.t_used
        }
    }

    /// Whether query `q` may attend to key `key`.
    pub fn visible(&self, q: usize, key: usize) -> bool {
        if !self.is_valid(q) || !self.is_valid(key) {
            return false;
        }
        match (self.decode_step(q), self.decode_step(key)) {
            (_, None) => true,
            (Some(qs), Some(ks)) => ks <= qs,
            (None, Some(_)) => false,
        }
    }
}

/// Concatenates the blocks at their fixed offsets, padding each with zero
/// rows up to its layout size.
pub fn build_joint_sequence(
    g: &mut Graph,
    bundle: &FeatureBundle,
    decode: Option<Var>,
    layout: &SeqLayout,
    d: usize,
) -> Result<Var> {
    if bundle.lens() != layout.lens {
        return Err(Error::Contract(format!(
            "bundle lengths {:?} differ from layout {:?}",
            bundle.lens(),
            layout.lens
        )));
    }
    let mut parts = Vec::with_capacity(4);
    for (block, cap) in [
        (bundle.ans, layout.k),
        (bundle.obj, layout.m),
        (bundle.ocr, layout.n),
        (decode, layout.t),
    ] {
        if let Some(v) = block {
            if g.value(v).cols() != d {
                return Err(Error::Shape {
                    op: "joint_sequence",
                    lhs: g.value(v).shape().to_vec(),
                    rhs: vec![cap, d],
                });
            }
        }
        if let Some(p) = pad_rows(g, block, cap, d)? {
            parts.push(p);
        }
    }
    g.concat_rows(&parts)
}

/// Additive `S x S` mask: `0` where attention is allowed, `-inf` elsewhere.
pub fn build_mask(layout: &SeqLayout) -> Tensor {
    let s = layout.seq_len();
    let mut data = vec![f64::NEG_INFINITY; s * s];
    for q in 0..s {
        for k in 0..s {
            if layout.visible(q, k) {
                data[q * s + k] = 0.0;
            }
        }
    }
    Tensor::new(&[s, s], data).expect("square mask")
}

/// Dropout state for a training forward pass.
#[derive(Debug)]
pub struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        if self.p <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - self.p);
        let shape = g.value(x).shape().to_vec();
        let n = g.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < self.p { 0.0 } else { keep })
            .collect();
        let m = g.constant(Tensor::new(&shape, mask)?);
        g.mul(x, m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionTransformer {
    pub layers: Vec<LayerParams>,
    pub lnf_g: ParamId,
    pub lnf_b: ParamId,
    heads: usize,
    d: usize,
}

fn linear(g: &mut Graph, b: &mut Bindings, x: Var, w: ParamId, bias: ParamId) -> Result<Var> {
    let wv = b.var(g, w);
    let bv = b.var(g, bias);
    let h = g.matmul(x, wv)?;
    g.add_row(h, bv)
}

fn layer_norm(g: &mut Graph, b: &mut Bindings, x: Var, gain: ParamId, bias: ParamId) -> Result<Var> {
    let gv = b.var(g, gain);
    let bv = b.var(g, bias);
    g.layer_norm(x, gv, bv)
}

impl FusionTransformer {
    pub fn register<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let (d, s) = (cfg.d, cfg.init_std);
        let f = cfg.d * cfg.ffn_mult;
        let mut layers = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            let p = |n: &str| format!("fusion.{i}.{n}");
            layers.push(LayerParams {
                ln1_g: store.register(&p("ln1.g"), Tensor::full(&[d], 1.0))?,
                ln1_b: store.register(&p("ln1.b"), Tensor::zeros(&[d]))?,
                wq: store.register_normal(&p("attn.wq"), &[d, d], s, rng)?,
                bq: store.register(&p("attn.bq"), Tensor::zeros(&[d]))?,
                wk: store.register_normal(&p("attn.wk"), &[d, d], s, rng)?,
                bk: store.register(&p("attn.bk"), Tensor::zeros(&[d]))?,
                wv: store.register_normal(&p("attn.wv"), &[d, d], s, rng)?,
                bv: store.register(&p("attn.bv"), Tensor::zeros(&[d]))?,
                wo: store.register_normal(&p("attn.wo"), &[d, d], s, rng)?,
                bo: store.register(&p("attn.bo"), Tensor::zeros(&[d]))?,
                ln2_g: store.register(&p("ln2.g"), Tensor::full(&[d], 1.0))?,
                ln2_b: store.register(&p("ln2.b"), Tensor::zeros(&[d]))?,
                w1: store.register_normal(&p("ffn.w1"), &[d, f], s, rng)?,
                b1: store.register(&p("ffn.b1"), Tensor::zeros(&[f]))?,
                w2: store.register_normal(&p("ffn.w2"), &[f, d], s, rng)?,
                b2: store.register(&p("ffn.b2"), Tensor::zeros(&[d]))?,
            });
        }
        Ok(Self {
            layers,
            lnf_g: store.register("fusion.ln_final.g", Tensor::full(&[d], 1.0))?,
            lnf_b: store.register("fusion.ln_final.b", Tensor::zeros(&[d]))?,
            heads: cfg.heads,
            d,
        })
    }

    /// Pre-norm layers: `x + attn(ln(x))`, then `x + ffn(ln(x))`, followed by
    /// a final layer norm. When `trace` is given, attention probabilities are
    /// pushed per layer and head.
    pub fn forward(
        &self,
        g: &mut Graph,
        b: &mut Bindings,
        x: Var,
        mask: &Tensor,
        mut dropout: Option<&mut Dropout>,
        mut trace: Option<&mut Vec<Tensor>>,
    ) -> Result<Var> {
        let s = g.value(x).rows();
        if g.value(x).shape() != [s, self.d] || mask.shape() != [s, s] {
            return Err(Error::Shape {
                op: "fusion",
                lhs: g.value(x).shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        let mask = g.constant(mask.clone());
        let dh = self.d / self.heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut h = x;
        for (li, lp) in self.layers.iter().enumerate() {
            let xn = layer_norm(g, b, h, lp.ln1_g, lp.ln1_b)?;
            let q = linear(g, b, xn, lp.wq, lp.bq)?;
            let k = linear(g, b, xn, lp.wk, lp.bk)?;
            let v = linear(g, b, xn, lp.wv, lp.bv)?;
            let mut outs = Vec::with_capacity(self.heads);
            for hd in 0..self.heads {
                let qh = g.slice_cols(q, hd * dh, dh)?;
                let kh = g.slice_cols(k, hd * dh, dh)?;
                let vh = g.slice_cols(v, hd * dh, dh)?;
                let scores = g.matmul_nt(qh, kh)?;
                let scores = g.scale(scores, scale);
                let scores = g.add(scores, mask)?;
                let mut probs = g.softmax(scores);
                if let Some(t) = trace.as_deref_mut() {
                    t.push(g.value(probs).clone());
                }
                if let Some(dr) = dropout.as_deref_mut() {
                    probs = dr.apply(g, probs)?;
                }
                outs.push(g.matmul(probs, vh)?);
            }
            let att = if outs.len() == 1 {
                outs[0]
            } else {
                g.concat_cols(&outs)?
            };
            let att = linear(g, b, att, lp.wo, lp.bo)?;
            let att = match dropout.as_deref_mut() {
                Some(dr) => dr.apply(g, att)?,
                None => att,
            };
            h = g.add(h, att)?;

            let hn = layer_norm(g, b, h, lp.ln2_g, lp.ln2_b)?;
            let f = linear(g, b, hn, lp.w1, lp.b1)?;
            let f = g.gelu(f);
            let f = linear(g, b, f, lp.w2, lp.b2)?;
            let f = match dropout.as_deref_mut() {
                Some(dr) => dr.apply(g, f)?,
                None => f,
            };
            h = g.add(h, f)?;
            if !g.value(h).is_finite() {
                return Err(Error::NonFinite(format!("fusion layer {li}")));
            }
        }
        layer_norm(g, b, h, self.lnf_g, self.lnf_b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lens(k: usize, m: usize, n: usize) -> ValidLengths {
        ValidLengths {
            k_used: k,
            m_used: m,
            n_used: n,
        }
    }

    fn cfg() -> ModelConfig {
        ModelConfig {
            k_cap: 4,
            m_cap: 2,
            n_cap: 3,
            t_cap: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn offsets_and_length_are_fixed() {
        let a = SeqLayout::padded(&cfg(), lens(1, 0, 2), 1).unwrap();
        let b = SeqLayout::padded(&cfg(), lens(4, 2, 3), 3).unwrap();
        for l in [a, b] {
            assert_eq!(l.seq_len(), 4 + 2 + 3 + 3);
            assert_eq!((l.obj_offset(), l.ocr_offset(), l.decode_offset()), (4, 6, 9));
        }
        assert!(SeqLayout::padded(&cfg(), lens(5, 0, 0), 0).is_err());
    }

    #[test]
    fn decode_step_zero_sees_context_and_itself() {
        let l = SeqLayout::padded(&cfg(), lens(4, 2, 3), 3).unwrap();
        let mask = build_mask(&l);
        let s = l.seq_len();
        let row = &mask.data()[9 * s..10 * s];
        for (k, v) in row.iter().enumerate() {
            assert_eq!(*v == 0.0, k <= 9, "key {k}");
        }
        // OCR query: all context, no decoding rows
        let row = &mask.data()[6 * s..7 * s];
        for (k, v) in row.iter().enumerate() {
            assert_eq!(*v == 0.0, k < 9, "key {k}");
        }
    }

    #[test]
    fn padding_is_masked_both_ways() {
        let l = SeqLayout::padded(&cfg(), lens(2, 1, 0), 1).unwrap();
        let mask = build_mask(&l);
        let s = l.seq_len();
        for pad in [2, 3, 5, 6, 7, 8, 10, 11] {
            for other in 0..s {
                assert_eq!(mask.data()[pad * s + other], f64::NEG_INFINITY);
                assert_eq!(mask.data()[other * s + pad], f64::NEG_INFINITY);
            }
        }
    }
}
