//! Embedding of the three input modalities into a shared `d`-dimensional
//! space: extended text words, object regions and OCR tokens.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::lexical::lexical_embed;
use crate::params::{Bindings, ParamId, ParamStore};
use crate::phoc::{phoc, Bigram};
use crate::scene::{BBox, Scene};
use crate::tensor::Tensor;
use crate::vocab::Vocabulary;

/// Which part of the joint sequence a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    /// Answer words for question generation, question words for answering.
    Primary = 0,
    ObjectLabel = 1,
    OcrWord = 2,
    ObjectRegion = 3,
    OcrRegion = 4,
    Decode = 5,
}

pub const NUM_SEGMENTS: usize = 6;

/// Width of the relative box features.
pub const BOX_DIM: usize = 4;

pub fn relative_bbox(bbox: &BBox, width: f64, height: f64) -> Result<[f64; 4]> {
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::ZeroImageSize);
    }
    Ok([bbox.x1 / width, bbox.y1 / height, bbox.x2 / width, bbox.y2 / height])
}

/// Raw (pre-projection) features of one scene, capped to the model's
/// object and OCR limits.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFeatures {
    pub object_labels: Vec<String>,
    pub ocr_texts: Vec<String>,
    /// `m_used x (A + 4)`: appearance, then relative box.
    pub objects: Option<Tensor>,
    /// `n_used x (A + lex + 604 + 4)`: appearance, lexical, PHOC, then
    /// relative box.
    pub ocr: Option<Tensor>,
}

impl SceneFeatures {
    pub fn m_used(&self) -> usize {
        self.object_labels.len()
    }

    pub fn n_used(&self) -> usize {
        self.ocr_texts.len()
    }

    pub fn extract(scene: &Scene, cfg: &ModelConfig, bigrams: &[Bigram]) -> Result<Self> {
        let a = cfg.appearance_dim;
        let objs: Vec<_> = scene.objects.iter().take(cfg.m_cap).collect();
        let toks: Vec<_> = scene.ocr_tokens.iter().take(cfg.n_cap).collect();
        let mut obj_rows = Vec::with_capacity(objs.len() * cfg.object_feature_dim());
        for o in &objs {
            if o.appearance.len() != a {
                return Err(Error::InvalidScene {
                    image_id: scene.image_id.clone(),
                    detail: alloc::format!("object appearance length {} != {a}", o.appearance.len()),
                });
            }
            obj_rows.extend_from_slice(&o.appearance);
            obj_rows.extend_from_slice(&relative_bbox(&o.bbox, scene.width, scene.height)?);
        }
        let mut ocr_rows = Vec::with_capacity(toks.len() * cfg.ocr_feature_dim());
        for t in &toks {
            if t.appearance.len() != a {
                return Err(Error::InvalidScene {
                    image_id: scene.image_id.clone(),
                    detail: alloc::format!("ocr appearance length {} != {a}", t.appearance.len()),
                });
            }
            ocr_rows.extend_from_slice(&t.appearance);
            ocr_rows.extend(lexical_embed(&t.text, cfg.lexical_dim));
            ocr_rows.extend(phoc(&t.text, bigrams)?.to_f64());
            ocr_rows.extend_from_slice(&relative_bbox(&t.bbox, scene.width, scene.height)?);
        }
        Ok(Self {
            object_labels: objs.iter().map(|o| o.class_label.clone()).collect(),
            ocr_texts: toks.iter().map(|t| t.text.clone()).collect(),
            objects: if objs.is_empty() {
                None
            } else {
                Some(Tensor::new(&[objs.len(), cfg.object_feature_dim()], obj_rows)?)
            },
            ocr: if toks.is_empty() {
                None
            } else {
                Some(Tensor::new(&[toks.len(), cfg.ocr_feature_dim()], ocr_rows)?)
            },
        })
    }
}

/// Word ids and segments of the extended text: primary words (capped),
/// then object labels, then OCR words, truncated to `k_cap`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtendedText {
    pub ids: Vec<usize>,
    pub segments: Vec<Segment>,
}

impl ExtendedText {
    pub fn build(primary: &[String], feats: &SceneFeatures, vocab: &Vocabulary, cfg: &ModelConfig) -> Self {
        let mut ids = Vec::new();
        let mut segments = Vec::new();
        let parts = [
            (
                primary.iter().take(cfg.max_primary_words).collect::<Vec<_>>(),
                Segment::Primary,
            ),
            (feats.object_labels.iter().collect(), Segment::ObjectLabel),
            (feats.ocr_texts.iter().collect(), Segment::OcrWord),
        ];
        for (words, seg) in parts {
            for w in words {
                ids.push(vocab.id(w));
                segments.push(seg);
            }
        }
        ids.truncate(cfg.k_cap);
        segments.truncate(cfg.k_cap);
        Self { ids, segments }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Linear map followed by layer norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormedProjection {
    pub w: ParamId,
    pub b: ParamId,
    pub ln_g: ParamId,
    pub ln_b: ParamId,
}

impl NormedProjection {
    fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.d;
        Ok(Self {
            w: store.register_normal(&format!("{name}.w"), &[input, d], cfg.init_std, rng)?,
            b: store.register(&format!("{name}.b"), Tensor::zeros(&[d]))?,
            ln_g: store.register(&format!("{name}.ln.g"), Tensor::full(&[d], 1.0))?,
            ln_b: store.register(&format!("{name}.ln.b"), Tensor::zeros(&[d]))?,
        })
    }

    fn apply(&self, g: &mut Graph, b: &mut Bindings, x: Var) -> Result<Var> {
        let wv = b.var(g, self.w);
        let bv = b.var(g, self.b);
        let h = g.matmul(x, wv)?;
        let h = g.add_row(h, bv)?;
        let gain = b.var(g, self.ln_g);
        let bias = b.var(g, self.ln_b);
        g.layer_norm(h, gain, bias)
    }
}

/// Trainable embedding parameters. Region features are projected in two
/// blocks (content and location), each layer-normed, and summed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingTables {
    pub word: ParamId,
    pub text_pos: ParamId,
    pub segment: ParamId,
    pub decode_pos: ParamId,
    pub obj_feat: NormedProjection,
    pub obj_box: NormedProjection,
    pub ocr_feat: NormedProjection,
    pub ocr_box: NormedProjection,
}

impl EmbeddingTables {
    pub fn register<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, vocab_len: usize, rng: &mut R) -> Result<Self> {
        let (d, s) = (cfg.d, cfg.init_std);
        Ok(Self {
            word: store.register_normal("embed.word", &[vocab_len, d], s, rng)?,
            text_pos: store.register_normal("embed.text_pos", &[cfg.k_cap, d], s, rng)?,
            segment: store.register_normal("embed.segment", &[NUM_SEGMENTS, d], s, rng)?,
            decode_pos: store.register_normal("embed.decode_pos", &[cfg.t_cap, d], s, rng)?,
            obj_feat: NormedProjection::register(
                store,
                "embed.obj_proj",
                cfg.object_feature_dim() - BOX_DIM,
                cfg,
                rng,
            )?,
            obj_box: NormedProjection::register(store, "embed.obj_box", BOX_DIM, cfg, rng)?,
            ocr_feat: NormedProjection::register(store, "embed.ocr_proj", cfg.ocr_feature_dim() - BOX_DIM, cfg, rng)?,
            ocr_box: NormedProjection::register(store, "embed.ocr_box", BOX_DIM, cfg, rng)?,
        })
    }
}

fn segment_rows(g: &mut Graph, b: &mut Bindings, t: &EmbeddingTables, segs: &[Segment]) -> Result<Var> {
    let table = b.var(g, t.segment);
    let ids: Vec<usize> = segs.iter().map(|&s| s as usize).collect();
    g.gather_rows(table, &ids)
}

/// Extended text rows: word + position + segment embeddings.
pub fn embed_answer_extended(
    g: &mut Graph,
    b: &mut Bindings,
    t: &EmbeddingTables,
    text: &ExtendedText,
) -> Result<Option<Var>> {
    if text.is_empty() {
        return Ok(None);
    }
    let word = b.var(g, t.word);
    let words = g.gather_rows(word, &text.ids)?;
    let pos_table = b.var(g, t.text_pos);
    let positions: Vec<usize> = (0..text.len()).collect();
    let pos = g.gather_rows(pos_table, &positions)?;
    let seg = segment_rows(g, b, t, &text.segments)?;
    let x = g.add(words, pos)?;
    Ok(Some(g.add(x, seg)?))
}

fn project(
    g: &mut Graph,
    b: &mut Bindings,
    feats: &Tensor,
    content: &NormedProjection,
    location: &NormedProjection,
    seg: Var,
) -> Result<Var> {
    let width = feats.cols();
    let x = g.constant(feats.clone());
    let xc = g.slice_cols(x, 0, width - BOX_DIM)?;
    let xl = g.slice_cols(x, width - BOX_DIM, BOX_DIM)?;
    let hc = content.apply(g, b, xc)?;
    let hl = location.apply(g, b, xl)?;
    let h = g.add(hc, hl)?;
    g.add_row(h, seg)
}

/// `m_used x d`: projected appearance plus projected relative box, plus
/// segment.
pub fn embed_objects(
    g: &mut Graph,
    b: &mut Bindings,
    t: &EmbeddingTables,
    feats: &SceneFeatures,
) -> Result<Option<Var>> {
    let Some(x) = &feats.objects else {
        return Ok(None);
    };
    let seg = segment_rows(g, b, t, &[Segment::ObjectRegion])?;
    project(g, b, x, &t.obj_feat, &t.obj_box, seg).map(Some)
}

/// `n_used x d`: projected appearance + lexical + PHOC plus projected box,
/// plus segment.
pub fn embed_ocr(g: &mut Graph, b: &mut Bindings, t: &EmbeddingTables, feats: &SceneFeatures) -> Result<Option<Var>> {
    let Some(x) = &feats.ocr else {
        return Ok(None);
    };
    let seg = segment_rows(g, b, t, &[Segment::OcrRegion])?;
    project(g, b, x, &t.ocr_feat, &t.ocr_box, seg).map(Some)
}

/// The three embedded blocks holding only their valid rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureBundle {
    pub ans: Option<Var>,
    pub obj: Option<Var>,
    pub ocr: Option<Var>,
    pub k_used: usize,
    pub m_used: usize,
    pub n_used: usize,
}

impl FeatureBundle {
    pub fn lens(&self) -> ValidLengths {
        ValidLengths {
            k_used: self.k_used,
            m_used: self.m_used,
            n_used: self.n_used,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidLengths {
    pub k_used: usize,
    pub m_used: usize,
    pub n_used: usize,
}

/// `block` padded with zero rows up to `cap` rows.
pub fn pad_rows(g: &mut Graph, block: Option<Var>, cap: usize, d: usize) -> Result<Option<Var>> {
    let used = block.map_or(0, |v| g.value(v).rows());
    if used > cap {
        return Err(Error::Shape {
            op: "pad_rows",
            lhs: vec![used],
            rhs: vec![cap],
        });
    }
    if used == cap {
        return Ok(block);
    }
    let zeros = g.constant(Tensor::zeros(&[cap - used, d]));
    match block {
        Some(v) => g.concat_rows(&[v, zeros]).map(Some),
        None => Ok(Some(zeros)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_bbox_examples() {
        assert_eq!(
            relative_bbox(&BBox::new(0.0, 0.0, 50.0, 80.0), 50.0, 80.0).unwrap(),
            [0.0, 0.0, 1.0, 1.0]
        );
        let r = relative_bbox(&BBox::new(10.0, 20.0, 30.0, 40.0), 100.0, 200.0).unwrap();
        assert_eq!(r, [0.1, 0.1, 0.3, 0.2]);
        assert_eq!(
            relative_bbox(&BBox::new(0.0, 0.0, 1.0, 1.0), 0.0, 10.0),
            Err(Error::ZeroImageSize)
        );
    }
}
