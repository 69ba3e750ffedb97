//! Embeddings, fusion transformer and pointer decoder assembled into one
//! sequence model. Question generation feeds answer words and decodes a
//! question; the downstream answering model swaps the two roles.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{bce_with_logits, Graph, Var};
use crate::config::ModelConfig;
use crate::decoder::{
    end_target, score_rows, step_input_embedding, word_input, word_target, DecodeState, DecoderHeads, LossReport,
    OutputScores, TokenRef,
};
use crate::embed::{
    embed_answer_extended, embed_objects, embed_ocr, EmbeddingTables, ExtendedText, FeatureBundle, SceneFeatures,
};
use crate::error::{Error, Result};
use crate::fusion::{build_joint_sequence, build_mask, Dropout, FusionTransformer, SeqLayout};
use crate::params::{Bindings, Gradients, ParamStore};
use crate::scene::Scene;
use crate::tensor::Tensor;
use crate::vocab::{Vocabulary, END_ID};

/// Which region blocks take part in fusion. A disabled block is masked out
/// entirely (equivalent to zero rows that nobody attends to).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Modalities {
    pub objects: bool,
    pub ocr: bool,
}

impl Modalities {
    pub const ALL: Self = Self {
        objects: true,
        ocr: true,
    };
    pub const TEXT_ONLY: Self = Self {
        objects: false,
        ocr: false,
    };
}

impl Default for Modalities {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ForwardOptions {
    /// Lay blocks out at their configured caps instead of trimming padding.
    pub padded: bool,
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `t_used x (|V| + n)` concatenated scores of the decoding rows.
    pub scores: Var,
    /// Full transformer output.
    pub enriched: Var,
    pub bundle: FeatureBundle,
    pub layout: SeqLayout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<TokenRef>,
    pub words: Vec<String>,
}

impl Decoded {
    pub fn sources(&self) -> Vec<String> {
        self.tokens.iter().map(TokenRef::source_tag).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextAwareModel {
    pub cfg: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub modalities: Modalities,
    tables: EmbeddingTables,
    fusion: FusionTransformer,
    heads: DecoderHeads,
}

impl TextAwareModel {
    pub fn new(cfg: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let v = vocab.len();
        let tables = EmbeddingTables::register(&mut params, &cfg, v, &mut rng)?;
        let fusion = FusionTransformer::register(&mut params, &cfg, &mut rng)?;
        let heads = DecoderHeads::register(&mut params, &cfg, v, &mut rng)?;
        Ok(Self {
            cfg,
            vocab,
            params,
            modalities: Modalities::ALL,
            tables,
            fusion,
            heads,
        })
    }

    /// Rebuilds a model around saved parameters.
    pub fn from_params(cfg: ModelConfig, vocab: Vocabulary, params: &ParamStore) -> Result<Self> {
        let mut m = Self::new(cfg, vocab, 0)?;
        m.params.load_from(params)?;
        Ok(m)
    }

    pub fn tables(&self) -> &EmbeddingTables {
        &self.tables
    }

    pub fn heads(&self) -> &DecoderHeads {
        &self.heads
    }

    pub fn fusion(&self) -> &FusionTransformer {
        &self.fusion
    }

    pub fn features(&self, scene: &Scene) -> Result<SceneFeatures> {
        SceneFeatures::extract(scene, &self.cfg, self.vocab.bigrams())
    }

    fn score_width(&self, n_slots: usize) -> usize {
        self.vocab.len() + n_slots
    }

    pub fn embed_bundle(
        &self,
        g: &mut Graph,
        b: &mut Bindings,
        feats: &SceneFeatures,
        primary: &[String],
    ) -> Result<FeatureBundle> {
        let text = ExtendedText::build(primary, feats, &self.vocab, &self.cfg);
        let ans = embed_answer_extended(g, b, &self.tables, &text)?;
        let obj = if self.modalities.objects {
            embed_objects(g, b, &self.tables, feats)?
        } else {
            None
        };
        let ocr = if self.modalities.ocr {
            embed_ocr(g, b, &self.tables, feats)?
        } else {
            None
        };
        Ok(FeatureBundle {
            ans,
            obj,
            ocr,
            k_used: text.len(),
            m_used: obj.map_or(0, |v| g.value(v).rows()),
            n_used: ocr.map_or(0, |v| g.value(v).rows()),
        })
    }

    /// Runs embeddings, fusion and scoring for the decoder inputs `inputs`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        b: &mut Bindings,
        feats: &SceneFeatures,
        primary: &[String],
        inputs: &[TokenRef],
        opts: ForwardOptions,
        dropout: Option<&mut Dropout>,
        trace: Option<&mut Vec<Tensor>>,
    ) -> Result<ForwardOutput> {
        if inputs.is_empty() || inputs.len() > self.cfg.t_cap {
            return Err(Error::Contract(alloc::format!(
                "decoder needs 1..={} inputs, got {}",
                self.cfg.t_cap,
                inputs.len()
            )));
        }
        let bundle = self.embed_bundle(g, b, feats, primary)?;
        let dec_in = step_input_embedding(g, b, &self.tables, inputs, bundle.ocr)?;
        let layout = if opts.padded {
            SeqLayout::padded(&self.cfg, bundle.lens(), inputs.len())?
        } else {
            SeqLayout::compact(bundle.lens(), inputs.len())
        };
        let seq = build_joint_sequence(g, &bundle, Some(dec_in), &layout, self.cfg.d)?;
        let mask = build_mask(&layout);
        let enriched = self.fusion.forward(g, b, seq, &mask, dropout, trace)?;
        let dec_out = g.slice_rows(enriched, layout.decode_offset(), inputs.len())?;
        let ocr_out = if layout.n > 0 {
            Some(g.slice_rows(enriched, layout.ocr_offset(), layout.n)?)
        } else {
            None
        };
        let scores = score_rows(g, b, &self.heads, dec_out, ocr_out, bundle.n_used)?;
        Ok(ForwardOutput {
            scores,
            enriched,
            bundle,
            layout,
        })
    }

    fn ocr_texts<'a>(&self, feats: &'a SceneFeatures) -> &'a [String] {
        if self.modalities.ocr {
            &feats.ocr_texts
        } else {
            &[]
        }
    }

    /// Decoder inputs and per-step targets for teacher forcing. Targets are
    /// truncated so the closing `<end>` step fits in `t_cap`.
    pub fn teacher_forcing_plan(
        &self,
        feats: &SceneFeatures,
        target: &[String],
    ) -> (Vec<TokenRef>, Vec<Option<Vec<f64>>>) {
        let ocr = self.ocr_texts(feats);
        let words = &target[..target.len().min(self.cfg.t_cap - 1)];
        let width = self.score_width(ocr.len());
        let mut inputs = vec![TokenRef::Vocab(crate::vocab::BEGIN_ID)];
        let mut targets = Vec::with_capacity(words.len() + 1);
        for w in words {
            targets.push(word_target(w, &self.vocab, ocr, width));
            inputs.push(word_input(w, &self.vocab, ocr));
        }
        targets.push(Some(end_target(width)));
        (inputs, targets)
    }

    fn loss_graph(
        &self,
        g: &mut Graph,
        b: &mut Bindings,
        feats: &SceneFeatures,
        primary: &[String],
        target: &[String],
        dropout: Option<&mut Dropout>,
    ) -> Result<(Var, LossReport)> {
        if target.is_empty() {
            return Err(Error::Unsupervisable);
        }
        let (inputs, targets) = self.teacher_forcing_plan(feats, target);
        let out = self.forward(g, b, feats, primary, &inputs, ForwardOptions::default(), dropout, None)?;
        let supervised: Vec<usize> = (0..targets.len()).filter(|&i| targets[i].is_some()).collect();
        if supervised.is_empty() {
            return Err(Error::Unsupervisable);
        }
        let width = g.value(out.scores).cols();
        let mut tdata = Vec::with_capacity(supervised.len() * width);
        for &i in &supervised {
            tdata.extend_from_slice(targets[i].as_ref().expect("supervised"));
        }
        let tmat = Tensor::new(&[supervised.len(), width], tdata)?;
        let rows = g.gather_rows(out.scores, &supervised)?;
        let sum = g.bce_with_logits_sum(rows, &tmat)?;
        let n = supervised.len() as f64;
        let loss = g.scale(sum, 1.0 / n);

        let scores = g.value(out.scores);
        let per_step = targets
            .iter()
            .enumerate()
            .map(|(i, t)| {
                t.as_ref().map(|t| {
                    scores
                        .row(i)
                        .iter()
                        .zip(t)
                        .filter(|(x, _)| x.is_finite())
                        .map(|(&x, &y)| bce_with_logits(x, y))
                        .sum::<f64>()
                        / n
                })
            })
            .collect();
        let total = g.value(loss).item();
        if !total.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        Ok((
            loss,
            LossReport {
                total,
                per_step,
                supervised_steps: supervised.len(),
            },
        ))
    }

    /// Teacher-forced BCE loss and its parameter gradients.
    pub fn teacher_forced_loss(
        &self,
        feats: &SceneFeatures,
        primary: &[String],
        target: &[String],
        dropout: Option<&mut Dropout>,
    ) -> Result<(LossReport, Gradients)> {
        let mut g = Graph::new();
        let mut b = Bindings::new(&self.params);
        let (loss, report) = self.loss_graph(&mut g, &mut b, feats, primary, target, dropout)?;
        g.backward(loss)?;
        let mut grads = Gradients::zeros_like(&self.params);
        b.accumulate(&g, &mut grads);
        Ok((report, grads))
    }

    /// Loss value only (no backward pass).
    pub fn evaluate_loss(&self, feats: &SceneFeatures, primary: &[String], target: &[String]) -> Result<LossReport> {
        let mut g = Graph::new();
        let mut b = Bindings::new(&self.params);
        Ok(self.loss_graph(&mut g, &mut b, feats, primary, target, None)?.1)
    }

    /// Scores of the last decoding step given `inputs`.
    pub fn step_scores(&self, feats: &SceneFeatures, primary: &[String], inputs: &[TokenRef]) -> Result<OutputScores> {
        let mut g = Graph::new();
        let mut b = Bindings::new(&self.params);
        let out = self.forward(
            &mut g,
            &mut b,
            feats,
            primary,
            inputs,
            ForwardOptions::default(),
            None,
            None,
        )?;
        let s = g.value(out.scores);
        Ok(OutputScores::from_row(s.row(s.rows() - 1), self.vocab.len()))
    }

    /// Greedy argmax decoding until `<end>` or `t_cap` steps.
    pub fn decode_greedy(&self, feats: &SceneFeatures, primary: &[String]) -> Result<Decoded> {
        let ocr = self.ocr_texts(feats);
        let mut state = DecodeState::new();
        while !state.finished {
            let scores = self.step_scores(feats, primary, &state.inputs())?;
            state.advance(scores.argmax(), self.cfg.t_cap);
        }
        let words = state
            .emitted
            .iter()
            .map(|t| match *t {
                TokenRef::Vocab(id) => String::from(self.vocab.word(id)),
                TokenRef::Ocr(j) => ocr[j].clone(),
            })
            .collect();
        debug_assert!(!state.emitted.contains(&TokenRef::Vocab(END_ID)));
        Ok(Decoded {
            tokens: state.emitted,
            words,
        })
    }
}
