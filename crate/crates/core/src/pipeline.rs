//! The augmentation loop: pick answer candidates among the scene text,
//! generate a question for each with a trained TAG model and append the
//! accepted pairs to the original annotations.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::TokenRef;
use crate::error::{Error, Result};
use crate::model::TextAwareModel;
use crate::scene::{fnv1a, largest_ocr_token, split_of, tokens_by_size, Provenance, QaPair, Scene, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerSelectionStrategy {
    Largest,
    Random { seed: u64 },
    TopK(usize),
}

impl AnswerSelectionStrategy {
    /// Accepts `largest`, `random`, `random:<seed>` and `top<k>` / `top_k:<k>`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown answer selection strategy {s:?}"));
        let k_strategy = |k: &str| -> Result<Self> {
            let k: usize = k.parse().map_err(|_| bad())?;
            if k == 0 {
                return Err(Error::Config("top_k needs k >= 1".into()));
            }
            Ok(Self::TopK(k))
        };
        match s {
            "largest" => Ok(Self::Largest),
            "random" => Ok(Self::Random { seed: 0 }),
            _ => {
                if let Some(seed) = s.strip_prefix("random:") {
                    Ok(Self::Random {
                        seed: seed.parse().map_err(|_| bad())?,
                    })
                } else if let Some(k) = s.strip_prefix("top_k:") {
                    k_strategy(k)
                } else if let Some(k) = s.strip_prefix("top") {
                    k_strategy(k)
                } else {
                    Err(bad())
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Largest => "largest".into(),
            Self::Random { seed } => format!("random:{seed}"),
            Self::TopK(k) => format!("top{k}"),
        }
    }
}

/// OCR indices to use as answers. Random selection is seeded per image so
/// it does not depend on scene order.
pub fn select_answers(scene: &Scene, strategy: AnswerSelectionStrategy) -> Vec<usize> {
    let n = scene.ocr_tokens.len();
    if n == 0 {
        return Vec::new();
    }
    match strategy {
        AnswerSelectionStrategy::Largest => largest_ocr_token(scene).map(|i| vec![i]).unwrap_or_default(),
        AnswerSelectionStrategy::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(scene.image_id.as_bytes()));
            vec![rng.random_range(0..n)]
        }
        AnswerSelectionStrategy::TopK(k) => {
            let mut order = tokens_by_size(scene);
            order.truncate(k);
            order
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    Empty,
    Duplicate,
}

impl Rejection {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Empty => "empty",
            Self::Duplicate => "duplicate",
        }
    }
}

/// One generation with where each word came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub image_id: String,
    pub answer: String,
    pub generated_question: String,
    pub per_step_source: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub record: GenerationRecord,
    pub outcome: core::result::Result<QaPair, Rejection>,
}

/// Generates a question for OCR token `ocr_index` of `scene`.
pub fn generate_pair(model: &TextAwareModel, scene: &Scene, ocr_index: usize) -> Result<Generated> {
    let token = scene.ocr_tokens.get(ocr_index).ok_or(Error::IndexOutOfRange {
        what: "ocr token",
        index: ocr_index,
        len: scene.ocr_tokens.len(),
    })?;
    let feats = model.features(scene)?;
    let answer = vec![token.text.clone()];
    let decoded = model.decode_greedy(&feats, &answer)?;
    let question = decoded.words.join(" ");
    let record = GenerationRecord {
        image_id: scene.image_id.clone(),
        answer: token.text.clone(),
        generated_question: question.clone(),
        per_step_source: decoded.tokens.iter().map(TokenRef::source_tag).collect(),
    };
    let outcome = if decoded.words.is_empty() {
        Err(Rejection::Empty)
    } else if scene.originals().any(|qa| qa.question() == question) {
        Err(Rejection::Duplicate)
    } else {
        Ok(QaPair {
            question_words: decoded.words,
            answer_words: answer,
            provenance: Provenance::Generated,
            answer_source_indices: vec![ocr_index],
        })
    };
    Ok(Generated { record, outcome })
}

/// Counts describing one augmentation run.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentStats {
    pub strategy: String,
    pub scenes: usize,
    pub originals: usize,
    pub attempted: usize,
    pub generated: usize,
    pub rejected_empty: usize,
    pub rejected_duplicate: usize,
    /// Accepted pairs whose answer is not an original answer of that image.
    pub novel_answers: usize,
    /// Accepted questions that contain their own answer word.
    pub answer_copies: usize,
}

impl AugmentStats {
    pub fn total_pairs(&self) -> usize {
        self.originals + self.generated
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    pub scenes: Vec<Scene>,
    pub stats: AugmentStats,
    pub records: Vec<GenerationRecord>,
}

/// Refuses any scene that does not belong to the training split.
pub fn check_training_split(scenes: &[Scene]) -> Result<()> {
    match scenes.iter().find(|s| split_of(&s.image_id) != Split::Train) {
        Some(s) => Err(Error::Leakage(s.image_id.clone())),
        None => Ok(()),
    }
}

pub fn augment(
    scenes: &[Scene],
    model: &TextAwareModel,
    strategy: AnswerSelectionStrategy,
) -> Result<AugmentedDataset> {
    check_training_split(scenes)?;
    let mut stats = AugmentStats {
        strategy: strategy.name(),
        scenes: scenes.len(),
        originals: 0,
        attempted: 0,
        generated: 0,
        rejected_empty: 0,
        rejected_duplicate: 0,
        novel_answers: 0,
        answer_copies: 0,
    };
    let mut out = Vec::with_capacity(scenes.len());
    let mut records = Vec::new();
    for scene in scenes {
        let mut scene_out = scene.clone();
        stats.originals += scene.qa_pairs.len();
        let original_answers: BTreeSet<String> = scene.originals().map(QaPair::answer).collect();
        for idx in select_answers(scene, strategy) {
            stats.attempted += 1;
            let g = generate_pair(model, scene, idx)?;
            match g.outcome {
                Ok(qa) => {
                    stats.generated += 1;
                    if !original_answers.contains(&qa.answer()) {
                        stats.novel_answers += 1;
                    }
                    if qa.answer_words.iter().any(|a| qa.question_words.contains(a)) {
                        stats.answer_copies += 1;
                    }
                    scene_out.qa_pairs.push(qa);
                }
                Err(Rejection::Empty) => stats.rejected_empty += 1,
                Err(Rejection::Duplicate) => stats.rejected_duplicate += 1,
            }
            records.push(g.record);
        }
        out.push(scene_out);
    }
    Ok(AugmentedDataset {
        scenes: out,
        stats,
        records,
    })
}
