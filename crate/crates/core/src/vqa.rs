//! Downstream Text-VQA: the same model with question and answer roles
//! swapped, trained on original or augmented pairs and scored with soft
//! accuracy and ANLS.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::config::{ModelConfig, TrainConfig};
use crate::embed::SceneFeatures;
use crate::error::Result;
use crate::metrics::{anls_score, vqa_accuracy, VQA_REFERENCES};
use crate::model::TextAwareModel;
use crate::scene::Scene;
use crate::train::{examples_from, train, LossPoint, Role};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub image_id: String,
    pub question: String,
    pub prediction: String,
    pub references: Vec<String>,
    pub accuracy: f64,
    pub anls: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub anls: f64,
    pub n_examples: usize,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    pub fn from_records(records: Vec<EvalRecord>) -> Self {
        let n = records.len();
        let mean = |f: fn(&EvalRecord) -> f64| {
            if n == 0 {
                0.0
            } else {
                records.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            accuracy: mean(|r| r.accuracy),
            anls: mean(|r| r.anls),
            n_examples: n,
            records,
        }
    }
}

/// Scores `prediction` against one ground-truth answer replicated to the
/// ten-reference protocol.
pub fn score_prediction(image_id: &str, question: &str, prediction: &str, answer: &str) -> Result<EvalRecord> {
    let references = vec![String::from(answer); VQA_REFERENCES];
    Ok(EvalRecord {
        image_id: image_id.into(),
        question: question.into(),
        prediction: prediction.into(),
        accuracy: vqa_accuracy(prediction, &references)?,
        anls: anls_score(prediction, &references),
        references,
    })
}

/// Greedy answers for every original question of `scenes`.
pub fn evaluate(model: &TextAwareModel, scenes: &[Scene]) -> Result<EvalReport> {
    let mut records = Vec::new();
    for scene in scenes {
        let feats = model.features(scene)?;
        for qa in scene.originals() {
            let decoded = model.decode_greedy(&feats, &qa.question_words)?;
            records.push(score_prediction(
                &scene.image_id,
                &qa.question(),
                &decoded.words.join(" "),
                &qa.answer(),
            )?);
        }
    }
    Ok(EvalReport::from_records(records))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqaRun {
    pub model: TextAwareModel,
    pub curve: Vec<LossPoint>,
    pub train_config: TrainConfig,
    pub pairs: usize,
}

/// Trains a question-to-answer model on every pair of `scenes`. The
/// iteration budget (and decay points) scale by `pairs / reference_pairs`.
pub fn train_vqa<F: FnMut(&LossPoint)>(
    scenes: &[Scene],
    vocab: Vocabulary,
    model_cfg: ModelConfig,
    base: &TrainConfig,
    reference_pairs: usize,
    on_log: F,
) -> Result<VqaRun> {
    crate::pipeline::check_training_split(scenes)?;
    let examples = examples_from(scenes, Role::AnswerPrediction, false);
    let cfg = base.scaled_to(reference_pairs, examples.len());
    let mut model = TextAwareModel::new(model_cfg, vocab, cfg.seed)?;
    let feats: Vec<SceneFeatures> = scenes.iter().map(|s| model.features(s)).collect::<Result<_>>()?;
    let curve = train(&mut model, &feats, &examples, &cfg, on_log)?;
    Ok(VqaRun {
        model,
        curve,
        train_config: cfg,
        pairs: examples.len(),
    })
}
