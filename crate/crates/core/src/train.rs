//! Mini-batch training with Adam and the staircase schedule.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::embed::SceneFeatures;
use crate::error::{Error, Result};
use crate::fusion::Dropout;
use crate::model::TextAwareModel;
use crate::optim::{adam_step, AdamState, LrSchedule};
use crate::params::Gradients;
use crate::scene::{Provenance, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// answer -> question (the generator)
    QuestionGeneration,
    /// question -> answer (the downstream reader)
    AnswerPrediction,
}

/// One supervised sequence: `input` words conditioned on scene `scene`,
/// decoding `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub scene: usize,
    pub input: Vec<String>,
    pub target: Vec<String>,
}

/// Examples from every QA pair (or only the original ones).
pub fn examples_from(scenes: &[Scene], role: Role, originals_only: bool) -> Vec<Example> {
    let mut out = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        for qa in &s.qa_pairs {
            if originals_only && qa.provenance != Provenance::Original {
                continue;
            }
            if qa.question_words.is_empty() || qa.answer_words.is_empty() {
                continue;
            }
            let (input, target) = match role {
                Role::QuestionGeneration => (qa.answer_words.clone(), qa.question_words.clone()),
                Role::AnswerPrediction => (qa.question_words.clone(), qa.answer_words.clone()),
            };
            out.push(Example {
                scene: i,
                input,
                target,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
}

const DROPOUT_STREAM: u64 = 0xd20f;

/// Trains `model` in place and returns the mean batch loss of every
/// `log_every`-th iteration (plus the last one).
pub fn train<F>(
    model: &mut TextAwareModel,
    feats: &[SceneFeatures],
    examples: &[Example],
    cfg: &TrainConfig,
    mut on_log: F,
) -> Result<Vec<LossPoint>>
where
    F: FnMut(&LossPoint),
{
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Contract("no training examples".into()));
    }
    let schedule = LrSchedule::new(cfg.lr, cfg.lr_decay_factor, cfg.lr_decay_steps.clone());
    let mut adam = AdamState::new(&model.params);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_STREAM);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut order_rng);
    let mut cursor = 0;
    let mut curve = Vec::new();
    let p = model.cfg.dropout;
    for iter in 0..cfg.max_iters {
        let mut grads = Gradients::zeros_like(&model.params);
        let mut loss_sum = 0.0;
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            let ex = &examples[order[cursor]];
            cursor += 1;
            let mut dropout = Dropout { p, rng: &mut drop_rng };
            let (report, g) = model.teacher_forced_loss(&feats[ex.scene], &ex.input, &ex.target, Some(&mut dropout))?;
            loss_sum += report.total;
            grads.add(&g);
        }
        let loss = loss_sum / cfg.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence(iter));
        }
        grads.scale(1.0 / cfg.batch_size as f64);
        adam_step(&mut model.params, &grads, &mut adam, &schedule, iter)?;
        if iter % cfg.log_every.max(1) == 0 || iter + 1 == cfg.max_iters {
            let point = LossPoint {
                iter,
                lr: schedule.lr_at(iter),
                loss,
            };
            on_log(&point);
            curve.push(point);
        }
    }
    Ok(curve)
}

/// Mean teacher-forced loss over `examples` without dropout.
pub fn mean_loss(model: &TextAwareModel, feats: &[SceneFeatures], examples: &[Example]) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        total += model.evaluate_loss(&feats[ex.scene], &ex.input, &ex.target)?.total;
    }
    Ok(total / examples.len().max(1) as f64)
}
