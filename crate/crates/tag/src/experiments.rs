//! End-to-end runs: train a generator, augment, train and score readers
//! over several seeds. Shared by the `ablate` command and the acceptance
//! suite.

use tag_core::config::{ModelConfig, TrainConfig};
use tag_core::error::Result;
use tag_core::model::{Modalities, TextAwareModel};
use tag_core::pipeline::{augment, AnswerSelectionStrategy, AugmentStats};
use tag_core::scene::Scene;
use tag_core::synth::{synth_generate, SynthConfig, SynthCorpus};
use tag_core::train::{examples_from, train, LossPoint, Role};
use tag_core::vocab::Vocabulary;
use tag_core::vqa::{evaluate, train_vqa};

use crate::report::RunRow;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub tag: TrainConfig,
    pub vqa: TrainConfig,
    pub seeds: Vec<u64>,
}

fn schedule(iters: usize, batch: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        batch_size: batch,
        max_iters: iters,
        lr_decay_steps: vec![iters * 6 / 10, iters * 8 / 10],
        log_every: (iters / 20).max(1),
        seed,
        ..TrainConfig::default()
    }
}

impl ExperimentConfig {
    /// One-core setting: a few CPU minutes per generator plus three reader
    /// seeds per arm. The generator budget is where its held-out question
    /// correctness levels off.
    pub fn desk() -> Self {
        Self {
            synth: SynthConfig::new(0, 1000),
            model: ModelConfig {
                d: 32,
                layers: 2,
                heads: 4,
                ..ModelConfig::default()
            },
            tag: schedule(3000, 16, 100),
            vqa: schedule(600, 16, 0),
            seeds: vec![0, 1, 2],
        }
    }
}

/// A synthesized corpus with the vocabulary of its original training pairs.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub corpus: SynthCorpus,
    pub vocab: Vocabulary,
}

impl Workspace {
    pub fn synthesize(cfg: &SynthConfig) -> Result<Self> {
        let corpus = synth_generate(cfg)?;
        let vocab = Vocabulary::build(&corpus.train);
        Ok(Self { corpus, vocab })
    }

    pub fn original_pairs(&self) -> usize {
        examples_from(&self.corpus.train, Role::AnswerPrediction, true).len()
    }
}

/// Trains an answer-to-question generator on the original pairs.
pub fn train_tag<F: FnMut(&LossPoint)>(
    scenes: &[Scene],
    vocab: &Vocabulary,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    modalities: Modalities,
    on_log: F,
) -> Result<(TextAwareModel, Vec<LossPoint>)> {
    tag_core::pipeline::check_training_split(scenes)?;
    let mut model = TextAwareModel::new(model_cfg.clone(), vocab.clone(), cfg.seed)?;
    model.modalities = modalities;
    let feats = scenes.iter().map(|s| model.features(s)).collect::<Result<Vec<_>>>()?;
    let examples = examples_from(scenes, Role::QuestionGeneration, true);
    let curve = train(&mut model, &feats, &examples, cfg, on_log)?;
    Ok((model, curve))
}

/// Trains a reader on `scenes` with the given seed and scores it on `val`.
pub fn downstream_run(
    ws: &Workspace,
    exp: &ExperimentConfig,
    label: &str,
    scenes: &[Scene],
    seed: u64,
) -> Result<RunRow> {
    let base = TrainConfig {
        seed,
        ..exp.vqa.clone()
    };
    let run = train_vqa(
        scenes,
        ws.vocab.clone(),
        exp.model.clone(),
        &base,
        ws.original_pairs(),
        |_| {},
    )?;
    let report = evaluate(&run.model, &ws.corpus.val)?;
    Ok(RunRow {
        label: label.into(),
        seed,
        accuracy: report.accuracy,
        anls: report.anls,
    })
}

/// One training corpus evaluated over every seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub label: String,
    pub stats: Option<AugmentStats>,
    pub runs: Vec<RunRow>,
}

impl Arm {
    pub fn mean_accuracy(&self) -> f64 {
        self.runs.iter().map(|r| r.accuracy).sum::<f64>() / self.runs.len().max(1) as f64
    }

    pub fn mean_anls(&self) -> f64 {
        self.runs.iter().map(|r| r.anls).sum::<f64>() / self.runs.len().max(1) as f64
    }
}

pub fn run_arm<P: FnMut(&str)>(
    ws: &Workspace,
    exp: &ExperimentConfig,
    label: &str,
    scenes: &[Scene],
    stats: Option<AugmentStats>,
    progress: &mut P,
) -> Result<Arm> {
    let mut runs = Vec::new();
    for &seed in &exp.seeds {
        let row = downstream_run(ws, exp, label, scenes, seed)?;
        progress(&format!(
            "{label} seed {seed}: accuracy {:.4} anls {:.4}",
            row.accuracy, row.anls
        ));
        runs.push(row);
    }
    Ok(Arm {
        label: label.into(),
        stats,
        runs,
    })
}

/// Augments the training split with `tag` and evaluates the result.
pub fn augmented_arm<P: FnMut(&str)>(
    ws: &Workspace,
    exp: &ExperimentConfig,
    label: &str,
    tag: &TextAwareModel,
    strategy: AnswerSelectionStrategy,
    progress: &mut P,
) -> Result<Arm> {
    let aug = augment(&ws.corpus.train, tag, strategy)?;
    progress(&format!(
        "{label}: {} generated, {} empty, {} duplicate",
        aug.stats.generated, aug.stats.rejected_empty, aug.stats.rejected_duplicate
    ));
    run_arm(ws, exp, label, &aug.scenes, Some(aug.stats), progress)
}

pub const MODALITY_ROWS: [(&str, Modalities); 4] = [
    (
        "ans",
        Modalities {
            objects: false,
            ocr: false,
        },
    ),
    (
        "ans+ocr",
        Modalities {
            objects: false,
            ocr: true,
        },
    ),
    (
        "ans+obj",
        Modalities {
            objects: true,
            ocr: false,
        },
    ),
    ("ans+obj+ocr", Modalities::ALL),
];

pub const SELECTION_ROWS: [(&str, AnswerSelectionStrategy); 4] = [
    ("random", AnswerSelectionStrategy::Random { seed: 0 }),
    ("largest", AnswerSelectionStrategy::Largest),
    ("top3", AnswerSelectionStrategy::TopK(3)),
    ("top5", AnswerSelectionStrategy::TopK(5)),
];

/// A generator per modality row, each used with largest-token selection.
pub fn modality_ablation<P: FnMut(&str)>(ws: &Workspace, exp: &ExperimentConfig, progress: &mut P) -> Result<Vec<Arm>> {
    let mut arms = Vec::new();
    for (label, modalities) in MODALITY_ROWS {
        let (tag, curve) = train_tag(&ws.corpus.train, &ws.vocab, &exp.model, &exp.tag, modalities, |_| {})?;
        progress(&format!(
            "generator {label}: final loss {:.4}",
            curve.last().map_or(f64::NAN, |p| p.loss)
        ));
        arms.push(augmented_arm(
            ws,
            exp,
            label,
            &tag,
            AnswerSelectionStrategy::Largest,
            progress,
        )?);
    }
    Ok(arms)
}

/// Every selection row with one all-modality generator.
pub fn selection_ablation<P: FnMut(&str)>(
    ws: &Workspace,
    exp: &ExperimentConfig,
    tag: &TextAwareModel,
    progress: &mut P,
) -> Result<Vec<Arm>> {
    SELECTION_ROWS
        .iter()
        .map(|&(label, strategy)| augmented_arm(ws, exp, label, tag, strategy, progress))
        .collect()
}

pub fn rows(arms: &[Arm]) -> Vec<RunRow> {
    arms.iter().flat_map(|a| a.runs.iter().cloned()).collect()
}
