//! Command-line driver. Every command writes its artifacts plus a
//! `manifest.json` run record under `--out`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use tag_core::model::Modalities;
use tag_core::pipeline::{augment, check_training_split, AnswerSelectionStrategy};
use tag_core::scene::Scene;
use tag_core::synth::{synth_generate, SynthConfig};
use tag_core::train::{examples_from, Role};
use tag_core::vocab::Vocabulary;
use tag_core::vqa::{evaluate, train_vqa};

use crate::checkpoint;
use crate::config_file::RunConfig;
use crate::corpus::{load_corpus, save_corpus};
use crate::error::{Error, Result};
use crate::experiments::{self, ExperimentConfig, Workspace, MODALITY_ROWS};
use crate::fsutil::{self, write_file};
use crate::report::{self, ArtifactHash, AugmentManifest, EvalSummary, RunManifest, RunRow, SplitStats};
use crate::vocab_file;

#[derive(Debug, Parser)]
#[command(
    name = "tag",
    version,
    about = "Text-aware question generation for Text-VQA augmentation"
)]
pub struct Cli {
    /// key = value run configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// overrides the configured seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// output directory
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModalityArg {
    Ans,
    AnsOcr,
    AnsObj,
    All,
}

impl ModalityArg {
    fn modalities(self) -> Modalities {
        let i = match self {
            Self::Ans => 0,
            Self::AnsOcr => 1,
            Self::AnsObj => 2,
            Self::All => 3,
        };
        MODALITY_ROWS[i].1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    Modality,
    Selection,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/val/test synthetic corpora and their statistics.
    Synth {
        #[arg(long, default_value_t = 1000)]
        scenes: usize,
        #[arg(long, default_value_t = 0.4)]
        sparsity: f64,
        #[arg(long, default_value_t = 5)]
        ocr_min: usize,
    },
    /// Train the answer-to-question generator on original pairs.
    TrainTag {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        modalities: ModalityArg,
    },
    /// Generate questions for selected scene text and write the augmented corpus.
    Augment {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// largest, random, random:<seed>, top<k>
        #[arg(long, default_value = "largest")]
        strategy: String,
        /// generated pairs sampled into dump.jsonl
        #[arg(long, default_value_t = 20)]
        dump: usize,
    },
    /// Train the question-to-answer reader; iterations scale with pair count.
    TrainVqa {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Score a reader on the original pairs of a corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// row label in comparison reports (defaults to the checkpoint's directory name)
        #[arg(long)]
        label: Option<String>,
    },
    /// Render evaluation summaries as a comparison table.
    Report {
        #[arg(required = true)]
        evals: Vec<PathBuf>,
    },
    /// Modality or answer-selection ablation, end to end on a synthetic corpus.
    Ablate {
        #[arg(long, value_enum)]
        which: Ablation,
        #[arg(long, default_value_t = 1000)]
        scenes: usize,
        /// comma-separated downstream seeds
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::TrainTag { .. } => "train-tag",
            Command::Augment { .. } => "augment",
            Command::TrainVqa { .. } => "train-vqa",
            Command::Eval { .. } => "eval",
            Command::Report { .. } => "report",
            Command::Ablate { .. } => "ablate",
        }
    }
}

struct Run<'a> {
    cli: &'a Cli,
    started: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run<'_> {
    fn out(&self, name: &str) -> PathBuf {
        self.cli.out.join(name)
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        self.inputs.push(path.to_path_buf());
        Ok(())
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.out(name);
        write_file(&path, bytes)?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    fn record(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.cli.seed {
            cfg.train.seed = seed;
        }
        Ok(cfg)
    }

    fn finish(self, config: String, seed: u64) -> Result<()> {
        let hash_all = |paths: &[PathBuf]| paths.iter().map(|p| ArtifactHash::of(p)).collect::<Result<Vec<_>>>();
        let manifest = RunManifest {
            command: self.cli.command.name().into(),
            config,
            seed,
            inputs: hash_all(&self.inputs)?,
            outputs: hash_all(&self.outputs)?,
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        report::write_json(&self.cli.out.join("manifest.json"), &manifest)
    }
}

/// Vocabulary of the original pairs only, so an augmented corpus and its
/// source share one vocabulary.
fn original_vocab(scenes: &[Scene]) -> Vocabulary {
    let originals: Vec<Scene> = scenes
        .iter()
        .map(|s| Scene {
            qa_pairs: s.originals().cloned().collect(),
            ..s.clone()
        })
        .collect();
    Vocabulary::build(&originals)
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut run = Run {
        cli,
        started: Instant::now(),
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    match &cli.command {
        Command::Synth {
            scenes,
            sparsity,
            ocr_min,
        } => {
            let seed = cli.seed.unwrap_or(0);
            let cfg = SynthConfig {
                annotation_sparsity: *sparsity,
                ocr_per_scene_min: *ocr_min,
                ..SynthConfig::new(seed, *scenes)
            };
            if !(*sparsity > 0.0 && *sparsity <= 1.0) || *ocr_min == 0 {
                return Err(Error::Usage("need 0 < sparsity <= 1 and ocr-min >= 1".into()));
            }
            let corpus = synth_generate(&cfg)?;
            let mut stats = Vec::new();
            for (name, split) in [("train", &corpus.train), ("val", &corpus.val), ("test", &corpus.test)] {
                let path = run.out(&format!("{name}.jsonl"));
                save_corpus(&path, split)?;
                run.record(path);
                stats.push(SplitStats::of(name, split));
            }
            run.write("stats.json", report::to_json(&stats))?;
            let snapshot = format!("scenes = {scenes}\nsparsity = {sparsity}\nocr_min = {ocr_min}\n");
            run.finish(snapshot, seed)
        }
        Command::TrainTag { corpus, modalities } => {
            run.input(corpus)?;
            let cfg = run.config()?;
            let scenes = load_corpus(corpus)?;
            let vocab = original_vocab(&scenes);
            let (model, curve) =
                experiments::train_tag(&scenes, &vocab, &cfg.model, &cfg.train, modalities.modalities(), |p| {
                    log(&format!("iter {} lr {:.2e} loss {:.5}", p.iter, p.lr, p.loss))
                })?;
            let path = run.out("tag.ckpt");
            checkpoint::save(&path, &model)?;
            run.record(path);
            for p in vocab_file::save(&cli.out, "vocab", &model.vocab)? {
                run.record(p);
            }
            run.write("loss.csv", report::loss_curve_csv(&curve))?;
            run.finish(cfg.render(), cfg.train.seed)
        }
        Command::Augment {
            checkpoint: ckpt,
            corpus,
            strategy,
            dump,
        } => {
            run.input(ckpt)?;
            run.input(corpus)?;
            let mut strategy = AnswerSelectionStrategy::parse(strategy)?;
            if let (AnswerSelectionStrategy::Random { seed }, Some(s)) = (&mut strategy, cli.seed) {
                *seed = s;
            }
            let seed = match strategy {
                AnswerSelectionStrategy::Random { seed } => seed,
                _ => cli.seed.unwrap_or(0),
            };
            let scenes = load_corpus(corpus)?;
            check_training_split(&scenes)?;
            let model = checkpoint::load(ckpt)?;
            let aug = augment(&scenes, &model, strategy)?;
            let path = run.out("augmented.jsonl");
            save_corpus(&path, &aug.scenes)?;
            run.record(path);
            let manifest = AugmentManifest::new(&aug.stats, seed, &fsutil::sha256_file(ckpt)?);
            run.write("augment_manifest.json", report::to_json(&manifest))?;
            run.write("dump.jsonl", report::generation_dump(&aug.records, *dump))?;
            log(&format!(
                "{} generated, {} empty, {} duplicate",
                manifest.generated, manifest.rejected_empty, manifest.rejected_duplicate
            ));
            run.finish(format!("strategy = {}\n", strategy.name()), seed)
        }
        Command::TrainVqa { corpus } => {
            run.input(corpus)?;
            let cfg = run.config()?;
            let scenes = load_corpus(corpus)?;
            let originals = examples_from(&scenes, Role::AnswerPrediction, true).len();
            let vqa = train_vqa(
                &scenes,
                original_vocab(&scenes),
                cfg.model.clone(),
                &cfg.train,
                originals,
                |p| log(&format!("iter {} lr {:.2e} loss {:.5}", p.iter, p.lr, p.loss)),
            )?;
            let path = run.out("vqa.ckpt");
            checkpoint::save(&path, &vqa.model)?;
            run.record(path);
            for p in vocab_file::save(&cli.out, "vocab", &vqa.model.vocab)? {
                run.record(p);
            }
            run.write("loss.csv", report::loss_curve_csv(&vqa.curve))?;
            let snapshot = RunConfig {
                model: cfg.model,
                train: vqa.train_config,
            };
            run.finish(snapshot.render(), cfg.train.seed)
        }
        Command::Eval {
            checkpoint: ckpt,
            corpus,
            label,
        } => {
            run.input(ckpt)?;
            run.input(corpus)?;
            let model = checkpoint::load(ckpt)?;
            let scenes = load_corpus(corpus)?;
            let result = evaluate(&model, &scenes)?;
            let label = label.clone().unwrap_or_else(|| {
                ckpt.parent()
                    .and_then(Path::file_name)
                    .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
            });
            let seed = cli.seed.unwrap_or(0);
            let summary = EvalSummary::new(&label, seed, &fsutil::sha256_file(ckpt)?, &result);
            run.write("eval.json", report::to_json(&summary))?;
            run.write("eval.csv", summary.records_csv())?;
            log(&format!(
                "accuracy {:.4} anls {:.4} over {}",
                summary.accuracy, summary.anls, summary.n_examples
            ));
            run.finish(format!("label = {label}\n"), seed)
        }
        Command::Report { evals } => {
            let mut rows = Vec::new();
            for p in evals {
                run.input(p)?;
                let s: EvalSummary = report::read_json(p)?;
                rows.push(RunRow {
                    label: s.label,
                    seed: s.seed,
                    accuracy: s.accuracy,
                    anls: s.anls,
                });
            }
            run.write("report.csv", report::comparison_csv(&rows))?;
            run.write("report.md", report::comparison_markdown("Downstream comparison", &rows))?;
            run.finish(String::new(), cli.seed.unwrap_or(0))
        }
        Command::Ablate { which, scenes, seeds } => {
            let mut exp = ExperimentConfig::desk();
            exp.synth = SynthConfig::new(cli.seed.unwrap_or(0), *scenes);
            exp.seeds = seeds
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Usage(format!("bad seed list {seeds:?}")))
                })
                .collect::<Result<_>>()?;
            if let Some(p) = &cli.config {
                let cfg = RunConfig::load(p)?;
                exp.model = cfg.model;
                exp.tag = cfg.train;
            }
            let ws = Workspace::synthesize(&exp.synth)?;
            let mut progress = log;
            let (title, arms) = match which {
                Ablation::Modality => (
                    "Modality ablation",
                    experiments::modality_ablation(&ws, &exp, &mut progress)?,
                ),
                Ablation::Selection => {
                    let (tag, _) = experiments::train_tag(
                        &ws.corpus.train,
                        &ws.vocab,
                        &exp.model,
                        &exp.tag,
                        Modalities::ALL,
                        |_| {},
                    )?;
                    (
                        "Answer selection ablation",
                        experiments::selection_ablation(&ws, &exp, &tag, &mut progress)?,
                    )
                }
            };
            let rows = experiments::rows(&arms);
            run.write("ablation.csv", report::comparison_csv(&rows))?;
            run.write("ablation.md", report::comparison_markdown(title, &rows))?;
            let snapshot = RunConfig {
                model: exp.model,
                train: exp.tag,
            };
            run.finish(snapshot.render(), exp.synth.seed)
        }
    }
}

/// JSON error record printed on failure.
pub fn error_record(e: &Error) -> String {
    serde_json::json!({ "error": e.kind(), "message": e.to_string() }).to_string()
}
