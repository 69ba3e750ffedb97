//! JSON, CSV and markdown artifacts written by the commands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tag_core::pipeline::{AugmentStats, GenerationRecord};
use tag_core::scene::{Provenance, Scene};
use tag_core::train::LossPoint;
use tag_core::vqa::{EvalRecord, EvalReport};

use crate::error::{Error, Result};
use crate::fsutil;

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fsutil::write_file(path, to_json(value))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fsutil::read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Vec<u8>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    fill(&mut w).expect("in-memory csv");
    w.into_inner().expect("in-memory csv")
}

pub fn loss_curve_csv(curve: &[LossPoint]) -> Vec<u8> {
    csv_bytes(&["iter", "lr", "loss"], |w| {
        for p in curve {
            w.write_record([p.iter.to_string(), p.lr.to_string(), p.loss.to_string()])?;
        }
        Ok(())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub image_id: String,
    pub question: String,
    pub prediction: String,
    pub accuracy: f64,
    pub anls: f64,
}

/// An evaluation result plus the labels the comparison report groups by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub label: String,
    pub seed: u64,
    pub checkpoint: String,
    pub accuracy: f64,
    pub anls: f64,
    pub n_examples: usize,
    pub records: Vec<EvalRow>,
}

impl EvalSummary {
    pub fn new(label: &str, seed: u64, checkpoint: &str, report: &EvalReport) -> Self {
        Self {
            label: label.into(),
            seed,
            checkpoint: checkpoint.into(),
            accuracy: report.accuracy,
            anls: report.anls,
            n_examples: report.n_examples,
            records: report.records.iter().map(EvalRow::from).collect(),
        }
    }

    pub fn records_csv(&self) -> Vec<u8> {
        csv_bytes(&["image_id", "question", "prediction", "accuracy", "anls"], |w| {
            for r in &self.records {
                w.write_record([
                    r.image_id.clone(),
                    r.question.clone(),
                    r.prediction.clone(),
                    r.accuracy.to_string(),
                    r.anls.to_string(),
                ])?;
            }
            Ok(())
        })
    }
}

impl From<&EvalRecord> for EvalRow {
    fn from(r: &EvalRecord) -> Self {
        Self {
            image_id: r.image_id.clone(),
            question: r.question.clone(),
            prediction: r.prediction.clone(),
            accuracy: r.accuracy,
            anls: r.anls,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentManifest {
    pub strategy: String,
    pub seed: u64,
    pub scenes: usize,
    pub generated: usize,
    pub rejected_empty: usize,
    pub rejected_duplicate: usize,
    pub checkpoint: String,
    pub originals: usize,
    pub attempted: usize,
    pub total_pairs: usize,
    pub novel_answers: usize,
    pub answer_copies: usize,
}

impl AugmentManifest {
    pub fn new(stats: &AugmentStats, seed: u64, checkpoint: &str) -> Self {
        Self {
            strategy: stats.strategy.clone(),
            seed,
            scenes: stats.scenes,
            generated: stats.generated,
            rejected_empty: stats.rejected_empty,
            rejected_duplicate: stats.rejected_duplicate,
            checkpoint: checkpoint.into(),
            originals: stats.originals,
            attempted: stats.attempted,
            total_pairs: stats.total_pairs(),
            novel_answers: stats.novel_answers,
            answer_copies: stats.answer_copies,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpRecord {
    pub image_id: String,
    pub answer: String,
    pub generated_question: String,
    pub per_step_source: Vec<String>,
}

/// Up to `n` records spread evenly over `records`, as JSON lines.
pub fn generation_dump(records: &[GenerationRecord], n: usize) -> String {
    let take = n.min(records.len());
    let mut out = String::new();
    for r in (0..take).map(|i| &records[i * records.len() / take]) {
        let rec = DumpRecord {
            image_id: r.image_id.clone(),
            answer: r.answer.clone(),
            generated_question: r.generated_question.clone(),
            per_step_source: r.per_step_source.clone(),
        };
        out += &serde_json::to_string(&rec).expect("dump records serialize");
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: String,
    pub scenes: usize,
    pub mean_ocr_per_image: f64,
    pub mean_qa_per_image: f64,
    /// count of images per OCR-token count
    pub ocr_per_image: BTreeMap<usize, usize>,
    pub qa_per_image: BTreeMap<usize, usize>,
    pub distinct_ocr_texts: usize,
    pub distinct_answers: usize,
}

impl SplitStats {
    pub fn of(split: &str, scenes: &[Scene]) -> Self {
        let mut ocr = BTreeMap::new();
        let mut qa = BTreeMap::new();
        let mut texts = std::collections::BTreeSet::new();
        let mut answers = std::collections::BTreeSet::new();
        for s in scenes {
            *ocr.entry(s.ocr_tokens.len()).or_insert(0) += 1;
            *qa.entry(s.qa_pairs.len()).or_insert(0) += 1;
            texts.extend(s.ocr_tokens.iter().map(|t| t.text.clone()));
            answers.extend(
                s.qa_pairs
                    .iter()
                    .filter(|q| q.provenance == Provenance::Original)
                    .map(|q| q.answer()),
            );
        }
        let n = scenes.len().max(1) as f64;
        Self {
            split: split.into(),
            scenes: scenes.len(),
            mean_ocr_per_image: scenes.iter().map(|s| s.ocr_tokens.len()).sum::<usize>() as f64 / n,
            mean_qa_per_image: scenes.iter().map(|s| s.qa_pairs.len()).sum::<usize>() as f64 / n,
            ocr_per_image: ocr,
            qa_per_image: qa,
            distinct_ocr_texts: texts.len(),
            distinct_answers: answers.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHash {
    pub path: PathBuf,
    pub sha256: String,
}

impl ArtifactHash {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: fsutil::sha256_file(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: String,
    pub seed: u64,
    pub inputs: Vec<ArtifactHash>,
    pub outputs: Vec<ArtifactHash>,
    pub duration_secs: f64,
}

/// One row of the comparison table: a (label, seed) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub label: String,
    pub seed: u64,
    pub accuracy: f64,
    pub anls: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMean {
    pub label: String,
    pub runs: usize,
    pub accuracy: f64,
    pub anls: f64,
}

/// Per-label means in first-seen order.
pub fn label_means(rows: &[RunRow]) -> Vec<LabelMean> {
    let mut out: Vec<LabelMean> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|m| m.label == r.label) {
            Some(m) => {
                m.runs += 1;
                m.accuracy += r.accuracy;
                m.anls += r.anls;
            }
            None => out.push(LabelMean {
                label: r.label.clone(),
                runs: 1,
                accuracy: r.accuracy,
                anls: r.anls,
            }),
        }
    }
    for m in &mut out {
        m.accuracy /= m.runs as f64;
        m.anls /= m.runs as f64;
    }
    out
}

fn best_index(means: &[LabelMean], f: fn(&LabelMean) -> f64) -> Option<usize> {
    (0..means.len()).reduce(|a, b| if f(&means[b]) > f(&means[a]) { b } else { a })
}

pub fn comparison_csv(rows: &[RunRow]) -> Vec<u8> {
    csv_bytes(&["label", "seed", "accuracy", "anls"], |w| {
        for r in rows {
            w.write_record([
                r.label.clone(),
                r.seed.to_string(),
                r.accuracy.to_string(),
                r.anls.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Per-run table followed by per-label means, best mean in bold.
pub fn comparison_markdown(title: &str, rows: &[RunRow]) -> String {
    let mut s = format!("# {title}\n\n| corpus | seed | accuracy | anls |\n|---|---|---|---|\n");
    for r in rows {
        s += &format!("| {} | {} | {:.4} | {:.4} |\n", r.label, r.seed, r.accuracy, r.anls);
    }
    let means = label_means(rows);
    let best_acc = best_index(&means, |m| m.accuracy);
    let best_anls = best_index(&means, |m| m.anls);
    s += "\n| corpus | runs | mean accuracy | mean anls |\n|---|---|---|---|\n";
    for (i, m) in means.iter().enumerate() {
        let mark = |best: Option<usize>, v: f64| {
            if best == Some(i) {
                format!("**{v:.4}**")
            } else {
                format!("{v:.4}")
            }
        };
        s += &format!(
            "| {} | {} | {} | {} |\n",
            m.label,
            m.runs,
            mark(best_acc, m.accuracy),
            mark(best_anls, m.anls)
        );
    }
    s
}
