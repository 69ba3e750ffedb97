//! JSON Lines corpus files, one scene per line.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tag_core::scene::{validate_scene, BBox, ObjectRegion, OcrToken, Provenance, QaPair, Scene};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectRecord {
    class_label: String,
    bbox: [f64; 4],
    appearance: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OcrRecord {
    text: String,
    bbox: [f64; 4],
    appearance: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QaRecord {
    question: String,
    answer: String,
    provenance: String,
    answer_source_indices: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRecord {
    image_id: String,
    width: f64,
    height: f64,
    objects: Vec<ObjectRecord>,
    ocr_tokens: Vec<OcrRecord>,
    qa_pairs: Vec<QaRecord>,
}

fn bbox_array(b: &BBox) -> [f64; 4] {
    [b.x1, b.y1, b.x2, b.y2]
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

impl From<&Scene> for SceneRecord {
    fn from(s: &Scene) -> Self {
        SceneRecord {
            image_id: s.image_id.clone(),
            width: s.width,
            height: s.height,
            objects: s
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    class_label: o.class_label.clone(),
                    bbox: bbox_array(&o.bbox),
                    appearance: o.appearance.clone(),
                })
                .collect(),
            ocr_tokens: s
                .ocr_tokens
                .iter()
                .map(|t| OcrRecord {
                    text: t.text.clone(),
                    bbox: bbox_array(&t.bbox),
                    appearance: t.appearance.clone(),
                })
                .collect(),
            qa_pairs: s
                .qa_pairs
                .iter()
                .map(|q| QaRecord {
                    question: q.question(),
                    answer: q.answer(),
                    provenance: q.provenance.as_str().into(),
                    answer_source_indices: q.answer_source_indices.clone(),
                })
                .collect(),
        }
    }
}

impl SceneRecord {
    fn into_scene(self) -> std::result::Result<Scene, String> {
        let qa_pairs = self
            .qa_pairs
            .into_iter()
            .map(|q| {
                let provenance =
                    Provenance::parse(&q.provenance).ok_or_else(|| format!("unknown provenance {:?}", q.provenance))?;
                Ok(QaPair {
                    question_words: words(&q.question),
                    answer_words: words(&q.answer),
                    provenance,
                    answer_source_indices: q.answer_source_indices,
                })
            })
            .collect::<std::result::Result<_, String>>()?;
        let bbox = |b: [f64; 4]| BBox::new(b[0], b[1], b[2], b[3]);
        Ok(Scene {
            image_id: self.image_id,
            width: self.width,
            height: self.height,
            objects: self
                .objects
                .into_iter()
                .map(|o| ObjectRegion {
                    class_label: o.class_label,
                    bbox: bbox(o.bbox),
                    appearance: o.appearance,
                })
                .collect(),
            ocr_tokens: self
                .ocr_tokens
                .into_iter()
                .map(|t| OcrToken {
                    text: t.text,
                    bbox: bbox(t.bbox),
                    appearance: t.appearance,
                })
                .collect(),
            qa_pairs,
        })
    }
}

/// One scene as a single JSON line (no trailing newline).
pub fn scene_to_line(scene: &Scene) -> String {
    serde_json::to_string(&SceneRecord::from(scene)).expect("scene records always serialize")
}

/// Parses a corpus from any reader. `origin` only labels error messages.
pub fn read_corpus<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<Scene>> {
    let mut scenes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            msg,
        };
        let record: SceneRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let scene = record.into_scene().map_err(parse_err)?;
        validate_scene(&scene)
            .into_result(&scene.image_id)
            .map_err(|e| parse_err(e.to_string()))?;
        scenes.push(scene);
    }
    Ok(scenes)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Scene>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), path)
}

pub fn write_corpus<W: Write>(mut w: W, scenes: &[Scene]) -> std::io::Result<()> {
    for s in scenes {
        writeln!(w, "{}", scene_to_line(s))?;
    }
    w.flush()
}

pub fn save_corpus(path: &Path, scenes: &[Scene]) -> Result<()> {
    crate::fsutil::ensure_parent(path)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_corpus(BufWriter::new(file), scenes).map_err(|e| Error::io(path, e))
}
