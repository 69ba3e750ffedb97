//! Scene data model: pre-extracted detector and OCR evidence for one image.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::text::is_normalized_word;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && other.x2 <= self.x2 && other.y2 <= self.y2
    }

    fn problems(&self, width: f64, height: f64) -> Option<String> {
        let finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        if !finite {
            return Some("non-finite coordinate".into());
        }
        if !(0.0 <= self.x1 && self.x1 < self.x2 && self.x2 <= width) {
            return Some(format!("x range [{}, {}] not inside [0, {width}]", self.x1, self.x2));
        }
        if !(0.0 <= self.y1 && self.y1 < self.y2 && self.y2 <= height) {
            return Some(format!("y range [{}, {}] not inside [0, {height}]", self.y1, self.y2));
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRegion {
    pub class_label: String,
    pub bbox: BBox,
    pub appearance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcrToken {
    pub text: String,
    pub bbox: BBox,
    pub appearance: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Original,
    Generated,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::Generated => "generated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "original" => Some(Provenance::Original),
            "generated" => Some(Provenance::Generated),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaPair {
    pub question_words: Vec<String>,
    pub answer_words: Vec<String>,
    pub provenance: Provenance,
    /// OCR indices the answer was read from; empty for vocabulary answers.
    pub answer_source_indices: Vec<usize>,
}

impl QaPair {
    pub fn question(&self) -> String {
        self.question_words.join(" ")
    }

    pub fn answer(&self) -> String {
        self.answer_words.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image_id: String,
    pub width: f64,
    pub height: f64,
    pub objects: Vec<ObjectRegion>,
    pub ocr_tokens: Vec<OcrToken>,
    pub qa_pairs: Vec<QaPair>,
}

impl Scene {
    pub fn originals(&self) -> impl Iterator<Item = &QaPair> {
        self.qa_pairs.iter().filter(|q| q.provenance == Provenance::Original)
    }

    pub fn object_labels(&self) -> Vec<&str> {
        self.objects.iter().map(|o| o.class_label.as_str()).collect()
    }

    pub fn ocr_texts(&self) -> Vec<&str> {
        self.ocr_tokens.iter().map(|t| t.text.as_str()).collect()
    }
}

/// Optional caps checked in addition to the structural invariants.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SceneLimits {
    pub appearance_dim: Option<usize>,
    pub max_objects: Option<usize>,
    pub max_ocr: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self, image_id: &str) -> Result<()> {
        if self.violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidScene {
                image_id: image_id.into(),
                detail: self.violations.join("; "),
            })
        }
    }
}

pub fn validate_scene(scene: &Scene) -> ValidationReport {
    validate_scene_with(scene, &SceneLimits::default())
}

pub fn validate_scene_with(scene: &Scene, limits: &SceneLimits) -> ValidationReport {
    let mut r = ValidationReport::default();
    let (w, h) = (scene.width, scene.height);
    if scene.image_id.is_empty() {
        r.violations.push("image_id empty".into());
    }
    if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
        r.violations.push(format!("width/height must be positive, got {w}x{h}"));
    }
    let expected_dim = limits.appearance_dim.or_else(|| {
        scene
            .objects
            .first()
            .map(|o| o.appearance.len())
            .or_else(|| scene.ocr_tokens.first().map(|t| t.appearance.len()))
    });
    let check_appearance = |r: &mut ValidationReport, field: String, a: &[f64]| {
        if let Some(d) = expected_dim {
            if a.len() != d {
                r.violations
                    .push(format!("{field}.appearance length {} != {d}", a.len()));
            }
        }
        if a.iter().any(|v| !v.is_finite()) {
            r.violations.push(format!("{field}.appearance non-finite"));
        }
    };
    if let Some(m) = limits.max_objects {
        if scene.objects.len() > m {
            r.violations
                .push(format!("objects count {} exceeds {m}", scene.objects.len()));
        }
    }
    if let Some(n) = limits.max_ocr {
        if scene.ocr_tokens.len() > n {
            r.violations
                .push(format!("ocr_tokens count {} exceeds {n}", scene.ocr_tokens.len()));
        }
    }
    for (i, o) in scene.objects.iter().enumerate() {
        if o.class_label.is_empty() {
            r.violations.push(format!("objects[{i}].class_label empty"));
        } else if o.class_label.chars().any(|c| c.is_uppercase()) {
            r.violations.push(format!("objects[{i}].class_label not lowercase"));
        }
        if let Some(p) = o.bbox.problems(w, h) {
            r.violations.push(format!("objects[{i}].bbox {p}"));
        }
        check_appearance(&mut r, format!("objects[{i}]"), &o.appearance);
    }
    if scene.ocr_tokens.is_empty() {
        r.warnings.push("no scene text".into());
    }
    for (i, t) in scene.ocr_tokens.iter().enumerate() {
        if t.text.is_empty() {
            r.violations.push("ocr.text empty".into());
        } else if !is_normalized_word(&t.text) {
            r.violations
                .push(format!("ocr_tokens[{i}].text {:?} outside [a-z0-9]", t.text));
        }
        if let Some(p) = t.bbox.problems(w, h) {
            r.violations.push(format!("ocr_tokens[{i}].bbox {p}"));
        }
        check_appearance(&mut r, format!("ocr_tokens[{i}]"), &t.appearance);
    }
    for (i, qa) in scene.qa_pairs.iter().enumerate() {
        if qa.question_words.is_empty() {
            r.violations.push(format!("qa_pairs[{i}].question empty"));
        }
        for &j in &qa.answer_source_indices {
            if j >= scene.ocr_tokens.len() {
                r.violations
                    .push(format!("qa_pairs[{i}].answer_source_indices {j} out of range"));
            }
        }
    }
    r
}

/// Reading-order comparison used to break area ties: larger area first, then
/// higher on the image, then further left, then lower index.
fn size_order(tokens: &[OcrToken], a: usize, b: usize) -> Ordering {
    let (ta, tb) = (&tokens[a], &tokens[b]);
    tb.bbox
        .area()
        .total_cmp(&ta.bbox.area())
        .then(ta.bbox.y1.total_cmp(&tb.bbox.y1))
        .then(ta.bbox.x1.total_cmp(&tb.bbox.x1))
        .then(a.cmp(&b))
}

/// Index of the token with the largest box.
pub fn largest_ocr_token(scene: &Scene) -> Result<usize> {
    (0..scene.ocr_tokens.len())
        .min_by(|&a, &b| size_order(&scene.ocr_tokens, a, b))
        .ok_or(Error::NoSceneText)
}

/// All token indices, largest first (same tie-break as [`largest_ocr_token`]).
pub fn tokens_by_size(scene: &Scene) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scene.ocr_tokens.len()).collect();
    idx.sort_by(|&a, &b| size_order(&scene.ocr_tokens, a, b));
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// FNV-1a, 64-bit.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// 80/10/10 assignment by hash of the image id.
pub fn split_of(image_id: &str) -> Split {
    match fnv1a(image_id.as_bytes()) % 10 {
        0..=7 => Split::Train,
        8 => Split::Val,
        _ => Split::Test,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    pub(crate) fn token(text: &str, b: BBox) -> OcrToken {
        OcrToken {
            text: text.into(),
            bbox: b,
            appearance: vec![0.0; 2],
        }
    }

    fn scene(tokens: Vec<OcrToken>) -> Scene {
        Scene {
            image_id: "img".into(),
            width: 100.0,
            height: 100.0,
            objects: vec![ObjectRegion {
                class_label: "sign".into(),
                bbox: BBox::new(0.0, 0.0, 100.0, 100.0),
                appearance: vec![0.0; 2],
            }],
            ocr_tokens: tokens,
            qa_pairs: vec![QaPair {
                question_words: vec!["what".into()],
                answer_words: vec!["a".into()],
                provenance: Provenance::Original,
                answer_source_indices: vec![0],
            }],
        }
    }

    #[test]
    fn well_formed_scene_is_ok() {
        let s = scene(vec![token("a", BBox::new(1.0, 1.0, 11.0, 11.0))]);
        let r = validate_scene(&s);
        assert!(r.is_ok(), "{r:?}");
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn empty_ocr_text_is_a_violation() {
        let s = scene(vec![token("", BBox::new(1.0, 1.0, 11.0, 11.0))]);
        assert!(validate_scene(&s).violations.contains(&"ocr.text empty".into()));
    }

    #[test]
    fn no_tokens_is_ok_with_warning() {
        let mut s = scene(Vec::new());
        s.qa_pairs[0].answer_source_indices.clear();
        let r = validate_scene(&s);
        assert!(r.is_ok());
        assert_eq!(r.warnings, vec![String::from("no scene text")]);
    }

    #[test]
    fn inverted_box_is_rejected_with_image_id() {
        let s = scene(vec![token("a", BBox::new(20.0, 1.0, 10.0, 11.0))]);
        let err = validate_scene(&s).into_result(&s.image_id).unwrap_err();
        assert!(alloc::format!("{err}").contains("img"));
    }

    #[test]
    fn largest_examples() {
        let s = scene(vec![
            token("a", BBox::new(0.0, 0.0, 10.0, 10.0)),
            token("b", BBox::new(0.0, 20.0, 9.0, 11.0 + 20.0)),
        ]);
        // areas 100 and 99
        assert_eq!(largest_ocr_token(&s).unwrap(), 0);

        let tie = scene(vec![
            token("low", BBox::new(0.0, 50.0, 10.0, 60.0)),
            token("high", BBox::new(30.0, 5.0, 40.0, 15.0)),
        ]);
        assert_eq!(largest_ocr_token(&tie).unwrap(), 1);

        let one = scene(vec![token("a", BBox::new(0.0, 0.0, 1.0, 1.0))]);
        assert_eq!(largest_ocr_token(&one).unwrap(), 0);

        assert_eq!(largest_ocr_token(&scene(Vec::new())), Err(Error::NoSceneText));
    }

    #[test]
    fn split_is_roughly_80_10_10() {
        let mut counts = [0usize; 3];
        for i in 0..10_000 {
            let s = split_of(&alloc::format!("scene_{i}"));
            counts[s as usize] += 1;
        }
        assert!((7700..8300).contains(&counts[0]), "{counts:?}");
        assert!((800..1200).contains(&counts[1]), "{counts:?}");
    }
}
