//! Deterministic synthetic scenes standing in for detector and OCR output.
//!
//! Every scene has 2 to 4 labelled objects and at least `ocr_per_scene_min`
//! words, each word nested inside exactly one object. One original question
//! is annotated per scene from two templates:
//!
//! * `what word is the largest` answered by the largest word in the image;
//! * `what is written on the <class>` answered by the largest word on that
//!   object.
//!
//! Only a fraction `annotation_sparsity` of the word/object associations is
//! eligible for annotation, so most scene text never appears in an answer.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scene::{fnv1a, split_of, BBox, ObjectRegion, OcrToken, Provenance, QaPair, Scene, Split};

pub const CLASS_LABELS: [&str; 8] = ["sign", "bottle", "book", "bus", "shirt", "poster", "box", "car"];

pub const LARGEST_QUESTION: [&str; 5] = ["what", "word", "is", "the", "largest"];
pub const WRITTEN_ON_PREFIX: [&str; 5] = ["what", "is", "written", "on", "the"];

pub const IMAGE_WIDTH: f64 = 640.0;
pub const IMAGE_HEIGHT: f64 = 480.0;
pub const NOISE_MAGNITUDE: f64 = 0.1;

const LEXICON_SIZE: usize = 200;
const LEXICON_SEED: u64 = 0x7a67_1e71_c0de;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_scenes: usize,
    pub ocr_per_scene_min: usize,
    pub annotation_sparsity: f64,
    pub appearance_dim: usize,
}

impl SynthConfig {
    pub fn new(seed: u64, n_scenes: usize) -> Self {
        Self {
            seed,
            n_scenes,
            ocr_per_scene_min: 5,
            annotation_sparsity: 0.4,
            appearance_dim: 16,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<Scene>,
    pub val: Vec<Scene>,
    pub test: Vec<Scene>,
}

impl SynthCorpus {
    pub fn split(&self, s: Split) -> &[Scene] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// The closed word list scene text is drawn from: 180 two-syllable
/// pseudo-words followed by 20 numerals.
pub fn lexicon() -> Vec<String> {
    const ONSETS: [&str; 16] = [
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "st", "br",
    ];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    const CODAS: [&str; 5] = ["", "n", "r", "x", "k"];
    let mut rng = ChaCha8Rng::seed_from_u64(LEXICON_SEED);
    let reserved: Vec<&str> = LARGEST_QUESTION
        .iter()
        .chain(WRITTEN_ON_PREFIX.iter())
        .chain(CLASS_LABELS.iter())
        .copied()
        .collect();
    let mut words: Vec<String> = Vec::with_capacity(LEXICON_SIZE);
    while words.len() < LEXICON_SIZE - 20 {
        let mut w = String::new();
        for _ in 0..2 {
            w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
        }
        w.push_str(CODAS[rng.random_range(0..CODAS.len())]);
        if !words.contains(&w) && !reserved.contains(&w.as_str()) {
            words.push(w);
        }
    }
    while words.len() < LEXICON_SIZE {
        let w = rng.random_range(10u32..2100).to_string();
        if !words.contains(&w) {
            words.push(w);
        }
    }
    words
}

/// Deterministic pseudo-random vector in `[-1, 1]^dim` keyed by `key`.
pub fn hashed_vector(key: &str, salt: u64, dim: usize) -> Vec<f64> {
    let mut state = fnv1a(key.as_bytes()) ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    (0..dim)
        .map(|_| {
            state = splitmix64(state);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const APPEARANCE_SALT_OBJECT: u64 = 1;
const APPEARANCE_SALT_TOKEN: u64 = 2;

fn appearance<R: Rng>(key: &str, salt: u64, dim: usize, rng: &mut R) -> Vec<f64> {
    hashed_vector(key, salt, dim)
        .into_iter()
        .map(|v| v + rng.random_range(-NOISE_MAGNITUDE..=NOISE_MAGNITUDE))
        .collect()
}

enum Template {
    Largest(usize),
    WrittenOn { object: usize, token: usize },
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.n_scenes < 10 {
        return Err(Error::Contract(format!("n_scenes must be >= 10, got {}", cfg.n_scenes)));
    }
    if cfg.ocr_per_scene_min < 1 {
        return Err(Error::Contract("ocr_per_scene_min must be >= 1".into()));
    }
    if !(cfg.annotation_sparsity > 0.0 && cfg.annotation_sparsity <= 1.0) {
        return Err(Error::Contract(format!(
            "annotation_sparsity must be in (0, 1], got {}",
            cfg.annotation_sparsity
        )));
    }
    if cfg.appearance_dim == 0 {
        return Err(Error::Contract("appearance_dim must be >= 1".into()));
    }
    let lex = lexicon();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = SynthCorpus::default();
    for i in 0..cfg.n_scenes {
        let scene = generate_scene(cfg, &lex, &format!("syn{}_{i:05}", cfg.seed), &mut rng);
        match split_of(&scene.image_id) {
            Split::Train => out.train.push(scene),
            Split::Val => out.val.push(scene),
            Split::Test => out.test.push(scene),
        }
    }
    Ok(out)
}

fn generate_scene<R: Rng>(cfg: &SynthConfig, lex: &[String], image_id: &str, rng: &mut R) -> Scene {
    // objects occupy distinct cells of a 2x2 grid
    let n_obj = rng.random_range(2..=4usize);
    let mut cells = [0usize, 1, 2, 3];
    cells.shuffle(rng);
    let mut labels: Vec<&str> = CLASS_LABELS.to_vec();
    labels.shuffle(rng);
    let (cw, ch) = (IMAGE_WIDTH / 2.0, IMAGE_HEIGHT / 2.0);
    let mut objects = Vec::with_capacity(n_obj);
    for (k, &cell) in cells.iter().take(n_obj).enumerate() {
        let (cx, cy) = ((cell % 2) as f64 * cw, (cell / 2) as f64 * ch);
        let w = rng.random_range(0.7..0.95) * cw;
        let h = rng.random_range(0.7..0.95) * ch;
        let x1 = cx + rng.random_range(0.0..(cw - w));
        let y1 = cy + rng.random_range(0.0..(ch - h));
        objects.push(ObjectRegion {
            class_label: labels[k].to_string(),
            bbox: BBox::new(x1, y1, x1 + w, y1 + h),
            appearance: appearance(labels[k], APPEARANCE_SALT_OBJECT, cfg.appearance_dim, rng),
        });
    }

    let n_tok = cfg.ocr_per_scene_min + rng.random_range(0..=3usize);
    let mut owner: Vec<usize> = (0..n_obj).collect();
    while owner.len() < n_tok {
        owner.push(rng.random_range(0..n_obj));
    }
    owner.truncate(n_tok);
    owner.shuffle(rng);

    let mut per_object = vec![0usize; n_obj];
    let mut tokens: Vec<OcrToken> = Vec::with_capacity(n_tok);
    let mut token_owner = Vec::with_capacity(n_tok);
    let counts: Vec<usize> = (0..n_obj).map(|o| owner.iter().filter(|&&x| x == o).count()).collect();
    for &o in &owner {
        let ob = objects[o].bbox;
        let slot_h = (ob.y2 - ob.y1) / counts[o] as f64;
        let slot = per_object[o];
        per_object[o] += 1;
        let text = lex[rng.random_range(0..lex.len())].clone();
        let h = rng.random_range(0.2..0.9) * slot_h;
        let w = (h * 0.6 * text.len() as f64).min((ob.x2 - ob.x1) * 0.95);
        let x1 = ob.x1 + rng.random_range(0.0..=((ob.x2 - ob.x1) - w));
        let y1 = ob.y1 + slot as f64 * slot_h + rng.random_range(0.0..=(slot_h - h));
        tokens.push(OcrToken {
            appearance: appearance(&text, APPEARANCE_SALT_TOKEN, cfg.appearance_dim, rng),
            text,
            bbox: BBox::new(x1, y1, x1 + w, y1 + h),
        });
        token_owner.push(o);
    }

    let mut scene = Scene {
        image_id: image_id.to_string(),
        width: IMAGE_WIDTH,
        height: IMAGE_HEIGHT,
        objects,
        ocr_tokens: tokens,
        qa_pairs: Vec::new(),
    };
    let qa = annotate(&scene, &token_owner, cfg.annotation_sparsity, rng);
    scene.qa_pairs.push(qa);
    scene
}

/// Index of the largest token on each object.
pub fn object_headlines(scene: &Scene, token_owner: &[usize]) -> Vec<Option<usize>> {
    let order = crate::scene::tokens_by_size(scene);
    let mut heads = vec![None; scene.objects.len()];
    for t in order {
        let o = token_owner[t];
        if heads[o].is_none() {
            heads[o] = Some(t);
        }
    }
    heads
}

/// Object whose box contains each token (first match).
pub fn token_owners(scene: &Scene) -> Vec<Option<usize>> {
    scene
        .ocr_tokens
        .iter()
        .map(|t| scene.objects.iter().position(|o| o.bbox.contains(&t.bbox)))
        .collect()
}

fn annotate<R: Rng>(scene: &Scene, token_owner: &[usize], sparsity: f64, rng: &mut R) -> QaPair {
    let n = scene.ocr_tokens.len();
    let n_eligible = (libm::ceil(sparsity * n as f64) as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let largest = crate::scene::largest_ocr_token(scene).expect("scenes have text");
    let heads = object_headlines(scene, token_owner);
    let mut candidates = Vec::new();
    for &t in &order[..n_eligible] {
        if t == largest {
            candidates.push(Template::Largest(t));
        }
        let o = token_owner[t];
        if heads[o] == Some(t) {
            candidates.push(Template::WrittenOn { object: o, token: t });
        }
    }
    let chosen = if candidates.is_empty() {
        Template::Largest(largest)
    } else {
        let k = rng.random_range(0..candidates.len());
        candidates.swap_remove(k)
    };
    let (question_words, token): (Vec<String>, usize) = match chosen {
        Template::Largest(t) => (LARGEST_QUESTION.iter().map(|s| s.to_string()).collect(), t),
        Template::WrittenOn { object, token } => {
            let mut q: Vec<String> = WRITTEN_ON_PREFIX.iter().map(|s| s.to_string()).collect();
            q.push(scene.objects[object].class_label.clone());
            (q, token)
        }
    };
    QaPair {
        question_words,
        answer_words: vec![scene.ocr_tokens[token].text.clone()],
        provenance: Provenance::Original,
        answer_source_indices: vec![token],
    }
}

/// Whether `question` is a correct question for the answer token `token`
/// under the generator's templates.
pub fn question_is_correct(scene: &Scene, question: &[String], token: usize) -> bool {
    let words: Vec<&str> = question.iter().map(String::as_str).collect();
    if words == LARGEST_QUESTION {
        return crate::scene::largest_ocr_token(scene).ok() == Some(token);
    }
    if words.len() == 6 && words[..5] == WRITTEN_ON_PREFIX {
        let owners = token_owners(scene);
        let Some(object) = scene.objects.iter().position(|o| o.class_label == words[5]) else {
            return false;
        };
        if owners.iter().any(|o| o.is_none()) {
            return false;
        }
        let owners: Vec<usize> = owners.into_iter().flatten().collect();
        return owners[token] == object && object_headlines(scene, &owners)[object] == Some(token);
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::validate_scene;
    use alloc::collections::BTreeSet;

    #[test]
    fn lexicon_is_closed_and_normalized() {
        let lex = lexicon();
        assert_eq!(lex.len(), 200);
        let set: BTreeSet<_> = lex.iter().collect();
        assert_eq!(set.len(), 200);
        assert!(lex.iter().all(|w| crate::text::is_normalized_word(w)));
        assert_eq!(lex, lexicon());
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = SynthConfig::new(7, 50);
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
        let other = SynthConfig::new(8, 50);
        assert_ne!(synth_generate(&cfg).unwrap(), synth_generate(&other).unwrap());
    }

    #[test]
    fn scenes_meet_generator_contract() {
        let corpus = synth_generate(&SynthConfig::new(3, 200)).unwrap();
        let all: Vec<&Scene> = corpus.train.iter().chain(&corpus.val).chain(&corpus.test).collect();
        assert_eq!(all.len(), 200);
        for s in all {
            assert!(validate_scene(s).is_ok(), "{:?}", validate_scene(s));
            assert!(s.ocr_tokens.len() >= 5);
            assert!((2..=4).contains(&s.objects.len()));
            assert_eq!(s.qa_pairs.len(), 1);
            let qa = &s.qa_pairs[0];
            assert!(s.ocr_tokens.iter().any(|t| t.text == qa.answer()));
            assert!(question_is_correct(s, &qa.question_words, qa.answer_source_indices[0]));
            assert!(token_owners(s).iter().all(Option::is_some));
            assert_eq!(split_of(&s.image_id), split_of(&s.image_id));
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(synth_generate(&SynthConfig::new(0, 9)).is_err());
        let mut c = SynthConfig::new(0, 20);
        c.annotation_sparsity = 0.0;
        assert!(synth_generate(&c).is_err());
        c.annotation_sparsity = 1.0;
        c.ocr_per_scene_min = 0;
        assert!(synth_generate(&c).is_err());
    }

    #[test]
    fn scene_text_is_underused() {
        let corpus = synth_generate(&SynthConfig::new(11, 100)).unwrap();
        let ocr: BTreeSet<&str> = corpus.train.iter().flat_map(|s| s.ocr_texts()).collect();
        let ans: BTreeSet<String> = corpus.train.iter().map(|s| s.qa_pairs[0].answer()).collect();
        assert!(ocr.len() > ans.len());
    }
}
