use proptest::prelude::*;

use tag_core::config::ModelConfig;
use tag_core::model::TextAwareModel;
use tag_core::pipeline::{augment, generate_pair, select_answers, AnswerSelectionStrategy, Rejection};
use tag_core::scene::{BBox, OcrToken, Provenance, Scene};
use tag_core::synth::{synth_generate, SynthConfig};
use tag_core::vocab::Vocabulary;

fn scene_from_boxes(boxes: &[(f64, f64, f64, f64)]) -> Scene {
    Scene {
        image_id: "perm".into(),
        width: 400.0,
        height: 400.0,
        objects: Vec::new(),
        ocr_tokens: boxes
            .iter()
            .enumerate()
            .map(|(i, &(x, y, w, h))| OcrToken {
                text: format!("t{i}"),
                bbox: BBox::new(x, y, x + w, y + h),
                appearance: Vec::new(),
            })
            .collect(),
        qa_pairs: Vec::new(),
    }
}

fn boxes() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
    prop::collection::vec((0.0..200.0, 0.0..200.0, 1.0..100.0, 1.0..100.0), 1..10)
}

fn tiny_model(scenes: &[Scene], seed: u64) -> TextAwareModel {
    let cfg = ModelConfig {
        d: 16,
        layers: 1,
        heads: 2,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    TextAwareModel::new(cfg, Vocabulary::build(scenes), seed).unwrap()
}

proptest! {
    #[test]
    fn largest_token_is_permutation_invariant(b in boxes(), rot in 0usize..10) {
        let scene = scene_from_boxes(&b);
        let mut permuted = scene.clone();
        let k = rot % permuted.ocr_tokens.len();
        permuted.ocr_tokens.rotate_left(k);
        permuted.ocr_tokens.reverse();
        let pick = |s: &Scene| {
            let i = select_answers(s, AnswerSelectionStrategy::Largest)[0];
            s.ocr_tokens[i].clone()
        };
        prop_assert_eq!(pick(&scene), pick(&permuted));
    }

    #[test]
    fn top_k_is_sorted_by_area_and_truncated(b in boxes(), k in 1usize..6) {
        let scene = scene_from_boxes(&b);
        let picked = select_answers(&scene, AnswerSelectionStrategy::TopK(k));
        prop_assert_eq!(picked.len(), k.min(b.len()));
        let areas: Vec<f64> = picked.iter().map(|&i| scene.ocr_tokens[i].bbox.area()).collect();
        prop_assert!(areas.windows(2).all(|w| w[0] >= w[1]));
        let largest = select_answers(&scene, AnswerSelectionStrategy::Largest);
        prop_assert_eq!(picked[0], largest[0]);
    }
}

#[test]
fn augmentation_preserves_originals_and_counts_pairs() {
    let corpus = synth_generate(&SynthConfig::new(11, 60)).unwrap();
    let scenes = &corpus.train;
    let model = tiny_model(scenes, 4);
    for strategy in [
        AnswerSelectionStrategy::Largest,
        AnswerSelectionStrategy::Random { seed: 3 },
        AnswerSelectionStrategy::TopK(3),
    ] {
        let out = augment(scenes, &model, strategy).unwrap();
        let st = &out.stats;
        let pairs: usize = out.scenes.iter().map(|s| s.qa_pairs.len()).sum();
        assert_eq!(pairs, st.total_pairs());
        assert_eq!(st.attempted, st.generated + st.rejected_empty + st.rejected_duplicate);
        assert_eq!(out.records.len(), st.attempted);
        for (before, after) in scenes.iter().zip(&out.scenes) {
            let n = before.qa_pairs.len();
            assert_eq!(&after.qa_pairs[..n], &before.qa_pairs[..]);
            assert!(
                after.qa_pairs.len() - n
                    <= if strategy == AnswerSelectionStrategy::TopK(3) {
                        3
                    } else {
                        1
                    }
            );
            for qa in &after.qa_pairs[n..] {
                assert_eq!(qa.provenance, Provenance::Generated);
                assert_eq!(qa.answer_source_indices.len(), 1);
                let token = &after.ocr_tokens[qa.answer_source_indices[0]];
                assert_eq!(qa.answer_words, std::slice::from_ref(&token.text));
            }
        }
        assert_eq!(out, augment(scenes, &model, strategy).unwrap());
    }
}

#[test]
fn rejections_follow_the_filter_rules() {
    let corpus = synth_generate(&SynthConfig::new(12, 40)).unwrap();
    let model = tiny_model(&corpus.train, 8);
    for scene in &corpus.train {
        for i in 0..scene.ocr_tokens.len() {
            let g = generate_pair(&model, scene, i).unwrap();
            match g.outcome {
                Err(Rejection::Empty) => assert!(g.record.generated_question.is_empty()),
                Err(Rejection::Duplicate) => {
                    assert!(scene.originals().any(|qa| qa.question() == g.record.generated_question))
                }
                Ok(qa) => {
                    assert_eq!(qa.question(), g.record.generated_question);
                    assert_eq!(qa.question_words.len(), g.record.per_step_source.len());
                }
            }
        }
    }
    let scene = &corpus.train[0];
    assert!(generate_pair(&model, scene, scene.ocr_tokens.len()).is_err());
}
