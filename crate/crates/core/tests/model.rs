use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use tag_core::autograd::Graph;
use tag_core::config::ModelConfig;
use tag_core::decoder::TokenRef;
use tag_core::embed::{SceneFeatures, ValidLengths};
use tag_core::fusion::{build_mask, Dropout, SeqLayout};
use tag_core::gradcheck::finite_difference_check;
use tag_core::model::{ForwardOptions, Modalities, TextAwareModel};
use tag_core::params::Bindings;
use tag_core::scene::Scene;
use tag_core::synth::{synth_generate, SynthConfig};
use tag_core::tensor::Tensor;
use tag_core::vocab::{Vocabulary, BEGIN_ID, END_ID};
use tag_core::Error;

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn small_cfg() -> ModelConfig {
    ModelConfig {
        d: 8,
        layers: 1,
        heads: 2,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

/// A model over one synthetic scene with parameters drawn at a scale where
/// gradients are far from the finite-difference floor.
fn setup(cfg: ModelConfig, seed: u64) -> (TextAwareModel, Scene) {
    let corpus = synth_generate(&SynthConfig::new(7, 20)).unwrap();
    let scene = corpus.train[0].clone();
    let vocab = Vocabulary::build(&corpus.train[..1]);
    let mut model = TextAwareModel::new(cfg, vocab, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.3).unwrap();
    let flat: Vec<f64> = model.params.flatten().iter().map(|_| normal.sample(&mut rng)).collect();
    model.params.unflatten(&flat).unwrap();
    (model, scene)
}

/// An OCR word of `scene` that is not in the vocabulary (reachable only by
/// pointing).
fn pointer_only_word(model: &TextAwareModel, scene: &Scene) -> String {
    scene
        .ocr_tokens
        .iter()
        .map(|t| t.text.clone())
        .find(|w| model.vocab.known(w).is_none())
        .expect("scene has an out-of-vocabulary OCR word")
}

#[test]
fn full_model_gradient_check() {
    let (mut model, scene) = setup(small_cfg(), 3);
    let feats = model.features(&scene).unwrap();
    let qa = &scene.qa_pairs[0];
    let mut target = qa.question_words.clone();
    target.push(pointer_only_word(&model, &scene));
    let primary = qa.answer_words.clone();

    let (_, grads) = model.teacher_forced_loss(&feats, &primary, &target, None).unwrap();
    let analytic = grads.flatten();
    let x0 = model.params.flatten();
    let report = finite_difference_check(
        |x| {
            model.params.unflatten(x)?;
            Ok(model.evaluate_loss(&feats, &primary, &target)?.total)
        },
        &x0,
        &analytic,
        1e-4,
    )
    .unwrap();
    assert_eq!(report.checked, x0.len());
    assert!(report.passed, "{report:?}");
}

#[test]
fn padded_and_compact_layouts_agree() {
    let (model, scene) = setup(
        ModelConfig {
            d: 16,
            layers: 2,
            heads: 4,
            dropout: 0.0,
            ..ModelConfig::default()
        },
        5,
    );
    let feats = model.features(&scene).unwrap();
    let primary = scene.qa_pairs[0].answer_words.clone();
    let inputs = [TokenRef::Vocab(BEGIN_ID), TokenRef::Vocab(5), TokenRef::Ocr(1)];
    let run = |padded: bool| {
        let mut g = Graph::new();
        let mut b = Bindings::new(&model.params);
        let out = model
            .forward(
                &mut g,
                &mut b,
                &feats,
                &primary,
                &inputs,
                ForwardOptions { padded },
                None,
                None,
            )
            .unwrap();
        (g.value(out.scores).clone(), out.layout)
    };
    let (compact, lc) = run(false);
    let (padded, lp) = run(true);
    assert_eq!(lp.seq_len(), 40 + 8 + 12 + 12);
    assert!(lc.seq_len() < lp.seq_len());
    // padded layout scores every OCR slot up to the cap; the extra ones are -inf
    let (v, n) = (model.vocab.len(), feats.n_used());
    assert_eq!(padded.cols(), v + 12);
    assert_eq!(padded.rows(), inputs.len());
    for r in 0..inputs.len() {
        let (a, b) = (compact.row(r), padded.row(r));
        for c in 0..v + n {
            if a[c].is_finite() {
                assert!((a[c] - b[c]).abs() < 1e-10, "row {r} col {c}: {} vs {}", a[c], b[c]);
            } else {
                assert_eq!(a[c], b[c]);
            }
        }
        assert!(b[v + n..].iter().all(|x| *x == f64::NEG_INFINITY));
    }
}

#[test]
fn zeroing_masked_positions_leaves_visible_outputs_unchanged() {
    let cfg = ModelConfig {
        d: 16,
        layers: 2,
        heads: 4,
        k_cap: 10,
        m_cap: 4,
        n_cap: 6,
        t_cap: 5,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let (model, _) = setup(cfg.clone(), 9);
    let lens = ValidLengths {
        k_used: 6,
        m_used: 2,
        n_used: 0,
    };
    let layout = SeqLayout::padded(&cfg, lens, 3).unwrap();
    let s = layout.seq_len();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let base: Vec<f64> = (0..s * cfg.d).map(|_| normal.sample(&mut rng)).collect();
    let mut zeroed = base.clone();
    for p in 0..s {
        if !layout.is_valid(p) {
            zeroed[p * cfg.d..(p + 1) * cfg.d].fill(0.0);
        }
    }
    let mask = build_mask(&layout);
    let run = |data: Vec<f64>| {
        let mut g = Graph::new();
        let mut b = Bindings::new(&model.params);
        let x = g.constant(Tensor::new(&[s, cfg.d], data).unwrap());
        let y = model.fusion().forward(&mut g, &mut b, x, &mask, None, None).unwrap();
        g.value(y).clone()
    };
    let (y0, y1) = (run(base), run(zeroed));
    let mut checked = 0;
    for p in (0..s).filter(|&p| layout.is_valid(p)) {
        assert_eq!(y0.row(p), y1.row(p), "position {p}");
        checked += 1;
    }
    assert_eq!(checked, 6 + 2 + 3);
}

#[test]
fn decode_inputs_after_step_t_do_not_affect_earlier_scores() {
    let (model, scene) = setup(small_cfg(), 11);
    let feats = model.features(&scene).unwrap();
    let primary = scene.qa_pairs[0].answer_words.clone();
    let a = [
        TokenRef::Vocab(BEGIN_ID),
        TokenRef::Vocab(4),
        TokenRef::Ocr(0),
        TokenRef::Vocab(6),
    ];
    let b = [
        TokenRef::Vocab(BEGIN_ID),
        TokenRef::Vocab(4),
        TokenRef::Ocr(2),
        TokenRef::Vocab(5),
    ];
    let scores = |inputs: &[TokenRef]| {
        let mut g = Graph::new();
        let mut bind = Bindings::new(&model.params);
        let out = model
            .forward(
                &mut g,
                &mut bind,
                &feats,
                &primary,
                inputs,
                ForwardOptions::default(),
                None,
                None,
            )
            .unwrap();
        (g.value(out.scores).clone(), g.value(out.enriched).clone(), out.layout)
    };
    let (sa, ea, layout) = scores(&a);
    let (sb, eb, _) = scores(&b);
    // steps 0 and 1 share their inputs; everything up to them is identical
    for r in 0..=layout.decode_offset() + 1 {
        assert_eq!(ea.row(r), eb.row(r), "enriched row {r}");
    }
    assert_eq!(sa.row(0), sb.row(0));
    assert_eq!(sa.row(1), sb.row(1));
    assert_ne!(sa.row(2), sb.row(2));
}

#[test]
fn teacher_forcing_is_causal() {
    let (model, scene) = setup(small_cfg(), 13);
    let feats = model.features(&scene).unwrap();
    let primary = scene.qa_pairs[0].answer_words.clone();
    let base = words("what is written on the");
    let report = |target: &[String]| model.evaluate_loss(&feats, &primary, target).unwrap();
    let r0 = report(&base);
    for j in 0..base.len() {
        let mut changed = base.clone();
        changed[j] = if changed[j] == "what" {
            "the".into()
        } else {
            "what".into()
        };
        let r1 = report(&changed);
        assert_eq!(r0.supervised_steps, r1.supervised_steps);
        for s in 0..j {
            assert_eq!(r0.per_step[s], r1.per_step[s], "changing word {j} moved step {s}");
        }
        assert_ne!(r0.per_step[j], r1.per_step[j]);
    }
}

#[test]
fn loss_report_total_is_sum_of_steps() {
    let (model, scene) = setup(small_cfg(), 17);
    let feats = model.features(&scene).unwrap();
    let qa = &scene.qa_pairs[0];
    let mut target = qa.question_words.clone();
    target.push("zzzz".into()); // neither in vocabulary nor OCR: skipped
    let r = model.evaluate_loss(&feats, &qa.answer_words, &target).unwrap();
    assert_eq!(r.per_step.len(), target.len() + 1);
    assert_eq!(r.supervised_steps, target.len());
    assert!(r.per_step[target.len() - 1].is_none());
    let sum: f64 = r.per_step.iter().flatten().sum();
    assert!((sum - r.total).abs() < 1e-12);
    assert!(r.per_step.iter().flatten().all(|&x| x >= 0.0));
}

#[test]
fn empty_target_is_unsupervisable() {
    let (model, scene) = setup(small_cfg(), 19);
    let feats = model.features(&scene).unwrap();
    assert_eq!(
        model.evaluate_loss(&feats, &words("x"), &[]).unwrap_err(),
        Error::Unsupervisable
    );
}

#[test]
fn pointer_path_receives_gradient() {
    let (mut model, scene) = setup(small_cfg(), 23);
    // reset to the regular small initialization
    model = TextAwareModel::new(model.cfg.clone(), model.vocab.clone(), 23).unwrap();
    let feats = model.features(&scene).unwrap();
    let target = vec![pointer_only_word(&model, &scene)];
    let (_, grads) = model
        .teacher_forced_loss(&feats, &words("hello"), &target, None)
        .unwrap();
    for name in [
        "embed.ocr_proj.w",
        "embed.ocr_proj.b",
        "head.ptr_ocr.w",
        "head.ptr_dec.w",
    ] {
        let id = model.params.id(name).unwrap();
        assert!(grads.get(id).iter().any(|g| *g != 0.0), "{name} got no gradient");
    }
}

#[test]
fn attention_rows_sum_to_one_over_visible_keys() {
    let (model, scene) = setup(
        ModelConfig {
            d: 16,
            layers: 2,
            heads: 4,
            dropout: 0.0,
            ..ModelConfig::default()
        },
        29,
    );
    let feats = model.features(&scene).unwrap();
    let inputs = [TokenRef::Vocab(BEGIN_ID), TokenRef::Vocab(7)];
    let mut trace = Vec::new();
    let mut g = Graph::new();
    let mut b = Bindings::new(&model.params);
    let out = model
        .forward(
            &mut g,
            &mut b,
            &feats,
            &words("hello"),
            &inputs,
            ForwardOptions { padded: true },
            None,
            Some(&mut trace),
        )
        .unwrap();
    assert_eq!(trace.len(), 2 * 4);
    let layout = out.layout;
    for probs in &trace {
        for q in 0..layout.seq_len() {
            let row = probs.row(q);
            if layout.is_valid(q) {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                for (k, p) in row.iter().enumerate() {
                    if !layout.visible(q, k) {
                        assert_eq!(*p, 0.0);
                    }
                }
            } else {
                assert!(row.iter().all(|p| *p == 0.0));
            }
        }
    }
}

#[test]
fn ocr_block_is_permutation_equivariant() {
    let cfg = ModelConfig {
        d: 16,
        layers: 2,
        heads: 4,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let (model, _) = setup(cfg.clone(), 31);
    let lens = ValidLengths {
        k_used: 5,
        m_used: 3,
        n_used: 6,
    };
    let layout = SeqLayout::compact(lens, 2);
    let s = layout.seq_len();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let x: Vec<f64> = (0..s * cfg.d).map(|_| normal.sample(&mut rng)).collect();
    let perm = [3usize, 0, 5, 1, 4, 2];
    let off = layout.ocr_offset();
    let mut xp = x.clone();
    for (i, &p) in perm.iter().enumerate() {
        let (dst, src) = ((off + i) * cfg.d, (off + p) * cfg.d);
        xp[dst..dst + cfg.d].copy_from_slice(&x[src..src + cfg.d]);
    }
    let mask = build_mask(&layout);
    let run = |data: Vec<f64>| {
        let mut g = Graph::new();
        let mut b = Bindings::new(&model.params);
        let v = g.constant(Tensor::new(&[s, cfg.d], data).unwrap());
        let y = model.fusion().forward(&mut g, &mut b, v, &mask, None, None).unwrap();
        g.value(y).clone()
    };
    let (y, yp) = (run(x), run(xp));
    for r in 0..s {
        let src = if (off..off + 6).contains(&r) {
            off + perm[r - off]
        } else {
            r
        };
        for (a, b) in yp.row(r).iter().zip(y.row(src)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_is_deterministic_and_dropout_only_changes_training() {
    let (model, scene) = setup(
        ModelConfig {
            dropout: 0.3,
            ..small_cfg()
        },
        37,
    );
    let feats = model.features(&scene).unwrap();
    let qa = &scene.qa_pairs[0];
    let a = model
        .evaluate_loss(&feats, &qa.answer_words, &qa.question_words)
        .unwrap();
    let b = model
        .evaluate_loss(&feats, &qa.answer_words, &qa.question_words)
        .unwrap();
    assert_eq!(a, b);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut dropout = Dropout { p: 0.3, rng: &mut rng };
    let (c, _) = model
        .teacher_forced_loss(&feats, &qa.answer_words, &qa.question_words, Some(&mut dropout))
        .unwrap();
    assert_ne!(a.total, c.total);
}

#[test]
fn greedy_decoding_respects_special_tokens_and_cap() {
    for seed in 0..5 {
        let (model, scene) = setup(small_cfg(), 41 + seed);
        let feats: SceneFeatures = model.features(&scene).unwrap();
        let d1 = model.decode_greedy(&feats, &scene.qa_pairs[0].answer_words).unwrap();
        let d2 = model.decode_greedy(&feats, &scene.qa_pairs[0].answer_words).unwrap();
        assert_eq!(d1, d2);
        assert!(d1.tokens.len() <= model.cfg.t_cap);
        assert!(!d1.tokens.contains(&TokenRef::Vocab(BEGIN_ID)));
        assert!(!d1.tokens.contains(&TokenRef::Vocab(END_ID)));
        assert_eq!(d1.words.len(), d1.tokens.len());
    }
}

#[test]
fn text_only_modalities_hide_regions() {
    let (mut model, scene) = setup(small_cfg(), 43);
    let feats = model.features(&scene).unwrap();
    let full = model
        .step_scores(&feats, &words("x"), &[TokenRef::Vocab(BEGIN_ID)])
        .unwrap();
    assert_eq!(full.pointer_scores.len(), feats.n_used());
    model.modalities = Modalities::TEXT_ONLY;
    let text = model
        .step_scores(&feats, &words("x"), &[TokenRef::Vocab(BEGIN_ID)])
        .unwrap();
    assert!(text.pointer_scores.is_empty());
    assert!(matches!(text.argmax(), TokenRef::Vocab(_)));
}
