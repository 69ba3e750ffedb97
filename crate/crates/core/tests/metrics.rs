use std::collections::HashMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tag_core::metrics::{anls_score, levenshtein, vqa_accuracy, ANLS_THRESHOLD};
use tag_core::vqa::{score_prediction, EvalReport};

/// Edit distance from its recursive definition, memoized on suffix pairs.
fn oracle(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&d) = memo.get(&(i, j)) {
            return d;
        }
        let d = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j, memo)
                .min(go(a, b, i, j + 1, memo))
                .min(go(a, b, i + 1, j + 1, memo))
        };
        memo.insert((i, j), d);
        d
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

fn word() -> impl Strategy<Value = String> {
    "[a-e]{0,9}"
}

#[test]
fn levenshtein_matches_recursive_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let alphabet: Vec<char> = "abcdxyz".chars().collect();
    for _ in 0..1000 {
        let mut draw = || -> Vec<char> {
            let n = rng.random_range(0..12);
            (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
        };
        let (a, b) = (draw(), draw());
        let (sa, sb): (String, String) = (a.iter().collect(), b.iter().collect());
        assert_eq!(levenshtein(&sa, &sb), oracle(&a, &b), "{sa:?} {sb:?}");
    }
}

#[test]
fn tabulated_examples() {
    let one = |s: &str| vec![s.to_string()];
    assert_eq!(levenshtein("", "abc"), 3);
    assert_eq!(levenshtein("kitten", "sitting"), 3);
    assert_eq!(anls_score("hello", &one("hello")), 1.0);
    assert_eq!(anls_score("hello", &one("hallo")), 1.0 - 1.0 / 5.0);
    assert_eq!(anls_score("abc", &one("xyz")), 0.0);
    let refs = |k: usize| -> Vec<String> {
        (0..10)
            .map(|i| if i < k { "sign" } else { "door" }.to_string())
            .collect()
    };
    assert_eq!(vqa_accuracy("sign", &refs(10)).unwrap(), 1.0);
    assert_eq!(vqa_accuracy("sign", &refs(2)).unwrap(), 2.0 / 3.0);
    assert_eq!(vqa_accuracy("sign", &refs(0)).unwrap(), 0.0);
    assert!(vqa_accuracy("sign", &refs(10)[..3]).is_err());
}

proptest! {
    #[test]
    fn levenshtein_is_a_metric(a in word(), b in word(), c in word()) {
        prop_assert_eq!(levenshtein(&a, &a), 0);
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        prop_assert_eq!(levenshtein(&a, &b) == 0, a == b);
    }

    #[test]
    fn levenshtein_is_bounded_by_lengths(a in word(), b in word()) {
        let d = levenshtein(&a, &b);
        prop_assert!(d >= a.len().abs_diff(b.len()));
        prop_assert!(d <= a.len().max(b.len()));
    }

    #[test]
    fn anls_is_non_increasing_in_distance(p in "[a-d]{1,8}", seeds in prop::collection::vec("[a-d]{8}", 2)) {
        // references of one fixed length so only the distance varies
        let len = p.len();
        let r1: String = seeds[0][..len].to_string();
        let r2: String = seeds[1][..len].to_string();
        let (d1, d2) = (levenshtein(&p, &r1), levenshtein(&p, &r2));
        let (s1, s2) = (anls_score(&p, &[r1]), anls_score(&p, &[r2]));
        if d1 <= d2 {
            prop_assert!(s1 >= s2);
        } else {
            prop_assert!(s1 <= s2);
        }
    }

    #[test]
    fn anls_is_bounded_and_thresholded(p in word(), refs in prop::collection::vec(word(), 1..4)) {
        let s = anls_score(&p, &refs);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!(s == 0.0 || s > 1.0 - ANLS_THRESHOLD);
        let best = refs.iter().map(|r| anls_score(&p, std::slice::from_ref(r))).fold(0.0, f64::max);
        prop_assert_eq!(s, best);
    }

    #[test]
    fn report_means_equal_record_means(rows in prop::collection::vec((word(), "[a-e]{1,6}"), 1..12)) {
        let records: Vec<_> = rows
            .iter()
            .map(|(p, a)| score_prediction("img", "q", p, a).unwrap())
            .collect();
        let n = records.len() as f64;
        let acc = records.iter().map(|r| r.accuracy).sum::<f64>() / n;
        let anls = records.iter().map(|r| r.anls).sum::<f64>() / n;
        let report = EvalReport::from_records(records);
        prop_assert_eq!(report.accuracy, acc);
        prop_assert_eq!(report.anls, anls);
        prop_assert!((0.0..=1.0).contains(&report.accuracy) && (0.0..=1.0).contains(&report.anls));
    }
}
