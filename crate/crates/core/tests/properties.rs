mod common;

use icx_core::corpus::{import_jsonl, Corpus, LabeledExample, Split};
use icx_core::prompting::{
    build_boolean_prompt, render_shot_line, sample_shots, select_k_schedule, OrderStrategy, PromptFamily, TokenBudget,
};
use icx_core::scoring::confidence;
use icx_core::scoring::oracle::whitespace_tokens;
use proptest::prelude::*;

use common::example;

fn finite() -> impl Strategy<Value = f64> {
    -60.0..0.0f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn confidence_is_shift_invariant(a in finite(), b in finite(), c in -50.0..50.0f64) {
        let shifted = confidence(a + c, b + c).unwrap();
        let base = confidence(a, b).unwrap();
        prop_assert!((shifted - base).abs() < 1e-12, "{shifted} vs {base}");
    }

    #[test]
    fn confidence_is_antisymmetric(a in finite(), b in finite()) {
        let sum = confidence(a, b).unwrap() + confidence(b, a).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn confidence_increases_in_logprob_true(b in -30.0..0.0f64, a in -30.0..0.0f64, step in 1e-3..5.0f64) {
        prop_assert!(confidence(a + step, b).unwrap() > confidence(a, b).unwrap());
    }

    #[test]
    fn confidence_stays_inside_open_unit_interval(a in -1e6..1e6f64, b in -1e6..1e6f64) {
        let p = confidence(a, b).unwrap();
        prop_assert!(p > 0.0 && p < 1.0);
    }
}

fn word() -> impl Strategy<Value = String> {
    "[a-zäöü]{1,8}"
}

fn arb_examples() -> impl Strategy<Value = Vec<LabeledExample>> {
    let labels = prop::sample::subsequence(vec!["alarm", "music", "timer", "news", "weather"], 2..=5);
    labels.prop_flat_map(|labels| {
        let n = labels.len();
        prop::collection::vec(
            (
                prop::collection::vec(word(), 1..5),
                0..n,
                prop::sample::select(vec![Split::Train, Split::Test]),
            ),
            n..30,
        )
        .prop_map(move |rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (words, li, split))| {
                    // Every label appears at least once.
                    let label = if i < labels.len() { labels[i] } else { labels[li] };
                    example(&format!("ex{i}"), &words.join(" "), label, "de", split)
                })
                .collect()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn jsonl_round_trip_preserves_corpus(examples in arb_examples()) {
        let corpus = Corpus::new("prop", examples).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prop.jsonl");
        corpus.write_jsonl(&path).unwrap();
        let back = import_jsonl(&path).unwrap();
        prop_assert_eq!(back.examples(), corpus.examples());
        prop_assert_eq!(back.registry(), corpus.registry());
        prop_assert_eq!(back.language(), corpus.language());
    }

    #[test]
    fn registry_ignores_example_order(examples in arb_examples(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = examples.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = Corpus::new("a", examples).unwrap();
        let b = Corpus::new("b", shuffled).unwrap();
        prop_assert_eq!(a.registry(), b.registry());
        let mut sorted = a.registry().labels().to_vec();
        sorted.sort();
        prop_assert_eq!(a.registry().labels(), &sorted[..]);
    }

    #[test]
    fn label_pools_partition_the_split(examples in arb_examples()) {
        let corpus = Corpus::new("prop", examples).unwrap();
        for split in [Split::Train, Split::Test] {
            let view = corpus.split_view(split);
            for label in corpus.registry().iter() {
                let (pos, neg) = corpus.label_pools(split, label).unwrap();
                prop_assert_eq!(pos.len() + neg.len(), view.len());
                prop_assert!(pos.iter().all(|e| e.label == label));
                prop_assert!(neg.iter().all(|e| e.label != label));
                let mut ids: Vec<&str> = pos.iter().chain(&neg).map(|e| e.id.as_str()).collect();
                ids.sort();
                ids.dedup();
                prop_assert_eq!(ids.len(), view.len());
            }
        }
    }

    #[test]
    fn orderings_contain_the_same_shot_lines(
        n_pos in 0usize..8,
        n_neg in 0usize..8,
        k in 0usize..8,
        seed in any::<u64>(),
    ) {
        let pos: Vec<LabeledExample> = (0..n_pos).map(|i| example(&format!("p{i}"), &format!("pos {i}"), "a", "en", Split::Train)).collect();
        let neg: Vec<LabeledExample> = (0..n_neg).map(|i| example(&format!("n{i}"), &format!("neg {i}"), "b", "en", Split::Train)).collect();
        let pos_refs: Vec<&LabeledExample> = pos.iter().collect();
        let neg_refs: Vec<&LabeledExample> = neg.iter().collect();
        let interleaved = sample_shots(&pos_refs, &neg_refs, k, OrderStrategy::Interleaved, seed);
        let first = sample_shots(&pos_refs, &neg_refs, k, OrderStrategy::PositivesFirst, seed);
        prop_assert_eq!(&interleaved.positives, &first.positives);
        prop_assert_eq!(&interleaved.negatives, &first.negatives);

        let query = example("q", "the query", "a", "en", Split::Test);
        let budget = TokenBudget::new(10_000, 1).unwrap();
        let count = |t: &str| Ok(whitespace_tokens(t));
        let lines = |s: &str| {
            let mut v: Vec<String> = s.split_inclusive('\n').map(String::from).collect();
            v.sort();
            v
        };
        let a = build_boolean_prompt(&interleaved, &query, "a", PromptFamily::Causal, &budget, count).unwrap();
        let b = build_boolean_prompt(&first, &query, "a", PromptFamily::Causal, &budget, count).unwrap();
        prop_assert_eq!(lines(&a.prompt_text), lines(&b.prompt_text));
        prop_assert_eq!(a.dropped_pairs, 0);
        let expected: usize = interleaved.positives.len() + interleaved.negatives.len();
        prop_assert_eq!(a.shot_ids.len(), expected);
        for e in &interleaved.positives {
            prop_assert!(a.prompt_text.contains(&render_shot_line(e, "a")));
        }
    }

    #[test]
    fn nothing_is_dropped_when_the_full_prompt_fits(
        n in 0usize..6,
        extra in 0usize..20,
        reserve in 1usize..10,
    ) {
        let pos: Vec<LabeledExample> = (0..n).map(|i| example(&format!("p{i}"), &format!("yes {i}"), "a", "en", Split::Train)).collect();
        let neg: Vec<LabeledExample> = (0..n).map(|i| example(&format!("n{i}"), &format!("no {i}"), "b", "en", Split::Train)).collect();
        let pos_refs: Vec<&LabeledExample> = pos.iter().collect();
        let neg_refs: Vec<&LabeledExample> = neg.iter().collect();
        let sel = sample_shots(&pos_refs, &neg_refs, n, OrderStrategy::Interleaved, 1);
        let query = example("q", "what now", "a", "en", Split::Test);
        let full = build_boolean_prompt(&sel, &query, "a", PromptFamily::Causal, &TokenBudget::new(100_000, 1).unwrap(), |t| Ok(whitespace_tokens(t))).unwrap();
        let needed = whitespace_tokens(&full.prompt_text);
        let budget = TokenBudget::new(needed + extra + reserve, reserve).unwrap();
        let plan = build_boolean_prompt(&sel, &query, "a", PromptFamily::Causal, &budget, |t| Ok(whitespace_tokens(t))).unwrap();
        prop_assert_eq!(plan.dropped_pairs, 0);
        prop_assert_eq!(plan.prompt_text, full.prompt_text);
    }

    #[test]
    fn k_schedule_values_are_well_formed(
        max_tokens in 2usize..4096,
        reserve_frac in 0.0..1.0f64,
        pair in 1usize..200,
        query in 1usize..200,
    ) {
        let reserve = ((max_tokens - 1) as f64 * reserve_frac) as usize + 1;
        prop_assume!(reserve < max_tokens);
        let budget = TokenBudget::new(max_tokens, reserve).unwrap();
        let ks = select_k_schedule(&budget, pair, query);
        prop_assert_eq!(ks[0], 0);
        prop_assert!(ks.windows(2).all(|w| w[0] < w[1]));
        for &k in &ks {
            prop_assert!(k == 0 || k == 5 || (k % 10 == 0 && k <= 40));
        }
    }
}
