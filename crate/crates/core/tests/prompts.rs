mod common;

use std::collections::BTreeSet;

use icx_core::corpus::{LabeledExample, Split};
use icx_core::prompting::{
    build_boolean_prompt, build_qa_prompt, sample_shots, select_k_schedule, OrderStrategy, PromptFamily, ShotSelection,
    TokenBudget, MAX_K,
};
use icx_core::scoring::oracle::whitespace_tokens;

use common::example;

fn de(id: &str, text: &str, label: &str) -> LabeledExample {
    example(id, text, label, "de", Split::Train)
}

fn german_selection(order: OrderStrategy) -> ShotSelection {
    ShotSelection {
        k: 2,
        positives: vec![
            de("p1", "zeige mir meine wecker", "get_alarm"),
            de("p2", "kann ich meine wecker sehen?", "get_alarm"),
        ],
        negatives: vec![
            de("n1", "entferne alle wecker", "delete_alarm"),
            de("n2", "keinen sound bitte", "silence_alarm"),
        ],
        order_strategy: order,
        seed: 0,
        shortfall_pos: 0,
        shortfall_neg: 0,
    }
}

const GERMAN_BODY: &str = "zeige mir meine wecker=>get_alarm=true\n\
entferne alle wecker=>get_alarm=false\n\
kann ich meine wecker sehen?=>get_alarm=true\n\
keinen sound bitte=>get_alarm=false\n";

fn roomy() -> TokenBudget {
    TokenBudget::new(2048, 16).unwrap()
}

#[test]
fn german_two_shot_prompt_is_byte_exact() {
    let query = example("q", "weck mich um sieben", "set_alarm", "de", Split::Test);
    let words = |t: &str| Ok(whitespace_tokens(t));

    let causal = build_boolean_prompt(
        &german_selection(OrderStrategy::Interleaved),
        &query,
        "get_alarm",
        PromptFamily::Causal,
        &roomy(),
        words,
    )
    .unwrap();
    let expected = format!("{GERMAN_BODY}weck mich um sieben=>get_alarm=");
    assert_eq!(causal.prompt_text.as_bytes(), expected.as_bytes());
    assert_eq!(causal.continuations, ["true", "false"]);
    assert_eq!(causal.shot_ids, ["p1", "n1", "p2", "n2"]);

    let seq2seq = build_boolean_prompt(
        &german_selection(OrderStrategy::Interleaved),
        &query,
        "get_alarm",
        PromptFamily::Seq2seq,
        &roomy(),
        words,
    )
    .unwrap();
    assert_eq!(
        seq2seq.prompt_text,
        format!("{GERMAN_BODY}weck mich um sieben=>get_alarm=[MASK]")
    );
}

#[test]
fn positives_first_groups_the_pools() {
    let query = example("q", "x", "get_alarm", "de", Split::Test);
    let plan = build_boolean_prompt(
        &german_selection(OrderStrategy::PositivesFirst),
        &query,
        "get_alarm",
        PromptFamily::Causal,
        &roomy(),
        |t| Ok(whitespace_tokens(t)),
    )
    .unwrap();
    assert_eq!(plan.shot_ids, ["p1", "p2", "n1", "n2"]);
    assert!(plan.prompt_text.starts_with(
        "zeige mir meine wecker=>get_alarm=true\nkann ich meine wecker sehen?=>get_alarm=true\nentferne alle wecker=>"
    ));
}

#[test]
fn qa_prompt_passes_text_through() {
    let q = example("q", "it's late", "x", "en", Split::Test);
    let plan = build_qa_prompt(&q, "get_alarm", PromptFamily::Causal);
    assert_eq!(plan.prompt_text, "Q: Is 'get_alarm' the intent of 'it's late'? A:");
}

#[test]
fn front_truncation_drops_whole_pairs() {
    let sel = ShotSelection {
        k: 3,
        positives: vec![de("p1", "a a", "x"), de("p2", "b b", "x"), de("p3", "c c", "x")],
        negatives: vec![de("n1", "d d", "y"), de("n2", "e e", "y"), de("n3", "f f", "y")],
        order_strategy: OrderStrategy::Interleaved,
        seed: 0,
        shortfall_pos: 0,
        shortfall_neg: 0,
    };
    let query = example("q", "g g", "x", "de", Split::Test);
    // Each shot line is two words, the query line two words: 6 shots + 1 query = 14 words.
    // A limit of 10 words fits two pairs plus the query.
    let budget = TokenBudget::new(12, 2).unwrap();
    let plan = build_boolean_prompt(&sel, &query, "x", PromptFamily::Causal, &budget, |t| {
        Ok(whitespace_tokens(t))
    })
    .unwrap();
    assert_eq!(plan.dropped_pairs, 1);
    assert_eq!(plan.shot_ids, ["p2", "n2", "p3", "n3"]);
    assert_eq!(
        plan.prompt_text,
        "b b=>x=true\ne e=>x=false\nc c=>x=true\nf f=>x=false\ng g=>x="
    );

    let tight = TokenBudget::new(3, 2).unwrap();
    let err = build_boolean_prompt(&sel, &query, "x", PromptFamily::Causal, &tight, |t| {
        Ok(whitespace_tokens(t))
    })
    .unwrap_err();
    assert!(err.to_string().contains("`q`"), "{err}");
}

#[test]
fn sampled_shots_are_valid_subsets() {
    let pos: Vec<LabeledExample> = (0..5).map(|i| de(&format!("p{i}"), &format!("p {i}"), "a")).collect();
    let neg: Vec<LabeledExample> = (0..5).map(|i| de(&format!("n{i}"), &format!("n {i}"), "b")).collect();
    let pos_refs: Vec<&LabeledExample> = pos.iter().collect();
    let neg_refs: Vec<&LabeledExample> = neg.iter().collect();

    let mut subsets: Vec<BTreeSet<usize>> = Vec::new();
    for a in 0..5 {
        for b in a + 1..5 {
            for c in b + 1..5 {
                subsets.push([a, b, c].into_iter().collect());
            }
        }
    }
    assert_eq!(subsets.len(), 10);
    let indices = |shots: &[LabeledExample], prefix: &str| -> BTreeSet<usize> {
        shots
            .iter()
            .map(|e| e.id.strip_prefix(prefix).unwrap().parse().unwrap())
            .collect()
    };

    let mut distinct = BTreeSet::new();
    for seed in 0..64u64 {
        let sel = sample_shots(&pos_refs, &neg_refs, 3, OrderStrategy::Interleaved, seed);
        let p = indices(&sel.positives, "p");
        let n = indices(&sel.negatives, "n");
        assert!(subsets.contains(&p) && subsets.contains(&n), "seed {seed}: {p:?} {n:?}");
        assert_eq!(
            sel,
            sample_shots(&pos_refs, &neg_refs, 3, OrderStrategy::Interleaved, seed)
        );
        distinct.insert(p);
    }
    assert!(distinct.len() > 1);
    assert_ne!(
        sample_shots(&pos_refs, &neg_refs, 3, OrderStrategy::Interleaved, 7),
        sample_shots(&pos_refs, &neg_refs, 3, OrderStrategy::Interleaved, 8)
    );

    let short = sample_shots(&pos_refs[..2], &neg_refs, 5, OrderStrategy::Interleaved, 1);
    assert_eq!(
        (short.positives.len(), short.shortfall_pos, short.shortfall_neg),
        (2, 3, 0)
    );
}

/// Tries every candidate K in turn.
fn schedule_oracle(max_tokens: usize, reserve: usize, pair: usize, query: usize) -> Vec<usize> {
    let cost = |k: usize| k * pair + query + reserve;
    let mut best = None;
    let mut k = 10;
    while k <= MAX_K {
        if cost(k) <= max_tokens {
            best = Some(k);
        }
        k += 10;
    }
    match best {
        Some(top) => {
            let mut v = vec![0, 5];
            v.extend((1..=top / 10).map(|i| i * 10));
            v
        }
        None if cost(5) <= max_tokens => vec![0, 5],
        None => vec![0],
    }
}

#[test]
fn k_schedule_matches_arithmetic_oracle() {
    let b1024 = TokenBudget::new(1024, 16).unwrap();
    assert_eq!(select_k_schedule(&b1024, 24, 20), vec![0, 5, 10, 20, 30, 40]);
    let b512 = TokenBudget::new(512, 16).unwrap();
    assert_eq!(select_k_schedule(&b512, 24, 20), schedule_oracle(512, 16, 24, 20));
    assert_eq!(select_k_schedule(&b512, 24, 20), vec![0, 5, 10]);

    for max_tokens in (40..=2100).step_by(7) {
        for reserve in [1, 8, 16, 33] {
            if reserve >= max_tokens {
                continue;
            }
            let budget = TokenBudget::new(max_tokens, reserve).unwrap();
            for pair in [1, 2, 9, 24, 50, 130] {
                for query in [1, 5, 20, 64] {
                    assert_eq!(
                        select_k_schedule(&budget, pair, query),
                        schedule_oracle(max_tokens, reserve, pair, query),
                        "max {max_tokens} reserve {reserve} pair {pair} query {query}"
                    );
                }
            }
        }
    }
}
