#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use icx_core::corpus::{Corpus, LabeledExample, Split};
use icx_core::scoring::oracle::{make_oracle, OracleConfig, OracleKind};
use icx_core::Backend;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SNIPS_LABELS: [&str; 7] = [
    "add_to_playlist",
    "book_restaurant",
    "get_weather",
    "play_music",
    "rate_book",
    "search_creative_work",
    "search_screening_event",
];

pub fn numbered_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("intent_{i:02}")).collect()
}

pub fn example(id: &str, text: &str, label: &str, language: &str, split: Split) -> LabeledExample {
    LabeledExample {
        id: id.into(),
        text: text.into(),
        label: label.into(),
        language: language.into(),
        split,
    }
}

/// `train_per_label` shots per label and `n_test` queries whose gold labels
/// are drawn uniformly at random with `label_seed`.
pub fn toy_corpus(
    name: &str,
    language: &str,
    labels: &[impl AsRef<str>],
    train_per_label: usize,
    n_test: usize,
    label_seed: u64,
) -> Corpus {
    let mut examples = Vec::new();
    for label in labels {
        let label = label.as_ref();
        for i in 0..train_per_label {
            examples.push(example(
                &format!("{name}:train:{label}:{i}"),
                &format!("{language} {label} sample {i} please"),
                label,
                language,
                Split::Train,
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(label_seed);
    for i in 0..n_test {
        let label = labels[rng.random_range(0..labels.len())].as_ref();
        examples.push(example(
            &format!("{name}:test:{i:05}"),
            &format!("{language} query number {i}"),
            label,
            language,
            Split::Test,
        ));
    }
    Corpus::new(name, examples).expect("toy corpus is valid")
}

pub fn gold_table<'a>(corpora: impl IntoIterator<Item = &'a Corpus>) -> HashMap<String, String> {
    corpora
        .into_iter()
        .flat_map(|c| c.examples())
        .map(|e| (e.text.clone(), e.label.clone()))
        .collect()
}

pub fn oracle(kind: OracleKind, gold: HashMap<String, String>) -> Arc<dyn Backend> {
    make_oracle(
        kind,
        OracleConfig {
            family: kind.family_default(),
            gold,
            seed: 11,
            ..Default::default()
        },
    )
}

/// Exact binomial quantiles: the smallest counts whose lower-tail mass
/// reaches `alpha / 2` and `1 - alpha / 2`.
pub fn binomial_interval(n: usize, p: f64, alpha: f64) -> (usize, usize) {
    let mut pmf = (1.0 - p).powi(n as i32);
    let mut cdf = 0.0;
    let mut lo = None;
    for k in 0..=n {
        cdf += pmf;
        if lo.is_none() && cdf >= alpha / 2.0 {
            lo = Some(k);
        }
        if cdf >= 1.0 - alpha / 2.0 {
            return (lo.unwrap_or(k), k);
        }
        pmf *= (n - k) as f64 / (k + 1) as f64 * p / (1.0 - p);
    }
    (lo.unwrap_or(n), n)
}
