//! Few-shot in-context intent classification.
//!
//! Each query is turned into one boolean prompt per candidate label; a
//! language model scores the `true`/`false` continuations and the label with
//! the highest normalized `true` probability wins.

pub mod config;
pub mod corpus;
pub mod evalrunner;
pub mod prompting;
pub mod scoring;

pub use config::{BackendConfig, EvalMode, ExperimentConfig};
pub use corpus::{Corpus, LabelRegistry, LabeledExample, Split, TaskMode, TaskSpec};
pub use evalrunner::{EvalReport, ResolvedPlan, Runner};
pub use prompting::{OrderStrategy, PromptFamily, PromptPlan, ShotSelection, TokenBudget};
pub use scoring::{Backend, BackendDescriptor, BackendError, ModelFamily, PredictionRecord};
