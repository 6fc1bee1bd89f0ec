//! Tokenisation, vocabularies, dataset records and the synthetic corpus.

pub mod data;
pub mod synthetic;
pub mod vocab;

pub use data::{load_anli, load_timetravel, AbductiveInstance, Branch, BranchKind, Story, StoryBranch};
pub use synthetic::{gen_synthetic, SyntheticCorpus, SyntheticSpec};
pub use vocab::{normalize, split_words, Vocab};
