//! Infilling examples: the model reads the story with a masked span and
//! must write the span out after the context.

use serde::{Deserialize, Serialize};

use crate::text::data::{BranchKind, Story, StoryBranch};
use crate::text::Vocab;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfillExample {
    pub condition: Vec<u32>,
    pub target: Vec<u32>,
    pub branch: BranchKind,
    /// Last sentence index of the masked span (3 or 4).
    pub i: u8,
}

/// Condition and target text for one branch:
/// `[S] s1 [M] s_{i+1..5} [E] [S] s1 s2` and `s_{3..i} [E]`.
pub fn infill_texts(branch: &StoryBranch<'_>, i: usize) -> (String, String) {
    assert!(i == 3 || i == 4, "i must be 3 or 4");
    let s = branch.sentences;
    let after = s[i..].join(" ");
    let condition = format!("[S] {} [M] {after} [E] [S] {} {}", s[0], s[0], s[1]);
    let target = format!("{} [E]", s[2..i].join(" "));
    (condition, target)
}

/// One example per branch and `i ∈ {3, 4}`: four for a story with a
/// counterfactual branch, two otherwise.
pub fn build_infill_examples(story: &Story, vocab: &Vocab) -> Vec<InfillExample> {
    let mut out = Vec::with_capacity(4);
    for branch in story.branches() {
        for i in [3u8, 4] {
            let (c, t) = infill_texts(&branch, i as usize);
            out.push(InfillExample {
                condition: vocab.encode(&c),
                target: vocab.encode(&t),
                branch: branch.kind,
                i,
            });
        }
    }
    out
}

/// Condition used at generation time: `[S] O1 [M] O2 [E] [S] O1 H`.
pub fn generation_condition(obs1: &str, hyp: &str, obs2: &str) -> String {
    format!("[S] {obs1} [M] {obs2} [E] [S] {obs1} {hyp}")
}

/// Shifted inputs, labels and loss weights for teacher forcing over
/// `condition ‖ target`. Only positions predicting a target token count.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSequence {
    pub inputs: Vec<u32>,
    pub labels: Vec<usize>,
    pub weights: Vec<bool>,
}

impl TrainSequence {
    pub fn from_example(ex: &InfillExample) -> Self {
        let ids: Vec<u32> = ex.condition.iter().chain(&ex.target).copied().collect();
        let n = ids.len().saturating_sub(1);
        let first_target = ex.condition.len();
        TrainSequence {
            inputs: ids[..n].to_vec(),
            labels: ids[1..].iter().map(|&t| t as usize).collect(),
            weights: (0..n).map(|t| t + 1 >= first_target).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_targets(&self) -> usize {
        self.weights.iter().filter(|w| **w).count()
    }
}
