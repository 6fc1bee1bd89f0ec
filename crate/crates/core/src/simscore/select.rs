use serde::{Deserialize, Serialize};

use super::{bertscore, EmbeddingProvider, SimilarityReport};
use crate::error::{Error, Result};
use crate::text::AbductiveInstance;

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// 1 or 2; `None` when both generations are degenerate.
    pub prediction: Option<u8>,
    pub reports: [Option<SimilarityReport>; 2],
    pub tie: bool,
    pub degenerate: [bool; 2],
}

/// Picks the hypothesis whose generated next event has the higher F1
/// against O₂. Exact ties go to hypothesis 1.
pub fn select_unsupervised(
    instance: &AbductiveInstance,
    provider: &dyn EmbeddingProvider,
) -> Result<Selection> {
    let generated = instance
        .generated
        .as_ref()
        .ok_or_else(|| Error::MissingGenerations(instance.key(0)))?;
    let reference = provider.embed(&instance.obs2)?;
    if reference.is_empty() {
        return Err(Error::InvalidInstance("obs2 has no tokens".into()));
    }
    let mut reports = [None, None];
    let mut degenerate = [false; 2];
    for j in 0..2 {
        let cand = provider.embed(&generated[j])?;
        if cand.is_empty() {
            degenerate[j] = true;
        } else {
            reports[j] = Some(bertscore(&cand, &reference)?);
        }
    }
    let (prediction, tie) = match (&reports[0], &reports[1]) {
        (Some(a), Some(b)) if a.f1 == b.f1 => (Some(1), true),
        (Some(a), Some(b)) => (Some(if a.f1 > b.f1 { 1 } else { 2 }), false),
        (Some(_), None) => (Some(1), false),
        (None, Some(_)) => (Some(2), false),
        (None, None) => (None, false),
    };
    Ok(Selection {
        prediction,
        reports,
        tie,
        degenerate,
    })
}

/// One line of the per-instance selection report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub id: String,
    pub f1_1: Option<f64>,
    pub f1_2: Option<f64>,
    pub prediction: Option<u8>,
    pub gold: u8,
    pub correct: bool,
    pub tie: bool,
    pub degenerate_1: bool,
    pub degenerate_2: bool,
    pub abstain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorEvaluation {
    pub accuracy: f64,
    pub n: usize,
    pub ties: usize,
    pub degenerate: usize,
    pub abstentions: usize,
    pub records: Vec<SelectionRecord>,
}

/// Accuracy of the unsupervised selector; abstentions count as wrong.
pub fn evaluate_selector(
    instances: &[AbductiveInstance],
    provider: &dyn EmbeddingProvider,
) -> Result<SelectorEvaluation> {
    if instances.is_empty() {
        return Err(Error::Empty("selector evaluation set"));
    }
    let mut records = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        let gold = inst
            .label
            .ok_or_else(|| Error::InvalidInstance(format!("instance {} has no label", inst.key(i))))?;
        let s = select_unsupervised(inst, provider)?;
        records.push(SelectionRecord {
            id: inst.key(i),
            f1_1: s.reports[0].as_ref().map(|r| r.f1),
            f1_2: s.reports[1].as_ref().map(|r| r.f1),
            prediction: s.prediction,
            gold,
            correct: s.prediction == Some(gold),
            tie: s.tie,
            degenerate_1: s.degenerate[0],
            degenerate_2: s.degenerate[1],
            abstain: s.prediction.is_none(),
        });
    }
    let correct = records.iter().filter(|r| r.correct).count();
    Ok(SelectorEvaluation {
        accuracy: correct as f64 / records.len() as f64,
        n: records.len(),
        ties: records.iter().filter(|r| r.tie).count(),
        degenerate: records
            .iter()
            .filter(|r| r.degenerate_1 || r.degenerate_2)
            .count(),
        abstentions: records.iter().filter(|r| r.abstain).count(),
        records,
    })
}
