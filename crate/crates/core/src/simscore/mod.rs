//! Greedy cosine matching between token embeddings and the unsupervised
//! hypothesis selector built on it.

mod provider;
mod select;

pub use provider::{EmbeddingProvider, LmProvider, ProviderKind, StaticProvider};
pub use select::{evaluate_selector, select_unsupervised, Selection, SelectionRecord, SelectorEvaluation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Cosine similarities, candidate tokens × reference tokens.
    pub matches: Vec<Vec<f64>>,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Recall averages, over reference tokens, the best cosine to any candidate
/// token; precision does the same with the roles swapped. No IDF weights and
/// no baseline rescaling.
pub fn bertscore(candidate: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<SimilarityReport> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::Empty("bertscore needs non-empty candidate and reference"));
    }
    let matches: Vec<Vec<f64>> = candidate
        .iter()
        .map(|c| reference.iter().map(|r| cosine(c, r)).collect())
        .collect();
    let precision = matches
        .iter()
        .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / candidate.len() as f64;
    let recall = (0..reference.len())
        .map(|j| matches.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / reference.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(SimilarityReport {
        precision,
        recall,
        f1,
        matches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_match_is_one() {
        let x = vec![vec![1.0, 2.0], vec![-0.5, 0.3]];
        let r = bertscore(&x, &x).unwrap();
        assert!((r.f1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_is_zero() {
        let c = vec![vec![1.0, 0.0, 0.0]];
        let r = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 2.0]];
        let s = bertscore(&c, &r).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_is_an_error() {
        assert!(bertscore(&[], &[vec![1.0]]).is_err());
    }

    #[test]
    fn hand_example() {
        // c = {e1}, r = {e1, e2}: P = 1, R = 0.5, F1 = 2/3
        let c = vec![vec![1.0, 0.0]];
        let r = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let s = bertscore(&c, &r).unwrap();
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.5);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    }
}
