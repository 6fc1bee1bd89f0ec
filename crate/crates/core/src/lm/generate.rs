use rand::Rng;
use serde::{Deserialize, Serialize};

use super::infill::generation_condition;
use super::LmModel;
use crate::autodiff::{RngStream, Tape};
use crate::error::{Error, Result};
use crate::text::vocab::{is_special, END};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeStrategy {
    Greedy,
    Topk,
}

impl std::str::FromStr for DecodeStrategy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "greedy" => Ok(DecodeStrategy::Greedy),
            "topk" => Ok(DecodeStrategy::Topk),
            other => Err(format!("unknown decode strategy {other:?} (greedy|topk)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeSpec {
    pub strategy: DecodeStrategy,
    pub k: usize,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for DecodeSpec {
    fn default() -> Self {
        DecodeSpec {
            strategy: DecodeStrategy::Greedy,
            k: 5,
            max_new_tokens: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub ids: Vec<u32>,
    /// True when the model emitted nothing before `[E]`.
    pub degenerate: bool,
    /// True when decoding stopped at the length limit rather than `[E]`.
    pub truncated: bool,
}

/// Next-token scores for the last position of `ids`; reserved tokens other
/// than `[E]` are excluded.
fn next_scores(model: &LmModel, ids: &[u32]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let b = model.params.bind(&mut tape);
    let h = model.hidden(&mut tape, &b, ids, None)?;
    let hv = tape.value(h);
    let last = hv.row(ids.len() - 1);
    let emb = model.params.get(model.net.token_embedding());
    Ok((0..model.vocab.len())
        .map(|t| {
            if is_special(t as u32) && t as u32 != END {
                f64::NEG_INFINITY
            } else {
                emb.row(t).iter().zip(last).map(|(a, b)| a * b).sum()
            }
        })
        .collect())
}

fn pick(scores: &[f64], spec: &DecodeSpec, rng: &mut RngStream) -> u32 {
    // Ties resolve to the lowest id.
    let mut order: Vec<usize> = (0..scores.len()).filter(|&i| scores[i].is_finite()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    match spec.strategy {
        DecodeStrategy::Greedy => order[0] as u32,
        DecodeStrategy::Topk => {
            let top = &order[..spec.k.clamp(1, order.len())];
            let max = scores[top[0]];
            let w: Vec<f64> = top.iter().map(|&i| (scores[i] - max).exp()).collect();
            let total: f64 = w.iter().sum();
            let mut u = rng.random::<f64>() * total;
            for (&i, wi) in top.iter().zip(&w) {
                if u < *wi {
                    return i as u32;
                }
                u -= wi;
            }
            *top.last().expect("non-empty") as u32
        }
    }
}

/// Decodes a possible next event after hypothesis `hyp`, conditioned on
/// `[S] O1 [M] O2 [E] [S] O1 H`. `rng` drives top-k sampling only.
pub fn generate_next_event(
    model: &LmModel,
    obs1: &str,
    hyp: &str,
    obs2: &str,
    spec: &DecodeSpec,
    rng: &mut RngStream,
) -> Result<Generation> {
    let mut ids = model.vocab.encode(&generation_condition(obs1, hyp, obs2));
    if ids.len() > model.config.max_seq_len {
        return Err(Error::Contract(format!(
            "generation condition has {} tokens, max_seq_len is {}",
            ids.len(),
            model.config.max_seq_len
        )));
    }
    let start = ids.len();
    let mut ended = false;
    while ids.len() - start < spec.max_new_tokens && ids.len() < model.config.max_seq_len {
        let next = pick(&next_scores(model, &ids)?, spec, rng);
        if next == END {
            ended = true;
            break;
        }
        ids.push(next);
    }
    let out = ids[start..].to_vec();
    Ok(Generation {
        text: model.vocab.decode(&out),
        degenerate: out.is_empty(),
        truncated: !ended && !out.is_empty(),
        ids: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::LmConfig;
    use crate::text::Vocab;

    fn model() -> LmModel {
        let vocab = Vocab::build(["ann woke up . she ate eggs . they were bad ."], 1).unwrap();
        let cfg = LmConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 1,
            max_seq_len: 32,
            ..LmConfig::default()
        };
        LmModel::new(cfg, vocab).unwrap()
    }

    #[test]
    fn zero_budget_is_degenerate() {
        let m = model();
        let spec = DecodeSpec {
            max_new_tokens: 0,
            ..DecodeSpec::default()
        };
        let g = generate_next_event(&m, "Ann woke up.", "She ate eggs.", "They were bad.", &spec, &mut RngStream::new(0)).unwrap();
        assert!(g.degenerate);
        assert_eq!(g.text, "");
    }

    #[test]
    fn greedy_is_deterministic_and_avoids_reserved_tokens() {
        let m = model();
        let spec = DecodeSpec {
            max_new_tokens: 5,
            ..DecodeSpec::default()
        };
        let run = |seed| {
            generate_next_event(&m, "Ann woke up.", "She ate eggs.", "They were bad.", &spec, &mut RngStream::new(seed)).unwrap()
        };
        let a = run(0);
        assert_eq!(a, run(1));
        assert!(a.ids.iter().all(|&t| !is_special(t)));
    }

    #[test]
    fn topk_depends_only_on_seed() {
        let m = model();
        let spec = DecodeSpec {
            strategy: DecodeStrategy::Topk,
            k: 4,
            max_new_tokens: 6,
            seed: 0,
        };
        let run = |seed| {
            generate_next_event(&m, "Ann woke up.", "She ate eggs.", "They were bad.", &spec, &mut RngStream::new(seed)).unwrap()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn top1_equals_greedy() {
        let scores = vec![f64::NEG_INFINITY, 0.5, 2.0, 2.0, -1.0];
        let mut rng = RngStream::new(0);
        let greedy = DecodeSpec::default();
        let top1 = DecodeSpec {
            strategy: DecodeStrategy::Topk,
            k: 1,
            ..DecodeSpec::default()
        };
        assert_eq!(pick(&scores, &greedy, &mut rng), 2);
        assert_eq!(pick(&scores, &top1, &mut rng), 2);
    }
}
