//! Causal infilling language model.

pub mod generate;
pub mod infill;
pub mod train;

use serde::{Deserialize, Serialize};

pub use generate::{generate_next_event, DecodeSpec, DecodeStrategy, Generation};
pub use infill::{build_infill_examples, generation_condition, infill_texts, InfillExample, TrainSequence};
pub use train::{train_lm, LmTrainReport};

use crate::autodiff::{Binding, ParamStore, RngStream, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Transformer, TransformerConfig};
use crate::text::Vocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            max_seq_len: 128,
            dropout: 0.0,
            lr: 2e-3,
            batch_size: 12,
            epochs: 12,
            seed: 0,
        }
    }
}

impl LmConfig {
    pub fn transformer(&self, vocab_size: usize) -> TransformerConfig {
        TransformerConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            max_seq_len: self.max_seq_len,
            dropout: self.dropout,
            causal: true,
        }
    }

    /// All violated constraints, prefixed with `lm.`.
    pub fn violations(&self) -> Vec<String> {
        let mut v = match self.transformer(1).validate() {
            Err(Error::Config(errs)) => errs,
            _ => Vec::new(),
        };
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            v.push(format!("lr {} must be positive", self.lr));
        }
        if self.batch_size == 0 {
            v.push("batch_size must be positive".into());
        }
        v.into_iter().map(|e| format!("lm.{e}")).collect()
    }
}

const PREFIX: &str = "lm";

/// Decoder-only transformer with the output projection tied to the token
/// embedding.
#[derive(Debug, Clone)]
pub struct LmModel {
    pub config: LmConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    net: Transformer,
}

impl LmModel {
    pub fn new(config: LmConfig, vocab: Vocab) -> Result<Self> {
        let errs = config.violations();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let mut params = ParamStore::new();
        let mut rng = RngStream::new(config.seed).split_named("lm-init");
        let net = Transformer::init(&mut params, PREFIX, &config.transformer(vocab.len()), &mut rng)?;
        Ok(LmModel {
            config,
            vocab,
            params,
            net,
        })
    }

    /// Rebuilds a model around stored parameters, checking every shape.
    pub fn from_parts(config: LmConfig, vocab: Vocab, params: ParamStore) -> Result<Self> {
        let net = Transformer::find(&params, PREFIX, &config.transformer(vocab.len()))?;
        if params.len() != net_param_count(&config) {
            return Err(Error::Contract(format!(
                "expected {} lm parameters, found {}",
                net_param_count(&config),
                params.len()
            )));
        }
        Ok(LmModel {
            config,
            vocab,
            params,
            net,
        })
    }

    /// Final hidden states `[len × d]`.
    pub fn hidden(
        &self,
        tape: &mut Tape,
        b: &Binding,
        ids: &[u32],
        dropout: Option<&mut RngStream>,
    ) -> Result<Var> {
        self.net.forward(tape, b, ids, dropout)
    }

    /// Next-token logits `[len × |V|]`.
    pub fn logits(
        &self,
        tape: &mut Tape,
        b: &Binding,
        ids: &[u32],
        dropout: Option<&mut RngStream>,
    ) -> Result<Var> {
        let h = self.hidden(tape, b, ids, dropout)?;
        let et = tape.transpose(b.var(self.net.token_embedding()))?;
        tape.matmul(h, et)
    }

    /// Token-weighted mean cross-entropy over the target positions of every
    /// sequence that fits; overlong sequences are skipped and counted.
    pub fn loss(
        &self,
        tape: &mut Tape,
        b: &Binding,
        batch: &[TrainSequence],
        mut dropout: Option<&mut RngStream>,
    ) -> Result<(Var, LossStats)> {
        let mut stats = LossStats::default();
        let fitting: Vec<&TrainSequence> = batch
            .iter()
            .filter(|s| {
                let ok = s.len() <= self.config.max_seq_len && s.n_targets() > 0;
                if !ok {
                    stats.skipped += 1;
                }
                ok
            })
            .collect();
        if stats.skipped > 0 {
            log::warn!("skipped {} sequence(s) longer than max_seq_len", stats.skipped);
        }
        stats.tokens = fitting.iter().map(|s| s.n_targets()).sum();
        if stats.tokens == 0 {
            return Err(Error::DegenerateBatch);
        }
        let mut parts = Vec::with_capacity(fitting.len());
        for s in fitting {
            let logits = self.logits(tape, b, &s.inputs, dropout.as_deref_mut())?;
            let ce = tape.cross_entropy(logits, &s.labels, Some(&s.weights))?;
            parts.push(tape.scale(ce, s.n_targets() as f64 / stats.tokens as f64));
        }
        Ok((tape.add_n(&parts)?, stats))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LossStats {
    pub tokens: usize,
    pub skipped: usize,
}

fn net_param_count(config: &LmConfig) -> usize {
    4 + 12 * config.n_layers
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::data::BranchKind;

    fn tiny() -> LmModel {
        let vocab = Vocab::build(["a b c d e f"], 1).unwrap();
        let cfg = LmConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            max_seq_len: 8,
            ..LmConfig::default()
        };
        LmModel::new(cfg, vocab).unwrap()
    }

    fn seq(model: &LmModel) -> TrainSequence {
        let v = &model.vocab;
        TrainSequence::from_example(&InfillExample {
            condition: v.encode("[S] a b [E]"),
            target: v.encode("c d [E]"),
            branch: BranchKind::Factual,
            i: 3,
        })
    }

    fn loss_of(model: &LmModel, s: &[TrainSequence]) -> (f64, LossStats) {
        let mut tape = Tape::new();
        let b = model.params.bind(&mut tape);
        let (l, stats) = model.loss(&mut tape, &b, s, None).unwrap();
        (tape.value(l).item().unwrap(), stats)
    }

    #[test]
    fn untrained_loss_is_near_uniform() {
        let m = tiny();
        let (l, stats) = loss_of(&m, &[seq(&m)]);
        assert_eq!(stats.tokens, 3);
        assert!((l - (m.vocab.len() as f64).ln()).abs() < 0.1, "{l}");
    }

    #[test]
    fn overlong_sequences_are_skipped() {
        let m = tiny();
        let mut long = seq(&m);
        long.inputs = vec![7; 20];
        long.labels = vec![7; 20];
        long.weights = vec![true; 20];
        let (l1, stats) = loss_of(&m, &[seq(&m), long]);
        assert_eq!(stats.skipped, 1);
        assert_eq!(l1, loss_of(&m, &[seq(&m)]).0);
    }

    #[test]
    fn from_parts_round_trips() {
        let m = tiny();
        let again = LmModel::from_parts(m.config.clone(), m.vocab.clone(), m.params.clone()).unwrap();
        assert_eq!(loss_of(&m, &[seq(&m)]).0, loss_of(&again, &[seq(&m)]).0);
        let mut wrong = m.config.clone();
        wrong.n_layers = 2;
        assert!(LmModel::from_parts(wrong, m.vocab.clone(), m.params.clone()).is_err());
    }
}
