use serde::{Deserialize, Serialize};

use crate::autodiff::{RngStream, Tape, Tensor};
use crate::error::Result;
use crate::lm::LmModel;
use crate::text::vocab::START;
use crate::text::Vocab;

/// Maps text to one vector per token.
pub trait EmbeddingProvider {
    fn embed(&self, text: &str) -> Result<Vec<Vec<f64>>>;
    fn dim(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Encoder,
    Lm,
    Static,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "encoder" => Ok(ProviderKind::Encoder),
            "lm" => Ok(ProviderKind::Lm),
            "static" => Ok(ProviderKind::Static),
            other => Err(format!("unknown provider {other:?} (encoder|lm|static)")),
        }
    }
}

/// Fixed random table, one Gaussian vector per vocabulary entry.
#[derive(Debug, Clone)]
pub struct StaticProvider {
    vocab: Vocab,
    table: Tensor,
}

impl StaticProvider {
    pub fn new(vocab: Vocab, dim: usize, seed: u64) -> Self {
        let mut rng = RngStream::new(seed).split_named("static-embeddings");
        let table = Tensor::randn(&[vocab.len(), dim], 1.0, &mut rng);
        StaticProvider { vocab, table }
    }
}

impl EmbeddingProvider for StaticProvider {
    fn embed(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .vocab
            .encode(text)
            .into_iter()
            .map(|id| self.table.row(id as usize).to_vec())
            .collect())
    }

    fn dim(&self) -> usize {
        self.table.shape()[1]
    }
}

/// Final hidden states of the language model over `[S] tokens`; the `[S]`
/// row is dropped.
pub struct LmProvider<'a> {
    pub model: &'a LmModel,
}

impl EmbeddingProvider for LmProvider<'_> {
    fn embed(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        let toks = self.model.vocab.encode(text);
        if toks.is_empty() {
            return Ok(Vec::new());
        }
        let mut ids = Vec::with_capacity(toks.len() + 1);
        ids.push(START);
        ids.extend(toks.iter().take(self.model.config.max_seq_len - 1));
        let mut tape = Tape::new();
        let b = self.model.params.bind(&mut tape);
        let h = self.model.hidden(&mut tape, &b, &ids, None)?;
        let hv = tape.value(h);
        Ok((1..ids.len()).map(|r| hv.row(r).to_vec()).collect())
    }

    fn dim(&self) -> usize {
        self.model.config.d_model
    }
}
