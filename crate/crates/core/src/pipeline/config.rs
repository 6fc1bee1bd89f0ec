//! Flat run configuration shared by every pipeline stage.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{DecodeSpec, DecodeStrategy, LmConfig};
use crate::mtl::{AuxLabelMode, MtlConfig};
use crate::simscore::ProviderKind;
use crate::text::synthetic::{required_vocab_size, TEMPLATE_SET};
use crate::text::SyntheticSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusSource {
    Synthetic,
    Files,
}

/// Every key is optional in the file; missing keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusSource,
    pub rho: f64,
    pub n_stories: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub vocab_budget: usize,
    pub template_set: String,
    pub stories_path: Option<PathBuf>,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,

    pub lm_d_model: usize,
    pub lm_n_layers: usize,
    pub lm_n_heads: usize,
    pub lm_max_seq_len: usize,
    pub lm_dropout: f64,
    pub lm_lr: f64,
    pub lm_batch_size: usize,
    pub lm_epochs: usize,

    pub mtl_d_model: usize,
    pub mtl_n_layers: usize,
    pub mtl_n_heads: usize,
    pub mtl_max_seq_len: usize,
    pub mtl_dropout: f64,
    pub mtl_lr: f64,
    pub mtl_batch_size: usize,
    pub mtl_epochs: usize,
    pub aux_label: AuxLabelMode,

    pub decode: DecodeStrategy,
    pub k: usize,
    pub max_new_tokens: usize,

    pub provider: ProviderKind,
    pub static_dim: usize,

    pub annotations_path: Option<PathBuf>,
    pub ordinal_aspects: Vec<String>,
    pub ordinal_order: Vec<String>,

    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
}

pub const DEFAULT_OUT: &str = "runs";

impl Default for RunConfig {
    fn default() -> Self {
        let lm = LmConfig::default();
        let mtl = MtlConfig::default();
        let decode = DecodeSpec::default();
        RunConfig {
            corpus: CorpusSource::Synthetic,
            rho: 1.0,
            n_stories: 200,
            n_train: 200,
            n_dev: 50,
            n_test: 100,
            vocab_budget: SyntheticSpec::default().vocab_budget,
            template_set: TEMPLATE_SET.to_string(),
            stories_path: None,
            train_path: None,
            dev_path: None,
            test_path: None,
            lm_d_model: lm.d_model,
            lm_n_layers: lm.n_layers,
            lm_n_heads: lm.n_heads,
            lm_max_seq_len: lm.max_seq_len,
            lm_dropout: lm.dropout,
            lm_lr: lm.lr,
            lm_batch_size: lm.batch_size,
            lm_epochs: lm.epochs,
            mtl_d_model: mtl.d_model,
            mtl_n_layers: mtl.n_layers,
            mtl_n_heads: mtl.n_heads,
            mtl_max_seq_len: mtl.max_seq_len,
            mtl_dropout: mtl.dropout,
            mtl_lr: mtl.lr,
            mtl_batch_size: mtl.batch_size,
            mtl_epochs: mtl.epochs,
            aux_label: mtl.aux_label,
            decode: decode.strategy,
            k: decode.k,
            max_new_tokens: decode.max_new_tokens,
            provider: ProviderKind::Encoder,
            static_dim: 32,
            annotations_path: None,
            ordinal_aspects: Vec::new(),
            ordinal_order: Vec::new(),
            seeds: vec![1],
            out: None,
        }
    }
}

fn rekey(prefix: &str, errs: Vec<String>) -> impl Iterator<Item = String> + '_ {
    errs.into_iter()
        .map(move |e| match e.strip_prefix(&format!("{prefix}.")) {
            Some(rest) => format!("{prefix}_{rest}"),
            None => e,
        })
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(errs) => Error::Config(
                errs.into_iter()
                    .map(|m| format!("{}: {m}", path.display()))
                    .collect(),
            ),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out_dir().join(format!("seed-{seed}"))
    }

    pub fn lm_config(&self, seed: u64) -> LmConfig {
        LmConfig {
            d_model: self.lm_d_model,
            n_layers: self.lm_n_layers,
            n_heads: self.lm_n_heads,
            max_seq_len: self.lm_max_seq_len,
            dropout: self.lm_dropout,
            lr: self.lm_lr,
            batch_size: self.lm_batch_size,
            epochs: self.lm_epochs,
            seed,
        }
    }

    pub fn mtl_config(&self, seed: u64) -> MtlConfig {
        MtlConfig {
            d_model: self.mtl_d_model,
            n_layers: self.mtl_n_layers,
            n_heads: self.mtl_n_heads,
            max_seq_len: self.mtl_max_seq_len,
            dropout: self.mtl_dropout,
            lr: self.mtl_lr,
            batch_size: self.mtl_batch_size,
            epochs: self.mtl_epochs,
            seed,
            aux_label: self.aux_label,
        }
    }

    pub fn decode_spec(&self, seed: u64) -> DecodeSpec {
        DecodeSpec {
            strategy: self.decode,
            k: self.k,
            max_new_tokens: self.max_new_tokens,
            seed,
        }
    }

    pub fn synthetic_spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_stories: self.n_stories,
            n_instances: self.n_train + self.n_dev + self.n_test,
            vocab_budget: self.vocab_budget,
            template_set: self.template_set.clone(),
            seed,
            rho: self.rho,
        }
    }

    /// Every violated constraint, keyed by configuration key.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        match self.corpus {
            CorpusSource::Synthetic => {
                if !(0.0..=1.0).contains(&self.rho) {
                    v.push(format!("rho {} outside [0, 1]", self.rho));
                }
                if self.n_stories == 0 {
                    v.push("n_stories must be positive".into());
                }
                if self.n_train == 0 {
                    v.push("n_train must be positive".into());
                }
                if self.n_test == 0 {
                    v.push("n_test must be positive".into());
                }
                match required_vocab_size(&self.template_set) {
                    Ok(need) if self.vocab_budget < need => v.push(format!(
                        "vocab_budget {} is below the {need} tokens template_set {} needs",
                        self.vocab_budget, self.template_set
                    )),
                    Ok(_) => {}
                    Err(e) => v.push(format!("template_set: {e}")),
                }
            }
            CorpusSource::Files => {
                for (key, p) in [
                    ("stories_path", &self.stories_path),
                    ("train_path", &self.train_path),
                    ("test_path", &self.test_path),
                ] {
                    if p.is_none() {
                        v.push(format!("{key} is required when corpus = \"files\""));
                    }
                }
            }
        }
        v.extend(rekey("lm", self.lm_config(0).violations()));
        v.extend(rekey("mtl", self.mtl_config(0).violations()));
        if self.k == 0 {
            v.push("k must be positive".into());
        }
        if self.max_new_tokens == 0 {
            v.push("max_new_tokens must be positive".into());
        }
        if self.static_dim == 0 {
            v.push("static_dim must be positive".into());
        }
        if self.aux_label == AuxLabelMode::Bertscore && self.provider == ProviderKind::Encoder {
            v.push(
                "aux_label = \"bertscore\" needs provider \"lm\" or \"static\": the encoder is the model being trained"
                    .into(),
            );
        }
        if self.seeds.is_empty() {
            v.push("seeds must not be empty".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            v.push("seeds must be distinct".into());
        }
        let ordinal: BTreeSet<_> = self.ordinal_order.iter().collect();
        if ordinal.len() != self.ordinal_order.len() {
            v.push("ordinal_order must not repeat a category".into());
        }
        if !self.ordinal_aspects.is_empty() && self.ordinal_order.len() < 2 {
            v.push("ordinal_aspects needs an ordinal_order with at least 2 categories".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}
