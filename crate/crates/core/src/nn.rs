//! Pre-LayerNorm transformer stack shared by the language model (causal)
//! and the classifier encoder (bidirectional).

use crate::autodiff::{Binding, ParamId, ParamStore, RngStream, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub causal: bool,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            errs.push(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab_size == 0 {
            errs.push("vocab_size must be positive".into());
        }
        if self.max_seq_len == 0 {
            errs.push("max_seq_len must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errs.push(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
struct Block {
    ln1_g: ParamId,
    ln1_b: ParamId,
    w_qkv: ParamId,
    b_qkv: ParamId,
    w_o: ParamId,
    b_o: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w_1: ParamId,
    b_1: ParamId,
    w_2: ParamId,
    b_2: ParamId,
}

#[derive(Debug, Clone)]
pub struct Transformer {
    cfg: TransformerConfig,
    tok_emb: ParamId,
    pos_emb: ParamId,
    blocks: Vec<Block>,
    lnf_g: ParamId,
    lnf_b: ParamId,
}

const INIT_STD: f64 = 0.02;

impl Transformer {
    fn declare(
        cfg: &TransformerConfig,
        prefix: &str,
        get: &mut dyn FnMut(String, Vec<usize>, Init) -> Result<ParamId>,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let ff = 4 * d;
        let resid_std = INIT_STD / (2.0 * cfg.n_layers.max(1) as f64).sqrt();
        let mut p = |name: &str, shape: Vec<usize>, init| get(format!("{prefix}.{name}"), shape, init);
        let tok_emb = p("tok_emb", vec![cfg.vocab_size, d], Init::Normal(INIT_STD))?;
        let pos_emb = p("pos_emb", vec![cfg.max_seq_len, d], Init::Normal(INIT_STD))?;
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let mut q = |name: &str, shape: Vec<usize>, init| p(&format!("h{l}.{name}"), shape, init);
            blocks.push(Block {
                ln1_g: q("ln1.g", vec![d], Init::Ones)?,
                ln1_b: q("ln1.b", vec![d], Init::Zeros)?,
                w_qkv: q("attn.w_qkv", vec![d, 3 * d], Init::Normal(INIT_STD))?,
                b_qkv: q("attn.b_qkv", vec![3 * d], Init::Zeros)?,
                w_o: q("attn.w_o", vec![d, d], Init::Normal(resid_std))?,
                b_o: q("attn.b_o", vec![d], Init::Zeros)?,
                ln2_g: q("ln2.g", vec![d], Init::Ones)?,
                ln2_b: q("ln2.b", vec![d], Init::Zeros)?,
                w_1: q("mlp.w_1", vec![d, ff], Init::Normal(INIT_STD))?,
                b_1: q("mlp.b_1", vec![ff], Init::Zeros)?,
                w_2: q("mlp.w_2", vec![ff, d], Init::Normal(resid_std))?,
                b_2: q("mlp.b_2", vec![d], Init::Zeros)?,
            });
        }
        let lnf_g = p("ln_f.g", vec![d], Init::Ones)?;
        let lnf_b = p("ln_f.b", vec![d], Init::Zeros)?;
        Ok(Transformer {
            cfg: cfg.clone(),
            tok_emb,
            pos_emb,
            blocks,
            lnf_g,
            lnf_b,
        })
    }

    /// Adds freshly initialised parameters named `{prefix}.*` to `store`.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &TransformerConfig,
        rng: &mut RngStream,
    ) -> Result<Self> {
        Self::declare(cfg, prefix, &mut |name, shape, init| {
            let t = match init {
                Init::Normal(std) => Tensor::randn(&shape, std, rng),
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::ones(&shape),
            };
            store.add(name, t)
        })
    }

    /// Binds to parameters already present in `store` (checkpoint load).
    pub fn find(store: &ParamStore, prefix: &str, cfg: &TransformerConfig) -> Result<Self> {
        Self::declare(cfg, prefix, &mut |name, shape, _| store.find(&name, &shape))
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.cfg
    }

    pub fn token_embedding(&self) -> ParamId {
        self.tok_emb
    }

    /// Hidden states `[len × d_model]` after the final LayerNorm. Dropout is
    /// applied only when `dropout_rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        b: &Binding,
        ids: &[u32],
        mut dropout_rng: Option<&mut RngStream>,
    ) -> Result<Var> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::Empty("transformer input"));
        }
        if n > self.cfg.max_seq_len {
            return Err(Error::Contract(format!(
                "sequence of {n} tokens exceeds max_seq_len {}",
                self.cfg.max_seq_len
            )));
        }
        let d = self.cfg.d_model;
        let heads = self.cfg.n_heads;
        let dh = d / heads;
        let rate = self.cfg.dropout;
        let mut drop = |tape: &mut Tape, x: Var| -> Result<Var> {
            match dropout_rng.as_deref_mut() {
                Some(rng) if rate > 0.0 => tape.dropout(x, rate, rng),
                _ => Ok(x),
            }
        };

        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..n).collect();
        let tok = tape.gather_rows(b.var(self.tok_emb), &idx)?;
        let pos = tape.gather_rows(b.var(self.pos_emb), &positions)?;
        let mut x = tape.add(tok, pos)?;
        x = drop(tape, x)?;

        let mask = if self.cfg.causal {
            let mut m = vec![0.0; n * n];
            for i in 0..n {
                for j in i + 1..n {
                    m[i * n + j] = f64::NEG_INFINITY;
                }
            }
            Some(tape.constant(Tensor::new(vec![n, n], m)?))
        } else {
            None
        };
        let att_scale = 1.0 / (dh as f64).sqrt();

        for blk in &self.blocks {
            let h = tape.layer_norm(x, b.var(blk.ln1_g), b.var(blk.ln1_b))?;
            let qkv = tape.matmul(h, b.var(blk.w_qkv))?;
            let qkv = tape.add_row_bias(qkv, b.var(blk.b_qkv))?;
            let mut outs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let q = tape.slice_cols(qkv, hd * dh, dh)?;
                let k = tape.slice_cols(qkv, d + hd * dh, dh)?;
                let v = tape.slice_cols(qkv, 2 * d + hd * dh, dh)?;
                let kt = tape.transpose(k)?;
                let s = tape.matmul(q, kt)?;
                let mut s = tape.scale(s, att_scale);
                if let Some(m) = mask {
                    s = tape.add(s, m)?;
                }
                let a = tape.softmax(s, 1)?;
                outs.push(tape.matmul(a, v)?);
            }
            let cat = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
            let o = tape.matmul(cat, b.var(blk.w_o))?;
            let o = tape.add_row_bias(o, b.var(blk.b_o))?;
            let o = drop(tape, o)?;
            x = tape.add(x, o)?;

            let h = tape.layer_norm(x, b.var(blk.ln2_g), b.var(blk.ln2_b))?;
            let f = tape.matmul(h, b.var(blk.w_1))?;
            let f = tape.add_row_bias(f, b.var(blk.b_1))?;
            let f = tape.gelu(f);
            let f = tape.matmul(f, b.var(blk.w_2))?;
            let f = tape.add_row_bias(f, b.var(blk.b_2))?;
            let f = drop(tape, f)?;
            x = tape.add(x, f)?;
        }
        tape.layer_norm(x, b.var(self.lnf_g), b.var(self.lnf_b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(causal: bool) -> TransformerConfig {
        TransformerConfig {
            vocab_size: 11,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            max_seq_len: 6,
            dropout: 0.0,
            causal,
        }
    }

    fn hidden(store: &ParamStore, t: &Transformer, ids: &[u32]) -> Vec<f64> {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let h = t.forward(&mut tape, &b, ids, None).unwrap();
        tape.value(h).data().to_vec()
    }

    #[test]
    fn find_rebinds_same_layout() {
        let mut store = ParamStore::new();
        let t = Transformer::init(&mut store, "enc", &cfg(false), &mut RngStream::new(1)).unwrap();
        let again = Transformer::find(&store, "enc", &cfg(false)).unwrap();
        assert_eq!(hidden(&store, &t, &[1, 2, 3]), hidden(&store, &again, &[1, 2, 3]));
        let mut wrong = cfg(false);
        wrong.d_model = 4;
        assert!(Transformer::find(&store, "enc", &wrong).is_err());
    }

    #[test]
    fn causal_prefix_is_unaffected_by_suffix() {
        let mut store = ParamStore::new();
        let t = Transformer::init(&mut store, "lm", &cfg(true), &mut RngStream::new(2)).unwrap();
        let a = hidden(&store, &t, &[3, 4, 5, 6]);
        let b = hidden(&store, &t, &[3, 4, 9, 1]);
        assert_eq!(a[..16], b[..16]);
        assert_ne!(a[16..], b[16..]);
    }

    #[test]
    fn bidirectional_sees_the_future() {
        let mut store = ParamStore::new();
        let t = Transformer::init(&mut store, "enc", &cfg(false), &mut RngStream::new(2)).unwrap();
        let a = hidden(&store, &t, &[3, 4, 5]);
        let b = hidden(&store, &t, &[3, 4, 9]);
        assert_ne!(a[..8], b[..8]);
    }

    #[test]
    fn rejects_overlong_and_empty_inputs() {
        let mut store = ParamStore::new();
        let t = Transformer::init(&mut store, "x", &cfg(true), &mut RngStream::new(0)).unwrap();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        assert!(t.forward(&mut tape, &b, &[1; 7], None).is_err());
        assert!(t.forward(&mut tape, &b, &[], None).is_err());
    }

    #[test]
    fn invalid_head_split_is_rejected() {
        let mut c = cfg(true);
        c.n_heads = 3;
        assert!(c.validate().is_err());
    }
}
