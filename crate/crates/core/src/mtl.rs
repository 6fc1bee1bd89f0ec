//! Multi-task hypothesis classifier: one bidirectional encoder, a main head
//! over `[CLS] O1 [SEP] H [SEP] O2 [SEP]`, an auxiliary head over
//! `[CLS] H [SEP] gen(H) [SEP] O2 [SEP]`, and a trainable weight `w` on the
//! auxiliary loss.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Binding, ParamId, ParamStore, RngStream, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Transformer, TransformerConfig};
use crate::simscore::{select_unsupervised, EmbeddingProvider};
use crate::text::vocab::{CLS, SEP};
use crate::text::{AbductiveInstance, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxLabelMode {
    /// Auxiliary target equals the main gold label.
    Gold,
    /// Auxiliary target is the generation with the higher similarity F1.
    Bertscore,
}

impl std::str::FromStr for AuxLabelMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gold" => Ok(AuxLabelMode::Gold),
            "bertscore" => Ok(AuxLabelMode::Bertscore),
            other => Err(format!("unknown aux label mode {other:?} (gold|bertscore)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MtlConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub aux_label: AuxLabelMode,
}

impl Default for MtlConfig {
    fn default() -> Self {
        MtlConfig {
            d_model: 32,
            n_layers: 1,
            n_heads: 4,
            max_seq_len: 64,
            dropout: 0.1,
            lr: 2e-3,
            batch_size: 16,
            epochs: 40,
            seed: 0,
            aux_label: AuxLabelMode::Gold,
        }
    }
}

impl MtlConfig {
    pub fn transformer(&self, vocab_size: usize) -> TransformerConfig {
        TransformerConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            max_seq_len: self.max_seq_len,
            dropout: self.dropout,
            causal: false,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = match self.transformer(1).validate() {
            Err(Error::Config(errs)) => errs,
            _ => Vec::new(),
        };
        if self.max_seq_len < 4 {
            v.push(format!("max_seq_len {} cannot hold four delimiters", self.max_seq_len));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            v.push(format!("lr {} must be positive", self.lr));
        }
        if self.batch_size == 0 {
            v.push("batch_size must be positive".into());
        }
        v.into_iter().map(|e| format!("mtl.{e}")).collect()
    }
}

/// The four encoder inputs of one instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MtlInput {
    pub main: [Vec<u32>; 2],
    pub aux: [Vec<u32>; 2],
}

/// `[CLS] a [SEP] b [SEP] c [SEP]`, trimming the longest segment from its
/// end until the sequence fits.
pub fn pack_segments(mut segs: [Vec<u32>; 3], max_len: usize) -> Result<Vec<u32>> {
    if max_len < 4 {
        return Err(Error::Contract(format!("max_seq_len {max_len} cannot hold four delimiters")));
    }
    while 4 + segs.iter().map(Vec::len).sum::<usize>() > max_len {
        // longest segment, later segments first on ties
        let k = (0..3).max_by_key(|&k| segs[k].len()).expect("three segments");
        segs[k].pop();
    }
    let mut out = Vec::with_capacity(max_len);
    out.push(CLS);
    for s in segs {
        out.extend(s);
        out.push(SEP);
    }
    Ok(out)
}

pub fn build_mtl_input(inst: &AbductiveInstance, vocab: &Vocab, max_len: usize) -> Result<MtlInput> {
    inst.validate().map_err(Error::InvalidInstance)?;
    let generated = inst
        .generated
        .as_ref()
        .ok_or_else(|| Error::MissingGenerations(inst.key(0)))?;
    let o1 = vocab.encode(&inst.obs1);
    let o2 = vocab.encode(&inst.obs2);
    let h = [vocab.encode(&inst.hyp1), vocab.encode(&inst.hyp2)];
    let g = [vocab.encode(&generated[0]), vocab.encode(&generated[1])];
    let main = [
        pack_segments([o1.clone(), h[0].clone(), o2.clone()], max_len)?,
        pack_segments([o1, h[1].clone(), o2.clone()], max_len)?,
    ];
    let aux = [
        pack_segments([h[0].clone(), g[0].clone(), o2.clone()], max_len)?,
        pack_segments([h[1].clone(), g[1].clone(), o2], max_len)?,
    ];
    Ok(MtlInput { main, aux })
}

/// Loss terms of a batch; `total = main + w·similarity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub main: f64,
    pub similarity: f64,
    pub w: f64,
    pub total: f64,
}

/// Tape handles for the loss terms of one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub main: Var,
    pub similarity: Var,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown(&self, tape: &Tape, w: Var) -> Result<LossBreakdown> {
        Ok(LossBreakdown {
            main: tape.value(self.main).item()?,
            similarity: tape.value(self.similarity).item()?,
            w: tape.value(w).item()?,
            total: tape.value(self.total).item()?,
        })
    }
}

/// Forward outputs: logit pairs `[1×2]` and the four `[CLS]` vectors
/// (main₁, main₂, aux₁, aux₂).
#[derive(Debug, Clone, Copy)]
pub struct MtlOutput {
    pub main_logits: Var,
    pub aux_logits: Var,
    pub cls: [Var; 4],
}

const PREFIX: &str = "mtl";

#[derive(Debug, Clone)]
pub struct MtlModel {
    pub config: MtlConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    encoder: Transformer,
    head_main: (ParamId, ParamId),
    head_aux: (ParamId, ParamId),
    w: ParamId,
}

impl MtlModel {
    pub fn new(config: MtlConfig, vocab: Vocab) -> Result<Self> {
        let errs = config.violations();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let mut params = ParamStore::new();
        let mut rng = RngStream::new(config.seed).split_named("mtl-init");
        let tcfg = config.transformer(vocab.len());
        let encoder = Transformer::init(&mut params, &format!("{PREFIX}.enc"), &tcfg, &mut rng)?;
        let d = config.d_model;
        let std = 1.0 / (d as f64).sqrt();
        let head_main = (
            params.add(format!("{PREFIX}.head_main.w"), Tensor::randn(&[d, 1], std, &mut rng))?,
            params.add(format!("{PREFIX}.head_main.b"), Tensor::zeros(&[1]))?,
        );
        let head_aux = (
            params.add(format!("{PREFIX}.head_aux.w"), Tensor::randn(&[d, 1], std, &mut rng))?,
            params.add(format!("{PREFIX}.head_aux.b"), Tensor::zeros(&[1]))?,
        );
        let w = params.add(format!("{PREFIX}.w"), Tensor::scalar(1.0))?;
        Ok(MtlModel {
            config,
            vocab,
            params,
            encoder,
            head_main,
            head_aux,
            w,
        })
    }

    pub fn from_parts(config: MtlConfig, vocab: Vocab, params: ParamStore) -> Result<Self> {
        let tcfg = config.transformer(vocab.len());
        let encoder = Transformer::find(&params, &format!("{PREFIX}.enc"), &tcfg)?;
        let d = config.d_model;
        let find = |n: &str, s: &[usize]| params.find(&format!("{PREFIX}.{n}"), s);
        let head_main = (find("head_main.w", &[d, 1])?, find("head_main.b", &[1])?);
        let head_aux = (find("head_aux.w", &[d, 1])?, find("head_aux.b", &[1])?);
        let w = find("w", &[])?;
        let expected = 4 + 12 * config.n_layers + 5;
        if params.len() != expected {
            return Err(Error::Contract(format!(
                "expected {expected} mtl parameters, found {}",
                params.len()
            )));
        }
        Ok(MtlModel {
            config,
            vocab,
            params,
            encoder,
            head_main,
            head_aux,
            w,
        })
    }

    pub fn w(&self) -> f64 {
        self.params.get(self.w).data()[0]
    }

    pub fn w_id(&self) -> ParamId {
        self.w
    }

    pub fn input(&self, inst: &AbductiveInstance) -> Result<MtlInput> {
        build_mtl_input(inst, &self.vocab, self.config.max_seq_len)
    }

    /// Last-layer encoder states for every position of `ids`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        b: &Binding,
        ids: &[u32],
        dropout: Option<&mut RngStream>,
    ) -> Result<Var> {
        self.encoder.forward(tape, b, ids, dropout)
    }

    fn cls(&self, tape: &mut Tape, b: &Binding, ids: &[u32], dropout: Option<&mut RngStream>) -> Result<Var> {
        let h = self.encode(tape, b, ids, dropout)?;
        tape.gather_rows(h, &[0])
    }

    fn head(&self, tape: &mut Tape, b: &Binding, head: (ParamId, ParamId), x: Var) -> Result<Var> {
        let y = tape.matmul(x, b.var(head.0))?;
        tape.add_row_bias(y, b.var(head.1))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        b: &Binding,
        input: &MtlInput,
        mut dropout: Option<&mut RngStream>,
    ) -> Result<MtlOutput> {
        let mut cls = Vec::with_capacity(4);
        for ids in input.main.iter().chain(&input.aux) {
            cls.push(self.cls(tape, b, ids, dropout.as_deref_mut())?);
        }
        let m: Vec<Var> = cls[..2]
            .iter()
            .map(|&c| self.head(tape, b, self.head_main, c))
            .collect::<Result<_>>()?;
        let a: Vec<Var> = cls[2..]
            .iter()
            .map(|&c| self.head(tape, b, self.head_aux, c))
            .collect::<Result<_>>()?;
        Ok(MtlOutput {
            main_logits: tape.concat_cols(&m)?,
            aux_logits: tape.concat_cols(&a)?,
            cls: [cls[0], cls[1], cls[2], cls[3]],
        })
    }

    /// Batch loss: mean main cross-entropy plus `w` times the mean auxiliary
    /// cross-entropy. Labels are 1 or 2.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        b: &Binding,
        inputs: &[&MtlInput],
        golds: &[u8],
        aux_labels: &[u8],
        mut dropout: Option<&mut RngStream>,
    ) -> Result<(LossVars, Vec<MtlOutput>)> {
        if inputs.is_empty() {
            return Err(Error::DegenerateBatch);
        }
        let mut mains = Vec::with_capacity(inputs.len());
        let mut sims = Vec::with_capacity(inputs.len());
        let mut outs = Vec::with_capacity(inputs.len());
        for ((input, &g), &a) in inputs.iter().zip(golds).zip(aux_labels) {
            check_label(g)?;
            check_label(a)?;
            let out = self.forward(tape, b, input, dropout.as_deref_mut())?;
            mains.push(tape.cross_entropy(out.main_logits, &[g as usize - 1], None)?);
            sims.push(tape.cross_entropy(out.aux_logits, &[a as usize - 1], None)?);
            outs.push(out);
        }
        let inv = 1.0 / inputs.len() as f64;
        let main = tape.add_n(&mains)?;
        let main = tape.scale(main, inv);
        let sim = tape.add_n(&sims)?;
        let sim = tape.scale(sim, inv);
        let total = joint_total(tape, main, sim, b.var(self.w))?;
        Ok((
            LossVars {
                main,
                similarity: sim,
                total,
            },
            outs,
        ))
    }

    /// Logit pairs without dropout.
    pub fn logits(&self, input: &MtlInput) -> Result<([f64; 2], [f64; 2])> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &b, input, None)?;
        let m = tape.value(out.main_logits).data();
        let a = tape.value(out.aux_logits).data();
        Ok(([m[0], m[1]], [a[0], a[1]]))
    }
}

fn check_label(l: u8) -> Result<()> {
    if l == 1 || l == 2 {
        Ok(())
    } else {
        Err(Error::InvalidInstance(format!("label must be 1 or 2, got {l}")))
    }
}

/// `main + w·sim` on the tape.
pub fn joint_total(tape: &mut Tape, main: Var, sim: Var, w: Var) -> Result<Var> {
    let weighted = tape.mul(w, sim)?;
    tape.add(main, weighted)
}

/// Loss terms for one instance from its logit pairs.
pub fn joint_loss(
    main_logits: [f64; 2],
    aux_logits: [f64; 2],
    gold: u8,
    aux_label: u8,
    w: f64,
) -> Result<LossBreakdown> {
    check_label(gold)?;
    check_label(aux_label)?;
    let mut tape = Tape::new();
    let m = tape.constant(Tensor::new(vec![1, 2], main_logits.to_vec())?);
    let a = tape.constant(Tensor::new(vec![1, 2], aux_logits.to_vec())?);
    let wv = tape.constant(Tensor::scalar(w));
    let main = tape.cross_entropy(m, &[gold as usize - 1], None)?;
    let similarity = tape.cross_entropy(a, &[aux_label as usize - 1], None)?;
    let total = joint_total(&mut tape, main, similarity, wv)?;
    LossVars {
        main,
        similarity,
        total,
    }
    .breakdown(&tape, wv)
}

/// 1 or 2 by argmax; ties go to 1 and are flagged.
pub fn argmax_pair(logits: [f64; 2]) -> (u8, bool) {
    if logits[0] == logits[1] {
        (1, true)
    } else if logits[0] > logits[1] {
        (1, false)
    } else {
        (2, false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtlPrediction {
    pub prediction: u8,
    pub aux_prediction: u8,
    pub main_logits: [f64; 2],
    pub aux_logits: [f64; 2],
    pub tie: bool,
    pub aux_tie: bool,
}

pub fn predict(model: &MtlModel, inst: &AbductiveInstance) -> Result<MtlPrediction> {
    let (main_logits, aux_logits) = model.logits(&model.input(inst)?)?;
    let (prediction, tie) = argmax_pair(main_logits);
    let (aux_prediction, aux_tie) = argmax_pair(aux_logits);
    Ok(MtlPrediction {
        prediction,
        aux_prediction,
        main_logits,
        aux_logits,
        tie,
        aux_tie,
    })
}

/// Auxiliary targets for `instances` under `mode`. The similarity mode
/// needs a provider; its ties resolve to 1.
pub fn aux_labels(
    instances: &[AbductiveInstance],
    mode: AuxLabelMode,
    provider: Option<&dyn EmbeddingProvider>,
) -> Result<Vec<u8>> {
    instances
        .iter()
        .enumerate()
        .map(|(i, inst)| match mode {
            AuxLabelMode::Gold => inst
                .label
                .ok_or_else(|| Error::InvalidInstance(format!("instance {} has no label", inst.key(i)))),
            AuxLabelMode::Bertscore => {
                let p = provider.ok_or_else(|| {
                    Error::Contract("bertscore aux labels need an embedding provider".into())
                })?;
                Ok(select_unsupervised(inst, p)?.prediction.unwrap_or(1))
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtlEpochRecord {
    pub epoch: usize,
    pub l_main: f64,
    pub l_sim: f64,
    pub w: f64,
    pub train_accuracy: f64,
    pub dev_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtlTrainReport {
    pub epochs: Vec<MtlEpochRecord>,
    pub steps: usize,
}

impl MtlTrainReport {
    pub fn w_trajectory(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.w).collect()
    }
}

pub fn accuracy_on(model: &MtlModel, instances: &[AbductiveInstance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Empty("accuracy set"));
    }
    let mut correct = 0;
    for inst in instances {
        if Some(predict(model, inst)?.prediction) == inst.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / instances.len() as f64)
}

/// Adam with dropout and linear learning-rate decay; one record per epoch with mean loss terms, `w`,
/// training accuracy and (when `dev` is non-empty) dev accuracy.
pub fn train_mtl(
    model: &mut MtlModel,
    train: &[AbductiveInstance],
    aux: &[u8],
    dev: &[AbductiveInstance],
) -> Result<MtlTrainReport> {
    let cfg = model.config.clone();
    let mut report = MtlTrainReport {
        epochs: Vec::with_capacity(cfg.epochs),
        steps: 0,
    };
    if cfg.epochs == 0 {
        return Ok(report);
    }
    if train.is_empty() {
        return Err(Error::Empty("mtl training set"));
    }
    if aux.len() != train.len() {
        return Err(Error::Contract(format!(
            "{} aux labels for {} instances",
            aux.len(),
            train.len()
        )));
    }
    let inputs: Vec<MtlInput> = train.iter().map(|i| model.input(i)).collect::<Result<_>>()?;
    let golds: Vec<u8> = train
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            inst.label
                .ok_or_else(|| Error::InvalidInstance(format!("instance {} has no label", inst.key(i))))
        })
        .collect::<Result<_>>()?;

    let root = RngStream::new(cfg.seed);
    let mut shuffle_rng = root.split_named("mtl-shuffle");
    let mut dropout_rng = root.split_named("mtl-dropout");
    let mut adam = AdamState::new(&model.params, AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let total_steps = (train.len().div_ceil(cfg.batch_size) * cfg.epochs) as f64;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut sum_main, mut sum_sim, mut correct) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&MtlInput> = chunk.iter().map(|&i| &inputs[i]).collect();
            let g: Vec<u8> = chunk.iter().map(|&i| golds[i]).collect();
            let a: Vec<u8> = chunk.iter().map(|&i| aux[i]).collect();
            let mut tape = Tape::new();
            let b = model.params.bind(&mut tape);
            let (loss, outs) = model.batch_loss(&mut tape, &b, &batch, &g, &a, Some(&mut dropout_rng))?;
            let lb = loss.breakdown(&tape, b.var(model.w))?;
            if !lb.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: report.steps,
                    loss: lb.total,
                });
            }
            for (out, &gold) in outs.iter().zip(&g) {
                let l = tape.value(out.main_logits).data();
                if argmax_pair([l[0], l[1]]).0 == gold {
                    correct += 1;
                }
            }
            sum_main += lb.main * chunk.len() as f64;
            sum_sim += lb.similarity * chunk.len() as f64;
            let grads = tape.backward(loss.total)?;
            model.params.absorb_grads(&grads, &b)?;
            let lr = cfg.lr * (1.0 - report.steps as f64 / total_steps);
            adam.step_with_lr(&mut model.params, lr)?;
            report.steps += 1;
        }
        let n = train.len() as f64;
        let dev_accuracy = if dev.is_empty() {
            None
        } else {
            Some(accuracy_on(model, dev)?)
        };
        let rec = MtlEpochRecord {
            epoch,
            l_main: sum_main / n,
            l_sim: sum_sim / n,
            w: model.w(),
            train_accuracy: correct as f64 / n,
            dev_accuracy,
        };
        log::info!(
            "mtl epoch {epoch}: L_main {:.4} L_sim {:.4} w {:.4} train {:.3} dev {:?}",
            rec.l_main,
            rec.l_sim,
            rec.w,
            rec.train_accuracy,
            rec.dev_accuracy
        );
        report.epochs.push(rec);
    }
    model.params.zero_grads();
    Ok(report)
}

/// Encoder last-layer states over `[CLS] tokens [SEP]`, delimiters dropped.
pub struct EncoderProvider<'a> {
    pub model: &'a MtlModel,
}

impl EmbeddingProvider for EncoderProvider<'_> {
    fn embed(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        let toks = self.model.vocab.encode(text);
        if toks.is_empty() {
            return Ok(Vec::new());
        }
        let keep = toks.len().min(self.model.config.max_seq_len - 2);
        let mut ids = Vec::with_capacity(keep + 2);
        ids.push(CLS);
        ids.extend(&toks[..keep]);
        ids.push(SEP);
        let mut tape = Tape::new();
        let b = self.model.params.bind(&mut tape);
        let h = self.model.encode(&mut tape, &b, &ids, None)?;
        let hv = tape.value(h);
        Ok((1..=keep).map(|r| hv.row(r).to_vec()).collect())
    }

    fn dim(&self) -> usize {
        self.model.config.d_model
    }
}
