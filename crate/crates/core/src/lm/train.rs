use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::infill::{build_infill_examples, TrainSequence};
use super::LmModel;
use crate::autodiff::{AdamConfig, AdamState, RngStream, Tape};
use crate::error::{Error, Result};
use crate::text::Story;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmTrainReport {
    /// Token-weighted mean loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub examples: usize,
    pub skipped: usize,
}

/// Trains on every infilling example of `stories` with Adam and a learning
/// rate decaying linearly to zero over all steps.
pub fn train_lm(model: &mut LmModel, stories: &[Story]) -> Result<LmTrainReport> {
    if stories.is_empty() {
        return Err(Error::Empty("lm training corpus"));
    }
    let seqs: Vec<TrainSequence> = stories
        .iter()
        .flat_map(|s| build_infill_examples(s, &model.vocab))
        .map(|e| TrainSequence::from_example(&e))
        .collect();
    train_sequences(model, &seqs)
}

pub fn train_sequences(model: &mut LmModel, seqs: &[TrainSequence]) -> Result<LmTrainReport> {
    let cfg = model.config.clone();
    let fitting: Vec<&TrainSequence> = seqs.iter().filter(|s| s.len() <= cfg.max_seq_len).collect();
    let skipped = seqs.len() - fitting.len();
    if skipped > 0 {
        log::warn!("{skipped} training sequence(s) exceed max_seq_len and are skipped");
    }
    let mut report = LmTrainReport {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        steps: 0,
        examples: fitting.len(),
        skipped,
    };
    if cfg.epochs == 0 {
        return Ok(report);
    }
    if fitting.is_empty() {
        return Err(Error::Empty("lm training sequences that fit max_seq_len"));
    }

    let root = RngStream::new(cfg.seed);
    let mut shuffle_rng = root.split_named("lm-shuffle");
    let mut dropout_rng = root.split_named("lm-dropout");
    let batches_per_epoch = fitting.len().div_ceil(cfg.batch_size);
    let total_steps = (batches_per_epoch * cfg.epochs) as f64;
    let mut adam = AdamState::new(&model.params, AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..fitting.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut sum, mut tokens) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainSequence> = chunk.iter().map(|&i| fitting[i].clone()).collect();
            let mut tape = Tape::new();
            let b = model.params.bind(&mut tape);
            let (loss, stats) = model.loss(&mut tape, &b, &batch, Some(&mut dropout_rng))?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: report.steps,
                    loss: value,
                });
            }
            let grads = tape.backward(loss)?;
            model.params.absorb_grads(&grads, &b)?;
            let lr = cfg.lr * (1.0 - report.steps as f64 / total_steps);
            adam.step_with_lr(&mut model.params, lr)?;
            report.steps += 1;
            sum += value * stats.tokens as f64;
            tokens += stats.tokens;
        }
        let mean = sum / tokens as f64;
        log::info!("lm epoch {epoch}: loss {mean:.4}");
        report.epoch_losses.push(mean);
    }
    model.params.zero_grads();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::LmConfig;
    use crate::text::{gen_synthetic, SyntheticSpec, Vocab};

    fn setup(epochs: usize) -> (LmModel, Vec<Story>) {
        let corpus = gen_synthetic(&SyntheticSpec {
            n_stories: 6,
            n_instances: 0,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let vocab = Vocab::build(corpus.stories.iter().flat_map(|s| s.texts()), 1).unwrap();
        let cfg = LmConfig {
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            max_seq_len: 64,
            epochs,
            batch_size: 4,
            lr: 3e-3,
            ..LmConfig::default()
        };
        (LmModel::new(cfg, vocab).unwrap(), corpus.stories)
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let (mut m, stories) = setup(0);
        let before = m.params.clone();
        let r = train_lm(&mut m, &stories).unwrap();
        assert!(r.epoch_losses.is_empty());
        assert_eq!(m.params, before);
    }

    #[test]
    fn same_seed_same_curve() {
        let (mut a, stories) = setup(2);
        let (mut b, _) = setup(2);
        let ra = train_lm(&mut a, &stories).unwrap();
        let rb = train_lm(&mut b, &stories).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.params, b.params);
        assert!(ra.epoch_losses[1] < ra.epoch_losses[0]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let (mut m, _) = setup(1);
        assert!(train_lm(&mut m, &[]).is_err());
    }
}
