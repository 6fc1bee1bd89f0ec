use hypevents::autodiff::{RngStream, Tape};
use hypevents::lm::infill::TrainSequence;
use hypevents::lm::train::train_sequences;
use hypevents::lm::{build_infill_examples, generate_next_event, DecodeSpec, LmConfig, LmModel};
use hypevents::text::{Branch, BranchKind, Story, Vocab};
use proptest::prelude::*;
use serde_json::Value;

fn fixture() -> Value {
    serde_json::from_str(include_str!("fixtures/infill_golden.json")).unwrap()
}

fn s(v: &Value) -> String {
    v.as_str().unwrap().to_string()
}

fn three(v: &Value) -> [String; 3] {
    let a = v.as_array().unwrap();
    [s(&a[0]), s(&a[1]), s(&a[2])]
}

fn golden_story() -> Story {
    let f = fixture();
    let st = &f["story"];
    Story {
        premise: s(&st["premise"]),
        initial: s(&st["initial"]),
        ending: three(&st["original_ending"]),
        counterfactual: Some(Branch {
            initial: s(&st["counterfactual"]),
            ending: three(&st["edited_ending"]),
        }),
    }
}

#[test]
fn infill_arrangement_matches_golden_fixture() {
    let story = golden_story();
    let vocab = Vocab::build(story.texts(), 1).unwrap();
    let got = build_infill_examples(&story, &vocab);
    let f = fixture();
    let expected = f["expected"].as_array().unwrap();
    assert_eq!(got.len(), expected.len());
    for (g, e) in got.iter().zip(expected) {
        let kind = match g.branch {
            BranchKind::Factual => "factual",
            BranchKind::Counterfactual => "counterfactual",
        };
        assert_eq!(kind, e["branch"].as_str().unwrap());
        assert_eq!(g.i as u64, e["i"].as_u64().unwrap());
        assert_eq!(vocab.decode(&g.condition), s(&e["condition"]));
        assert_eq!(vocab.decode(&g.target), s(&e["target"]));
    }
}

fn tiny_model(vocab_size_hint: &str, seed: u64) -> LmModel {
    let vocab = Vocab::build([vocab_size_hint], 1).unwrap();
    let cfg = LmConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        max_seq_len: 24,
        seed,
        ..Default::default()
    };
    LmModel::new(cfg, vocab).unwrap()
}

const WORDS: &str = "a b c d e f g h i j k l";

fn loss_value(m: &LmModel, seq: &TrainSequence) -> f64 {
    let mut tape = Tape::new();
    let b = m.params.bind(&mut tape);
    let (l, _) = m.loss(&mut tape, &b, std::slice::from_ref(seq), None).unwrap();
    tape.value(l).item().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn condition_labels_do_not_affect_loss(
        cond in proptest::collection::vec(7u32..19, 2..10),
        target in proptest::collection::vec(7u32..19, 1..6),
        noise in proptest::collection::vec(0usize..19, 10),
        seed in 0u64..50,
    ) {
        let m = tiny_model(WORDS, seed);
        let ex = hypevents::lm::InfillExample { condition: cond, target, branch: BranchKind::Factual, i: 3 };
        let seq = TrainSequence::from_example(&ex);
        let base = loss_value(&m, &seq);

        let mut masked = seq.clone();
        for (t, w) in seq.weights.iter().enumerate() {
            if !w {
                masked.labels[t] = noise[t % noise.len()];
            }
        }
        prop_assert_eq!(base.to_bits(), loss_value(&m, &masked).to_bits());

        let mut changed = seq.clone();
        let last = changed.labels.len() - 1;
        changed.labels[last] = if changed.labels[last] == 7 { 8 } else { 7 };
        prop_assert_ne!(base, loss_value(&m, &changed));
    }

    #[test]
    fn logits_are_causal(
        ids in proptest::collection::vec(7u32..19, 2..16),
        cut in 1usize..15,
        replacement in 7u32..19,
        seed in 0u64..50,
    ) {
        let m = tiny_model(WORDS, seed);
        let cut = cut.min(ids.len() - 1);
        let mut other = ids.clone();
        for t in other.iter_mut().skip(cut) {
            *t = replacement;
        }
        let logits = |ids: &[u32]| {
            let mut tape = Tape::new();
            let b = m.params.bind(&mut tape);
            let l = m.logits(&mut tape, &b, ids, None).unwrap();
            tape.value(l).data().to_vec()
        };
        let v = m.vocab.len();
        let (a, b) = (logits(&ids), logits(&other));
        prop_assert_eq!(&a[..cut * v], &b[..cut * v]);
    }
}

#[test]
fn single_story_is_memorised() {
    let story = golden_story();
    let vocab = Vocab::build(story.texts(), 1).unwrap();
    let cfg = LmConfig {
        lr: 2e-3,
        epochs: 300,
        batch_size: 4,
        seed: 3,
        ..Default::default()
    };
    let mut m = LmModel::new(cfg, vocab).unwrap();
    let seqs: Vec<TrainSequence> = build_infill_examples(&story, &m.vocab)
        .iter()
        .map(TrainSequence::from_example)
        .collect();
    let report = train_sequences(&mut m, &seqs).unwrap();
    assert_eq!(report.steps, 300);
    let last = *report.epoch_losses.last().unwrap();
    assert!(last < 0.1, "final loss {last}");

    let [s1, s2, s3, s4, s5] = story.sentences();
    let spec = DecodeSpec::default();
    let mut rng = RngStream::new(0);
    let g = generate_next_event(&m, s1, s2, s5, &spec, &mut rng).unwrap();
    assert_eq!(g.text, m.vocab.decode(&m.vocab.encode(&format!("{s3} {s4}"))));
    let g = generate_next_event(&m, s1, s2, &format!("{s4} {s5}"), &spec, &mut rng).unwrap();
    assert_eq!(g.text, m.vocab.decode(&m.vocab.encode(s3)));
}
