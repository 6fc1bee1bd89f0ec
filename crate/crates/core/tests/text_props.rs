use std::io::Write;

use hypevents::text::vocab::normalize;
use hypevents::text::{gen_synthetic, load_anli, load_timetravel, SyntheticSpec, Vocab};
use proptest::prelude::*;

fn text() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        prop_oneof![
            "[a-zA-Z]{1,8}",
            Just(".".to_string()),
            Just(",".to_string()),
            Just("don't".to_string()),
            Just("[M]".to_string()),
            Just("Café".to_string()),
            "\\PC{1,3}",
        ],
        0..20,
    )
    .prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn decode_inverts_encode_on_normalised_text(t in text()) {
        let norm = normalize(&t);
        prop_assume!(!norm.is_empty());
        let vocab = Vocab::build([t.as_str()], 1).unwrap();
        prop_assert_eq!(vocab.decode(&vocab.encode(&t)), norm.clone());
        prop_assert_eq!(normalize(&norm), norm);
    }

    #[test]
    fn vocab_file_round_trips(texts in proptest::collection::vec(text(), 1..5)) {
        prop_assume!(texts.iter().any(|t| !normalize(t).is_empty()));
        let Ok(vocab) = Vocab::build(texts.iter().map(String::as_str), 1) else {
            return Ok(());
        };
        let back = Vocab::from_text(&vocab.to_text()).unwrap();
        prop_assert_eq!(back.tokens(), vocab.tokens());
        for t in &texts {
            prop_assert_eq!(back.encode(t), vocab.encode(t));
        }
    }

    #[test]
    fn loaders_never_panic(lines in proptest::collection::vec(prop_oneof![
        "\\PC{0,40}",
        Just(r#"{"obs1":"a.","obs2":"b.","hyp1":"c.","hyp2":"d.","label":1}"#.to_string()),
        Just(r#"{"obs1":"a.","obs2":"b.","hyp1":"c.","hyp2":"d.","label":"2"}"#.to_string()),
        Just(r#"{"obs1":"a.","obs2":"b.","hyp1":"c."#.to_string()),
        Just(r#"{"premise":"p.","initial":"i.","original_ending":"a. b. c."}"#.to_string()),
        Just(r#"{"premise":"p.","initial":"i.","original_ending":["a.","b."]}"#.to_string()),
        Just("[]".to_string()),
        Just("null".to_string()),
    ], 0..6)) {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(lines.join("\n").as_bytes()).unwrap();
        let _ = load_anli(f.path());
        let _ = load_timetravel(f.path());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn synthetic_labels_are_balanced(n in 200usize..600, seed in any::<u64>(), rho in 0.0f64..=1.0) {
        let corpus = gen_synthetic(&SyntheticSpec {
            n_stories: 0,
            n_instances: n,
            seed,
            rho,
            ..Default::default()
        })
        .unwrap();
        prop_assert_eq!(corpus.instances.len(), n);
        let ones = corpus.instances.iter().filter(|i| i.label == Some(1)).count() as f64;
        prop_assert!((ones / n as f64 - 0.5).abs() <= 0.05);
        for inst in &corpus.instances {
            prop_assert!(inst.validate().is_ok());
        }
    }
}
