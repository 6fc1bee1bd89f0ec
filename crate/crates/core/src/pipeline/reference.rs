//! Published full-scale numbers, printed beside toy results for context.
//! They come from pretrained models on the real corpora and are not
//! reproduced here.

pub const REFERENCE_LABEL: &str = "published reference (not reproduced)";

/// Accuracy in percent; `spread` is the reported ± over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceResult {
    pub model: &'static str,
    pub dev: Option<f64>,
    pub dev_spread: Option<f64>,
    pub test: f64,
    pub test_spread: Option<f64>,
}

const fn row(model: &'static str, dev: Option<f64>, dev_spread: Option<f64>, test: f64, test_spread: Option<f64>) -> ReferenceResult {
    ReferenceResult {
        model,
        dev,
        dev_spread,
        test,
        test_spread,
    }
}

pub const REFERENCE_RESULTS: &[ReferenceResult] = &[
    row("majority (from dev set)", None, None, 50.8, None),
    row("infilling LM + BERTScore (unsupervised)", Some(62.27), None, 60.08, None),
    row("Infersent", Some(50.9), None, 50.8, None),
    row("ESIM + ELMo", Some(58.2), None, 58.8, None),
    row("BERT-large", Some(69.1), None, 68.9, Some(0.5)),
    row("GPT-2 + MTL", Some(68.9), Some(0.3), 68.8, Some(0.3)),
    row("COMET + MTL", Some(69.4), Some(0.4), 69.1, Some(0.5)),
    row("infilling LM + MTL", Some(72.9), Some(0.5), 72.2, Some(0.6)),
    row("human", None, None, 91.4, None),
];

/// Range the learned auxiliary weight settled in after full-scale training.
pub const REFERENCE_W_RANGE: (f64, f64) = (0.75, 0.85);

/// Agreement on the human evaluation of generated next events.
pub const REFERENCE_AGREEMENT: &[(&str, &str, f64)] = &[
    ("grammaticality", "krippendorff_alpha_ordinal", 0.587),
    ("relevance", "krippendorff_alpha_ordinal", 0.462),
    ("redundancy", "cohen_kappa", 0.61),
    ("contradiction", "cohen_kappa", 0.74),
];

/// Share of generated events judged irrelevant, by reasoning type.
pub const REFERENCE_RELEVANCE_ERROR_RATES: &[(&str, f64)] = &[
    ("motivation", 0.21),
    ("spatial-temporal", 0.14),
    ("situational fact", 0.28),
];

fn pct(v: Option<f64>, spread: Option<f64>) -> String {
    match (v, spread) {
        (Some(v), Some(s)) => format!("{v:.2} ± {s:.1}"),
        (Some(v), None) => format!("{v:.2}"),
        (None, _) => "-".into(),
    }
}

/// Plain-text table of [`REFERENCE_RESULTS`].
pub fn reference_table() -> String {
    let mut out = format!("{REFERENCE_LABEL}, accuracy %\n");
    out.push_str(&format!("{:<42} {:>14} {:>14}\n", "model", "dev", "test"));
    for r in REFERENCE_RESULTS {
        out.push_str(&format!(
            "{:<42} {:>14} {:>14}\n",
            r.model,
            pct(r.dev, r.dev_spread),
            pct(Some(r.test), r.test_spread)
        ));
    }
    out.push_str(&format!(
        "learned w settled in [{}, {}]\n",
        REFERENCE_W_RANGE.0, REFERENCE_W_RANGE.1
    ));
    out
}
