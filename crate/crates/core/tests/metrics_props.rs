use hypevents::metrics::{cohen_kappa, krippendorff_alpha_ordinal, majority_vote, AnnotationTable, Scale};
use proptest::prelude::*;

const ORDER: [&str; 3] = ["low", "mid", "high"];

fn table(rows: &[Vec<Option<usize>>]) -> AnnotationTable {
    let m = rows.first().map_or(2, Vec::len);
    AnnotationTable {
        items: (0..rows.len()).map(|i| format!("item{i}")).collect(),
        annotators: (0..m).map(|a| format!("ann{a}")).collect(),
        values: rows
            .iter()
            .map(|r| r.iter().map(|v| v.map(|x| ORDER[x].to_string())).collect())
            .collect(),
        scale: Scale::Ordinal {
            order: ORDER.iter().map(|s| s.to_string()).collect(),
        },
    }
}

fn alpha(rows: &[Vec<Option<usize>>]) -> f64 {
    krippendorff_alpha_ordinal(&table(rows)).unwrap().value
}

/// Pairwise-sum form of ordinal α: enumerates every ordered pair of
/// pairable values instead of building a coincidence matrix. Returns
/// (α, D_o, D_e).
fn alpha_oracle(rows: &[Vec<Option<usize>>]) -> (f64, f64, f64) {
    let units: Vec<Vec<usize>> = rows
        .iter()
        .map(|r| r.iter().flatten().copied().collect::<Vec<_>>())
        .filter(|u| u.len() >= 2)
        .collect();
    let all: Vec<usize> = units.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let count = |g: usize| all.iter().filter(|&&v| v == g).count() as f64;
    let delta = |c: usize, k: usize| {
        let (lo, hi) = (c.min(k), c.max(k));
        let between: f64 = (lo..=hi).map(count).sum();
        let d = between - (count(lo) + count(hi)) / 2.0;
        d * d
    };
    let mut d_o = 0.0;
    for u in &units {
        let mut s = 0.0;
        for i in 0..u.len() {
            for j in 0..u.len() {
                if i != j {
                    s += delta(u[i], u[j]);
                }
            }
        }
        d_o += s / (u.len() as f64 - 1.0);
    }
    d_o /= n;
    let mut d_e = 0.0;
    for a in 0..all.len() {
        for b in 0..all.len() {
            if a != b {
                d_e += delta(all[a], all[b]);
            }
        }
    }
    d_e /= n * (n - 1.0);
    (1.0 - d_o / d_e, d_o, d_e)
}

fn worked() -> Vec<Vec<Option<usize>>> {
    vec![
        vec![Some(0), Some(0)],
        vec![Some(1), Some(2)],
        vec![Some(2), Some(2)],
        vec![Some(0), Some(1)],
    ]
}

#[test]
fn alpha_worked_table() {
    let (expected, _, _) = alpha_oracle(&worked());
    // exact rational value of the oracle on this table
    assert!((expected - 17.0 / 24.0).abs() < 1e-12);
    assert!((alpha(&worked()) - expected).abs() < 1e-12);
}

#[test]
fn alpha_decreases_along_the_worked_family() {
    // Move each annotation step by step away from the other annotator's value.
    for item in 0..4 {
        for who in 0..2 {
            let other = worked()[item][1 - who].unwrap();
            let own = worked()[item][who].unwrap();
            for dir in [-1i64, 1] {
                let mut prev = alpha(&worked());
                let mut v = own as i64;
                loop {
                    v += dir;
                    if !(0..3).contains(&v) {
                        break;
                    }
                    if (v - other as i64).abs() <= (own as i64 - other as i64).abs() {
                        continue;
                    }
                    let mut t = worked();
                    t[item][who] = Some(v as usize);
                    let a = alpha(&t);
                    assert!(a <= prev + 1e-12, "item {item} ann {who} -> {v}: {a} > {prev}");
                    prev = a;
                }
            }
        }
    }
}

fn rows(n_items: std::ops::Range<usize>, m: usize, missing: bool) -> impl Strategy<Value = Vec<Vec<Option<usize>>>> {
    let cell = if missing {
        prop_oneof![3 => (0usize..3).prop_map(Some), 1 => Just(None)].boxed()
    } else {
        (0usize..3).prop_map(Some).boxed()
    };
    proptest::collection::vec(proptest::collection::vec(cell, m), n_items)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn alpha_matches_pairwise_oracle(t in (2usize..5).prop_flat_map(|m| rows(1..9, m, true))) {
        let (expected, _, d_e) = alpha_oracle(&t);
        prop_assume!(d_e > 0.0 && expected.is_finite());
        let got = alpha(&t);
        prop_assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn perfect_agreement_gives_one(values in proptest::collection::vec(0usize..3, 2..10), m in 2usize..5) {
        prop_assume!(values.iter().any(|&v| v != values[0]));
        let t: Vec<Vec<Option<usize>>> = values.iter().map(|&v| vec![Some(v); m]).collect();
        prop_assert_eq!(alpha(&t), 1.0);
        let a: Vec<usize> = values.clone();
        prop_assert_eq!(cohen_kappa(&a, &a).unwrap().value, 1.0);
    }

    #[test]
    fn kappa_ignores_category_names(
        pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..40),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let ra: Vec<String> = a.iter().map(|&x| format!("c{}", perm[x])).collect();
        let rb: Vec<String> = b.iter().map(|&x| format!("c{}", perm[x])).collect();
        let k1 = cohen_kappa(&a, &b).unwrap().value;
        let k2 = cohen_kappa(&ra, &rb).unwrap().value;
        prop_assert!((k1 - k2).abs() < 1e-12);
        let k3 = cohen_kappa(&b, &a).unwrap().value;
        prop_assert!((k1 - k3).abs() < 1e-12);
    }

    #[test]
    fn majority_ignores_annotator_order(
        t in (2usize..6).prop_flat_map(|m| rows(1..8, m, true)),
        seed in any::<u64>(),
    ) {
        let m = t[0].len();
        let mut order: Vec<usize> = (0..m).collect();
        order.rotate_left(seed as usize % m);
        let shuffled: Vec<Vec<Option<usize>>> = t.iter().map(|r| order.iter().map(|&a| r[a]).collect()).collect();
        let mut nominal = table(&t);
        nominal.scale = Scale::Nominal;
        let mut nominal2 = table(&shuffled);
        nominal2.scale = Scale::Nominal;
        prop_assert_eq!(majority_vote(&nominal).unwrap(), majority_vote(&nominal2).unwrap());
    }
}

/// Every 4-item, 2-annotator table on the 3-point scale: moving one rating
/// further from its partner never raises α when D_e is unchanged.
#[test]
fn alpha_is_monotone_when_only_observed_disagreement_moves() {
    let mut checked = 0;
    for code in 0..3usize.pow(8) {
        let t: Vec<Vec<Option<usize>>> = (0..4)
            .map(|i| (0..2).map(|a| Some(code / 3usize.pow(2 * i + a) % 3)).collect())
            .collect();
        for item in 0..4 {
            let (x, y) = (t[item][0].unwrap(), t[item][1].unwrap());
            let further = match y.cmp(&x) {
                std::cmp::Ordering::Greater if y < 2 => y + 1,
                std::cmp::Ordering::Less if y > 0 => y - 1,
                _ => continue,
            };
            let mut moved = t.clone();
            moved[item][1] = Some(further);
            let (_, _, de0) = alpha_oracle(&t);
            let (_, _, de1) = alpha_oracle(&moved);
            if de0 == 0.0 || de0 != de1 {
                continue;
            }
            checked += 1;
            assert!(alpha(&moved) <= alpha(&t) + 1e-12, "{t:?} item {item}");
        }
    }
    assert!(checked > 1000, "{checked}");
}

#[test]
fn kappa_worked_confusion_matrix() {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (x, y, n) in [("yes", "yes", 20), ("yes", "no", 5), ("no", "yes", 10), ("no", "no", 15)] {
        a.extend(std::iter::repeat_n(x, n));
        b.extend(std::iter::repeat_n(y, n));
    }
    // p_o = 35/50, p_e = (25·30 + 25·20)/2500 = 0.5
    assert_eq!(cohen_kappa(&a, &b).unwrap().value, 0.4);
}
