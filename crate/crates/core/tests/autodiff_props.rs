//! Finite-difference checks for every differentiable tape op.

use hypevents::autodiff::gradcheck::check_gradients;
use hypevents::autodiff::{Binding, ParamStore, RngStream, Tape, Tensor, Var};
use hypevents::Result;
use proptest::prelude::*;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut RngStream::new(seed))
}

/// Contracts the op output with a fixed random tensor so every output
/// element contributes to the scalar loss with a distinct weight.
fn weighted(tape: &mut Tape, out: Var) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(randn(&shape, 0xC0FFEE));
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn store(tensors: &[(&str, Tensor)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (n, t) in tensors {
        s.add(*n, t.clone()).unwrap();
    }
    s
}

fn max_err<F>(params: &ParamStore, f: F) -> f64
where
    F: Fn(&mut Tape, &Binding, &ParamStore) -> Result<Var>,
{
    check_gradients(params, H, |p, tape, b| {
        let out = f(tape, b, p)?;
        weighted(tape, out)
    })
    .unwrap()
    .max_rel_error
}

fn var(b: &Binding, p: &ParamStore, i: usize) -> Var {
    b.var(p.ids().nth(i).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matmul(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed: u64) {
        let p = store(&[("a", randn(&[m, k], seed)), ("b", randn(&[k, n], seed ^ 1))]);
        let e = max_err(&p, |t, b, p| t.matmul(var(b, p, 0), var(b, p, 1)));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn transpose(m in 1usize..5, n in 1usize..5, seed: u64) {
        let p = store(&[("x", randn(&[m, n], seed))]);
        let e = max_err(&p, |t, b, p| t.transpose(var(b, p, 0)));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn add_sub_mul(m in 1usize..5, n in 1usize..5, seed: u64) {
        let p = store(&[("a", randn(&[m, n], seed)), ("b", randn(&[m, n], seed ^ 1))]);
        let e = max_err(&p, |t, b, p| {
            let (x, y) = (var(b, p, 0), var(b, p, 1));
            let s = t.add(x, y)?;
            let d = t.sub(x, y)?;
            t.mul(s, d)
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn mul_with_itself(n in 1usize..8, seed: u64) {
        let p = store(&[("x", randn(&[n], seed))]);
        let e = max_err(&p, |t, b, p| t.mul(var(b, p, 0), var(b, p, 0)));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn scale(n in 1usize..8, f in -3.0f64..3.0, seed: u64) {
        let p = store(&[("x", randn(&[n], seed))]);
        let e = max_err(&p, |t, b, p| Ok(t.scale(var(b, p, 0), f)));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn add_row_bias(m in 1usize..5, n in 1usize..5, seed: u64) {
        let p = store(&[("x", randn(&[m, n], seed)), ("b", randn(&[n], seed ^ 1))]);
        let e = max_err(&p, |t, b, p| t.add_row_bias(var(b, p, 0), var(b, p, 1)));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn gelu(n in 1usize..10, seed: u64) {
        let p = store(&[("x", Tensor::randn(&[n], 2.0, &mut RngStream::new(seed)))]);
        let e = max_err(&p, |t, b, p| Ok(t.gelu(var(b, p, 0))));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn softmax(d0 in 1usize..4, d1 in 1usize..4, d2 in 1usize..4, axis in 0usize..3, seed: u64) {
        let p = store(&[("x", randn(&[d0, d1, d2], seed))]);
        let e = max_err(&p, |t, b, p| t.softmax(var(b, p, 0), axis));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn layer_norm(m in 1usize..4, n in 2usize..6, seed: u64) {
        let p = store(&[
            ("x", randn(&[m, n], seed)),
            ("g", randn(&[n], seed ^ 1)),
            ("b", randn(&[n], seed ^ 2)),
        ]);
        let e = max_err(&p, |t, b, p| t.layer_norm(var(b, p, 0), var(b, p, 1), var(b, p, 2)));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn gather_rows_accumulates_repeats(v in 1usize..5, d in 1usize..4, ids in proptest::collection::vec(0usize..5, 1..7), seed: u64) {
        let ids: Vec<usize> = ids.into_iter().map(|i| i % v).collect();
        let p = store(&[("table", randn(&[v, d], seed))]);
        let e = max_err(&p, |t, b, p| t.gather_rows(var(b, p, 0), &ids));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn slice_and_concat_cols(m in 1usize..4, n in 2usize..7, cut in 1usize..6, seed: u64) {
        let cut = cut.min(n - 1);
        let p = store(&[("x", randn(&[m, n], seed))]);
        let e = max_err(&p, |t, b, p| {
            let x = var(b, p, 0);
            let l = t.slice_cols(x, 0, cut)?;
            let r = t.slice_cols(x, cut, n - cut)?;
            let r2 = t.gelu(r);
            t.concat_cols(&[r2, l])
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn sum_mean_add_n(m in 1usize..4, n in 1usize..4, seed: u64) {
        let p = store(&[("a", randn(&[m, n], seed)), ("b", randn(&[m, n], seed ^ 1))]);
        let e = max_err(&p, |t, b, p| {
            let (x, y) = (var(b, p, 0), var(b, p, 1));
            let xy = t.mul(x, y)?;
            let s = t.add_n(&[x, y, xy])?;
            let m1 = t.mean(s);
            let m2 = t.sum(xy);
            let both = t.mul(m1, m2)?;
            Ok(both)
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn cross_entropy_with_mask(b in 1usize..5, n in 2usize..5, seed: u64, mask_bits: u8) {
        let targets: Vec<usize> = (0..b).map(|r| (seed as usize + 3 * r) % n).collect();
        let mut mask: Vec<bool> = (0..b).map(|r| mask_bits >> r & 1 == 1).collect();
        mask[0] = true;
        let p = store(&[("logits", Tensor::randn(&[b, n], 2.0, &mut RngStream::new(seed)))]);
        let e = max_err(&p, |t, bd, p| t.cross_entropy(var(bd, p, 0), &targets, Some(&mask)));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn dropout_with_fixed_mask(n in 1usize..10, seed: u64) {
        let p = store(&[("x", randn(&[n], seed))]);
        let e = max_err(&p, |t, b, p| {
            let mut rng = RngStream::new(seed ^ 7);
            t.dropout(var(b, p, 0), 0.3, &mut rng)
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn softmax_rows_sum_to_one(m in 1usize..6, n in 1usize..9, scale in 0.1f64..50.0, seed: u64) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::randn(&[m, n], scale, &mut RngStream::new(seed)));
        let s = tape.softmax(x, 1).unwrap();
        for r in 0..m {
            let total: f64 = tape.value(s).row(r).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12, "{total}");
        }
    }
}

#[test]
fn gradients_accumulate_across_consumers() {
    // x feeds three consumers; its gradient is the sum of their contributions.
    let mut tape = Tape::new();
    let x = tape.param(&Tensor::new(vec![1, 2], vec![0.5, -1.5]).unwrap());
    let a = tape.scale(x, 2.0);
    let sq = tape.mul(x, x).unwrap();
    let t = tape.transpose(x).unwrap();
    let xt = tape.matmul(x, t).unwrap();
    let s1 = tape.sum(a);
    let s2 = tape.sum(sq);
    let s3 = tape.sum(xt);
    let total = tape.add_n(&[s1, s2, s3]).unwrap();
    let g = tape.backward(total).unwrap();
    // d/dx [2x + x² + x·x] = 2 + 2x + 2x
    assert_eq!(g.get(x).unwrap(), &[2.0 + 4.0 * 0.5, 2.0 - 4.0 * 1.5]);
}
