use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::check_inputs;
use super::*;
use crate::error::Error;
use crate::tensor::Tensor;

const H: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (random(&mut rng, &[4, 5]), random(&mut rng, &[5, 3]));
    let r = check_inputs(&[a, b], H, |g, v| {
        let c = g.matmul(v[0], v[1])?;
        g.sum(c)
    })
    .unwrap();
    assert!(r.max_error() < 1e-6, "{r:?}");
}

#[test]
fn elementwise_and_structural_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, &[3, 4]);
    let y = random(&mut rng, &[3, 4]);
    let w = random(&mut rng, &[3, 4]);
    let row = random(&mut rng, &[4]);
    let r = check_inputs(&[x, y, row, w], H, |g, v| {
        let a = g.mul(v[0], v[1])?;
        let b = g.sub(a, v[1])?;
        let c = g.add_row(b, v[2])?;
        let d = g.gelu(c)?;
        let e = g.transpose(d)?;
        let f = g.transpose(e)?;
        let s1 = g.slice_cols(f, 1, 2)?;
        let s2 = g.slice_cols(f, 0, 1)?;
        let cat = g.concat_cols(&[s2, s1, s2])?;
        let wsl = g.slice_cols(v[3], 0, 4)?;
        let m = g.mul(cat, wsl)?;
        let s = g.sum(m)?;
        g.scale(s, 0.7)
    })
    .unwrap();
    assert!(r.max_error() < 1e-6, "{r:?}");
}

#[test]
fn softmax_gradients_both_axes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for axis in [0, 1] {
        let x = random(&mut rng, &[3, 4]);
        let w = random(&mut rng, &[3, 4]);
        let r = check_inputs(&[x, w], H, |g, v| {
            let s = g.softmax(v[0], axis)?;
            let p = g.mul(s, v[1])?;
            g.sum(p)
        })
        .unwrap();
        assert!(r.max_error() < 1e-6, "axis {axis}: {r:?}");
    }
}

#[test]
fn masked_softmax_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&mut rng, &[3, 3]);
    let w = random(&mut rng, &[3, 3]);
    let mask = vec![true, false, false, true, true, false, true, true, true];
    let r = check_inputs(&[x, w], H, |g, v| {
        let s = g.masked_softmax(v[0], &mask)?;
        let p = g.mul(s, v[1])?;
        g.sum(p)
    })
    .unwrap();
    assert!(r.max_error() < 1e-6, "{r:?}");
}

#[test]
fn layer_norm_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, &[3, 5]);
    let gain = random(&mut rng, &[5]);
    let bias = random(&mut rng, &[5]);
    let w = random(&mut rng, &[3, 5]);
    let r = check_inputs(&[x, gain, bias, w], H, |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
        let p = g.mul(y, v[3])?;
        g.sum(p)
    })
    .unwrap();
    assert!(r.max_error() < 1e-5, "{r:?}");
}

#[test]
fn attention_block_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q = random(&mut rng, &[3, 4]);
    let k = random(&mut rng, &[5, 4]);
    let val = random(&mut rng, &[5, 4]);
    let w = random(&mut rng, &[3, 4]);
    let r = check_inputs(&[q, k, val, w], H, |g, v| {
        let s = g.matmul_t(v[0], v[1])?;
        let s = g.scale(s, 0.5)?;
        let p = g.softmax(s, 1)?;
        let o = g.matmul(p, v[2])?;
        let o = g.mul(o, v[3])?;
        g.sum(o)
    })
    .unwrap();
    assert!(r.max_error() < 1e-6, "{r:?}");
}

#[test]
fn pooling_normalising_and_similarity_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&mut rng, &[4, 3]);
    let y = random(&mut rng, &[3]);
    let m = random(&mut rng, &[2, 3]);
    let r = check_inputs(&[x, y, m], H, |g, v| {
        let pooled = g.masked_mean_rows(v[0], &[true, false, true, true])?;
        let c = g.cosine_similarity(pooled, v[1])?;
        let n = g.normalize_rows(v[2])?;
        let d = g.row_dot(n, v[2])?;
        let s = g.sum(d)?;
        let e = g.pick(d, 1)?;
        let st = g.stack(&[c, s, e])?;
        let w = g.constant(Tensor::vector(vec![1.0, -0.3, 2.0]));
        let p = g.mul(st, w)?;
        let t = g.sum(p)?;
        let scaled = g.scale_by(t, c)?;
        let three = g.constant(Tensor::vector(vec![3.0]));
        let shifted = g.add(scaled, three)?;
        let inv = g.recip(shifted)?;
        let out = g.relu(inv)?;
        g.sum(out)
    })
    .unwrap();
    assert!(r.max_error() < 1e-6, "{r:?}");
}

#[test]
fn stack_rows_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(&mut rng, &[3]);
    let b = random(&mut rng, &[1, 3]);
    let w = random(&mut rng, &[3, 3]);
    let r = check_inputs(&[a, b, w], H, |g, v| {
        let m = g.stack_rows(&[v[0], v[1], v[0]])?;
        let n = g.normalize_rows(m)?;
        let p = g.mul(n, v[2])?;
        g.sum(p)
    })
    .unwrap();
    assert!(r.max_error() < 1e-6, "{r:?}");
}

#[test]
fn embedding_gradient_accumulates_repeated_ids() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let table = random(&mut rng, &[5, 3]);
    let w = random(&mut rng, &[4, 3]);
    let r = check_inputs(&[table, w], H, |g, v| {
        let e = g.embedding(v[0], &[1, 3, 1, 4])?;
        let p = g.mul(e, v[1])?;
        g.sum(p)
    })
    .unwrap();
    assert!(r.max_error() < 1e-6, "{r:?}");
}

#[test]
fn cross_entropy_gradient_and_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let logits = random(&mut rng, &[4, 6]);
    for red in [Reduction::Mean, Reduction::Sum] {
        let r = check_inputs(&[logits.clone()], H, |g, v| g.cross_entropy(v[0], &[2, 0, 5, 0], 0, red)).unwrap();
        assert!(r.max_error() < 1e-5, "{r:?}");
    }

    // uniform logits over V=4: -log(1/4)
    let mut g = Graph::new();
    let l = g.constant(Tensor::zeros(&[3, 4]));
    let ce = g.cross_entropy(l, &[1, 2, 3], 0, Reduction::Mean).unwrap();
    assert!((g.value(ce).item() - 4f64.ln()).abs() < 1e-12);

    // pad positions are excluded from the mean
    let ce2 = g.cross_entropy(l, &[1, 0, 0], 0, Reduction::Mean).unwrap();
    assert!((g.value(ce2).item() - 4f64.ln()).abs() < 1e-12);

    // growing margin drives the loss to zero
    let mut prev = f64::INFINITY;
    for margin in [1.0, 5.0, 20.0, 60.0] {
        let mut data = vec![0.0; 8];
        data[1] = margin;
        data[4 + 3] = margin;
        let l = g.constant(Tensor::matrix(2, 4, data).unwrap());
        let ce = g.cross_entropy(l, &[1, 3], 0, Reduction::Mean).unwrap();
        let v = g.value(ce).item();
        assert!(v < prev);
        prev = v;
    }
    assert!(prev < 1e-20);
}

#[test]
fn cross_entropy_errors() {
    let mut g = Graph::new();
    let l = g.constant(Tensor::zeros(&[2, 4]));
    assert!(matches!(g.cross_entropy(l, &[0, 0], 0, Reduction::Mean), Err(Error::Degenerate(_))));
    assert!(matches!(g.cross_entropy(l, &[1, 9], 0, Reduction::Mean), Err(Error::Contract(_))));
    assert!(matches!(g.cross_entropy(l, &[1], 0, Reduction::Mean), Err(Error::Shape(_))));
}

#[test]
fn info_nce_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let pos = random(&mut rng, &[3]);
    let neg = random(&mut rng, &[3, 3]);
    let r = check_inputs(&[pos, neg], H, |g, v| g.info_nce(v[0], v[1], 0.2)).unwrap();
    assert!(r.max_error() < 1e-5, "{r:?}");
}

#[test]
fn backward_rejects_non_scalar_and_accumulates() {
    let mut ps = ParamStore::new();
    let id = ps.add("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
    let grads = {
        let mut g = Graph::with_params(&ps);
        let w = g.param(id);
        assert!(matches!(g.backward(w), Err(Error::Contract(_))));
        let s = g.sum(w).unwrap();
        g.backward(s).unwrap()
    };
    ps.accumulate(&grads, 1.0);
    ps.accumulate(&grads, 1.0);
    assert_eq!(ps.get(id).grad.as_deref(), Some(&[2.0, 2.0][..]));
    ps.zero_grad();
    assert!(ps.get(id).grad.is_none());
}

#[test]
fn reused_param_node_sums_contributions() {
    let mut ps = ParamStore::new();
    let id = ps.add("w", Tensor::vector(vec![3.0])).unwrap();
    let mut g = Graph::with_params(&ps);
    let a = g.param(id);
    let b = g.param(id);
    assert_eq!(a, b);
    let p = g.mul(a, b).unwrap();
    let grads = g.backward(p).unwrap();
    assert_eq!(grads.param(id), Some(&[6.0][..]));
}

#[test]
fn dropout_is_seeded_and_scaled() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![1.0; 200]));
    let a = g.dropout(x, 0.5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let b = g.dropout(x, 0.5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let c = g.dropout(x, 0.5, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(g.value(a), g.value(b));
    assert_ne!(g.value(a), g.value(c));
    assert!(g.value(a).data().iter().all(|&v| v == 0.0 || v == 2.0));
    let same = g.dropout(x, 0.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(same, x);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(xs in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
        let s = Tensor::vector(xs).softmax(0).unwrap();
        let total: f64 = s.data().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(s.data().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn cosine_is_scale_invariant(
        u in proptest::collection::vec(-10.0f64..10.0, 4),
        v in proptest::collection::vec(-10.0f64..10.0, 4),
        a in 0.01f64..100.0,
        b in 0.01f64..100.0,
    ) {
        prop_assume!(crate::tensor::norm(&u) > 1e-3 && crate::tensor::norm(&v) > 1e-3);
        let base = crate::tensor::cosine_similarity(&u, &v).unwrap();
        let su: Vec<f64> = u.iter().map(|x| x * a).collect();
        let sv: Vec<f64> = v.iter().map(|x| x * b).collect();
        let scaled = crate::tensor::cosine_similarity(&su, &sv).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-12);
    }
}
