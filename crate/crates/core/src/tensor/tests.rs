use super::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len(), "length mismatch");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn matmul_identity() {
    let mut tape = Tape::new();
    let a = tape.leaf(vec![1.0, 0.0, 0.0, 1.0], &[2, 2], false).unwrap();
    let b = tape.leaf(vec![3.0, 4.0, 5.0, 6.0], &[2, 2], false).unwrap();
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.data(c), &[3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn matmul_hand_product() {
    let mut tape = Tape::new();
    let a = tape.leaf(vec![1.0, 2.0], &[1, 2], false).unwrap();
    let b = tape.leaf(vec![3.0, 4.0], &[2, 1], false).unwrap();
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.data(c), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.leaf(vec![0.0; 6], &[2, 3], false).unwrap();
    let b = tape.leaf(vec![0.0; 8], &[2, 4], false).unwrap();
    match tape.matmul(a, b) {
        Err(SctgError::DimMismatch { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 4]);
        }
        other => panic!("expected dim mismatch, got {other:?}"),
    }
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a_data = rand_vec(&mut rng, 9);
    let b_data = rand_vec(&mut rng, 9);

    let mut params = ParamStore::new();
    params.insert("a", Tensor::param(a_data, &[3, 3]).unwrap());
    params.insert("b", Tensor::param(b_data, &[3, 3]).unwrap());

    let report = gradient_check(&mut params, 1e-5, |p, tape| {
        let bound = p.bind(tape)?;
        let c = tape.matmul(bound.var("a"), bound.var("b"))?;
        Ok((tape.sum(c), bound))
    })
    .unwrap();
    assert!(report.max_rel_err <= 1e-6, "rel err {}", report.max_rel_err);
}

#[test]
fn softmax_uniform_scores() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![0.0, 0.0, 0.0], &[3], false).unwrap();
    let s = tape.softmax(x, 0).unwrap();
    assert_close(tape.data(s), &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 1e-15);
}

#[test]
fn softmax_large_scores_stable() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1000.0, 0.0, 0.0], &[3], false).unwrap();
    let s = tape.softmax(x, 0).unwrap();
    let out = tape.data(s);
    assert!(out.iter().all(|v| v.is_finite()));
    assert!((out[0] - 1.0).abs() < 1e-12);
    assert!(out[1] < 1e-300 && out[2] < 1e-300);
}

#[test]
fn softmax_matches_extended_precision_evaluation() {
    // Frozen from a 60-digit exp/sum evaluation of softmax([1, 2, 3]).
    let expected = [
        0.0900305731703804579980221,
        0.2447284710547976524729596,
        0.6652409557748218895290183,
    ];
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1.0, 2.0, 3.0], &[3], false).unwrap();
    let s = tape.softmax(x, 0).unwrap();
    assert_close(tape.data(s), &expected, 1e-15);
}

#[test]
fn softmax_empty_axis_is_error() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![], &[0], false).unwrap();
    assert!(tape.softmax(x, 0).is_err());
    let y = tape.leaf(vec![1.0], &[1], false).unwrap();
    assert!(tape.softmax(y, 1).is_err());
}

#[test]
fn add_and_relu_basics() {
    let mut tape = Tape::new();
    let a = tape.leaf(vec![1.0, 2.0], &[2], false).unwrap();
    let b = tape.leaf(vec![3.0, 4.0], &[2], false).unwrap();
    let c = tape.add(a, b).unwrap();
    assert_eq!(tape.data(c), &[4.0, 6.0]);

    let x = tape.leaf(vec![-1.0, 2.0], &[2], false).unwrap();
    let r = tape.relu(x);
    assert_eq!(tape.data(r), &[0.0, 2.0]);
}

#[test]
fn add_broadcast_row_vector() {
    let mut tape = Tape::new();
    let m = tape.leaf(vec![1.0, 2.0, 3.0, 4.0], &[2, 2], false).unwrap();
    let bias = tape.leaf(vec![10.0, 20.0], &[2], false).unwrap();
    let out = tape.add(m, bias).unwrap();
    assert_eq!(tape.data(out), &[11.0, 22.0, 13.0, 24.0]);
}

#[test]
fn add_non_broadcastable_is_error() {
    let mut tape = Tape::new();
    let a = tape.leaf(vec![0.0; 6], &[2, 3], false).unwrap();
    let b = tape.leaf(vec![0.0; 4], &[2, 2], false).unwrap();
    assert!(matches!(tape.add(a, b), Err(SctgError::DimMismatch { .. })));
}

#[test]
fn gelu_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let xs = rand_vec(&mut rng, 16);
    let mut params = ParamStore::new();
    params.insert("x", Tensor::param(xs, &[16]).unwrap());
    let report = gradient_check(&mut params, 1e-5, |p, tape| {
        let bound = p.bind(tape)?;
        let g = tape.gelu(bound.var("x"));
        Ok((tape.sum(g), bound))
    })
    .unwrap();
    assert!(report.max_rel_err <= 1e-6, "rel err {}", report.max_rel_err);
}

#[test]
fn layer_norm_constant_row_is_zero() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![5.0, 5.0, 5.0, 5.0], &[1, 4], false).unwrap();
    let g = tape.leaf(vec![1.0; 4], &[4], false).unwrap();
    let b = tape.leaf(vec![0.0; 4], &[4], false).unwrap();
    let out = tape.layer_norm(x, g, b, 1e-5).unwrap();
    assert_eq!(tape.data(out), &[0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn layer_norm_already_normalized_row() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1.0, -1.0], &[1, 2], false).unwrap();
    let g = tape.leaf(vec![1.0; 2], &[2], false).unwrap();
    let b = tape.leaf(vec![0.0; 2], &[2], false).unwrap();
    let out = tape.layer_norm(x, g, b, 1e-5).unwrap();
    assert_close(tape.data(out), &[1.0, -1.0], 1e-4);
}

#[test]
fn layer_norm_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut params = ParamStore::new();
    params.insert("x", Tensor::param(rand_vec(&mut rng, 12), &[3, 4]).unwrap());
    params.insert("g", Tensor::param(rand_vec(&mut rng, 4), &[4]).unwrap());
    params.insert("b", Tensor::param(rand_vec(&mut rng, 4), &[4]).unwrap());
    let report = gradient_check(&mut params, 1e-5, |p, tape| {
        let bound = p.bind(tape)?;
        let ln = tape.layer_norm(bound.var("x"), bound.var("g"), bound.var("b"), 1e-5)?;
        // A non-uniform readout so mean/variance paths both matter.
        let w = tape.constant((0..12).map(|i| (i as f64) * 0.3 - 1.0).collect(), &[12])?;
        let flat = tape.reshape(ln, &[12])?;
        let prod = tape.mul(flat, w)?;
        Ok((tape.sum(prod), bound))
    })
    .unwrap();
    assert!(report.max_rel_err <= 1e-5, "rel err {}", report.max_rel_err);
}

#[test]
fn cross_entropy_uniform_logits() {
    let mut tape = Tape::new();
    let logits = tape.leaf(vec![0.0; 8], &[2, 4], false).unwrap();
    let loss = tape.cross_entropy(logits, &[1, 3], &[true, true]).unwrap();
    // Frozen from the same 60-digit evaluation as the softmax case.
    assert!((tape.value(loss) - 1.386294361119890618834464).abs() < 1e-15);
}

#[test]
fn cross_entropy_margin_drives_loss_to_zero() {
    let mut prev = f64::INFINITY;
    for margin in [1.0, 5.0, 20.0, 80.0] {
        let mut tape = Tape::new();
        let logits = tape.leaf(vec![margin, 0.0, 0.0], &[1, 3], false).unwrap();
        let loss = tape.cross_entropy(logits, &[0], &[true]).unwrap();
        let v = tape.value(loss);
        assert!(v < prev);
        prev = v;
    }
    assert!(prev < 1e-30);
}

#[test]
fn cross_entropy_matches_independent_log_sum_exp() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let logits: Vec<f64> = (0..15).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let targets = [4usize, 0, 2];

    // Independent evaluation straight from the definition.
    let mut expected = 0.0;
    for r in 0..3 {
        let row = &logits[r * 5..(r + 1) * 5];
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        expected += lse - row[targets[r]];
    }
    expected /= 3.0;

    let mut tape = Tape::new();
    let l = tape.leaf(logits, &[3, 5], false).unwrap();
    let loss = tape.cross_entropy(l, &targets, &[true; 3]).unwrap();
    assert!((tape.value(loss) - expected).abs() < 1e-12);
}

#[test]
fn cross_entropy_padding_excluded_from_mean() {
    let mut tape = Tape::new();
    let logits = tape
        .leaf(vec![1.0, 0.0, 0.0, 9.0, 2.0, 2.0], &[2, 3], false)
        .unwrap();
    let full = tape.cross_entropy(logits, &[0, 1], &[true, false]).unwrap();

    let mut tape2 = Tape::new();
    let first = tape2.leaf(vec![1.0, 0.0, 0.0], &[1, 3], false).unwrap();
    let only = tape2.cross_entropy(first, &[0], &[true]).unwrap();
    assert_eq!(tape.value(full), tape2.value(only));
}

#[test]
fn cross_entropy_out_of_range_target() {
    let mut tape = Tape::new();
    let logits = tape.leaf(vec![0.0; 4], &[1, 4], false).unwrap();
    assert!(matches!(
        tape.cross_entropy(logits, &[4], &[true]),
        Err(SctgError::IndexOutOfRange { index: 4, vocab: 4 })
    ));
}

#[test]
fn backward_of_sum_is_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1.0, 2.0, 3.0], &[3], true).unwrap();
    let loss = tape.sum(x);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_of_square_sum() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1.0, 2.0], &[2], true).unwrap();
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1.0, 2.0], &[2], true).unwrap();
    assert!(tape.backward(x).is_err());
}

#[test]
fn backward_visits_each_recorded_op_once() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1.0, 2.0, 3.0, 4.0], &[2, 2], true).unwrap();
    let y = tape.leaf(vec![0.5; 4], &[2, 2], true).unwrap();
    // A graph with fan-out: x feeds both branches.
    let a = tape.matmul(x, y).unwrap();
    let b = tape.mul(x, x).unwrap();
    let c = tape.add(a, b).unwrap();
    let d = tape.gelu(c);
    let loss = tape.sum(d);
    let visits = tape.backward(loss).unwrap();
    assert_eq!(visits, tape.op_count());
}

#[test]
fn forward_replay_is_bitwise_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tape = Tape::new();
        let x = tape.leaf(rand_vec(&mut rng, 16), &[4, 4], true).unwrap();
        let w = tape.leaf(rand_vec(&mut rng, 16), &[4, 4], true).unwrap();
        let h = tape.matmul(x, w).unwrap();
        let g = tape.gelu(h);
        let s = tape.softmax(g, 1).unwrap();
        let loss = tape.sum(s);
        (tape.data(s).to_vec(), tape.value(loss))
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la.to_bits(), lb.to_bits());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn gradient_check_linear_model_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut params = ParamStore::new();
    params.insert("w", Tensor::param(rand_vec(&mut rng, 6), &[2, 3]).unwrap());
    params.insert("b", Tensor::param(rand_vec(&mut rng, 3), &[3]).unwrap());
    let x = rand_vec(&mut rng, 2);
    let report = gradient_check(&mut params, 1e-5, move |p, tape| {
        let bound = p.bind(tape)?;
        let xv = tape.constant(x.clone(), &[1, 2])?;
        let h = tape.matmul(xv, bound.var("w"))?;
        let y = tape.add(h, bound.var("b"))?;
        Ok((tape.sum(y), bound))
    })
    .unwrap();
    assert!(report.max_rel_err <= 1e-8, "rel err {}", report.max_rel_err);
}

#[test]
fn gradient_check_two_layer_mlp() {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut params = ParamStore::new();
    params.insert("w1", Tensor::param(rand_vec(&mut rng, 12), &[3, 4]).unwrap());
    params.insert("b1", Tensor::param(rand_vec(&mut rng, 4), &[4]).unwrap());
    params.insert("w2", Tensor::param(rand_vec(&mut rng, 8), &[4, 2]).unwrap());
    params.insert("b2", Tensor::param(rand_vec(&mut rng, 2), &[2]).unwrap());
    let x = rand_vec(&mut rng, 6);
    let report = gradient_check(&mut params, 1e-5, move |p, tape| {
        let bound = p.bind(tape)?;
        let xv = tape.constant(x.clone(), &[2, 3])?;
        let h = tape.matmul(xv, bound.var("w1"))?;
        let h = tape.add(h, bound.var("b1"))?;
        let h = tape.gelu(h);
        let y = tape.matmul(h, bound.var("w2"))?;
        let y = tape.add(y, bound.var("b2"))?;
        let loss = tape.cross_entropy(y, &[1, 0], &[true, true])?;
        Ok((loss, bound))
    })
    .unwrap();
    assert!(report.max_rel_err <= 1e-6, "rel err {}", report.max_rel_err);
}

#[test]
fn adam_zero_grads_leaves_params_unchanged() {
    let mut params = ParamStore::new();
    let mut t = Tensor::param(vec![1.0, -2.0], &[2]).unwrap();
    t.grad = Some(vec![0.0, 0.0]);
    params.insert("p", t);
    let mut state = AdamState::new();
    adam_step(&mut params, &mut state, &AdamConfig::default()).unwrap();
    assert_eq!(params.get("p").data, vec![1.0, -2.0]);
}

#[test]
fn adam_single_step_matches_hand_formula() {
    let (lr, b1, b2, eps, g, p0) = (0.01, 0.9, 0.999, 1e-8, 2.0, 0.5);
    let mut params = ParamStore::new();
    let mut t = Tensor::param(vec![p0], &[1]).unwrap();
    t.grad = Some(vec![g]);
    params.insert("p", t);
    let mut state = AdamState::new();
    let cfg = AdamConfig { lr, beta1: b1, beta2: b2, eps, weight_decay: 0.0 };
    adam_step(&mut params, &mut state, &cfg).unwrap();

    // Fresh-state step written out by hand.
    let m = (1.0 - b1) * g;
    let v = (1.0 - b2) * g * g;
    let m_hat = m / (1.0 - b1);
    let v_hat = v / (1.0 - b2);
    let expected = p0 - lr * m_hat / (v_hat.sqrt() + eps);
    assert!((params.get("p").data[0] - expected).abs() < 1e-15);
}

#[test]
fn adam_decoupled_decay_shrinks_grad_free_param() {
    let mut params = ParamStore::new();
    let mut t = Tensor::param(vec![4.0], &[1]).unwrap();
    t.grad = Some(vec![0.0]);
    params.insert("p", t);
    let mut state = AdamState::new();
    let cfg = AdamConfig { lr: 0.1, weight_decay: 0.01, ..AdamConfig::default() };
    adam_step(&mut params, &mut state, &cfg).unwrap();
    assert!((params.get("p").data[0] - 4.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
    adam_step(&mut params, &mut state, &cfg).unwrap();
    let factor = 1.0 - 0.1 * 0.01;
    assert!((params.get("p").data[0] - 4.0 * factor * factor).abs() < 1e-14);
}

#[test]
fn adam_nan_grad_aborts_with_param_name() {
    let mut params = ParamStore::new();
    let mut t = Tensor::param(vec![1.0], &[1]).unwrap();
    t.grad = Some(vec![f64::NAN]);
    params.insert("bad.weight", t);
    let mut state = AdamState::new();
    match adam_step(&mut params, &mut state, &AdamConfig::default()) {
        Err(SctgError::NonFinite { context }) => assert!(context.contains("bad.weight")),
        other => panic!("expected NaN abort, got {other:?}"),
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut params = ParamStore::new();
    params.insert("encoder.w", Tensor::param(rand_vec(&mut rng, 12), &[3, 4]).unwrap());
    params.insert("decoder.b", Tensor::param(rand_vec(&mut rng, 5), &[5]).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.bin");
    params.save(&path).unwrap();
    let loaded = ParamStore::load(&path).unwrap();
    assert_eq!(loaded.len(), 2);
    for (name, t) in params.iter() {
        let l = loaded.get(name);
        assert_eq!(l.shape, t.shape);
        for (a, b) in l.data.iter().zip(&t.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn checkpoint_truncation_reports_offset() {
    let mut params = ParamStore::new();
    params.insert("w", Tensor::param(vec![1.0, 2.0, 3.0], &[3]).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.bin");
    params.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
    match ParamStore::load(&path) {
        Err(SctgError::Format { offset, .. }) => assert!(offset > 0),
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn checkpoint_bad_magic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.bin");
    std::fs::write(&path, b"NOPExxxxxxxxxxxx").unwrap();
    assert!(matches!(ParamStore::load(&path), Err(SctgError::Format { offset: 0, .. })));
}

#[test]
fn tensors_and_stores_are_send() {
    fn assert_send<T: Send>() {}
    assert_send::<Tensor>();
    assert_send::<ParamStore>();
    assert_send::<Tape>();
}

#[test]
fn slice_and_concat_grads_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut params = ParamStore::new();
    params.insert("x", Tensor::param(rand_vec(&mut rng, 16), &[4, 4]).unwrap());
    let report = gradient_check(&mut params, 1e-5, |p, tape| {
        let bound = p.bind(tape)?;
        let x = bound.var("x");
        let top = tape.slice_rows(x, 0, 2)?;
        let left = tape.slice_cols(x, 0, 2)?;
        let right = tape.slice_cols(x, 2, 2)?;
        let swapped = tape.concat_cols(&[right, left])?;
        let tt = tape.transpose(top)?;
        let stacked = tape.concat_cols(&[tt, swapped])?;
        let g = tape.gelu(stacked);
        Ok((tape.sum(g), bound))
    })
    .unwrap();
    assert!(report.max_rel_err <= 1e-6, "rel err {}", report.max_rel_err);
}

#[test]
fn embed_and_weighted_pool_grads_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut params = ParamStore::new();
    params.insert("table", Tensor::param(rand_vec(&mut rng, 10), &[5, 2]).unwrap());
    params.insert("w", Tensor::param(rand_vec(&mut rng, 6), &[2, 3]).unwrap());
    params.insert("v", Tensor::param(rand_vec(&mut rng, 12), &[2, 3, 2]).unwrap());
    for axis in [0usize, 1] {
        let report = gradient_check(&mut params, 1e-5, move |p, tape| {
            let bound = p.bind(tape)?;
            let e = tape.embed(bound.var("table"), &[3, 0, 3])?;
            let pooled = tape.weighted_pool(bound.var("w"), bound.var("v"), axis)?;
            let es = tape.sum(e);
            let ps = tape.sum(pooled);
            Ok((tape.add(es, ps).map(|v| tape.sum(v))?, bound))
        })
        .unwrap();
        assert!(report.max_rel_err <= 1e-6, "axis {axis} rel err {}", report.max_rel_err);
    }
}

mod properties {
    use super::*;
    use proptest::prelude::{proptest, prop_assert};

    proptest! {
        #[test]
        fn softmax_rows_are_simplexes(rows in 1usize..5, cols in 1usize..6, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let mut tape = Tape::new();
            let x = tape.leaf(data, &[rows, cols], false).unwrap();
            let s = tape.softmax(x, 1).unwrap();
            let out = tape.data(s);
            for r in 0..rows {
                let sum: f64 = out[r * cols..(r + 1) * cols].iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-12);
                for &v in &out[r * cols..(r + 1) * cols] {
                    prop_assert!(v > 0.0);
                }
            }
        }

        #[test]
        fn composed_graph_backward_matches_oracle(seed in 0u64..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = ParamStore::new();
            params.insert("w", Tensor::param(rand_vec(&mut rng, 9), &[3, 3]).unwrap());
            params.insert("g", Tensor::param(rand_vec(&mut rng, 3), &[3]).unwrap());
            params.insert("b", Tensor::param(rand_vec(&mut rng, 3), &[3]).unwrap());
            let x = rand_vec(&mut rng, 9);
            let report = gradient_check(&mut params, 1e-5, move |p, tape| {
                let bound = p.bind(tape)?;
                let xv = tape.constant(x.clone(), &[3, 3])?;
                let h = tape.matmul(xv, bound.var("w"))?;
                let n = tape.layer_norm(h, bound.var("g"), bound.var("b"), 1e-5)?;
                let s = tape.softmax(n, 1).unwrap();
                let loss = tape.cross_entropy(s, &[0, 2, 1], &[true, true, true])?;
                Ok((loss, bound))
            }).unwrap();
            prop_assert!(report.max_rel_err <= 1e-4);
        }
    }
}
