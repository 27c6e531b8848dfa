use super::*;
use crate::tensor::Tensor;
use crate::text::{tokenize, Vocabulary};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dims() -> DecoderDims {
    DecoderDims { d_prime: 8, layers: 1, heads: 2, vocab: 12, max_len: 16 }
}

fn init(dims: &DecoderDims, seed: u64) -> ParamStore {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_params(&mut store, dims, &mut rng);
    store
}

fn random_matrix(tape: &mut Tape, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Var {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    tape.constant(data, &[rows, cols]).unwrap()
}

#[test]
fn stack_prompt_has_2n_plus_t_rows() {
    let d = dims();
    let store = init(&d, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, t) = (4, 3);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape).unwrap();
    let o_s = random_matrix(&mut tape, n, d.d_prime, &mut rng);
    let o_w = random_matrix(&mut tape, n, d.d_prime, &mut rng);
    let o_r = random_matrix(&mut tape, t, d.d_prime, &mut rng);
    let z = assemble_prompt(&mut tape, &bound, &[o_s, o_w, o_r], FusionMode::Stack).unwrap();
    assert_eq!(tape.shape(z), &[2 * n + t, d.d_prime]);

    let z1 = assemble_prompt(&mut tape, &bound, &[o_s, o_w, o_r], FusionMode::Sum).unwrap();
    assert_eq!(tape.shape(z1), &[1, d.d_prime]);
}

#[test]
fn sum_prompt_of_zero_outputs_is_bias_derived_constant() {
    let d = dims();
    let store = init(&d, 3);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape).unwrap();
    let zero_s = tape.constant(vec![0.0; 4 * d.d_prime], &[4, d.d_prime]).unwrap();
    let zero_r = tape.constant(vec![0.0; 3 * d.d_prime], &[3, d.d_prime]).unwrap();
    let z = assemble_prompt(&mut tape, &bound, &[zero_s, zero_s, zero_r], FusionMode::Sum).unwrap();
    // Each projected block is the bias row; mean-pooling keeps it; the
    // sum is three biases.
    let b = &store.get("decoder.prompt.b").data;
    for (j, v) in tape.data(z).iter().enumerate() {
        assert!((v - 3.0 * b[j]).abs() < 1e-12);
    }
}

#[test]
fn stack_rows_match_direct_projection() {
    let d = dims();
    let store = init(&d, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, t) = (4, 3);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape).unwrap();
    let o_s = random_matrix(&mut tape, n, d.d_prime, &mut rng);
    let o_w = random_matrix(&mut tape, n, d.d_prime, &mut rng);
    let o_r = random_matrix(&mut tape, t, d.d_prime, &mut rng);
    let z = assemble_prompt(&mut tape, &bound, &[o_s, o_w, o_r], FusionMode::Stack).unwrap();

    // Rows 0..N-1 are g applied to O_s rows.
    let w = &store.get("decoder.prompt.w").data;
    let b = &store.get("decoder.prompt.b").data;
    let dp = d.d_prime;
    for r in 0..n {
        for c in 0..dp {
            let mut expected = b[c];
            for i in 0..dp {
                expected += tape.data(o_s)[r * dp + i] * w[i * dp + c];
            }
            let got = tape.data(z)[r * dp + c];
            assert!((got - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn stack_preserves_levels_blockwise() {
    let d = dims();
    let store = init(&d, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, t) = (4, 3);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape).unwrap();
    let o_s = random_matrix(&mut tape, n, d.d_prime, &mut rng);
    let o_w = random_matrix(&mut tape, n, d.d_prime, &mut rng);
    let o_r = random_matrix(&mut tape, t, d.d_prime, &mut rng);
    let o_r2 = random_matrix(&mut tape, t, d.d_prime, &mut rng);

    let z = assemble_prompt(&mut tape, &bound, &[o_s, o_w, o_r], FusionMode::Stack).unwrap();
    let z2 = assemble_prompt(&mut tape, &bound, &[o_s, o_w, o_r2], FusionMode::Stack).unwrap();
    // Perturbing only the region block leaves the first 2N rows alone.
    let dp = d.d_prime;
    for i in 0..2 * n * dp {
        assert_eq!(tape.data(z)[i].to_bits(), tape.data(z2)[i].to_bits());
    }
    let tail_delta: f64 = tape.data(z)[2 * n * dp..]
        .iter()
        .zip(&tape.data(z2)[2 * n * dp..])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(tail_delta > 0.0);
}

#[test]
fn unknown_fusion_mode_is_config_error() {
    assert!("stacked".parse::<FusionMode>().is_err());
    assert_eq!("stack".parse::<FusionMode>().unwrap(), FusionMode::Stack);
    assert_eq!("sum".parse::<FusionMode>().unwrap(), FusionMode::Sum);
}

#[test]
fn logits_shape_contract() {
    let d = dims();
    let store = init(&d, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape).unwrap();
    let z = random_matrix(&mut tape, 5, d.d_prime, &mut rng);
    let logits = decode_step(&mut tape, &bound, z, &[BOS, 4, 5], &d).unwrap();
    assert_eq!(tape.shape(logits), &[1, d.vocab]);
}

#[test]
fn causality_future_tokens_do_not_move_logits() {
    let d = dims();
    let store = init(&d, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let len = rng.gen_range(2..8usize);
        let pos = rng.gen_range(0..len - 1);
        let mut tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..d.vocab)).collect();

        let z_data: Vec<f64> = (0..3 * d.d_prime).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let logits_at = |tokens: &[usize], tape: &mut Tape| {
            let bound = store.bind(tape).unwrap();
            let z = tape.constant(z_data.clone(), &[3, d.d_prime]).unwrap();
            let all = decoder_logits(tape, &bound, z, tokens, &d).unwrap();
            tape.data(all)[pos * d.vocab..(pos + 1) * d.vocab].to_vec()
        };

        let mut tape_a = Tape::new();
        let before = logits_at(&tokens, &mut tape_a);
        // Rewrite everything strictly after `pos`.
        for t in tokens.iter_mut().skip(pos + 1) {
            *t = (*t + 1 + rng.gen_range(0..d.vocab - 1)) % d.vocab;
        }
        let mut tape_b = Tape::new();
        let after = logits_at(&tokens, &mut tape_b);
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(a, b, "future tokens leaked into position {pos}");
        }
    }
}

#[test]
fn prompt_is_live() {
    let d = dims();
    let mut store = init(&d, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let z_data: Vec<f64> = (0..4 * d.d_prime).map(|_| rng.gen_range(-1.0..1.0)).collect();
    store.insert("input.z", Tensor::param(z_data.clone(), &[4, d.d_prime]).unwrap());

    let mut tape = Tape::new();
    let bound = store.bind(&mut tape).unwrap();
    let z = bound.var("input.z");
    let reference = TokenSequence { tokens: vec![BOS, 5, 6, 7, EOS] };
    let loss = sequence_loss(&mut tape, &bound, z, &reference, &d).unwrap();
    tape.backward(loss).unwrap();
    let gz = tape.grad(z).expect("prompt gradient");
    let max = gz.iter().fold(0.0f64, |a, &g| a.max(g.abs()));
    assert!(max > 0.0, "loss gradient w.r.t. Z vanished");

    // Zeroing Z must change the logits: the prompt is actually read.
    let mut tape2 = Tape::new();
    let bound2 = store.bind(&mut tape2).unwrap();
    let zeros = tape2.constant(vec![0.0; 4 * d.d_prime], &[4, d.d_prime]).unwrap();
    let l_zero = decode_step(&mut tape2, &bound2, zeros, &[BOS, 5], &d).unwrap();
    let mut tape3 = Tape::new();
    let bound3 = store.bind(&mut tape3).unwrap();
    let zv = tape3.constant(z_data, &[4, d.d_prime]).unwrap();
    let l_rand = decode_step(&mut tape3, &bound3, zv, &[BOS, 5], &d).unwrap();
    let delta = tape2
        .data(l_zero)
        .iter()
        .zip(tape3.data(l_rand))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(delta > 1e-9, "prompt contents do not reach the logits");
}

#[test]
fn generation_is_deterministic_and_terminates() {
    let d = dims();
    let store = init(&d, 14);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let z: Vec<f64> = (0..2 * d.d_prime).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a = generate(&store, &z, 2, &d, 10).unwrap();
    let b = generate(&store, &z, 2, &d, 10).unwrap();
    assert_eq!(a, b);
    assert!(a.len() <= 10);
    if let Some(&last) = a.tokens.last() {
        // Either the cap hit or EOS ended it; EOS may appear only last.
        assert!(a.tokens.iter().filter(|&&t| t == EOS).count() <= 1);
        let _ = last;
    }
}

#[test]
fn forced_eos_head_generates_the_empty_report() {
    let d = dims();
    let mut store = init(&d, 16);
    // Rig the output head so EOS always wins.
    let mut bias = vec![0.0; d.vocab];
    bias[EOS] = 50.0;
    *store.get_mut("decoder.out.w") =
        Tensor::param(vec![0.0; d.d_prime * d.vocab], &[d.d_prime, d.vocab]).unwrap();
    *store.get_mut("decoder.out.b") = Tensor::param(bias, &[d.vocab]).unwrap();

    let z = vec![0.1; 2 * d.d_prime];
    let out = generate(&store, &z, 2, &d, 10).unwrap();
    assert_eq!(out.tokens, vec![EOS]);
}

#[test]
fn argmax_ties_break_to_lowest_index() {
    assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0, 2.0]), 1);
    assert_eq!(argmax_lowest(&[5.0, 5.0]), 0);
}

#[test]
fn sequence_loss_excludes_pad_targets() {
    let d = dims();
    let store = init(&d, 17);
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let z_data: Vec<f64> = (0..2 * d.d_prime).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let run = |tokens: Vec<usize>| {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape).unwrap();
        let z = tape.constant(z_data.clone(), &[2, d.d_prime]).unwrap();
        let loss = sequence_loss(&mut tape, &bound, z, &TokenSequence { tokens }, &d).unwrap();
        tape.value(loss)
    };
    // Padding the reference cannot change the mean as long as the PAD
    // positions are the only additions... they are excluded, but they
    // do sit behind the same prefix, so compare against the hand mean.
    let base = run(vec![BOS, 5, 6, EOS]);
    assert!(base.is_finite() && base > 0.0);
    let padded = run(vec![BOS, 5, 6, EOS, PAD]);
    // The PAD target adds no loss term; earlier positions see the same
    // prefix, so the two means agree.
    assert!((base - padded).abs() < 1e-12);
}

#[test]
fn decoder_gradients_match_finite_differences() {
    let d = DecoderDims { d_prime: 4, layers: 1, heads: 2, vocab: 8, max_len: 8 };
    let mut store = init(&d, 19);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let z_data: Vec<f64> = (0..2 * d.d_prime).map(|_| rng.gen_range(-1.0..1.0)).collect();
    store.insert("input.z", Tensor::param(z_data, &[2, d.d_prime]).unwrap());

    let report = crate::tensor::gradient_check(&mut store, 1e-5, move |p, tape| {
        let bound = p.bind(tape)?;
        let reference = TokenSequence { tokens: vec![BOS, 4, 5, 6, EOS] };
        let loss = sequence_loss(tape, &bound, bound.var("input.z"), &reference, &d)?;
        Ok((loss, bound))
    })
    .unwrap();
    assert!(report.max_rel_err <= 1e-4, "rel err {} at {}", report.max_rel_err, report.worst_param);
}

#[test]
fn tokenizer_pipeline_feeds_decoder() {
    let d = dims();
    let store = init(&d, 21);
    let vocab = Vocabulary::from_words(&["a", "disk", "is", "seen", "."]);
    assert!(vocab.len() <= d.vocab);
    let seq = tokenize("a disk is seen .", &vocab);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape).unwrap();
    let z = tape.constant(vec![0.3; d.d_prime], &[1, d.d_prime]).unwrap();
    let loss = sequence_loss(&mut tape, &bound, z, &seq, &d).unwrap();
    assert!(tape.value(loss).is_finite());
}
