//! Finite-difference oracles and structural properties of the tape.

use feederlab_tensor::{
    grad_check, grad_check_masked, AdamState, Gradients, ParamStore, Tape, Tensor,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

#[test]
fn quadratic_form_gradient_matches_fd() {
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    store.add_uniform("w", &[4, 4], 4, &mut rng);
    store.add_uniform("x", &[4, 1], 4, &mut rng);
    let report = grad_check(
        &mut store,
        |store, tape| {
            let w = tape.param(store.lookup("w").unwrap());
            let x = tape.param(store.lookup("x").unwrap());
            let wx = tape.matmul(w, x)?;
            let xt = tape.transpose(x)?;
            let q = tape.matmul(xt, wx)?;
            Ok(tape.reduce_sum(q))
        },
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-8, "rel err {}", report.max_rel_err);
}

#[test]
fn mlp_composite_gradient_matches_fd() {
    for seed in 0..5 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        store.add_uniform("w1", &[6, 8], 6, &mut rng);
        store.add_uniform("b1", &[8], 6, &mut rng);
        store.add_uniform("w2", &[8, 3], 8, &mut rng);
        store.add_uniform("b2", &[3], 8, &mut rng);
        let input = Tensor::uniform_fan_in(&[5, 6], 1, &mut rng);
        let target = Tensor::uniform_fan_in(&[5, 3], 1, &mut rng);

        let report = grad_check(
            &mut store,
            move |store, tape| {
                let x = tape.constant(input.clone());
                let w1 = tape.param(store.lookup("w1").unwrap());
                let b1 = tape.param(store.lookup("b1").unwrap());
                let w2 = tape.param(store.lookup("w2").unwrap());
                let b2 = tape.param(store.lookup("b2").unwrap());
                let h = tape.matmul(x, w1)?;
                let h = tape.add_row_broadcast(h, b1)?;
                let h = tape.tanh(h);
                let y = tape.matmul(h, w2)?;
                let y = tape.add_row_broadcast(y, b2)?;
                let t = tape.constant(target.clone());
                let d = tape.sub(y, t)?;
                let sq = tape.mul(d, d)?;
                Ok(tape.reduce_mean(sq))
            },
            1e-5,
        )
        .unwrap();
        assert!(
            report.max_rel_err < 1e-4,
            "seed {seed}: rel err {}",
            report.max_rel_err
        );
    }
}

#[test]
fn softmax_cross_entropy_style_gradient_matches_fd() {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    store.add_uniform("logits_w", &[4, 6], 4, &mut rng);
    let x = Tensor::uniform_fan_in(&[2, 4], 1, &mut rng);
    let report = grad_check(
        &mut store,
        move |store, tape| {
            let xv = tape.constant(x.clone());
            let w = tape.param(store.lookup("logits_w").unwrap());
            let logits = tape.matmul(xv, w)?;
            let probs = tape.softmax_last_axis(logits);
            let lp = tape.exp(probs); // smooth stand-in for a log-loss head
            Ok(tape.reduce_mean(lp))
        },
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-4, "rel err {}", report.max_rel_err);
}

#[test]
fn conv1d_gradient_matches_fd() {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    store.add_uniform("kernel", &[3, 2, 4], 6, &mut rng);
    store.add_uniform("bias", &[4], 6, &mut rng);
    let x = Tensor::uniform_fan_in(&[5, 3, 2], 1, &mut rng);
    let report = grad_check(
        &mut store,
        move |store, tape| {
            let xv = tape.constant(x.clone());
            let k = tape.param(store.lookup("kernel").unwrap());
            let b = tape.param(store.lookup("bias").unwrap());
            let y = tape.conv1d_time(xv, k, b)?;
            let t = tape.tanh(y);
            Ok(tape.reduce_mean(t))
        },
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-4, "rel err {}", report.max_rel_err);
}

#[test]
fn relu_kink_is_excludable() {
    let mut store = ParamStore::new();
    store.add("x", Tensor::from_vec(vec![0.0, 1.0, -1.0]));
    let report = grad_check_masked(
        &mut store,
        |store, tape| {
            let x = tape.param(store.lookup("x").unwrap());
            let r = tape.relu(x);
            Ok(tape.reduce_sum(r))
        },
        1e-5,
        |name, idx| name == "x" && idx == 0, // the entry at exactly 0
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-10);
}

#[test]
fn conv1d_with_centered_delta_kernel_is_identity() {
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let x = Tensor::uniform_fan_in(&[7, 4, 3], 1, &mut rng);
    let xv = tape.constant(x.clone());
    // kernel [3, 3, 3]: delta at the center tap, identity channel map
    let mut kd = vec![0.0; 3 * 3 * 3];
    for c in 0..3 {
        kd[(1 * 3 + c) * 3 + c] = 1.0;
    }
    let k = tape.constant(Tensor::new(vec![3, 3, 3], kd).unwrap());
    let b = tape.constant(Tensor::zeros(&[3]));
    let y = tape.conv1d_time(xv, k, b).unwrap();
    for (a, b) in tape.value(y).data().iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = ChaCha12Rng::seed_from_u64(17);
    let mut store = ParamStore::new();
    store.add_uniform("layer.weight", &[7, 3], 7, &mut rng);
    store.add_uniform("layer.bias", &[3], 7, &mut rng);
    store.add("odd/name-1", Tensor::from_vec(vec![f64::MIN_POSITIVE, -0.0, 1e300]));

    let dir = tempfile::tempdir().unwrap();
    feederlab_tensor::checkpoint::save(&store, dir.path()).unwrap();
    let loaded = feederlab_tensor::checkpoint::load(dir.path()).unwrap();

    assert_eq!(store.len(), loaded.len());
    for ((n1, t1), (n2, t2)) in store.iter().zip(loaded.iter()) {
        assert_eq!(n1, n2);
        assert_eq!(t1.shape(), t2.shape());
        for (a, b) in t1.data().iter().zip(t2.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn backward_is_deterministic() {
    let mut rng = ChaCha12Rng::seed_from_u64(23);
    let mut store = ParamStore::new();
    store.add_uniform("w", &[6, 6], 6, &mut rng);
    let x = Tensor::uniform_fan_in(&[6, 1], 1, &mut rng);

    let run = |store: &ParamStore| -> Vec<u64> {
        let mut tape = Tape::new(store);
        let w = tape.param(store.lookup("w").unwrap());
        let xv = tape.constant(x.clone());
        let y = tape.matmul(w, xv).unwrap();
        let s = tape.sigmoid(y);
        let loss = tape.reduce_sum(s);
        let grads = tape.backward(loss).unwrap();
        grads
            .get(store.lookup("w").unwrap())
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect()
    };
    assert_eq!(run(&store), run(&store));
}

#[test]
fn adam_with_gradient_clip_keeps_parameters_finite() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::from_vec(vec![1.0, -1.0]));
    let mut adam = AdamState::new(&store, 1e-2);
    // Simulate an exploding gradient.
    let mut g = Gradients::zeros_like(&store);
    g.accumulate(id, &Tensor::from_vec(vec![1e30, -1e30]));
    g.clip_global_norm(10.0);
    assert!((g.global_norm() - 10.0).abs() < 1e-9);
    adam.step(&mut store, &g);
    assert!(store.value(id).data().iter().all(|v| v.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    // Gradient linearity: grad of (alpha f + beta g) = alpha grad f + beta grad g.
    #[test]
    fn gradient_linearity(alpha in -2.0..2.0f64, beta in -2.0..2.0f64, seed in 0u64..50) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let w = store.add_uniform("w", &[3, 3], 3, &mut rng);
        let x = Tensor::uniform_fan_in(&[3, 1], 1, &mut rng);

        let grad_of = |store: &ParamStore, a: f64, b: f64| -> Vec<f64> {
            let mut tape = Tape::new(store);
            let wv = tape.param(w);
            let xv = tape.constant(x.clone());
            let y = tape.matmul(wv, xv).unwrap();
            // f = sum(tanh(Wx)), g = sum((Wx)^2)
            let f = tape.tanh(y);
            let f = tape.reduce_sum(f);
            let g2 = tape.mul(y, y).unwrap();
            let g2 = tape.reduce_sum(g2);
            let fa = tape.scale(f, a);
            let gb = tape.scale(g2, b);
            let loss = tape.add(fa, gb).unwrap();
            let grads = tape.backward(loss).unwrap();
            grads.get(w).into_data()
        };

        let combined = grad_of(&store, alpha, beta);
        let gf = grad_of(&store, 1.0, 0.0);
        let gg = grad_of(&store, 0.0, 1.0);
        for i in 0..combined.len() {
            let expected = alpha * gf[i] + beta * gg[i];
            prop_assert!((combined[i] - expected).abs() < 1e-9 * (1.0 + expected.abs()));
        }
    }

    // Permuting then inverse-permuting is the identity.
    #[test]
    fn permute3_round_trip(seed in 0u64..100) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = Tensor::uniform_fan_in(&[2, 3, 4], 1, &mut rng);
        let xv = tape.constant(x.clone());
        for perm in [[1usize, 2, 0], [2, 0, 1], [0, 2, 1], [1, 0, 2], [2, 1, 0]] {
            let mut inverse = [0usize; 3];
            for (i, &p) in perm.iter().enumerate() {
                inverse[p] = i;
            }
            let fwd = tape.permute3(xv, perm).unwrap();
            let back = tape.permute3(fwd, inverse).unwrap();
            prop_assert_eq!(tape.value(back).data(), x.data());
        }
    }
}
