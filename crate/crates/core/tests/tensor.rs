mod common;

use std::time::Instant;

use common::gradcases::{LOSSES, OPS};
use mfqe_core::tensor::{
    grad_check, nn, params_from_bytes, params_to_bytes, parse_manifest, manifest_text, sgd_step, Adam,
    GradCheckOptions, Graph, Padding, ParamSet, Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn building_blocks_pass_gradient_checks() {
    for (name, case) in OPS {
        for seed in 0..4 {
            let r = case(seed).unwrap();
            assert!(r.max_rel_error < 1e-4, "{name} seed {seed}: {r:?}");
            assert!(r.checked > 0, "{name} seed {seed}: nothing checked");
        }
    }
}

#[test]
fn training_losses_pass_gradient_checks() {
    for (name, case) in LOSSES {
        let t = Instant::now();
        let r = case(100).unwrap();
        assert!(r.max_rel_error < 1e-4, "{name}: {r:?}");
        assert!(r.checked >= 20, "{name}: {r:?}");
        eprintln!("{name}: {r:?} in {:?}", t.elapsed());
    }
}

#[test]
fn square_at_three() {
    let mut p = ParamSet::new(0);
    p.insert("x", Tensor::scalar(3.0).trainable()).unwrap();
    let opts = GradCheckOptions { eps: 1e-3, ..Default::default() };
    let r = grad_check(&p, &opts, |g, p| {
        let x = g.param(p, "x")?;
        g.mul(x, x)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-6);
}

#[test]
fn conv_prelu_stack_on_a_small_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut p = ParamSet::new(0);
    nn::add_conv(&mut p, &mut rng, "c1", 4, 6, 3).unwrap();
    nn::add_prelu(&mut p, "c1", 6).unwrap();
    nn::add_conv(&mut p, &mut rng, "c2", 6, 2, 3).unwrap();
    let x: Vec<f64> = (0..256).map(|_| rng.gen_range(0.0..1.0)).collect();
    let target: Vec<f64> = (0..128).map(|_| rng.gen_range(0.0..1.0)).collect();
    let r = grad_check(&p, &GradCheckOptions::default(), |g, p| {
        let x = g.input(vec![1, 4, 8, 8], x.clone())?;
        let y = nn::conv(g, p, "c1", x)?;
        let y = nn::prelu(g, p, "c1", y)?;
        let y = nn::conv(g, p, "c2", y)?;
        let t = g.input(vec![1, 2, 8, 8], target.clone())?;
        g.mse(y, t)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn hand_values() {
    let mut g = Graph::new();
    let ones = g.input(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
    let k = g.input(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
    let y = g.conv2d(ones, k, None, 1, Padding::Valid).unwrap();
    assert_eq!(g.value(y), &[9.0]);

    let x = g.input(vec![1, 1, 1, 1], vec![-2.0]).unwrap();
    let a = g.input(vec![1], vec![0.25]).unwrap();
    let y = g.prelu(x, a).unwrap();
    assert_eq!(g.value(y), &[-0.5]);

    let a = g.input(vec![2], vec![1.0, 2.0]).unwrap();
    let b = g.input(vec![2], vec![1.0, 4.0]).unwrap();
    let m = g.mse(a, b).unwrap();
    assert_eq!(g.scalar(m), 2.0);

    let img = g.input(vec![1, 1, 2, 2], vec![0.0, 10.0, 20.0, 30.0]).unwrap();
    let c = g.input(vec![1, 2, 1, 1], vec![0.5, 0.5]).unwrap();
    let s = g.bilinear_sample(img, c).unwrap();
    assert!((g.value(s)[0] - 15.0).abs() < 1e-12);
}

#[test]
fn prelu_slope_gradient_is_the_input() {
    let mut p = ParamSet::new(0);
    p.insert("alpha", Tensor::new(vec![1], vec![0.25]).unwrap().trainable()).unwrap();
    let mut g = Graph::new();
    let x = g.input(vec![1, 1, 1, 1], vec![-2.0]).unwrap();
    let y = nn::prelu(&mut g, &p, "", x);
    assert!(y.is_err(), "prefix `` has no `.alpha` entry");
    let a = g.param(&p, "alpha").unwrap();
    let y = g.prelu(x, a).unwrap();
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(a).unwrap(), &[-2.0]);
}

#[test]
fn batchnorm_normalizes_two_values() {
    let mut p = ParamSet::new(0);
    nn::add_batchnorm(&mut p, "bn", 1).unwrap();
    let mut g = Graph::new();
    let x = g.input(vec![2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
    let y = nn::batchnorm(&mut g, &p, "bn", x, true).unwrap();
    let expected = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!((g.value(y)[0] + expected).abs() < 1e-12);
    assert!((g.value(y)[1] - expected).abs() < 1e-12);
}

#[test]
fn lstm_with_zero_parameters_stays_at_zero() {
    let mut p = ParamSet::new(0);
    nn::add_lstm(&mut p, &mut ChaCha8Rng::seed_from_u64(0), "f", 3, 32).unwrap();
    nn::add_lstm(&mut p, &mut ChaCha8Rng::seed_from_u64(1), "b", 3, 32).unwrap();
    p.zero_values();
    let mut g = Graph::new();
    let lv = nn::lstm_vars(&mut g, &p, "f").unwrap();
    let x = g.input(vec![1, 3], vec![0.3, -2.0, 5.0]).unwrap();
    let h = g.input(vec![1, 32], vec![0.0; 32]).unwrap();
    let (h1, _) = nn::lstm_step(&mut g, x, h, h, &lv).unwrap();
    assert!(g.value(h1).iter().all(|&v| v == 0.0));

    let bv = nn::lstm_vars(&mut g, &p, "b").unwrap();
    let xs = g.input(vec![5, 3], (0..15).map(f64::from).collect()).unwrap();
    let y = nn::bidirectional(&mut g, xs, &lv, &bv).unwrap();
    assert_eq!(g.shape(y), &[5, 64]);
    assert!(g.value(y).iter().all(|&v| v == 0.0));
}

#[test]
fn bidirectional_single_step_and_reversal() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut p = ParamSet::new(0);
    nn::add_lstm(&mut p, &mut rng, "f", 2, 3).unwrap();
    nn::add_lstm(&mut p, &mut rng, "b", 2, 3).unwrap();
    let xs: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut g = Graph::new();
    let (f, b) = (nn::lstm_vars(&mut g, &p, "f").unwrap(), nn::lstm_vars(&mut g, &p, "b").unwrap());
    let one = g.input(vec![1, 2], xs[..2].to_vec()).unwrap();
    let y = nn::bidirectional(&mut g, one, &f, &b).unwrap();
    let zero = g.input(vec![1, 3], vec![0.0; 3]).unwrap();
    let (hf, _) = nn::lstm_step(&mut g, one, zero, zero, &f).unwrap();
    let (hb, _) = nn::lstm_step(&mut g, one, zero, zero, &b).unwrap();
    assert_eq!(&g.value(y)[..3], g.value(hf));
    assert_eq!(&g.value(y)[3..], g.value(hb));

    let fwd = g.input(vec![3, 2], xs.clone()).unwrap();
    let rev: Vec<f64> = xs.chunks(2).rev().flatten().copied().collect();
    let rev = g.input(vec![3, 2], rev).unwrap();
    let y = nn::bidirectional(&mut g, fwd, &f, &b).unwrap();
    let y_swapped = nn::bidirectional(&mut g, rev, &b, &f).unwrap();
    let (a, s) = (g.value(y).to_vec(), g.value(y_swapped).to_vec());
    for t in 0..3 {
        let row = &a[t * 6..t * 6 + 6];
        let mirror = &s[(2 - t) * 6..(2 - t) * 6 + 6];
        assert_eq!(&row[..3], &mirror[3..]);
        assert_eq!(&row[3..], &mirror[..3]);
    }
}

#[test]
fn optimizers() {
    let mut p = ParamSet::new(0);
    let mut w = Tensor::scalar(1.0).trainable();
    w.set_grad(Some(vec![0.5]));
    p.insert("w", w).unwrap();
    sgd_step(&mut p, 0.1).unwrap();
    assert!((p.get("w").unwrap().values()[0] - 0.95).abs() < 1e-15);

    for g0 in [1e-3, 0.7, 250.0] {
        let mut p = ParamSet::new(0);
        let mut w = Tensor::scalar(1.0).trainable();
        w.set_grad(Some(vec![g0]));
        p.insert("w", w).unwrap();
        let mut adam = Adam::new(0.01);
        adam.step(&mut p).unwrap();
        let moved = 1.0 - p.get("w").unwrap().values()[0];
        assert!((moved - 0.01).abs() < 1e-4, "grad {g0}: moved {moved}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..9, seed in any::<u64>(), scale in 0.1f64..300.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let x = g.input(vec![rows, cols], (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap();
        let y = g.softmax(x).unwrap();
        for r in g.value(y).chunks(cols) {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn parameter_blobs_roundtrip(seed in any::<u64>(), n in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new(seed);
        for i in 0..n {
            let shape: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(1..4)).collect();
            let len = shape.iter().product();
            let mut t = Tensor::new(shape, (0..len).map(|_| rng.gen::<f64>() * 1e6 - 5e5).collect()).unwrap();
            if rng.gen() {
                t = t.trainable();
            }
            p.insert(format!("p{i}.w"), t).unwrap();
        }
        let (s, entries) = parse_manifest(&manifest_text(&p)).unwrap();
        let back = params_from_bytes(s, &entries, &params_to_bytes(&p)).unwrap();
        prop_assert_eq!(back.rng_seed(), seed);
        for ((na, ta), (nb, tb)) in p.iter().zip(back.iter()) {
            prop_assert_eq!(na, nb);
            prop_assert_eq!(ta.shape(), tb.shape());
            prop_assert_eq!(ta.requires_grad(), tb.requires_grad());
            prop_assert!(ta.values().iter().zip(tb.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
