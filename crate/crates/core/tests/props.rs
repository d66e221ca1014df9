//! Property tests for the structural invariants: packing round trips,
//! permutation inverses, bounded-activation ranges, and forward-op
//! finiteness on bounded inputs.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vxc_core::binarizer::{pack_bits, unpack_bits, BinaryCode};
use vxc_core::metrics::{iou, IOU_TAU};
use vxc_core::{Tape, Tensor};

proptest! {
    #[test]
    fn pack_unpack_identity(bits in prop::collection::vec(prop::bool::ANY, 1..600)) {
        let signed: Vec<i8> = bits.iter().map(|&b| if b { 1 } else { -1 }).collect();
        let m = signed.len();
        let code = BinaryCode::new(signed, vec![m]).unwrap();
        let packed = pack_bits(&code);
        prop_assert_eq!(packed.len(), m.div_ceil(8));
        let back = unpack_bits(&packed, m, vec![m]).unwrap();
        prop_assert_eq!(&code, &back);
    }

    #[test]
    fn depth_to_space_round_trip(
        b in 1usize..3,
        c in 1usize..4,
        h in 1usize..5,
        w in 1usize..5,
        seed in 0u64..1000,
    ) {
        let k = 2usize;
        let channels = c * k * k;
        let mut t = Tensor::<f64>::zeros(vec![b, channels, h, w]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        t.fill_uniform(10.0, &mut rng);
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone(), false);
        let y = tape.depth_to_space(x, k).unwrap();
        let z = tape.space_to_depth(y, k).unwrap();
        prop_assert_eq!(tape.value(z).data(), t.data());
    }

    #[test]
    fn forward_ops_stay_finite_on_bounded_inputs(seed in 0u64..300) {
        // push bounded random data through every forward primitive
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Tensor::<f64>::zeros(vec![2, 4, 4, 4]);
        x.fill_uniform(50.0, &mut rng);
        let mut w = Tensor::<f64>::zeros(vec![4, 4, 3, 3]);
        w.fill_uniform(5.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.leaf(x, false);
        let wv = tape.leaf(w, false);
        let c = tape.conv2d(xv, wv, None, 1, 1).unwrap();
        let s = tape.sigmoid(c);
        let t = tape.tanh(s);
        let l = tape.leaky_relu(t, 0.01);
        let m = tape.maxpool2d(l, 2, 2).unwrap();
        let sm = tape.softmax_channels(m).unwrap();
        let d2s = tape.depth_to_space(c, 2).unwrap();
        let total = tape.sum(d2s);
        let mean = tape.mean(sm);
        for v in [c, s, t, l, m, sm, d2s, total, mean] {
            prop_assert!(tape.value(v).all_finite());
        }
    }

    #[test]
    fn sigmoid_tanh_ranges(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Tensor::<f64>::zeros(vec![64]);
        x.fill_uniform(300.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.leaf(x, false);
        let s = tape.sigmoid(xv);
        let t = tape.tanh(xv);
        for &v in tape.value(s).data() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        for &v in tape.value(t).data() {
            prop_assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn iou_invariant_under_threshold_preserving_monotone_map(
        seed in 0u64..400,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let n = 64;
        let p: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let truth: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
        let base = iou(&p, &truth, IOU_TAU);
        // squash toward the threshold without crossing it
        let mapped: Vec<f64> = p
            .iter()
            .map(|&v| if v > IOU_TAU { IOU_TAU + (v - IOU_TAU) * 0.01 } else { IOU_TAU - (IOU_TAU - v) * 0.01 })
            .collect();
        prop_assert_eq!(iou(&mapped, &truth, IOU_TAU), base);
    }

    #[test]
    fn binarize_infer_is_sign_with_positive_tie(seed in 0u64..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Tensor::<f64>::zeros(vec![32]);
        x.fill_uniform(1.0, &mut rng);
        x.data_mut()[0] = 0.0; // force the tie case
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let b = tape.binarize_infer(xv).unwrap();
        for (out, inp) in tape.value(b).data().iter().zip(x.data()) {
            let expect = if *inp >= 0.0 { 1.0 } else { -1.0 };
            prop_assert_eq!(*out, expect);
        }
    }
}

#[test]
fn binarizer_expectation_matches_input() {
    // E[b(x)] = x within 3 standard errors at several x values
    let n = 20_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(12345);
    for &x in &[-0.8, -0.25, 0.0, 0.4, 0.95] {
        let t = Tensor::<f64>::full(vec![n], x);
        let mut tape = Tape::new();
        let v = tape.leaf(t, false);
        let b = tape.binarize_train(v, &mut rng).unwrap();
        let mean: f64 = tape.value(b).data().iter().sum::<f64>() / n as f64;
        let se = ((1.0 - x * x) / n as f64).sqrt().max(1e-12);
        assert!(
            (mean - x).abs() <= 3.0 * se || (mean - x).abs() < 1e-9,
            "x={x}: mean {mean}, se {se}"
        );
    }
}

#[test]
fn lstm_sequence_is_deterministic_function_of_inputs() {
    use vxc_core::cells::{LstmCell, LstmState};
    use vxc_core::ParamSet;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ps = ParamSet::<f64>::new();
    let cell = LstmCell::init("l", 2, 3, &mut ps, &mut rng);
    let xs: Vec<Tensor<f64>> = (0..4)
        .map(|_| {
            let mut t = Tensor::<f64>::zeros(vec![1, 2]);
            t.fill_uniform(1.0, &mut rng);
            t
        })
        .collect();
    let run = || {
        let mut tape = Tape::new();
        let bind = tape.bind(&ps);
        let mut st = LstmState::zeros(&mut tape, vec![1, 3]);
        for x in &xs {
            let xv = tape.constant(x.clone());
            st = cell.step(&mut tape, &bind, xv, &st).unwrap();
        }
        (tape.value(st.h).clone(), tape.value(st.c).clone())
    };
    let (h1, c1) = run();
    let (h2, c2) = run();
    assert_eq!(h1.data(), h2.data());
    assert_eq!(c1.data(), c2.data());
}
