//! Central-finite-difference verification of every differentiable
//! primitive and of the composite network blocks, all at 64-bit.
//!
//! Primitives are held to 1e-5 over repeated random trials; composites
//! (unrolled recurrences, codec step, reconstruction pipeline, the three
//! joint forwards) to 1e-4 on parameter slices. Quantizing composites run
//! with the binarizer bypassed (its expectation is the identity, which is
//! exactly what the straight-through gradient differentiates); the
//! straight-through contract itself is asserted bitwise elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vxc_core::cells::{ConvLstm2dCell, Lstm3dGrid, LstmCell, LstmState, RnnCell};
use vxc_core::codec::{CodeMode, CodecConfig, CodecNet};
use vxc_core::gradcheck::{grad_check, grad_check_params, param_slice};
use vxc_core::joint::{JointConfig, JointModel, ModelKind};
use vxc_core::recon3d::{recon_loss, Recon3DConfig, ReconNet};
use vxc_core::{ParamSet, Tape, Tensor};

const H_STEP: f64 = 1e-5;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_t(shape: Vec<usize>, scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = Tensor::<f64>::zeros(shape);
    t.fill_uniform(scale, rng);
    t
}

#[test]
fn matmul_gradient_100_trials() {
    let mut r = rng(100);
    for trial in 0..100 {
        let (m, k, n) = (2 + trial % 3, 2 + trial % 4, 1 + trial % 3);
        let b = rand_t(vec![k, n], 1.0, &mut r);
        let x = rand_t(vec![m, k], 1.0, &mut r);
        let rep = grad_check(
            "matmul",
            |t, v| {
                let bv = t.constant(b.clone());
                let y = t.matmul(v, bv)?;
                Ok(t.sum(y))
            },
            &x,
            H_STEP,
            1e-6,
        )
        .unwrap();
        assert!(rep.pass, "trial {trial}: {rep}");
    }
}

#[test]
fn matmul_5x7_by_7x3_example() {
    let mut r = rng(57);
    let a = rand_t(vec![5, 7], 1.0, &mut r);
    let b = rand_t(vec![7, 3], 1.0, &mut r);
    // gradient wrt both operands
    let rep = grad_check(
        "matmul-lhs",
        |t, v| {
            let bv = t.constant(b.clone());
            let y = t.matmul(v, bv)?;
            Ok(t.sum(y))
        },
        &a,
        H_STEP,
        1e-6,
    )
    .unwrap();
    assert!(rep.pass, "{rep}");
    let rep = grad_check(
        "matmul-rhs",
        |t, v| {
            let av = t.constant(a.clone());
            let y = t.matmul(av, v)?;
            Ok(t.sum(y))
        },
        &b,
        H_STEP,
        1e-6,
    )
    .unwrap();
    assert!(rep.pass, "{rep}");
}

#[test]
fn conv2d_gradients_input_weight_bias() {
    let mut r = rng(22);
    let x = rand_t(vec![2, 2, 6, 6], 1.0, &mut r);
    let w = rand_t(vec![3, 2, 3, 3], 0.5, &mut r);
    let b = rand_t(vec![3], 0.5, &mut r);
    let rep = grad_check(
        "conv2d-input",
        |t, v| {
            let wv = t.constant(w.clone());
            let bv = t.constant(b.clone());
            let y = t.conv2d(v, wv, Some(bv), 1, 1)?;
            // weight the output so the gradient isn't constant
            let n = t.value(y).numel();
            let coef =
                Tensor::from_vec(t.shape(y).to_vec(), (0..n).map(|i| ((i % 7) as f64) / 3.0 - 1.0).collect())
                    .unwrap();
            let cv = t.constant(coef);
            let p = t.mul(y, cv)?;
            Ok(t.sum(p))
        },
        &x,
        H_STEP,
        1e-5,
    )
    .unwrap();
    assert!(rep.pass, "{rep}");

    let rep = grad_check(
        "conv2d-weight",
        |t, v| {
            let xv = t.constant(x.clone());
            let bv = t.constant(b.clone());
            let y = t.conv2d(xv, v, Some(bv), 1, 1)?;
            let s = t.tanh(y);
            Ok(t.sum(s))
        },
        &w,
        H_STEP,
        1e-5,
    )
    .unwrap();
    assert!(rep.pass, "{rep}");

    // strided case: 4x4 kernel, stride 2, pad 1 divides 6x6 exactly
    let w4 = rand_t(vec![2, 2, 4, 4], 0.4, &mut r);
    let rep = grad_check(
        "conv2d-strided-weight",
        |t, v| {
            let xv = t.constant(x.clone());
            let y = t.conv2d(xv, v, None, 2, 1)?;
            let s = t.tanh(y);
            Ok(t.sum(s))
        },
        &w4,
        H_STEP,
        1e-5,
    )
    .unwrap();
    assert!(rep.pass, "{rep}");

    let rep = grad_check(
        "conv2d-bias",
        |t, v| {
            let xv = t.constant(x.clone());
            let wv = t.constant(w.clone());
            let y = t.conv2d(xv, wv, Some(v), 1, 0)?;
            let s = t.sigmoid(y);
            Ok(t.sum(s))
        },
        &b,
        H_STEP,
        1e-6,
    )
    .unwrap();
    assert!(rep.pass, "{rep}");
}

#[test]
fn conv3d_gradient() {
    let mut r = rng(33);
    let x = rand_t(vec![1, 2, 4, 4, 4], 1.0, &mut r);
    let w = rand_t(vec![2, 2, 3, 3, 3], 0.3, &mut r);
    let rep = grad_check(
        "conv3d-input",
        |t, v| {
            let wv = t.constant(w.clone());
            let y = t.conv3d(v, wv, None, 1, 1)?;
            let s = t.tanh(y);
            Ok(t.sum(s))
        },
        &x,
        H_STEP,
        1e-5,
    )
    .unwrap();
    assert!(rep.pass, "{rep}");
    let rep = grad_check(
        "conv3d-weight",
        |t, v| {
            let xv = t.constant(x.clone());
            let y = t.conv3d(xv, v, None, 1, 1)?;
            let s = t.sigmoid(y);
            Ok(t.sum(s))
        },
        &w,
        H_STEP,
        1e-5,
    )
    .unwrap();
    assert!(rep.pass, "{rep}");
}

#[test]
fn maxpool_gradient_lands_on_window_maxima() {
    // 4x4 with distinct values: gradient of sum hits the 4 maxima only
    let data: Vec<f64> = (0..16).map(|i| (i * 7 % 16) as f64).collect();
    let x = Tensor::from_vec(vec![1, 1, 4, 4], data.clone()).unwrap();
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let y = tape.maxpool2d(xv, 2, 2).unwrap();
    let loss = tape.sum(y);
    tape.backward(loss).unwrap();
    let g = tape.grad(xv).unwrap();
    assert_eq!(g.data().iter().filter(|&&v| v == 1.0).count(), 4);
    assert_eq!(g.data().iter().filter(|&&v| v == 0.0).count(), 12);
    // and finite differences agree away from ties
    let rep = grad_check(
        "maxpool",
        |t, v| {
            let y = t.maxpool2d(v, 2, 2)?;
            Ok(t.sum(y))
        },
        &x,
        1e-5,
        1e-8,
    )
    .unwrap();
    assert!(rep.pass, "{rep}");
}

#[test]
fn elementwise_and_shape_ops_100_trials() {
    let mut r = rng(7);
    for trial in 0..100 {
        let x = rand_t(vec![3, 8], 0.9, &mut r);
        let w = rand_t(vec![3, 8], 0.9, &mut r);
        let rep = grad_check(
            "fused-elementwise",
            |t, v| {
                let wv = t.constant(w.clone());
                let a = t.mul(v, wv)?;
                let b = t.sigmoid(a);
                let c = t.tanh(b);
                let d = t.leaky_relu(c, 0.01);
                let e = t.abs(d);
                let f = t.scale(e, 1.7);
                let g = t.add_scalar(f, 0.3);
                let h = t.sub(g, v)?;
                let i = t.neg(h);
                let j = t.add(i, v)?;
                let k = t.reshape(j, vec![8, 3])?;
                Ok(t.mean(k))
            },
            &x,
            H_STEP,
            1e-5,
        )
        .unwrap();
        assert!(rep.pass, "trial {trial}: {rep}");
    }
}

#[test]
fn softmax_and_select_and_bce_gradient() {
    let mut r = rng(12);
    for trial in 0..20 {
        let x = rand_t(vec![2, 2, 5], 2.0, &mut r);
        let target = Tensor::from_vec(
            vec![2, 5],
            (0..10).map(|i| ((i + trial) % 2) as f64).collect(),
        )
        .unwrap();
        let rep = grad_check(
            "softmax2-select-bce",
            |t, v| {
                let s = t.softmax_channels(v)?;
                let p = t.select_channel(s, 1)?;
                t.bce_mean(p, &target, 1e-7)
            },
            &x,
            H_STEP,
            1e-6,
        )
        .unwrap();
        assert!(rep.pass, "trial {trial}: {rep}");
    }
}

#[test]
fn permutation_ops_gradients() {
    let mut r = rng(4);
    let x = rand_t(vec![1, 8, 2, 2], 1.0, &mut r);
    let rep = grad_check(
        "depth_to_space",
        |t, v| {
            let y = t.depth_to_space(v, 2)?;
            let n = t.value(y).numel();
            let coef = Tensor::from_vec(
                t.shape(y).to_vec(),
                (0..n).map(|i| (i as f64).sin()).collect(),
            )
            .unwrap();
            let cv = t.constant(coef);
            let p = t.mul(y, cv)?;
            Ok(t.sum(p))
        },
        &x,
        H_STEP,
        1e-7,
    )
    .unwrap();
    assert!(rep.pass, "{rep}");

    let x3 = rand_t(vec![1, 2, 2, 2, 2], 1.0, &mut r);
    let rep = grad_check(
        "upsample3d",
        |t, v| {
            let y = t.upsample3d(v, 2)?;
            let s = t.tanh(y);
            Ok(t.sum(s))
        },
        &x3,
        H_STEP,
        1e-6,
    )
    .unwrap();
    assert!(rep.pass, "{rep}");
}

#[test]
fn add_row_and_concat_gradients() {
    let mut r = rng(5);
    let b = rand_t(vec![4], 1.0, &mut r);
    let rep = grad_check(
        "add_row-bias",
        |t, v| {
            let x = t.constant(rand_t(vec![3, 4], 1.0, &mut rng(99)));
            let y = t.add_row(x, v)?;
            let s = t.tanh(y);
            Ok(t.sum(s))
        },
        &b,
        H_STEP,
        1e-6,
    )
    .unwrap();
    assert!(rep.pass, "{rep}");

    let x = rand_t(vec![2, 3], 1.0, &mut r);
    let rep = grad_check(
        "concat_cols",
        |t, v| {
            let other = t.constant(rand_t(vec![2, 2], 1.0, &mut rng(98)));
            let c = t.concat_cols(&[v, other])?;
            let s = t.sigmoid(c);
            Ok(t.sum(s))
        },
        &x,
        H_STEP,
        1e-6,
    )
    .unwrap();
    assert!(rep.pass, "{rep}");
}

// ---------------------------------------------------------------------------
// recurrent composites
// ---------------------------------------------------------------------------

#[test]
fn vanilla_rnn_3_steps_unrolled() {
    let mut r = rng(301);
    let mut ps = ParamSet::<f64>::new();
    let cell = RnnCell::init("rnn", 3, 4, 2, &mut ps, &mut r);
    let xs: Vec<Tensor<f64>> = (0..3).map(|_| rand_t(vec![2, 3], 1.0, &mut r)).collect();
    let elems = param_slice(&ps, 12);
    let rep = grad_check_params(
        "rnn-3-steps",
        |t, b| {
            let mut h = t.zeros(vec![2, 4]);
            let mut total: Option<vxc_core::Var> = None;
            for x in &xs {
                let xv = t.constant(x.clone());
                let (h2, y) = cell.step(t, b, xv, h)?;
                h = h2;
                let s = t.sum(y);
                total = Some(match total {
                    Some(tt) => t.add(tt, s)?,
                    None => s,
                });
            }
            Ok(total.unwrap())
        },
        &mut ps,
        &elems,
        H_STEP,
        1e-5,
    )
    .unwrap();
    assert!(rep.pass, "{rep}");
}

#[test]
fn lstm_4_steps_all_12_parameter_groups() {
    let mut r = rng(401);
    let mut ps = ParamSet::<f64>::new();
    let cell = LstmCell::init("lstm", 3, 4, &mut ps, &mut r);
    let xs: Vec<Tensor<f64>> = (0..4).map(|_| rand_t(vec![1, 3], 1.0, &mut r)).collect();
    // at least one element from each of the 12 parameter groups
    let ids = [
        cell.w_fx, cell.w_fh, cell.w_ix, cell.w_ih, cell.w_ox, cell.w_oh, cell.w_cx,
        cell.w_ch, cell.b_f, cell.b_i, cell.b_o, cell.b_c,
    ];
    let elems: Vec<_> = ids.iter().map(|&id| (id, 0usize)).collect();
    let rep = grad_check_params(
        "lstm-4-steps",
        |t, b| {
            let mut st = LstmState::zeros(t, vec![1, 4]);
            for x in &xs {
                let xv = t.constant(x.clone());
                st = cell.step(t, b, xv, &st)?;
            }
            let sq = t.mul(st.h, st.h)?;
            Ok(t.sum(sq))
        },
        &mut ps,
        &elems,
        H_STEP,
        1e-4,
    )
    .unwrap();
    assert!(rep.pass, "{rep}");
}

#[test]
fn conv_lstm_gradient() {
    let mut r = rng(402);
    let mut ps = ParamSet::<f64>::new();
    let cell = ConvLstm2dCell::init("cl", 2, 3, 4, 2, 1, &mut ps, &mut r);
    let xs: Vec<Tensor<f64>> = (0..2).map(|_| rand_t(vec![1, 2, 8, 8], 1.0, &mut r)).collect();
    let elems = param_slice(&ps, 14);
    let rep = grad_check_params(
        "conv-lstm-2-steps",
        |t, b| {
            let mut st = cell.zero_state(t, 1, 4, 4);
            for x in &xs {
                let xv = t.constant(x.clone());
                st = cell.step(t, b, xv, &st)?;
            }
            let sq = t.mul(st.h, st.h)?;
            Ok(t.sum(sq))
        },
        &mut ps,
        &elems,
        H_STEP,
        1e-4,
    )
    .unwrap();
    assert!(rep.pass, "{rep}");
}

#[test]
fn grid_lstm_2_view_steps() {
    let mut r = rng(403);
    let mut ps = ParamSet::<f64>::new();
    let grid = Lstm3dGrid::init("g", 6, 2, &mut ps, &mut r);
    let xs: Vec<Tensor<f64>> = (0..2).map(|_| rand_t(vec![1, 6], 1.0, &mut r)).collect();
    let elems = param_slice(&ps, 14);
    let rep = grad_check_params(
        "grid-2-views",
        |t, b| {
            let mut st = grid.zero_state(t, 1);
            for x in &xs {
                let xv = t.constant(x.clone());
                st = grid.step(t, b, xv, &st)?;
            }
            let sq = t.mul(st.h, st.h)?;
            Ok(t.sum(sq))
        },
        &mut ps,
        &elems,
        H_STEP,
        1e-4,
    )
    .unwrap();
    assert!(rep.pass, "{rep}");
}

// ---------------------------------------------------------------------------
// codec and reconstruction composites
// ---------------------------------------------------------------------------

#[test]
fn codec_step_end_to_end() {
    // full encode + decode + L1 loss through two iterations, binarizer
    // bypassed (float path); 10-element parameter slice
    let mut r = rng(501);
    let mut ps = ParamSet::<f64>::new();
    let mut cfg = CodecConfig::small(16, 16);
    cfg.n_max = 2;
    let net = CodecNet::init(cfg, &mut ps, &mut r).unwrap();
    let img = {
        let mut t = rand_t(vec![1, 3, 16, 16], 0.5, &mut r);
        for v in t.data_mut() {
            *v += 0.5;
        }
        t
    };
    let elems = param_slice(&ps, 10);
    let rep = grad_check_params(
        "codec-step",
        |t, b| {
            let x = t.constant(img.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let trace = net.compress(t, b, x, 2, CodeMode::Float, &mut rng)?;
            vxc_core::codec::compression_loss(t, &trace.residuals)
        },
        &mut ps,
        &elems,
        H_STEP,
        1e-4,
    )
    .unwrap();
    assert!(rep.pass, "{rep}");
}

fn micro_recon() -> Recon3DConfig {
    Recon3DConfig {
        k_embed: 8,
        n_hidden: 2,
        d_out: 32,
        height: 16,
        width: 16,
        pools: 2,
        enc_widths: vec![4, 4],
        dec_widths: [4, 4, 2],
    }
}

#[test]
fn view_encoder_gradient() {
    let mut r = rng(502);
    let cfg = micro_recon();
    let mut ps = ParamSet::<f64>::new();
    let net = ReconNet::init(cfg.clone(), Some(cfg.k_embed), cfg.k_embed, &mut ps, &mut r).unwrap();
    let img = {
        let mut t = rand_t(vec![1, 3, 16, 16], 0.5, &mut r);
        for v in t.data_mut() {
            *v += 0.5;
        }
        t
    };
    let elems = param_slice(&ps, 10);
    let rep = grad_check_params(
        "encode_view",
        |t, b| {
            let x = t.constant(img.clone());
            let e = net.encode_view(t, b, x)?;
            let s = t.tanh(e);
            let sq = t.mul(s, s)?;
            Ok(t.sum(sq))
        },
        &mut ps,
        &elems,
        H_STEP,
        1e-4,
    )
    .unwrap();
    assert!(rep.pass, "{rep}");
}

#[test]
fn recon_pipeline_gradient_through_decoder() {
    let mut r = rng(503);
    let cfg = micro_recon();
    let mut ps = ParamSet::<f64>::new();
    let net = ReconNet::init(cfg.clone(), Some(cfg.k_embed), cfg.k_embed, &mut ps, &mut r).unwrap();
    let imgs: Vec<Tensor<f64>> = (0..2)
        .map(|_| {
            let mut t = rand_t(vec![1, 3, 16, 16], 0.5, &mut r);
            for v in t.data_mut() {
                *v += 0.5;
            }
            t
        })
        .collect();
    let target = Tensor::from_vec(
        vec![1, 32 * 32 * 32],
        (0..32 * 32 * 32).map(|i| ((i / 1024) % 2) as f64).collect(),
    )
    .unwrap();
    let elems = param_slice(&ps, 10);
    let rep = grad_check_params(
        "recon3d-pipeline",
        |t, b| {
            let embeds = imgs
                .iter()
                .map(|img| {
                    let x = t.constant(img.clone());
                    net.encode_view(t, b, x)
                })
                .collect::<vxc_core::Result<Vec<_>>>()?;
            let hidden = net.fuse_views(t, b, &embeds)?;
            let p = net.decode_occupancy(t, b, hidden.h)?;
            recon_loss(t, p, &target)
        },
        &mut ps,
        &elems,
        H_STEP,
        1e-4,
    )
    .unwrap();
    assert!(rep.pass, "{rep}");
}

// ---------------------------------------------------------------------------
// joint forwards (float-code path for differentiability)
// ---------------------------------------------------------------------------

fn micro_joint(kind: ModelKind) -> JointConfig {
    let (h, w) = (16, 16);
    let mut codec = CodecConfig::small(h, w);
    codec.n_max = 2;
    match kind {
        ModelKind::Implicit => JointConfig {
            kind,
            codec: None,
            recon: micro_recon(),
            k_implicit: Some(8),
            v_max: 2,
            float_code: true,
        },
        _ => JointConfig {
            kind,
            codec: Some(codec),
            recon: micro_recon(),
            k_implicit: None,
            v_max: 2,
            float_code: true,
        },
    }
}

#[test]
fn joint_forwards_gradient_on_parameter_slice() {
    let views: Vec<Tensor<f64>> = (0..2)
        .map(|i| {
            let mut t = rand_t(vec![1, 3, 16, 16], 0.5, &mut rng(600 + i));
            for v in t.data_mut() {
                *v += 0.5;
            }
            t
        })
        .collect();
    let target = Tensor::from_vec(
        vec![1, 32 * 32 * 32],
        (0..32 * 32 * 32).map(|i| ((i / 4096) % 2) as f64).collect(),
    )
    .unwrap();
    for kind in [ModelKind::Sequential, ModelKind::Direct, ModelKind::Implicit] {
        let mut model = JointModel::<f64>::new(micro_joint(kind), 77).unwrap();
        let elems = param_slice(&model.params, 10);
        let views = views.clone();
        let target = target.clone();
        // temporarily move params out to satisfy the borrow checker
        let mut ps = std::mem::replace(&mut model.params, ParamSet::new());
        let rep = grad_check_params(
            kind.name(),
            |t, b| {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let fwd = model.forward(t, b, &views, 2, true, &mut rng)?;
                let parts = model.training_loss(t, &fwd, &target)?;
                Ok(parts.total)
            },
            &mut ps,
            &elems,
            H_STEP,
            1e-4,
        )
        .unwrap();
        model.params = ps;
        assert!(rep.pass, "{rep}");
    }
}
