//! Scratch capacity probe for the grid+decoder path (not in final suite).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vxc_core::data::{build_dataset, Split};
use vxc_core::recon3d::{recon_loss, Recon3DConfig, ReconNet};
use vxc_core::train::{adam_step, clip_global_norm, load_split_cache, AdamState};
use vxc_core::{ParamSet, Tape, Tensor};

#[test]
#[ignore]
fn grid_decoder_memorization() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = build_dataset(tmp.path(), 4, 1, 1, 42, 32, 32, 32).unwrap();
    let cache = load_split_cache(&manifest, Split::Train).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = Recon3DConfig::desk(32, 32);
    let mut ps = ParamSet::<f32>::new();
    let net = ReconNet::init(cfg.clone(), None, 64, &mut ps, &mut rng).unwrap();

    // four fixed, well-separated binary codes
    let mut codes = Vec::new();
    for _ in 0..4 {
        let mut c = Tensor::<f32>::zeros(vec![1, 64]);
        use rand::Rng;
        for v in c.data_mut() {
            *v = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        }
        codes.push(c);
    }
    let targets: Vec<Tensor<f32>> = cache
        .iter()
        .map(|e| Tensor::from_vec(vec![1, 32768], e.target.clone()).unwrap())
        .collect();

    let mut adam = AdamState::new(&ps);
    let steps: usize = std::env::var("STEPS").ok().and_then(|s| s.parse().ok()).unwrap_or(80);
    let lr: f64 = std::env::var("LR").ok().and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    for step in 0..steps {
        let i = step % 4;
        let mut tape = Tape::new();
        let bind = tape.bind(&ps);
        let x = tape.constant(codes[i].clone());
        let h = net.fuse_views(&mut tape, &bind, &[x]).unwrap();
        let p = net.decode_occupancy(&mut tape, &bind, h.h).unwrap();
        let loss = recon_loss(&mut tape, p, &targets[i]).unwrap();
        if step % 16 == 0 {
            println!("step {step}: loss {:.4}", tape.value(loss).item());
        }
        tape.backward(loss).unwrap();
        let mut grads: Vec<Tensor<f32>> = ps
            .ids()
            .collect::<Vec<_>>()
            .into_iter()
            .map(|id| tape.param_grad(&bind, id, ps.value(id).shape()))
            .collect();
        clip_global_norm(&mut grads, 5.0);
        adam_step(&mut ps, &grads, &mut adam, lr, 0.9, 0.999, 1e-8).unwrap();
    }
    // final per-example loss and IoU
    for i in 0..4 {
        let mut tape = Tape::new();
        let bind = tape.bind(&ps);
        let x = tape.constant(codes[i].clone());
        let h = net.fuse_views(&mut tape, &bind, &[x]).unwrap();
        let p = net.decode_occupancy(&mut tape, &bind, h.h).unwrap();
        let loss = recon_loss(&mut tape, p, &targets[i]).unwrap();
        let probs = tape.value(p).as_f64_vec();
        let truth: Vec<bool> = cache[i].target.iter().map(|&v| v > 0.5).collect();
        let iou = vxc_core::metrics::iou(&probs, &truth, 0.4);
        println!("ex{i}: loss {:.4} iou {:.3}", tape.value(loss).item(), iou);
    }
}
