//! Scratch timing probe (not part of the final suite).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vxc_core::joint::{JointConfig, JointModel};
use vxc_core::{Tape, Tensor};

#[test]
#[ignore]
fn step_timing() {
    let model = JointModel::<f32>::new(JointConfig::desk_implicit(32, 32, 64), 1).unwrap();
    let views: Vec<Tensor<f32>> =
        (0..3).map(|i| Tensor::full(vec![1, 3, 32, 32], 0.3 + 0.1 * i as f32)).collect();
    let target = Tensor::<f32>::full(vec![1, 32 * 32 * 32], 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    for round in 0..3 {
        let t0 = std::time::Instant::now();
        let mut tape = Tape::new();
        let bind = tape.bind(&model.params);
        let fwd = model.forward(&mut tape, &bind, &views, 1, true, &mut rng).unwrap();
        let parts = model.training_loss(&mut tape, &fwd, &target).unwrap();
        let t_fwd = t0.elapsed().as_secs_f64();
        let t1 = std::time::Instant::now();
        tape.backward(parts.total).unwrap();
        let t_bwd = t1.elapsed().as_secs_f64();
        println!("round {round}: forward {t_fwd:.3}s backward {t_bwd:.3}s (tape {} nodes)", tape.len());
    }
}
