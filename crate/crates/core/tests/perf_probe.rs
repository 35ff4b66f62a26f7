use dmcnet_core::model::{build_network, ModelConfig, Network};
use dmcnet_core::rng::Rng;
use dmcnet_core::tensor::Tensor;
use std::time::Instant;

#[test]
#[ignore]
fn probe_forward_cost() {
    let cfg = ModelConfig::desk();
    let net: Network<f32> = build_network(&cfg, 1).unwrap();
    let mut rng = Rng::new(1);
    let n = 32;
    let len = n * 3 * 107 * 107;
    let rgb = Tensor::from_vec(&[n, 3, 107, 107], (0..len).map(|_| rng.uniform() as f32).collect());
    let t = rgb.clone();
    let _ = net.forward_eval(&rgb, &t, true);
    for use_dmc in [false, true] {
        let t0 = Instant::now();
        let iters = 5;
        for _ in 0..iters {
            let _ = net.forward_eval(&rgb, &t, use_dmc);
        }
        let dt = t0.elapsed().as_secs_f64() / iters as f64;
        println!("forward_eval batch {n} dmc={use_dmc}: {:.1} ms ({:.2} ms/pair)", dt * 1e3, dt * 1e3 / n as f64);
    }
}
