use hypercurv::bilevel::sam_step;
use hypercurv::model::{Batch, HnnObjective, HnnParams, ModelConfig};
use hypercurv::tensor::{grad_wrt_c, value, Tensor};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn blob_batch(n_per: usize, rng: &mut ChaCha8Rng, dist: f64, spread: f64) -> Batch {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..(2 * n_per) {
        let class = i % 2;
        let center = if class == 0 { [-dist, -0.3] } else { [dist, 0.3] };
        rows.push([
            center[0] + spread * rng.gen_range(-1.0..1.0),
            center[1] + spread * rng.gen_range(-1.0..1.0),
        ]);
        labels.push(class);
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Batch::new(Tensor::new(vec![2 * n_per, 2], flat).unwrap(), labels, 2).unwrap()
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let train = blob_batch(18, &mut rng, 1.2, 0.7);
    let val = blob_batch(8, &mut rng, 1.8, 1.1);
    let cfg = ModelConfig {
        input_dim: 2,
        hidden: vec![4],
        embed_dim: 2,
        classes: 2,
        clip_radius: None,
    };
    let train_obj = HnnObjective::new(&cfg, &train);
    let val_obj = HnnObjective::new(&cfg, &val);
    let c0 = 0.5;
    let mut w = HnnParams::init(&cfg, 7).unwrap().pack();
    for _ in 0..800 {
        w = sam_step(&train_obj, &w, c0, 0.25, 0.0).unwrap();
    }
    println!("train loss {:.5}", value(&train_obj, &w, c0).unwrap());
    for c in [0.3, 0.4, 0.5, 0.6, 0.7] {
        println!(
            "  L_V(w*, c={c}) = {:.6}  dL_V/dc = {:+.5e}",
            value(&val_obj, &w, c).unwrap(),
            grad_wrt_c(&val_obj, &w, c).unwrap()
        );
    }
}
