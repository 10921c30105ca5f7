use hypercurv::bilevel::sam_step;
use hypercurv::data::{gen_tree_dataset, split_dataset};
use hypercurv::model::{Batch, HnnObjective, HnnParams, ModelConfig};
use hypercurv::tensor::{gradient, value};

fn main() {
    let dataset = gen_tree_dataset(4, 3, 0.2, 8, 100).unwrap();
    let (train_ds, _) = split_dataset(&dataset, 0.8, 0.2, 20).unwrap();
    let cfg = ModelConfig {
        input_dim: 8,
        hidden: vec![16, 16],
        embed_dim: 8,
        classes: 3,
        clip_radius: Some(1.0),
    };
    let train = Batch::new(train_ds.features.clone(), train_ds.labels.clone(), 3).unwrap();
    let obj = HnnObjective::new(&cfg, &train);
    let mut w = HnnParams::init(&cfg, 10).unwrap().pack();
    let c = 1.0;
    for step in 0..120 {
        let t = (step + 1) as f64;
        match sam_step(&obj, &w, c, 0.5 / t.sqrt(), 0.05 / t.sqrt()) {
            Ok(next) => w = next,
            Err(e) => {
                println!("step {step}: sam_step failed: {e}");
                // inspect current state
                let params = HnnParams::unpack(&cfg, &w).unwrap();
                for (k, (a, s)) in params
                    .mlr_normals
                    .iter()
                    .zip(&params.mlr_shifts)
                    .enumerate()
                {
                    println!("  class {k}: ‖a′‖={:.4e} ‖v_b′‖={:.4e}", a.norm(), s.norm());
                }
                println!("  ‖bias‖={:.4e} ‖A‖={:.4e}", params.bias.norm(), params.linear_map.norm());
                let l = value(&obj, &w, c);
                println!("  loss at w: {l:?}");
                let g = gradient(&obj, &w, c);
                println!("  grad finite: {:?}", g.map(|g| g.is_finite()));
                return;
            }
        }
        if step % 20 == 0 {
            let l = value(&obj, &w, c).unwrap_or(f64::NAN);
            println!("step {step}: loss={l:.5} ‖w‖={:.3}", w.norm());
        }
    }
    println!("completed without blowup");
}
