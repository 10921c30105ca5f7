use hypercurv::bilevel::sam_step;
use hypercurv::data::{gen_tree_dataset, split_dataset};
use hypercurv::model::{Batch, HnnObjective, HnnParams, ModelConfig};
use hypercurv::sharpness::l_sharp;

fn main() {
    for seed in [100u64, 101, 102, 103, 104] {
        let dataset = gen_tree_dataset(4, 3, 0.2, 3, seed).unwrap();
        let (train_ds, _) = split_dataset(&dataset, 0.8, 0.2, 20).unwrap();
        let cfg = ModelConfig {
            input_dim: 3,
            hidden: vec![8],
            embed_dim: 3,
            classes: 3,
            clip_radius: None,
        };
        let train = Batch::new(train_ds.features.clone(), train_ds.labels.clone(), 3).unwrap();
        let obj = HnnObjective::new(&cfg, &train);
        println!("seed {seed}");
        for c in [1e-4, 1e-2, 1e-1, 1.0] {
            let mut w = HnnParams::init(&cfg, seed).unwrap().pack();
            for step in 0..400 {
                let t = (step + 1) as f64;
                w = sam_step(&obj, &w, c, 0.1 / t.sqrt(), 0.05 / t.sqrt()).unwrap();
            }
            let mut line = format!("  c={c:<7} ‖w‖={:.2}", w.norm());
            for rho in [0.5, 1.0, 2.0, 4.0] {
                let ls = l_sharp(&obj, &w, c, rho).map(|l| l.value).unwrap_or(f64::NAN);
                line += &format!("  ls({rho})={ls:.4}");
            }
            println!("{line}");
        }
    }
}
