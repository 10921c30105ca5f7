use hypercurv::bilevel::run_algorithm1;
use hypercurv::config::{RunConfig, TrainingMode};
use hypercurv::data::gen_tree_dataset;

fn make_config(j: usize) -> RunConfig {
    RunConfig::from_json(&format!(
        r#"{{
        "mode": "hnn",
        "model": {{ "hidden": [16, 16], "embed_dim": 3 }},
        "bilevel": {{
            "inner_steps": 2, "outer_steps": 200, "eta": 0.1, "rho_hat": 0.05,
            "neumann_j": {j}, "sharpness_k": 1,
            "train_fraction": 0.8, "val_fraction": 0.2, "decay_steps": true
        }},
        "sharpness": {{
            "neumann_k": 1, "rho": 0.5, "l_sharp_rho": 2.0,
            "sweep_steps": [0.1, 0.3, 0.5], "power_iters": 40, "n_eigs": 3
        }},
        "curvature": {{ "init": 0.1, "min": 1e-4, "max": 1.0, "eta_c": 0.05 }},
        "seeds": {{ "params": 1, "split": 2, "direction": 3 }}
    }}"#,
    ))
    .unwrap()
}

fn main() {
    let grid = [1e-4, 1e-2, 1e-1, 1.0];
    for j in [0usize, 2] {
        let mut ratios = Vec::new();
        let mut ls_learned = Vec::new();
        let mut ls_best = Vec::new();
        let mut acc_learned = Vec::new();
        let mut acc_best = Vec::new();
        let mut trend_ok = 0;
        let mut runmin_ok = 0;
        for seed in 0..5u64 {
            let dataset = gen_tree_dataset(4, 3, 0.2, 3, 100 + seed).unwrap();
            let mut best_ls = f64::INFINITY;
            let mut best_acc: f64 = 0.0;
            let mut min_ls = f64::INFINITY;
            let mut max_ls: f64 = 0.0;
            for &c in &grid {
                let mut cfg = make_config(j);
                cfg.seeds.params = 10 + seed;
                cfg.seeds.split = 20 + seed;
                cfg.curvature.init = c;
                let out = run_algorithm1(&dataset, &cfg, None).unwrap();
                let last = out.telemetry.last().unwrap();
                best_ls = best_ls.min(last.l_sharp);
                best_acc = best_acc.max(out.val_accuracy);
                min_ls = min_ls.min(last.l_sharp);
                max_ls = max_ls.max(last.l_sharp);
            }
            let mut cfg = make_config(j);
            cfg.mode = TrainingMode::CurvatureLearning;
            cfg.seeds.params = 10 + seed;
            cfg.seeds.split = 20 + seed;
            let out = run_algorithm1(&dataset, &cfg, None).unwrap();
            let last = out.telemetry.last().unwrap();
            ratios.push(max_ls / min_ls);
            ls_learned.push(last.l_sharp);
            ls_best.push(best_ls);
            acc_learned.push(out.val_accuracy);
            acc_best.push(best_acc);
            // criterion 8: running min of grad_norm² non-increasing + |dF/dc|² trend
            let mut runmin = f64::INFINITY;
            let mut mins = Vec::new();
            for rec in &out.telemetry {
                runmin = runmin.min(rec.grad_norm * rec.grad_norm);
                mins.push(runmin);
            }
            if mins.windows(2).all(|w| w[1] <= w[0]) {
                runmin_ok += 1;
            }
            let h = &out.curvature.history;
            let third = h.len() / 3;
            let msq = |s: &[hypercurv::bilevel::CurvatureStep]| {
                s.iter().map(|x| x.grad_abs * x.grad_abs).sum::<f64>() / s.len() as f64
            };
            if msq(&h[h.len() - third..]) <= msq(&h[..third]) {
                trend_ok += 1;
            } else {
                println!(
                    "  J={j} seed {seed}: trend FAIL {:.3e} -> {:.3e} (c={:.4})",
                    msq(&h[..third]),
                    msq(&h[h.len() - third..]),
                    out.curvature.c
                );
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "J={j}: ratio={:.2} parity={} ({:.3} vs 1.1×{:.3}) acc={} ({:.3} vs {:.3}) trend={trend_ok}/5 runmin={runmin_ok}/5",
            mean(&ratios),
            mean(&ls_learned) <= 1.1 * mean(&ls_best),
            mean(&ls_learned),
            mean(&ls_best),
            mean(&acc_learned) >= mean(&acc_best) - 0.01,
            mean(&acc_learned),
            mean(&acc_best),
        );
    }
}
