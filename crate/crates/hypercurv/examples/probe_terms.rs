use hypercurv::bilevel::{curvature_grad, outer_objective, sam_step, CurvatureGradConfig};
use hypercurv::model::{Batch, HnnObjective, HnnParams, ModelConfig};
use hypercurv::sharpness::top_hessian_eigs;
use hypercurv::tensor::{gradient, hvp, value, HvpMode, Objective, Scaled, Tensor};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Inner objective with an L2 term: CE alone has a degenerate minimum.
struct WeightDecayed<'a, O> {
    inner: &'a O,
    lambda: f64,
}
impl<O: Objective> Objective for WeightDecayed<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn build<S: hypercurv::tensor::Real>(
        &self,
        t: &mut hypercurv::tensor::tape::Tape<S>,
        w: hypercurv::tensor::tape::Var,
        c: hypercurv::tensor::tape::Var,
    ) -> hypercurv::error::Result<hypercurv::tensor::tape::Var> {
        let base = self.inner.build(t, w, c)?;
        let sq = t.sum_sq(w)?;
        let reg = t.scale(sq, 0.5 * self.lambda);
        t.add(base, reg)
    }
}

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

/// Levenberg–Marquardt refinement toward a stationary point: accept steps
/// that shrink the gradient norm, adapting the damping.
fn newton_polish<O: Objective>(obj: &O, w0: &Tensor, c: f64, iters: usize) -> Tensor {
    let d = w0.numel();
    let mut w = w0.flattened();
    let mut mu = 1e-2;
    for _ in 0..iters {
        let g = gradient(obj, &w, c).unwrap();
        let gn = g.norm();
        if gn < 1e-11 {
            break;
        }
        let mut h = vec![0.0; d * d];
        for j in 0..d {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            let col = hvp(obj, &w, c, &Tensor::from_vec(e), HvpMode::Analytic).unwrap();
            for i in 0..d {
                h[i * d + j] = col.data()[i];
            }
        }
        let mut accepted = false;
        for _ in 0..24 {
            let mut a = h.clone();
            for i in 0..d {
                a[i * d + i] += mu;
            }
            if let Some(step) = solve_dense(&a, g.data(), d) {
                let cand = w.axpy(-1.0, &Tensor::from_vec(step)).unwrap();
                if let Ok(g_new) = gradient(obj, &cand, c) {
                    if g_new.is_finite() && g_new.norm() < gn {
                        w = cand;
                        mu = (mu / 3.0).max(1e-9);
                        accepted = true;
                        break;
                    }
                }
            }
            mu *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    w
}

fn solve_dense(a: &[f64], b: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..d {
        let mut piv = col;
        for r in (col + 1)..d {
            if m[r * d + col].abs() > m[piv * d + col].abs() {
                piv = r;
            }
        }
        if m[piv * d + col].abs() < 1e-14 {
            return None;
        }
        if piv != col {
            for k in 0..d {
                m.swap(col * d + k, piv * d + k);
            }
            x.swap(col, piv);
        }
        let diag = m[col * d + col];
        for r in (col + 1)..d {
            let f = m[r * d + col] / diag;
            if f == 0.0 {
                continue;
            }
            for k in col..d {
                m[r * d + k] -= f * m[col * d + k];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..d).rev() {
        x[col] /= m[col * d + col];
        for r in 0..col {
            x[r] -= m[r * d + col] * x[col];
        }
    }
    Some(x)
}

fn main() {
    for (n_per, seed, lam, c0v) in [(40usize, 55u64, 0.1, 0.3), (40, 55, 0.1, 0.1), (40, 56, 0.1, 0.3), (40, 57, 0.1, 0.3)] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = blob_batch(n_per, &mut rng, 0.5, 1.0);
    let val = blob_batch(12, &mut rng, 1.5, 2.5);
    println!("== n_per={n_per} seed={seed} λ={lam} c0={c0v} ==");
    let cfg = ModelConfig {
        input_dim: 2,
        hidden: vec![],
        embed_dim: 2,
        classes: 2,
        clip_radius: None,
    };
    let ce_obj = HnnObjective::new(&cfg, &train);
    let train_obj = WeightDecayed { inner: &ce_obj, lambda: lam };
    let val_obj = HnnObjective::new(&cfg, &val);
    let c0 = c0v;

    let retrain = |c: f64| -> Tensor {
        let mut w = HnnParams::init(&cfg, 7).unwrap().pack();
        for _ in 0..3000 {
            w = sam_step(&train_obj, &w, c, 0.02, 0.0).unwrap();
        }
        newton_polish(&train_obj, &w, c, 80)
    };
    let w_star = retrain(c0);
    let g_res = gradient(&train_obj, &w_star, c0).unwrap().norm();
    let lam = top_hessian_eigs(&train_obj, &w_star, c0, 1, 60).unwrap().values[0];
    let s = (1.0f64).max(lam);
    println!("‖g(w*)‖ = {g_res:.2e}, λ_max = {lam:.3}, s = {s:.3}");
    let scaled = Scaled::new(&train_obj, 1.0 / s);
    let delta = 1e-3;
    let f_at = |c: f64| {
        let w = retrain(c);
        outer_objective(&scaled, &val_obj, &w, c, 1, 0.05).unwrap()
    };
    let fd = (f_at(c0 + delta) - f_at(c0 - delta)) / (2.0 * delta);
    for j in [400usize] {
        let gc = CurvatureGradConfig { neumann_j: j, sharpness_k: 1, rho: 0.05 };
        let implicit = curvature_grad(&scaled, &val_obj, &w_star, c0, &gc).unwrap();
        let rel = (implicit.value - fd).abs() / fd.abs().max(1e-12);
        println!(
            "J={j}: implicit={:+.6e} fd={fd:+.6e} rel={rel:.4} diverged={}",
            implicit.value, implicit.u1_diverged
        );
    }
    }
}
