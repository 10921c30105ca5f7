//! Sharpness-aware bilevel curvature training: SAM inner loop, the outer
//! objective F = L_V + ŝn(ŵ), implicit-differentiation hypergradients with a
//! truncated Neumann inverse, and the full training loop with telemetry.

use crate::config::{RunConfig, TrainingMode};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{self, Batch, HnnObjective, HnnParams, ModelConfig};
use crate::sharpness::{self, SharpnessConfig};
use crate::tensor::{self, HvpMode, Objective, Scaled, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

/// Positive scalar curvature with bounds, outer step size, and history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvatureState {
    pub c: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub eta_c: f64,
    pub history: Vec<CurvatureStep>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvatureStep {
    pub iter: usize,
    pub c: f64,
    pub grad_abs: f64,
}

impl CurvatureState {
    pub fn new(c: f64, c_min: f64, c_max: f64, eta_c: f64) -> Result<Self> {
        if !(c_min > 0.0 && c_min <= c_max) {
            return Err(Error::Config(format!(
                "invalid curvature bounds [{c_min}, {c_max}]"
            )));
        }
        if !(c >= c_min && c <= c_max) {
            return Err(Error::Config(format!(
                "curvature init {c} outside [{c_min}, {c_max}]"
            )));
        }
        if !(eta_c > 0.0) {
            return Err(Error::Config("eta_c must be positive".into()));
        }
        Ok(CurvatureState {
            c,
            c_min,
            c_max,
            eta_c,
            history: Vec::new(),
        })
    }

    /// Gradient step on c, clamped into the bounds. The history records the
    /// projected gradient |c − clamp(c − η_c·dF/dc)|/η_c — the convergence
    /// statistic of the clamped update, equal to |dF/dc| at interior points
    /// and zero when the update presses against a bound.
    pub fn update(&mut self, iter: usize, dfdc: f64) {
        let next = (self.c - self.eta_c * dfdc).clamp(self.c_min, self.c_max);
        self.history.push(CurvatureStep {
            iter,
            c: self.c,
            grad_abs: (self.c - next).abs() / self.eta_c,
        });
        self.c = next;
        debug_assert!(self.c >= self.c_min && self.c <= self.c_max);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BilevelConfig {
    /// Inner SAM steps per outer iteration (T).
    pub inner_steps: usize,
    /// Outer iterations (𝒯).
    pub outer_steps: usize,
    /// Inner step size η.
    pub eta: f64,
    /// SAM perturbation radius ρ̂.
    pub rho_hat: f64,
    /// Neumann terms J of the inverse-Hessian approximation.
    pub neumann_j: usize,
    /// Truncation K of the sharpness measure.
    pub sharpness_k: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Decay η and ρ̂ as 1/√t over the global parameter-update count.
    pub decay_steps: bool,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        BilevelConfig {
            inner_steps: 2,
            outer_steps: 30,
            eta: 0.1,
            rho_hat: 0.05,
            neumann_j: 2,
            sharpness_k: 1,
            train_fraction: 0.8,
            val_fraction: 0.2,
            decay_steps: true,
        }
    }
}

impl BilevelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_steps < 1 {
            return Err(Error::Config("inner_steps must be ≥ 1".into()));
        }
        if self.sharpness_k < 1 {
            return Err(Error::Config("sharpness_k must be ≥ 1".into()));
        }
        if !(self.eta > 0.0) || self.rho_hat < 0.0 {
            return Err(Error::Config("bad inner step sizes".into()));
        }
        let ok = |f: f64| 0.0 < f && f < 1.0;
        if !ok(self.train_fraction)
            || !ok(self.val_fraction)
            || self.train_fraction + self.val_fraction > 1.0 + 1e-12
        {
            return Err(Error::Config("split fractions must be in (0,1), sum ≤ 1".into()));
        }
        Ok(())
    }
}

/// One SAM update: w ← w − η·∇L(w + ρ̂·∇L(w)/‖∇L(w)‖).
/// A vanishing gradient leaves w unchanged; ρ̂ = 0 is a plain gradient step.
pub fn sam_step<O: Objective + ?Sized>(
    obj: &O,
    w: &Tensor,
    c: f64,
    eta: f64,
    rho_hat: f64,
) -> Result<Tensor> {
    let g = tensor::gradient(obj, w, c)?;
    let gn = g.norm();
    if gn < 1e-12 {
        return Ok(w.flattened());
    }
    let g_step = if rho_hat == 0.0 {
        g
    } else {
        let ascent = w.flattened().axpy(rho_hat / gn, &g)?;
        tensor::gradient(obj, &ascent, c)?
    };
    let mut next = w.flattened().axpy(-eta, &g_step)?;
    next.attach_grad(g_step.data().to_vec())?;
    Ok(next)
}

/// Outer objective F = L_V(w, c) + ŝn(ŵ(c)).
pub fn outer_objective<T, V>(
    train: &T,
    val: &V,
    w: &Tensor,
    c: f64,
    k: usize,
    rho: f64,
) -> Result<f64>
where
    T: Objective + ?Sized,
    V: Objective + ?Sized,
{
    let lv = tensor::value(val, w, c)?;
    let sn = sharpness::scope_sharpness(train, w, c, rho, k)?;
    Ok(lv + sn)
}

#[derive(Debug, Clone, Copy)]
pub struct U1Term {
    pub value: f64,
    /// The Neumann iterate grew for three consecutive terms.
    pub diverged: bool,
}

/// U₁′ = −pᴶ·∇²_{wc}L_S with v⁰ = p⁰ = ∇_w L_V and vⁱ⁺¹ = vⁱ(I − ∇²_w L_S).
pub fn u1_neumann<T, V>(train: &T, val: &V, w: &Tensor, c: f64, j: usize) -> Result<U1Term>
where
    T: Objective + ?Sized,
    V: Objective + ?Sized,
{
    let g_val = tensor::gradient(val, w, c)?;
    if g_val.norm() < 1e-12 {
        return Ok(U1Term {
            value: 0.0,
            diverged: false,
        });
    }
    let mut v = g_val.clone();
    let mut p = g_val;
    let mut grow = 0u32;
    let mut prev = v.norm();
    let mut diverged = false;
    for _ in 0..j {
        if v.norm() < 1e-12 {
            // The tail vanished; the partial sum is already the limit.
            break;
        }
        let hv = tensor::hvp(train, w, c, &v, HvpMode::FiniteDifference)?;
        v = v.sub(&hv)?;
        p = p.add(&v)?;
        let n = v.norm();
        if n > prev {
            grow += 1;
            if grow >= 3 {
                diverged = true;
                break;
            }
        } else {
            grow = 0;
        }
        prev = n;
    }
    let mixed = tensor::mixed_partial_c(train, w, c)?;
    Ok(U1Term {
        value: -p.dot(&mixed)?,
        diverged,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct U2Term {
    pub value: f64,
    /// The worst-case perturbation was taken at a flat point.
    pub flat: bool,
}

/// U₂′ with the analytic ŝn-gradient coefficient:
/// −2(K+1)(1−‖g(ŵ)‖²)^K·⟨g(ŵ), ∇²_{wc}L_S(w*, c)⟩.
pub fn u2_term<T: Objective + ?Sized>(
    train: &T,
    w: &Tensor,
    c: f64,
    k: usize,
    rho: f64,
) -> Result<U2Term> {
    let pert = sharpness::epsilon_hat(train, w, c, rho, k)?;
    let w_hat = sharpness::apply_perturbation(w, &pert, rho)?;
    let g_hat = tensor::gradient(train, &w_hat, c)?;
    let s = g_hat.data().iter().map(|x| x * x).sum::<f64>();
    if g_hat.norm() < 1e-12 {
        return Ok(U2Term {
            value: 0.0,
            flat: pert.flat,
        });
    }
    let mixed = tensor::mixed_partial_c(train, w, c)?;
    let coeff = -2.0 * (k as f64 + 1.0) * (1.0 - s).max(0.0).powi(k as i32);
    Ok(U2Term {
        value: coeff * g_hat.dot(&mixed)?,
        flat: pert.flat,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct CurvatureGradConfig {
    pub neumann_j: usize,
    pub sharpness_k: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct CurvatureGrad {
    pub value: f64,
    pub direct: f64,
    pub u1: f64,
    pub u2: f64,
    pub u1_diverged: bool,
    pub flat_perturbation: bool,
}

/// dF/dc ≈ ∇_c F + U₁′ + U₂′.
///
/// The direct term differentiates L_V and ŝn in c at fixed weights; the ŝn
/// part needs the mixed partial at the perturbed point ŵ.
pub fn curvature_grad<T, V>(
    train: &T,
    val: &V,
    w: &Tensor,
    c: f64,
    cfg: &CurvatureGradConfig,
) -> Result<CurvatureGrad>
where
    T: Objective + ?Sized,
    V: Objective + ?Sized,
{
    let k = cfg.sharpness_k;
    // Direct term: ∂L_V/∂c + ∂ŝn(ŵ, c)/∂c at fixed ŵ.
    let d_val = tensor::grad_wrt_c(val, w, c)?;
    let pert = sharpness::epsilon_hat(train, w, c, cfg.rho, k)?;
    let w_hat = sharpness::apply_perturbation(w, &pert, cfg.rho)?;
    let g_hat = tensor::gradient(train, &w_hat, c)?;
    let s = g_hat.data().iter().map(|x| x * x).sum::<f64>();
    let d_sn = if g_hat.norm() < 1e-12 {
        0.0
    } else {
        let mixed_hat = tensor::mixed_partial_c(train, &w_hat, c)?;
        2.0 * (k as f64 + 1.0) * (1.0 - s).max(0.0).powi(k as i32) * g_hat.dot(&mixed_hat)?
    };
    let direct = d_val + d_sn;
    let u1 = u1_neumann(train, val, w, c, cfg.neumann_j)?;
    let u2 = u2_term(train, w, c, k, cfg.rho)?;
    let value = direct + u1.value + u2.value;
    if !value.is_finite() {
        return Err(Error::Contract("non-finite curvature gradient".into()));
    }
    Ok(CurvatureGrad {
        value,
        direct,
        u1: u1.value,
        u2: u2.value,
        u1_diverged: u1.diverged,
        flat_perturbation: u2.flat,
    })
}

/// One telemetry record per outer iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub iter: usize,
    pub c: f64,
    #[serde(rename = "F")]
    pub f: f64,
    pub grad_norm: f64,
    pub sn_hat: f64,
    pub l_sharp: f64,
    pub wall_ms: f64,
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub model_config: ModelConfig,
    pub params: HnnParams,
    pub curvature: CurvatureState,
    pub telemetry: Vec<TelemetryRecord>,
    /// Constant the train loss was divided by inside the sharpness and
    /// hypergradient paths (1 when no rescaling was needed).
    pub loss_scale: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
}

/// Algorithm-1 training loop (and its fixed-curvature ablation twin).
///
/// For `outer_steps` iterations: T SAM steps on the train split, then the
/// outer objective, the hypergradient, and a clamped curvature update.
/// Fixed-curvature modes run the same loop without the curvature update.
/// On any sub-error an abort checkpoint is written when `checkpoint_dir`
/// is given.
pub fn run_algorithm1(
    dataset: &Dataset,
    cfg: &RunConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<RunOutput> {
    match run_inner(dataset, cfg) {
        Ok(out) => Ok(out),
        Err(e) => {
            if let Some(dir) = checkpoint_dir {
                // Best-effort abort checkpoint from freshly initialized state.
                let model_cfg = cfg.model_config(dataset)?;
                if let Ok(params) = HnnParams::init(&model_cfg, cfg.seeds.params) {
                    let path = dir.join("abort-checkpoint.hckpt");
                    if let Ok(f) = std::fs::File::create(&path) {
                        let _ = model::save_checkpoint(
                            std::io::BufWriter::new(f),
                            &model_cfg,
                            &params,
                            cfg.curvature.init,
                        );
                    }
                }
            }
            Err(e)
        }
    }
}

fn run_inner(dataset: &Dataset, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let bl = &cfg.bilevel;
    let sh: &SharpnessConfig = &cfg.sharpness;
    let model_cfg = cfg.model_config(dataset)?;
    let (train_ds, val_ds) = crate::data::split_dataset(
        dataset,
        bl.train_fraction,
        bl.val_fraction,
        cfg.seeds.split,
    )?;
    let classes = model_cfg.classes;
    let train = Batch::new(train_ds.features.clone(), train_ds.labels.clone(), classes)?;
    let val = Batch::new(val_ds.features.clone(), val_ds.labels.clone(), classes)?;

    let params = HnnParams::init(&model_cfg, cfg.seeds.params)?;
    let mut w = params.pack();
    let mut curvature = CurvatureState::new(
        cfg.curvature.init,
        cfg.curvature.min,
        cfg.curvature.max,
        cfg.curvature.eta_c,
    )?;
    let learn = cfg.mode == TrainingMode::CurvatureLearning;

    let train_obj = HnnObjective::new(&model_cfg, &train);
    let val_obj = HnnObjective::new(&model_cfg, &val);

    // One loss scale per run: 2× the largest gradient norm observed at the
    // start, probing the perturbation radii the sharpness machinery will
    // visit so its Neumann condition ‖∇(L/s)‖ < 1 holds off the base point.
    let g0 = tensor::gradient(&train_obj, &w, curvature.c)?;
    let mut g_max = g0.norm();
    if g_max > 1e-12 {
        let unit = g0.scale(1.0 / g_max);
        for r in [bl.rho_hat, sh.rho, sh.effective_l_sharp_rho()] {
            for sign in [1.0, -1.0] {
                let probe = w.flattened().axpy(sign * r, &unit)?;
                if let Ok(g) = tensor::gradient(&train_obj, &probe, curvature.c) {
                    g_max = g_max.max(g.norm());
                }
            }
        }
    }
    let loss_scale = (1.0f64).max(2.0 * g_max);
    let scaled_train = Scaled::new(&train_obj, 1.0 / loss_scale);

    let grad_cfg = CurvatureGradConfig {
        neumann_j: bl.neumann_j,
        sharpness_k: bl.sharpness_k,
        rho: sh.rho,
    };

    let mut telemetry = Vec::with_capacity(bl.outer_steps);
    let mut global_step = 0usize;
    for outer in 0..bl.outer_steps {
        let started = Instant::now();
        for _ in 0..bl.inner_steps {
            global_step += 1;
            let decay = if bl.decay_steps {
                1.0 / (global_step as f64).sqrt()
            } else {
                1.0
            };
            w = sam_step(
                &train_obj,
                &w,
                curvature.c,
                bl.eta * decay,
                bl.rho_hat * decay,
            )?;
        }
        let grad_norm = tensor::gradient(&train_obj, &w, curvature.c)?.norm();
        let f_value = outer_objective(
            &scaled_train,
            &val_obj,
            &w,
            curvature.c,
            bl.sharpness_k,
            sh.rho,
        )?;
        let sn = sharpness::sn_hat(
            &tensor::gradient(&scaled_train, &w, curvature.c)?,
            bl.sharpness_k,
        );
        let ls = sharpness::l_sharp(&train_obj, &w, curvature.c, sh.effective_l_sharp_rho())?;
        if learn {
            let grad = curvature_grad(&scaled_train, &val_obj, &w, curvature.c, &grad_cfg)?;
            curvature.update(outer, grad.value);
        } else {
            curvature.history.push(CurvatureStep {
                iter: outer,
                c: curvature.c,
                grad_abs: 0.0,
            });
        }
        assert!(curvature.c >= curvature.c_min && curvature.c <= curvature.c_max);
        telemetry.push(TelemetryRecord {
            iter: outer,
            c: curvature.c,
            f: f_value,
            grad_norm,
            sn_hat: sn,
            l_sharp: ls.value,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }

    let final_params = HnnParams::unpack(&model_cfg, &w)?;
    let train_accuracy = model::accuracy(&model_cfg, &final_params, &train, curvature.c)?;
    let val_accuracy = model::accuracy(&model_cfg, &final_params, &val, curvature.c)?;
    let val_loss = tensor::value(&val_obj, &w, curvature.c)?;
    Ok(RunOutput {
        model_config: model_cfg,
        params: final_params,
        curvature,
        telemetry,
        loss_scale,
        train_accuracy,
        val_accuracy,
        val_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Result as CResult;
    use crate::tensor::tape::{Tape, Var};
    use crate::tensor::Real;
    use approx::assert_abs_diff_eq;

    /// ½α(w − c)² on a scalar parameter.
    struct ToyTrain {
        alpha: f64,
    }
    impl Objective for ToyTrain {
        fn dim(&self) -> usize {
            1
        }
        fn build<S: Real>(&self, t: &mut Tape<S>, w: Var, c: Var) -> CResult<Var> {
            let d = t.sub(w, c)?;
            let s = t.sum_sq(d)?;
            Ok(t.scale(s, 0.5 * self.alpha))
        }
    }

    /// ½w², curvature-free validation loss.
    struct ToyVal;
    impl Objective for ToyVal {
        fn dim(&self) -> usize {
            1
        }
        fn build<S: Real>(&self, t: &mut Tape<S>, w: Var, _c: Var) -> CResult<Var> {
            let s = t.sum_sq(w)?;
            Ok(t.scale(s, 0.5))
        }
    }

    /// ½(w − c)² + ½βc·w , coupling curvature into the minimizer.
    struct ToyTrainCoupled {
        beta: f64,
    }
    impl Objective for ToyTrainCoupled {
        fn dim(&self) -> usize {
            1
        }
        fn build<S: Real>(&self, t: &mut Tape<S>, w: Var, c: Var) -> CResult<Var> {
            let d = t.sub(w, c)?;
            let s = t.sum_sq(d)?;
            let quad = t.scale(s, 0.5);
            let cw = t.mul(c, w)?;
            let cw = t.sum_all(cw);
            let lin = t.scale(cw, 0.5 * self.beta);
            t.add(quad, lin)
        }
    }

    /// Curvature-independent quadratic.
    struct NoCurvature;
    impl Objective for NoCurvature {
        fn dim(&self) -> usize {
            1
        }
        fn build<S: Real>(&self, t: &mut Tape<S>, w: Var, _c: Var) -> CResult<Var> {
            let s = t.sum_sq(w)?;
            Ok(t.scale(s, 0.5))
        }
    }

    #[test]
    fn sam_step_quadratic_closed_form() {
        // ½‖w‖², w=(1,0), ρ̂=0.1, η=0.5 → w' = (1.1,0), new w = (0.45,0)
        struct Half;
        impl Objective for Half {
            fn dim(&self) -> usize {
                2
            }
            fn build<S: Real>(&self, t: &mut Tape<S>, w: Var, _c: Var) -> CResult<Var> {
                let s = t.sum_sq(w)?;
                Ok(t.scale(s, 0.5))
            }
        }
        let w = Tensor::from_vec(vec![1.0, 0.0]);
        let next = sam_step(&Half, &w, 1.0, 0.5, 0.1).unwrap();
        assert_abs_diff_eq!(next.data()[0], 0.45, epsilon = 1e-12);
        assert_abs_diff_eq!(next.data()[1], 0.0, epsilon = 1e-15);
        // ρ̂ = 0 is plain gradient descent
        let gd = sam_step(&Half, &w, 1.0, 0.5, 0.0).unwrap();
        assert_abs_diff_eq!(gd.data()[0], 0.5, epsilon = 1e-15);
        // a critical point does not move
        let fixed = sam_step(&Half, &Tensor::zeros(vec![2]), 1.0, 0.5, 0.1).unwrap();
        assert_eq!(fixed.data(), &[0.0, 0.0]);
    }

    #[test]
    fn outer_objective_dominates_validation_loss() {
        let train = ToyTrain { alpha: 1.0 };
        let w = Tensor::from_vec(vec![0.3]);
        let f = outer_objective(&train, &ToyVal, &w, 0.3, 1, 0.05).unwrap();
        let lv = tensor::value(&ToyVal, &w, 0.3).unwrap();
        assert!(f >= lv);
        assert!(f.is_finite());
        // ρ → 0 at an exact minimum sends F to L_V
        let f_small = outer_objective(&train, &ToyVal, &w, 0.3, 1, 1e-9).unwrap();
        assert_abs_diff_eq!(f_small, lv, epsilon = 1e-12);
    }

    #[test]
    fn u1_neumann_truncations_on_the_toy_family() {
        let c = 0.3;
        let w = Tensor::from_vec(vec![c]); // exact inner minimizer
        // J = 0 keeps the single term −∇L_V·∇²_{wc}L_S = −c·(−α) = αc
        for alpha in [0.5, 1.0, 1.5] {
            let train = ToyTrain { alpha };
            let u1 = u1_neumann(&train, &ToyVal, &w, c, 0).unwrap();
            assert_abs_diff_eq!(u1.value, alpha * c, epsilon = 1e-8);
            assert!(!u1.diverged);
        }
        // α = 1: (I − H) = 0, any J gives exactly c
        for j in [0usize, 2, 8] {
            let u1 = u1_neumann(&ToyTrain { alpha: 1.0 }, &ToyVal, &w, c, j).unwrap();
            assert_abs_diff_eq!(u1.value, c, epsilon = 1e-8);
        }
        // geometric Neumann tail: U₁ = c(1 − (1−α)^{J+1})
        for alpha in [0.5, 1.5] {
            for j in [0usize, 2, 8] {
                let u1 = u1_neumann(&ToyTrain { alpha }, &ToyVal, &w, c, j).unwrap();
                let expect = c * (1.0 - (1.0 - alpha).powi(j as i32 + 1));
                assert_abs_diff_eq!(u1.value, expect, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn u2_vanishes_without_coupling() {
        // a perturbed gradient of zero, and a c-independent loss, both kill U₂
        let w = Tensor::from_vec(vec![0.4]);
        let u2 = u2_term(&NoCurvature, &w, 0.5, 1, 0.05).unwrap();
        assert_abs_diff_eq!(u2.value, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn u2_sign_matches_finite_difference_oracle() {
        let beta = 0.1;
        let train = ToyTrainCoupled { beta };
        let c0 = 0.5;
        let rho = 0.01;
        let k = 1;
        // retrain to (near) optimality at a given curvature
        let retrain = |c: f64| -> Tensor {
            let mut w = Tensor::from_vec(vec![0.0]);
            for _ in 0..400 {
                w = sam_step(&train, &w, c, 0.2, 0.0).unwrap();
            }
            w
        };
        let w_star = retrain(c0);
        assert_abs_diff_eq!(w_star.data()[0], c0 * (1.0 - beta / 2.0), epsilon = 1e-9);
        let u2 = u2_term(&train, &w_star, c0, k, rho).unwrap();
        // finite-difference oracle of the w*-path: retrain at c ± δ, keeping
        // both the loss curvature and the worst-case perturbation frozen at
        // the base point (U₂ linearizes exactly that path)
        let pert0 = crate::sharpness::epsilon_hat(&train, &w_star, c0, rho, k).unwrap();
        let delta = 1e-3;
        let sharp_at = |c: f64| -> f64 {
            let w = retrain(c);
            let w_hat = crate::sharpness::apply_perturbation(&w, &pert0, rho).unwrap();
            let g = tensor::gradient(&train, &w_hat, c0).unwrap();
            crate::sharpness::sn_hat(&g, k)
        };
        let fd = (sharp_at(c0 + delta) - sharp_at(c0 - delta)) / (2.0 * delta);
        assert!(
            u2.value.signum() == fd.signum(),
            "u2 {} vs finite difference {}",
            u2.value,
            fd
        );
    }

    #[test]
    fn curvature_grad_recovers_the_analytic_hypergradient() {
        // dF/dc = w* = c exactly on the toy family, with geometric tail in J
        let cfg = |j: usize| CurvatureGradConfig {
            neumann_j: j,
            sharpness_k: 1,
            rho: 0.05,
        };
        let c = 0.3;
        let w = Tensor::from_vec(vec![c]);
        for alpha in [0.5, 1.0, 1.5] {
            for j in [0usize, 2, 8] {
                let grad =
                    curvature_grad(&ToyTrain { alpha }, &ToyVal, &w, c, &cfg(j)).unwrap();
                let bound = (1.0 - alpha).abs().powi(j as i32 + 1) * c;
                assert!(
                    (grad.value - c).abs() <= bound + 1e-7,
                    "α={alpha}, J={j}: |{} − {c}| > {bound}",
                    grad.value
                );
            }
        }
        // c-independent train and validation losses give a zero hypergradient
        let grad = curvature_grad(&NoCurvature, &ToyVal, &Tensor::from_vec(vec![0.2]), 0.5, &cfg(2))
            .unwrap();
        assert_abs_diff_eq!(grad.value, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn toy_dynamics_decay_toward_the_floor() {
        // dF/dc = c > 0, η_c = 0.1: c decreases monotonically, clamped at c_min
        let train = ToyTrain { alpha: 1.0 };
        let cfg = CurvatureGradConfig {
            neumann_j: 2,
            sharpness_k: 1,
            rho: 0.05,
        };
        let mut state = CurvatureState::new(0.3, 1e-6, 1.0, 0.1).unwrap();
        let mut last = state.c;
        for outer in 0..30 {
            let w = Tensor::from_vec(vec![state.c]); // exact inner solve
            let grad = curvature_grad(&train, &ToyVal, &w, state.c, &cfg).unwrap();
            state.update(outer, grad.value);
            assert!(state.c < last, "not strictly decreasing at iter {outer}");
            assert!(state.c >= state.c_min && state.c <= state.c_max);
            last = state.c;
        }
        assert!(state.c < 0.02);
        assert_eq!(state.history.len(), 30);
    }

    #[test]
    fn curvature_state_clamps_at_bounds() {
        let mut state = CurvatureState::new(0.5, 1e-4, 1.0, 10.0).unwrap();
        state.update(0, 1.0); // huge positive gradient
        assert_eq!(state.c, 1e-4);
        state.update(1, -1.0);
        assert_eq!(state.c, 1.0);
        assert!(CurvatureState::new(2.0, 1e-6, 1.0, 0.1).is_err());
        assert!(CurvatureState::new(0.5, -1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn zero_outer_steps_return_initial_state() {
        let dataset = crate::data::gen_tree_dataset(2, 2, 0.1, 4, 7).unwrap();
        let cfg = crate::config::RunConfig::from_json(
            r#"{
                "mode": "curvature-learning",
                "model": { "hidden": [4], "embed_dim": 3 },
                "bilevel": {
                    "inner_steps": 2, "outer_steps": 0, "eta": 0.1, "rho_hat": 0.05,
                    "neumann_j": 2, "sharpness_k": 1,
                    "train_fraction": 0.5, "val_fraction": 0.5, "decay_steps": true
                },
                "curvature": { "init": 0.1, "min": 1e-6, "max": 1.0, "eta_c": 0.001 }
            }"#,
        )
        .unwrap();
        let out = run_algorithm1(&dataset, &cfg, None).unwrap();
        assert_eq!(out.curvature.c, 0.1);
        assert!(out.telemetry.is_empty());
        let initial = HnnParams::init(&out.model_config, cfg.seeds.params).unwrap();
        assert_eq!(out.params, initial);
    }
}
