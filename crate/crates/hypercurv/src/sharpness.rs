//! Sharpness machinery: the closed-form truncated measure and its brute-force
//! matrix oracle, the worst-case perturbation, loss-increase sharpness,
//! Hessian power iteration, and deterministic perturbation sweeps.

use crate::error::{Error, Result};
use crate::tensor::{self, HvpMode, Objective, Tensor};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Oracle-scale cap for the dense matrix route.
pub const ORACLE_DIM_CAP: usize = 64;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SharpnessConfig {
    /// Truncation order K of the Neumann series.
    pub neumann_k: usize,
    /// Scope radius ρ of the worst-case perturbation.
    pub rho: f64,
    /// Radius of the reported loss-increase sharpness; defaults to `rho`.
    /// Landscape comparisons across runs probe at the sweep scale ζ·‖w‖
    /// rather than at the (much smaller) SAM radius.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_sharp_rho: Option<f64>,
    /// Relative step sizes ζ of the perturbation sweep, each in (0,1).
    pub sweep_steps: Vec<f64>,
    pub power_iters: usize,
    pub n_eigs: usize,
}

impl Default for SharpnessConfig {
    fn default() -> Self {
        SharpnessConfig {
            neumann_k: 1,
            rho: 0.05,
            l_sharp_rho: None,
            sweep_steps: vec![0.1, 0.2, 0.4, 0.6, 0.8],
            power_iters: 100,
            n_eigs: 5,
        }
    }
}

impl SharpnessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neumann_k < 1 {
            return Err(Error::Config("neumann_k must be ≥ 1".into()));
        }
        if !(self.rho > 0.0) {
            return Err(Error::Config("rho must be positive".into()));
        }
        if let Some(r) = self.l_sharp_rho {
            if !(r > 0.0) {
                return Err(Error::Config("l_sharp_rho must be positive".into()));
            }
        }
        if self.sweep_steps.iter().any(|&z| !(0.0 < z && z < 1.0)) {
            return Err(Error::Config("sweep steps must lie in (0,1)".into()));
        }
        Ok(())
    }

    pub fn effective_l_sharp_rho(&self) -> f64 {
        self.l_sharp_rho.unwrap_or(self.rho)
    }
}

/// One sweep sample: relative step, train loss, optional test accuracy.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepPoint {
    pub zeta: f64,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
}

/// Full sharpness diagnostics of one parameter point.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SharpnessReport {
    pub sn_hat: f64,
    pub scope_sn: f64,
    pub l_sharp: f64,
    /// Descending top Hessian eigenvalues.
    pub eigenvalues: Vec<f64>,
    pub sweep: Vec<SweepPoint>,
}

impl SharpnessReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<SharpnessReport> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Closed form of the truncated reparametrization-invariant measure:
/// `1 − (1 − ‖g‖²)^{K+1}`, equal to the series Σ_{i=0..K} ‖g‖²(1−‖g‖²)^i.
/// Values with ‖g‖² ≥ 1 clamp to 1 (the caller should rescale the loss).
pub fn sn_hat(g: &Tensor, k: usize) -> f64 {
    let s = g.data().iter().map(|x| x * x).sum::<f64>();
    if s >= 1.0 {
        return 1.0;
    }
    1.0 - (1.0 - s).powi(k as i32 + 1)
}

/// Whether `sn_hat` had to clamp.
pub fn sn_hat_clamped(g: &Tensor) -> bool {
    g.data().iter().map(|x| x * x).sum::<f64>() >= 1.0
}

/// Brute-force oracle: materialize (I − ggᵀ) and sum explicit matrix powers
/// gᵀ[Σ_{i=0..K}(I−ggᵀ)^i]g. Exists solely to check `sn_hat`; refuses above
/// the oracle dimension cap.
pub fn sn_exact_small(g: &Tensor, k: usize) -> Result<f64> {
    let d = g.numel();
    if d > ORACLE_DIM_CAP {
        return Err(Error::Size(format!(
            "dense oracle capped at dimension {ORACLE_DIM_CAP}, got {d}"
        )));
    }
    let gd = g.data();
    // m = I − ggᵀ
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            m[i * d + j] = if i == j { 1.0 } else { 0.0 } - gd[i] * gd[j];
        }
    }
    // power = m^i · g accumulated via repeated matrix-vector products
    let mut acc = 0.0;
    let mut v: Vec<f64> = gd.to_vec(); // (I−ggᵀ)^0 g
    for _ in 0..=k {
        acc += gd.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        let mut next = vec![0.0; d];
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += m[i * d + j] * v[j];
            }
            next[i] = s;
        }
        v = next;
    }
    Ok(acc)
}

/// The analytic gradient of `sn_hat∘∇L` at `w`:
/// `2(K+1)(1−‖g‖²)^K · H·g` with one extra Hessian-vector product.
pub fn sn_gradient<O: Objective + ?Sized>(
    obj: &O,
    w: &Tensor,
    c: f64,
    k: usize,
) -> Result<Tensor> {
    let g = tensor::gradient(obj, w, c)?;
    let s = g.data().iter().map(|x| x * x).sum::<f64>();
    if g.norm() < 1e-12 {
        return Ok(Tensor::zeros(vec![w.numel()]));
    }
    let hg = tensor::hvp(obj, w, c, &g, HvpMode::FiniteDifference)?;
    let coeff = 2.0 * (k as f64 + 1.0) * (1.0 - s).max(0.0).powi(k as i32);
    Ok(hg.scale(coeff))
}

/// Worst-case perturbation of the scope measure.
#[derive(Debug, Clone)]
pub struct Perturbation {
    /// Flat perturbation of length dim(w); ‖ε̂‖ = ρ unless flat.
    pub epsilon: Tensor,
    /// Set when ∂ŝn/∂w vanished below 1e-12.
    pub flat: bool,
}

/// ε̂ = ρ·(∂ŝn/∂w)/‖∂ŝn/∂w‖. A vanishing direction yields the zero
/// perturbation with the flat flag set.
pub fn epsilon_hat<O: Objective + ?Sized>(
    obj: &O,
    w: &Tensor,
    c: f64,
    rho: f64,
    k: usize,
) -> Result<Perturbation> {
    let dir = sn_gradient(obj, w, c, k)?;
    let n = dir.norm();
    if n < 1e-12 {
        return Ok(Perturbation {
            epsilon: Tensor::zeros(vec![w.numel()]),
            flat: true,
        });
    }
    Ok(Perturbation {
        epsilon: dir.scale(rho / n),
        flat: false,
    })
}

/// Scope sharpness ŝn(∇L(w+ε̂)). At a flat point of the measure the
/// worst-case direction is undefined; a deterministic unit fallback of norm
/// ρ keeps the measure informative there (still flagged via `epsilon_hat`).
pub fn scope_sharpness<O: Objective + ?Sized>(
    obj: &O,
    w: &Tensor,
    c: f64,
    rho: f64,
    k: usize,
) -> Result<f64> {
    let pert = epsilon_hat(obj, w, c, rho, k)?;
    let shifted = apply_perturbation(w, &pert, rho)?;
    let g = tensor::gradient(obj, &shifted, c)?;
    Ok(sn_hat(&g, k))
}

/// w + ε̂, substituting the deterministic e₁ fallback at flat points.
pub fn apply_perturbation(w: &Tensor, pert: &Perturbation, rho: f64) -> Result<Tensor> {
    if pert.flat {
        let mut e = vec![0.0; w.numel()];
        e[0] = rho;
        w.flattened().add(&Tensor::from_vec(e))
    } else {
        w.flattened().add(&pert.epsilon)
    }
}

/// Loss-increase sharpness max± L(w ± ρ·g/‖g‖) − L(w).
#[derive(Debug, Clone, Copy)]
pub struct LossSharpness {
    pub value: f64,
    /// Set when the gradient vanished and no perturbation was taken.
    pub flat: bool,
}

pub fn l_sharp<O: Objective + ?Sized>(
    obj: &O,
    w: &Tensor,
    c: f64,
    rho: f64,
) -> Result<LossSharpness> {
    if rho == 0.0 {
        return Ok(LossSharpness {
            value: 0.0,
            flat: false,
        });
    }
    let (base, g) = tensor::value_and_gradient(obj, w, c)?;
    let gn = g.norm();
    if gn < 1e-12 {
        return Ok(LossSharpness {
            value: 0.0,
            flat: true,
        });
    }
    let unit = g.scale(rho / gn);
    let plus = tensor::value(obj, &w.flattened().add(&unit)?, c)?;
    let minus = tensor::value(obj, &w.flattened().sub(&unit)?, c)?;
    Ok(LossSharpness {
        value: (plus - base).max(minus - base),
        flat: false,
    })
}

/// Top Hessian eigenvalues by power iteration with Gram–Schmidt deflation.
#[derive(Debug, Clone)]
pub struct EigenReport {
    /// Rayleigh quotients, sorted descending.
    pub values: Vec<f64>,
    /// Per-eigenvalue convergence of the power iteration.
    pub converged: Vec<bool>,
}

pub fn top_hessian_eigs<O: Objective + ?Sized>(
    obj: &O,
    w: &Tensor,
    c: f64,
    n_eigs: usize,
    power_iters: usize,
) -> Result<EigenReport> {
    let d = w.numel();
    if n_eigs > d {
        return Err(Error::Contract(format!(
            "requested {n_eigs} eigenvalues of a {d}-dimensional Hessian"
        )));
    }
    if power_iters < 10 {
        return Err(Error::Contract("power_iters must be ≥ 10".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e3779b97f4a7c15);
    let mut basis: Vec<Tensor> = Vec::new();
    let mut values = Vec::new();
    let mut converged = Vec::new();
    for _ in 0..n_eigs {
        let mut v = Tensor::from_vec((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect());
        orthogonalize(&mut v, &basis);
        normalize(&mut v)?;
        // The 1e-3 relative-change threshold is the convergence flag, not a
        // stopping rule; the full iteration budget is spent unless the
        // iterate stalls at machine precision.
        let mut prev_rayleigh = f64::NAN;
        let mut ok = false;
        for _ in 0..power_iters {
            let mut hv = tensor::hvp(obj, w, c, &v, HvpMode::FiniteDifference)?;
            orthogonalize(&mut hv, &basis);
            let rayleigh = v.dot(&hv)?;
            if hv.norm() < 1e-14 {
                // The operator annihilates the deflated subspace.
                ok = true;
                break;
            }
            let change = (rayleigh - prev_rayleigh).abs();
            let scale = rayleigh.abs().max(1e-12);
            prev_rayleigh = rayleigh;
            v = hv;
            normalize(&mut v)?;
            ok = change <= 1e-3 * scale;
            if change <= 1e-11 * scale {
                break;
            }
        }
        // Final Rayleigh quotient at the converged direction.
        let hv = tensor::hvp(obj, w, c, &v, HvpMode::FiniteDifference)?;
        let rayleigh = v.dot(&hv)?;
        values.push(rayleigh);
        converged.push(ok);
        basis.push(v);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    Ok(EigenReport {
        values: order.iter().map(|&i| values[i]).collect(),
        converged: order.iter().map(|&i| converged[i]).collect(),
    })
}

fn orthogonalize(v: &mut Tensor, basis: &[Tensor]) {
    for u in basis {
        let proj = v.dot(u).expect("matching dims");
        *v = v.axpy(-proj, u).expect("matching dims");
    }
}

fn normalize(v: &mut Tensor) -> Result<()> {
    let n = v.norm();
    if n < 1e-14 {
        return Err(Error::DegenerateDirection(
            "power iterate collapsed to zero".into(),
        ));
    }
    *v = v.scale(1.0 / n);
    Ok(())
}

/// Loss along w + ζ‖w‖·o/‖o‖ for each ζ, with a fixed seeded direction.
pub fn perturbation_sweep<O: Objective + ?Sized>(
    obj: &O,
    w: &Tensor,
    c: f64,
    direction_seed: u64,
    steps: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(direction_seed);
    let dir = Tensor::from_vec((0..w.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect());
    perturbation_sweep_dir(obj, w, c, &dir, steps)
}

/// As `perturbation_sweep` with an explicit direction.
pub fn perturbation_sweep_dir<O: Objective + ?Sized>(
    obj: &O,
    w: &Tensor,
    c: f64,
    direction: &Tensor,
    steps: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let wn = w.norm();
    if wn == 0.0 {
        return Err(Error::Contract("sweep requires ‖w‖ > 0".into()));
    }
    let dn = direction.norm();
    if dn < 1e-12 {
        return Err(Error::DegenerateDirection("zero sweep direction".into()));
    }
    let unit = direction.scale(1.0 / dn);
    let mut sorted: Vec<f64> = steps.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = Vec::with_capacity(sorted.len());
    for z in sorted {
        let shifted = w.flattened().axpy(z * wn, &unit)?;
        out.push((z, tensor::value(obj, &shifted, c)?));
    }
    Ok(out)
}

/// Assemble the JSON-facing report for one parameter point.
///
/// The Neumann-based measures (ŝn, scope) run on the loss divided by
/// `loss_scale` so the gradient-norm condition holds; the loss-increase
/// sharpness, spectrum, and sweep describe the raw landscape.
pub fn sharpness_report<O: Objective + ?Sized>(
    obj: &O,
    w: &Tensor,
    c: f64,
    cfg: &SharpnessConfig,
    loss_scale: f64,
    direction_seed: u64,
    test_accuracy: impl Fn(&Tensor) -> Option<f64>,
) -> Result<SharpnessReport> {
    cfg.validate()?;
    if !(loss_scale >= 1.0) {
        return Err(Error::Config(format!(
            "loss scale must be ≥ 1, got {loss_scale}"
        )));
    }
    let scaled = crate::tensor::Scaled::new(obj, 1.0 / loss_scale);
    let g = tensor::gradient(&scaled, w, c)?;
    let sn = sn_hat(&g, cfg.neumann_k);
    let scope = scope_sharpness(&scaled, w, c, cfg.rho, cfg.neumann_k)?;
    let ls = l_sharp(obj, w, c, cfg.effective_l_sharp_rho())?;
    let n_eigs = cfg.n_eigs.min(w.numel());
    let eigs = top_hessian_eigs(obj, w, c, n_eigs, cfg.power_iters)?;
    let mut rng = ChaCha8Rng::seed_from_u64(direction_seed);
    let dir = Tensor::from_vec((0..w.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let sweep = perturbation_sweep_dir(obj, w, c, &dir, &cfg.sweep_steps)?
        .into_iter()
        .map(|(zeta, train_loss)| {
            let wn = w.norm();
            let shifted = w
                .flattened()
                .axpy(zeta * wn / dir.norm(), &dir)
                .expect("shape");
            SweepPoint {
                zeta,
                train_loss,
                test_accuracy: test_accuracy(&shifted),
            }
        })
        .collect();
    Ok(SharpnessReport {
        sn_hat: sn,
        scope_sn: scope,
        l_sharp: ls.value,
        eigenvalues: eigs.values,
        sweep,
    })
}

/// One loss scale per run: `max(1, 2·‖∇L(w,c)‖)`.
pub fn loss_scale_for<O: Objective + ?Sized>(obj: &O, w: &Tensor, c: f64) -> Result<f64> {
    Ok((1.0f64).max(2.0 * tensor::gradient(obj, w, c)?.norm()))
}
