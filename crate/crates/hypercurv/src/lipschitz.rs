//! Closed-form Lipschitz and generalization-bound constants of the ball
//! operations, plus a randomized verifier that samples instances and checks
//! the stated inequalities hold with zero violations.

use crate::error::{Error, Result};
use crate::geometry::mobius_add_raw;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which printed form of a constant to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstantForm {
    /// Exact printed formula in the sampled norms and inner products.
    General,
    /// Hyperbolic/angular-constraint form under `cos θ ≥ cos θ̃`.
    Angular,
}

/// Scalar context every constant reads from. Norm fields double for the
/// one- and two-point variants (`norm_y` is ‖y‖ or ‖y₁‖, and so on).
#[derive(Debug, Clone)]
pub struct LipschitzContext {
    pub c1: f64,
    pub c2: f64,
    pub norm_x: f64,
    pub norm_x2: f64,
    pub norm_y: f64,
    pub norm_y2: f64,
    /// ⟨x,y⟩ (or ⟨x,y₁⟩ / ⟨x₁,y⟩).
    pub dot_xy: f64,
    /// ⟨x,y₂⟩ / ⟨x₂,y⟩.
    pub dot_xy2: f64,
    /// ‖y₁ + y₂‖; defaults to the triangle bound ‖y₁‖+‖y₂‖.
    pub y_sum_norm: f64,
    /// cos θ̃ of the angular constraint.
    pub cos_theta_bound: f64,
    pub l_f: f64,
    pub l_loss: f64,
    pub l_p: f64,
    pub a_norm: f64,
    pub rho: f64,
    /// Upper bound Ñ on ‖f_a(logm₀(x))‖.
    pub n_tilde: f64,
    pub w_norm: f64,
}

impl Default for LipschitzContext {
    fn default() -> Self {
        LipschitzContext {
            c1: 1e-2,
            c2: 1e-2,
            norm_x: 0.3,
            norm_x2: 0.3,
            norm_y: 0.3,
            norm_y2: 0.3,
            dot_xy: 0.0,
            dot_xy2: 0.0,
            y_sum_norm: 0.6,
            cos_theta_bound: 0.1,
            l_f: 1.0,
            l_loss: 1.0,
            l_p: 1.0,
            a_norm: 1.0,
            rho: 0.05,
            n_tilde: 1.0,
            w_norm: 1.0,
        }
    }
}

impl LipschitzContext {
    fn angular_denom(&self) -> Result<f64> {
        let c2 = self.cos_theta_bound * self.cos_theta_bound;
        if c2 >= 1.0 {
            return Err(Error::Domain("cos²θ̃ must be below 1".into()));
        }
        Ok((1.0 - c2) * (1.0 - c2))
    }
}

fn n_factor(c: f64, dot: f64, nx: f64, ny: f64) -> f64 {
    (1.0 + 2.0 * c * dot + c * c * nx * nx * ny * ny).abs()
}

/// Constants of Möbius addition in the curvature: (L_⊕c, L_⊕c0).
pub fn const_mobius_c(ctx: &LipschitzContext, form: ConstantForm) -> Result<(f64, f64)> {
    let (c1, c2) = (ctx.c1, ctx.c2);
    match form {
        ConstantForm::General => {
            let (nx, ny) = (ctx.norm_x, ctx.norm_y);
            let den = n_factor(c1, ctx.dot_xy, nx, ny) * n_factor(c2, ctx.dot_xy, nx, ny);
            if den < 1e-12 {
                return Err(Error::NearSingular(format!("𝒩(c₁)𝒩(c₂) = {den:.3e}")));
            }
            let num = 2.0 * nx * ny
                + 3.0 * nx * nx * ny
                + 2.0 * nx * ny * ny
                + (c1 + c2) * nx * nx * ny.powi(3)
                + (c1 + c2) * nx.powi(3) * ny * ny
                + c1 * c2 * nx.powi(3) * ny.powi(4)
                + 3.0 * c1 * c2 * nx.powi(4) * ny.powi(3);
            let l_c = num / den;
            let denc = n_factor(c1, ctx.dot_xy, nx, ny);
            if denc < 1e-12 {
                return Err(Error::NearSingular(format!("𝒩(c) = {denc:.3e}")));
            }
            let l_c0 = (2.0 * c1 * nx * ny
                + 3.0 * c1 * nx * nx * ny
                + 2.0 * c1 * nx * ny * ny
                + c1 * c1 * nx * nx * ny.powi(3)
                + c1 * c1 * nx.powi(3) * ny * ny)
                / denc;
            Ok((l_c, l_c0))
        }
        ConstantForm::Angular => {
            let den = ctx.angular_denom()?;
            let c = c1;
            let l_c = (c2 - c1).abs()
                * (6.0 / c.powf(1.5)
                    + 2.0 / c
                    + 4.0 * c1 * c2 / c.powf(3.5)
                    + 2.0 * (c1 + c2) / c.powf(2.5))
                / den;
            let l_c0 = (8.0 / c.sqrt() + 2.0) / den;
            Ok((l_c, l_c0))
        }
    }
}

/// Lipschitz constant of x ⊕_c y in the right input y.
pub fn const_mobius_y(ctx: &LipschitzContext, form: ConstantForm) -> Result<f64> {
    match form {
        ConstantForm::General => {
            let c = ctx.c1;
            let (nx, ny1, ny2) = (ctx.norm_x, ctx.norm_y, ctx.norm_y2);
            let den = n_factor(c, ctx.dot_xy, nx, ny1) * n_factor(c, ctx.dot_xy2, nx, ny2);
            if den < 1e-12 {
                return Err(Error::NearSingular(format!("𝒩𝒩 = {den:.3e}")));
            }
            let num = 1.0
                + c * (5.0 * nx * nx + 5.0 * nx * ny1 + nx * ny2)
                + c * c
                    * nx
                    * nx
                    * (13.0 * nx * ny1 + nx * ny2 + 6.0 * ny1 * ny1 + 3.0 * ny1 * ny2)
                + c.powi(3)
                    * nx.powi(3)
                    * (6.0 * nx * ny1 * ny1
                        + 3.0 * nx * ny1 * ny2
                        + 2.0 * ny1.powi(3)
                        + 2.0 * ny1 * ny1 * ny2);
            Ok(num / den)
        }
        ConstantForm::Angular => Ok(48.0 / ctx.angular_denom()?),
    }
}

/// Lipschitz constant of x ⊕_c y in the left input x.
pub fn const_mobius_x(ctx: &LipschitzContext, form: ConstantForm) -> Result<f64> {
    match form {
        ConstantForm::General => {
            let c = ctx.c1;
            let (nx1, nx2, ny) = (ctx.norm_x, ctx.norm_x2, ctx.norm_y);
            let den = n_factor(c, ctx.dot_xy, nx1, ny) * n_factor(c, ctx.dot_xy2, nx2, ny);
            if den < 1e-12 {
                return Err(Error::NearSingular(format!("𝒩𝒩 = {den:.3e}")));
            }
            let num = 1.0
                + 3.0 * c * ny * ny
                + 3.0 * c * nx1 * ny
                + 7.0 * c * nx2 * ny
                + c * c
                    * ny
                    * ny
                    * (7.0 * nx1 * nx2 + nx1 * ny + 5.0 * nx2 * ny + 6.0 * nx2 * nx2)
                + c.powi(3)
                    * nx2
                    * ny.powi(3)
                    * (4.0 * nx1 * nx1 + 4.0 * nx1 * nx2 + 2.0 * nx2 * ny + nx1 * ny);
            Ok(num / den)
        }
        ConstantForm::Angular => Ok(44.0 / ctx.angular_denom()?),
    }
}

/// Constants of the exponential map: (L_expm_y, L_expm_x).
///
/// `L_expm_y` in the base point uses the printed general or constraint form;
/// `L_expm_x` in the argument is the printed formula (whose c→0 limit is 3;
/// see [`const_expmap_x_tight`] for the limit-consistent variant).
pub fn const_expmap(ctx: &LipschitzContext, form: ConstantForm) -> Result<(f64, f64)> {
    let c = ctx.c1;
    let sc = c.sqrt();
    let l_oy = const_mobius_y(ctx, form)?;
    let l_ox = const_mobius_x(ctx, form)?;
    let l_expm_y = match form {
        ConstantForm::General => {
            l_oy * c * ctx.norm_x * (ctx.norm_y2 + ctx.norm_y) / ((1.0 - sc) * (1.0 - sc)) + l_ox
        }
        ConstantForm::Angular => {
            2.0 * sc * l_oy * ctx.norm_x / ((1.0 - sc) * (1.0 - sc)) + l_ox
        }
    };
    let l_expm_x = match form {
        ConstantForm::General => {
            let gap = 1.0 - c * ctx.norm_y * ctx.norm_y;
            l_oy * ((1.0 / gap).abs() + 2.0 * (sc * ctx.norm_x2 / gap).tanh() / (sc * ctx.norm_x2))
        }
        ConstantForm::Angular => {
            l_oy * (1.0 / (1.0 - sc)).abs() + 2.0 * l_oy / (sc * ctx.norm_x2)
        }
    };
    Ok((l_expm_y, l_expm_x))
}

/// Limit-consistent constant of the exponential map in its argument:
/// `L_⊕y/(1−c‖y‖²)`, which tends to 1 as c→0 (the radial map
/// `x ↦ tanh(√c‖x‖/(1−c‖y‖²))·x/(√c‖x‖)` is 1/(1−c‖y‖²)-Lipschitz, then one
/// ⊕ composition).
pub fn const_expmap_x_tight(ctx: &LipschitzContext) -> Result<f64> {
    let l_oy = const_mobius_y(ctx, ConstantForm::General)?;
    let gap = 1.0 - ctx.c1 * ctx.norm_y * ctx.norm_y;
    if gap <= 0.0 {
        return Err(Error::Boundary("base point outside the ball".into()));
    }
    Ok(l_oy / gap)
}

/// Constant of the logarithmic map in its base point.
pub fn const_logmap_y(ctx: &LipschitzContext, form: ConstantForm) -> Result<f64> {
    let c = ctx.c1;
    let sc = c.sqrt();
    let l_ox = const_mobius_x(ctx, form)?;
    Ok(match form {
        ConstantForm::General => {
            let t = 1.0 + c * ctx.norm_x * ctx.norm_y;
            l_ox * t * t + sc / 4.0 * ctx.y_sum_norm + sc * l_ox
        }
        ConstantForm::Angular => 4.0 * l_ox + 0.5 + sc * l_ox,
    })
}

/// Tangent-point constants: (L_tangent, E_ly with the hyperbolic 1/c form).
///
/// The general form composes the limit-consistent expmap-arg constant so the
/// stated c→0 limit `L_𝓛(1 + L_f‖a‖)` holds; the angular form composes the
/// printed constraint constants.
pub fn const_tangent(ctx: &LipschitzContext, form: ConstantForm) -> Result<(f64, f64)> {
    let l_ox = const_mobius_x(ctx, form)?;
    let (l_ey, l_ex) = match form {
        ConstantForm::General => {
            let (l_ey, _) = const_expmap(ctx, form)?;
            (l_ey, const_expmap_x_tight(ctx)?)
        }
        ConstantForm::Angular => const_expmap(ctx, form)?,
    };
    let l_ly = const_logmap_y(ctx, form)?;
    let inner = l_ey + l_ex * ctx.l_f * l_ly * ctx.a_norm;
    let l_tangent = ctx.l_loss * l_ox * inner;
    let e_ly = ctx.l_loss * l_ox / ctx.c1 * inner;
    Ok((l_tangent, e_ly))
}

/// c→0 limit of the tangent constant: L_𝓛(1 + L_f‖a‖).
pub fn const_tangent_limit(ctx: &LipschitzContext) -> f64 {
    ctx.l_loss * (1.0 + ctx.l_f * ctx.a_norm)
}

/// The five generalization-bound constants.
#[derive(Debug, Clone, Serialize)]
pub struct BoundTerms {
    pub e_lgen_prime: f64,
    pub e_lc: f64,
    pub e_lc_prime: f64,
    pub e_ly_prime: f64,
    pub e_lgen: f64,
}

/// Evaluate the generalization-bound constants at `n` samples, `d`
/// parameters, confidence δ. The hyperbolic-constraint forms are used for
/// E_lc/E′_lc (they bound ‖x‖ by c^{-1/4}).
pub fn bound_terms(
    ctx: &LipschitzContext,
    n: usize,
    d: usize,
    delta: f64,
) -> Result<BoundTerms> {
    if n < 2 || d < 1 || !(0.0 < delta && delta < 1.0) {
        return Err(Error::Config(format!(
            "bound_terms needs n ≥ 2, d ≥ 1, δ in (0,1); got ({n}, {d}, {delta})"
        )));
    }
    let nf = n as f64;
    let df = d as f64;
    let c = ctx.c1;
    let sc = c.sqrt();
    let radical = df
        * (1.0
            + ctx.w_norm * ctx.w_norm / (ctx.rho * ctx.rho)
                * (1.0 + (nf.ln() / df).sqrt()).powi(2))
        .ln()
        + 4.0 * (nf / delta).ln()
        + 8.0 * (6.0 * nf + 3.0 * df).ln();
    let e_lgen_prime = (radical / (nf - 1.0)).sqrt();

    let (_, l_c0) = const_mobius_c(ctx, ConstantForm::General)?;
    let l_ox = const_mobius_x(ctx, ConstantForm::Angular)?;
    let shrink = c.powf(0.25).atanh() / sc;
    let e_lc = ctx.l_loss * l_c0 + ctx.l_loss * l_ox * ctx.a_norm * shrink * (ctx.l_f + 1.0);
    let e_lc_prime =
        ctx.l_loss * l_c0 + ctx.l_loss * l_ox * shrink * (ctx.l_f + 1.0) * (ctx.a_norm + ctx.rho);

    let (l_ey, _) = const_expmap(ctx, ConstantForm::General)?;
    let l_ex = const_expmap_x_tight(ctx)?;
    let l_ly = const_logmap_y(ctx, ConstantForm::General)?;
    let e_ly_prime =
        ctx.l_loss * l_ox / c * (l_ey + l_ex * ctx.l_f * l_ly * (ctx.a_norm + ctx.rho));
    let (_, e_ly) = const_tangent(ctx, ConstantForm::General)?;

    Ok(BoundTerms {
        e_lgen_prime,
        e_lc,
        e_lc_prime,
        e_ly_prime,
        e_lgen: e_lgen_prime + e_ly + e_lc + e_ly_prime + e_lc_prime,
    })
}

/// Pre-constraint form of E_lc in an explicit feature-norm bound ‖x‖ and Ñ;
/// this is the form whose c→0 limit vanishes.
pub fn e_lc_unconstrained(ctx: &LipschitzContext, x_norm: f64, n_tilde: f64) -> Result<f64> {
    let c = ctx.c1;
    let sc = c.sqrt();
    let (_, l_c0) = const_mobius_c(ctx, ConstantForm::General)?;
    let l_ox = const_mobius_x(ctx, ConstantForm::Angular)?;
    let expm_gap = n_tilde - (sc * n_tilde).tanh() / sc;
    let logm_gap = (sc * x_norm).atanh() / sc - x_norm;
    Ok(ctx.l_loss * l_c0 + ctx.l_loss * l_ox * (expm_gap + ctx.l_f * ctx.a_norm * logm_gap))
}

// ── randomized verifier ──────────────────────────────────────────────

/// The six verified geometry inequalities, in statement order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoremId {
    MobiusCurvature,
    MobiusRight,
    MobiusLeft,
    ExpmapBase,
    ExpmapArg,
    LogmapBase,
}

impl TheoremId {
    pub const ALL: [TheoremId; 6] = [
        TheoremId::MobiusCurvature,
        TheoremId::MobiusRight,
        TheoremId::MobiusLeft,
        TheoremId::ExpmapBase,
        TheoremId::ExpmapArg,
        TheoremId::LogmapBase,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TheoremId::MobiusCurvature => "mobius-curvature",
            TheoremId::MobiusRight => "mobius-right",
            TheoremId::MobiusLeft => "mobius-left",
            TheoremId::ExpmapBase => "expmap-base",
            TheoremId::ExpmapArg => "expmap-arg",
            TheoremId::LogmapBase => "logmap-base",
        }
    }

    pub fn parse(s: &str) -> Option<TheoremId> {
        TheoremId::ALL.iter().copied().find(|t| t.name() == s)
    }
}

#[derive(Debug, Clone)]
pub struct VerifierConfig {
    pub samples: usize,
    pub dim: usize,
    pub cos_theta_bound: f64,
    pub seed: u64,
    pub curvatures: Vec<f64>,
    pub l_f: f64,
    pub l_loss: f64,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            samples: 2000,
            dim: 4,
            cos_theta_bound: 0.1,
            seed: 17,
            curvatures: vec![1e-3, 1e-1, 1.0],
            l_f: 1.0,
            l_loss: 1.0,
        }
    }
}

/// One verified (theorem, curvature) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateReport {
    pub name: String,
    /// Bound constant at the worst observed sample.
    pub value: f64,
    pub n_samples: usize,
    /// max over samples of (empirical LHS)/(bound RHS).
    pub max_ratio: f64,
    pub violations: usize,
}

const MAX_REJECTIONS: usize = 10_000;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn sample_rng(seed: u64, theorem: usize, cell: usize, i: usize) -> ChaCha8Rng {
    let mixed = splitmix(seed ^ splitmix(theorem as u64) ^ splitmix((cell as u64) << 20) ^ (i as u64));
    ChaCha8Rng::seed_from_u64(mixed)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_with_norm(rng: &mut ChaCha8Rng, dim: usize, norm: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gauss(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x * norm / n).collect();
        }
    }
}

fn norm_of(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot_of(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cos_between(a: &[f64], b: &[f64]) -> f64 {
    dot_of(a, b) / (norm_of(a) * norm_of(b))
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Draw vectors with norms ≤ `max_norm` until every listed pair satisfies the
/// angular constraint.
fn sample_constrained(
    rng: &mut ChaCha8Rng,
    dim: usize,
    max_norms: &[f64],
    cos_bound: f64,
    pairs: &[(usize, usize)],
) -> Result<Vec<Vec<f64>>> {
    for _ in 0..MAX_REJECTIONS {
        let vs: Vec<Vec<f64>> = max_norms
            .iter()
            .map(|&m| {
                let r = rng.gen_range(0.05..1.0) * m;
                random_with_norm(rng, dim, r)
            })
            .collect();
        if pairs
            .iter()
            .all(|&(i, j)| cos_between(&vs[i], &vs[j]) >= cos_bound)
        {
            return Ok(vs);
        }
    }
    Err(Error::Sampler(format!(
        "no admissible sample after {MAX_REJECTIONS} rejections"
    )))
}

/// expm_y(x) without the interior re-projection (the bare Eq.-3 value).
fn raw_expmap(y: &[f64], x: &[f64], c: f64) -> Result<Vec<f64>> {
    let sc = c.sqrt();
    let xn = norm_of(x);
    if xn < 1e-15 {
        return Ok(y.to_vec());
    }
    let lambda = 2.0 / (1.0 - c * norm_of(y) * norm_of(y));
    let scale = (sc * lambda * xn / 2.0).tanh() / (sc * xn);
    let step: Vec<f64> = x.iter().map(|v| v * scale).collect();
    mobius_add_raw(y, &step, c)
}

/// logm_y(x) from the bare Eq.-5 value.
fn raw_logmap(y: &[f64], x: &[f64], c: f64) -> Result<Vec<f64>> {
    let sc = c.sqrt();
    let neg_y: Vec<f64> = y.iter().map(|v| -v).collect();
    let u = mobius_add_raw(&neg_y, x, c)?;
    let un = norm_of(&u);
    if un < 1e-15 {
        return Ok(vec![0.0; y.len()]);
    }
    if sc * un >= 1.0 - 1e-12 {
        return Err(Error::Boundary("logmap argument at the boundary".into()));
    }
    let lambda = 2.0 / (1.0 - c * norm_of(y) * norm_of(y));
    let scale = 2.0 / (sc * lambda) * (sc * un).atanh() / un;
    Ok(u.into_iter().map(|v| v * scale).collect())
}

struct SampleOutcome {
    lhs: f64,
    rhs: f64,
    constant: f64,
}

fn run_sample(
    id: TheoremId,
    cfg: &VerifierConfig,
    c: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SampleOutcome> {
    let dim = cfg.dim;
    let cos = cfg.cos_theta_bound;
    let ball_cap = 0.9 / c.sqrt();
    let base_ctx = LipschitzContext {
        cos_theta_bound: cos,
        l_f: cfg.l_f,
        l_loss: cfg.l_loss,
        ..LipschitzContext::default()
    };
    match id {
        TheoremId::MobiusCurvature => {
            let c2 = c;
            let c1 = c2 * rng.gen_range(0.5..1.0);
            let vs = sample_constrained(rng, dim, &[ball_cap, ball_cap], cos, &[(0, 1)])?;
            let (x, y) = (&vs[0], &vs[1]);
            let a = mobius_add_raw(x, y, c1)?;
            let b = mobius_add_raw(x, y, c2)?;
            let ctx = LipschitzContext {
                c1,
                c2,
                norm_x: norm_of(x),
                norm_y: norm_of(y),
                dot_xy: dot_of(x, y),
                ..base_ctx
            };
            let (l_c, _) = const_mobius_c(&ctx, ConstantForm::General)?;
            Ok(SampleOutcome {
                lhs: diff_norm(&a, &b),
                rhs: l_c * (c1 - c2).abs(),
                constant: l_c,
            })
        }
        TheoremId::MobiusRight => {
            let vs = sample_constrained(
                rng,
                dim,
                &[ball_cap, ball_cap, ball_cap],
                cos,
                &[(0, 1), (0, 2)],
            )?;
            let (x, y1, y2) = (&vs[0], &vs[1], &vs[2]);
            let a = mobius_add_raw(x, y1, c)?;
            let b = mobius_add_raw(x, y2, c)?;
            let ctx = LipschitzContext {
                c1: c,
                c2: c,
                ..base_ctx
            };
            let l_y = const_mobius_y(&ctx, ConstantForm::Angular)?;
            Ok(SampleOutcome {
                lhs: diff_norm(&a, &b),
                rhs: l_y * diff_norm(y1, y2),
                constant: l_y,
            })
        }
        TheoremId::MobiusLeft => {
            let vs = sample_constrained(
                rng,
                dim,
                &[ball_cap, ball_cap, ball_cap],
                cos,
                &[(0, 2), (1, 2)],
            )?;
            let (x1, x2, y) = (&vs[0], &vs[1], &vs[2]);
            let a = mobius_add_raw(x1, y, c)?;
            let b = mobius_add_raw(x2, y, c)?;
            let ctx = LipschitzContext {
                c1: c,
                c2: c,
                ..base_ctx
            };
            let l_x = const_mobius_x(&ctx, ConstantForm::Angular)?;
            Ok(SampleOutcome {
                lhs: diff_norm(&a, &b),
                rhs: l_x * diff_norm(x1, x2),
                constant: l_x,
            })
        }
        TheoremId::ExpmapBase => {
            let vs = sample_constrained(
                rng,
                dim,
                &[1.0, ball_cap, ball_cap],
                cos,
                &[(0, 1), (0, 2), (1, 2)],
            )?;
            let (x, y1, y2) = (&vs[0], &vs[1], &vs[2]);
            let a = raw_expmap(y1, x, c)?;
            let b = raw_expmap(y2, x, c)?;
            let ctx = LipschitzContext {
                c1: c,
                c2: c,
                norm_x: norm_of(x),
                norm_y: norm_of(y1),
                norm_y2: norm_of(y2),
                ..base_ctx
            };
            let (l_ey, _) = const_expmap(&ctx, ConstantForm::Angular)?;
            Ok(SampleOutcome {
                lhs: diff_norm(&a, &b),
                rhs: l_ey * diff_norm(y1, y2),
                constant: l_ey,
            })
        }
        TheoremId::ExpmapArg => {
            let vs = sample_constrained(
                rng,
                dim,
                &[1.0, 1.0, ball_cap],
                cos,
                &[(0, 2), (1, 2)],
            )?;
            let (x1, x2, y) = (&vs[0], &vs[1], &vs[2]);
            let a = raw_expmap(y, x1, c)?;
            let b = raw_expmap(y, x2, c)?;
            // The printed constant depends on ‖x₂‖; take the worse labeling.
            let mut best = f64::NEG_INFINITY;
            for nx2 in [norm_of(x1), norm_of(x2)] {
                let ctx = LipschitzContext {
                    c1: c,
                    c2: c,
                    norm_x2: nx2,
                    norm_y: norm_of(y),
                    ..base_ctx.clone()
                };
                let (_, l_ex) = const_expmap(&ctx, ConstantForm::Angular)?;
                best = best.max(l_ex);
            }
            Ok(SampleOutcome {
                lhs: diff_norm(&a, &b),
                rhs: best * diff_norm(x1, x2),
                constant: best,
            })
        }
        TheoremId::LogmapBase => {
            let vs = sample_constrained(
                rng,
                dim,
                &[ball_cap, ball_cap, ball_cap],
                cos,
                &[(0, 1), (0, 2), (1, 2)],
            )?;
            let (x, y1, y2) = (&vs[0], &vs[1], &vs[2]);
            let a = raw_logmap(y1, x, c)?;
            let b = raw_logmap(y2, x, c)?;
            let sum_norm = {
                let s: Vec<f64> = y1.iter().zip(y2).map(|(p, q)| p + q).collect();
                norm_of(&s)
            };
            let mut best = f64::NEG_INFINITY;
            for ny1 in [norm_of(y1), norm_of(y2)] {
                let ctx = LipschitzContext {
                    c1: c,
                    c2: c,
                    norm_x: norm_of(x),
                    norm_y: ny1,
                    y_sum_norm: sum_norm,
                    ..base_ctx.clone()
                };
                best = best.max(const_logmap_y(&ctx, ConstantForm::Angular)?);
            }
            Ok(SampleOutcome {
                lhs: diff_norm(&a, &b),
                rhs: best * diff_norm(y1, y2),
                constant: best,
            })
        }
    }
}

/// Verify one theorem at one curvature over `n_samples` random instances.
/// Per-sample seeds derive from (seed, theorem, cell, index), so parallel and
/// serial runs produce identical reports.
pub fn verify_inequality(
    id: TheoremId,
    cfg: &VerifierConfig,
    curvature: f64,
    cell: usize,
    n_samples: usize,
) -> Result<CertificateReport> {
    let theorem_idx = TheoremId::ALL.iter().position(|t| *t == id).unwrap();
    let mut max_ratio: f64 = 0.0;
    let mut worst_constant = f64::NAN;
    let mut violations = 0;
    for i in 0..n_samples {
        let mut rng = sample_rng(cfg.seed, theorem_idx, cell, i);
        // Resample on boundary/singular draws; cap attempts.
        let mut outcome = None;
        for _ in 0..32 {
            match run_sample(id, cfg, curvature, &mut rng) {
                Ok(o) => {
                    outcome = Some(o);
                    break;
                }
                Err(Error::Boundary(_)) | Err(Error::NearSingular(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        let o = outcome
            .ok_or_else(|| Error::Sampler("could not draw an admissible instance".into()))?;
        let ratio = if o.rhs > 0.0 {
            o.lhs / o.rhs
        } else if o.lhs <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        if ratio > max_ratio || worst_constant.is_nan() {
            max_ratio = ratio;
            worst_constant = o.constant;
        }
        if ratio > 1.0 + 1e-9 {
            violations += 1;
        }
    }
    Ok(CertificateReport {
        name: format!("{}@c={curvature}", id.name()),
        value: worst_constant,
        n_samples,
        max_ratio,
        violations,
    })
}

/// The full certificate suite: every theorem at every configured curvature.
pub fn verify_all(cfg: &VerifierConfig) -> Result<Vec<CertificateReport>> {
    let mut reports = Vec::new();
    for (t_idx, id) in TheoremId::ALL.iter().enumerate() {
        for (c_idx, &c) in cfg.curvatures.iter().enumerate() {
            let cell = t_idx * cfg.curvatures.len() + c_idx;
            reports.push(verify_inequality(*id, cfg, c, cell, cfg.samples)?);
        }
    }
    Ok(reports)
}

/// Monotonicity diagnostic: whether each constant is non-decreasing in every
/// norm argument over a coarse grid (deviations reported, not failed).
pub fn monotonicity_flags(cfg: &VerifierConfig) -> Result<Vec<(String, bool)>> {
    let grid = [0.1, 0.2, 0.4, 0.6];
    let mut out = Vec::new();
    for &c in &cfg.curvatures {
        let mut monotone = true;
        let mut prev = f64::NEG_INFINITY;
        for &n in &grid {
            let ctx = LipschitzContext {
                c1: c,
                c2: c,
                norm_x: n / c.sqrt(),
                norm_y: n / c.sqrt(),
                norm_x2: n / c.sqrt(),
                norm_y2: n / c.sqrt(),
                cos_theta_bound: cfg.cos_theta_bound,
                ..LipschitzContext::default()
            };
            let v = const_mobius_y(&ctx, ConstantForm::General)?;
            if v < prev {
                monotone = false;
            }
            prev = v;
        }
        out.push((format!("mobius-right@c={c}"), monotone));
    }
    Ok(out)
}

/// Euclidean-limit values of every constant at a tiny curvature; used by the
/// limit suite.
pub fn limits_at(c: f64, ctx: &LipschitzContext) -> Result<Vec<(String, f64, f64)>> {
    let ctx = LipschitzContext {
        c1: c,
        c2: c,
        ..ctx.clone()
    };
    let (_, l_c0) = const_mobius_c(&ctx, ConstantForm::General)?;
    let l_y = const_mobius_y(&ctx, ConstantForm::General)?;
    let l_x = const_mobius_x(&ctx, ConstantForm::General)?;
    let (l_ey, _) = const_expmap(&ctx, ConstantForm::General)?;
    let l_ex_tight = const_expmap_x_tight(&ctx)?;
    let l_ly = const_logmap_y(&ctx, ConstantForm::General)?;
    let (l_tan, _) = const_tangent(&ctx, ConstantForm::General)?;
    Ok(vec![
        ("mobius-curvature-zero".into(), l_c0, 0.0),
        ("mobius-right".into(), l_y, 1.0),
        ("mobius-left".into(), l_x, 1.0),
        ("expmap-base".into(), l_ey, 1.0),
        ("expmap-arg".into(), l_ex_tight, 1.0),
        ("logmap-base".into(), l_ly, 1.0),
        ("tangent".into(), l_tan, const_tangent_limit(&ctx)),
    ])
}

/// Estimate Ñ as 1.1 × the maximum observed ‖f_a(logm₀(x))‖ over a feature
/// batch already mapped into the tangent space.
pub fn estimate_n_tilde(mapped_features: &Tensor) -> f64 {
    let d = mapped_features.shape()[1];
    let n = mapped_features.shape()[0];
    let mut best: f64 = 0.0;
    for i in 0..n {
        let row = &mapped_features.data()[i * d..(i + 1) * d];
        best = best.max(norm_of(row));
    }
    best * 1.1
}
