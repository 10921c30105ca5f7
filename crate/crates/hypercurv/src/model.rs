//! The hyperbolic network: Euclidean feature extractor, hyperbolic
//! feed-forward layer `expm₀(a·logm₀(x)) ⊕_c b`, hyperbolic MLR head, and the
//! cross-entropy loss over all three stages.
//!
//! All trainable parameters are stored as Euclidean tensors; the hyperbolic
//! bias and MLR shifts are mapped through `expm₀` on use, so one flat vector
//! carries everything and one optimizer handles it.

use crate::error::{Error, Result};
use crate::geometry::{self, BallPoint};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Objective, Real, Tensor};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

/// Version header of the checkpoint archive.
pub const CHECKPOINT_MAGIC: &str = "HYPERCURV-CKPT-1";

/// Minimum admissible norm of an MLR normal vector.
pub const MIN_NORMAL_NORM: f64 = 1e-8;

/// Architecture of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Widths of the tanh extractor; empty means the identity extractor.
    pub hidden: Vec<usize>,
    /// Dimension of the ball embedding.
    pub embed_dim: usize,
    pub classes: usize,
    /// Feature-clipping radius; `None` disables clipping.
    pub clip_radius: Option<f64>,
}

impl ModelConfig {
    pub fn feature_dim(&self) -> usize {
        *self.hidden.last().unwrap_or(&self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config("zero model dimension".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("zero hidden width".into()));
        }
        if let Some(r) = self.clip_radius {
            if !(r > 0.0) {
                return Err(Error::Config(format!("clip radius {r} not positive")));
            }
        }
        Ok(())
    }
}

/// The full parameter set: extractor layers, the linear map of the
/// hyperbolic layer, its bias, and per-class MLR normals and shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct HnnParams {
    /// (weight, bias) per extractor layer.
    pub extractor: Vec<(Tensor, Tensor)>,
    /// Linear map applied in the tangent space at the origin.
    pub linear_map: Tensor,
    /// Hyperbolic bias, stored as a tangent vector (mapped via expm₀ on use).
    pub bias: Tensor,
    /// MLR normal vectors a′_k, tangent at the origin.
    pub mlr_normals: Vec<Tensor>,
    /// MLR shifts b′_k, stored as tangent vectors (mapped via expm₀ on use).
    pub mlr_shifts: Vec<Tensor>,
}

impl HnnParams {
    /// Seeded initialization: small normal weights, zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<HnnParams> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |n: usize, scale: f64| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    // Box–Muller from two uniforms keeps us off rand_distr.
                    let u1: f64 = rng.gen_range(1e-12..1.0);
                    let u2: f64 = rng.gen_range(0.0..1.0);
                    scale
                        * (-2.0 * u1.ln()).sqrt()
                        * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect()
        };
        let mut extractor = Vec::new();
        let mut fan_in = cfg.input_dim;
        for &h in &cfg.hidden {
            let w = Tensor::new(vec![h, fan_in], normal(h * fan_in, 1.0 / (fan_in as f64).sqrt()))?;
            let b = Tensor::zeros(vec![h]);
            extractor.push((w, b));
            fan_in = h;
        }
        let feat = cfg.feature_dim();
        let linear_map = Tensor::new(
            vec![cfg.embed_dim, feat],
            normal(cfg.embed_dim * feat, 1.0 / (feat as f64).sqrt()),
        )?;
        let bias = Tensor::zeros(vec![cfg.embed_dim]);
        let mut mlr_normals = Vec::new();
        let mut mlr_shifts = Vec::new();
        for _ in 0..cfg.classes {
            let mut a = Tensor::from_vec(normal(
                cfg.embed_dim,
                1.0 / (cfg.embed_dim as f64).sqrt(),
            ));
            while a.norm() < MIN_NORMAL_NORM {
                a = Tensor::from_vec(normal(cfg.embed_dim, 1.0));
            }
            mlr_normals.push(a);
            mlr_shifts.push(Tensor::zeros(vec![cfg.embed_dim]));
        }
        Ok(HnnParams {
            extractor,
            linear_map,
            bias,
            mlr_normals,
            mlr_shifts,
        })
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.extractor.len() != cfg.hidden.len() {
            return Err(Error::Contract("extractor depth mismatch".into()));
        }
        for a in &self.mlr_normals {
            if a.norm() < MIN_NORMAL_NORM {
                return Err(Error::Contract(format!(
                    "MLR normal with norm {:.3e} below {MIN_NORMAL_NORM:.0e}",
                    a.norm()
                )));
            }
        }
        Ok(())
    }

    /// The hyperbolic bias as a ball point at curvature `c`.
    pub fn bias_point(&self, c: f64) -> Result<BallPoint> {
        geometry::expmap0(&self.bias, c)
    }

    /// MLR shift of class `k` as a ball point at curvature `c`.
    pub fn mlr_shift_point(&self, k: usize, c: f64) -> Result<BallPoint> {
        geometry::expmap0(&self.mlr_shifts[k], c)
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for (w, b) in &self.extractor {
            n += w.numel() + b.numel();
        }
        n += self.linear_map.numel() + self.bias.numel();
        for (a, s) in self.mlr_normals.iter().zip(&self.mlr_shifts) {
            n += a.numel() + s.numel();
        }
        n
    }

    /// Flatten in a fixed order: extractor (W,b)*, linear map, bias, then
    /// per-class (normal, shift).
    pub fn pack(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.param_count());
        for (w, b) in &self.extractor {
            data.extend_from_slice(w.data());
            data.extend_from_slice(b.data());
        }
        data.extend_from_slice(self.linear_map.data());
        data.extend_from_slice(self.bias.data());
        for (a, s) in self.mlr_normals.iter().zip(&self.mlr_shifts) {
            data.extend_from_slice(a.data());
            data.extend_from_slice(s.data());
        }
        Tensor::from_vec(data)
    }

    pub fn unpack(cfg: &ModelConfig, flat: &Tensor) -> Result<HnnParams> {
        let layout = Layout::new(cfg);
        if flat.numel() != layout.total {
            return Err(Error::Contract(format!(
                "flat vector length {} does not match layout {}",
                flat.numel(),
                layout.total
            )));
        }
        let d = flat.data();
        let take = |r: &std::ops::Range<usize>, shape: Vec<usize>| -> Result<Tensor> {
            Tensor::new(shape, d[r.clone()].to_vec())
        };
        let mut extractor = Vec::new();
        for (i, &h) in cfg.hidden.iter().enumerate() {
            let fan_in = if i == 0 {
                cfg.input_dim
            } else {
                cfg.hidden[i - 1]
            };
            let w = take(&layout.extractor[i].0, vec![h, fan_in])?;
            let b = take(&layout.extractor[i].1, vec![h])?;
            extractor.push((w, b));
        }
        Ok(HnnParams {
            extractor,
            linear_map: take(&layout.linear_map, vec![cfg.embed_dim, cfg.feature_dim()])?,
            bias: take(&layout.bias, vec![cfg.embed_dim])?,
            mlr_normals: (0..cfg.classes)
                .map(|k| take(&layout.mlr[k].0, vec![cfg.embed_dim]))
                .collect::<Result<_>>()?,
            mlr_shifts: (0..cfg.classes)
                .map(|k| take(&layout.mlr[k].1, vec![cfg.embed_dim]))
                .collect::<Result<_>>()?,
        })
    }
}

/// Offsets of every parameter tensor inside the flat vector.
struct Layout {
    extractor: Vec<(std::ops::Range<usize>, std::ops::Range<usize>)>,
    linear_map: std::ops::Range<usize>,
    bias: std::ops::Range<usize>,
    mlr: Vec<(std::ops::Range<usize>, std::ops::Range<usize>)>,
    total: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Layout {
        let mut pos = 0;
        let mut range = |n: usize| {
            let r = pos..pos + n;
            pos += n;
            r
        };
        let mut extractor = Vec::new();
        let mut fan_in = cfg.input_dim;
        for &h in &cfg.hidden {
            let w = range(h * fan_in);
            let b = range(h);
            extractor.push((w, b));
            fan_in = h;
        }
        let feat = cfg.feature_dim();
        let linear_map = range(cfg.embed_dim * feat);
        let bias = range(cfg.embed_dim);
        let mlr = (0..cfg.classes)
            .map(|_| (range(cfg.embed_dim), range(cfg.embed_dim)))
            .collect();
        Layout {
            extractor,
            linear_map,
            bias,
            mlr,
            total: pos,
        }
    }
}

/// A labelled mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize) -> Result<Batch> {
        if inputs.shape().len() != 2 {
            return Err(Error::Contract("batch inputs must be rank 2".into()));
        }
        let n = inputs.shape()[0];
        if n == 0 || labels.len() != n {
            return Err(Error::Contract("batch size/label mismatch".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Contract(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A batch of embeddings on one ball.
#[derive(Debug, Clone)]
pub struct BallBatch {
    /// (n × d) coordinates, every row interior for `curvature`.
    pub coords: Tensor,
    pub curvature: f64,
}

impl BallBatch {
    pub fn point(&self, i: usize) -> Result<BallPoint> {
        let d = self.coords.shape()[1];
        let row = self.coords.data()[i * d..(i + 1) * d].to_vec();
        BallPoint::new(Tensor::from_vec(row), self.curvature)
    }

    pub fn len(&self) -> usize {
        self.coords.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

// ── differentiable builders ──────────────────────────────────────────
//
// Every geometric output passes through the interior-margin projection, the
// differentiable counterpart of `geometry::project_to_ball`: without it a
// saturated tanh rounds onto the boundary and the conformal factors blow up.

/// Rescale rows of `x` into the c‖x‖² ≤ 1−BALL_EPS margin.
fn project_rows<S: Real>(t: &mut Tape<S>, x: Var, c: Var) -> Result<Var> {
    let margin = t.scalar_const(1.0 - geometry::BALL_EPS);
    let r2max = t.div(margin, c)?;
    let rmax = t.sqrt(r2max);
    let r = t.norm_rows(x)?;
    let ratio = t.div(rmax, r)?;
    let factor = t.clamp(ratio, 0.0, 1.0);
    t.mul(x, factor)
}

/// Rescale one rank-1 vector into the interior margin.
fn project_vec<S: Real>(t: &mut Tape<S>, x: Var, c: Var) -> Result<Var> {
    let margin = t.scalar_const(1.0 - geometry::BALL_EPS);
    let r2max = t.div(margin, c)?;
    let rmax = t.sqrt(r2max);
    let r = t.norm_all(x)?;
    let ratio = t.div(rmax, r)?;
    let factor = t.clamp(ratio, 0.0, 1.0);
    t.mul(x, factor)
}

/// expm₀ applied to every row of `v` (n×d).
fn expmap0_rows<S: Real>(t: &mut Tape<S>, v: Var, sqrt_c: Var, c: Var) -> Result<Var> {
    let r = t.norm_rows(v)?;
    let u = t.mul(r, sqrt_c)?;
    let th = t.tanh(u);
    let factor = t.div(th, u)?;
    let out = t.mul(v, factor)?;
    project_rows(t, out, c)
}

/// logm₀ applied to every row of `x` (n×d); rows must be interior.
fn logmap0_rows<S: Real>(t: &mut Tape<S>, x: Var, sqrt_c: Var) -> Result<Var> {
    let r = t.norm_rows(x)?;
    let u = t.mul(r, sqrt_c)?;
    let ath = t.atanh(u);
    let factor = t.div(ath, u)?;
    t.mul(x, factor)
}

/// expm₀ of a single rank-1 tangent vector.
fn expmap0_vec<S: Real>(t: &mut Tape<S>, v: Var, sqrt_c: Var, c: Var) -> Result<Var> {
    let r = t.norm_all(v)?;
    let u = t.mul(r, sqrt_c)?;
    let th = t.tanh(u);
    let factor = t.div(th, u)?;
    let out = t.mul(v, factor)?;
    project_vec(t, out, c)
}

/// Rows ⊕_c vector (the feed-forward bias addition).
fn mobius_add_rows_vec<S: Real>(t: &mut Tape<S>, x: Var, y: Var, c: Var) -> Result<Var> {
    let d = t.shape(y)[0];
    let x2 = t.norm_sq_rows(x)?; // (n,1)
    let y2 = t.sum_sq(y)?; // scalar
    let y_col = t.reshape(y, vec![d, 1])?;
    let xy = t.matmul(x, y_col)?; // (n,1)
    let two_c = t.scale(c, 2.0);
    let cxy2 = t.mul(two_c, xy)?; // (n,1)
    let cy2 = t.mul(c, y2)?; // scalar
    let one = t.scalar_const(1.0);
    let ax0 = t.add(one, cxy2)?;
    let ax = t.add(ax0, cy2)?; // (n,1): 1 + 2c⟨x,y⟩ + c‖y‖²
    let cx2 = t.mul(c, x2)?;
    let ay = t.sub(one, cx2)?; // (n,1): 1 − c‖x‖²
    let c2 = t.mul(c, c)?;
    let x2y2 = t.mul(x2, y2)?;
    let den0 = t.mul(c2, x2y2)?;
    let den1 = t.add(one, cxy2)?;
    let den = t.add(den1, den0)?; // (n,1)
    let tx = t.mul(x, ax)?; // (n,d)
    let y_row = t.reshape(y, vec![1, d])?;
    let ty = t.matmul(ay, y_row)?; // (n,1)·(1,d) = (n,d)
    let num = t.add(tx, ty)?;
    t.div(num, den)
}

/// Vector ⊕_c rows (the MLR Möbius difference −b′ ⊕ x).
fn mobius_add_vec_rows<S: Real>(t: &mut Tape<S>, x: Var, y: Var, c: Var) -> Result<Var> {
    let d = t.shape(x)[0];
    let x2 = t.sum_sq(x)?; // scalar
    let y2 = t.norm_sq_rows(y)?; // (n,1)
    let x_col = t.reshape(x, vec![d, 1])?;
    let xy = t.matmul(y, x_col)?; // (n,1) of ⟨x, y_i⟩
    let two_c = t.scale(c, 2.0);
    let cxy2 = t.mul(two_c, xy)?;
    let cy2 = t.mul(c, y2)?; // (n,1)
    let one = t.scalar_const(1.0);
    let ax0 = t.add(one, cxy2)?;
    let ax = t.add(ax0, cy2)?; // (n,1)
    let cx2 = t.mul(c, x2)?; // scalar
    let ay = t.sub(one, cx2)?; // scalar: 1 − c‖x‖²
    let c2 = t.mul(c, c)?;
    let x2y2 = t.mul(y2, x2)?; // (n,1)
    let den0 = t.mul(c2, x2y2)?;
    let den1 = t.add(one, cxy2)?;
    let den = t.add(den1, den0)?;
    let x_row = t.reshape(x, vec![1, d])?;
    let tx = t.matmul(ax, x_row)?; // (n,d)
    let ty = t.mul(y, ay)?; // scalar broadcast
    let num = t.add(tx, ty)?;
    t.div(num, den)
}

/// Slices of the packed parameter vector as tape vars.
struct TapeParams {
    extractor: Vec<(Var, Var)>,
    linear_map: Var,
    bias: Var,
    mlr: Vec<(Var, Var)>,
}

fn unpack_on_tape<S: Real>(t: &mut Tape<S>, cfg: &ModelConfig, w: Var) -> Result<TapeParams> {
    let mut pos = 0;
    let mut extractor = Vec::new();
    let mut fan_in = cfg.input_dim;
    for &h in &cfg.hidden {
        let wmat = t.slice(w, pos, h * fan_in)?;
        let wmat = t.reshape(wmat, vec![h, fan_in])?;
        pos += h * fan_in;
        let b = t.slice(w, pos, h)?;
        pos += h;
        extractor.push((wmat, b));
        fan_in = h;
    }
    let feat = cfg.feature_dim();
    let a = t.slice(w, pos, cfg.embed_dim * feat)?;
    let linear_map = t.reshape(a, vec![cfg.embed_dim, feat])?;
    pos += cfg.embed_dim * feat;
    let bias = t.slice(w, pos, cfg.embed_dim)?;
    pos += cfg.embed_dim;
    let mut mlr = Vec::new();
    for _ in 0..cfg.classes {
        let normal = t.slice(w, pos, cfg.embed_dim)?;
        pos += cfg.embed_dim;
        let shift = t.slice(w, pos, cfg.embed_dim)?;
        pos += cfg.embed_dim;
        mlr.push((normal, shift));
    }
    Ok(TapeParams {
        extractor,
        linear_map,
        bias,
        mlr,
    })
}

/// Extractor → optional clip → expm₀ → Eq.-6 layer. Returns (n × embed_dim)
/// ball coordinates.
fn build_embed<S: Real>(
    t: &mut Tape<S>,
    cfg: &ModelConfig,
    p: &TapeParams,
    inputs: Var,
    sqrt_c: Var,
    c: Var,
) -> Result<Var> {
    let mut feats = inputs;
    for (wm, b) in &p.extractor {
        let wt = t.transpose(*wm)?;
        let lin = t.matmul(feats, wt)?;
        let lin = t.add(lin, *b)?; // row broadcast
        feats = t.tanh(lin);
    }
    if let Some(r) = cfg.clip_radius {
        let norms = t.norm_rows(feats)?;
        let rr = t.scalar_const(r);
        let ratio = t.div(rr, norms)?;
        let factor = t.clamp(ratio, 0.0, 1.0); // min(1, r/‖v‖)
        feats = t.mul(feats, factor)?;
    }
    let x_ball = expmap0_rows(t, feats, sqrt_c, c)?;
    let u = logmap0_rows(t, x_ball, sqrt_c)?;
    let at = t.transpose(p.linear_map)?;
    let au = t.matmul(u, at)?; // (n, embed)
    let h = expmap0_rows(t, au, sqrt_c, c)?;
    let b_ball = expmap0_vec(t, p.bias, sqrt_c, c)?;
    let out = mobius_add_rows_vec(t, h, b_ball, c)?;
    project_rows(t, out, c)
}

/// Eq.-7 logits for every class; returns (n × K).
fn build_logits<S: Real>(
    t: &mut Tape<S>,
    cfg: &ModelConfig,
    p: &TapeParams,
    points: Var,
    sqrt_c: Var,
    c: Var,
) -> Result<Var> {
    let one = t.scalar_const(1.0);
    let mut cols = Vec::with_capacity(cfg.classes);
    for (normal, shift) in &p.mlr {
        let b_ball = expmap0_vec(t, *shift, sqrt_c, c)?;
        let neg_b = t.neg(b_ball);
        let raw = mobius_add_vec_rows(t, neg_b, points, c)?; // (n,d)
        let u = project_rows(t, raw, c)?;
        let a_norm = t.norm_all(*normal)?;
        let u_sq = t.norm_sq_rows(u)?; // (n,1)
        let d = cfg.embed_dim;
        let a_col = t.reshape(*normal, vec![d, 1])?;
        let ua = t.matmul(u, a_col)?; // (n,1)
        let two_sc = t.scale(sqrt_c, 2.0);
        let numer = t.mul(ua, two_sc)?;
        let cu = t.mul(u_sq, c)?;
        let gap = t.sub(one, cu)?; // (n,1): 1 − c‖u‖²
        let denom = t.mul(gap, a_norm)?;
        let arg = t.div(numer, denom)?;
        let ash = t.asinh(arg);
        // λ_{b′} = 2/(1 − c‖b′‖²)
        let b_sq = t.sum_sq(b_ball)?;
        let cb = t.mul(c, b_sq)?;
        let lam_den = t.sub(one, cb)?;
        let two = t.scalar_const(2.0);
        let lam = t.div(two, lam_den)?;
        let lead0 = t.mul(lam, a_norm)?;
        let lead = t.div(lead0, sqrt_c)?;
        let logit = t.mul(ash, lead)?;
        cols.push(logit);
    }
    t.concat_cols(&cols)
}

fn build_ce<S: Real>(t: &mut Tape<S>, logits: Var, labels: &[usize]) -> Result<Var> {
    let lse = t.logsumexp_rows(logits)?;
    let picked = t.gather_rows(logits, labels)?;
    let per = t.sub(lse, picked)?;
    Ok(t.mean_all(per))
}

/// The three-stage loss as a tape objective over the packed parameters.
pub struct HnnObjective<'a> {
    pub config: &'a ModelConfig,
    pub batch: &'a Batch,
}

impl<'a> HnnObjective<'a> {
    pub fn new(config: &'a ModelConfig, batch: &'a Batch) -> Self {
        HnnObjective { config, batch }
    }
}

impl Objective for HnnObjective<'_> {
    fn dim(&self) -> usize {
        Layout::new(self.config).total
    }

    fn build<S: Real>(&self, t: &mut Tape<S>, w: Var, c: Var) -> Result<Var> {
        let p = unpack_on_tape(t, self.config, w)?;
        let inputs = t.constant(&self.batch.inputs);
        let sqrt_c = t.sqrt(c);
        let emb = build_embed(t, self.config, &p, inputs, sqrt_c, c)?;
        let logits = build_logits(t, self.config, &p, emb, sqrt_c, c)?;
        build_ce(t, logits, &self.batch.labels)
    }
}

// ── public evaluation wrappers ───────────────────────────────────────

fn eval_embed(cfg: &ModelConfig, params: &HnnParams, inputs: &Tensor, c: f64) -> Result<Tensor> {
    params.validate(cfg)?;
    let mut t = Tape::<f64>::new();
    let w = params.pack();
    let wv = t.leaf(&w);
    let cv = t.scalar_leaf(c);
    let sqrt_c = t.sqrt(cv);
    let p = unpack_on_tape(&mut t, cfg, wv)?;
    let iv = t.constant(inputs);
    let emb = build_embed(&mut t, cfg, &p, iv, sqrt_c, cv)?;
    Ok(t.value(emb).primal())
}

/// Per-row hyperbolic embedding of a feature batch.
pub fn forward_embed(
    cfg: &ModelConfig,
    params: &HnnParams,
    inputs: &Tensor,
    c: f64,
) -> Result<BallBatch> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Domain(format!("curvature {c} not positive")));
    }
    let coords = eval_embed(cfg, params, inputs, c)?;
    if !coords.is_finite() {
        return Err(Error::Contract("embedding produced non-finite rows".into()));
    }
    Ok(BallBatch {
        coords,
        curvature: c,
    })
}

/// Hyperbolic MLR logits of embedded points, (n × K).
pub fn mlr_logits(cfg: &ModelConfig, params: &HnnParams, points: &BallBatch) -> Result<Tensor> {
    params.validate(cfg)?;
    let c = points.curvature;
    let mut t = Tape::<f64>::new();
    let w = params.pack();
    let wv = t.leaf(&w);
    let cv = t.scalar_leaf(c);
    let sqrt_c = t.sqrt(cv);
    let p = unpack_on_tape(&mut t, cfg, wv)?;
    let pts = t.constant(&points.coords);
    // Boundary check of Eq. 7's denominator per row/class.
    let logits = build_logits(&mut t, cfg, &p, pts, sqrt_c, cv)?;
    let out = t.value(logits).primal();
    if !out.is_finite() {
        return Err(Error::Boundary(
            "MLR denominator collapsed at the ball boundary".into(),
        ));
    }
    Ok(out)
}

/// Mean cross-entropy of softmax(logits) against the labels.
pub fn loss(cfg: &ModelConfig, params: &HnnParams, batch: &Batch, c: f64) -> Result<f64> {
    let obj = HnnObjective::new(cfg, batch);
    crate::tensor::value(&obj, &params.pack(), c)
}

/// Argmax prediction per row; ties break toward the lowest class index.
pub fn predict(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[1];
    let n = logits.shape()[0];
    (0..n)
        .map(|i| {
            let row = &logits.data()[i * k..(i + 1) * k];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fraction of correctly classified rows.
pub fn accuracy(cfg: &ModelConfig, params: &HnnParams, batch: &Batch, c: f64) -> Result<f64> {
    let emb = forward_embed(cfg, params, &batch.inputs, c)?;
    let logits = mlr_logits(cfg, params, &emb)?;
    let pred = predict(&logits);
    let hits = pred
        .iter()
        .zip(&batch.labels)
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / batch.len() as f64)
}

// ── checkpoint format ────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct CheckpointTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointBody {
    config: ModelConfig,
    curvature: f64,
    tensors: BTreeMap<String, CheckpointTensor>,
}

fn tensor_entries(params: &HnnParams) -> BTreeMap<String, CheckpointTensor> {
    let mut map = BTreeMap::new();
    let mut put = |name: String, t: &Tensor| {
        map.insert(
            name,
            CheckpointTensor {
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            },
        );
    };
    for (i, (w, b)) in params.extractor.iter().enumerate() {
        put(format!("extractor.{i}.weight"), w);
        put(format!("extractor.{i}.bias"), b);
    }
    put("linear_map".into(), &params.linear_map);
    put("bias".into(), &params.bias);
    for (k, (a, s)) in params
        .mlr_normals
        .iter()
        .zip(&params.mlr_shifts)
        .enumerate()
    {
        put(format!("mlr.{k}.normal"), a);
        put(format!("mlr.{k}.shift"), s);
    }
    map
}

/// Write a checkpoint: a one-line version header followed by a JSON body
/// with sorted tensor keys.
pub fn save_checkpoint<W: Write>(
    mut out: W,
    cfg: &ModelConfig,
    params: &HnnParams,
    curvature: f64,
) -> Result<()> {
    writeln!(out, "{CHECKPOINT_MAGIC}")?;
    let body = CheckpointBody {
        config: cfg.clone(),
        curvature,
        tensors: tensor_entries(params),
    };
    serde_json::to_writer(&mut out, &body)?;
    writeln!(out)?;
    Ok(())
}

pub fn load_checkpoint<R: BufRead>(mut input: R) -> Result<(ModelConfig, HnnParams, f64)> {
    let mut header = String::new();
    input.read_line(&mut header)?;
    if header.trim_end() != CHECKPOINT_MAGIC {
        return Err(Error::Parse {
            row: 1,
            column: "header".into(),
            message: format!("expected {CHECKPOINT_MAGIC}, found {:?}", header.trim_end()),
        });
    }
    let body: CheckpointBody = serde_json::from_reader(&mut input)?;
    let get = |name: &str| -> Result<Tensor> {
        let entry = body
            .tensors
            .get(name)
            .ok_or_else(|| Error::Parse {
                row: 2,
                column: name.into(),
                message: "missing tensor".into(),
            })?;
        Tensor::new(entry.shape.clone(), entry.data.clone())
    };
    let cfg = body.config.clone();
    let mut extractor = Vec::new();
    for i in 0..cfg.hidden.len() {
        extractor.push((
            get(&format!("extractor.{i}.weight"))?,
            get(&format!("extractor.{i}.bias"))?,
        ));
    }
    let params = HnnParams {
        extractor,
        linear_map: get("linear_map")?,
        bias: get("bias")?,
        mlr_normals: (0..cfg.classes)
            .map(|k| get(&format!("mlr.{k}.normal")))
            .collect::<Result<_>>()?,
        mlr_shifts: (0..cfg.classes)
            .map(|k| get(&format!("mlr.{k}.shift")))
            .collect::<Result<_>>()?,
    };
    params.validate(&cfg)?;
    Ok((cfg, params, body.curvature))
}
