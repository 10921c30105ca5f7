//! First- and second-order differentiation entry points over [`Objective`]s.

use super::real::{Dual, Real};
use super::tape::{Arr, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// A scalar objective of a flat parameter vector `w` and a scalar
/// hyperparameter `c`, expressed in tape primitives.
///
/// Implementations build the same computation for any scalar type, which is
/// what lets one definition serve values, gradients, and forward-over-reverse
/// Hessian-vector products.
pub trait Objective {
    /// Length of the flat parameter vector.
    fn dim(&self) -> usize;

    /// Record the scalar loss on the tape.
    fn build<S: Real>(&self, tape: &mut Tape<S>, w: Var, c: Var) -> Result<Var>;
}

/// Objective scaled by a positive constant, used to keep gradient norms
/// inside the Neumann-series convergence region.
pub struct Scaled<'a, O: Objective + ?Sized> {
    pub inner: &'a O,
    pub factor: f64,
}

impl<'a, O: Objective + ?Sized> Scaled<'a, O> {
    pub fn new(inner: &'a O, factor: f64) -> Self {
        Scaled { inner, factor }
    }
}

impl<O: Objective + ?Sized> Objective for Scaled<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn build<S: Real>(&self, tape: &mut Tape<S>, w: Var, c: Var) -> Result<Var> {
        let out = self.inner.build(tape, w, c)?;
        Ok(tape.scale(out, self.factor))
    }
}

/// How second-order products are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HvpMode {
    /// Central finite differences of the analytic gradient (default).
    #[default]
    FiniteDifference,
    /// Forward-mode tangent pushed through the reverse pass.
    Analytic,
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::Contract(format!("{what} produced non-finite values")))
    }
}

fn run_f64<O: Objective + ?Sized>(obj: &O, w: &Tensor, c: f64) -> Result<(f64, Tensor, f64)> {
    let mut tape = Tape::<f64>::new();
    let wv = tape.leaf(w);
    let cv = tape.scalar_leaf(c);
    let out = obj.build(&mut tape, wv, cv)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::Contract("objective output is not scalar".into()));
    }
    let val = tape.value(out).data[0];
    let shape = w.shape().to_vec();
    let grads = tape.backward(out)?;
    let gw = grads.wrt(wv, &shape).primal().flattened();
    let gc = grads.wrt(cv, &[1]).primal().data()[0];
    Ok((val, gw, gc))
}

/// Loss value at `(w, c)`.
pub fn value<O: Objective + ?Sized>(obj: &O, w: &Tensor, c: f64) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let wv = tape.leaf(w);
    let cv = tape.scalar_leaf(c);
    let out = obj.build(&mut tape, wv, cv)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::Contract("objective output is not scalar".into()));
    }
    let v = tape.value(out).data[0];
    if !v.is_finite() {
        return Err(Error::Contract("objective value is not finite".into()));
    }
    Ok(v)
}

/// dL/dw by reverse mode.
pub fn gradient<O: Objective + ?Sized>(obj: &O, w: &Tensor, c: f64) -> Result<Tensor> {
    let (_, g, _) = run_f64(obj, w, c)?;
    check_finite(&g, "gradient")?;
    Ok(g)
}

/// (L, dL/dw) in one pass.
pub fn value_and_gradient<O: Objective + ?Sized>(
    obj: &O,
    w: &Tensor,
    c: f64,
) -> Result<(f64, Tensor)> {
    let (v, g, _) = run_f64(obj, w, c)?;
    if !v.is_finite() {
        return Err(Error::Contract("objective value is not finite".into()));
    }
    check_finite(&g, "gradient")?;
    Ok((v, g))
}

/// ∂L/∂c at fixed `w` (the direct curvature gradient).
pub fn grad_wrt_c<O: Objective + ?Sized>(obj: &O, w: &Tensor, c: f64) -> Result<f64> {
    let (_, _, gc) = run_f64(obj, w, c)?;
    if !gc.is_finite() {
        return Err(Error::Contract("curvature gradient is not finite".into()));
    }
    Ok(gc)
}

/// Hessian-vector product H·v with H = ∂²L/∂w².
///
/// Finite-difference mode differentiates the gradient along `v` with step
/// `h = max(1e-5, 1e-5·‖w‖)`; analytic mode pushes the tangent `v` through
/// the whole reverse pass with dual numbers.
pub fn hvp<O: Objective + ?Sized>(
    obj: &O,
    w: &Tensor,
    c: f64,
    v: &Tensor,
    mode: HvpMode,
) -> Result<Tensor> {
    if v.numel() != w.numel() {
        return Err(Error::Contract("direction length mismatch".into()));
    }
    let vn = v.norm();
    if vn < 1e-12 {
        return Err(Error::DegenerateDirection(format!(
            "direction norm {vn:.3e} below 1e-12"
        )));
    }
    match mode {
        HvpMode::FiniteDifference => {
            let h = (1e-5f64).max(1e-5 * w.norm());
            let unit = v.scale(1.0 / vn);
            let wp = w.flattened().axpy(h, &unit)?;
            let wm = w.flattened().axpy(-h, &unit)?;
            let gp = gradient(obj, &wp, c)?;
            let gm = gradient(obj, &wm, c)?;
            let hv = gp.sub(&gm)?.scale(vn / (2.0 * h));
            check_finite(&hv, "hvp")?;
            Ok(hv)
        }
        HvpMode::Analytic => {
            let mut tape = Tape::<Dual>::new();
            let seeded = Arr {
                shape: w.shape().to_vec(),
                data: w
                    .data()
                    .iter()
                    .zip(v.data())
                    .map(|(&x, &t)| Dual::new(x, t))
                    .collect(),
            };
            let wv = tape.leaf_arr(seeded);
            let cv = tape.scalar_leaf(Dual::constant(c));
            let out = obj.build(&mut tape, wv, cv)?;
            if tape.value(out).numel() != 1 {
                return Err(Error::Contract("objective output is not scalar".into()));
            }
            let shape = w.shape().to_vec();
            let grads = tape.backward(out)?;
            let gw = grads.wrt(wv, &shape);
            let hv = Tensor::from_vec(gw.data.iter().map(|d| d.d).collect());
            check_finite(&hv, "hvp")?;
            Ok(hv)
        }
    }
}

/// Mixed second partial ∂(∇_w L)/∂c by central differences in `c` with step
/// `δ = max(1e-6, 1e-4·c)`; each side is an analytic gradient.
pub fn mixed_partial_c<O: Objective + ?Sized>(obj: &O, w: &Tensor, c: f64) -> Result<Tensor> {
    let delta = (1e-6f64).max(1e-4 * c);
    if c - delta <= 0.0 {
        return Err(Error::Domain(format!(
            "central step {delta:.3e} leaves the positive-curvature domain at c = {c:.3e}"
        )));
    }
    let gp = gradient(obj, w, c + delta)?;
    let gm = gradient(obj, w, c - delta)?;
    let m = gp.sub(&gm)?.scale(1.0 / (2.0 * delta));
    check_finite(&m, "mixed partial")?;
    Ok(m)
}
