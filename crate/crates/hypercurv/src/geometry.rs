//! Poincaré-ball primitives with positive curvature magnitude `c`, i.e. the
//! open ball `{x : c‖x‖² < 1}` of sectional curvature `-c`.
//!
//! Every operation is a pure function; results re-enter the ball through
//! [`project_to_ball`] so downstream `atanh` calls stay off the boundary.
//! Small-argument branches return the exact removable-singularity limits.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Interior margin: points satisfy `c‖x‖² ≤ 1 − BALL_EPS`.
pub const BALL_EPS: f64 = 1e-5;
/// Default curvature range for trainable models.
pub const DEFAULT_C_MIN: f64 = 1e-6;
pub const DEFAULT_C_MAX: f64 = 1.0;

const TINY: f64 = 1e-12;

/// A vector certified to lie strictly inside the ball of its curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint {
    coords: Tensor,
    curvature: f64,
}

impl BallPoint {
    /// Validate an existing vector; fails if it is outside the interior
    /// margin or the curvature is not positive and finite.
    pub fn new(coords: Tensor, curvature: f64) -> Result<Self> {
        if !(curvature.is_finite() && curvature > 0.0) {
            return Err(Error::Domain(format!(
                "curvature must be positive and finite, got {curvature}"
            )));
        }
        if !coords.is_finite() {
            return Err(Error::Contract("ball point with non-finite coords".into()));
        }
        let sq = coords.data().iter().map(|x| x * x).sum::<f64>();
        if curvature * sq > 1.0 - BALL_EPS + 1e-15 {
            return Err(Error::Boundary(format!(
                "c‖x‖² = {:.6e} exceeds interior bound {:.6e}",
                curvature * sq,
                1.0 - BALL_EPS
            )));
        }
        Ok(BallPoint { coords, curvature })
    }

    pub fn origin(dim: usize, curvature: f64) -> Result<Self> {
        BallPoint::new(Tensor::zeros(vec![dim]), curvature)
    }

    pub fn coords(&self) -> &Tensor {
        &self.coords
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    pub fn dim(&self) -> usize {
        self.coords.numel()
    }

    pub fn norm(&self) -> f64 {
        self.coords.norm()
    }

    pub fn neg(&self) -> BallPoint {
        BallPoint {
            coords: self.coords.scale(-1.0),
            curvature: self.curvature,
        }
    }

    /// Conformal factor λ_x^c = 2/(1 − c‖x‖²).
    pub fn conformal_factor(&self) -> f64 {
        2.0 / (1.0 - self.curvature * self.norm() * self.norm())
    }
}

/// A tangent vector attached to a base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub coords: Tensor,
    pub base: BallPoint,
}

impl TangentVector {
    pub fn new(coords: Tensor, base: BallPoint) -> Result<Self> {
        if !coords.is_finite() {
            return Err(Error::Contract("non-finite tangent vector".into()));
        }
        if coords.numel() != base.dim() {
            return Err(Error::Contract("tangent/base dimension mismatch".into()));
        }
        Ok(TangentVector { coords, base })
    }

    pub fn at_origin(coords: Tensor, curvature: f64) -> Result<Self> {
        let dim = coords.numel();
        TangentVector::new(coords, BallPoint::origin(dim, curvature)?)
    }
}

fn same_curvature(a: &BallPoint, b: &BallPoint) -> Result<f64> {
    if a.curvature != b.curvature {
        return Err(Error::Contract(format!(
            "curvature mismatch: {} vs {}",
            a.curvature, b.curvature
        )));
    }
    Ok(a.curvature)
}

/// Möbius addition x ⊕_c y, projected into the interior.
pub fn mobius_add(x: &BallPoint, y: &BallPoint) -> Result<BallPoint> {
    let c = same_curvature(x, y)?;
    let raw = mobius_add_raw(x.coords.data(), y.coords.data(), c)?;
    project_to_ball(&Tensor::from_vec(raw), c)
}

/// The bare Möbius formula on raw coordinate slices (no projection).
pub fn mobius_add_raw(x: &[f64], y: &[f64], c: f64) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::Contract("mobius_add of mismatched dims".into()));
    }
    let x2: f64 = x.iter().map(|v| v * v).sum();
    let y2: f64 = y.iter().map(|v| v * v).sum();
    let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
    if den.abs() < TINY {
        return Err(Error::NearSingular(format!(
            "Möbius denominator {den:.3e}"
        )));
    }
    let ax = 1.0 + 2.0 * c * xy + c * y2;
    let ay = 1.0 - c * x2;
    Ok(x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| (ax * xi + ay * yi) / den)
        .collect())
}

/// Exponential map at `y`: y ⊕_c tanh(√c·λ_y‖v‖/2)·v/(√c‖v‖).
pub fn expmap(y: &BallPoint, v: &TangentVector) -> Result<BallPoint> {
    if v.base != *y {
        return Err(Error::Contract("tangent vector not based at y".into()));
    }
    let c = y.curvature;
    let vn = v.coords.norm();
    if vn < TINY {
        return Ok(y.clone());
    }
    let sc = c.sqrt();
    let lambda = y.conformal_factor();
    let scale = (sc * lambda * vn / 2.0).tanh() / (sc * vn);
    let step = v.coords.scale(scale);
    let step_pt = project_to_ball(&step, c)?;
    mobius_add(y, &step_pt)
}

/// Exponential map at the origin: tanh(√c‖v‖)·v/(√c‖v‖).
pub fn expmap0(v: &Tensor, c: f64) -> Result<BallPoint> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::Domain(format!("curvature {c} not positive")));
    }
    let vn = v.norm();
    if vn < TINY {
        return BallPoint::new(Tensor::zeros(vec![v.numel()]), c);
    }
    let sc = c.sqrt();
    let scale = (sc * vn).tanh() / (sc * vn);
    project_to_ball(&v.scale(scale), c)
}

/// Logarithmic map at `y`: (2/(√c·λ_y))·atanh(√c‖u‖)·u/‖u‖ with u = (−y)⊕x.
pub fn logmap(y: &BallPoint, x: &BallPoint) -> Result<TangentVector> {
    let c = same_curvature(y, x)?;
    if y.coords.data() == x.coords.data() {
        return TangentVector::new(Tensor::zeros(vec![y.dim()]), y.clone());
    }
    let u = mobius_add_raw(y.neg().coords.data(), x.coords.data(), c)?;
    let un: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if un < TINY {
        return TangentVector::new(Tensor::zeros(vec![y.dim()]), y.clone());
    }
    let sc = c.sqrt();
    if sc * un >= 1.0 - TINY {
        return Err(Error::Boundary(format!(
            "√c‖−y⊕x‖ = {:.12} at the atanh boundary",
            sc * un
        )));
    }
    let lambda = y.conformal_factor();
    let scale = (2.0 / (sc * lambda)) * (sc * un).atanh() / un;
    TangentVector::new(Tensor::from_vec(u).scale(scale), y.clone())
}

/// Logarithmic map at the origin.
pub fn logmap0(x: &BallPoint) -> Result<Tensor> {
    let origin = BallPoint::origin(x.dim(), x.curvature)?;
    Ok(logmap(&origin, x)?.coords)
}

/// Poincaré distance d_c(x,y) = (2/√c)·atanh(√c‖(−x)⊕y‖).
pub fn distance(x: &BallPoint, y: &BallPoint) -> Result<f64> {
    let c = same_curvature(x, y)?;
    if x.coords.data() == y.coords.data() {
        return Ok(0.0);
    }
    let u = mobius_add_raw(x.neg().coords.data(), y.coords.data(), c)?;
    let un: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sc = c.sqrt();
    if sc * un >= 1.0 - TINY {
        return Err(Error::Boundary(format!(
            "√c‖(−x)⊕y‖ = {:.12} at the atanh boundary",
            sc * un
        )));
    }
    Ok(2.0 / sc * (sc * un).atanh())
}

/// Rescale `v` into the interior margin if necessary; interior points pass
/// through unchanged.
pub fn project_to_ball(v: &Tensor, c: f64) -> Result<BallPoint> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::Domain(format!("curvature {c} not positive")));
    }
    let sq = v.data().iter().map(|x| x * x).sum::<f64>();
    if c * sq <= 1.0 - BALL_EPS {
        return Ok(BallPoint {
            coords: v.clone(),
            curvature: c,
        });
    }
    let target = ((1.0 - BALL_EPS) / c).sqrt();
    let scaled = v.scale(target / sq.sqrt());
    Ok(BallPoint {
        coords: scaled,
        curvature: c,
    })
}

/// Norm-cap v·min(1, r/‖v‖); the zero vector passes through.
pub fn clip_features(v: &Tensor, r: f64) -> Result<Tensor> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("clip radius {r} not positive")));
    }
    let n = v.norm();
    if n <= r || n == 0.0 {
        Ok(v.clone())
    } else {
        Ok(v.scale(r / n))
    }
}
