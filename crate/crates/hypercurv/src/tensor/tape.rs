//! Wengert tape: eager forward evaluation with recorded primitives, replayed
//! in reverse for gradients of one scalar output.
//!
//! The tape is generic over the scalar type so the same recording runs with
//! `f64` (values, first-order gradients) or `Dual` (forward-over-reverse
//! Hessian-vector products). A tape is consumed by its single backward pass;
//! ownership enforces the one-shot contract.

use super::real::Real;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Neumaier-compensated sum; keeps the batch reduction insensitive to row
/// order so permuting a batch leaves the mean loss bit-identical.
fn compensated_sum<S: Real>(data: &[S]) -> S {
    let mut sum = S::zero();
    let mut comp = S::zero();
    for &x in data {
        let t = sum + x;
        if sum.primal().abs() >= x.primal().abs() {
            comp = comp + ((sum - t) + x);
        } else {
            comp = comp + ((x - t) + sum);
        }
        sum = t;
    }
    sum + comp
}

/// Internal dense array over the tape scalar type.
#[derive(Debug, Clone)]
pub struct Arr<S> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Real> Arr<S> {
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Arr {
            shape,
            data: vec![S::zero(); n],
        }
    }

    fn scalar(x: S) -> Self {
        Arr {
            shape: vec![1],
            data: vec![x],
        }
    }

    pub fn primal(&self) -> Tensor {
        Tensor::new(
            self.shape.clone(),
            self.data.iter().map(|x| x.primal()).collect(),
        )
        .expect("valid shape")
    }

    fn rows_cols(&self) -> (usize, usize) {
        match self.shape.len() {
            2 => (self.shape[0], self.shape[1]),
            1 => (1, self.shape[0]),
            _ => (1, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// How the smaller operand of a binary op maps onto the larger one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// Operand is a single scalar.
    Scalar,
    /// Operand is (n,1) against (n,d): replicated across columns.
    Col,
    /// Operand is rank-1 of length d against (n,d): replicated across rows.
    Row,
}

#[derive(Debug, Clone, Copy)]
struct BinPlan {
    lhs: Broadcast,
    rhs: Broadcast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Tanh,
    Atanh,
    Asinh,
    Acosh,
    Exp,
    Ln,
    Sqrt,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    Bin {
        kind: BinKind,
        lhs: Var,
        rhs: Var,
        plan: BinPlan,
    },
    Neg(Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Slice {
        src: Var,
        start: usize,
        len: usize,
    },
    Reshape(Var),
    SumAll(Var),
    RowSum(Var),
    Gather {
        src: Var,
        idx: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    Unary {
        kind: UnaryKind,
        src: Var,
    },
    PowConst(Var, f64),
    ClampConst(Var, f64, f64),
}

struct Node<S> {
    val: Arr<S>,
    op: Op,
}

/// Ordered record of primitive operations for one scalar output.
pub struct Tape<S: Real> {
    nodes: Vec<Node<S>>,
}

/// Adjoints produced by a backward pass.
pub struct Gradients<S> {
    grads: Vec<Option<Arr<S>>>,
}

impl<S: Real> Gradients<S> {
    /// Gradient of the output with respect to `var`; zeros if unused.
    pub fn wrt(&self, var: Var, shape: &[usize]) -> Arr<S> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Arr::zeros(shape.to_vec()),
        }
    }
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, val: Arr<S>, op: Op) -> Var {
        self.nodes.push(Node { val, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Arr<S> {
        &self.nodes[v.0].val
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].val.shape
    }

    /// Record a differentiable leaf from primal data.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let arr = Arr {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&x| S::lit(x)).collect(),
        };
        self.push(arr, Op::Leaf)
    }

    /// Record a differentiable leaf carrying a forward-mode tangent.
    /// Only meaningful when `S` is `Dual`-like; with plain `f64` the tangent
    /// is ignored by construction of `lit`.
    pub fn leaf_arr(&mut self, arr: Arr<S>) -> Var {
        self.push(arr, Op::Leaf)
    }

    pub fn scalar_leaf(&mut self, x: S) -> Var {
        self.push(Arr::scalar(x), Op::Leaf)
    }

    /// Record a constant (no gradient flows into it).
    pub fn constant(&mut self, t: &Tensor) -> Var {
        let arr = Arr {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&x| S::lit(x)).collect(),
        };
        self.push(arr, Op::Const)
    }

    pub fn scalar_const(&mut self, x: f64) -> Var {
        self.push(Arr::scalar(S::lit(x)), Op::Const)
    }

    fn classify(big: &[usize], small: &[usize]) -> Option<Broadcast> {
        if big == small {
            return Some(Broadcast::Same);
        }
        let small_numel: usize = small.iter().product();
        if small_numel == 1 {
            return Some(Broadcast::Scalar);
        }
        if big.len() == 2 && small.len() == 2 && small[0] == big[0] && small[1] == 1 {
            return Some(Broadcast::Col);
        }
        if big.len() == 2 && small.len() == 1 && small[0] == big[1] {
            return Some(Broadcast::Row);
        }
        None
    }

    fn plan(&self, a: Var, b: Var) -> Result<(BinPlan, Vec<usize>)> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let na: usize = sa.iter().product();
        let nb: usize = sb.iter().product();
        // The output takes the larger operand's shape; on numel ties the
        // higher-rank shape wins so (1,1) results stay rank 2.
        if na > nb || (na == nb && sa.len() >= sb.len()) {
            match Self::classify(&sa, &sb) {
                Some(rhs) => Ok((
                    BinPlan {
                        lhs: Broadcast::Same,
                        rhs,
                    },
                    sa,
                )),
                None => Err(Error::Contract(format!(
                    "cannot broadcast {:?} with {:?}",
                    sa, sb
                ))),
            }
        } else {
            match Self::classify(&sb, &sa) {
                Some(lhs) => Ok((
                    BinPlan {
                        lhs,
                        rhs: Broadcast::Same,
                    },
                    sb,
                )),
                None => Err(Error::Contract(format!(
                    "cannot broadcast {:?} with {:?}",
                    sa, sb
                ))),
            }
        }
    }

    fn map_index(bc: Broadcast, i: usize, j: usize, cols: usize) -> usize {
        match bc {
            Broadcast::Same => i * cols + j,
            Broadcast::Scalar => 0,
            Broadcast::Col => i,
            Broadcast::Row => j,
        }
    }

    fn bin(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var> {
        let (plan, out_shape) = self.plan(a, b)?;
        let out_arr = {
            let av = self.value(a);
            let bv = self.value(b);
            let (rows, cols) = Arr::<S> {
                shape: out_shape.clone(),
                data: vec![],
            }
            .rows_cols();
            let mut data = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for j in 0..cols {
                    let x = av.data[Self::map_index(plan.lhs, i, j, cols)];
                    let y = bv.data[Self::map_index(plan.rhs, i, j, cols)];
                    data.push(match kind {
                        BinKind::Add => x + y,
                        BinKind::Sub => x - y,
                        BinKind::Mul => x * y,
                        BinKind::Div => x / y,
                    });
                }
            }
            Arr {
                shape: out_shape,
                data,
            }
        };
        Ok(self.push(
            out_arr,
            Op::Bin {
                kind,
                lhs: a,
                rhs: b,
                plan,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin(BinKind::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin(BinKind::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin(BinKind::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin(BinKind::Div, a, b)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let val = Arr {
            shape: self.shape(a).to_vec(),
            data: self.value(a).data.iter().map(|&x| -x).collect(),
        };
        self.push(val, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let kk = S::lit(k);
        let val = Arr {
            shape: self.shape(a).to_vec(),
            data: self.value(a).data.iter().map(|&x| x * kk).collect(),
        };
        self.push(val, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        let c = self.scalar_const(k);
        self.add(a, c)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Contract(format!(
                "matmul of {:?} with {:?}",
                sa, sb
            )));
        }
        let (n, m, k) = (sa[0], sa[1], sb[1]);
        let out = {
            let av = &self.value(a).data;
            let bv = &self.value(b).data;
            let mut data = vec![S::zero(); n * k];
            for i in 0..n {
                for l in 0..m {
                    let x = av[i * m + l];
                    for j in 0..k {
                        data[i * k + j] = data[i * k + j] + x * bv[l * k + j];
                    }
                }
            }
            Arr {
                shape: vec![n, k],
                data,
            }
        };
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 {
            return Err(Error::Contract(format!("transpose of rank {}", sa.len())));
        }
        let (n, m) = (sa[0], sa[1]);
        let out = {
            let av = &self.value(a).data;
            let mut data = vec![S::zero(); n * m];
            for i in 0..n {
                for j in 0..m {
                    data[j * n + i] = av[i * m + j];
                }
            }
            Arr {
                shape: vec![m, n],
                data,
            }
        };
        Ok(self.push(out, Op::Transpose(a)))
    }

    /// Contiguous range of a rank-1 tensor.
    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(src).to_vec();
        if s.len() != 1 {
            return Err(Error::Contract("slice requires rank-1 source".into()));
        }
        if start + len > s[0] {
            return Err(Error::Contract(format!(
                "slice {}..{} out of bounds for length {}",
                start,
                start + len,
                s[0]
            )));
        }
        let val = Arr {
            shape: vec![len],
            data: self.value(src).data[start..start + len].to_vec(),
        };
        Ok(self.push(val, Op::Slice { src, start, len }))
    }

    pub fn reshape(&mut self, src: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(src).numel() {
            return Err(Error::Contract("reshape changes element count".into()));
        }
        let val = Arr {
            shape,
            data: self.value(src).data.clone(),
        };
        Ok(self.push(val, Op::Reshape(src)))
    }

    pub fn sum_all(&mut self, src: Var) -> Var {
        let acc = compensated_sum(&self.value(src).data);
        self.push(Arr::scalar(acc), Op::SumAll(src))
    }

    /// Row sums of an (n,d) tensor, producing (n,1).
    pub fn row_sum(&mut self, src: Var) -> Result<Var> {
        let s = self.shape(src).to_vec();
        if s.len() != 2 {
            return Err(Error::Contract("row_sum requires rank 2".into()));
        }
        let (n, d) = (s[0], s[1]);
        let val = {
            let sv = &self.value(src).data;
            let mut data = Vec::with_capacity(n);
            for i in 0..n {
                let mut acc = S::zero();
                for j in 0..d {
                    acc = acc + sv[i * d + j];
                }
                data.push(acc);
            }
            Arr {
                shape: vec![n, 1],
                data,
            }
        };
        Ok(self.push(val, Op::RowSum(src)))
    }

    /// Pick one column per row of an (n,K) tensor, producing (n,1).
    pub fn gather_rows(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(src).to_vec();
        if s.len() != 2 || s[0] != idx.len() {
            return Err(Error::Contract("gather_rows shape mismatch".into()));
        }
        let k = s[1];
        if let Some(&bad) = idx.iter().find(|&&j| j >= k) {
            return Err(Error::Contract(format!(
                "gather index {} out of range for {} columns",
                bad, k
            )));
        }
        let val = {
            let sv = &self.value(src).data;
            let data = idx
                .iter()
                .enumerate()
                .map(|(i, &j)| sv[i * k + j])
                .collect();
            Arr {
                shape: vec![idx.len(), 1],
                data,
            }
        };
        Ok(self.push(
            val,
            Op::Gather {
                src,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Stack (n,1) columns into (n,K).
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols of nothing".into()));
        }
        let n = match self.shape(parts[0]) {
            [n, 1] => *n,
            other => {
                return Err(Error::Contract(format!(
                    "concat_cols expects (n,1) parts, got {:?}",
                    other
                )))
            }
        };
        for &p in parts {
            if self.shape(p) != [n, 1] {
                return Err(Error::Contract("concat_cols ragged parts".into()));
            }
        }
        let k = parts.len();
        let mut data = vec![S::zero(); n * k];
        for (j, &p) in parts.iter().enumerate() {
            let pv = &self.value(p).data;
            for i in 0..n {
                data[i * k + j] = pv[i];
            }
        }
        Ok(self.push(
            Arr {
                shape: vec![n, k],
                data,
            },
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    fn unary(&mut self, kind: UnaryKind, src: Var) -> Var {
        let val = Arr {
            shape: self.shape(src).to_vec(),
            data: self
                .value(src)
                .data
                .iter()
                .map(|&x| match kind {
                    UnaryKind::Tanh => x.tanh(),
                    UnaryKind::Atanh => x.atanh(),
                    UnaryKind::Asinh => x.asinh(),
                    UnaryKind::Acosh => x.acosh(),
                    UnaryKind::Exp => x.exp(),
                    UnaryKind::Ln => x.ln(),
                    UnaryKind::Sqrt => x.sqrt(),
                })
                .collect(),
        };
        self.push(val, Op::Unary { kind, src })
    }

    pub fn tanh(&mut self, v: Var) -> Var {
        self.unary(UnaryKind::Tanh, v)
    }
    pub fn atanh(&mut self, v: Var) -> Var {
        self.unary(UnaryKind::Atanh, v)
    }
    pub fn asinh(&mut self, v: Var) -> Var {
        self.unary(UnaryKind::Asinh, v)
    }
    pub fn acosh(&mut self, v: Var) -> Var {
        self.unary(UnaryKind::Acosh, v)
    }
    pub fn exp(&mut self, v: Var) -> Var {
        self.unary(UnaryKind::Exp, v)
    }
    pub fn ln(&mut self, v: Var) -> Var {
        self.unary(UnaryKind::Ln, v)
    }
    pub fn sqrt(&mut self, v: Var) -> Var {
        self.unary(UnaryKind::Sqrt, v)
    }

    pub fn powf(&mut self, v: Var, p: f64) -> Var {
        let val = Arr {
            shape: self.shape(v).to_vec(),
            data: self
                .value(v)
                .data
                .iter()
                .map(|&x| x.powf_const(p))
                .collect(),
        };
        self.push(val, Op::PowConst(v, p))
    }

    pub fn clamp(&mut self, v: Var, lo: f64, hi: f64) -> Var {
        let val = Arr {
            shape: self.shape(v).to_vec(),
            data: self
                .value(v)
                .data
                .iter()
                .map(|&x| x.clamp_const(lo, hi))
                .collect(),
        };
        self.push(val, Op::ClampConst(v, lo, hi))
    }

    // ── composite helpers ────────────────────────────────────────────

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        Ok(self.sum_all(p))
    }

    /// Σx² as a scalar.
    pub fn sum_sq(&mut self, a: Var) -> Result<Var> {
        let p = self.mul(a, a)?;
        Ok(self.sum_all(p))
    }

    /// ‖x‖ with a vanishing guard inside the square root.
    pub fn norm_all(&mut self, a: Var) -> Result<Var> {
        let s = self.sum_sq(a)?;
        let s = self.add_scalar(s, 1e-60)?;
        Ok(self.sqrt(s))
    }

    /// Per-row ‖x_i‖² of an (n,d) tensor, as (n,1).
    pub fn norm_sq_rows(&mut self, a: Var) -> Result<Var> {
        let p = self.mul(a, a)?;
        self.row_sum(p)
    }

    /// Per-row ‖x_i‖ with a vanishing guard.
    pub fn norm_rows(&mut self, a: Var) -> Result<Var> {
        let s = self.norm_sq_rows(a)?;
        let s = self.add_scalar(s, 1e-60)?;
        Ok(self.sqrt(s))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Row-wise log-sum-exp of (n,K), stabilized with a detached row max.
    pub fn logsumexp_rows(&mut self, z: Var) -> Result<Var> {
        let s = self.shape(z).to_vec();
        if s.len() != 2 {
            return Err(Error::Contract("logsumexp_rows requires rank 2".into()));
        }
        let (n, k) = (s[0], s[1]);
        let maxes: Vec<f64> = {
            let zv = &self.value(z).data;
            (0..n)
                .map(|i| {
                    (0..k)
                        .map(|j| zv[i * k + j].primal())
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect()
        };
        let m = Tensor::new(vec![n, 1], maxes)?;
        let mv = self.constant(&m);
        let shifted = self.sub(z, mv)?;
        let e = self.exp(shifted);
        let se = self.row_sum(e)?;
        let lse = self.ln(se);
        self.add(lse, mv)
    }

    // ── backward ─────────────────────────────────────────────────────

    fn reduce_to(bc: Broadcast, grad: &Arr<S>, small_shape: &[usize]) -> Arr<S> {
        match bc {
            Broadcast::Same => Arr {
                shape: small_shape.to_vec(),
                data: grad.data.clone(),
            },
            Broadcast::Scalar => {
                let mut acc = S::zero();
                for &g in &grad.data {
                    acc = acc + g;
                }
                Arr {
                    shape: small_shape.to_vec(),
                    data: vec![acc],
                }
            }
            Broadcast::Col => {
                let (n, d) = grad.rows_cols();
                let mut data = vec![S::zero(); n];
                for i in 0..n {
                    for j in 0..d {
                        data[i] = data[i] + grad.data[i * d + j];
                    }
                }
                Arr {
                    shape: small_shape.to_vec(),
                    data,
                }
            }
            Broadcast::Row => {
                let (n, d) = grad.rows_cols();
                let mut data = vec![S::zero(); d];
                for i in 0..n {
                    for j in 0..d {
                        data[j] = data[j] + grad.data[i * d + j];
                    }
                }
                Arr {
                    shape: small_shape.to_vec(),
                    data,
                }
            }
        }
    }

    fn broadcast_fetch(bc: Broadcast, arr: &Arr<S>, i: usize, j: usize, cols: usize) -> S {
        arr.data[Self::map_index(bc, i, j, cols)]
    }

    fn accumulate(grads: &mut [Option<Arr<S>>], var: Var, delta: Arr<S>) {
        match &mut grads[var.0] {
            Some(g) => {
                for (a, b) in g.data.iter_mut().zip(delta.data) {
                    *a = *a + b;
                }
            }
            None => grads[var.0] = Some(delta),
        }
    }

    /// Reverse pass from a scalar output. Consumes the tape.
    pub fn backward(self, out: Var) -> Result<Gradients<S>> {
        if self.value(out).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar output, got shape {:?}",
                self.shape(out)
            )));
        }
        let n_nodes = self.nodes.len();
        let mut grads: Vec<Option<Arr<S>>> = vec![None; n_nodes];
        grads[out.0] = Some(Arr::scalar(S::one()));

        for id in (0..n_nodes).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf | Op::Const => {
                    // keep leaf grads; drop const grads
                    if matches!(node.op, Op::Leaf) {
                        grads[id] = Some(g);
                    }
                }
                Op::Bin {
                    kind,
                    lhs,
                    rhs,
                    plan,
                } => {
                    let (rows, cols) = node.val.rows_cols();
                    let lv = &self.nodes[lhs.0].val;
                    let rv = &self.nodes[rhs.0].val;
                    let mut gl = Arr::<S>::zeros(node.val.shape.clone());
                    let mut gr = Arr::<S>::zeros(node.val.shape.clone());
                    for i in 0..rows {
                        for j in 0..cols {
                            let gid = i * cols + j;
                            let go = g.data[gid];
                            let x = Self::broadcast_fetch(plan.lhs, lv, i, j, cols);
                            let y = Self::broadcast_fetch(plan.rhs, rv, i, j, cols);
                            match kind {
                                BinKind::Add => {
                                    gl.data[gid] = go;
                                    gr.data[gid] = go;
                                }
                                BinKind::Sub => {
                                    gl.data[gid] = go;
                                    gr.data[gid] = -go;
                                }
                                BinKind::Mul => {
                                    gl.data[gid] = go * y;
                                    gr.data[gid] = go * x;
                                }
                                BinKind::Div => {
                                    gl.data[gid] = go / y;
                                    gr.data[gid] = -go * x / (y * y);
                                }
                            }
                        }
                    }
                    let lshape = lv.shape.clone();
                    let rshape = rv.shape.clone();
                    let gl = Self::reduce_to(plan.lhs, &gl, &lshape);
                    let gr = Self::reduce_to(plan.rhs, &gr, &rshape);
                    Self::accumulate(&mut grads, *lhs, gl);
                    Self::accumulate(&mut grads, *rhs, gr);
                }
                Op::Neg(src) => {
                    let delta = Arr {
                        shape: self.nodes[src.0].val.shape.clone(),
                        data: g.data.iter().map(|&x| -x).collect(),
                    };
                    Self::accumulate(&mut grads, *src, delta);
                }
                Op::Scale(src, k) => {
                    let kk = S::lit(*k);
                    let delta = Arr {
                        shape: self.nodes[src.0].val.shape.clone(),
                        data: g.data.iter().map(|&x| x * kk).collect(),
                    };
                    Self::accumulate(&mut grads, *src, delta);
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.0].val;
                    let bv = &self.nodes[b.0].val;
                    let (n, m) = (av.shape[0], av.shape[1]);
                    let k = bv.shape[1];
                    // dA = g · Bᵀ
                    let mut da = vec![S::zero(); n * m];
                    for i in 0..n {
                        for l in 0..m {
                            let mut acc = S::zero();
                            for j in 0..k {
                                acc = acc + g.data[i * k + j] * bv.data[l * k + j];
                            }
                            da[i * m + l] = acc;
                        }
                    }
                    // dB = Aᵀ · g
                    let mut db = vec![S::zero(); m * k];
                    for l in 0..m {
                        for j in 0..k {
                            let mut acc = S::zero();
                            for i in 0..n {
                                acc = acc + av.data[i * m + l] * g.data[i * k + j];
                            }
                            db[l * k + j] = acc;
                        }
                    }
                    Self::accumulate(
                        &mut grads,
                        *a,
                        Arr {
                            shape: vec![n, m],
                            data: da,
                        },
                    );
                    Self::accumulate(
                        &mut grads,
                        *b,
                        Arr {
                            shape: vec![m, k],
                            data: db,
                        },
                    );
                }
                Op::Transpose(src) => {
                    let s = &self.nodes[src.0].val.shape;
                    let (n, m) = (s[0], s[1]);
                    let mut data = vec![S::zero(); n * m];
                    for i in 0..n {
                        for j in 0..m {
                            data[i * m + j] = g.data[j * n + i];
                        }
                    }
                    Self::accumulate(
                        &mut grads,
                        *src,
                        Arr {
                            shape: vec![n, m],
                            data,
                        },
                    );
                }
                Op::Slice { src, start, len } => {
                    let total = self.nodes[src.0].val.numel();
                    let mut data = vec![S::zero(); total];
                    data[*start..start + len].copy_from_slice(&g.data);
                    Self::accumulate(
                        &mut grads,
                        *src,
                        Arr {
                            shape: vec![total],
                            data,
                        },
                    );
                }
                Op::Reshape(src) => {
                    let delta = Arr {
                        shape: self.nodes[src.0].val.shape.clone(),
                        data: g.data.clone(),
                    };
                    Self::accumulate(&mut grads, *src, delta);
                }
                Op::SumAll(src) => {
                    let sv = &self.nodes[src.0].val;
                    let delta = Arr {
                        shape: sv.shape.clone(),
                        data: vec![g.data[0]; sv.numel()],
                    };
                    Self::accumulate(&mut grads, *src, delta);
                }
                Op::RowSum(src) => {
                    let sv = &self.nodes[src.0].val;
                    let (n, d) = (sv.shape[0], sv.shape[1]);
                    let mut data = vec![S::zero(); n * d];
                    for i in 0..n {
                        for j in 0..d {
                            data[i * d + j] = g.data[i];
                        }
                    }
                    Self::accumulate(
                        &mut grads,
                        *src,
                        Arr {
                            shape: vec![n, d],
                            data,
                        },
                    );
                }
                Op::Gather { src, idx } => {
                    let sv = &self.nodes[src.0].val;
                    let (n, k) = (sv.shape[0], sv.shape[1]);
                    let mut data = vec![S::zero(); n * k];
                    for (i, &j) in idx.iter().enumerate() {
                        data[i * k + j] = g.data[i];
                    }
                    Self::accumulate(
                        &mut grads,
                        *src,
                        Arr {
                            shape: vec![n, k],
                            data,
                        },
                    );
                }
                Op::ConcatCols(parts) => {
                    let n = self.nodes[parts[0].0].val.shape[0];
                    let k = parts.len();
                    for (j, &p) in parts.iter().enumerate() {
                        let mut data = vec![S::zero(); n];
                        for (i, slot) in data.iter_mut().enumerate() {
                            *slot = g.data[i * k + j];
                        }
                        Self::accumulate(
                            &mut grads,
                            p,
                            Arr {
                                shape: vec![n, 1],
                                data,
                            },
                        );
                    }
                }
                Op::Unary { kind, src } => {
                    let sv = &self.nodes[src.0].val;
                    let yv = &node.val;
                    let one = S::one();
                    let data = g
                        .data
                        .iter()
                        .enumerate()
                        .map(|(i, &go)| {
                            let x = sv.data[i];
                            let y = yv.data[i];
                            let local = match kind {
                                UnaryKind::Tanh => one - y * y,
                                UnaryKind::Atanh => one / (one - x * x),
                                UnaryKind::Asinh => one / (one + x * x).sqrt(),
                                UnaryKind::Acosh => one / (x * x - one).sqrt(),
                                UnaryKind::Exp => y,
                                UnaryKind::Ln => one / x,
                                UnaryKind::Sqrt => one / (S::lit(2.0) * y),
                            };
                            go * local
                        })
                        .collect();
                    Self::accumulate(
                        &mut grads,
                        *src,
                        Arr {
                            shape: sv.shape.clone(),
                            data,
                        },
                    );
                }
                Op::PowConst(src, p) => {
                    let sv = &self.nodes[src.0].val;
                    let data = g
                        .data
                        .iter()
                        .enumerate()
                        .map(|(i, &go)| go * S::lit(*p) * sv.data[i].powf_const(p - 1.0))
                        .collect();
                    Self::accumulate(
                        &mut grads,
                        *src,
                        Arr {
                            shape: sv.shape.clone(),
                            data,
                        },
                    );
                }
                Op::ClampConst(src, lo, hi) => {
                    let sv = &self.nodes[src.0].val;
                    let data = g
                        .data
                        .iter()
                        .enumerate()
                        .map(|(i, &go)| {
                            let x = sv.data[i].primal();
                            if x < *lo || x > *hi {
                                S::zero()
                            } else {
                                go
                            }
                        })
                        .collect();
                    Self::accumulate(
                        &mut grads,
                        *src,
                        Arr {
                            shape: sv.shape.clone(),
                            data,
                        },
                    );
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Recompute every node value from the recorded leaves; returns the
    /// recomputed value of `out`. Used to check the replay contract.
    pub fn replay(&self, out: Var) -> Arr<S>
    where
        S: PartialEq,
    {
        let mut vals: Vec<Arr<S>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf | Op::Const => node.val.clone(),
                Op::Bin {
                    kind,
                    lhs,
                    rhs,
                    plan,
                } => {
                    let (rows, cols) = node.val.rows_cols();
                    let mut data = Vec::with_capacity(rows * cols);
                    for i in 0..rows {
                        for j in 0..cols {
                            let x = Self::broadcast_fetch(plan.lhs, &vals[lhs.0], i, j, cols);
                            let y = Self::broadcast_fetch(plan.rhs, &vals[rhs.0], i, j, cols);
                            data.push(match kind {
                                BinKind::Add => x + y,
                                BinKind::Sub => x - y,
                                BinKind::Mul => x * y,
                                BinKind::Div => x / y,
                            });
                        }
                    }
                    Arr {
                        shape: node.val.shape.clone(),
                        data,
                    }
                }
                Op::Neg(s) => Arr {
                    shape: node.val.shape.clone(),
                    data: vals[s.0].data.iter().map(|&x| -x).collect(),
                },
                Op::Scale(s, k) => Arr {
                    shape: node.val.shape.clone(),
                    data: vals[s.0].data.iter().map(|&x| x * S::lit(*k)).collect(),
                },
                Op::MatMul(a, b) => {
                    let av = &vals[a.0];
                    let bv = &vals[b.0];
                    let (n, m, k) = (av.shape[0], av.shape[1], bv.shape[1]);
                    let mut data = vec![S::zero(); n * k];
                    for i in 0..n {
                        for l in 0..m {
                            let x = av.data[i * m + l];
                            for j in 0..k {
                                data[i * k + j] = data[i * k + j] + x * bv.data[l * k + j];
                            }
                        }
                    }
                    Arr {
                        shape: vec![n, k],
                        data,
                    }
                }
                Op::Transpose(s) => {
                    let sv = &vals[s.0];
                    let (n, m) = (sv.shape[0], sv.shape[1]);
                    let mut data = vec![S::zero(); n * m];
                    for i in 0..n {
                        for j in 0..m {
                            data[j * n + i] = sv.data[i * m + j];
                        }
                    }
                    Arr {
                        shape: vec![m, n],
                        data,
                    }
                }
                Op::Slice { src, start, len } => Arr {
                    shape: vec![*len],
                    data: vals[src.0].data[*start..start + len].to_vec(),
                },
                Op::Reshape(src) => Arr {
                    shape: node.val.shape.clone(),
                    data: vals[src.0].data.clone(),
                },
                Op::SumAll(src) => Arr::scalar(compensated_sum(&vals[src.0].data)),
                Op::RowSum(src) => {
                    let sv = &vals[src.0];
                    let (n, d) = (sv.shape[0], sv.shape[1]);
                    let mut data = Vec::with_capacity(n);
                    for i in 0..n {
                        let mut acc = S::zero();
                        for j in 0..d {
                            acc = acc + sv.data[i * d + j];
                        }
                        data.push(acc);
                    }
                    Arr {
                        shape: vec![n, 1],
                        data,
                    }
                }
                Op::Gather { src, idx } => {
                    let sv = &vals[src.0];
                    let k = sv.shape[1];
                    Arr {
                        shape: vec![idx.len(), 1],
                        data: idx
                            .iter()
                            .enumerate()
                            .map(|(i, &j)| sv.data[i * k + j])
                            .collect(),
                    }
                }
                Op::ConcatCols(parts) => {
                    let n = vals[parts[0].0].shape[0];
                    let k = parts.len();
                    let mut data = vec![S::zero(); n * k];
                    for (j, &p) in parts.iter().enumerate() {
                        for i in 0..n {
                            data[i * k + j] = vals[p.0].data[i];
                        }
                    }
                    Arr {
                        shape: vec![n, k],
                        data,
                    }
                }
                Op::Unary { kind, src } => Arr {
                    shape: node.val.shape.clone(),
                    data: vals[src.0]
                        .data
                        .iter()
                        .map(|&x| match kind {
                            UnaryKind::Tanh => x.tanh(),
                            UnaryKind::Atanh => x.atanh(),
                            UnaryKind::Asinh => x.asinh(),
                            UnaryKind::Acosh => x.acosh(),
                            UnaryKind::Exp => x.exp(),
                            UnaryKind::Ln => x.ln(),
                            UnaryKind::Sqrt => x.sqrt(),
                        })
                        .collect(),
                },
                Op::PowConst(src, p) => Arr {
                    shape: node.val.shape.clone(),
                    data: vals[src.0]
                        .data
                        .iter()
                        .map(|&x| x.powf_const(*p))
                        .collect(),
                },
                Op::ClampConst(src, lo, hi) => Arr {
                    shape: node.val.shape.clone(),
                    data: vals[src.0]
                        .data
                        .iter()
                        .map(|&x| x.clamp_const(*lo, *hi))
                        .collect(),
                },
            };
            vals.push(v);
        }
        vals[out.0].clone()
    }
}
