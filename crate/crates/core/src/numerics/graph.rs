//! Tape-based reverse-mode autodiff.
//!
//! Nodes are appended in evaluation order, so the tape itself is a
//! topological order and `backward` is a single reverse sweep. Forward
//! values are stored in the graph's scalar type; every reduction and every
//! gradient accumulates in f64.

use super::tensor::{numel, strides, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Bmm { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    BroadcastTo(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Option<Var>, beta: Option<Var>, xhat: Vec<f64>, rstd: Vec<f64> },
    L2Normalize { x: Var, eps: f64 },
    Rope { x: Var, base: f64 },
    Gelu(Var),
    Silu(Var),
    Sigmoid(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

pub struct Graph<S: Scalar = f32> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `[outer, axis, inner]` split of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

/// Batched product in f64. `a` is `[batch, m, k]`; `b` is `[batch, k, n]`
/// or `[batch, n, k]` when `trans_b`; `trans_a` reads `a` as `[batch, k, m]`.
#[allow(clippy::too_many_arguments)]
fn bmm_f64(
    a: &[f64],
    b: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
) -> Vec<f64> {
    let mut out = vec![0.0; batch * m * n];
    for bi in 0..batch {
        let ab = &a[bi * m * k..(bi + 1) * m * k];
        let bb = &b[bi * k * n..(bi + 1) * k * n];
        let ob = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            let row = &mut ob[i * n..(i + 1) * n];
            if trans_b {
                for (j, r) in row.iter_mut().enumerate() {
                    let brow = &bb[j * k..(j + 1) * k];
                    let mut acc = 0.0;
                    for kk in 0..k {
                        let av = if trans_a { ab[kk * m + i] } else { ab[i * k + kk] };
                        acc += av * brow[kk];
                    }
                    *r = acc;
                }
            } else {
                for kk in 0..k {
                    let av = if trans_a { ab[kk * m + i] } else { ab[i * k + kk] };
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &bb[kk * n..(kk + 1) * n];
                    for (r, &bv) in row.iter_mut().zip(brow) {
                        *r += av * bv;
                    }
                }
            }
        }
    }
    out
}

fn permute_f64(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let nd = out_shape.len();
    let mut idx = vec![0usize; nd];
    let mut src = 0usize;
    for _ in 0..n {
        out.push(data[src]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

fn rope_angles(t_len: usize, half: usize, base: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(t_len * half);
    for pos in 0..t_len {
        for i in 0..half {
            let freq = base.powf(-(2.0 * i as f64) / (2.0 * half as f64));
            let ang = pos as f64 * freq;
            out.push((ang.cos(), ang.sin()));
        }
    }
    out
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf; gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        let requires_grad = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.leaf(t.with_grad(false))
    }

    pub fn param(&mut self, t: Tensor<S>) -> Var {
        self.leaf(t.with_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn vals(&self, v: Var) -> Vec<f64> {
        self.nodes[v.0].value.to_f64_vec()
    }

    fn push(&mut self, name: &'static str, shape: Vec<usize>, data: Vec<f64>, op: Op, parents: &[Var]) -> Result<Var> {
        let stored: Vec<S> = data.into_iter().map(S::from_f64).collect();
        if stored.iter().any(|v| !v.to_f64().is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Tensor::new(shape, stored)?,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let out = bmm_f64(&self.vals(a), &self.vals(b), 1, sa[0], sa[1], sb[1], false, false);
        self.push("matmul", vec![sa[0], sb[1]], out, Op::MatMul(a, b), &[a, b])
    }

    /// Batched matmul over a leading batch axis; `trans_b` multiplies by `b`ᵀ.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if trans_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
        if !ok {
            return Err(Error::dim("bmm", format!("{:?} x {:?} (trans_b={})", sa, sb, trans_b)));
        }
        let n = if trans_b { sb[1] } else { sb[2] };
        let out = bmm_f64(&self.vals(a), &self.vals(b), sa[0], sa[1], sa[2], n, false, trans_b);
        self.push("bmm", vec![sa[0], sa[1], n], out, Op::Bmm { a, b, trans_b }, &[a, b])
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (va, vb) = (self.vals(a), self.vals(b));
        let out = va.iter().zip(&vb).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(name, shape, out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn map(&mut self, name: &'static str, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = self.vals(x).into_iter().map(f).collect();
        let shape = self.shape(x).to_vec();
        self.push(name, shape, out, op, &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map("scale", x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map("add_scalar", x, Op::AddScalar(x), |v| v + c)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.map("gelu", x, Op::Gelu(x), |v| {
            0.5 * v * (1.0 + (SQRT_2_OVER_PI * (v + GELU_C * v * v * v)).tanh())
        })
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.map("silu", x, Op::Silu(x), |v| v * sigmoid(v))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map("sigmoid", x, Op::Sigmoid(x), sigmoid)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.map("square", x, Op::Square(x), |v| v * v)
    }

    /// Expands size-1 axes to `shape`. Ranks must match; this is the only
    /// broadcasting the graph performs and it is always explicit.
    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(x).to_vec();
        if src.len() != shape.len() || src.iter().zip(shape).any(|(&s, &d)| s != d && s != 1) {
            return Err(Error::dim("broadcast_to", format!("{:?} -> {:?}", src, shape)));
        }
        let vals = self.vals(x);
        let st = strides(&src);
        let eff: Vec<usize> = src.iter().zip(&st).map(|(&s, &k)| if s == 1 { 0 } else { k }).collect();
        let out = gather_broadcast(&vals, shape, &eff);
        self.push("broadcast_to", shape.to_vec(), out, Op::BroadcastTo(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != numel(self.shape(x)) {
            return Err(Error::dim("reshape", format!("{:?} -> {:?}", self.shape(x), shape)));
        }
        let out = self.vals(x);
        self.push("reshape", shape.to_vec(), out, Op::Reshape(x), &[x])
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::dim("permute", format!("axes {:?} for {:?}", axes, shape)));
        }
        let (out, out_shape) = permute_f64(&self.vals(x), &shape, axes);
        self.push("permute", out_shape, out, Op::Permute(x, axes.to_vec()), &[x])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat", "no parts"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {} for {:?}", axis, base)));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", format!("{:?} vs {:?}", base, s)));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        let part_vals: Vec<(Vec<f64>, usize)> = parts.iter().map(|p| (self.vals(*p), self.shape(*p)[axis])).collect();
        for o in 0..outer {
            for (v, len) in &part_vals {
                out.extend_from_slice(&v[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push("concat", shape, out, Op::Concat { parts: parts.to_vec(), axis }, parts)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::dim("slice", format!("axis {} range {}..{} of {:?}", axis, start, start + len, shape)));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let v = self.vals(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&v[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.push("slice", out_shape, out, Op::Slice { x, axis, start }, &[x])
    }

    /// Numerically stable softmax (max-subtracted) along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::dim("softmax", format!("axis {} of {:?}", axis, shape)));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let v = self.vals(x);
        let mut out = vec![0.0; v.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let m = (0..n).map(|j| v[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..n {
                    let e = (v[at(j)] - m).exp();
                    out[at(j)] = e;
                    z += e;
                }
                for j in 0..n {
                    out[at(j)] /= z;
                }
            }
        }
        self.push("softmax", shape, out, Op::Softmax { x, axis }, &[x])
    }

    /// Layer norm over the last axis with optional affine `gamma`/`beta` of
    /// that axis' length.
    pub fn layer_norm(&mut self, x: Var, gamma: Option<Var>, beta: Option<Var>, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Domain(format!("layer_norm eps must be > 0, got {}", eps)));
        }
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::dim("layer_norm", "scalar input"))?;
        if d == 0 {
            return Err(Error::dim("layer_norm", "empty normalization axis"));
        }
        for p in [gamma, beta].into_iter().flatten() {
            if self.shape(p) != [d] {
                return Err(Error::dim("layer_norm", format!("affine {:?} for axis {}", self.shape(p), d)));
            }
        }
        let v = self.vals(x);
        let g = gamma.map(|p| self.vals(p));
        let b = beta.map(|p| self.vals(p));
        let rows = v.len() / d;
        let mut xhat = vec![0.0; v.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            let row = &v[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                let gj = g.as_ref().map_or(1.0, |g| g[j]);
                let bj = b.as_ref().map_or(0.0, |b| b[j]);
                out[r * d + j] = gj * h + bj;
            }
        }
        let parents: Vec<Var> = std::iter::once(x).chain(gamma).chain(beta).collect();
        self.push("layer_norm", shape, out, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &parents)
    }

    /// `x / (‖x‖ + eps)` over the last axis.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Domain(format!("l2_normalize eps must be > 0, got {}", eps)));
        }
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::dim("l2_normalize", "scalar input"))?;
        let v = self.vals(x);
        let mut out = vec![0.0; v.len()];
        for (row, orow) in v.chunks(d.max(1)).zip(out.chunks_mut(d.max(1))) {
            let n = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            for (o, a) in orow.iter_mut().zip(row) {
                *o = a / (n + eps);
            }
        }
        self.push("l2_normalize", shape, out, Op::L2Normalize { x, eps }, &[x])
    }

    /// Rotary position embedding on `[batch, positions, head_dim]`; pair
    /// `(2i, 2i+1)` at position `p` rotates by `p · base^(-2i/head_dim)`.
    pub fn rope(&mut self, x: Var, base: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || shape[2] % 2 != 0 {
            return Err(Error::dim("rope", format!("expects [batch, pos, even dim], got {:?}", shape)));
        }
        let (b, t, d) = (shape[0], shape[1], shape[2]);
        let ang = rope_angles(t, d / 2, base);
        let v = self.vals(x);
        let mut out = vec![0.0; v.len()];
        for bi in 0..b {
            for p in 0..t {
                let off = (bi * t + p) * d;
                for i in 0..d / 2 {
                    let (c, s) = ang[p * (d / 2) + i];
                    let (x0, x1) = (v[off + 2 * i], v[off + 2 * i + 1]);
                    out[off + 2 * i] = x0 * c - x1 * s;
                    out[off + 2 * i + 1] = x0 * s + x1 * c;
                }
            }
        }
        self.push("rope", shape, out, Op::Rope { x, base }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.vals(x).iter().sum();
        self.push("sum", vec![], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.vals(x);
        if v.is_empty() {
            return Err(Error::dim("mean", "empty tensor"));
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        self.push("mean", vec![], vec![m], Op::Mean(x), &[x])
    }

    /// `x [n, in] · w [in, out] (+ b [out])`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            None => Ok(y),
            Some(b) => {
                let shape = self.shape(y).to_vec();
                let bl = self.shape(b).to_vec();
                let row = self.reshape(b, &[1, numel(&bl)])?;
                let bb = self.broadcast_to(row, &shape)?;
                self.add(y, bb)
            }
        }
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d)?;
        self.mean(sq)
    }

    /// Reverse sweep from a scalar `loss`. Each node is visited once.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if numel(self.shape(loss)) != 1 {
            return Err(Error::dim("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| self.nodes[i].requires_grad)
                    .map(|g| Tensor::from_f64_slice(self.nodes[i].value.shape(), &g))
                    .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<S>, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let out_vals = || node.value.to_f64_vec();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.nodes[a.0].requires_grad {
                    let ga = bmm_f64(g, &self.vals(*b), 1, m, n, k, false, true);
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    let gb = bmm_f64(&self.vals(*a), g, 1, k, m, n, true, false);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = if *trans_b { sb[1] } else { sb[2] };
                if self.nodes[a.0].requires_grad {
                    // dA = G · Bᵀ (or G · B when B was transposed)
                    let ga = bmm_f64(g, &self.vals(*b), batch, m, n, k, false, !*trans_b);
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    let gb = if *trans_b {
                        // dB[n,k] = Gᵀ · A
                        bmm_f64(g, &self.vals(*a), batch, n, m, k, true, false)
                    } else {
                        bmm_f64(&self.vals(*a), g, batch, k, m, n, true, false)
                    };
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.vals(*a), self.vals(*b));
                self.accumulate(grads, *a, g.iter().zip(&vb).map(|(g, y)| g * y).collect());
                self.accumulate(grads, *b, g.iter().zip(&va).map(|(g, x)| g * x).collect());
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, g.iter().map(|v| v * c).collect()),
            Op::AddScalar(x) | Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::BroadcastTo(x) => {
                let src = self.shape(*x).to_vec();
                let st = strides(&src);
                let eff: Vec<usize> = src.iter().zip(&st).map(|(&s, &k)| if s == 1 { 0 } else { k }).collect();
                let mut gx = vec![0.0; numel(&src)];
                scatter_broadcast(g, node.value.shape(), &eff, &mut gx);
                self.accumulate(grads, *x, gx);
            }
            Op::Permute(x, axes) => {
                let mut inv = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inv[a] = i;
                }
                let (gx, _) = permute_f64(g, node.value.shape(), &inv);
                self.accumulate(grads, *x, gx);
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let (outer, total, inner) = split_axis(shape, *axis);
                let mut offset = 0;
                for p in parts {
                    let len = self.shape(*p)[*axis];
                    let mut gp = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = o * total * inner + offset * inner;
                        gp.extend_from_slice(&g[base..base + len * inner]);
                    }
                    self.accumulate(grads, *p, gp);
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let src = self.shape(*x);
                let (outer, n, inner) = split_axis(src, *axis);
                let len = node.value.shape()[*axis];
                let mut gx = vec![0.0; numel(src)];
                for o in 0..outer {
                    let base = o * n * inner + start * inner;
                    gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax { x, axis } => {
                let y = out_vals();
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * n * inner + j * inner + i;
                        let dot: f64 = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..n {
                            gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = *node.value.shape().last().unwrap();
                let gam = gamma.map(|p| self.vals(p));
                if let Some(gv) = gamma {
                    let mut gg = vec![0.0; d];
                    for (r, row) in g.chunks(d).enumerate() {
                        for j in 0..d {
                            gg[j] += row[j] * xhat[r * d + j];
                        }
                    }
                    self.accumulate(grads, *gv, gg);
                }
                if let Some(bv) = beta {
                    let mut gb = vec![0.0; d];
                    for row in g.chunks(d) {
                        for j in 0..d {
                            gb[j] += row[j];
                        }
                    }
                    self.accumulate(grads, *bv, gb);
                }
                if self.nodes[x.0].requires_grad {
                    let mut gx = vec![0.0; g.len()];
                    for (r, row) in g.chunks(d).enumerate() {
                        let gh: Vec<f64> = (0..d).map(|j| row[j] * gam.as_ref().map_or(1.0, |gm| gm[j])).collect();
                        let mean_gh = gh.iter().sum::<f64>() / d as f64;
                        let mean_ghx = (0..d).map(|j| gh[j] * xhat[r * d + j]).sum::<f64>() / d as f64;
                        for j in 0..d {
                            gx[r * d + j] = rstd[r] * (gh[j] - mean_gh - xhat[r * d + j] * mean_ghx);
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::L2Normalize { x, eps } => {
                let v = self.vals(*x);
                let d = *node.value.shape().last().unwrap();
                let mut gx = vec![0.0; v.len()];
                for ((row, grow), out) in v.chunks(d).zip(g.chunks(d)).zip(gx.chunks_mut(d)) {
                    let n = row.iter().map(|a| a * a).sum::<f64>().sqrt();
                    let denom = n + eps;
                    let dot: f64 = row.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        let radial = if n > 0.0 { row[j] * dot / (denom * denom * n) } else { 0.0 };
                        out[j] = grow[j] / denom - radial;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Rope { x, base } => {
                let shape = node.value.shape();
                let (b, t, d) = (shape[0], shape[1], shape[2]);
                let ang = rope_angles(t, d / 2, *base);
                let mut gx = vec![0.0; g.len()];
                for bi in 0..b {
                    for p in 0..t {
                        let off = (bi * t + p) * d;
                        for i in 0..d / 2 {
                            let (c, s) = ang[p * (d / 2) + i];
                            let (g0, g1) = (g[off + 2 * i], g[off + 2 * i + 1]);
                            gx[off + 2 * i] = g0 * c + g1 * s;
                            gx[off + 2 * i + 1] = -g0 * s + g1 * c;
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Gelu(x) => {
                let v = self.vals(*x);
                let gx = v
                    .iter()
                    .zip(g)
                    .map(|(&a, &gv)| {
                        let u = SQRT_2_OVER_PI * (a + GELU_C * a * a * a);
                        let th = u.tanh();
                        let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * a * a);
                        gv * (0.5 * (1.0 + th) + 0.5 * a * (1.0 - th * th) * du)
                    })
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Silu(x) => {
                let v = self.vals(*x);
                let gx = v
                    .iter()
                    .zip(g)
                    .map(|(&a, &gv)| {
                        let s = sigmoid(a);
                        gv * (s + a * s * (1.0 - s))
                    })
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let y = out_vals();
                self.accumulate(grads, *x, y.iter().zip(g).map(|(s, gv)| gv * s * (1.0 - s)).collect());
            }
            Op::Square(x) => {
                let v = self.vals(*x);
                self.accumulate(grads, *x, v.iter().zip(g).map(|(a, gv)| 2.0 * a * gv).collect());
            }
            Op::Sum(x) => {
                let n = numel(self.shape(*x));
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = numel(self.shape(*x));
                self.accumulate(grads, *x, vec![g[0] / n as f64; n]);
            }
        }
        Ok(())
    }
}

fn gather_broadcast(src: &[f64], shape: &[usize], eff_strides: &[usize]) -> Vec<f64> {
    let n = numel(shape);
    let nd = shape.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(src[off]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            off += eff_strides[d];
            if idx[d] < shape[d] {
                break;
            }
            off -= eff_strides[d] * shape[d];
            idx[d] = 0;
        }
    }
    out
}

fn scatter_broadcast(g: &[f64], shape: &[usize], eff_strides: &[usize], out: &mut [f64]) {
    let nd = shape.len();
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    for &gv in g {
        out[off] += gv;
        for d in (0..nd).rev() {
            idx[d] += 1;
            off += eff_strides[d];
            if idx[d] < shape[d] {
                break;
            }
            off -= eff_strides[d] * shape[d];
            idx[d] = 0;
        }
    }
}
