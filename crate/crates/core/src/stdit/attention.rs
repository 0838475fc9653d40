use crate::error::{Error, Result};
use crate::numerics::{Bound, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::rng::Rng;

/// Default QK-normalization epsilon.
pub const QK_EPS: f64 = 1e-15;

/// Multi-head attention with QK-normalization and optional RoPE on the
/// sequence axis.
#[derive(Clone, Debug)]
pub struct Attention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    /// Per-head temperature applied to normalized queries, shape `[heads]`.
    pub gain: ParamId,
    pub heads: usize,
    pub dim: usize,
    pub eps: f64,
}

impl Attention {
    pub(crate) fn new(
        store: &mut ParamStore,
        r: &mut Rng,
        prefix: &str,
        dim: usize,
        heads: usize,
        gain_init: f64,
        eps: f64,
    ) -> Self {
        let std = (1.0 / dim as f64).sqrt();
        Self {
            wq: store.add_normal(format!("{prefix}.wq"), r, &[dim, dim], std),
            wk: store.add_normal(format!("{prefix}.wk"), r, &[dim, dim], std),
            wv: store.add_normal(format!("{prefix}.wv"), r, &[dim, dim], std),
            wo: store.add_normal(format!("{prefix}.wo"), r, &[dim, dim], std),
            bo: store.add_zeros(format!("{prefix}.bo"), &[dim]),
            gain: store.add_full(format!("{prefix}.gain"), &[heads], gain_init),
            heads,
            dim,
            eps,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// `[B, N, D]` rows projected by `w` and split to `[B·H, N, hd]`.
    fn project<S: Scalar>(&self, g: &mut Graph<S>, b: &Bound, x: Var, w: ParamId) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (bsz, n) = (s[0], s[1]);
        let flat = g.reshape(x, &[bsz * n, self.dim])?;
        let y = g.linear(flat, b[w], None)?;
        let y = g.reshape(y, &[bsz, n, self.heads, self.head_dim()])?;
        let y = g.permute(y, &[0, 2, 1, 3])?;
        g.reshape(y, &[bsz * self.heads, n, self.head_dim()])
    }

    fn check<S: Scalar>(&self, g: &Graph<S>, x: Var, what: &str) -> Result<()> {
        let s = g.shape(x);
        if s.len() != 3 || s[2] != self.dim {
            return Err(Error::dim("attention", format!("{} must be [B, N, {}], got {:?}", what, self.dim, s)));
        }
        Ok(())
    }

    /// Attention of queries from `xq [B, Nq, D]` over keys and values from
    /// `xkv [B, Nk, D]`. With `rope = Some(base)`, queries and keys are
    /// rotated by their sequence position before normalization.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, b: &Bound, xq: Var, xkv: Var, rope: Option<f64>) -> Result<Var> {
        self.check(g, xq, "queries")?;
        self.check(g, xkv, "keys")?;
        let (sq, sk) = (g.shape(xq).to_vec(), g.shape(xkv).to_vec());
        if sq[0] != sk[0] {
            return Err(Error::dim("attention", format!("batch {} vs {}", sq[0], sk[0])));
        }
        if sk[1] == 0 {
            return Err(Error::Precondition("attention needs at least one key".into()));
        }
        let (bsz, nq) = (sq[0], sq[1]);
        let mut q = self.project(g, b, xq, self.wq)?;
        let mut k = self.project(g, b, xkv, self.wk)?;
        let v = self.project(g, b, xkv, self.wv)?;
        if let Some(base) = rope {
            q = g.rope(q, base)?;
            k = g.rope(k, base)?;
        }
        let (q, k) = g_qk_normalize(g, q, k, b[self.gain], self.heads, self.eps)?;
        let logits = g.bmm(q, k, true)?;
        let attn = g.softmax(logits, 2)?;
        let o = g.bmm(attn, v, false)?;
        let o = g.reshape(o, &[bsz, self.heads, nq, self.head_dim()])?;
        let o = g.permute(o, &[0, 2, 1, 3])?;
        let o = g.reshape(o, &[bsz * nq, self.dim])?;
        let o = g.linear(o, b[self.wo], Some(b[self.bo]))?;
        g.reshape(o, &[bsz, nq, self.dim])
    }
}

/// QK-normalization of `[B·H, N, hd]` queries and keys: every head vector
/// is divided by `‖·‖ + eps`, then queries are scaled by the per-head
/// `gain [H]`.
pub fn g_qk_normalize<S: Scalar>(
    g: &mut Graph<S>,
    q: Var,
    k: Var,
    gain: Var,
    heads: usize,
    eps: f64,
) -> Result<(Var, Var)> {
    let qn = g.l2_normalize(q, eps)?;
    let kn = g.l2_normalize(k, eps)?;
    let s = g.shape(qn).to_vec();
    if s.len() != 3 || heads == 0 || s[0] % heads != 0 || g.shape(gain) != [heads] {
        return Err(Error::dim("qk_normalize", format!("{:?} with gain {:?}", s, g.shape(gain))));
    }
    let gr = g.reshape(gain, &[1, heads, 1, 1])?;
    let gb = g.broadcast_to(gr, &[s[0] / heads, heads, s[1], s[2]])?;
    let gb = g.reshape(gb, &s)?;
    Ok((g.mul(qn, gb)?, kn))
}

/// Forward-only QK-normalization with unit gain; returns `(q̂, k̂)`.
pub fn qk_normalize(q: &Tensor<f64>, k: &Tensor<f64>, eps: f64) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let mut g = Graph::new();
    let (qv, kv) = (g.constant(q.clone()), g.constant(k.clone()));
    let qn = g.l2_normalize(qv, eps)?;
    let kn = g.l2_normalize(kv, eps)?;
    Ok((g.value(qn).clone(), g.value(kn).clone()))
}

/// Attention logits `[B·H, Nq, Nk]` for already-projected heads: optional
/// RoPE, QK-normalization with per-head `gains`, then `q̂ · k̂ᵀ`.
pub fn attention_logits(q: &Tensor<f64>, k: &Tensor<f64>, gains: &[f64], rope: Option<f64>) -> Result<Tensor<f64>> {
    let mut g = Graph::new();
    let mut qv = g.constant(q.clone());
    let mut kv = g.constant(k.clone());
    if let Some(base) = rope {
        qv = g.rope(qv, base)?;
        kv = g.rope(kv, base)?;
    }
    let gain = g.constant(Tensor::from_f64_slice(&[gains.len()], gains)?);
    let (qn, kn) = g_qk_normalize(&mut g, qv, kv, gain, gains.len(), QK_EPS)?;
    let l = g.bmm(qn, kn, true)?;
    Ok(g.value(l).clone())
}
