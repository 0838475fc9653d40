use super::graph::{Graph, Var};
use super::params::{Bound, ParamId, ParamStore};
use super::tensor::Scalar;
use crate::error::Result;
use crate::rng::Rng;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Gelu,
}

/// Two-layer perceptron `din -> hidden -> dout` on `[n, din]` rows.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub act: Activation,
}

impl Mlp {
    /// Registers `<prefix>.{w1,b1,w2,b2}` with fan-in scaled normal weights.
    pub fn new(
        store: &mut ParamStore,
        r: &mut Rng,
        prefix: &str,
        (din, hidden, dout): (usize, usize, usize),
        act: Activation,
    ) -> Self {
        Self {
            w1: store.add_normal(format!("{prefix}.w1"), r, &[din, hidden], (1.0 / din as f64).sqrt()),
            b1: store.add_zeros(format!("{prefix}.b1"), &[hidden]),
            w2: store.add_normal(format!("{prefix}.w2"), r, &[hidden, dout], (1.0 / hidden as f64).sqrt()),
            b2: store.add_zeros(format!("{prefix}.b2"), &[dout]),
            act,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, b: &Bound, x: Var) -> Result<Var> {
        let h = g.linear(x, b[self.w1], Some(b[self.b1]))?;
        let h = match self.act {
            Activation::Silu => g.silu(h)?,
            Activation::Gelu => g.gelu(h)?,
        };
        g.linear(h, b[self.w2], Some(b[self.b2]))
    }
}
