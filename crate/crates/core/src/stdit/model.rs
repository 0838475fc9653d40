use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::attention::{Attention, QK_EPS};
use crate::error::{Error, Result};
use crate::numerics::{Activation, Bound, Graph, Mlp, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::rng;

const LN_EPS: f64 = 1e-6;
const TIME_SCALE: f64 = 1000.0;
const MAX_PERIOD: f64 = 10_000.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StditConfig {
    /// Latent channels in and out.
    pub in_channels: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub text_dim: usize,
    /// Largest latent height or width the position tables cover.
    pub max_grid: usize,
    pub rope_base: f64,
    pub qk_eps: f64,
    /// Initial per-head query temperature; `None` means `sqrt(head_dim)`.
    pub qk_gain_init: Option<f64>,
    pub seed: u64,
}

impl Default for StditConfig {
    fn default() -> Self {
        Self {
            in_channels: 4,
            dim: 32,
            depth: 2,
            heads: 4,
            mlp_ratio: 4,
            text_dim: 32,
            max_grid: 8,
            rope_base: 10_000.0,
            qk_eps: QK_EPS,
            qk_gain_init: None,
            seed: 0,
        }
    }
}

impl StditConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [self.in_channels, self.dim, self.depth, self.heads, self.mlp_ratio, self.text_dim, self.max_grid];
        if sizes.contains(&0) {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!("heads {} must divide dim {}", self.heads, self.dim)));
        }
        if self.head_dim() % 2 != 0 || self.dim % 2 != 0 {
            return Err(Error::Config(format!("head dim {} must be even for rotary embedding", self.head_dim())));
        }
        if !(self.qk_eps > 0.0) || !(self.rope_base > 1.0) {
            return Err(Error::Config("qk_eps must be > 0 and rope_base > 1".into()));
        }
        if let Some(g) = self.qk_gain_init {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("qk_gain_init must be positive, got {}", g)));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads.max(1)
    }
}

/// Per-sample conditioning: one timestep per latent frame, clip fps and
/// text token rows `[L, text_dim]` with `L ≥ 1`.
#[derive(Clone, Copy, Debug)]
pub struct StditCond<'a> {
    pub timesteps: &'a [f64],
    pub fps: f64,
    pub text: &'a Tensor<f32>,
}

#[derive(Clone, Debug)]
struct Block {
    modulation: (ParamId, ParamId),
    spatial: Attention,
    temporal: Attention,
    cross: Attention,
    mlp: Mlp,
}

#[derive(Clone, Debug)]
pub struct Stdit {
    pub cfg: StditConfig,
    pub params: ParamStore,
    embed: (ParamId, ParamId),
    pos_row: ParamId,
    pos_col: ParamId,
    t_embed: Mlp,
    fps_embed: Mlp,
    text_proj: (ParamId, ParamId),
    blocks: Vec<Block>,
    final_mod: (ParamId, ParamId),
    final_out: (ParamId, ParamId),
}

/// Sinusoidal features `[n, dim]`: cosines then sines of `v · MAX_PERIOD^(-i/half)`.
pub fn sinusoidal(values: &[f64], dim: usize) -> Tensor<f32> {
    let half = dim / 2;
    Tensor::from_fn(&[values.len(), dim], |i| {
        let (r, j) = (i / dim, i % dim);
        if j >= 2 * half {
            return 0.0;
        }
        let freq = (-(MAX_PERIOD.ln()) * (j % half) as f64 / half as f64).exp();
        let a = values[r] * freq;
        if j < half {
            a.cos()
        } else {
            a.sin()
        }
    })
}

impl Stdit {
    /// Fresh model with temporal output projections zeroed.
    pub fn new(cfg: StditConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let mut r = rng::stream(cfg.seed, &[rng::label("stdit.init")]);
        let mut p = ParamStore::new();
        let small = 0.1 / (d as f64).sqrt();
        let embed = (
            p.add_normal("embed.w", &mut r, &[cfg.in_channels, d], (1.0 / cfg.in_channels as f64).sqrt()),
            p.add_zeros("embed.b", &[d]),
        );
        let pos_row = p.add_normal("pos.row", &mut r, &[cfg.max_grid, d], 0.02);
        let pos_col = p.add_normal("pos.col", &mut r, &[cfg.max_grid, d], 0.02);
        let t_embed = Mlp::new(&mut p, &mut r, "t_embed", (d, d, d), Activation::Silu);
        let fps_embed = Mlp::new(&mut p, &mut r, "fps_embed", (d, d, d), Activation::Silu);
        let text_proj = (
            p.add_normal("text.w", &mut r, &[cfg.text_dim, d], (1.0 / cfg.text_dim as f64).sqrt()),
            p.add_zeros("text.b", &[d]),
        );
        let gain = cfg.qk_gain_init.unwrap_or((cfg.head_dim() as f64).sqrt());
        let blocks = (0..cfg.depth)
            .map(|i| {
                let pre = format!("blocks.{i}");
                Block {
                    modulation: (
                        p.add_normal(format!("{pre}.mod.w"), &mut r, &[d, 6 * d], small),
                        p.add_zeros(format!("{pre}.mod.b"), &[6 * d]),
                    ),
                    spatial: Attention::new(&mut p, &mut r, &format!("{pre}.spatial"), d, cfg.heads, gain, cfg.qk_eps),
                    temporal: Attention::new(&mut p, &mut r, &format!("{pre}.temporal"), d, cfg.heads, gain, cfg.qk_eps),
                    cross: Attention::new(&mut p, &mut r, &format!("{pre}.cross"), d, cfg.heads, gain, cfg.qk_eps),
                    mlp: Mlp::new(&mut p, &mut r, &format!("{pre}.mlp"), (d, cfg.mlp_ratio * d, d), Activation::Gelu),
                }
            })
            .collect();
        let final_mod = (
            p.add_normal("final.mod.w", &mut r, &[d, 2 * d], small),
            p.add_zeros("final.mod.b", &[2 * d]),
        );
        let final_out = (
            p.add_normal("final.w", &mut r, &[d, cfg.in_channels], 0.02 / (d as f64).sqrt()),
            p.add_zeros("final.b", &[cfg.in_channels]),
        );
        let mut m = Self {
            cfg,
            params: p,
            embed,
            pos_row,
            pos_col,
            t_embed,
            fps_embed,
            text_proj,
            blocks,
            final_mod,
            final_out,
        };
        m.zero_temporal();
        Ok(m)
    }

    pub fn init_temporal_zero(mut self) -> Self {
        self.zero_temporal();
        self
    }

    /// Sets every temporal attention output projection to zero.
    pub fn zero_temporal(&mut self) {
        for blk in &self.blocks {
            for id in [blk.temporal.wo, blk.temporal.bo] {
                let shape = self.params.get(id).shape().to_vec();
                self.params.set(id, Tensor::zeros(&shape)).expect("same shape");
            }
        }
    }

    /// Names of the temporal output projections.
    pub fn temporal_projection_names(&self) -> Vec<String> {
        self.blocks
            .iter()
            .flat_map(|b| [b.temporal.wo, b.temporal.bo])
            .map(|id| self.params.name(id).to_string())
            .collect()
    }

    pub fn spatial_attention(&self, block: usize) -> Option<&Attention> {
        self.blocks.get(block).map(|b| &b.spatial)
    }

    pub fn temporal_attention(&self, block: usize) -> Option<&Attention> {
        self.blocks.get(block).map(|b| &b.temporal)
    }

    pub fn cross_attention(&self, block: usize) -> Option<&Attention> {
        self.blocks.get(block).map(|b| &b.cross)
    }

    /// `(name, shape, count)` for every parameter, plus the total.
    pub fn census(&self) -> (Vec<(String, Vec<usize>, usize)>, usize) {
        (self.params.census(), self.params.numel())
    }

    fn check_input(&self, shape: &[usize], cond: &StditCond) -> Result<()> {
        if shape.len() != 4 || shape[3] != self.cfg.in_channels {
            return Err(Error::dim(
                "stdit",
                format!("latent must be [T, h, w, {}], got {:?}", self.cfg.in_channels, shape),
            ));
        }
        let (t, h, w) = (shape[0], shape[1], shape[2]);
        if t == 0 || h == 0 || w == 0 {
            return Err(Error::dim("stdit", format!("empty latent {:?}", shape)));
        }
        if h > self.cfg.max_grid || w > self.cfg.max_grid {
            return Err(Error::dim(
                "stdit",
                format!("latent grid {}x{} exceeds max_grid {}", h, w, self.cfg.max_grid),
            ));
        }
        if cond.timesteps.len() != t {
            return Err(Error::dim("stdit", format!("{} timesteps for {} frames", cond.timesteps.len(), t)));
        }
        if let Some(bad) = cond.timesteps.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("timestep {} outside [0, 1]", bad)));
        }
        if !(cond.fps > 0.0 && cond.fps.is_finite()) {
            return Err(Error::Domain(format!("fps must be positive, got {}", cond.fps)));
        }
        let ts = cond.text.shape();
        if ts.len() != 2 || ts[1] != self.cfg.text_dim {
            return Err(Error::dim("stdit", format!("text must be [L, {}], got {:?}", self.cfg.text_dim, ts)));
        }
        if ts[0] == 0 {
            return Err(Error::Precondition("cross-attention needs at least one text token".into()));
        }
        Ok(())
    }

    /// Per-frame conditioning vector `[T, D]` from timesteps and fps.
    fn g_condition<S: Scalar>(&self, g: &mut Graph<S>, b: &Bound, cond: &StditCond) -> Result<Var> {
        let d = self.cfg.dim;
        let t = cond.timesteps.len();
        let scaled: Vec<f64> = cond.timesteps.iter().map(|v| v * TIME_SCALE).collect();
        let tf = g.constant(sinusoidal(&scaled, d).cast());
        let te = self.t_embed.forward(g, b, tf)?;
        let ff = g.constant(sinusoidal(&[cond.fps], d).cast());
        let fe = self.fps_embed.forward(g, b, ff)?;
        let fe = g.broadcast_to(fe, &[t, d])?;
        g.add(te, fe)
    }

    /// `h ⊙ (1 + scale) + shift` with `[T, D]` modulation broadcast over tokens.
    fn modulate<S: Scalar>(g: &mut Graph<S>, h: Var, shift: Var, scale: Var) -> Result<Var> {
        let shape = g.shape(h).to_vec();
        let sc = Self::per_frame(g, scale, &shape)?;
        let sh = Self::per_frame(g, shift, &shape)?;
        let hs = g.mul(h, sc)?;
        let y = g.add(h, hs)?;
        g.add(y, sh)
    }

    fn per_frame<S: Scalar>(g: &mut Graph<S>, v: Var, shape: &[usize]) -> Result<Var> {
        let s = g.shape(v).to_vec();
        let r = g.reshape(v, &[s[0], 1, s[1]])?;
        g.broadcast_to(r, shape)
    }

    fn gated<S: Scalar>(g: &mut Graph<S>, x: Var, gate: Var, branch: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let gb = Self::per_frame(g, gate, &shape)?;
        let y = g.mul(gb, branch)?;
        g.add(x, y)
    }

    fn g_block<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        b: &Bound,
        blk: &Block,
        x: Var,
        c_act: Var,
        text: Var,
    ) -> Result<Var> {
        let d = self.cfg.dim;
        let shape = g.shape(x).to_vec();
        let (t, s) = (shape[0], shape[1]);
        let m = g.linear(c_act, b[blk.modulation.0], Some(b[blk.modulation.1]))?;
        let mut chunk = Vec::with_capacity(6);
        for i in 0..6 {
            chunk.push(g.slice(m, 1, i * d, d)?);
        }
        let (shift1, scale1, gate1, shift2, scale2, gate2) = (chunk[0], chunk[1], chunk[2], chunk[3], chunk[4], chunk[5]);

        let h = g.layer_norm(x, None, None, LN_EPS)?;
        let h = Self::modulate(g, h, shift1, scale1)?;
        let a = blk.spatial.forward(g, b, h, h, None)?;
        let x = Self::gated(g, x, gate1, a)?;

        let h = g.layer_norm(x, None, None, LN_EPS)?;
        let h = Self::modulate(g, h, shift1, scale1)?;
        let hp = g.permute(h, &[1, 0, 2])?;
        let a = blk.temporal.forward(g, b, hp, hp, Some(self.cfg.rope_base))?;
        let a = g.permute(a, &[1, 0, 2])?;
        let x = Self::gated(g, x, gate1, a)?;

        let q = g.reshape(x, &[1, t * s, d])?;
        let a = blk.cross.forward(g, b, q, text, None)?;
        let a = g.reshape(a, &[t, s, d])?;
        let x = g.add(x, a)?;

        let h = g.layer_norm(x, None, None, LN_EPS)?;
        let h = Self::modulate(g, h, shift2, scale2)?;
        let h = g.reshape(h, &[t * s, d])?;
        let h = blk.mlp.forward(g, b, h)?;
        let h = g.reshape(h, &[t, s, d])?;
        Self::gated(g, x, gate2, h)
    }

    /// Velocity prediction `[T, h, w, C]` for latent `x [T, h, w, C]`.
    pub fn g_forward<S: Scalar>(&self, g: &mut Graph<S>, b: &Bound, x: Var, cond: &StditCond) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        self.check_input(&shape, cond)?;
        let (t, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
        let (d, s) = (self.cfg.dim, h * w);

        let tok = g.reshape(x, &[t * s, c])?;
        let tok = g.linear(tok, b[self.embed.0], Some(b[self.embed.1]))?;
        let tok = g.reshape(tok, &[t, s, d])?;
        let rows = g.slice(b[self.pos_row], 0, 0, h)?;
        let rows = g.reshape(rows, &[h, 1, d])?;
        let rows = g.broadcast_to(rows, &[h, w, d])?;
        let cols = g.slice(b[self.pos_col], 0, 0, w)?;
        let cols = g.reshape(cols, &[1, w, d])?;
        let cols = g.broadcast_to(cols, &[h, w, d])?;
        let pos = g.add(rows, cols)?;
        let pos = g.reshape(pos, &[1, s, d])?;
        let pos = g.broadcast_to(pos, &[t, s, d])?;
        let mut xs = g.add(tok, pos)?;

        let c_vec = self.g_condition(g, b, cond)?;
        let c_act = g.silu(c_vec)?;

        let l = cond.text.shape()[0];
        let txt = g.constant(cond.text.cast());
        let txt = g.linear(txt, b[self.text_proj.0], Some(b[self.text_proj.1]))?;
        let txt = g.reshape(txt, &[1, l, d])?;

        for blk in &self.blocks {
            xs = self.g_block(g, b, blk, xs, c_act, txt)?;
        }

        let m = g.linear(c_act, b[self.final_mod.0], Some(b[self.final_mod.1]))?;
        let shift = g.slice(m, 1, 0, d)?;
        let scale = g.slice(m, 1, d, d)?;
        let hn = g.layer_norm(xs, None, None, LN_EPS)?;
        let hn = Self::modulate(g, hn, shift, scale)?;
        let hn = g.reshape(hn, &[t * s, d])?;
        let out = g.linear(hn, b[self.final_out.0], Some(b[self.final_out.1]))?;
        g.reshape(out, &[t, h, w, c])
    }

    /// Inference forward pass in f32.
    pub fn forward(&self, x: &Tensor<f32>, cond: &StditCond) -> Result<Tensor<f32>> {
        let mut g = Graph::<f32>::new();
        let b = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = self.g_forward(&mut g, &b, xv, cond)?;
        Ok(g.value(y).clone())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("model.json");
        let json = serde_json::to_string_pretty(&self.cfg).map_err(|e| Error::format(&path, e.to_string()))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        self.params.save_dir(dir, "")
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("model.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let cfg: StditConfig = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let mut m = Self::new(cfg)?;
        m.params.load_dir(dir, "")?;
        Ok(m)
    }
}
