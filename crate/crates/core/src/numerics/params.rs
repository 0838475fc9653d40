//! Named parameter storage, graph binding and checkpoint directories.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::graph::{Gradients, Graph, Var};
use super::tensor::{numel, Scalar, Tensor};
use super::vten;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor<f32>>,
    trainable: Vec<bool>,
}

/// Parameters bound as leaves of one graph.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

pub fn normal_tensor(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| {
        let z: f64 = rng.sample(StandardNormal);
        z * std
    })
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<f32>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {}", name);
        self.names.push(name);
        self.values.push(value);
        self.trainable.push(true);
        ParamId(self.values.len() - 1)
    }

    /// Gaussian init with standard deviation `std`.
    pub fn add_normal(&mut self, name: impl Into<String>, rng: &mut Rng, shape: &[usize], std: f64) -> ParamId {
        let t = normal_tensor(rng, shape, std);
        self.add(name, t)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn add_full(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        self.add(name, Tensor::full(shape, value))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<f32> {
        &self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<f32>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::dim(
                "param_set",
                format!("{}: {:?} vs {:?}", self.names[id.0], value.shape(), self.values[id.0].shape()),
            ));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    /// Freezes (or unfreezes) every parameter whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for (n, t) in self.names.iter().zip(self.trainable.iter_mut()) {
            if n.starts_with(prefix) {
                *t = trainable;
            }
        }
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// `(name, shape, count)` per parameter.
    pub fn census(&self) -> Vec<(String, Vec<usize>, usize)> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| (n.clone(), v.shape().to_vec(), v.len()))
            .collect()
    }

    /// Adds every parameter as a leaf. Trainable ones track gradients when `track` is set.
    pub fn bind<S: Scalar>(&self, g: &mut Graph<S>, track: bool) -> Bound {
        Bound(
            self.values
                .iter()
                .zip(&self.trainable)
                .map(|(v, &t)| g.leaf(v.cast::<S>().with_grad(track && t)))
                .collect(),
        )
    }

    /// All parameters concatenated in store order.
    pub fn flatten(&self) -> Tensor<f64> {
        let data: Vec<f64> = self.values.iter().flat_map(|v| v.to_f64_vec()).collect();
        let n = data.len();
        Tensor::new(vec![n], data).expect("flat length")
    }

    /// Binds parameters as views of a flat vector (the layout of [`flatten`]).
    pub fn bind_flat<S: Scalar>(&self, g: &mut Graph<S>, flat: Var) -> Result<Bound> {
        let mut off = 0;
        let mut vars = Vec::with_capacity(self.values.len());
        for v in &self.values {
            let n = numel(v.shape());
            let s = g.slice(flat, 0, off, n)?;
            vars.push(g.reshape(s, v.shape())?);
            off += n;
        }
        Ok(Bound(vars))
    }

    /// Gradients for each parameter, `None` when frozen or unreached.
    pub fn collect_grads(&self, bound: &Bound, grads: &mut Gradients<f32>) -> Vec<Option<Tensor<f32>>> {
        bound.0.iter().map(|&v| grads.take(v)).collect()
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>, prefix: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = String::new();
        for (n, v) in self.names.iter().zip(&self.values) {
            let file = format!("{}{}.vten", prefix, n);
            vten::write(dir.join(&file), v)?;
            let dims: Vec<String> = v.shape().iter().map(|d| d.to_string()).collect();
            manifest.push_str(&format!("{} {}\n", n, dims.join("x")));
        }
        let mpath = dir.join(format!("{}manifest.txt", prefix));
        fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))
    }

    /// Loads values for every parameter already declared in this store.
    pub fn load_dir(&mut self, dir: impl AsRef<Path>, prefix: &str) -> Result<()> {
        let dir = dir.as_ref();
        for i in 0..self.values.len() {
            let path = dir.join(format!("{}{}.vten", prefix, self.names[i]));
            let t = vten::read(&path)?;
            if t.shape() != self.values[i].shape() {
                return Err(Error::format(
                    &path,
                    format!("shape {:?}, expected {:?}", t.shape(), self.values[i].shape()),
                ));
            }
            self.values[i] = t;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            weight_decay: 0.0,
        }
    }
}

/// AdamW with decoupled weight decay; moments kept in f32 alongside the params.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    m: ParamStore,
    v: ParamStore,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || {
            let mut s = ParamStore::new();
            for id in params.ids() {
                s.add_zeros(params.name(id), params.get(id).shape());
            }
            s
        };
        Self {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor<f32>>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::dim("adam", format!("{} grads for {} params", grads.len(), params.len())));
        }
        self.step += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for id in params.ids() {
            let Some(g) = &grads[id.0] else { continue };
            if !params.is_trainable(id) {
                continue;
            }
            let p = &mut params.values[id.0];
            let m = &mut self.m.values[id.0];
            let v = &mut self.v.values[id.0];
            for (((pv, mv), vv), &gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
                .zip(g.data())
            {
                let gv = gv as f64;
                let mn = c.beta1 * *mv as f64 + (1.0 - c.beta1) * gv;
                let vn = c.beta2 * *vv as f64 + (1.0 - c.beta2) * gv * gv;
                *mv = mn as f32;
                *vv = vn as f32;
                let upd = (mn / bc1) / ((vn / bc2).sqrt() + c.eps);
                let decayed = *pv as f64 * (1.0 - c.lr * c.weight_decay);
                *pv = (decayed - c.lr * upd) as f32;
            }
        }
        Ok(())
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.m.save_dir(dir, "adam_m.")?;
        self.v.save_dir(dir, "adam_v.")?;
        let p = dir.join("adam_step.txt");
        fs::write(&p, format!("{}\n", self.step)).map_err(|e| Error::io(&p, e))
    }

    pub fn load_dir(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.m.load_dir(dir, "adam_m.")?;
        self.v.load_dir(dir, "adam_v.")?;
        let p = dir.join("adam_step.txt");
        let s = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        self.step = s.trim().parse().map_err(|_| Error::format(&p, "bad step count"))?;
        Ok(())
    }
}
