use indexmap::IndexMap;

use crate::error::{Result, TensorError};
use crate::rng::Stream;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Weight initialization schemes. Draws come from a stream keyed by
/// (store seed, parameter path), so layouts are reproducible no matter in
/// which order parameters get created.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)); dense and attention weights.
    GlorotUniform { fan_in: usize, fan_out: usize },
    /// Uniform in ±sqrt(6 / fan_in); conv kernels feeding relu-like units.
    HeUniform { fan_in: usize },
    Zeros,
    Constant(f64),
}

/// Named parameter tensors plus the seed they were initialized from.
pub struct ParamStore {
    seed: u64,
    params: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            params: IndexMap::new(),
        }
    }

    pub fn from_parts(seed: u64, params: IndexMap<String, Tensor>) -> Self {
        ParamStore { seed, params }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fetch a parameter, creating and initializing it on first use.
    pub fn get_or_init(&mut self, path: &str, shape: &[usize], init: Init) -> &Tensor {
        if !self.params.contains_key(path) {
            let n: usize = shape.iter().product();
            let mut stream = Stream::new(self.seed, path, 0);
            let data: Vec<f64> = match init {
                Init::GlorotUniform { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| stream.uniform(-limit, limit)).collect()
                }
                Init::HeUniform { fan_in } => {
                    let limit = (6.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| stream.uniform(-limit, limit)).collect()
                }
                Init::Zeros => vec![0.0; n],
                Init::Constant(c) => vec![c; n],
            };
            let t = Tensor::new(shape.to_vec(), data).expect("init shape");
            self.params.insert(path.to_string(), t);
        }
        &self.params[path]
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.params.get(path)
    }

    pub fn set(&mut self, path: &str, t: Tensor) {
        self.params.insert(path.to_string(), t);
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Register every parameter on a tape as a trainable leaf.
    pub fn bind(&self, tape: &Tape) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|(k, t)| (k.clone(), tape.param(t.clone())))
            .collect();
        BoundParams { vars }
    }

    /// Nudge one element in place; used by finite-difference checks.
    pub fn perturb(&mut self, path: &str, index: usize, delta: f64) {
        let t = self.params.get_mut(path).expect("known parameter");
        t.data_mut()[index] += delta;
    }
}

/// Per-tape handles of every parameter in a store.
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    /// Handle for a parameter path. Panics on unknown paths: a wrong path is a
    /// model wiring bug, not a runtime condition.
    pub fn var(&self, path: &str) -> Var {
        *self
            .vars
            .get(path)
            .unwrap_or_else(|| panic!("unbound parameter path {path:?}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Ordered gradient accumulator. Examples are added in a fixed order and
/// summed sequentially, so parallel batch evaluation stays bit-identical to
/// serial execution as long as results are collected in example order.
#[derive(Default)]
pub struct GradAccum {
    sums: IndexMap<String, Vec<f64>>,
    count: usize,
}

impl GradAccum {
    pub fn new() -> Self {
        GradAccum::default()
    }

    /// Pull gradients for every bound parameter off a finished tape.
    pub fn add_from_tape(&mut self, tape: &Tape, bound: &BoundParams) {
        for (path, var) in bound.iter() {
            if let Some(g) = tape.grad(var) {
                match self.sums.get_mut(path) {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    None => {
                        self.sums.insert(path.to_string(), g.into_data());
                    }
                }
            }
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean gradient over everything added so far.
    pub fn into_mean(mut self) -> IndexMap<String, Vec<f64>> {
        let n = self.count.max(1) as f64;
        for g in self.sums.values_mut() {
            for v in g.iter_mut() {
                *v /= n;
            }
        }
        self.sums
    }
}

/// Adam with the usual bias correction.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: IndexMap<String, Vec<f64>>,
    v: IndexMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &IndexMap<String, Vec<f64>>) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (path, g) in grads {
            let p = store
                .params
                .get_mut(path)
                .ok_or_else(|| TensorError::Invalid(format!("adam: unknown parameter {path}")))?;
            if p.len() != g.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: vec![g.len()],
                });
            }
            let m = self
                .m
                .entry(path.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = self
                .v
                .entry(path.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let data = p.data_mut();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Dense layer helper: y = x W + b with Glorot weights and zero bias.
pub fn dense_params(store: &mut ParamStore, path: &str, fan_in: usize, fan_out: usize) {
    store.get_or_init(
        &format!("{path}/w"),
        &[fan_in, fan_out],
        Init::GlorotUniform { fan_in, fan_out },
    );
    store.get_or_init(&format!("{path}/b"), &[fan_out], Init::Zeros);
}

pub fn dense_forward(tape: &Tape, bound: &BoundParams, path: &str, x: Var) -> Result<Var> {
    let h = tape.matmul(x, bound.var(&format!("{path}/w")))?;
    tape.add(h, bound.var(&format!("{path}/b")))
}
