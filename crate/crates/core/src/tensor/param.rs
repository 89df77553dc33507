use serde::{Deserialize, Serialize};

use super::{Graph, Scalar, Tensor, Var};
use crate::error::{Result, TbqnError};
use crate::rng::RngState;

/// Adam moment buffers for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

/// A named trainable tensor with its gradient accumulator and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Vec<T>>,
    pub adam: AdamState<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let n = value.numel();
        Self {
            name: name.into(),
            value,
            grad: None,
            adam: AdamState {
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
                step: 0,
            },
        }
    }
}

/// An ordered collection of parameters, addressed by index or hierarchical name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Adds a parameter and returns its index.
    pub fn push(&mut self, p: Parameter<T>) -> usize {
        self.params.push(p);
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &Parameter<T> {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Parameter<T> {
        &mut self.params[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Binds every parameter into `g`, in index order.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| g.param(i, p))
            .collect()
    }

    /// Moves gradients accumulated on `g` into the parameters' accumulators.
    pub fn collect_grads(&mut self, g: &mut Graph<T>) {
        for (i, grad) in g.take_param_grads() {
            let p = &mut self.params[i];
            match p.grad.as_mut() {
                Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, &b)| *a = *a + b),
                None => p.grad = Some(grad),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Copies values from `other` (same layout), leaving optimizer state alone.
    pub fn copy_values_from(&mut self, other: &ParamSet<T>) -> Result<()> {
        self.check_layout(other)?;
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.value.data_mut().copy_from_slice(src.value.data());
        }
        Ok(())
    }

    /// Polyak averaging: `self <- tau * other + (1 - tau) * self`. `tau == 1` copies exactly.
    pub fn soft_update_from(&mut self, other: &ParamSet<T>, tau: f64) -> Result<()> {
        if tau >= 1.0 {
            return self.copy_values_from(other);
        }
        self.check_layout(other)?;
        let t = T::of(tau);
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            for (d, &s) in dst.value.data_mut().iter_mut().zip(src.value.data()) {
                // d + tau (s - d): exact fixed point when s == d
                *d = *d + t * (s - *d);
            }
        }
        Ok(())
    }

    fn check_layout(&self, other: &ParamSet<T>) -> Result<()> {
        let same = self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape());
        if same {
            Ok(())
        } else {
            Err(TbqnError::shape("parameter sets have different layouts"))
        }
    }
}

/// Weight initialisation schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    XavierUniform,
    /// Xavier bound scaled by `1/sqrt(depth)` for a 1-based layer depth.
    DepthScaled(usize),
    Zeros,
    Constant(f64),
}

impl Init {
    /// Half-width of the uniform distribution for a `fan_in x fan_out` weight.
    pub fn bound(self, fan_in: usize, fan_out: usize) -> f64 {
        let xavier = (6.0 / (fan_in + fan_out) as f64).sqrt();
        match self {
            Init::XavierUniform => xavier,
            Init::DepthScaled(l) => xavier / (l.max(1) as f64).sqrt(),
            Init::Zeros | Init::Constant(_) => 0.0,
        }
    }
}

pub fn init_tensor<T: Scalar>(shape: &[usize], scheme: Init, rng: &mut RngState) -> Result<Tensor<T>> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(TbqnError::config(format!("cannot initialise empty shape {shape:?}")));
    }
    if let Init::DepthScaled(0) = scheme {
        return Err(TbqnError::config("depth-scaled init needs depth >= 1"));
    }
    let numel: usize = shape.iter().product();
    let data = match scheme {
        Init::Zeros => vec![T::zero(); numel],
        Init::Constant(c) => vec![T::of(c); numel],
        Init::XavierUniform | Init::DepthScaled(_) => {
            let (fan_in, fan_out) = match shape {
                [n] => (*n, *n),
                [.., i, o] => (*i, *o),
                [] => unreachable!(),
            };
            let b = scheme.bound(fan_in, fan_out);
            (0..numel).map(|_| T::of(rng.uniform_range(-b, b))).collect()
        }
    };
    Tensor::new(shape, data)
}

/// Adam with bias correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

impl Adam {
    /// Applies one update to every parameter. Gradients are left in place.
    pub fn step<T: Scalar>(&self, params: &mut ParamSet<T>, lr: f64) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
            return Err(TbqnError::contract(format!("parameter `{}` has no gradient", p.name)));
        }
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let eps = T::of(self.eps);
        for p in params.iter_mut() {
            p.adam.step += 1;
            let t = p.adam.step as i32;
            let c1 = T::of(1.0 - self.beta1.powi(t));
            let c2 = T::of(1.0 - self.beta2.powi(t));
            let lr = T::of(lr);
            let grad = p.grad.as_ref().expect("checked above");
            let st = &mut p.adam;
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad)
                .zip(st.m.iter_mut())
                .zip(st.v.iter_mut())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm measured before clipping.
pub fn clip_global_norm<T: Scalar>(params: &mut ParamSet<T>, max_norm: f64) -> f64 {
    let norm = global_grad_norm(params);
    if norm > max_norm && norm.is_finite() {
        let s = T::of(max_norm / norm);
        for p in params.iter_mut() {
            if let Some(g) = p.grad.as_mut() {
                g.iter_mut().for_each(|v| *v = *v * s);
            }
        }
    }
    norm
}

/// L2 norm over every accumulated gradient.
pub fn global_grad_norm<T: Scalar>(params: &ParamSet<T>) -> f64 {
    params
        .iter()
        .filter_map(|p| p.grad.as_ref())
        .flat_map(|g| g.iter())
        .map(|v| {
            let x = v.as_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}
