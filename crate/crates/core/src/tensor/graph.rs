use super::{Parameter, Scalar, Tensor};
use crate::error::{Result, TbqnError};
use crate::rng::RngState;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnaryKind {
    Relu,
    Sigmoid,
    Tanh,
    Square,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Binary {
        kind: BinaryKind,
        lhs: Var,
        rhs: Var,
    },
    Scale(Var, T),
    AddScalar(Var),
    Unary(UnaryKind, Var),
    MatMul {
        a: Var,
        b: Var,
        batch_a: usize,
        batch_b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    TransposeLast2(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    SplitHeads {
        x: Var,
        heads: usize,
    },
    MergeHeads {
        x: Var,
        heads: usize,
    },
    LastPosition(Var),
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    Mse {
        pred: Var,
        target: Vec<T>,
    },
    Huber {
        pred: Var,
        target: Vec<T>,
        delta: T,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<usize>,
    grad: Option<Vec<T>>,
}

/// A recording of one forward computation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and [`Graph::backward`] simply walks it in reverse.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A graph that never tracks gradients; used for target-network and acting passes.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.grad_enabled;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            param: None,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Binds a trainable parameter; its gradient is later retrieved with [`Graph::take_param_grads`].
    pub fn param(&mut self, index: usize, p: &Parameter<T>) -> Var {
        let v = self.leaf(p.value.clone(), true);
        self.nodes[v.0].param = Some(index);
        v
    }

    /// Removes and returns `(param index, gradient)` for every bound parameter that received one.
    pub fn take_param_grads(&mut self) -> Vec<(usize, Vec<T>)> {
        self.nodes
            .iter_mut()
            .filter_map(|n| match (n.param, n.grad.take()) {
                (Some(i), Some(g)) => Some((i, g)),
                _ => None,
            })
            .collect()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn binary(&mut self, kind: BinaryKind, lhs: Var, rhs: Var) -> Result<Var> {
        let ls = self.shape(lhs);
        let rs = self.shape(rhs);
        let suffix_ok = rs.len() <= ls.len() && ls[ls.len() - rs.len()..] == *rs;
        if !suffix_ok {
            return Err(TbqnError::shape(format!(
                "{kind:?}: operand shapes {ls:?} and {rs:?} are incompatible"
            )));
        }
        let shape = ls.to_vec();
        let a = self.data(lhs);
        let b = self.data(rhs);
        let f: fn(T, T) -> T = match kind {
            BinaryKind::Add => |x, y| x + y,
            BinaryKind::Sub => |x, y| x - y,
            BinaryKind::Mul => |x, y| x * y,
        };
        let mut out = Vec::with_capacity(a.len());
        for chunk in a.chunks_exact(b.len()) {
            out.extend(chunk.iter().zip(b).map(|(&x, &y)| f(x, y)));
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Binary { kind, lhs, rhs }, &[lhs, rhs]))
    }

    /// Elementwise `lhs + rhs`; `rhs` may have a trailing sub-shape of `lhs` and is broadcast.
    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, lhs, rhs)
    }

    pub fn sub(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, lhs, rhs)
    }

    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, lhs, rhs)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let t = self.value(x);
        let value = Tensor::new(t.shape(), t.data().iter().map(|&v| v * factor).collect())
            .expect("same shape");
        self.push(value, Op::Scale(x, factor), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let t = self.value(x);
        let value =
            Tensor::new(t.shape(), t.data().iter().map(|&v| v + c).collect()).expect("same shape");
        self.push(value, Op::AddScalar(x), &[x])
    }

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Var {
        let t = self.value(x);
        let f: fn(T) -> T = match kind {
            UnaryKind::Relu => |v| if v > T::zero() { v } else { T::zero() },
            UnaryKind::Sigmoid => |v| T::one() / (T::one() + (-v).exp()),
            UnaryKind::Tanh => |v| v.tanh(),
            UnaryKind::Square => |v| v * v,
        };
        let value = Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect())
            .expect("same shape");
        self.push(value, Op::Unary(kind, x), &[x])
    }

    /// Rectified linear unit; the derivative at 0 is taken as 0.
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Tanh, x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Square, x)
    }

    /// Batched matrix product `a[.., m, k] x b[.., k, n]`.
    ///
    /// Leading (batch) dimensions must be identical, or one side must have a
    /// batch size of 1 and is broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || {
            TbqnError::shape(format!("matmul: cannot multiply {sa:?} by {sb:?}"))
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let lead_a = &sa[..sa.len() - 2];
        let lead_b = &sb[..sb.len() - 2];
        let batch_a: usize = lead_a.iter().product();
        let batch_b: usize = lead_b.iter().product();
        let lead = if batch_b == 1 {
            lead_a.to_vec()
        } else if batch_a == 1 || lead_a == lead_b {
            lead_b.to_vec()
        } else {
            return Err(mismatch());
        };
        let batch = batch_a.max(batch_b);
        let mut out = vec![T::zero(); batch * m * n];
        let da = self.data(a);
        let db = self.data(b);
        if batch_b == 1 {
            T::gemm(false, false, batch_a * m, k, n, T::one(), da, db, T::zero(), &mut out);
        } else {
            for i in 0..batch {
                let ai = if batch_a == 1 { 0 } else { i };
                T::gemm(
                    false,
                    false,
                    m,
                    k,
                    n,
                    T::one(),
                    &da[ai * m * k..(ai + 1) * m * k],
                    &db[i * k * n..(i + 1) * k * n],
                    T::zero(),
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let mut shape = lead;
        shape.extend([m, n]);
        let value = Tensor::new(&shape, out)?;
        let op = Op::MatMul {
            a,
            b,
            batch_a,
            batch_b,
            m,
            k,
            n,
        };
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(TbqnError::shape(format!("transpose needs rank >= 2, got {s:?}")));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let out = transpose_blocks(self.data(x), r, c);
        let mut shape = s.clone();
        let len = shape.len();
        shape.swap(len - 2, len - 1);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::TransposeLast2(x), &[x]))
    }

    /// Softmax over the last dimension, stabilised by subtracting each slice's maximum.
    pub fn softmax_last(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let d = t.last_dim();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(d) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum = sum + *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let value = Tensor::new(t.shape(), out).expect("same shape");
        self.push(value, Op::Softmax(x), &[x])
    }

    /// Normalises each last-dimension slice to zero mean and unit variance, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(TbqnError::shape(format!(
                "layer_norm: gain {:?} / bias {:?} must have length {d}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let xs = self.data(x);
        let g = self.data(gain);
        let b = self.data(bias);
        let dn = T::of(d as f64);
        let mut xhat = vec![T::zero(); xs.len()];
        let mut rstd = Vec::with_capacity(xs.len() / d);
        let mut out = vec![T::zero(); xs.len()];
        for (r, row) in xs.chunks(d).enumerate() {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(self.shape(x), out)?;
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        };
        Ok(self.push(value, op, &[x, gain, bias]))
    }

    /// Inverted dropout. Identity when `training` is false or `rate` is 0.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, rng: &mut RngState) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TbqnError::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let t = self.value(x);
        let mask: Vec<T> = (0..t.numel())
            .map(|_| if rng.uniform() < rate { T::zero() } else { keep })
            .collect();
        let out = t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(t.shape(), out)?;
        Ok(self.push(value, Op::Dropout { x, mask }, &[x]))
    }

    /// `[B, T, heads*dk] -> [B, heads, T, dk]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || heads == 0 || s[2] % heads != 0 {
            return Err(TbqnError::shape(format!(
                "split_heads: {s:?} cannot be split into {heads} heads"
            )));
        }
        let (b, t, d) = (s[0], s[1], s[2]);
        let dk = d / heads;
        let src = self.data(x);
        let mut out = vec![T::zero(); src.len()];
        for bi in 0..b {
            for ti in 0..t {
                for h in 0..heads {
                    let from = (bi * t + ti) * d + h * dk;
                    let to = ((bi * heads + h) * t + ti) * dk;
                    out[to..to + dk].copy_from_slice(&src[from..from + dk]);
                }
            }
        }
        let value = Tensor::new(&[b, heads, t, dk], out)?;
        Ok(self.push(value, Op::SplitHeads { x, heads }, &[x]))
    }

    /// `[B, heads, T, dk] -> [B, T, heads*dk]`.
    pub fn merge_heads(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(TbqnError::shape(format!("merge_heads expects rank 4, got {s:?}")));
        }
        let (b, heads, t, dk) = (s[0], s[1], s[2], s[3]);
        let src = self.data(x);
        let mut out = vec![T::zero(); src.len()];
        for bi in 0..b {
            for h in 0..heads {
                for ti in 0..t {
                    let from = ((bi * heads + h) * t + ti) * dk;
                    let to = (bi * t + ti) * heads * dk + h * dk;
                    out[to..to + dk].copy_from_slice(&src[from..from + dk]);
                }
            }
        }
        let value = Tensor::new(&[b, t, heads * dk], out)?;
        Ok(self.push(value, Op::MergeHeads { x, heads }, &[x]))
    }

    /// `[B, T, d] -> [B, d]`, keeping the final sequence position.
    pub fn last_position(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(TbqnError::shape(format!("last_position expects rank 3, got {s:?}")));
        }
        let (b, t, d) = (s[0], s[1], s[2]);
        let src = self.data(x);
        let mut out = Vec::with_capacity(b * d);
        for bi in 0..b {
            let start = (bi * t + t - 1) * d;
            out.extend_from_slice(&src[start..start + d]);
        }
        let value = Tensor::new(&[b, d], out)?;
        Ok(self.push(value, Op::LastPosition(x), &[x]))
    }

    /// `[B, A] -> [B]`, picking column `index[b]` from row `b`.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != index.len() || index.iter().any(|&i| i >= s[1]) {
            return Err(TbqnError::shape(format!(
                "gather: {} indices into {s:?}",
                index.len()
            )));
        }
        let src = self.data(x);
        let out = index.iter().enumerate().map(|(r, &c)| src[r * s[1] + c]).collect();
        let value = Tensor::new(&[s[0]], out)?;
        let op = Op::Gather {
            x,
            index: index.to_vec(),
        };
        Ok(self.push(value, op, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().copied().sum::<T>() / T::of(d.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    fn check_target(&self, pred: Var, target: &[T]) -> Result<()> {
        if self.value(pred).numel() != target.len() {
            return Err(TbqnError::contract(format!(
                "loss: {} predictions but {} targets",
                self.value(pred).numel(),
                target.len()
            )));
        }
        Ok(())
    }

    /// Mean squared error against constant targets (no gradient flows into `target`).
    pub fn mse_loss(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        self.check_target(pred, target)?;
        let p = self.data(pred);
        let n = T::of(p.len() as f64);
        let l = p.iter().zip(target).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() / n;
        let op = Op::Mse {
            pred,
            target: target.to_vec(),
        };
        Ok(self.push(Tensor::scalar(l), op, &[pred]))
    }

    /// Mean Huber loss with threshold `delta` against constant targets.
    pub fn huber_loss(&mut self, pred: Var, target: &[T], delta: T) -> Result<Var> {
        self.check_target(pred, target)?;
        let p = self.data(pred);
        let n = T::of(p.len() as f64);
        let half = T::of(0.5);
        let l = p
            .iter()
            .zip(target)
            .map(|(&a, &b)| {
                let e = (a - b).abs();
                if e <= delta {
                    half * e * e
                } else {
                    delta * (e - half * delta)
                }
            })
            .sum::<T>()
            / n;
        let op = Op::Huber {
            pred,
            target: target.to_vec(),
            delta,
        };
        Ok(self.push(Tensor::scalar(l), op, &[pred]))
    }

    /// Back-propagates from a scalar `loss`, adding gradients into every
    /// reachable leaf that requires them. Repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(TbqnError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let (Op::Leaf, true, Some(g)) = (&node.op, node.requires_grad, g) {
                match node.grad.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary { kind, lhs, rhs } => {
                let a = self.data(*lhs);
                let b = self.data(*rhs);
                let r = b.len();
                if let Some(ga) = self.slot(*lhs, grads) {
                    match kind {
                        BinaryKind::Add | BinaryKind::Sub => add_into(ga, g),
                        BinaryKind::Mul => {
                            for (ga_c, g_c) in ga.chunks_exact_mut(r).zip(g.chunks_exact(r)) {
                                for ((v, &gj), &bj) in ga_c.iter_mut().zip(g_c).zip(b) {
                                    *v = *v + gj * bj;
                                }
                            }
                        }
                    }
                }
                if let Some(gb) = self.slot(*rhs, grads) {
                    for (k, g_c) in g.chunks_exact(r).enumerate() {
                        match kind {
                            BinaryKind::Add => add_into(gb, g_c),
                            BinaryKind::Sub => gb.iter_mut().zip(g_c).for_each(|(v, &gj)| *v = *v - gj),
                            BinaryKind::Mul => {
                                let a_c = &a[k * r..(k + 1) * r];
                                for ((v, &gj), &aj) in gb.iter_mut().zip(g_c).zip(a_c) {
                                    *v = *v + gj * aj;
                                }
                            }
                        }
                    }
                }
            }
            Op::Scale(x, f) => {
                if let Some(gx) = self.slot(*x, grads) {
                    gx.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b * *f);
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                if let Some(gx) = self.slot(*x, grads) {
                    add_into(gx, g);
                }
            }
            Op::Unary(kind, x) => {
                let xs = self.data(*x);
                if let Some(gx) = self.slot(*x, grads) {
                    for j in 0..g.len() {
                        let d = match kind {
                            UnaryKind::Relu => {
                                if out[j] > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            UnaryKind::Sigmoid => out[j] * (T::one() - out[j]),
                            UnaryKind::Tanh => T::one() - out[j] * out[j],
                            UnaryKind::Square => T::of(2.0) * xs[j],
                        };
                        gx[j] = gx[j] + g[j] * d;
                    }
                }
            }
            Op::MatMul {
                a,
                b,
                batch_a,
                batch_b,
                m,
                k,
                n,
            } => {
                let (a, b) = (*a, *b);
                let (batch_a, batch_b, m, k, n) = (*batch_a, *batch_b, *m, *k, *n);
                let da = self.data(a);
                let db = self.data(b);
                let batch = batch_a.max(batch_b);
                if let Some(ga) = self.slot(a, grads) {
                    if batch_b == 1 {
                        T::gemm(false, true, batch_a * m, n, k, T::one(), g, db, T::one(), ga);
                    } else {
                        for bi in 0..batch {
                            let ai = if batch_a == 1 { 0 } else { bi };
                            T::gemm(
                                false,
                                true,
                                m,
                                n,
                                k,
                                T::one(),
                                &g[bi * m * n..(bi + 1) * m * n],
                                &db[bi * k * n..(bi + 1) * k * n],
                                T::one(),
                                &mut ga[ai * m * k..(ai + 1) * m * k],
                            );
                        }
                    }
                }
                if let Some(gb) = self.slot(b, grads) {
                    if batch_b == 1 {
                        T::gemm(true, false, k, batch_a * m, n, T::one(), da, g, T::one(), gb);
                    } else {
                        for bi in 0..batch {
                            let ai = if batch_a == 1 { 0 } else { bi };
                            T::gemm(
                                true,
                                false,
                                k,
                                m,
                                n,
                                T::one(),
                                &da[ai * m * k..(ai + 1) * m * k],
                                &g[bi * m * n..(bi + 1) * m * n],
                                T::one(),
                                &mut gb[bi * k * n..(bi + 1) * k * n],
                            );
                        }
                    }
                }
            }
            Op::TransposeLast2(x) => {
                let s = node.value.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let back = transpose_blocks(g, r, c);
                if let Some(gx) = self.slot(*x, grads) {
                    add_into(gx, &back);
                }
            }
            Op::Softmax(x) => {
                let d = node.value.last_dim();
                if let Some(gx) = self.slot(*x, grads) {
                    for ((gxr, yr), gr) in gx.chunks_mut(d).zip(out.chunks(d)).zip(g.chunks(d)) {
                        let dot = yr.iter().zip(gr).map(|(&y, &gy)| y * gy).sum::<T>();
                        for j in 0..d {
                            gxr[j] = gxr[j] + yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = node.value.last_dim();
                let gv = self.data(*gain);
                if let Some(gx) = self.slot(*x, grads) {
                    let dn = T::of(d as f64);
                    for (r, rs) in rstd.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            mean_dh = mean_dh + dh;
                            mean_dh_h = mean_dh_h + dh * hr[j];
                        }
                        mean_dh = mean_dh / dn;
                        mean_dh_h = mean_dh_h / dn;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            gx[r * d + j] = gx[r * d + j] + *rs * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                }
                if let Some(gg) = self.slot(*gain, grads) {
                    for (j, (&gj, &h)) in g.iter().zip(xhat).enumerate() {
                        gg[j % d] = gg[j % d] + gj * h;
                    }
                }
                if let Some(gb) = self.slot(*bias, grads) {
                    for (j, &gj) in g.iter().enumerate() {
                        gb[j % d] = gb[j % d] + gj;
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = self.slot(*x, grads) {
                    for j in 0..g.len() {
                        gx[j] = gx[j] + g[j] * mask[j];
                    }
                }
            }
            Op::SplitHeads { x, heads } => {
                let s = node.value.shape();
                let (b, t, dk) = (s[0], s[2], s[3]);
                let d = heads * dk;
                if let Some(gx) = self.slot(*x, grads) {
                    for bi in 0..b {
                        for ti in 0..t {
                            for h in 0..*heads {
                                let to = (bi * t + ti) * d + h * dk;
                                let from = ((bi * heads + h) * t + ti) * dk;
                                add_into(&mut gx[to..to + dk], &g[from..from + dk]);
                            }
                        }
                    }
                }
            }
            Op::MergeHeads { x, heads } => {
                let s = node.value.shape();
                let (b, t, d) = (s[0], s[1], s[2]);
                let dk = d / heads;
                if let Some(gx) = self.slot(*x, grads) {
                    for bi in 0..b {
                        for h in 0..*heads {
                            for ti in 0..t {
                                let to = ((bi * heads + h) * t + ti) * dk;
                                let from = (bi * t + ti) * d + h * dk;
                                add_into(&mut gx[to..to + dk], &g[from..from + dk]);
                            }
                        }
                    }
                }
            }
            Op::LastPosition(x) => {
                let s = self.shape(*x);
                let (b, t, d) = (s[0], s[1], s[2]);
                if let Some(gx) = self.slot(*x, grads) {
                    for bi in 0..b {
                        let start = (bi * t + t - 1) * d;
                        add_into(&mut gx[start..start + d], &g[bi * d..(bi + 1) * d]);
                    }
                }
            }
            Op::Gather { x, index } => {
                let cols = self.shape(*x)[1];
                if let Some(gx) = self.slot(*x, grads) {
                    for (r, &c) in index.iter().enumerate() {
                        gx[r * cols + c] = gx[r * cols + c] + g[r];
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.slot(*x, grads) {
                    gx.iter_mut().for_each(|v| *v = *v + g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.slot(*x, grads) {
                    let s = g[0] / T::of(gx.len() as f64);
                    gx.iter_mut().for_each(|v| *v = *v + s);
                }
            }
            Op::Mse { pred, target } => {
                let p = self.data(*pred);
                if let Some(gp) = self.slot(*pred, grads) {
                    let s = T::of(2.0) * g[0] / T::of(p.len() as f64);
                    for j in 0..p.len() {
                        gp[j] = gp[j] + s * (p[j] - target[j]);
                    }
                }
            }
            Op::Huber {
                pred,
                target,
                delta,
            } => {
                let p = self.data(*pred);
                if let Some(gp) = self.slot(*pred, grads) {
                    let s = g[0] / T::of(p.len() as f64);
                    for j in 0..p.len() {
                        let e = p[j] - target[j];
                        let d = if e.abs() <= *delta {
                            e
                        } else {
                            *delta * e.signum()
                        };
                        gp[j] = gp[j] + s * d;
                    }
                }
            }
        }
    }

    /// Gradient accumulator for `v`, allocated on first use; `None` when `v` needs no gradient.
    fn slot<'g>(&self, v: Var, grads: &'g mut [Option<Vec<T>>]) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }
}

fn add_into<T: Scalar>(acc: &mut [T], g: &[T]) {
    acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b);
}

fn transpose_blocks<T: Scalar>(src: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for (blk_in, blk_out) in src.chunks(r * c).zip(out.chunks_mut(r * c)) {
        for i in 0..r {
            for j in 0..c {
                blk_out[j * r + i] = blk_in[i * c + j];
            }
        }
    }
    out
}
