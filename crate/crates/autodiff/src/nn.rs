//! Parameterized layers built from graph ops.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;

fn uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(-bound..=bound)))
}

/// `y = x W + b` over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = store.add_param(&format!("{name}.weight"), uniform(&[in_dim, out_dim], bound, rng))?;
        let bias = store.add_param(&format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Self { weight, bias, in_dim, out_dim })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.last() != Some(&self.in_dim) {
            return Err(invalid(format!("linear expects last axis {}, got {shape:?}", self.in_dim)));
        }
        let rows = shape.iter().product::<usize>() / self.in_dim;
        let flat = if shape.len() == 2 { x } else { g.reshape(x, &[rows, self.in_dim])? };
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(flat, w)?;
        let y = g.add_bias(y, b)?;
        if shape.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.out_dim;
        g.reshape(y, &out_shape)
    }
}

/// Bias-free stride-1 convolution with "same" padding for odd kernels.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = (6.0 / (in_channels * kernel) as f64).sqrt();
        let weight =
            store.add_param(&format!("{name}.weight"), uniform(&[out_channels, in_channels, kernel], bound, rng))?;
        Ok(Self { weight, kernel })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        g.conv1d(x, w, 1, self.kernel / 2)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add_param(&format!("{name}.gamma"), Tensor::full(&[channels], T::one()))?,
            beta: store.add_param(&format!("{name}.beta"), Tensor::zeros(&[channels]))?,
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels]))?,
            running_var: store.add_buffer(&format!("{name}.running_var"), Tensor::full(&[channels], T::one()))?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    /// Training mode uses batch statistics and updates the running estimates.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: Var, train: bool) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let eps = T::from_f64_lossy(self.eps);
        if !train {
            let (rm, rv) = (store.value(self.running_mean).data(), store.value(self.running_var).data());
            return g.batch_norm_eval(x, gamma, beta, rm, rv, eps);
        }
        let (y, stats) = g.batch_norm_train(x, gamma, beta, eps)?;
        let m = T::from_f64_lossy(self.momentum);
        let keep = T::one() - m;
        let unbias = if stats.count > 1 {
            T::from_f64_lossy(stats.count as f64 / (stats.count - 1) as f64)
        } else {
            T::one()
        };
        for (r, &b) in store.value_mut(self.running_mean).data_mut().iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in store.value_mut(self.running_var).data_mut().iter_mut().zip(&stats.var) {
            *r = keep * *r + m * b * unbias;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add_param(&format!("{name}.gamma"), Tensor::full(&[dim], T::one()))?,
            beta: store.add_param(&format!("{name}.beta"), Tensor::zeros(&[dim]))?,
            eps: 1e-5,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, T::from_f64_lossy(self.eps))
    }
}

/// Scaled dot-product attention with `heads` heads over `[B, T, D]`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(invalid(format!("model dim {dim} is not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng)?,
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng)?,
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng)?,
            output: Linear::new(store, &format!("{name}.output"), dim, dim, rng)?,
            heads,
        })
    }

    fn split_heads<T: Real>(&self, g: &mut Graph<T>, x: Var, b: usize, t: usize, d: usize) -> Result<Var> {
        let dh = d / self.heads;
        let x = g.reshape(x, &[b, t, self.heads, dh])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(x, &[b * self.heads, t, dh])
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(invalid(format!("attention expects [B, T, D], got {shape:?}")));
        }
        let (b, t, d) = (shape[0], shape[1], shape[2]);
        let q = self.query.forward(g, store, x)?;
        let k = self.key.forward(g, store, x)?;
        let v = self.value.forward(g, store, x)?;
        let q = self.split_heads(g, q, b, t, d)?;
        let k = self.split_heads(g, k, b, t, d)?;
        let v = self.split_heads(g, v, b, t, d)?;
        let scores = g.bmm(q, k, true)?;
        let dh = (d / self.heads) as f64;
        let scores = g.scale(scores, T::from_f64_lossy(1.0 / dh.sqrt()));
        let attn = g.softmax(scores, 2)?;
        let ctx = g.bmm(attn, v, false)?;
        let ctx = g.reshape(ctx, &[b, self.heads, t, d / self.heads])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b, t, d])?;
        self.output.forward(g, store, ctx)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub hidden: Linear,
    pub output: Linear,
}

impl FeedForward {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), dim, hidden, rng)?,
            output: Linear::new(store, &format!("{name}.output"), hidden, dim, rng)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, store, x)?;
        let h = g.relu(h);
        self.output.forward(g, store, h)
    }
}

/// Post-norm encoder layer: `LN(x + MHA(x))`, then `LN(h + FFN(h))`.
#[derive(Debug, Clone)]
pub struct TransformerEncoderLayer {
    pub attention: MultiHeadAttention,
    pub feedforward: FeedForward,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
}

impl TransformerEncoderLayer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            attention: MultiHeadAttention::new(store, &format!("{name}.attention"), dim, heads, rng)?,
            feedforward: FeedForward::new(store, &format!("{name}.feedforward"), dim, ffn_dim, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let a = self.attention.forward(g, store, x)?;
        let h = g.add(x, a)?;
        let h = self.norm1.forward(g, store, h)?;
        let f = self.feedforward.forward(g, store, h)?;
        let out = g.add(h, f)?;
        self.norm2.forward(g, store, out)
    }
}

/// `[len, dim]` table with `sin` on even and `cos` on odd feature indices.
pub fn sinusoidal_encoding<T: Real>(len: usize, dim: usize) -> Tensor<T> {
    Tensor::from_fn(&[len, dim], |i| {
        let (pos, j) = ((i / dim) as f64, i % dim);
        let freq = 10000f64.powf(-((j - j % 2) as f64) / dim as f64);
        T::from_f64_lossy(if j % 2 == 0 { (pos * freq).sin() } else { (pos * freq).cos() })
    })
}
