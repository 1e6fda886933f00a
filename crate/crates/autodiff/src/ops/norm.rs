use crate::error::{invalid, shape_err, Result};
use crate::graph::{Backward, Graph, Op, Var};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub(crate) struct BatchNormSaved<T> {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<T>,
    invstd: Vec<T>,
    train: bool,
    batch: usize,
    channels: usize,
    len: usize,
}

pub(crate) struct LayerNormSaved<T> {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<T>,
    invstd: Vec<T>,
    dim: usize,
}

/// Per-channel statistics of a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
    /// Elements per channel.
    pub count: usize,
}

impl<T: Real> Graph<T> {
    fn bn_dims(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let s = self.shape(x);
        let (batch, channels, len) = match s.len() {
            2 => (s[0], s[1], 1),
            3 => (s[0], s[1], s[2]),
            _ => return Err(invalid(format!("batch_norm needs [B, C] or [B, C, L], got {s:?}"))),
        };
        for p in [gamma, beta] {
            if self.shape(p) != [channels] {
                return Err(shape_err("batch_norm", s, self.shape(p)));
            }
        }
        Ok((batch, channels, len))
    }

    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        invstd: Vec<T>,
        train: bool,
        (batch, channels, len): (usize, usize, usize),
    ) -> Result<Var> {
        let src = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); src.len()];
        let mut out = vec![T::zero(); src.len()];
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * len;
                for j in base..base + len {
                    xhat[j] = (src[j] - mean[c]) * invstd[c];
                    out[j] = gv[c] * xhat[j] + bv[c];
                }
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let saved = BatchNormSaved { x, gamma, beta, xhat, invstd, train, batch, channels, len };
        Ok(self.push(out, Op::BatchNorm(saved), &[x, gamma, beta]))
    }

    /// Normalizes each channel with the statistics of this batch.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let dims @ (batch, channels, len) = self.bn_dims(x, gamma, beta)?;
        let count = batch * len;
        let n = T::from_usize(count).unwrap();
        let src = self.value(x).data();
        let mut mean = vec![T::zero(); channels];
        let mut var = vec![T::zero(); channels];
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * len;
                mean[c] += src[base..base + len].iter().cloned().sum::<T>();
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / n);
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * len;
                var[c] += src[base..base + len].iter().map(|&v| (v - mean[c]) * (v - mean[c])).sum::<T>();
            }
        }
        var.iter_mut().for_each(|v| *v = *v / n);
        let invstd = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let out = self.bn_apply(x, gamma, beta, &mean, invstd, true, dims)?;
        Ok((out, BatchStats { mean, var, count }))
    }

    /// Normalizes with fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var> {
        let dims = self.bn_dims(x, gamma, beta)?;
        if running_mean.len() != dims.1 || running_var.len() != dims.1 {
            return Err(invalid("batch_norm_eval: running statistics do not match channel count"));
        }
        let invstd = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        self.bn_apply(x, gamma, beta, running_mean, invstd, false, dims)
    }

    /// Normalizes over the last axis, then applies `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let dim = *shape.last().unwrap();
        for p in [gamma, beta] {
            if self.shape(p) != [dim] {
                return Err(shape_err("layer_norm", &shape, self.shape(p)));
            }
        }
        let n = T::from_usize(dim).unwrap();
        let src = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); src.len()];
        let mut out = vec![T::zero(); src.len()];
        let mut invstd = Vec::with_capacity(src.len() / dim);
        for (r, row) in src.chunks(dim).enumerate() {
            let mean = row.iter().cloned().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            invstd.push(is);
            for j in 0..dim {
                let h = (row[j] - mean) * is;
                xhat[r * dim + j] = h;
                out[r * dim + j] = gv[j] * h + bv[j];
            }
        }
        let out = Tensor::new(shape, out)?;
        let saved = LayerNormSaved { x, gamma, beta, xhat, invstd, dim };
        Ok(self.push(out, Op::LayerNorm(saved), &[x, gamma, beta]))
    }

    /// Scales each row of a matrix to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(invalid(format!("l2_normalize needs a matrix, got {shape:?}")));
        }
        let tiny = T::from_f64_lossy(1e-12);
        let src = self.value(x).data();
        let mut norms = Vec::with_capacity(shape[0]);
        let mut out = Vec::with_capacity(src.len());
        for row in src.chunks(shape[1]) {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(tiny);
            norms.push(norm);
            out.extend(row.iter().map(|&v| v / norm));
        }
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, Op::L2Normalize(x, norms), &[x]))
    }
}

pub(super) fn backward<T: Real>(ctx: &mut Backward<'_, T>, i: usize, g: &[T]) {
    let nodes = ctx.nodes;
    match &nodes[i].op {
        Op::BatchNorm(s) => {
            let (channels, len) = (s.channels, s.len);
            let mut sum_g = vec![T::zero(); channels];
            let mut sum_gx = vec![T::zero(); channels];
            for b in 0..s.batch {
                for c in 0..channels {
                    let base = (b * channels + c) * len;
                    for j in base..base + len {
                        sum_g[c] += g[j];
                        sum_gx[c] += g[j] * s.xhat[j];
                    }
                }
            }
            let gv = nodes[s.gamma.0].value.data();
            if let Some(dx) = ctx.slot(s.x) {
                let m = T::from_usize(s.batch * len).unwrap();
                for b in 0..s.batch {
                    for c in 0..channels {
                        let base = (b * channels + c) * len;
                        let k = gv[c] * s.invstd[c];
                        for j in base..base + len {
                            dx[j] += if s.train {
                                k / m * (m * g[j] - sum_g[c] - s.xhat[j] * sum_gx[c])
                            } else {
                                k * g[j]
                            };
                        }
                    }
                }
            }
            ctx.add(s.gamma, &sum_gx);
            ctx.add(s.beta, &sum_g);
        }
        Op::LayerNorm(s) => {
            let dim = s.dim;
            let n = T::from_usize(dim).unwrap();
            let gv = nodes[s.gamma.0].value.data();
            let mut dgamma = vec![T::zero(); dim];
            let mut dbeta = vec![T::zero(); dim];
            let mut dx = vec![T::zero(); g.len()];
            for (r, grow) in g.chunks(dim).enumerate() {
                let h = &s.xhat[r * dim..(r + 1) * dim];
                let mut sum_gh = T::zero();
                let mut sum_ghx = T::zero();
                for j in 0..dim {
                    dgamma[j] += grow[j] * h[j];
                    dbeta[j] += grow[j];
                    let gh = grow[j] * gv[j];
                    sum_gh += gh;
                    sum_ghx += gh * h[j];
                }
                for j in 0..dim {
                    let gh = grow[j] * gv[j];
                    dx[r * dim + j] = s.invstd[r] / n * (n * gh - sum_gh - h[j] * sum_ghx);
                }
            }
            ctx.add(s.x, &dx);
            ctx.add(s.gamma, &dgamma);
            ctx.add(s.beta, &dbeta);
        }
        Op::L2Normalize(x, norms) => {
            let out = nodes[i].value.data();
            let dim = out.len() / norms.len();
            let mut dx = vec![T::zero(); g.len()];
            for (r, &norm) in norms.iter().enumerate() {
                let y = &out[r * dim..(r + 1) * dim];
                let gr = &g[r * dim..(r + 1) * dim];
                let dot: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for j in 0..dim {
                    dx[r * dim + j] = (gr[j] - y[j] * dot) / norm;
                }
            }
            ctx.add(*x, &dx);
        }
        _ => unreachable!("not a normalization op"),
    }
}
