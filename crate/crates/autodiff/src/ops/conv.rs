use crate::error::{invalid, shape_err, Result};
use crate::graph::{Backward, Graph, Op, Var};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub(crate) struct ConvSaved<T> {
    x: Var,
    w: Var,
    stride: usize,
    pad: usize,
    batch: usize,
    cin: usize,
    len: usize,
    k: usize,
    cout: usize,
    lout: usize,
    /// Unfolded input, `[batch][cin * k][lout]`.
    cols: Vec<T>,
}

/// Runs `f(sample, a_chunk, b_chunk)` over matching per-sample chunks.
fn per_sample<A: Send, B: Send>(
    parallel: bool,
    a: &mut [A],
    a_len: usize,
    b: &mut [B],
    b_len: usize,
    f: impl Fn(usize, &mut [A], &mut [B]) + Sync + Send,
) {
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        a.par_chunks_mut(a_len)
            .zip(b.par_chunks_mut(b_len))
            .enumerate()
            .for_each(|(s, (x, y))| f(s, x, y));
        return;
    }
    let _ = parallel;
    a.chunks_mut(a_len).zip(b.chunks_mut(b_len)).enumerate().for_each(|(s, (x, y))| f(s, x, y));
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(x: &[T], cin: usize, len: usize, k: usize, stride: usize, pad: usize, lout: usize, cols: &mut [T]) {
    for ci in 0..cin {
        let src = &x[ci * len..(ci + 1) * len];
        for kk in 0..k {
            let row = &mut cols[(ci * k + kk) * lout..(ci * k + kk + 1) * lout];
            for (t, r) in row.iter_mut().enumerate() {
                let p = (t * stride + kk) as isize - pad as isize;
                *r = if p >= 0 && (p as usize) < len { src[p as usize] } else { T::zero() };
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(cols: &[T], cin: usize, len: usize, k: usize, stride: usize, pad: usize, lout: usize, dx: &mut [T]) {
    for ci in 0..cin {
        let dst = &mut dx[ci * len..(ci + 1) * len];
        for kk in 0..k {
            let row = &cols[(ci * k + kk) * lout..(ci * k + kk + 1) * lout];
            for (t, &r) in row.iter().enumerate() {
                let p = (t * stride + kk) as isize - pad as isize;
                if p >= 0 && (p as usize) < len {
                    dst[p as usize] += r;
                }
            }
        }
    }
}

impl<T: Real> Graph<T> {
    /// Cross-correlation of `x: [B, Cin, L]` with `w: [Cout, Cin, K]`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return Err(shape_err("conv1d", &sx, &sw));
        }
        let (batch, cin, len) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[0], sw[2]);
        if stride == 0 || len + 2 * pad < k {
            return Err(invalid(format!(
                "conv1d: kernel {k} with stride {stride} does not fit length {len} padded by {pad}"
            )));
        }
        let lout = (len + 2 * pad - k) / stride + 1;
        let cink = cin * k;
        let mut cols = vec![T::zero(); batch * cink * lout];
        let mut out = vec![T::zero(); batch * cout * lout];
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        per_sample(self.parallel, &mut out, cout * lout, &mut cols, cink * lout, |b, o, c| {
            im2col(&xv[b * cin * len..(b + 1) * cin * len], cin, len, k, stride, pad, lout, c);
            T::gemm(cout, cink, lout, T::one(), wv, cink as isize, 1, c, lout as isize, 1, T::zero(), o, lout as isize, 1);
        });
        let out = Tensor::new(vec![batch, cout, lout], out)?;
        let saved = ConvSaved { x, w, stride, pad, batch, cin, len, k, cout, lout, cols };
        Ok(self.push(out, Op::Conv1d(saved), &[x, w]))
    }

    /// Non-overlapping max pooling over the last axis of `[B, C, L]`.
    pub fn max_pool1d(&mut self, x: Var, window: usize) -> Result<Var> {
        let (shape, lout) = self.pool_shape("max_pool1d", x, window)?;
        let len = shape[2];
        let src = self.value(x).data();
        let rows = shape[0] * shape[1];
        let mut out = Vec::with_capacity(rows * lout);
        let mut argmax = Vec::with_capacity(rows * lout);
        for r in 0..rows {
            for t in 0..lout {
                let base = r * len + t * window;
                let mut best = base;
                for j in base + 1..base + window {
                    if src[j] > src[best] {
                        best = j;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
        let out = Tensor::new(vec![shape[0], shape[1], lout], out)?;
        Ok(self.push(out, Op::MaxPool(x, argmax), &[x]))
    }

    /// Non-overlapping average pooling over the last axis of `[B, C, L]`.
    pub fn avg_pool1d(&mut self, x: Var, window: usize) -> Result<Var> {
        let (shape, lout) = self.pool_shape("avg_pool1d", x, window)?;
        let len = shape[2];
        let src = self.value(x).data();
        let inv = T::one() / T::from_usize(window).unwrap();
        let rows = shape[0] * shape[1];
        let mut out = Vec::with_capacity(rows * lout);
        for r in 0..rows {
            for t in 0..lout {
                let base = r * len + t * window;
                out.push(src[base..base + window].iter().cloned().sum::<T>() * inv);
            }
        }
        let out = Tensor::new(vec![shape[0], shape[1], lout], out)?;
        Ok(self.push(out, Op::AvgPool(x, window, lout), &[x]))
    }

    fn pool_shape(&self, op: &str, x: Var, window: usize) -> Result<(Vec<usize>, usize)> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || window == 0 || window > shape[2] {
            return Err(invalid(format!("{op}: window {window} invalid for shape {shape:?}")));
        }
        let lout = shape[2] / window;
        Ok((shape, lout))
    }
}

pub(super) fn backward<T: Real>(ctx: &mut Backward<'_, T>, i: usize, g: &[T], parallel: bool) {
    let nodes = ctx.nodes;
    match &nodes[i].op {
        Op::Conv1d(s) => {
            let cink = s.cin * s.k;
            let wv = nodes[s.w.0].value.data();
            let (per_out, per_col) = (s.cout * s.lout, cink * s.lout);
            if let Some(dx) = ctx.slot(s.x) {
                let mut dcols = vec![T::zero(); s.batch * per_col];
                per_sample(parallel, dx, s.cin * s.len, &mut dcols, per_col, |b, dxb, dc| {
                    let gb = &g[b * per_out..(b + 1) * per_out];
                    T::gemm(cink, s.cout, s.lout, T::one(), wv, 1, cink as isize, gb, s.lout as isize, 1, T::zero(), dc, s.lout as isize, 1);
                    col2im(dc, s.cin, s.len, s.k, s.stride, s.pad, s.lout, dxb);
                });
            }
            if let Some(dw) = ctx.slot(s.w) {
                for b in 0..s.batch {
                    let gb = &g[b * per_out..(b + 1) * per_out];
                    let cb = &s.cols[b * per_col..(b + 1) * per_col];
                    T::gemm(s.cout, s.lout, cink, T::one(), gb, s.lout as isize, 1, cb, 1, s.lout as isize, T::one(), dw, cink as isize, 1);
                }
            }
        }
        Op::MaxPool(x, argmax) => {
            if let Some(dx) = ctx.slot(*x) {
                for (&a, &d) in argmax.iter().zip(g) {
                    dx[a] += d;
                }
            }
        }
        &Op::AvgPool(x, window, lout) => {
            let len = nodes[x.0].value.shape()[2];
            let inv = T::one() / T::from_usize(window).unwrap();
            if let Some(dx) = ctx.slot(x) {
                for (o, &d) in g.iter().enumerate() {
                    let (r, t) = (o / lout, o % lout);
                    let base = r * len + t * window;
                    dx[base..base + window].iter_mut().for_each(|v| *v += d * inv);
                }
            }
        }
        _ => unreachable!("not a convolution op"),
    }
}
