use super::axis_split;
use crate::error::{invalid, shape_err, Result};
use crate::graph::{Backward, Graph, Op, Var};
use crate::scalar::Real;
use crate::tensor::{numel, Tensor};

impl<T: Real> Graph<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(invalid(format!("permute: {perm:?} is not a permutation of {} axes", shape.len())));
        }
        let mut strides = vec![1usize; shape.len()];
        for a in (0..shape.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * shape[a + 1];
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let out_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
        let total = numel(&shape);
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; shape.len()];
        let mut offset = 0usize;
        for _ in 0..total {
            map.push(offset);
            for a in (0..idx.len()).rev() {
                idx[a] += 1;
                offset += out_strides[a];
                if idx[a] < out_shape[a] {
                    break;
                }
                offset -= out_strides[a] * out_shape[a];
                idx[a] = 0;
            }
        }
        let src = self.value(x).data();
        let data = map.iter().map(|&m| src[m]).collect();
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(out, Op::Gather(x, map), &[x]))
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return Err(invalid(format!("transpose needs a matrix, got {:?}", self.shape(x))));
        }
        self.permute(x, &[1, 0])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| invalid("concat of no tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(invalid(format!("concat: axis {axis} out of range for {base:?}")));
        }
        let mut sizes = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(a, (p, q))| a == axis || p == q);
            if !compatible {
                return Err(shape_err("concat", &base, s));
            }
            sizes.push(s[axis]);
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let total: usize = sizes.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&x, &n) in xs.iter().zip(&sizes) {
                data.extend_from_slice(&self.value(x).data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Concat(xs.to_vec(), outer, sizes, inner), xs))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(invalid(format!("slice [{start}, {}) on axis {axis} of {shape:?}", start + len)));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&src[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(out, Op::Slice { x, outer, n, inner, start, len }, &[x]))
    }

    /// Rows of a matrix by index, repeats allowed.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || rows.is_empty() || rows.iter().any(|&r| r >= shape[0]) {
            return Err(invalid(format!("select_rows: bad rows for shape {shape:?}")));
        }
        let d = shape[1];
        let map: Vec<usize> = rows.iter().flat_map(|&r| r * d..(r + 1) * d).collect();
        let src = self.value(x).data();
        let data = map.iter().map(|&m| src[m]).collect();
        let out = Tensor::new(vec![rows.len(), d], data)?;
        Ok(self.push(out, Op::Gather(x, map), &[x]))
    }
}

pub(super) fn backward<T: Real>(ctx: &mut Backward<'_, T>, i: usize, g: &[T]) {
    match &ctx.nodes[i].op {
        Op::Reshape(x) => ctx.add(*x, g),
        Op::Gather(x, map) => {
            if let Some(s) = ctx.slot(*x) {
                for (&m, &d) in map.iter().zip(g) {
                    s[m] += d;
                }
            }
        }
        Op::Concat(xs, outer, sizes, inner) => {
            let total: usize = sizes.iter().sum();
            let mut offset = 0;
            for (&x, &n) in xs.iter().zip(sizes) {
                if let Some(s) = ctx.slot(x) {
                    for o in 0..*outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + n) * inner];
                        s[o * n * inner..(o + 1) * n * inner].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                    }
                }
                offset += n;
            }
        }
        Op::Slice { x, outer, n, inner, start, len } => {
            let (outer, n, inner, start, len) = (*outer, *n, *inner, *start, *len);
            if let Some(s) = ctx.slot(*x) {
                for o in 0..outer {
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    let dst = &mut s[(o * n + start) * inner..(o * n + start + len) * inner];
                    dst.iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                }
            }
        }
        _ => unreachable!("not a shape op"),
    }
}
