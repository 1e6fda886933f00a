use super::axis_split;
use crate::error::{invalid, Result};
use crate::graph::{Backward, Graph, Op, Var};
use crate::scalar::Real;
use crate::tensor::Tensor;

impl<T: Real> Graph<T> {
    fn check_axis(&self, op: &str, x: Var, axis: usize) -> Result<(usize, usize, usize)> {
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(invalid(format!("{op}: axis {axis} out of range for shape {shape:?}")));
        }
        Ok(axis_split(shape, axis))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let split = self.check_axis("softmax", x, axis)?;
        let out = lanes(self.value(x), split, |lane, out| {
            let m = lane_max(lane);
            let mut s = T::zero();
            for (o, &v) in out.iter_mut().zip(lane) {
                *o = (v - m).exp();
                s += *o;
            }
            let inv = T::one() / s;
            out.iter_mut().for_each(|o| *o *= inv);
        });
        Ok(self.push(out, Op::Softmax(x, split), &[x]))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let split = self.check_axis("log_softmax", x, axis)?;
        let out = lanes(self.value(x), split, |lane, out| {
            let m = lane_max(lane);
            let lse = m + lane.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            out.iter_mut().zip(lane).for_each(|(o, &v)| *o = v - lse);
        });
        Ok(self.push(out, Op::LogSoftmax(x, split), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().cloned().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: T = v.data().iter().cloned().sum();
        let m = s / T::from_usize(v.len()).unwrap();
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, n, inner) = self.check_axis("mean_axis", x, axis)?;
        let src = self.value(x).data();
        let inv = T::one() / T::from_usize(n).unwrap();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..n {
                let row = &src[(o * n + i) * inner..(o * n + i + 1) * inner];
                data[o * inner..(o + 1) * inner].iter_mut().zip(row).for_each(|(d, &v)| *d += v);
            }
        }
        data.iter_mut().for_each(|v| *v *= inv);
        let mut shape = self.shape(x).to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::MeanAxis(x, (outer, n, inner)), &[x]))
    }
}

fn lane_max<T: Real>(lane: &[T]) -> T {
    let mut m = lane[0];
    for &v in &lane[1..] {
        if v > m {
            m = v;
        }
    }
    m
}

/// Applies `f(lane, out_lane)` to every lane along the split axis.
fn lanes<T: Real>(x: &Tensor<T>, (outer, n, inner): (usize, usize, usize), f: impl Fn(&[T], &mut [T])) -> Tensor<T> {
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    if inner == 1 {
        for (lane, o) in src.chunks(n).zip(out.chunks_mut(n)) {
            f(lane, o);
        }
    } else {
        let mut lane = vec![T::zero(); n];
        let mut res = vec![T::zero(); n];
        for o in 0..outer {
            for j in 0..inner {
                for i in 0..n {
                    lane[i] = src[(o * n + i) * inner + j];
                }
                f(&lane, &mut res);
                for i in 0..n {
                    out[(o * n + i) * inner + j] = res[i];
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

/// Visits `(g_lane, y_lane, dx_lane)` triples, gathering strided lanes when
/// needed. `f` accumulates into `dx_lane`.
fn lanes_backward<T: Real>(
    g: &[T],
    y: &[T],
    (outer, n, inner): (usize, usize, usize),
    dx: &mut [T],
    f: impl Fn(&[T], &[T], &mut [T]),
) {
    if inner == 1 {
        for ((gl, yl), dl) in g.chunks(n).zip(y.chunks(n)).zip(dx.chunks_mut(n)) {
            f(gl, yl, dl);
        }
        return;
    }
    let (mut gl, mut yl, mut dl) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
    for o in 0..outer {
        for j in 0..inner {
            for i in 0..n {
                gl[i] = g[(o * n + i) * inner + j];
                yl[i] = y[(o * n + i) * inner + j];
            }
            for i in 0..n {
                dl[i] = dx[(o * n + i) * inner + j];
            }
            f(&gl, &yl, &mut dl);
            for i in 0..n {
                dx[(o * n + i) * inner + j] = dl[i];
            }
        }
    }
}

pub(super) fn backward<T: Real>(ctx: &mut Backward<'_, T>, i: usize, g: &[T]) {
    let out = ctx.nodes[i].value.data();
    match &ctx.nodes[i].op {
        Op::Softmax(x, split) => {
            if let Some(dx) = ctx.slot(*x) {
                lanes_backward(g, out, *split, dx, |gl, yl, dl| {
                    let dot: T = gl.iter().zip(yl).map(|(&a, &b)| a * b).sum();
                    for k in 0..dl.len() {
                        dl[k] += yl[k] * (gl[k] - dot);
                    }
                });
            }
        }
        Op::LogSoftmax(x, split) => {
            if let Some(dx) = ctx.slot(*x) {
                lanes_backward(g, out, *split, dx, |gl, yl, dl| {
                    let total: T = gl.iter().cloned().sum();
                    for k in 0..dl.len() {
                        dl[k] += gl[k] - yl[k].exp() * total;
                    }
                });
            }
        }
        Op::Sum(x) => {
            let d = g[0];
            if let Some(s) = ctx.slot(*x) {
                s.iter_mut().for_each(|v| *v += d);
            }
        }
        Op::Mean(x) => {
            if let Some(s) = ctx.slot(*x) {
                let d = g[0] / T::from_usize(s.len()).unwrap();
                s.iter_mut().for_each(|v| *v += d);
            }
        }
        Op::MeanAxis(x, (outer, n, inner)) => {
            let (outer, n, inner) = (*outer, *n, *inner);
            let inv = T::one() / T::from_usize(n).unwrap();
            if let Some(s) = ctx.slot(*x) {
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for k in 0..n {
                        let dst = &mut s[(o * n + k) * inner..(o * n + k + 1) * inner];
                        dst.iter_mut().zip(src).for_each(|(d, &v)| *d += v * inv);
                    }
                }
            }
        }
        _ => unreachable!("not a reduction op"),
    }
}
