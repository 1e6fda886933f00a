use crate::error::{shape_err, Result};
use crate::graph::{Backward, Graph, Op, Var};
use crate::scalar::Real;
use crate::tensor::Tensor;

impl<T: Real> Graph<T> {
    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(sa.to_vec(), data)
    }

    fn map(&self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let data = self.value(x).data().iter().map(|&v| f(v)).collect();
        Tensor::new(self.shape(x).to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// `x + b` with `b` broadcast along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        let n = *sx.last().unwrap();
        if sb.len() != 1 || sb[0] != n {
            return Err(shape_err("add_bias", sx, sb));
        }
        let bias = self.value(b).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            row.iter_mut().zip(bias).for_each(|(v, &c)| *v += c);
        }
        let out = Tensor::new(sx.to_vec(), data)?;
        Ok(self.push(out, Op::AddBias(x, b), &[x, b]))
    }

    /// `x + c` for a constant tensor of the same shape.
    pub fn add_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        if self.shape(x) != c.shape() {
            return Err(shape_err("add_const", self.shape(x), c.shape()));
        }
        let data = self.value(x).data().iter().zip(c.data()).map(|(&a, &b)| a + b).collect();
        let out = Tensor::new(c.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddConst(x), &[x]))
    }

    /// `x * c` elementwise for a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        if self.shape(x) != c.shape() {
            return Err(shape_err("mul_const", self.shape(x), c.shape()));
        }
        let data = self.value(x).data().iter().zip(c.data()).map(|(&a, &b)| a * b).collect();
        let out = Tensor::new(c.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MulConst(x, c.data().to_vec()), &[x]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.map(x, |v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.exp());
        self.push(out, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.ln());
        self.push(out, Op::Log(x), &[x])
    }
}

pub(super) fn backward<T: Real>(ctx: &mut Backward<'_, T>, i: usize, g: &[T]) {
    let out = ctx.nodes[i].value.data();
    match &ctx.nodes[i].op {
        Op::Add(a, b) => {
            ctx.add(*a, g);
            ctx.add(*b, g);
        }
        Op::Sub(a, b) => {
            ctx.add(*a, g);
            if let Some(s) = ctx.slot(*b) {
                s.iter_mut().zip(g).for_each(|(d, &v)| *d -= v);
            }
        }
        Op::Mul(a, b) => {
            let (a, b) = (*a, *b);
            let (va, vb) = (ctx.value(a), ctx.value(b));
            let ga: Vec<T> = g.iter().zip(vb).map(|(&d, &y)| d * y).collect();
            let gb: Vec<T> = g.iter().zip(va).map(|(&d, &x)| d * x).collect();
            ctx.add(a, &ga);
            ctx.add(b, &gb);
        }
        Op::AddBias(x, b) => {
            ctx.add(*x, g);
            let n = ctx.shape(*b)[0];
            if let Some(s) = ctx.slot(*b) {
                for row in g.chunks(n) {
                    s.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                }
            }
        }
        Op::AddConst(x) => ctx.add(*x, g),
        Op::MulConst(x, c) => {
            let gx: Vec<T> = g.iter().zip(c).map(|(&d, &k)| d * k).collect();
            ctx.add(*x, &gx);
        }
        Op::Scale(x, s) => {
            let s = *s;
            let gx: Vec<T> = g.iter().map(|&d| d * s).collect();
            ctx.add(*x, &gx);
        }
        Op::Relu(x) => {
            let gx: Vec<T> =
                g.iter().zip(out).map(|(&d, &y)| if y > T::zero() { d } else { T::zero() }).collect();
            ctx.add(*x, &gx);
        }
        Op::Exp(x) => {
            let gx: Vec<T> = g.iter().zip(out).map(|(&d, &y)| d * y).collect();
            ctx.add(*x, &gx);
        }
        Op::Log(x) => {
            let x = *x;
            let gx: Vec<T> = g.iter().zip(ctx.value(x)).map(|(&d, &v)| d / v).collect();
            ctx.add(x, &gx);
        }
        _ => unreachable!("not an elementwise op"),
    }
}
