use crate::error::{shape_err, Result};
use crate::graph::{Backward, Graph, Op, Var};
use crate::scalar::Real;
use crate::tensor::Tensor;

impl<T: Real> Graph<T> {
    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        T::gemm(m, k, n, T::one(), va, k as isize, 1, vb, n as isize, 1, T::zero(), &mut out, n as isize, 1);
        let out = Tensor::new(vec![m, n], out)?;
        Ok(self.push(out, Op::MatMul { a, b, m, k, n }, &[a, b]))
    }

    /// Batched product `[B, m, k] x [B, k, n]`, or `[B, m, k] x [B, n, k]^T`
    /// when `trans_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(shape_err("bmm", sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let kb = if trans_b { sb[2] } else { sb[1] };
        if kb != k {
            return Err(shape_err("bmm", sa, sb));
        }
        let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); batch * m * n];
        for t in 0..batch {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                &va[t * m * k..(t + 1) * m * k],
                k as isize,
                1,
                &vb[t * k * n..(t + 1) * k * n],
                rsb,
                csb,
                T::zero(),
                &mut out[t * m * n..(t + 1) * m * n],
                n as isize,
                1,
            );
        }
        let out = Tensor::new(vec![batch, m, n], out)?;
        Ok(self.push(out, Op::Bmm { a, b, batch, m, k, n, trans_b }, &[a, b]))
    }
}

pub(super) fn backward<T: Real>(ctx: &mut Backward<'_, T>, i: usize, g: &[T]) {
    let nodes = ctx.nodes;
    match &nodes[i].op {
        &Op::MatMul { a, b, m, k, n } => {
            let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            if let Some(ga) = ctx.slot(a) {
                T::gemm(m, n, k, T::one(), g, n as isize, 1, vb, 1, n as isize, T::one(), ga, k as isize, 1);
            }
            if let Some(gb) = ctx.slot(b) {
                T::gemm(k, m, n, T::one(), va, 1, k as isize, g, n as isize, 1, T::one(), gb, n as isize, 1);
            }
        }
        &Op::Bmm { a, b, batch, m, k, n, trans_b } => {
            let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            let (sa, sb, so) = (m * k, k * n, m * n);
            if let Some(ga) = ctx.slot(a) {
                // dA = dC * op(B)^T
                let (rs, cs) = if trans_b { (k as isize, 1) } else { (1, n as isize) };
                for t in 0..batch {
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        &g[t * so..(t + 1) * so],
                        n as isize,
                        1,
                        &vb[t * sb..(t + 1) * sb],
                        rs,
                        cs,
                        T::one(),
                        &mut ga[t * sa..(t + 1) * sa],
                        k as isize,
                        1,
                    );
                }
            }
            if let Some(gb) = ctx.slot(b) {
                for t in 0..batch {
                    let gt = &g[t * so..(t + 1) * so];
                    let at = &va[t * sa..(t + 1) * sa];
                    let bt = &mut gb[t * sb..(t + 1) * sb];
                    if trans_b {
                        // dB[n, k] = dC^T * A
                        T::gemm(n, m, k, T::one(), gt, 1, n as isize, at, k as isize, 1, T::one(), bt, k as isize, 1);
                    } else {
                        // dB[k, n] = A^T * dC
                        T::gemm(k, m, n, T::one(), at, 1, k as isize, gt, n as isize, 1, T::one(), bt, n as isize, 1);
                    }
                }
            }
        }
        _ => unreachable!("not a linear-algebra op"),
    }
}
