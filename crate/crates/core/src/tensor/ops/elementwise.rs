use crate::tensor::{Real, Tape, Tensor, Var};
use crate::{Error, Result};

/// Broadcast layout of a binary op over same-rank operands.
struct Broadcast {
    out_shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

impl Broadcast {
    fn new(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::shape(op, format!("rank mismatch {a:?} vs {b:?}")));
        }
        let mut out_shape = Vec::with_capacity(a.len());
        for (d, (&x, &y)) in a.iter().zip(b).enumerate() {
            out_shape.push(match (x, y) {
                _ if x == y => x,
                (1, _) => y,
                (_, 1) => x,
                _ => return Err(Error::shape(op, format!("dimension {d} differs: {x} vs {y} in {a:?} and {b:?}"))),
            });
        }
        let sa = contiguous_strides(a);
        let sb = contiguous_strides(b);
        let a_strides = a.iter().zip(sa).map(|(&n, s)| if n == 1 { 0 } else { s }).collect();
        let b_strides = b.iter().zip(sb).map(|(&n, s)| if n == 1 { 0 } else { s }).collect();
        Ok(Broadcast { out_shape, a_strides, b_strides })
    }

    /// Visits `(out, a, b)` flat indices in row-major output order.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let rank = self.out_shape.len();
        let total: usize = self.out_shape.iter().product();
        if rank == 0 {
            return;
        }
        let inner = self.out_shape[rank - 1];
        let (ias, ibs) = (self.a_strides[rank - 1], self.b_strides[rank - 1]);
        let mut counter = vec![0usize; rank];
        let (mut ia, mut ib) = (0usize, 0usize);
        let mut o = 0;
        while o < total {
            for j in 0..inner {
                f(o + j, ia + j * ias, ib + j * ibs);
            }
            o += inner;
            // advance the outer counters
            let mut d = rank - 1;
            while d > 0 {
                d -= 1;
                counter[d] += 1;
                ia += self.a_strides[d];
                ib += self.b_strides[d];
                if counter[d] < self.out_shape[d] {
                    break;
                }
                ia -= self.a_strides[d] * counter[d];
                ib -= self.b_strides[d] * counter[d];
                counter[d] = 0;
            }
        }
    }
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
}

impl<T: Real> Tape<T> {
    /// Elementwise sum with same-rank broadcasting over size-1 dimensions.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", BinOp::Add, a, b)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", BinOp::Sub, a, b)
    }

    /// Elementwise product with same-rank broadcasting over size-1 dimensions.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", BinOp::Mul, a, b)
    }

    fn binary(&self, name: &'static str, op: BinOp, a: Var, b: Var) -> Result<Var> {
        let (value, bc) = {
            let (av, bv) = (self.value(a), self.value(b));
            let bc = Broadcast::new(name, av.shape(), bv.shape())?;
            let n: usize = bc.out_shape.iter().product();
            let mut out = vec![T::zero(); n];
            let (ad, bd) = (av.data(), bv.data());
            match op {
                BinOp::Add => bc.for_each(|o, i, j| out[o] = ad[i] + bd[j]),
                BinOp::Sub => bc.for_each(|o, i, j| out[o] = ad[i] - bd[j]),
                BinOp::Mul => bc.for_each(|o, i, j| out[o] = ad[i] * bd[j]),
            }
            (Tensor::from_parts(bc.out_shape.clone(), out), bc)
        };
        Ok(self.record(
            name,
            value,
            &[a, b],
            Box::new(move |inputs, _out, g| {
                let (av, bv) = (inputs[0], inputs[1]);
                let mut ga = vec![T::zero(); av.numel()];
                let mut gb = vec![T::zero(); bv.numel()];
                let (ad, bd) = (av.data(), bv.data());
                match op {
                    BinOp::Add => bc.for_each(|o, i, j| {
                        ga[i] += g[o];
                        gb[j] += g[o];
                    }),
                    BinOp::Sub => bc.for_each(|o, i, j| {
                        ga[i] += g[o];
                        gb[j] -= g[o];
                    }),
                    BinOp::Mul => bc.for_each(|o, i, j| {
                        ga[i] += g[o] * bd[j];
                        gb[j] += g[o] * ad[i];
                    }),
                }
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    fn unary(
        &self,
        name: &'static str,
        x: Var,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Var {
        let value = self.value(x).map(f);
        self.record(
            name,
            value,
            &[x],
            Box::new(move |inputs, out, g| {
                let grad = inputs[0].data().iter().zip(out.data()).zip(g).map(|((&x, &y), &g)| g * df(x, y)).collect();
                vec![Some(grad)]
            }),
        )
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary("relu", x, |v| v.max(T::zero()), |x, _| if x > T::zero() { T::one() } else { T::zero() })
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary("sigmoid", x, |v| T::one() / (T::one() + (-v).exp()), |_, y| y * (T::one() - y))
    }

    pub fn abs(&self, x: Var) -> Var {
        self.unary("abs", x, |v| v.abs(), |x, _| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    /// Multiplies every element by a constant.
    pub fn scale(&self, x: Var, c: T) -> Var {
        self.unary("scale", x, move |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&self, x: Var, c: T) -> Var {
        self.unary("add_scalar", x, move |v| v + c, |_, _| T::one())
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().copied().sum());
        self.record(
            "sum",
            value,
            &[x],
            Box::new(|inputs, _out, g| vec![Some(vec![g[0]; inputs[0].numel()])]),
        )
    }

    /// Mean of all elements as a one-element tensor.
    pub fn mean(&self, x: Var) -> Var {
        let n = self.value(x).numel();
        let inv = T::one() / T::of(n as f64);
        let value = Tensor::scalar(self.value(x).data().iter().copied().sum::<T>() * inv);
        self.record("mean", value, &[x], Box::new(move |_inputs, _out, g| vec![Some(vec![g[0] * inv; n])]))
    }
}
