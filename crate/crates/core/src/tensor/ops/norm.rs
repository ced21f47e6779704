use crate::tensor::{Real, Tape, Tensor, Var};
use crate::{Error, Result};

/// Global pooling reduction over the spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

/// `(outer, len, inner)` view of a shape around `axis`.
fn axis_view(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::shape("softmax", format!("axis {axis} out of range for shape {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Mean and population variance of one slice, two-pass.
fn moments<T: Real>(slice: &[T]) -> (T, T) {
    let n = T::of(slice.len() as f64);
    let first = slice[0];
    // the mean of a constant slice is exactly that constant
    let mean = if slice.iter().all(|&v| v == first) { first } else { slice.iter().copied().sum::<T>() / n };
    let var = slice.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, var)
}

impl<T: Real> Tape<T> {
    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = axis_view(&self.shape(x), axis)?;
        let value = {
            let xv = self.value(x);
            let src = xv.data();
            let mut out = vec![T::zero(); src.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * len + j) * inner + i;
                    let max = (0..len).map(|j| src[at(j)]).fold(T::neg_infinity(), T::max);
                    let mut total = T::zero();
                    for j in 0..len {
                        let e = (src[at(j)] - max).exp();
                        out[at(j)] = e;
                        total += e;
                    }
                    let inv = T::one() / total;
                    for j in 0..len {
                        out[at(j)] *= inv;
                    }
                }
            }
            Tensor::from_parts(xv.shape().to_vec(), out)
        };
        Ok(self.record(
            "softmax",
            value,
            &[x],
            Box::new(move |_inputs, out, g| {
                let y = out.data();
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot: T = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Per `(batch, channel)` standardisation `(x − μ) / sqrt(σ² + eps)` with population variance.
    pub fn instance_norm(&self, x: Var, eps: T) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        if eps <= T::zero() {
            return Err(Error::shape("instance_norm", "epsilon must be positive"));
        }
        let hw = h * w;
        let (value, inv_std) = {
            let xv = self.value(x);
            let mut out = vec![T::zero(); xv.numel()];
            let mut inv_std = Vec::with_capacity(b * c);
            for (dst, src) in out.chunks_mut(hw).zip(xv.data().chunks(hw)) {
                let (mean, var) = moments(src);
                let inv = T::one() / (var + eps).sqrt();
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = (s - mean) * inv;
                }
                inv_std.push(inv);
            }
            (Tensor::from_parts(vec![b, c, h, w], out), inv_std)
        };
        let n = T::of(hw as f64);
        Ok(self.record(
            "instance_norm",
            value,
            &[x],
            Box::new(move |_inputs, out, g| {
                let mut gx = vec![T::zero(); g.len()];
                for (((dst, gs), ys), &inv) in gx.chunks_mut(hw).zip(g.chunks(hw)).zip(out.data().chunks(hw)).zip(&inv_std) {
                    let g_mean = gs.iter().copied().sum::<T>() / n;
                    let gy_mean = gs.iter().zip(ys).map(|(&a, &b)| a * b).sum::<T>() / n;
                    for ((d, &gv), &yv) in dst.iter_mut().zip(gs).zip(ys) {
                        *d = inv * (gv - g_mean - yv * gy_mean);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Global average or max pooling to `[B, C, 1, 1]`.
    pub fn pool_global(&self, x: Var, mode: PoolMode) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let (value, argmax) = {
            let xv = self.value(x);
            let mut out = Vec::with_capacity(b * c);
            let mut argmax = Vec::new();
            for slice in xv.data().chunks(hw) {
                match mode {
                    PoolMode::Avg => out.push(slice.iter().copied().sum::<T>() / T::of(hw as f64)),
                    PoolMode::Max => {
                        let mut best = 0;
                        for (i, &v) in slice.iter().enumerate() {
                            if v > slice[best] {
                                best = i;
                            }
                        }
                        argmax.push(best);
                        out.push(slice[best]);
                    }
                }
            }
            (Tensor::from_parts(vec![b, c, 1, 1], out), argmax)
        };
        let name = match mode {
            PoolMode::Avg => "pool_avg",
            PoolMode::Max => "pool_max",
        };
        Ok(self.record(
            name,
            value,
            &[x],
            Box::new(move |_inputs, _out, g| {
                let mut gx = vec![T::zero(); b * c * hw];
                for (s, &gv) in g.iter().enumerate() {
                    match mode {
                        PoolMode::Avg => {
                            let share = gv / T::of(hw as f64);
                            gx[s * hw..(s + 1) * hw].iter_mut().for_each(|v| *v = share);
                        }
                        PoolMode::Max => gx[s * hw + argmax[s]] = gv,
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}
