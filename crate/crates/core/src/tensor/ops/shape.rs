use crate::tensor::gemm::transpose;
use crate::tensor::{Real, Tape, Tensor, Var};
use crate::{Error, Result};

impl<T: Real> Tape<T> {
    /// Reinterprets the storage under a new shape with the same element count.
    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.record("reshape", value, &[x], Box::new(|_inputs, _out, g| vec![Some(g.to_vec())])))
    }

    /// Swaps the last two axes of a 3-D `[N, R, C]` tensor.
    pub fn transpose_last2(&self, x: Var) -> Result<Var> {
        let (n, r, c) = match *self.value(x).shape() {
            [n, r, c] => (n, r, c),
            ref s => return Err(Error::shape("transpose_last2", format!("expected 3-D tensor, got {s:?}"))),
        };
        let value = {
            let xv = self.value(x);
            let mut out = Vec::with_capacity(n * r * c);
            for b in 0..n {
                out.extend(transpose(r, c, &xv.data()[b * r * c..(b + 1) * r * c]));
            }
            Tensor::from_parts(vec![n, c, r], out)
        };
        Ok(self.record(
            "transpose_last2",
            value,
            &[x],
            Box::new(move |_inputs, _out, g| {
                let mut gx = Vec::with_capacity(n * r * c);
                for b in 0..n {
                    gx.extend(transpose(c, r, &g[b * r * c..(b + 1) * r * c]));
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Concatenates 4-D tensors along the channel axis.
    pub fn concat_channels(&self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
        let (b, _, h, w) = self.value(*first).dims4()?;
        let mut channels = Vec::with_capacity(xs.len());
        for &x in xs {
            let (bb, c, hh, ww) = self.value(x).dims4()?;
            if (bb, hh, ww) != (b, h, w) {
                return Err(Error::shape(
                    "concat_channels",
                    format!("input [{bb}, {c}, {hh}, {ww}] does not match batch/spatial [{b}, _, {h}, {w}]"),
                ));
            }
            channels.push(c);
        }
        let total: usize = channels.iter().sum();
        let hw = h * w;
        let value = {
            let mut out = Vec::with_capacity(b * total * hw);
            for bi in 0..b {
                for (&x, &c) in xs.iter().zip(&channels) {
                    let xv = self.value(x);
                    out.extend_from_slice(&xv.data()[bi * c * hw..(bi + 1) * c * hw]);
                }
            }
            Tensor::from_parts(vec![b, total, h, w], out)
        };
        let chans = channels.clone();
        Ok(self.record(
            "concat_channels",
            value,
            xs,
            Box::new(move |_inputs, _out, g| {
                let mut grads: Vec<Vec<T>> = chans.iter().map(|&c| Vec::with_capacity(b * c * hw)).collect();
                for bi in 0..b {
                    let mut off = bi * total * hw;
                    for (gx, &c) in grads.iter_mut().zip(&chans) {
                        gx.extend_from_slice(&g[off..off + c * hw]);
                        off += c * hw;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }
}
