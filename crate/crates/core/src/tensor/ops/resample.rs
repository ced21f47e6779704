use crate::tensor::{Real, Tape, Tensor, Var};
use crate::Result;

/// Interpolation used by [`Tape::upsample2x`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpsampleMode {
    Nearest,
    /// Half-pixel centres (align-corners false): output `i` samples input `(i + 0.5)/2 − 0.5`.
    Bilinear,
}

/// Two-tap interpolation table along one axis: `(lo, hi, w_lo, w_hi)` per output index.
fn taps<T: Real>(len: usize, mode: UpsampleMode) -> Vec<(usize, usize, T, T)> {
    (0..2 * len)
        .map(|i| match mode {
            UpsampleMode::Nearest => (i / 2, i / 2, T::one(), T::zero()),
            UpsampleMode::Bilinear => {
                let src = ((i as f64 + 0.5) / 2.0 - 0.5).max(0.0);
                let lo = (src.floor() as usize).min(len - 1);
                let hi = (lo + 1).min(len - 1);
                let frac = T::of(src - lo as f64);
                (lo, hi, T::one() - frac, frac)
            }
        })
        .collect()
}

fn forward<T: Real>(x: &[T], planes: usize, h: usize, w: usize, mode: UpsampleMode) -> Vec<T> {
    let (ty, tx) = (taps::<T>(h, mode), taps::<T>(w, mode));
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                dst[oy * wo + ox] = match mode {
                    UpsampleMode::Nearest => src[y0 * w + x0],
                    UpsampleMode::Bilinear => {
                        wy0 * (wx0 * src[y0 * w + x0] + wx1 * src[y0 * w + x1])
                            + wy1 * (wx0 * src[y1 * w + x0] + wx1 * src[y1 * w + x1])
                    }
                };
            }
        }
    }
    out
}

/// 2× spatial upsampling of a `[B, C, H, W]` tensor outside any tape.
pub fn upsample2x_forward<T: Real>(x: &Tensor<T>, mode: UpsampleMode) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    Ok(Tensor::from_parts(vec![b, c, 2 * h, 2 * w], forward(x.data(), b * c, h, w, mode)))
}

impl<T: Real> Tape<T> {
    /// Differentiable 2× upsampling; see [`UpsampleMode`].
    pub fn upsample2x(&self, x: Var, mode: UpsampleMode) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        let value = Tensor::from_parts(vec![b, c, 2 * h, 2 * w], forward(self.value(x).data(), b * c, h, w, mode));
        Ok(self.record(
            "upsample2x",
            value,
            &[x],
            Box::new(move |_inputs, _out, g| {
                let (ty, tx) = (taps::<T>(h, mode), taps::<T>(w, mode));
                let (ho, wo) = (2 * h, 2 * w);
                let mut gx = vec![T::zero(); b * c * h * w];
                for p in 0..b * c {
                    let gs = &g[p * ho * wo..(p + 1) * ho * wo];
                    let dst = &mut gx[p * h * w..(p + 1) * h * w];
                    for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                            let gv = gs[oy * wo + ox];
                            dst[y0 * w + x0] += gv * wy0 * wx0;
                            dst[y0 * w + x1] += gv * wy0 * wx1;
                            dst[y1 * w + x0] += gv * wy1 * wx0;
                            dst[y1 * w + x1] += gv * wy1 * wx1;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_replicates() {
        let x = Tensor::<f64>::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = upsample2x_forward(&x, UpsampleMode::Nearest).unwrap();
        #[rustfmt::skip]
        let expected = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(y.data(), &expected);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::<f64>::full(&[1, 2, 3, 5], 0.25);
        for mode in [UpsampleMode::Nearest, UpsampleMode::Bilinear] {
            let y = upsample2x_forward(&x, mode).unwrap();
            assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn bilinear_preserves_linear_ramp_in_interior() {
        let (h, w) = (6, 8);
        let ramp = |y: f64, x: f64| 0.3 * y - 0.2 * x + 1.0;
        let x = Tensor::<f64>::from_fn(&[1, 1, h, w], |i| ramp((i / w) as f64, (i % w) as f64));
        let y = upsample2x_forward(&x, UpsampleMode::Bilinear).unwrap();
        for oy in 1..2 * h - 1 {
            for ox in 1..2 * w - 1 {
                let (sy, sx) = ((oy as f64 + 0.5) / 2.0 - 0.5, (ox as f64 + 0.5) / 2.0 - 0.5);
                assert!((y.at4(0, 0, oy, ox) - ramp(sy, sx)).abs() < 1e-6);
            }
        }
    }
}
