//! Deformable 3×3 convolution: each kernel tap samples the input at a learned
//! fractional offset from its regular grid position.

use crate::nn::{Conv2d, ParamBuilder, ParamId, Scope};
use crate::tensor::{gemm, Real, Tape, Tensor, Var};
use crate::{Error, Result};

/// The centred 3×3 sampling lattice `{−1, 0, 1}²` as `(dy, dx)`, in tap order.
pub const KERNEL_GRID: [(isize, isize); 9] =
    [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 0), (0, 1), (1, -1), (1, 0), (1, 1)];

const TAPS: usize = KERNEL_GRID.len();

/// Parameters of one deformable alignment step.
#[derive(Clone, Debug)]
pub struct DeformableConvParams {
    /// `[cout, cin, 3, 3]` sampling weights.
    pub weight: ParamId,
    /// Predicts `2 × 9` offset channels from the concatenated features.
    pub offset_conv: Conv2d,
}

impl DeformableConvParams {
    /// `offset_in` is the channel count of the concatenation fed to the offset conv.
    /// The offset conv starts at zero so the layer begins as a plain convolution.
    pub fn build<T: Real>(b: &mut ParamBuilder<'_, T>, offset_in: usize, cin: usize, cout: usize) -> Result<Self> {
        let offset_conv = b.conv_zero("offset_conv", offset_in, 2 * TAPS, 3)?;
        let weight = b.conv("deform", cin, cout, (3, 3), Default::default(), false)?.weight;
        Ok(DeformableConvParams { weight, offset_conv })
    }
}

/// Offsets for every tap: `conv3x3(concat(f_k, f_up))`, `[B, 18, H, W]` of `(dy, dx)` pairs.
pub fn compute_offsets<T: Real>(s: &Scope<'_, T>, f_k: Var, f_up: Var, p: &DeformableConvParams) -> Result<Var> {
    let (fk, fu) = (s.tape.shape(f_k), s.tape.shape(f_up));
    if fk.len() != 4 || fu.len() != 4 || fk[0] != fu[0] || fk[2..] != fu[2..] {
        return Err(Error::shape("compute_offsets", format!("features {fk:?} and {fu:?} are not spatially aligned")));
    }
    let cat = s.tape.concat_channels(&[f_k, f_up])?;
    p.offset_conv.forward(s, cat)
}

/// Aligned features `Σ_n w(p_n) · f_up(p + p_n + Δp_n)`.
pub fn deformable_conv<T: Real>(s: &Scope<'_, T>, f_up: Var, offsets: Var, p: &DeformableConvParams) -> Result<Var> {
    deformable_conv_raw(s.tape, f_up, offsets, s.var(p.weight))
}

/// Bilinear sampling location of one tap: top-left corner and fractional parts.
#[derive(Clone, Copy)]
struct Sample<T> {
    y0: isize,
    x0: isize,
    fy: T,
    fx: T,
}

impl<T: Real> Sample<T> {
    fn at(y: usize, x: usize, tap: usize, dy: T, dx: T) -> Self {
        let (gy, gx) = KERNEL_GRID[tap];
        let py = T::of((y as isize + gy) as f64) + dy;
        let px = T::of((x as isize + gx) as f64) + dx;
        let (fy0, fx0) = (py.floor(), px.floor());
        Sample { y0: fy0.as_f64() as isize, x0: fx0.as_f64() as isize, fy: py - fy0, fx: px - fx0 }
    }

    /// Corner values `(v00, v01, v10, v11)`, zero outside the plane.
    fn corners(&self, plane: &[T], h: usize, w: usize) -> [T; 4] {
        let get = |yy: isize, xx: isize| {
            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                T::zero()
            } else {
                plane[yy as usize * w + xx as usize]
            }
        };
        [get(self.y0, self.x0), get(self.y0, self.x0 + 1), get(self.y0 + 1, self.x0), get(self.y0 + 1, self.x0 + 1)]
    }

    fn weights(&self) -> [T; 4] {
        let (one, fy, fx) = (T::one(), self.fy, self.fx);
        [(one - fy) * (one - fx), (one - fy) * fx, fy * (one - fx), fy * fx]
    }
}

struct Dims {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
}

/// Deformable column matrix `[cin·9, H·W]` of batch item `b`, in the same row
/// order as a regular 3×3 im2col so zero offsets reproduce plain convolution.
fn deform_cols<T: Real>(d: &Dims, x: &[T], off: &[T], b: usize) -> Vec<T> {
    let (h, w, hw) = (d.h, d.w, d.h * d.w);
    let mut cols = vec![T::zero(); d.cin * TAPS * hw];
    let off_b = &off[b * 2 * TAPS * hw..(b + 1) * 2 * TAPS * hw];
    for tap in 0..TAPS {
        let (dys, dxs) = (&off_b[2 * tap * hw..][..hw], &off_b[(2 * tap + 1) * hw..][..hw]);
        for p in 0..hw {
            let smp = Sample::at(p / w, p % w, tap, dys[p], dxs[p]);
            let wts = smp.weights();
            for c in 0..d.cin {
                let plane = &x[(b * d.cin + c) * hw..][..hw];
                let v = smp.corners(plane, h, w);
                cols[(c * TAPS + tap) * hw + p] = wts[0] * v[0] + wts[1] * v[1] + wts[2] * v[2] + wts[3] * v[3];
            }
        }
    }
    cols
}

/// Deformable convolution on raw tape values.
///
/// `x: [B, Cin, H, W]`, `offsets: [B, 18, H, W]` (`dy` then `dx` for each tap in
/// [`KERNEL_GRID`] order), `weight: [Cout, Cin, 3, 3]` → `[B, Cout, H, W]`.
/// Samples falling outside the input read zero. Differentiable with respect to
/// all three inputs; the gradient with respect to offsets is the derivative of
/// the bilinear interpolant, which is discontinuous on integer sample positions.
pub fn deformable_conv_raw<T: Real>(tape: &Tape<T>, x: Var, offsets: Var, weight: Var) -> Result<Var> {
    let (xs, os, ws) = (tape.shape(x), tape.shape(offsets), tape.shape(weight));
    let (b, cin, h, w) = match *xs {
        [b, c, h, w] => (b, c, h, w),
        _ => return Err(Error::shape("deformable_conv", format!("input must be 4-D, got {xs:?}"))),
    };
    if os != [b, 2 * TAPS, h, w] {
        return Err(Error::shape("deformable_conv", format!("offsets {os:?} must be [{b}, 18, {h}, {w}]")));
    }
    let cout = match *ws {
        [co, ci, 3, 3] if ci == cin => co,
        _ => return Err(Error::shape("deformable_conv", format!("weight {ws:?} must be [Cout, {cin}, 3, 3]"))),
    };
    let d = Dims { b, cin, h, w, cout };
    let hw = h * w;
    let k = cin * TAPS;
    let value = {
        let (xv, ov, wv) = (tape.value(x), tape.value(offsets), tape.value(weight));
        let mut out = vec![T::zero(); b * cout * hw];
        for bi in 0..b {
            let cols = deform_cols(&d, xv.data(), ov.data(), bi);
            gemm(cout, k, hw, wv.data(), &cols, &mut out[bi * cout * hw..(bi + 1) * cout * hw], false);
        }
        Tensor::new(&[b, cout, h, w], out)?
    };
    Ok(tape.custom(
        "deformable_conv",
        value,
        &[x, offsets, weight],
        Box::new(move |inputs, _out, g| {
            let (xd, od, wd) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
            let mut gx = vec![T::zero(); xd.len()];
            let mut go = vec![T::zero(); od.len()];
            let mut gw = vec![T::zero(); wd.len()];
            let wt = crate::tensor::gemm::transpose(d.cout, k, wd);
            let mut gcols = vec![T::zero(); k * hw];
            for bi in 0..d.b {
                let gb = &g[bi * d.cout * hw..(bi + 1) * d.cout * hw];
                let cols = deform_cols(&d, xd, od, bi);
                let cols_t = crate::tensor::gemm::transpose(k, hw, &cols);
                gemm(d.cout, hw, k, gb, &cols_t, &mut gw, true);
                gemm(k, d.cout, hw, &wt, gb, &mut gcols, false);
                let off_b = &od[bi * 2 * TAPS * hw..(bi + 1) * 2 * TAPS * hw];
                for tap in 0..TAPS {
                    for p in 0..hw {
                        let smp = Sample::at(p / d.w, p % d.w, tap, off_b[2 * tap * hw + p], off_b[(2 * tap + 1) * hw + p]);
                        let wts = smp.weights();
                        let (mut gdy, mut gdx) = (T::zero(), T::zero());
                        let corner_idx = [(smp.y0, smp.x0), (smp.y0, smp.x0 + 1), (smp.y0 + 1, smp.x0), (smp.y0 + 1, smp.x0 + 1)];
                        for c in 0..d.cin {
                            let gv = gcols[(c * TAPS + tap) * hw + p];
                            if gv == T::zero() {
                                continue;
                            }
                            let base = (bi * d.cin + c) * hw;
                            let v = smp.corners(&xd[base..base + hw], d.h, d.w);
                            for (i, &(yy, xx)) in corner_idx.iter().enumerate() {
                                if yy >= 0 && xx >= 0 && yy < d.h as isize && xx < d.w as isize {
                                    gx[base + yy as usize * d.w + xx as usize] += gv * wts[i];
                                }
                            }
                            let one = T::one();
                            gdy += gv * ((one - smp.fx) * (v[2] - v[0]) + smp.fx * (v[3] - v[1]));
                            gdx += gv * ((one - smp.fy) * (v[1] - v[0]) + smp.fy * (v[3] - v[2]));
                        }
                        let ob = bi * 2 * TAPS * hw;
                        go[ob + 2 * tap * hw + p] += gdy;
                        go[ob + (2 * tap + 1) * hw + p] += gdx;
                    }
                }
            }
            vec![Some(gx), Some(go), Some(gw)]
        }),
    ))
}
