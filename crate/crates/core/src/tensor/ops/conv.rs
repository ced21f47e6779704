use crate::tensor::gemm::{gemm, transpose};
use crate::tensor::{dims4, Real, Tape, Tensor, Var};
use crate::{Error, Result};

/// Stride, zero padding and channel grouping of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dArgs {
    pub stride: usize,
    /// Zero padding as `(rows, columns)`.
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Default for Conv2dArgs {
    fn default() -> Self {
        Conv2dArgs { stride: 1, padding: (0, 0), groups: 1 }
    }
}

impl Conv2dArgs {
    pub fn same(kernel: usize) -> Self {
        Conv2dArgs { stride: 1, padding: (kernel / 2, kernel / 2), groups: 1 }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, rows: usize, cols: usize) -> Self {
        self.padding = (rows, cols);
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    args: Conv2dArgs,
}

impl Geometry {
    fn new(x: &[usize], weight: &[usize], bias: Option<&[usize]>, args: Conv2dArgs) -> Result<Self> {
        let (batch, cin, h, w) = dims4(x, "conv2d")?;
        let (cout, cin_g, kh, kw) = dims4(weight, "conv2d")?;
        let groups = args.groups;
        if args.stride == 0 {
            return Err(Error::shape("conv2d", "stride must be at least 1"));
        }
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(Error::shape("conv2d", format!("groups {groups} must divide in {cin} and out {cout} channels")));
        }
        if cin_g * groups != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input channels: weight expects {} but input has {cin}", cin_g * groups),
            ));
        }
        if let Some(bshape) = bias {
            if bshape != [cout] {
                return Err(Error::shape("conv2d", format!("bias shape {bshape:?} does not match out channels {cout}")));
            }
        }
        let (ph, pw) = args.padding;
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * ph, w + 2 * pw),
            ));
        }
        let ho = (h + 2 * ph - kh) / args.stride + 1;
        let wo = (w + 2 * pw - kw) / args.stride + 1;
        Ok(Geometry { batch, cin, h, w, cout, kh, kw, ho, wo, args })
    }

    fn cin_g(&self) -> usize {
        self.cin / self.args.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.args.groups
    }

    fn k_g(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Column matrix `[cin_g·kh·kw, ho·wo]` for one batch item and group.
    fn im2col<T: Real>(&self, x: &[T], b: usize, g: usize, cols: &mut [T]) {
        let (ph, pw) = self.args.padding;
        let s = self.args.stride;
        let p = self.positions();
        for cl in 0..self.cin_g() {
            let c = g * self.cin_g() + cl;
            let plane = &x[(b * self.cin + c) * self.h * self.w..][..self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = &mut cols[((cl * self.kh + ky) * self.kw + kx) * p..][..p];
                    for oy in 0..self.ho {
                        let iy = (oy * s + ky) as isize - ph as isize;
                        let dst = &mut row[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            dst.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - pw as isize;
                            *d = if ix < 0 || ix >= self.w as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Real>(&self, cols: &[T], b: usize, g: usize, gx: &mut [T]) {
        let (ph, pw) = self.args.padding;
        let s = self.args.stride;
        let p = self.positions();
        for cl in 0..self.cin_g() {
            let c = g * self.cin_g() + cl;
            let plane = &mut gx[(b * self.cin + c) * self.h * self.w..][..self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = &cols[((cl * self.kh + ky) * self.kw + kx) * p..][..p];
                    for oy in 0..self.ho {
                        let iy = (oy * s + ky) as isize - ph as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.wo {
                            let ix = (ox * s + kx) as isize - pw as isize;
                            if ix >= 0 && ix < self.w as isize {
                                plane[iy as usize * self.w + ix as usize] += row[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn forward<T: Real>(geo: &Geometry, x: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (p, k_g, cout_g) = (geo.positions(), geo.k_g(), geo.cout_g());
    let mut out = vec![T::zero(); geo.batch * geo.cout * p];
    let mut cols = vec![T::zero(); k_g * p];
    for b in 0..geo.batch {
        for g in 0..geo.args.groups {
            geo.im2col(x, b, g, &mut cols);
            let wg = &weight[g * cout_g * k_g..(g + 1) * cout_g * k_g];
            let dst = &mut out[(b * geo.cout + g * cout_g) * p..][..cout_g * p];
            gemm(cout_g, k_g, p, wg, &cols, dst, false);
        }
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                out[(b * geo.cout + co) * p..][..p].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Cross-correlation of `x: [B, Cin, H, W]` with `weight: [Cout, Cin/groups, kh, kw]`.
///
/// Output spatial size is `floor((H + 2·pad − kh)/stride) + 1`. No kernel flip.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    args: Conv2dArgs,
) -> Result<Tensor<T>> {
    let geo = Geometry::new(x.shape(), weight.shape(), bias.map(|b| b.shape()), args)?;
    let out = forward(&geo, x.data(), weight.data(), bias.map(|b| b.data()));
    Ok(Tensor::from_parts(vec![geo.batch, geo.cout, geo.ho, geo.wo], out))
}

impl<T: Real> Tape<T> {
    /// Differentiable 2-D convolution; see [`conv2d_forward`].
    pub fn conv2d(&self, x: Var, weight: Var, bias: Option<Var>, args: Conv2dArgs) -> Result<Var> {
        let (value, geo) = {
            let xv = self.value(x);
            let wv = self.value(weight);
            let bv = bias.map(|b| self.value(b));
            let geo = Geometry::new(xv.shape(), wv.shape(), bv.as_ref().map(|b| b.shape()), args)?;
            let out = forward(&geo, xv.data(), wv.data(), bv.as_ref().map(|b| b.data()));
            (Tensor::from_parts(vec![geo.batch, geo.cout, geo.ho, geo.wo], out), geo)
        };
        let mut parents = vec![x, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.record(
            "conv2d",
            value,
            &parents,
            Box::new(move |inputs, _out, gout| {
                let (xd, wd) = (inputs[0].data(), inputs[1].data());
                let (p, k_g, cout_g) = (geo.positions(), geo.k_g(), geo.cout_g());
                let mut gx = vec![T::zero(); xd.len()];
                let mut gw = vec![T::zero(); wd.len()];
                let mut cols = vec![T::zero(); k_g * p];
                let mut gcols = vec![T::zero(); k_g * p];
                let w_t: Vec<Vec<T>> = (0..geo.args.groups)
                    .map(|g| transpose(cout_g, k_g, &wd[g * cout_g * k_g..(g + 1) * cout_g * k_g]))
                    .collect();
                for b in 0..geo.batch {
                    for g in 0..geo.args.groups {
                        let go = &gout[(b * geo.cout + g * cout_g) * p..][..cout_g * p];
                        geo.im2col(xd, b, g, &mut cols);
                        let cols_t = transpose(k_g, p, &cols);
                        gemm(cout_g, p, k_g, go, &cols_t, &mut gw[g * cout_g * k_g..(g + 1) * cout_g * k_g], true);
                        gemm(k_g, cout_g, p, &w_t[g], go, &mut gcols, false);
                        geo.col2im_add(&gcols, b, g, &mut gx);
                    }
                }
                let mut grads = vec![Some(gx), Some(gw)];
                if has_bias {
                    let mut gb = vec![T::zero(); geo.cout];
                    for b in 0..geo.batch {
                        for (co, acc) in gb.iter_mut().enumerate() {
                            *acc += gout[(b * geo.cout + co) * p..][..p].iter().copied().sum::<T>();
                        }
                    }
                    grads.push(Some(gb));
                }
                grads
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_kernel_counts_overlapping_taps() {
        let x = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let w = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let b = Tensor::<f64>::zeros(&[1]);
        let y = conv2d_forward(&x, &w, Some(&b), Conv2dArgs::same(3)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.at4(0, 0, 1, 1), 9.0);
        assert_eq!(y.at4(0, 0, 0, 0), 4.0);
        assert_eq!(y.at4(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = Tensor::<f64>::from_fn(&[2, 1, 4, 5], |i| (i as f64).sin());
        let w = Tensor::<f64>::ones(&[1, 1, 1, 1]);
        let b = Tensor::<f64>::zeros(&[1]);
        assert_eq!(conv2d_forward(&x, &w, Some(&b), Conv2dArgs::default()).unwrap(), x);
    }

    #[test]
    fn strided_output_size() {
        let x = Tensor::<f64>::ones(&[1, 2, 8, 7]);
        let w = Tensor::<f64>::ones(&[3, 2, 3, 3]);
        let y = conv2d_forward(&x, &w, None, Conv2dArgs::same(3).with_stride(2)).unwrap();
        assert_eq!(y.shape(), &[1, 3, 4, 4]);
    }

    #[test]
    fn channel_mismatch_names_the_dimension() {
        let x = Tensor::<f64>::ones(&[1, 2, 4, 4]);
        let w = Tensor::<f64>::ones(&[1, 3, 3, 3]);
        let err = conv2d_forward(&x, &w, None, Conv2dArgs::same(3)).unwrap_err().to_string();
        assert!(err.contains("input channels"), "{err}");
    }

    #[test]
    fn depthwise_groups_keep_channels_separate() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 3, 3], |i| if i < 9 { 1.0 } else { 2.0 });
        let w = Tensor::<f64>::from_fn(&[2, 1, 1, 1], |i| (i + 1) as f64 * 10.0);
        let y = conv2d_forward(&x, &w, None, Conv2dArgs::default().with_groups(2)).unwrap();
        assert_eq!(y.at4(0, 0, 2, 2), 10.0);
        assert_eq!(y.at4(0, 1, 0, 0), 40.0);
    }
}
