//! Structure fusion: asymmetric edge convolutions, channel alignment with the
//! features, then a residual refinement.

use super::channel_align::{channel_align, ChannelAlignParams};
use crate::nn::{Conv2d, ParamBuilder, Scope};
use crate::tensor::{Conv2dArgs, Real, Var};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct SICMParams {
    pub conv_3x1: Conv2d,
    pub conv_1x3: Conv2d,
    /// `2C → C` over the concatenated vertical and horizontal responses.
    pub conv_1x1: Conv2d,
    /// Gate over `concat(edge, x)`, `2C` wide.
    pub align: ChannelAlignParams,
    /// `3×3`, `2C → C`.
    pub conv_a: Conv2d,
    /// `3×3`, `C → C`.
    pub conv_b: Conv2d,
}

impl SICMParams {
    pub fn build<T: Real>(b: &mut ParamBuilder<'_, T>, channels: usize) -> Result<Self> {
        let c = channels;
        Ok(SICMParams {
            conv_3x1: b.conv("conv_3x1", c, c, (3, 1), Conv2dArgs::default().with_padding(1, 0), true)?,
            conv_1x3: b.conv("conv_1x3", c, c, (1, 3), Conv2dArgs::default().with_padding(0, 1), true)?,
            conv_1x1: b.conv_same("conv_1x1", 2 * c, c, 1)?,
            align: ChannelAlignParams::build(&mut b.sub("align"), 2 * c)?,
            conv_a: b.conv_relu("conv_a", 2 * c, c, 3)?,
            conv_b: b.conv_zero("conv_b", c, c, 3)?,
        })
    }
}

/// Edge features `X_edge = conv1x1(concat(conv3x1(s), conv1x3(s)))` with `s = x + edge`.
pub fn sicm_edge<T: Real>(s: &Scope<'_, T>, x_k: Var, edge_feat: Var, p: &SICMParams) -> Result<Var> {
    let (xs, es) = (s.tape.shape(x_k), s.tape.shape(edge_feat));
    if xs != es {
        return Err(Error::shape("sicm_fuse", format!("features {xs:?} and edge features {es:?} differ")));
    }
    let sum = s.tape.add(x_k, edge_feat)?;
    let v = p.conv_3x1.forward(s, sum)?;
    let h = p.conv_1x3.forward(s, sum)?;
    let cat = s.tape.concat_channels(&[v, h])?;
    p.conv_1x1.forward(s, cat)
}

/// `conv_b(relu(conv_a(CA(concat(X_edge, x))))) + x`.
pub fn sicm_fuse<T: Real>(s: &Scope<'_, T>, x_k: Var, edge_feat: Var, p: &SICMParams) -> Result<Var> {
    let edge = sicm_edge(s, x_k, edge_feat, p)?;
    let cat = s.tape.concat_channels(&[edge, x_k])?;
    let aligned = channel_align(s, cat, &p.align)?;
    let h = p.conv_a.forward(s, aligned)?;
    let h = s.tape.relu(h);
    let h = p.conv_b.forward(s, h)?;
    s.tape.add(h, x_k)
}
