//! Texture transfer: normalise the texture's style away, then re-style it
//! with affine maps predicted from the decoder features.

use crate::nn::{Conv2d, ParamBuilder, ResBlock, Scope};
use crate::tensor::{Real, Var};
use crate::{Error, Result};

/// `conv3x3 → ReLU → conv3x3`, producing one affine map.
#[derive(Clone, Debug)]
pub struct AffineBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl AffineBlock {
    fn build<T: Real>(b: &mut ParamBuilder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        let mut b = b.sub(name);
        Ok(AffineBlock { conv1: b.conv_relu("conv1", channels, channels, 3)?, conv2: b.conv_same("conv2", channels, channels, 3)? })
    }

    pub fn forward<T: Real>(&self, s: &Scope<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(s, x)?;
        let h = s.tape.relu(h);
        self.conv2.forward(s, h)
    }
}

#[derive(Clone, Debug)]
pub struct TTMParams {
    pub beta: AffineBlock,
    pub gamma: AffineBlock,
    /// `1×1`, `2C → C` over `concat(transferred, x)`.
    pub fuse: Conv2d,
    pub refine: ResBlock,
    pub eps: f64,
    /// Predict β, γ from the normalised texture and apply them to the features instead.
    pub alternative_binding: bool,
}

impl TTMParams {
    pub fn build<T: Real>(b: &mut ParamBuilder<'_, T>, channels: usize, eps: f64, alternative_binding: bool) -> Result<Self> {
        Ok(TTMParams {
            beta: AffineBlock::build(b, "beta", channels)?,
            gamma: AffineBlock::build(b, "gamma", channels)?,
            fuse: b.conv_same("fuse", 2 * channels, channels, 1)?,
            refine: b.res_block("refine", channels)?,
            eps,
            alternative_binding,
        })
    }
}

/// The re-styled texture before fusion: `IN(t)·β(x) + γ(x)`,
/// or `x·β(IN(t)) + γ(IN(t))` with the alternative binding.
pub fn texture_affine<T: Real>(s: &Scope<'_, T>, t_k: Var, x_k: Var, p: &TTMParams) -> Result<Var> {
    let (ts, xs) = (s.tape.shape(t_k), s.tape.shape(x_k));
    if ts != xs {
        return Err(Error::shape("texture_transfer", format!("texture {ts:?} and features {xs:?} differ")));
    }
    let t_norm = s.tape.instance_norm(t_k, T::of(p.eps))?;
    let (modulated, cond) = if p.alternative_binding { (x_k, t_norm) } else { (t_norm, x_k) };
    let beta = p.beta.forward(s, cond)?;
    let gamma = p.gamma.forward(s, cond)?;
    let scaled = s.tape.mul(modulated, beta)?;
    s.tape.add(scaled, gamma)
}

/// Transferred texture fused with the features back to `C` channels.
pub fn texture_transfer<T: Real>(s: &Scope<'_, T>, t_k: Var, x_k: Var, p: &TTMParams) -> Result<Var> {
    let transferred = texture_affine(s, t_k, x_k, p)?;
    let cat = s.tape.concat_channels(&[transferred, x_k])?;
    let fused = p.fuse.forward(s, cat)?;
    p.refine.forward(s, fused)
}
