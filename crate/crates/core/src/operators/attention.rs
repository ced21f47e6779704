//! Dual (spatial + channel) cross-attention between target-contrast and
//! reference-contrast features.
//!
//! Queries come from the target features and keys/values from the reference.
//! The spatial branch attends over the `H·W` pixel tokens (each a vector of
//! `C / heads` channels); the channel branch attends over the `C / heads`
//! channel tokens of each head (each a vector of `H·W` pixels). Both use
//! `softmax(Q Kᵀ / sqrt(d)) V` with `d` the key length of that branch.

use crate::nn::{run_blocks, Conv2d, ParamBuilder, ResBlock, Scope};
use crate::tensor::{ops::attention_probs, Conv2dArgs, Real, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct CrossAttentionParams {
    pub channels: usize,
    pub heads: usize,
    pub q_s: Conv2d,
    pub k_s: Conv2d,
    pub v_s: Conv2d,
    pub q_c: Conv2d,
    pub k_c: Conv2d,
    pub v_c: Conv2d,
    /// Depthwise 3×3 over the `2C` concatenation of both branches.
    pub depthwise: Conv2d,
    /// Pointwise `2C → C` reduction after the depthwise conv.
    pub pointwise: Conv2d,
    pub blocks: Vec<ResBlock>,
}

impl CrossAttentionParams {
    pub fn build<T: Real>(b: &mut ParamBuilder<'_, T>, channels: usize, heads: usize, blocks: usize) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::Config(format!("attention heads {heads} must divide channel width {channels}")));
        }
        let c = channels;
        let c2 = 2 * channels;
        Ok(CrossAttentionParams {
            channels,
            heads,
            q_s: b.conv_same("q_s", c, c, 1)?,
            k_s: b.conv_same("k_s", c, c, 1)?,
            v_s: b.conv_same("v_s", c, c, 1)?,
            q_c: b.conv_same("q_c", c, c, 1)?,
            k_c: b.conv_same("k_c", c, c, 1)?,
            v_c: b.conv_same("v_c", c, c, 1)?,
            depthwise: b.conv("depthwise", c2, c2, (3, 3), Conv2dArgs::same(3).with_groups(c2), true)?,
            pointwise: b.conv_same("pointwise", c2, c, 1)?,
            blocks: b.res_blocks("res", c, blocks)?,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }
}

fn check_pair<T: Real>(s: &Scope<'_, T>, f_lr: Var, f_ref: Var, p: &CrossAttentionParams) -> Result<(usize, usize, usize, usize)> {
    let (a, r) = (s.tape.shape(f_lr), s.tape.shape(f_ref));
    if a != r {
        return Err(Error::shape("dual_cross_attention", format!("target {a:?} and reference {r:?} differ")));
    }
    let (b, c, h, w) = s.tape.value(f_lr).dims4()?;
    if c != p.channels {
        return Err(Error::shape("dual_cross_attention", format!("expected {} channels, got {c}", p.channels)));
    }
    Ok((b, c, h, w))
}

/// `[B, C, H, W]` → `[B·heads, C/heads, H·W]` (a pure reshape).
fn split_heads<T: Real>(s: &Scope<'_, T>, x: Var, heads: usize) -> Result<Var> {
    let (b, c, h, w) = s.tape.value(x).dims4()?;
    s.tape.reshape(x, &[b * heads, c / heads, h * w])
}

/// Spatial-branch query and key tokens `[B·heads, H·W, C/heads]`.
fn spatial_qk<T: Real>(s: &Scope<'_, T>, f_lr: Var, f_ref: Var, p: &CrossAttentionParams) -> Result<(Var, Var)> {
    let q = p.q_s.forward(s, f_lr)?;
    let k = p.k_s.forward(s, f_ref)?;
    let q = s.tape.transpose_last2(split_heads(s, q, p.heads)?)?;
    let k = s.tape.transpose_last2(split_heads(s, k, p.heads)?)?;
    Ok((q, k))
}

/// Spatial attention output `T_s`, `[B, C, H, W]`.
pub fn spatial_branch<T: Real>(s: &Scope<'_, T>, f_lr: Var, f_ref: Var, p: &CrossAttentionParams) -> Result<Var> {
    let shape = s.tape.shape(f_lr);
    check_pair(s, f_lr, f_ref, p)?;
    let (q, k) = spatial_qk(s, f_lr, f_ref, p)?;
    let v = p.v_s.forward(s, f_ref)?;
    let v = s.tape.transpose_last2(split_heads(s, v, p.heads)?)?;
    let scale = T::of(1.0 / (p.head_dim() as f64).sqrt());
    let o = s.tape.attention(q, k, v, scale)?;
    let o = s.tape.transpose_last2(o)?;
    s.tape.reshape(o, &shape)
}

/// Spatial attention weights `[B·heads, H·W, H·W]` (rows are query pixels).
pub fn spatial_attention_weights<T: Real>(s: &Scope<'_, T>, f_lr: Var, f_ref: Var, p: &CrossAttentionParams) -> Result<Tensor<T>> {
    check_pair(s, f_lr, f_ref, p)?;
    let (q, k) = spatial_qk(s, f_lr, f_ref, p)?;
    let scale = T::of(1.0 / (p.head_dim() as f64).sqrt());
    let (qv, kv) = (s.tape.to_tensor(q), s.tape.to_tensor(k));
    attention_probs(&qv, &kv, scale)
}

/// Channel attention output `T_c`, `[B, C, H, W]`.
pub fn channel_branch<T: Real>(s: &Scope<'_, T>, f_lr: Var, f_ref: Var, p: &CrossAttentionParams) -> Result<Var> {
    let shape = s.tape.shape(f_lr);
    let (_, _, h, w) = check_pair(s, f_lr, f_ref, p)?;
    let q = split_heads(s, p.q_c.forward(s, f_lr)?, p.heads)?;
    let k = split_heads(s, p.k_c.forward(s, f_ref)?, p.heads)?;
    let v = split_heads(s, p.v_c.forward(s, f_ref)?, p.heads)?;
    let scale = T::of(1.0 / ((h * w) as f64).sqrt());
    let o = s.tape.attention(q, k, v, scale)?;
    s.tape.reshape(o, &shape)
}

/// Both branches concatenated and reduced back to `C` channels (before the residual path).
pub fn cross_attention_core<T: Real>(s: &Scope<'_, T>, f_lr: Var, f_ref: Var, p: &CrossAttentionParams) -> Result<Var> {
    let ts = spatial_branch(s, f_lr, f_ref, p)?;
    let tc = channel_branch(s, f_lr, f_ref, p)?;
    let cat = s.tape.concat_channels(&[ts, tc])?;
    let d = p.depthwise.forward(s, cat)?;
    p.pointwise.forward(s, d)
}

/// Reference texture: residual blocks over `f_lr + core(f_lr, f_ref)`.
pub fn dual_cross_attention<T: Real>(s: &Scope<'_, T>, f_lr: Var, f_ref: Var, p: &CrossAttentionParams) -> Result<Var> {
    let core = cross_attention_core(s, f_lr, f_ref, p)?;
    let x = s.tape.add(f_lr, core)?;
    run_blocks(&p.blocks, s, x)
}
