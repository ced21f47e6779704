use crate::nn::{Linear, ParamBuilder, Scope, GAIN_LINEAR, GAIN_RELU};
use crate::tensor::{PoolMode, Real, Var};
use crate::Result;

/// Two-layer channel gate with reduction rate 16.
#[derive(Clone, Debug)]
pub struct ChannelAlignParams {
    pub fc1: Linear,
    pub fc2: Linear,
    pub channels: usize,
}

impl ChannelAlignParams {
    pub const REDUCTION: usize = 16;

    pub fn hidden_width(channels: usize) -> usize {
        (channels / Self::REDUCTION).max(1)
    }

    pub fn build<T: Real>(b: &mut ParamBuilder<'_, T>, channels: usize) -> Result<Self> {
        let hidden = Self::hidden_width(channels);
        Ok(ChannelAlignParams { fc1: b.linear("fc1", channels, hidden, GAIN_RELU)?, fc2: b.linear("fc2", hidden, channels, GAIN_LINEAR)?, channels })
    }
}

fn mlp<T: Real>(s: &Scope<'_, T>, pooled: Var, p: &ChannelAlignParams, batch: usize) -> Result<Var> {
    let rows = s.tape.reshape(pooled, &[batch, p.channels])?;
    let h = p.fc1.forward(s, rows)?;
    let h = s.tape.relu(h);
    p.fc2.forward(s, h)
}

/// Per-channel coefficient `φ = sigmoid(MLP(avgpool(x)) + MLP(maxpool(x)))` as `[B, C, 1, 1]`.
pub fn channel_coefficients<T: Real>(s: &Scope<'_, T>, x: Var, p: &ChannelAlignParams) -> Result<Var> {
    let (b, c, _, _) = s.tape.value(x).dims4()?;
    let avg = s.tape.pool_global(x, PoolMode::Avg)?;
    let max = s.tape.pool_global(x, PoolMode::Max)?;
    let a = mlp(s, avg, p, b)?;
    let m = mlp(s, max, p, b)?;
    let logits = s.tape.add(a, m)?;
    let phi = s.tape.sigmoid(logits);
    s.tape.reshape(phi, &[b, c, 1, 1])
}

/// `φ·x + x`, i.e. `x` scaled per channel by `1 + φ ∈ (1, 2)`.
pub fn channel_align<T: Real>(s: &Scope<'_, T>, x: Var, p: &ChannelAlignParams) -> Result<Var> {
    let phi = channel_coefficients(s, x, p)?;
    let gain = s.tape.add_scalar(phi, T::one());
    s.tape.mul(x, gain)
}
