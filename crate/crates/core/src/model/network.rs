use super::ModelConfig;
use crate::nn::{run_blocks, Conv2d, ParamBuilder, ParamId, ResBlock, Scope, GAIN_LINEAR, GAIN_RELU};
use crate::operators::{
    channel_align, compute_offsets, deformable_conv, dual_cross_attention, sicm_fuse, texture_transfer, ChannelAlignParams,
    CrossAttentionParams, DeformableConvParams, SICMParams, TTMParams,
};
use crate::tensor::{Conv2dArgs, Real, UpsampleMode, Var};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct EncoderStage {
    /// Stride 1 at stage 1, stride 2 afterwards.
    pub down: Conv2d,
    pub blocks: Vec<ResBlock>,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub stages: Vec<EncoderStage>,
    /// Apply ReLU after each down-sampling conv (the block-free edge encoder).
    pub activate: bool,
}

impl EncoderParams {
    fn build<T: Real>(b: &mut ParamBuilder<'_, T>, widths: &[usize], blocks: usize, activate: bool) -> Result<Self> {
        let mut stages = Vec::with_capacity(widths.len());
        for (k, &c) in widths.iter().enumerate() {
            let mut sb = b.sub(&format!("stage{}", k + 1));
            let (cin, stride) = if k == 0 { (1, 1) } else { (widths[k - 1], 2) };
            let gain = if activate { GAIN_RELU } else { GAIN_LINEAR };
            let down = sb.conv_with_gain("down", cin, c, (3, 3), Conv2dArgs::same(3).with_stride(stride), true, gain)?;
            stages.push(EncoderStage { down, blocks: sb.res_blocks("res", c, blocks)? });
        }
        Ok(EncoderParams { stages, activate })
    }
}

/// Cross-scale alignment of `F_{k+1}` onto `F_k`.
#[derive(Clone, Debug)]
pub enum AlignPath {
    /// Deformable conv `2C → C`, channel gate over `concat(F_k, aligned)`, `1×1` reduce.
    Deformable { deform: DeformableConvParams, gate: ChannelAlignParams, reduce: Conv2d },
    /// `1×1` over `concat(F_k, upsample(F_{k+1}))`, `3C → C`.
    Plain { fuse: Conv2d },
}

#[derive(Clone, Debug)]
pub struct CffmStage {
    /// `None` at the coarsest stage.
    pub align: Option<AlignPath>,
    pub attention: CrossAttentionParams,
}

/// How the decoder merges texture `T_k` into the running features.
#[derive(Clone, Debug)]
pub enum Merge {
    Ttm(Box<TTMParams>),
    /// `1×1` over `concat(T_k, X)`, `2C → C`.
    Concat(Conv2d),
}

#[derive(Clone, Debug)]
pub struct DecoderStage {
    pub merge: Merge,
    pub sicm: Option<SICMParams>,
    /// Nearest 2× then `3×3` halving the width; `None` at stage 1.
    pub up: Option<Conv2d>,
}

/// Layout of every learnable tensor in the network.
#[derive(Clone, Debug)]
pub struct ECFNetParams {
    pub lr_encoder: EncoderParams,
    pub ref_encoder: EncoderParams,
    pub edge_encoder: Option<EncoderParams>,
    pub cffm: Vec<CffmStage>,
    pub decoder: Vec<DecoderStage>,
    pub sr_head: Conv2d,
    pub struct_head: Conv2d,
}

impl ECFNetParams {
    pub fn build<T: Real>(b: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let widths = cfg.stage_channels();
        let n = widths.len();
        let lr_encoder = EncoderParams::build(&mut b.sub("lr_encoder"), &widths, cfg.residual_blocks, false)?;
        let ref_encoder = EncoderParams::build(&mut b.sub("ref_encoder"), &widths, cfg.residual_blocks, false)?;
        let edge_encoder = if cfg.ablation.use_structure_branch {
            Some(EncoderParams::build(&mut b.sub("edge_encoder"), &widths, 0, true)?)
        } else {
            None
        };
        let mut cffm = Vec::with_capacity(n);
        let mut decoder = Vec::with_capacity(n);
        for (k, &c) in widths.iter().enumerate() {
            let mut cb = b.sub(&format!("cffm.stage{}", k + 1));
            let align = if k + 1 == n {
                None
            } else if cfg.ablation.use_cffm_alignment {
                let c_up = widths[k + 1];
                Some(AlignPath::Deformable {
                    deform: DeformableConvParams::build(&mut cb.sub("deform"), c + c_up, c_up, c)?,
                    gate: ChannelAlignParams::build(&mut cb.sub("gate"), 2 * c)?,
                    reduce: cb.conv_same("reduce", 2 * c, c, 1)?,
                })
            } else {
                Some(AlignPath::Plain { fuse: cb.conv_same("plain_fuse", c + widths[k + 1], c, 1)? })
            };
            let attention = CrossAttentionParams::build(&mut cb.sub("attention"), c, cfg.attention_heads, cfg.residual_blocks)?;
            cffm.push(CffmStage { align, attention });

            let mut db = b.sub(&format!("decoder.stage{}", k + 1));
            let merge = if cfg.ablation.use_ttm {
                Merge::Ttm(Box::new(TTMParams::build(&mut db.sub("ttm"), c, cfg.instance_norm_epsilon, cfg.ttm_alternative_binding)?))
            } else {
                Merge::Concat(db.conv_same("concat_fuse", 2 * c, c, 1)?)
            };
            let sicm = if cfg.ablation.use_structure_branch { Some(SICMParams::build(&mut db.sub("sicm"), c)?) } else { None };
            let up = if k == 0 { None } else { Some(db.conv_same("up", c, widths[k - 1], 3)?) };
            decoder.push(DecoderStage { merge, sicm, up });
        }
        Ok(ECFNetParams {
            lr_encoder,
            ref_encoder,
            edge_encoder,
            cffm,
            decoder,
            // zero heads: training starts from the interpolated input
            sr_head: b.conv_zero("sr_head", widths[0], 1, 3)?,
            struct_head: b.conv_zero("struct_head", widths[0], 1, 3)?,
        })
    }

    pub fn sr_head_ids(&self) -> Vec<ParamId> {
        self.sr_head.param_ids()
    }
}

/// Feature pyramid `[F_1, …, F_n]`, finest first.
pub fn encode<T: Real>(s: &Scope<'_, T>, img: Var, enc: &EncoderParams) -> Result<Vec<Var>> {
    let (_, _, h, w) = s.tape.value(img).dims4()?;
    let m = 1 << (enc.stages.len().max(1) - 1);
    if h % m != 0 || w % m != 0 {
        return Err(Error::shape("encode", format!("{h}×{w} is not divisible by {m}")));
    }
    let mut x = img;
    let mut out = Vec::with_capacity(enc.stages.len());
    for st in &enc.stages {
        x = st.down.forward(s, x)?;
        if enc.activate {
            x = s.tape.relu(x);
        }
        x = run_blocks(&st.blocks, s, x)?;
        out.push(x);
    }
    Ok(out)
}

fn check_pyramids<T: Real>(s: &Scope<'_, T>, a: &[Var], b: &[Var], op: &'static str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(op, format!("pyramid depths {} and {} differ", a.len(), b.len())));
    }
    for (k, (&x, &y)) in a.iter().zip(b).enumerate() {
        let (sx, sy) = (s.tape.shape(x), s.tape.shape(y));
        if sx != sy {
            return Err(Error::shape(op, format!("stage {} shapes {sx:?} and {sy:?} differ", k + 1)));
        }
    }
    Ok(())
}

/// Texture pyramid `[T_1, …, T_n]` from the LR and reference feature pyramids.
pub fn cffm_forward<T: Real>(s: &Scope<'_, T>, f: &[Var], f_ref: &[Var], stages: &[CffmStage]) -> Result<Vec<Var>> {
    check_pyramids(s, f, f_ref, "cffm_forward")?;
    if f.len() != stages.len() {
        return Err(Error::shape("cffm_forward", format!("{} feature stages for {} fusion stages", f.len(), stages.len())));
    }
    let mut out = Vec::with_capacity(f.len());
    for (k, st) in stages.iter().enumerate() {
        let fused = match &st.align {
            None => f[k],
            Some(path) => {
                let up = s.tape.upsample2x(f[k + 1], UpsampleMode::Bilinear)?;
                match path {
                    AlignPath::Deformable { deform, gate, reduce } => {
                        let offsets = compute_offsets(s, f[k], up, deform)?;
                        let aligned = deformable_conv(s, up, offsets, deform)?;
                        let cat = s.tape.concat_channels(&[f[k], aligned])?;
                        let gated = channel_align(s, cat, gate)?;
                        reduce.forward(s, gated)?
                    }
                    AlignPath::Plain { fuse } => {
                        let cat = s.tape.concat_channels(&[f[k], up])?;
                        fuse.forward(s, cat)?
                    }
                }
            }
        };
        out.push(dual_cross_attention(s, fused, f_ref[k], &st.attention)?);
    }
    Ok(out)
}

/// Decoder output before the global skip: `(sr_residual, structure)`.
pub fn decode<T: Real>(
    s: &Scope<'_, T>,
    textures: &[Var],
    edge_feats: Option<&[Var]>,
    p: &ECFNetParams,
) -> Result<(Var, Var)> {
    let n = p.decoder.len();
    if textures.len() != n {
        return Err(Error::shape("decode", format!("{} textures for {n} decoder stages", textures.len())));
    }
    if let Some(e) = edge_feats {
        check_pyramids(s, textures, e, "decode")?;
    }
    let mut x = textures[n - 1];
    for k in (0..n).rev() {
        let st = &p.decoder[k];
        if s.tape.shape(x) != s.tape.shape(textures[k]) {
            return Err(Error::shape("decode", format!("stage {} features {:?} vs texture {:?}", k + 1, s.tape.shape(x), s.tape.shape(textures[k]))));
        }
        x = match &st.merge {
            Merge::Ttm(ttm) => texture_transfer(s, textures[k], x, ttm)?,
            Merge::Concat(conv) => {
                let cat = s.tape.concat_channels(&[textures[k], x])?;
                conv.forward(s, cat)?
            }
        };
        if let Some(sicm) = &st.sicm {
            let e = edge_feats.ok_or_else(|| Error::Config("structure fusion enabled but no edge features given".into()))?;
            x = sicm_fuse(s, x, e[k], sicm)?;
        }
        if let Some(up) = &st.up {
            let u = s.tape.upsample2x(x, UpsampleMode::Nearest)?;
            x = up.forward(s, u)?;
        }
    }
    Ok((p.sr_head.forward(s, x)?, p.struct_head.forward(s, x)?))
}

/// Graph outputs of one forward pass. `sr` is unclamped.
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    pub sr: Var,
    pub structure: Var,
}

/// Full network on preprocessed inputs (all `[B, 1, H, W]`).
pub fn forward_graph<T: Real>(s: &Scope<'_, T>, p: &ECFNetParams, lr_up: Var, edge: Var, reference: Var) -> Result<Outputs> {
    let f = encode(s, lr_up, &p.lr_encoder)?;
    let f_ref = encode(s, reference, &p.ref_encoder)?;
    let edge_feats = match &p.edge_encoder {
        Some(enc) => Some(encode(s, edge, enc)?),
        None => None,
    };
    let textures = cffm_forward(s, &f, &f_ref, &p.cffm)?;
    let (residual, structure) = decode(s, &textures, edge_feats.as_deref(), p)?;
    let sr = s.tape.add(residual, lr_up)?;
    Ok(Outputs { sr, structure })
}
