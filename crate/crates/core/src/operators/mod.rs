//! Building blocks of the network: edge extraction, cross-scale alignment,
//! reference texture extraction, texture transfer and structure fusion.

mod attention;
mod channel_align;
mod deform;
mod sicm;
mod sobel;
mod ttm;

pub use attention::{channel_branch, cross_attention_core, dual_cross_attention, spatial_attention_weights, spatial_branch, CrossAttentionParams};
pub use channel_align::{channel_align, channel_coefficients, ChannelAlignParams};
pub use deform::{compute_offsets, deformable_conv, deformable_conv_raw, DeformableConvParams, KERNEL_GRID};
pub use sicm::{sicm_edge, sicm_fuse, SICMParams};
pub use sobel::{sobel_edge_map, SOBEL_MAX_RESPONSE};
pub use ttm::{texture_affine, texture_transfer, AffineBlock, TTMParams};
