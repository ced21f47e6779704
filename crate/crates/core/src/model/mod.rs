//! The full network: preprocessing, encoders, cross-scale fusion, decoder and loss.

mod config;
mod loss;
mod network;
mod preprocess;

pub use config::{Ablation, ModelConfig};
pub use loss::loss;
pub use network::{
    cffm_forward, decode, encode, forward_graph, AlignPath, CffmStage, DecoderStage, ECFNetParams, EncoderParams, EncoderStage, Merge,
    Outputs,
};
pub use preprocess::{bicubic_upsample, keys_kernel, preprocess};

use crate::nn::{ParamBuilder, ParamId, ParamStore, Scope};
use crate::tensor::{Real, Tape, Tensor};
use crate::{Error, Result};
use std::collections::BTreeMap;

/// Eval-time outputs, all `[B, 1, H, W]`.
#[derive(Clone, Debug)]
pub struct Prediction<T: Real = f32> {
    pub sr: Tensor<T>,
    pub structure: Tensor<T>,
    /// The bicubic-interpolated input the network refines.
    pub lr_up: Tensor<T>,
}

/// A configured network with its parameters.
#[derive(Clone, Debug)]
pub struct ECFNet<T: Real = f32> {
    config: ModelConfig,
    layout: ECFNetParams,
    pub params: ParamStore<T>,
}

impl<T: Real> ECFNet<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let layout = ECFNetParams::build(&mut ParamBuilder::new(&mut params, seed, config.init), &config)?;
        Ok(ECFNet { config, layout, params })
    }

    /// Adopts existing parameters, which must match the layout of `config` name for name.
    pub fn with_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let fresh = ECFNet::<T>::new(config, 0)?;
        if fresh.params.len() != params.len() {
            return Err(Error::ConfigMismatch(format!("expected {} tensors, found {}", fresh.params.len(), params.len())));
        }
        for ((name, t), (other, u)) in fresh.params.iter().zip(params.iter()) {
            if name != other || t.shape() != u.shape() {
                return Err(Error::ConfigMismatch(format!("expected `{name}` {:?}, found `{other}` {:?}", t.shape(), u.shape())));
            }
        }
        Ok(ECFNet { config: fresh.config, layout: fresh.layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ECFNetParams {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    fn check_inputs(&self, lr: &Tensor<T>, reference: &Tensor<T>) -> Result<()> {
        let (_, _, h, w) = reference.dims4()?;
        self.config.check_size(h, w)?;
        let (_, _, lh, lw) = lr.dims4()?;
        if lh * self.config.scale_factor != h || lw * self.config.scale_factor != w {
            return Err(Error::shape(
                "forward",
                format!("LR {lh}×{lw} at scale {} does not match reference {h}×{w}", self.config.scale_factor),
            ));
        }
        Ok(())
    }

    fn run<R>(&self, lr: &Tensor<T>, reference: &Tensor<T>, f: impl FnOnce(&Tape<T>, &Scope<'_, T>, Outputs, Tensor<T>) -> Result<R>) -> Result<R> {
        self.check_inputs(lr, reference)?;
        let (lr_up, edge) = preprocess(lr, reference, self.config.scale_factor)?;
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let s = Scope::new(&tape, &bound);
        let up = tape.constant(lr_up.clone());
        let e = tape.constant(edge);
        let r = tape.constant(reference.clone());
        let out = forward_graph(&s, &self.layout, up, e, r)?;
        if let Some((node, op)) = tape.first_non_finite() {
            return Err(Error::NonFinite { op, node, step: 0 });
        }
        f(&tape, &s, out, lr_up)
    }

    /// Training-mode outputs: `sr` is not clamped.
    pub fn forward_raw(&self, lr: &Tensor<T>, reference: &Tensor<T>) -> Result<Prediction<T>> {
        self.run(lr, reference, |tape, _, out, lr_up| Ok(Prediction { sr: tape.to_tensor(out.sr), structure: tape.to_tensor(out.structure), lr_up }))
    }

    /// Eval-mode outputs with `sr` clamped to `[0, 1]`.
    pub fn forward(&self, lr: &Tensor<T>, reference: &Tensor<T>) -> Result<Prediction<T>> {
        let mut p = self.forward_raw(lr, reference)?;
        p.sr = p.sr.clamp(T::zero(), T::one());
        Ok(p)
    }

    /// Loss on one batch; adds `weight · ∂loss/∂θ` into each parameter's `grad`.
    pub fn accumulate_gradients(&mut self, lr: &Tensor<T>, reference: &Tensor<T>, hr: &Tensor<T>, weight: f64) -> Result<f64> {
        if hr.shape() != reference.shape() {
            return Err(Error::shape("loss", format!("hr {:?} and reference {:?} differ", hr.shape(), reference.shape())));
        }
        let (value, grads) = self.run(lr, reference, |tape, s, out, _| {
            let l = loss(tape, out.sr, hr, out.structure)?;
            let value = tape.value(l).item().as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite { op: "loss", node: l.index(), step: 0 });
            }
            let scaled = tape.scale(l, T::of(weight));
            tape.backward(scaled)?;
            let grads: Vec<_> = self.params.iter().enumerate().map(|(i, _)| tape.grad(s.var(ParamId(i)))).collect();
            Ok((value, grads))
        })?;
        for (t, g) in self.params.tensors_mut().iter_mut().zip(grads) {
            let g = g.ok_or_else(|| Error::Tape("parameter gradient missing after backward".into()))?;
            match &mut t.grad {
                Some(acc) => acc.iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
                None => t.grad = Some(g.into_data()),
            }
        }
        Ok(value)
    }

    /// Parameters grouped by submodule, e.g. `cffm.stage2.attention` or `lr_encoder.stage1`.
    pub fn param_groups(&self) -> BTreeMap<String, Vec<ParamId>> {
        let mut groups: BTreeMap<String, Vec<ParamId>> = BTreeMap::new();
        for (i, name) in self.params.names().iter().enumerate() {
            groups.entry(param_group(name)).or_default().push(ParamId(i));
        }
        groups
    }
}

/// Submodule a parameter name belongs to.
pub fn param_group(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    let depth = match parts[0] {
        "cffm" | "decoder" => 3,
        "lr_encoder" | "ref_encoder" | "edge_encoder" => 2,
        _ => 1,
    };
    parts[..depth.min(parts.len() - 1).max(1)].join(".")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::InitMode;

    fn toy(ablation: Ablation) -> ModelConfig {
        ModelConfig { base_channels: 4, stages: 2, residual_blocks: 1, attention_heads: 2, scale_factor: 2, ablation, ..Default::default() }
    }

    fn inputs(h: usize) -> (Tensor<f64>, Tensor<f64>) {
        let lr = Tensor::from_fn(&[1, 1, h / 2, h / 2], |i| 0.5 + 0.4 * (i as f64 * 0.7).sin());
        let r = Tensor::from_fn(&[1, 1, h, h], |i| 0.5 + 0.4 * (i as f64 * 0.3).cos());
        (lr, r)
    }

    #[test]
    fn shapes_hold_for_every_variant() {
        for ablation in [Ablation::FULL, Ablation::NONE, Ablation { use_ttm: false, ..Ablation::FULL }] {
            let net = ECFNet::<f64>::new(toy(ablation), 1).unwrap();
            let (lr, r) = inputs(8);
            let p = net.forward(&lr, &r).unwrap();
            assert_eq!(p.sr.shape(), &[1, 1, 8, 8]);
            assert_eq!(p.structure.shape(), &[1, 1, 8, 8]);
            assert!(p.sr.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn zero_weights_give_the_bicubic_input() {
        let net = ECFNet::<f64>::new(ModelConfig { init: InitMode::Zero, ..toy(Ablation::FULL) }, 1).unwrap();
        let (lr, r) = inputs(8);
        let p = net.forward_raw(&lr, &r).unwrap();
        assert_eq!(p.sr, p.lr_up);
    }

    #[test]
    fn groups_cover_every_parameter() {
        let net = ECFNet::<f32>::new(toy(Ablation::FULL), 1).unwrap();
        let groups = net.param_groups();
        assert_eq!(groups.values().map(Vec::len).sum::<usize>(), net.params.len());
        assert!(groups.contains_key("cffm.stage1.attention"));
        assert!(groups.contains_key("sr_head"));
        assert!(groups.contains_key("lr_encoder.stage2"));
    }

    #[test]
    fn with_params_rejects_a_different_layout() {
        let full = ECFNet::<f32>::new(toy(Ablation::FULL), 1).unwrap();
        assert!(ECFNet::with_params(toy(Ablation::NONE), full.params.clone()).is_err());
        assert!(ECFNet::with_params(toy(Ablation::FULL), full.params).is_ok());
    }

    #[test]
    fn gradients_accumulate_with_weight() {
        let mut net = ECFNet::<f64>::new(toy(Ablation::FULL), 2).unwrap();
        let (lr, r) = inputs(8);
        let l1 = net.accumulate_gradients(&lr, &r, &r, 0.5).unwrap();
        let g1 = net.params.get(ParamId(0)).grad.clone().unwrap();
        let l2 = net.accumulate_gradients(&lr, &r, &r, 0.5).unwrap();
        assert_eq!(l1, l2);
        let g2 = net.params.get(ParamId(0)).grad.clone().unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn wrong_sizes_are_rejected() {
        let net = ECFNet::<f32>::new(toy(Ablation::FULL), 1).unwrap();
        assert!(net.forward(&Tensor::zeros(&[1, 1, 3, 3]), &Tensor::zeros(&[1, 1, 7, 7])).is_err());
        assert!(net.forward(&Tensor::zeros(&[1, 1, 4, 4]), &Tensor::zeros(&[1, 1, 6, 6])).is_err());
    }
}
