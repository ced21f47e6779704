//! Bias-corrected Adam.

use crate::nn::ParamStore;
use crate::tensor::Real;
use crate::{Error, Result};

/// First and second moments for every parameter, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T: Real = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect();
        OptimizerState { lr, beta1, beta2, eps, t: 0, m: zeros(), v: zeros() }
    }

    /// Applies one update from the `grad` slots of `params`.
    ///
    /// Every parameter must carry a gradient; none are modified otherwise.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if self.m.len() != params.len() || params.iter().zip(&self.m).any(|((_, p), m)| p.numel() != m.len()) {
            return Err(Error::ConfigMismatch("optimizer moments do not mirror the parameters".into()));
        }
        if let Some((name, _)) = params.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::MissingGrad(name.to_string()));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for ((p, m), v) in params.tensors_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.take().expect("checked above");
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                let gi = g[i].as_f64();
                let mi = b1 * m[i].as_f64() + (1.0 - b1) * gi;
                let vi = b2 * v[i].as_f64() + (1.0 - b2) * gi * gi;
                m[i] = T::of(mi);
                v[i] = T::of(vi);
                let update = self.lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
                *x = T::of(x.as_f64() - update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("p", Tensor::new(&[values.len()], values.to_vec()).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store(&[0.3, -1.2]);
        let mut opt = OptimizerState::new(&s, 0.1, 0.9, 0.999, 1e-8);
        s.tensors_mut()[0].grad = Some(vec![0.0, 0.0]);
        opt.step(&mut s).unwrap();
        assert_eq!(s.by_name("p").unwrap().data(), &[0.3, -1.2]);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(&[0.0]);
        let mut opt = OptimizerState::new(&s, 0.1, 0.9, 0.999, 0.0);
        s.tensors_mut()[0].grad = Some(vec![1.0]);
        opt.step(&mut s).unwrap();
        assert!((s.by_name("p").unwrap().data()[0] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn quadratic_trajectory_matches_scalar_script() {
        let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
        let mut s = store(&[1.0]);
        let mut opt = OptimizerState::new(&s, lr, b1, b2, eps);
        let (mut p, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=5 {
            let g = 2.0 * p;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            p -= lr * mh / (vh.sqrt() + eps);

            let cur = s.by_name("p").unwrap().data()[0];
            s.tensors_mut()[0].grad = Some(vec![2.0 * cur]);
            opt.step(&mut s).unwrap();
            assert!((s.by_name("p").unwrap().data()[0] - p).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_gradient_is_reported_by_name() {
        let mut s = store(&[1.0]);
        let mut opt = OptimizerState::new(&s, 0.1, 0.9, 0.999, 1e-8);
        match opt.step(&mut s) {
            Err(Error::MissingGrad(name)) => assert_eq!(name, "p"),
            other => panic!("{other:?}"),
        }
        assert_eq!(opt.t, 0);
    }
}
