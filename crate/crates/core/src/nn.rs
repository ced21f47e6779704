//! Named parameter storage and the plain layers the operators are built from.

use crate::rng::substream;
use crate::tensor::{Conv2dArgs, Real, Tape, Tensor, Var};
use crate::{Error, Result};
use rand::Rng;
use std::collections::HashMap;

/// Index of a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Ordered collection of uniquely named learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("parameter `{name}` registered twice")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Same names and shapes in another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect(), index: self.index.clone() }
    }

    /// Records every parameter on `tape` as a gradient-tracked leaf.
    pub fn bind(&self, tape: &Tape<T>) -> Bound {
        Bound { vars: self.tensors.iter().map(|t| tape.param(t)).collect() }
    }

    /// Adds the tape gradients of all bound parameters into their `grad` slots.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, bound: &Bound) -> Result<()> {
        for (t, &v) in self.tensors.iter_mut().zip(&bound.vars) {
            tape.accumulate_grad_into(v, t)?;
        }
        Ok(())
    }
}

/// Tape handles of a [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Routes parameter `id` to another tape value, e.g. a probe input in a gradient check.
    pub fn replace(&mut self, id: ParamId, v: Var) {
        self.vars[id.0] = v;
    }
}

/// A tape paired with the handles of the parameters bound on it.
pub struct Scope<'a, T: Real> {
    pub tape: &'a Tape<T>,
    pub params: &'a Bound,
}

impl<'a, T: Real> Scope<'a, T> {
    pub fn new(tape: &'a Tape<T>, params: &'a Bound) -> Self {
        Scope { tape, params }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.params.var(id)
    }
}

/// Init gain of a layer whose output feeds a ReLU.
pub const GAIN_RELU: f64 = std::f64::consts::SQRT_2;
/// Init gain of a layer with a linear (or sigmoid) consumer.
pub const GAIN_LINEAR: f64 = 1.0;

/// How fresh weights are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Uniform in `±gain · sqrt(3 / fan_in)`, with the gain set by the consumer
    /// of the layer ([`GAIN_RELU`] or [`GAIN_LINEAR`]); biases zero.
    Kaiming,
    /// Every parameter zero.
    Zero,
}

/// Registers parameters under a dotted name prefix and initialises them.
///
/// Each tensor draws from its own substream keyed by its full name, so two
/// models that share a submodule name get identical initial values for it.
pub struct ParamBuilder<'s, T: Real> {
    store: &'s mut ParamStore<T>,
    prefix: String,
    seed: u64,
    mode: InitMode,
}

impl<'s, T: Real> ParamBuilder<'s, T> {
    pub fn new(store: &'s mut ParamStore<T>, seed: u64, mode: InitMode) -> Self {
        ParamBuilder { store, prefix: String::new(), seed, mode }
    }

    pub fn sub(&mut self, name: &str) -> ParamBuilder<'_, T> {
        let prefix = self.full(name);
        ParamBuilder { store: self.store, prefix, seed: self.seed, mode: self.mode }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize, gain: f64) -> Result<ParamId> {
        let full = self.full(name);
        let tensor = match self.mode {
            InitMode::Zero => Tensor::zeros(shape),
            InitMode::Kaiming => {
                let bound = gain * (3.0 / fan_in as f64).sqrt();
                let mut rng = substream(self.seed, &format!("init/{full}"));
                Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)))
            }
        };
        self.store.add(full, tensor)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let full = self.full(name);
        self.store.add(full, Tensor::zeros(shape))
    }

    /// Convolution with a `[cout, cin/groups, kh, kw]` weight and optional bias, linear gain.
    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: (usize, usize), args: Conv2dArgs, bias: bool) -> Result<Conv2d> {
        self.conv_with_gain(name, cin, cout, kernel, args, bias, GAIN_LINEAR)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv_with_gain(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        args: Conv2dArgs,
        bias: bool,
        gain: f64,
    ) -> Result<Conv2d> {
        let (kh, kw) = kernel;
        let cin_g = cin / args.groups;
        let weight = self.uniform(&format!("{name}.weight"), &[cout, cin_g, kh, kw], cin_g * kh * kw, gain)?;
        let bias = if bias { Some(self.zeros(&format!("{name}.bias"), &[cout])?) } else { None };
        Ok(Conv2d { weight, bias, args })
    }

    /// Square `k×k` convolution with same padding and bias.
    pub fn conv_same(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Result<Conv2d> {
        self.conv(name, cin, cout, (k, k), Conv2dArgs::same(k), true)
    }

    /// Square same-padded convolution whose output feeds a ReLU.
    pub fn conv_relu(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Result<Conv2d> {
        self.conv_with_gain(name, cin, cout, (k, k), Conv2dArgs::same(k), true, GAIN_RELU)
    }

    /// A convolution whose weight and bias start at zero regardless of the init mode.
    pub fn conv_zero(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Result<Conv2d> {
        let weight = self.zeros(&format!("{name}.weight"), &[cout, cin, k, k])?;
        let bias = Some(self.zeros(&format!("{name}.bias"), &[cout])?);
        Ok(Conv2d { weight, bias, args: Conv2dArgs::same(k) })
    }

    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> Result<Linear> {
        let weight = self.uniform(&format!("{name}.weight"), &[fan_in, fan_out], fan_in, gain)?;
        let bias = self.zeros(&format!("{name}.bias"), &[1, fan_out])?;
        Ok(Linear { weight, bias })
    }

    pub fn res_block(&mut self, name: &str, channels: usize) -> Result<ResBlock> {
        let mut b = self.sub(name);
        Ok(ResBlock { conv1: b.conv_relu("conv1", channels, channels, 3)?, conv2: b.conv_zero("conv2", channels, channels, 3)? })
    }

    pub fn res_blocks(&mut self, name: &str, channels: usize, count: usize) -> Result<Vec<ResBlock>> {
        (0..count).map(|i| self.res_block(&format!("{name}{i}"), channels)).collect()
    }
}

/// 2-D convolution layer.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub args: Conv2dArgs,
}

impl Conv2d {
    pub fn forward<T: Real>(&self, s: &Scope<'_, T>, x: Var) -> Result<Var> {
        s.tape.conv2d(x, s.var(self.weight), self.bias.map(|b| s.var(b)), self.args)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Fully connected layer on `[B, in]` rows: `x · W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn forward<T: Real>(&self, s: &Scope<'_, T>, x: Var) -> Result<Var> {
        let y = s.tape.matmul(x, s.var(self.weight))?;
        s.tape.add(y, s.var(self.bias))
    }
}

/// `x + conv2(relu(conv1(x)))`.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResBlock {
    pub fn forward<T: Real>(&self, s: &Scope<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(s, x)?;
        let h = s.tape.relu(h);
        let h = self.conv2.forward(s, h)?;
        s.tape.add(x, h)
    }
}

pub(crate) fn run_blocks<T: Real>(blocks: &[ResBlock], s: &Scope<'_, T>, mut x: Var) -> Result<Var> {
    for b in blocks {
        x = b.forward(s, x)?;
    }
    Ok(x)
}
