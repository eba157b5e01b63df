//! Q-network and dynamic-filter definitions.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{fan_in_uniform, Checkpoint, Conv2dSpec, NamedTensor, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::N_ACTIONS;
use crate::imaging::{Frame, PackedFrame};
use crate::scalar::Scalar;

pub const STATE_SIZE: usize = 84;
pub const STATE_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    Conv(Conv2dSpec, Activation),
    Dense {
        inputs: usize,
        outputs: usize,
        act: Activation,
    },
}

impl Layer {
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv(spec, _) => spec.param_count(),
            Layer::Dense { inputs, outputs, .. } => inputs * outputs + outputs,
        }
    }

    fn weight_shape(&self) -> Vec<usize> {
        match self {
            Layer::Conv(spec, _) => spec.weight_shape().to_vec(),
            Layer::Dense { inputs, outputs, .. } => vec![*outputs, *inputs],
        }
    }

    fn bias_len(&self) -> usize {
        match self {
            Layer::Conv(spec, _) => spec.out_channels,
            Layer::Dense { outputs, .. } => *outputs,
        }
    }

    fn fan_in(&self) -> usize {
        match self {
            Layer::Conv(spec, _) => spec.patch_len(),
            Layer::Dense { inputs, .. } => *inputs,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Layer::Conv(s, a) => format!(
                "conv {}->{} k{} s{} d{} p{} {:?}",
                s.in_channels, s.out_channels, s.kernel, s.stride, s.dilation, s.padding, a
            ),
            Layer::Dense { inputs, outputs, act } => format!("dense {inputs}->{outputs} {act:?}"),
        }
    }
}

/// A named chain of layers. Convolutions feeding a dense layer are
/// flattened implicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    pub prefix: String,
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    fn weight_name(&self, i: usize) -> String {
        format!("{}.{i}.weight", self.prefix)
    }

    fn bias_name(&self, i: usize) -> String {
        format!("{}.{i}.bias", self.prefix)
    }

    pub fn init_params<T: Scalar, R: Rng + ?Sized>(&self, params: &mut ParamSet<T>, rng: &mut R) {
        for (i, layer) in self.layers.iter().enumerate() {
            let fan_in = layer.fan_in();
            params.insert(self.weight_name(i), fan_in_uniform(&layer.weight_shape(), fan_in, rng));
            params.insert(self.bias_name(i), fan_in_uniform(&[layer.bias_len()], fan_in, rng));
        }
    }

    pub fn forward<'p, T: Scalar>(
        &self,
        tape: &mut Tape<'p, T>,
        params: &'p ParamSet<T>,
        mut x: Var,
    ) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.param(params.get(&self.weight_name(i))?);
            let b = tape.param(params.get(&self.bias_name(i))?);
            let (y, act) = match layer {
                Layer::Conv(spec, act) => (tape.conv2d(x, w, b, *spec)?, *act),
                Layer::Dense { act, .. } => {
                    if tape.shape(x).len() != 2 {
                        x = tape.flatten(x)?;
                    }
                    (tape.linear(x, w, b)?, *act)
                }
            };
            x = match act {
                Activation::None => y,
                Activation::Relu => tape.relu(y),
                Activation::Sigmoid => tape.sigmoid(y),
            };
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QVariant {
    /// Two convolutions, 256 hidden units.
    Compact,
    /// Three convolutions, 512 hidden units.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub variant: QVariant,
    pub dynamic_filter: bool,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            variant: QVariant::Standard,
            dynamic_filter: true,
        }
    }
}

pub fn q_network(variant: QVariant) -> Sequential {
    let relu = Activation::Relu;
    let layers = match variant {
        QVariant::Compact => vec![
            Layer::Conv(Conv2dSpec::new(3, 16, 8).stride(4), relu),
            Layer::Conv(Conv2dSpec::new(16, 32, 4).stride(2), relu),
            Layer::Dense { inputs: 32 * 9 * 9, outputs: 256, act: relu },
            Layer::Dense { inputs: 256, outputs: N_ACTIONS, act: Activation::None },
        ],
        QVariant::Standard => vec![
            Layer::Conv(Conv2dSpec::new(3, 32, 8).stride(4), relu),
            Layer::Conv(Conv2dSpec::new(32, 64, 4).stride(2), relu),
            Layer::Conv(Conv2dSpec::new(64, 64, 3), relu),
            Layer::Dense { inputs: 64 * 7 * 7, outputs: 512, act: relu },
            Layer::Dense { inputs: 512, outputs: N_ACTIONS, act: Activation::None },
        ],
    };
    Sequential {
        prefix: "qnet".into(),
        layers,
    }
}

/// Context-aggregation gate: dilations 1, 2, 4 then a 1×1 sigmoid head,
/// spatial size preserved.
pub fn dynamic_filter() -> Sequential {
    let relu = Activation::Relu;
    Sequential {
        prefix: "filter".into(),
        layers: vec![
            Layer::Conv(Conv2dSpec::new(3, 3, 3).padding(1), relu),
            Layer::Conv(Conv2dSpec::new(3, 3, 3).dilation(2).padding(2), relu),
            Layer::Conv(Conv2dSpec::new(3, 3, 3).dilation(4).padding(4), relu),
            Layer::Conv(Conv2dSpec::new(3, 3, 1), Activation::Sigmoid),
        ],
    }
}

/// Converts RGB frames (H×W×3) into an NCHW batch tensor.
pub fn frames_to_tensor<T: Scalar>(frames: &[&Frame]) -> Result<Tensor<T>> {
    let Some(first) = frames.first() else {
        return Err(Error::ShapeMismatch("empty state batch".into()));
    };
    let (h, w) = (first.height(), first.width());
    let plane = h * w;
    let mut data = vec![T::zero(); frames.len() * STATE_CHANNELS * plane];
    for (n, f) in frames.iter().enumerate() {
        if f.height() != h || f.width() != w {
            return Err(Error::ShapeMismatch("state batch with mixed sizes".into()));
        }
        let base = n * STATE_CHANNELS * plane;
        for (p, px) in f.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[base + c * plane + p] = T::lit(f64::from(px[c]));
            }
        }
    }
    Tensor::new(vec![frames.len(), STATE_CHANNELS, h, w], data)
}

/// Same as [`frames_to_tensor`] for 8-bit packed states.
pub fn packed_to_tensor<T: Scalar>(states: &[&PackedFrame]) -> Result<Tensor<T>> {
    let Some(first) = states.first() else {
        return Err(Error::ShapeMismatch("empty state batch".into()));
    };
    let (h, w) = (first.height(), first.width());
    let plane = h * w;
    let lut: Vec<T> = (0..256).map(|b| T::lit(b as f64 / 255.0)).collect();
    let mut data = vec![T::zero(); states.len() * STATE_CHANNELS * plane];
    for (n, s) in states.iter().enumerate() {
        if s.height() != h || s.width() != w {
            return Err(Error::ShapeMismatch("state batch with mixed sizes".into()));
        }
        let base = n * STATE_CHANNELS * plane;
        for (p, px) in s.bytes().chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[base + c * plane + p] = lut[px[c] as usize];
            }
        }
    }
    Tensor::new(vec![states.len(), STATE_CHANNELS, h, w], data)
}

/// Q-network with an optional dynamic-filter gate in front of it.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNetwork<T> {
    spec: NetworkSpec,
    qnet: Sequential,
    filter: Option<Sequential>,
    params: ParamSet<T>,
}

impl<T: Scalar> AgentNetwork<T> {
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Self {
        let qnet = q_network(spec.variant);
        let filter = spec.dynamic_filter.then(dynamic_filter);
        let mut params = ParamSet::new();
        if let Some(f) = &filter {
            f.init_params(&mut params, rng);
        }
        qnet.init_params(&mut params, rng);
        AgentNetwork {
            spec,
            qnet,
            filter,
            params,
        }
    }

    pub fn spec(&self) -> NetworkSpec {
        self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn qnet(&self) -> &Sequential {
        &self.qnet
    }

    pub fn filter(&self) -> Option<&Sequential> {
        self.filter.as_ref()
    }

    pub fn count_params(&self) -> usize {
        self.params.count()
    }

    /// Architecture descriptor; its hash guards checkpoint loading.
    pub fn descriptor(&self) -> String {
        let mut s = format!(
            "ohpl-agent/1 variant={:?} dynamic_filter={} input={}x{}x{} actions={}",
            self.spec.variant, self.spec.dynamic_filter, STATE_CHANNELS, STATE_SIZE, STATE_SIZE, N_ACTIONS
        );
        for seq in self.filter.iter().chain(std::iter::once(&self.qnet)) {
            for (i, l) in seq.layers.iter().enumerate() {
                let _ = write!(s, "; {}.{i}: {}", seq.prefix, l.describe());
            }
        }
        s
    }

    /// Records the gated input (or the input itself without a filter).
    pub fn gated_input<'p>(&'p self, tape: &mut Tape<'p, T>, x: Var) -> Result<Var> {
        match &self.filter {
            Some(f) => {
                let gate = f.forward(tape, &self.params, x)?;
                tape.mul(x, gate)
            }
            None => Ok(x),
        }
    }

    /// Q-values `[N, 7]` for an NCHW input already on the tape.
    pub fn forward_tape<'p>(&'p self, tape: &mut Tape<'p, T>, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 4 || shape[1..] != [STATE_CHANNELS, STATE_SIZE, STATE_SIZE] {
            return Err(Error::ShapeMismatch(format!(
                "network input must be [N, 3, 84, 84], got {shape:?}"
            )));
        }
        let g = self.gated_input(tape, x)?;
        self.qnet.forward(tape, &self.params, g)
    }

    /// Inference on a batch tensor.
    pub fn q_values_tensor(&self, input: Tensor<T>) -> Result<Vec<[f64; N_ACTIONS]>> {
        let mut tape = Tape::no_grad();
        let x = tape.constant(input);
        let q = self.forward_tape(&mut tape, x)?;
        Ok(tape
            .value(q)
            .data()
            .chunks_exact(N_ACTIONS)
            .map(|row| std::array::from_fn(|a| row[a].as_f64()))
            .collect())
    }

    pub fn forward(&self, state: &Frame) -> Result<[f64; N_ACTIONS]> {
        Ok(self.q_values_tensor(frames_to_tensor(&[state])?)?[0])
    }

    /// The gate output for a single state (all ones without a filter).
    pub fn gate(&self, state: &Frame) -> Result<Vec<T>> {
        let input = frames_to_tensor::<T>(&[state])?;
        match &self.filter {
            None => Ok(vec![T::one(); input.numel()]),
            Some(f) => {
                let mut tape = Tape::no_grad();
                let x = tape.constant(input);
                let g = f.forward(&mut tape, &self.params, x)?;
                Ok(tape.value(g).data().to_vec())
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            descriptor: self.descriptor(),
            config_hash: 0,
            meta: Vec::new(),
            tensors: self
                .params
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().iter().map(|v| v.as_f64() as f32).collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds a network of the given spec from a checkpoint, checking the
    /// architecture hash.
    pub fn from_checkpoint(spec: NetworkSpec, ckpt: &Checkpoint) -> Result<Self> {
        let mut net = AgentNetwork::<T>::new(spec, &mut crate::rng::seeded(0));
        let expected = crate::autodiff::hash64(net.descriptor().as_bytes());
        if ckpt.arch_hash() != expected {
            return Err(Error::ArchitectureMismatch {
                expected,
                found: ckpt.arch_hash(),
            });
        }
        net.load_params(ckpt)?;
        Ok(net)
    }

    pub fn load_params(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let names: Vec<String> = self.params.names().to_vec();
        for name in names {
            let t = ckpt
                .tensor(&name)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor `{name}`")))?;
            let dst = self.params.get_mut(&name)?;
            if dst.shape() != t.shape.as_slice() {
                return Err(Error::CorruptCheckpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape,
                    dst.shape()
                )));
            }
            for (d, &s) in dst.data_mut().iter_mut().zip(&t.data) {
                *d = T::lit(f64::from(s));
            }
        }
        Ok(())
    }

    /// Per-layer summary lines for inspection output.
    pub fn layer_table(&self) -> Vec<(String, String, usize)> {
        let mut out = Vec::new();
        for seq in self.filter.iter().chain(std::iter::once(&self.qnet)) {
            for (i, l) in seq.layers.iter().enumerate() {
                out.push((format!("{}.{i}", seq.prefix), l.describe(), l.param_count()));
            }
        }
        out
    }
}
