//! Declarative layer stacks, their parameters, and tape-based reverse mode.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::ops::{self, ConvCache};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv2D {
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2x2,
    UpSample2x2,
    ZeroPad {
        rows: usize,
        cols: usize,
    },
    Dense {
        out_units: usize,
    },
    Tanh,
    Dropout {
        rate: f64,
    },
    Flatten,
}

impl LayerKind {
    /// Square convolution with the given padding and unit stride.
    pub fn conv(out_channels: usize, kernel: usize, padding: usize) -> Self {
        LayerKind::Conv2D {
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            padding,
        }
    }

    pub fn dense(out_units: usize) -> Self {
        LayerKind::Dense { out_units }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Conv2D { .. } | LayerKind::Dense { .. })
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TensorError::InvalidLayer(m));
        match *self {
            LayerKind::Conv2D {
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                ..
            } if out_channels == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0 => {
                bad(format!("{self}: channel, kernel and stride values must be positive"))
            }
            LayerKind::ZeroPad { rows, cols } if rows == 0 && cols == 0 => {
                bad(format!("{self}: padding must be positive"))
            }
            LayerKind::Dense { out_units: 0 } => bad(format!("{self}: unit count must be positive")),
            LayerKind::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                bad(format!("{self}: rate must lie in [0, 1)"))
            }
            _ => Ok(()),
        }
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        let chw = |op| match input {
            &[c, h, w] => Ok((c, h, w)),
            _ => Err(TensorError::RankMismatch {
                op,
                expected: 3,
                found: input.to_vec(),
            }),
        };
        match *self {
            LayerKind::Conv2D {
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => {
                let (_, h, w) = chw("conv2d")?;
                let oh = ops::conv_output_dim(h, kernel_h, stride, padding).ok_or(
                    TensorError::DimensionMismatch {
                        op: "conv2d",
                        axis: "rows",
                        expected: kernel_h,
                        found: h + 2 * padding,
                    },
                )?;
                let ow = ops::conv_output_dim(w, kernel_w, stride, padding).ok_or(
                    TensorError::DimensionMismatch {
                        op: "conv2d",
                        axis: "cols",
                        expected: kernel_w,
                        found: w + 2 * padding,
                    },
                )?;
                Ok(vec![out_channels, oh, ow])
            }
            LayerKind::MaxPool2x2 => {
                let (c, h, w) = chw("maxpool2x2")?;
                if h < 2 || w < 2 {
                    return Err(TensorError::DimensionMismatch {
                        op: "maxpool2x2",
                        axis: if h < 2 { "rows" } else { "cols" },
                        expected: 2,
                        found: h.min(w),
                    });
                }
                Ok(vec![c, h / 2, w / 2])
            }
            LayerKind::UpSample2x2 => {
                let (c, h, w) = chw("upsample2x2")?;
                Ok(vec![c, 2 * h, 2 * w])
            }
            LayerKind::ZeroPad { rows, cols } => {
                let (c, h, w) = chw("zeropad")?;
                Ok(vec![c, h + 2 * rows, w + 2 * cols])
            }
            LayerKind::Dense { out_units } => Ok(vec![out_units]),
            LayerKind::Tanh | LayerKind::Dropout { .. } => Ok(input.to_vec()),
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerKind::Conv2D {
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => write!(f, "Conv2D({out_channels}, {kernel_h}x{kernel_w}, s{stride}, p{padding})"),
            LayerKind::MaxPool2x2 => write!(f, "MaxPool2x2"),
            LayerKind::UpSample2x2 => write!(f, "UpSample2x2"),
            LayerKind::ZeroPad { rows, cols } => write!(f, "ZeroPad({rows}, {cols})"),
            LayerKind::Dense { out_units } => write!(f, "Dense({out_units})"),
            LayerKind::Tanh => write!(f, "Tanh"),
            LayerKind::Dropout { rate } => write!(f, "Dropout({rate})"),
            LayerKind::Flatten => write!(f, "Flatten"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamRole {
    Weight,
    Bias,
}

/// Identifies one learned tensor: the index of its layer and its role.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamKey {
    pub layer: usize,
    pub role: ParamRole,
}

impl ParamKey {
    pub fn weight(layer: usize) -> Self {
        Self {
            layer,
            role: ParamRole::Weight,
        }
    }

    pub fn bias(layer: usize) -> Self {
        Self {
            layer,
            role: ParamRole::Bias,
        }
    }
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let role = match self.role {
            ParamRole::Weight => "weight",
            ParamRole::Bias => "bias",
        };
        write!(f, "{}.{}", self.layer, role)
    }
}

impl FromStr for ParamKey {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        let err = || TensorError::Checkpoint(format!("malformed parameter key `{s}`"));
        let (layer, role) = s.split_once('.').ok_or_else(err)?;
        let layer = layer.parse().map_err(|_| err())?;
        let role = match role {
            "weight" => ParamRole::Weight,
            "bias" => ParamRole::Bias,
            _ => return Err(err()),
        };
        Ok(Self { layer, role })
    }
}

/// Named, ordered layer list with a fixed input shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerKind>,
}

impl NetworkSpec {
    /// Builds a spec and checks that consecutive layer shapes compose.
    pub fn new(name: impl Into<String>, input_shape: &[usize], layers: Vec<LayerKind>) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            input_shape: input_shape.to_vec(),
            layers,
        };
        spec.layer_shapes()?;
        Ok(spec)
    }

    fn layer_error(&self, index: usize, source: TensorError) -> TensorError {
        TensorError::Layer {
            network: self.name.clone(),
            index,
            layer: self.layers[index].to_string(),
            source: Box::new(source),
        }
    }

    /// Output shape after every layer, in order.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(TensorError::InvalidShape(self.input_shape.clone()));
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut current = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            current = layer.output_shape(&current).map_err(|e| self.layer_error(i, e))?;
            shapes.push(current.clone());
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self
            .layer_shapes()?
            .pop()
            .unwrap_or_else(|| self.input_shape.clone()))
    }

    pub fn output_dim(&self) -> usize {
        self.output_shape().map(|s| s.iter().product()).unwrap_or(0)
    }

    /// Shapes of every learned tensor, keyed by layer and role.
    pub fn param_shapes(&self) -> Result<Vec<(ParamKey, Vec<usize>)>> {
        let shapes = self.layer_shapes()?;
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { &self.input_shape } else { &shapes[i - 1] };
            match *layer {
                LayerKind::Conv2D {
                    out_channels,
                    kernel_h,
                    kernel_w,
                    ..
                } => {
                    out.push((ParamKey::weight(i), vec![out_channels, input[0], kernel_h, kernel_w]));
                    out.push((ParamKey::bias(i), vec![out_channels]));
                }
                LayerKind::Dense { out_units } => {
                    out.push((ParamKey::weight(i), vec![out_units, input.iter().product()]));
                    out.push((ParamKey::bias(i), vec![out_units]));
                }
                _ => {}
            }
        }
        Ok(out)
    }

    /// The first `n` layers as a new spec sharing the same parameter keys.
    pub fn truncated(&self, n: usize, name: impl Into<String>) -> NetworkSpec {
        NetworkSpec {
            name: name.into(),
            input_shape: self.input_shape.clone(),
            layers: self.layers[..n.min(self.layers.len())].to_vec(),
        }
    }
}

/// Gradient (or any per-parameter tensor) map.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients(pub BTreeMap<ParamKey, Tensor>);

impl Gradients {
    pub fn get(&self, key: &ParamKey) -> Option<&Tensor> {
        self.0.get(key)
    }

    /// Adds `other` into `self`, inserting missing keys.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        for (k, g) in &other.0 {
            match self.0.get_mut(k) {
                Some(acc) => acc.add_scaled(g, 1.0)?,
                None => {
                    self.0.insert(*k, g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.0.values_mut().for_each(|t| t.scale(alpha));
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().all(Tensor::is_finite)
    }
}

/// Learned parameters plus optimizer accumulators, keyed by [`ParamKey`].
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelState {
    pub params: BTreeMap<ParamKey, Tensor>,
    /// Per-parameter optimizer slots; every slot tensor has its parameter's shape.
    pub slots: BTreeMap<ParamKey, Vec<Tensor>>,
}

impl ModelState {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for (key, shape) in spec.param_shapes()? {
            let tensor = match key.role {
                ParamRole::Bias => Tensor::zeros(&shape),
                ParamRole::Weight => {
                    let receptive: usize = shape[2..].iter().product();
                    let fan_in = shape[1] * receptive;
                    let fan_out = shape[0] * receptive;
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    Tensor::from_fn(&shape, |_| rng.gen_range(-limit..limit))
                }
            };
            params.insert(key, tensor);
        }
        Ok(Self {
            params,
            slots: BTreeMap::new(),
        })
    }

    pub fn param(&self, key: &ParamKey) -> Result<&Tensor> {
        self.params
            .get(key)
            .ok_or_else(|| TensorError::Checkpoint(format!("missing parameter {key}")))
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Checks that parameter shapes match the spec.
    pub fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        let expected = spec.param_shapes()?;
        if expected.len() != self.params.len() {
            return Err(TensorError::Checkpoint(format!(
                "`{}` expects {} parameter tensors, state holds {}",
                spec.name,
                expected.len(),
                self.params.len()
            )));
        }
        for (key, shape) in expected {
            let t = self.param(&key)?;
            if t.shape() != shape.as_slice() {
                return Err(TensorError::Checkpoint(format!(
                    "`{}` parameter {key}: expected shape {shape:?}, found {:?}",
                    spec.name,
                    t.shape()
                )));
            }
        }
        for (key, slots) in &self.slots {
            let p = self.param(key)?;
            if slots.iter().any(|s| s.shape() != p.shape()) {
                return Err(TensorError::Checkpoint(format!("slot shape mismatch for {key}")));
            }
        }
        Ok(())
    }
}

/// Whether dropout is active for a forward pass.
pub enum Mode<'a> {
    Infer,
    Train(&'a mut dyn RngCore),
}

#[derive(Debug)]
enum Record {
    Conv { input: Tensor, cache: ConvCache },
    Pool { indices: Vec<usize>, input_shape: Vec<usize> },
    UpSample,
    Pad,
    Dense { input: Tensor },
    Tanh { output: Tensor },
    Dropout { mask: Vec<f64> },
    Flatten { input_shape: Vec<usize> },
}

/// Activations saved by [`forward`] for the matching [`backward`].
#[derive(Debug)]
pub struct Tape {
    records: Vec<Record>,
}

pub struct Backward {
    pub params: Gradients,
    pub input: Option<Tensor>,
}

fn check_input(spec: &NetworkSpec, input: &Tensor) -> Result<()> {
    if input.shape() != spec.input_shape.as_slice() {
        if input.shape().len() != spec.input_shape.len() {
            return Err(TensorError::RankMismatch {
                op: "forward",
                expected: spec.input_shape.len(),
                found: input.shape().to_vec(),
            });
        }
        const AXES: [&str; 4] = ["axis0", "axis1", "axis2", "axis3"];
        let names: &[&'static str] = if spec.input_shape.len() == 3 {
            &["channels", "rows", "cols"]
        } else {
            &AXES
        };
        for (i, (&e, &f)) in spec.input_shape.iter().zip(input.shape()).enumerate() {
            if e != f {
                return Err(TensorError::DimensionMismatch {
                    op: "forward",
                    axis: names[i],
                    expected: e,
                    found: f,
                });
            }
        }
    }
    Ok(())
}

fn run(spec: &NetworkSpec, state: &ModelState, input: &Tensor, mut mode: Mode<'_>, record: bool) -> Result<(Tensor, Tape)> {
    check_input(spec, input)?;
    let mut x = input.clone();
    let mut records = Vec::with_capacity(if record { spec.layers.len() } else { 0 });
    for (i, layer) in spec.layers.iter().enumerate() {
        let step = |x: Tensor, mode: &mut Mode<'_>| -> Result<(Tensor, Record)> {
            Ok(match *layer {
                LayerKind::Conv2D { stride, padding, .. } => {
                    let w = state.param(&ParamKey::weight(i))?;
                    let b = state.param(&ParamKey::bias(i))?;
                    let (y, cache) = ops::conv2d_forward_cached(&x, w, b, stride, padding)?;
                    (y, Record::Conv { input: x, cache })
                }
                LayerKind::MaxPool2x2 => {
                    let (y, indices) = ops::maxpool2x2_forward(&x)?;
                    let input_shape = x.shape().to_vec();
                    (y, Record::Pool { indices, input_shape })
                }
                LayerKind::UpSample2x2 => (ops::upsample2x2(&x)?, Record::UpSample),
                LayerKind::ZeroPad { rows, cols } => (ops::zeropad(&x, rows, cols)?, Record::Pad),
                LayerKind::Dense { .. } => {
                    let w = state.param(&ParamKey::weight(i))?;
                    let b = state.param(&ParamKey::bias(i))?;
                    (ops::dense_forward(&x, w, b)?, Record::Dense { input: x })
                }
                LayerKind::Tanh => {
                    let y = ops::tanh_forward(&x);
                    let output = y.clone();
                    (y, Record::Tanh { output })
                }
                LayerKind::Dropout { rate } => match mode {
                    Mode::Infer => {
                        let mask = vec![1.0; x.len()];
                        (x, Record::Dropout { mask })
                    }
                    Mode::Train(rng) => {
                        let (y, mask) = ops::dropout_forward(&x, rate, &mut **rng)?;
                        (y, Record::Dropout { mask })
                    }
                },
                LayerKind::Flatten => {
                    let input_shape = x.shape().to_vec();
                    let n = x.len();
                    (x.reshape(&[n])?, Record::Flatten { input_shape })
                }
            })
        };
        let (y, rec) = step(x, &mut mode).map_err(|e| spec.layer_error(i, e))?;
        if !y.is_finite() {
            return Err(spec.layer_error(i, TensorError::NonFinite("forward".into())));
        }
        if record {
            records.push(rec);
        }
        x = y;
    }
    Ok((x, Tape { records }))
}

/// Applies the layers in order, recording what backward needs.
pub fn forward(spec: &NetworkSpec, state: &ModelState, input: &Tensor, mode: Mode<'_>) -> Result<(Tensor, Tape)> {
    run(spec, state, input, mode, true)
}

/// Inference-mode forward pass without a tape.
pub fn infer(spec: &NetworkSpec, state: &ModelState, input: &Tensor) -> Result<Tensor> {
    run(spec, state, input, Mode::Infer, false).map(|(y, _)| y)
}

/// Reverse-mode pass through a recorded tape.
pub fn backward(
    spec: &NetworkSpec,
    state: &ModelState,
    tape: Tape,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<Backward> {
    if tape.records.len() != spec.layers.len() {
        return Err(TensorError::InvalidLayer(format!(
            "tape holds {} records for {} layers",
            tape.records.len(),
            spec.layers.len()
        )));
    }
    let mut grads = Gradients::default();
    let mut g = grad_out.clone();
    for (i, rec) in tape.records.into_iter().enumerate().rev() {
        let wants_input = need_input_grad || i > 0;
        let step = |g: Tensor, grads: &mut Gradients| -> Result<Option<Tensor>> {
            Ok(match (&spec.layers[i], rec) {
                (LayerKind::Conv2D { stride, padding, .. }, Record::Conv { input, cache }) => {
                    let w = state.param(&ParamKey::weight(i))?;
                    let cg = ops::conv2d_backward_cached(&g, &input, Some(&cache), w, *stride, *padding, wants_input)?;
                    grads.0.insert(ParamKey::weight(i), cg.weights);
                    grads.0.insert(ParamKey::bias(i), cg.bias);
                    cg.input
                }
                (LayerKind::MaxPool2x2, Record::Pool { indices, input_shape }) => {
                    Some(ops::maxpool2x2_backward(&g, &indices, &input_shape)?)
                }
                (LayerKind::UpSample2x2, Record::UpSample) => Some(ops::upsample2x2_backward(&g)?),
                (LayerKind::ZeroPad { rows, cols }, Record::Pad) => Some(ops::zeropad_backward(&g, *rows, *cols)?),
                (LayerKind::Dense { .. }, Record::Dense { input }) => {
                    let w = state.param(&ParamKey::weight(i))?;
                    let dg = ops::dense_backward(&g, &input, w, wants_input)?;
                    grads.0.insert(ParamKey::weight(i), dg.weights);
                    grads.0.insert(ParamKey::bias(i), dg.bias);
                    dg.input
                }
                (LayerKind::Tanh, Record::Tanh { output }) => Some(ops::tanh_backward(&g, &output)?),
                (LayerKind::Dropout { .. }, Record::Dropout { mask }) => Some(ops::dropout_backward(&g, &mask)?),
                (LayerKind::Flatten, Record::Flatten { input_shape }) => Some(g.reshape(&input_shape)?),
                _ => return Err(TensorError::InvalidLayer("tape does not match spec".into())),
            })
        };
        match step(g, &mut grads).map_err(|e| spec.layer_error(i, e))? {
            Some(next) => g = next,
            None => {
                return Ok(Backward {
                    params: grads,
                    input: None,
                })
            }
        }
    }
    Ok(Backward {
        params: grads,
        input: need_input_grad.then_some(g),
    })
}

/// A spec bundled with its state.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub state: ModelState,
}

impl Network {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let state = ModelState::init(&spec, seed)?;
        Ok(Self { spec, state })
    }

    pub fn from_parts(spec: NetworkSpec, state: ModelState) -> Result<Self> {
        state.check_against(&spec)?;
        Ok(Self { spec, state })
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        infer(&self.spec, &self.state, input)
    }

    pub fn forward(&self, input: &Tensor, mode: Mode<'_>) -> Result<(Tensor, Tape)> {
        forward(&self.spec, &self.state, input, mode)
    }

    pub fn backward(&self, tape: Tape, grad_out: &Tensor, need_input_grad: bool) -> Result<Backward> {
        backward(&self.spec, &self.state, tape, grad_out, need_input_grad)
    }
}
